use std::hint::black_box;

use bidistill::distill::DirectionSampler;
use bidistill::ranking::RankSnapshot;
use bidistill::{evaluate, Direction, DistillConfig, SamplingScheme, TrainConfig, Trainer};
use bidistill_bench::fixture;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn snapshots(c: &mut Criterion) {
    let f = fixture(500, 1000, 40);
    c.bench_function("snapshot_build_teacher_500x1000", |b| {
        b.iter(|| RankSnapshot::build(black_box(&f.teacher), &f.dataset, 0))
    });
    c.bench_function("evaluate_teacher_500x1000", |b| {
        b.iter(|| evaluate(black_box(&f.teacher), &f.dataset, &[50, 100]))
    });
}

fn sampling(c: &mut Criterion) {
    let f = fixture(500, 1000, 40);
    let st = RankSnapshot::build(&f.teacher, &f.dataset, 0);
    let ss = RankSnapshot::build(&f.student, &f.dataset, 0);
    let cfg = DistillConfig::default();
    c.bench_function("sampler_build_t2s", |b| {
        b.iter(|| DirectionSampler::for_pair(SamplingScheme::RankDiscrepancy, Direction::TeacherToStudent, &cfg, &st, &ss))
    });
    for dir in [Direction::TeacherToStudent, Direction::StudentToTeacher] {
        let sampler = DirectionSampler::for_pair(SamplingScheme::RankDiscrepancy, dir, &cfg, &st, &ss);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        c.bench_function(&format!("sampler_draw10_{}", dir.as_str()), |b| {
            let mut u = 0u32;
            b.iter(|| {
                sampler.draw(u, 10, &mut rng, &mut out);
                u = (u + 1) % 500;
                black_box(out.len())
            })
        });
    }
}

fn training(c: &mut Criterion) {
    let f = fixture(300, 600, 30);
    let cfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 0,
        ..Default::default()
    };
    let mut group = c.benchmark_group("train_epoch_300x600");
    group.sample_size(10);
    group.bench_function("bd", |b| {
        b.iter(|| {
            let mut t = Trainer::bidirectional(&f.dataset, cfg).unwrap();
            black_box(t.run_epoch().unwrap().epoch)
        })
    });
    group.bench_function("cf_teacher", |b| {
        b.iter(|| {
            let mut t = Trainer::cf_only(&f.dataset, cfg, bidistill::Role::Teacher).unwrap();
            black_box(t.run_epoch().unwrap().epoch)
        })
    });
    group.finish();
}

criterion_group!(benches, snapshots, sampling, training);
criterion_main!(benches);
