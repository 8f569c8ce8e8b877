use bidistill::data::synthetic;
use bidistill::eval::evaluate_held_out;
use bidistill::{build_dataset, train_bd, train_cf, BuildOptions, HeldOut, Role, Seeds, TrainConfig};

fn cfg(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 40,
        warmup_epochs: 5,
        snapshot_period: 5,
        batch_size: 16,
        teacher_dim: 8,
        student_dim: 2,
        lr_teacher: 0.01,
        lr_student: 0.01,
        init_scale: 0.1,
        val_k: 5,
        reuse_samples_as_negatives: false,
        seeds: Seeds::from_run(seed),
        ..Default::default()
    };
    cfg.distill.samples_per_user = 4;
    cfg
}

#[test]
fn bd_student_matches_or_beats_cf_student_on_low_rank_data() {
    let rows = synthetic::low_rank(20, 30, 2, 10, 2.0, 11);
    let ds = build_dataset(&rows, BuildOptions { min_ratings: 3, seed: 0 }).unwrap();
    let (mut bd, mut cf) = (0.0, 0.0);
    for seed in 0..5 {
        let c = cfg(seed);
        let bd_student = train_bd(&ds, c).unwrap().student.unwrap();
        let cf_student = train_cf(&ds, c, Role::Student).unwrap().student.unwrap();
        bd += evaluate_held_out(&bd_student, &ds, &[5], HeldOut::Validation).hit[0];
        cf += evaluate_held_out(&cf_student, &ds, &[5], HeldOut::Validation).hit[0];
    }
    assert!(bd / 5.0 >= cf / 5.0, "bd {} < cf {}", bd / 5.0, cf / 5.0);
}
