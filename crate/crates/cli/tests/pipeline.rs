use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bidistill::data::synthetic;
use bidistill::{EvalReport, SamplingScheme};
use bidistill_cli::config::{ExperimentSpec, Mode};
use bidistill_cli::report::{improvement, Metric, Summary};
use bidistill_cli::run::run_experiment;
use tempfile::TempDir;

fn write_toy(dir: &Path) -> PathBuf {
    let rows = synthetic::low_rank(20, 30, 2, 12, 2.0, 7);
    let mut text = String::new();
    for r in &rows {
        text.push_str(&format!("{}\t{}\t{}\n", r.user_key, r.item_key, r.timestamp.unwrap()));
    }
    let path = dir.join("toy.tsv");
    fs::write(&path, text).unwrap();
    path
}

fn toy_spec(tmp: &TempDir, mode: Mode) -> ExperimentSpec {
    let data = write_toy(tmp.path());
    let text = format!(
        r#"
mode = "{}"
ks = [5, 10]
runs = 2
output_dir = "{}"

[dataset]
path = "{}"
min_ratings = 3

[train]
epochs = 6
warmup_epochs = 2
snapshot_period = 2
batch_size = 16
teacher_dim = 8
student_dim = 2
lr_teacher = 0.01
lr_student = 0.01
val_k = 5

[train.distill]
samples_per_user = 4
"#,
        mode.as_str(),
        tmp.path().join("runs").display(),
        data.display()
    );
    ExperimentSpec::from_toml(&text).unwrap()
}

fn read_report(dir: &Path, seed: u64, name: &str) -> EvalReport {
    let text = fs::read_to_string(dir.join(format!("seed-{seed}/{name}.eval.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn read_text(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn cf_only_run_writes_reports_for_every_seed() {
    let tmp = TempDir::new().unwrap();
    let out = run_experiment(&toy_spec(&tmp, Mode::CfOnly)).unwrap();
    for seed in [0, 1] {
        for name in ["teacher", "student"] {
            let report = read_report(&out.dir, seed, name);
            assert_eq!(report.model, name);
            assert_eq!(report.seed, Some(seed));
            assert_eq!(report.ranks.len(), 20);
            assert_eq!(report.ks, vec![5, 10]);
            assert!(out.dir.join(format!("seed-{seed}/{name}.ckpt.json")).is_file());
        }
    }
    let csv = read_text(&out.dir.join("eval.csv"));
    assert!(csv.starts_with("model,k,metric,seed,value\n"));
    // Two models, two seeds, two cutoffs, two metrics.
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2 * 2);
    assert!(out.dir.join("summary.json").is_file());
    assert!(out.dir.join("summary.md").is_file());
    assert!(out.dir.join("dataset.json").is_file());
}

#[test]
fn bd_with_zero_weights_reproduces_cf_only_models() {
    let tmp = TempDir::new().unwrap();
    let mut spec = toy_spec(&tmp, Mode::Bd);
    spec.train.distill.lambda_ts = 0.0;
    spec.train.distill.lambda_st = 0.0;
    let out = run_experiment(&spec).unwrap();
    for seed in [0, 1] {
        for (bd, cf) in [("bd-teacher", "teacher"), ("bd-student", "student")] {
            assert_eq!(read_report(&out.dir, seed, bd).ranks, read_report(&out.dir, seed, cf).ranks);
            let a = read_text(&out.dir.join(format!("seed-{seed}/{bd}.ckpt.json")));
            let b = read_text(&out.dir.join(format!("seed-{seed}/{cf}.ckpt.json")));
            assert_eq!(a, b, "seed {seed}: {bd} differs from {cf}");
        }
    }
}

#[test]
fn analyze_emits_plot_data_and_summary() {
    let tmp = TempDir::new().unwrap();
    let cf = run_experiment(&toy_spec(&tmp, Mode::CfOnly)).unwrap();
    let mut spec = toy_spec(&tmp, Mode::Analyze);
    spec.analyze.teacher_checkpoint = Some(cf.dir.join("seed-0/teacher.ckpt.json"));
    spec.analyze.student_checkpoint = Some(cf.dir.join("seed-0/student.ckpt.json"));
    let out = run_experiment(&spec).unwrap();
    let rankdiff = read_text(&out.dir.join("rankdiff.csv"));
    assert!(rankdiff.starts_with("position,user,item,diff\n"));
    // One row per user's test item.
    assert_eq!(rankdiff.lines().count(), 1 + 20);
    assert!(read_text(&out.dir.join("scatter.csv")).starts_with("rank_s,rank_t\n"));
    let summary: serde_json::Value = serde_json::from_str(&read_text(&out.dir.join("summary.json"))).unwrap();
    let ard = summary["average_rank_difference"].as_f64().unwrap();
    assert!((0.0..1.0).contains(&ard));
    let win = summary["student_win_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&win));
}

#[test]
fn summary_improvements_recompute_from_stored_reports() {
    let tmp = TempDir::new().unwrap();
    let mut spec = toy_spec(&tmp, Mode::Bd);
    spec.kd.schemes = vec![SamplingScheme::Uniform, SamplingScheme::TopN];
    let out = run_experiment(&spec).unwrap();
    let summary: Summary = serde_json::from_str(&read_text(&out.dir.join("summary.json"))).unwrap();
    assert_eq!(&summary, out.summary.as_ref().unwrap());
    let mean_hit = |name: &str, k_idx: usize| -> f64 {
        [0, 1].iter().map(|&s| read_report(&out.dir, s, name).hit[k_idx]).sum::<f64>() / 2.0
    };
    let mean_ndcg = |name: &str, k_idx: usize| -> f64 {
        [0, 1].iter().map(|&s| read_report(&out.dir, s, name).ndcg[k_idx]).sum::<f64>() / 2.0
    };
    let names: Vec<&str> = summary.improvements.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["Improv.T", "Improv.B", "Improv.S"]);
    for row in &summary.improvements {
        for cell in &row.cells {
            let k_idx = summary.ks.iter().position(|&k| k == cell.k).unwrap();
            let of = |name: &str| {
                if cell.metric == Metric::Hit {
                    mean_hit(name, k_idx)
                } else {
                    mean_ndcg(name, k_idx)
                }
            };
            let candidates: Vec<&str> = match row.name.as_str() {
                "Improv.T" => vec!["teacher"],
                "Improv.S" => vec!["student"],
                _ => vec!["kd-uniform", "kd-top-n"],
            };
            let old = candidates.iter().map(|n| of(n)).fold(f64::NEG_INFINITY, f64::max);
            let new = of(&row.new_model);
            assert!((cell.new - new).abs() < 1e-12);
            assert!((cell.old - old).abs() < 1e-12);
            if old > 0.0 {
                assert!((cell.value - improvement(new, old)).abs() < 1e-12);
                assert!((cell.value - (new - old) / old).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let first = run_experiment(&toy_spec(&tmp, Mode::Bd)).unwrap();
    let echoed = ExperimentSpec::load(&first.dir.join("config.toml")).unwrap();
    assert_eq!(echoed, toy_spec(&tmp, Mode::Bd));
    let second = run_experiment(&echoed).unwrap();
    assert_ne!(first.dir, second.dir);
    for seed in [0, 1] {
        for name in ["bd-teacher", "bd-student", "teacher", "student"] {
            let a = read_text(&first.dir.join(format!("seed-{seed}/{name}.ckpt.json")));
            let b = read_text(&second.dir.join(format!("seed-{seed}/{name}.ckpt.json")));
            assert_eq!(a, b, "seed {seed} {name}");
        }
    }
    assert_eq!(read_text(&first.dir.join("eval.csv")), read_text(&second.dir.join("eval.csv")));
}

#[test]
fn binary_trains_from_flags_alone() {
    let tmp = TempDir::new().unwrap();
    let data = write_toy(tmp.path());
    let out_dir = tmp.path().join("bin-runs");
    let status = Command::new(env!("CARGO_BIN_EXE_bidistill"))
        .args(["train-cf", "--runs", "1", "--epochs", "6", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out_dir)
        .env_remove("BIDISTILL_DATA")
        .env_remove("BIDISTILL_OUT")
        .env_remove("BIDISTILL_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let runs: Vec<_> = fs::read_dir(&out_dir).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let dir = runs[0].as_ref().unwrap().path();
    assert!(dir.join("seed-0/teacher.eval.json").is_file());
}
