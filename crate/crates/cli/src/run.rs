//! End-to-end execution of an [`ExperimentSpec`] into a run directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context, Result};
use bidistill::ranking::{rank_diff_report, RankSnapshot, DEFAULT_SCATTER_TOP_R};
use bidistill::{
    evaluate, train_baseline_kd, train_bd, train_cf, Checkpoint, Dataset, EvalReport, FactorModel, Role, SamplingScheme,
    Seeds, TrainConfig, TrainLog,
};
use serde::Serialize;

use crate::config::{ExperimentSpec, Mode};
use crate::latency::{measure_latency, LatencyStats};
use crate::plots::emit_plots;
use crate::report::{build_summary, eval_csv_rows, Comparison, Summary, EVAL_CSV_HEADER};

pub const TEACHER: &str = "teacher";
pub const STUDENT: &str = "student";
pub const BD_TEACHER: &str = "bd-teacher";
pub const BD_STUDENT: &str = "bd-student";

pub fn kd_name(scheme: SamplingScheme) -> String {
    format!("kd-{}", scheme.as_str())
}

/// `YYYYmmddTHHMMSSZ` for a Unix time in seconds.
pub fn utc_stamp(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    // Civil date from days since 1970-01-01 (proleptic Gregorian).
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!(
        "{year:04}{month:02}{day:02}T{:02}{:02}{:02}Z",
        rem / 3600,
        (rem / 60) % 60,
        rem % 60
    )
}

/// Creates `<output_dir>/<label>-<timestamp>`, adding a suffix on clashes.
pub fn create_run_dir(output_dir: &Path, label: &str) -> Result<PathBuf> {
    fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let base = format!("{label}-{}", utc_stamp(secs));
    for attempt in 0.. {
        let name = if attempt == 0 { base.clone() } else { format!("{base}-{attempt}") };
        let dir = output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_checkpoint(path: &Path, model: &FactorModel) -> Result<()> {
    let text = serde_json::to_string(&model.to_checkpoint())?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<FactorModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(FactorModel::from_checkpoint(ckpt)?)
}

fn load_matching(path: &Path, ds: &Dataset) -> Result<FactorModel> {
    let model = load_checkpoint(path)?;
    if model.n() != ds.n() || model.m() != ds.m() {
        return Err(anyhow!(
            "{} is {}x{} but the dataset is {}x{}",
            path.display(),
            model.n(),
            model.m(),
            ds.n(),
            ds.m()
        ));
    }
    Ok(model)
}

fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    for rec in &log.epochs {
        writeln!(f, "{}", serde_json::to_string(rec)?)?;
    }
    let tail = serde_json::json!({
        "best_teacher_epoch": log.best_teacher_epoch,
        "best_student_epoch": log.best_student_epoch,
        "final_avg_rank_difference": log.final_avg_rank_difference,
    });
    writeln!(f, "{tail}")?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct DatasetStats {
    users: usize,
    items: usize,
    interactions: usize,
    sparsity: f64,
}

#[derive(Debug, Clone, Serialize)]
struct AnalysisSummary {
    average_rank_difference: f64,
    student_win_fraction: f64,
    test_interactions: usize,
    scatter_points: usize,
    top_r: u32,
}

/// What a finished run left on disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: Option<Summary>,
    pub latency: Vec<LatencyStats>,
}

/// Collects per-model reports and writes them as they arrive.
struct Collector {
    dir: PathBuf,
    ks: Vec<usize>,
    csv: fs::File,
    groups: Vec<(String, Vec<EvalReport>)>,
}

impl Collector {
    fn new(dir: &Path, ks: &[usize]) -> Result<Self> {
        let path = dir.join("eval.csv");
        let mut csv = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        csv.write_all(EVAL_CSV_HEADER.as_bytes())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            ks: ks.to_vec(),
            csv,
            groups: Vec::new(),
        })
    }

    fn seed_dir(&self, seed: u64) -> Result<PathBuf> {
        let d = self.dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    /// Evaluates on the test items and stores checkpoint plus report.
    fn add(&mut self, name: &str, seed: u64, model: &FactorModel, ds: &Dataset) -> Result<EvalReport> {
        let dir = self.seed_dir(seed)?;
        write_checkpoint(&dir.join(format!("{name}.ckpt.json")), model)?;
        let mut report = evaluate(model, ds, &self.ks);
        report.model = name.to_string();
        report.seed = Some(seed);
        write_json(&dir.join(format!("{name}.eval.json")), &report)?;
        self.csv.write_all(eval_csv_rows(&report).as_bytes())?;
        let hits: Vec<String> = self.ks.iter().map(|&k| format!("H@{k}={:.4}", report.hit_at(k).unwrap())).collect();
        log::info!("seed {seed} {name}: {}", hits.join(" "));
        match self.groups.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => v.push(report.clone()),
            None => self.groups.push((name.to_string(), vec![report.clone()])),
        }
        Ok(report)
    }

    fn finish(self, comparisons: &[Comparison]) -> Result<Summary> {
        let summary = build_summary(&self.groups, &self.ks, comparisons)?;
        write_json(&self.dir.join("summary.json"), &summary)?;
        fs::write(self.dir.join("summary.md"), summary.to_markdown())?;
        Ok(summary)
    }
}

fn analyze_pair(teacher: &FactorModel, student: &FactorModel, ds: &Dataset, top_r: u32, dir: &Path) -> Result<()> {
    let st = RankSnapshot::build(teacher, ds, 0);
    let ss = RankSnapshot::build(student, ds, 0);
    let report = rank_diff_report(&st, &ss, ds, top_r)?;
    emit_plots(&report, dir)?;
    write_json(
        &dir.join("summary.json"),
        &AnalysisSummary {
            average_rank_difference: report.average_rank_difference,
            student_win_fraction: report.student_win_fraction,
            test_interactions: report.records.len(),
            scatter_points: report.scatter.len(),
            top_r,
        },
    )
}

fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seeds: Seeds::from_run(seed),
        ..*cfg
    }
}

fn train_kd_set(
    spec: &ExperimentSpec,
    ds: &Dataset,
    seed: u64,
    teacher: &FactorModel,
    col: &mut Collector,
) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for &scheme in &spec.kd.schemes {
        let mut cfg = seeded(&spec.train, seed);
        cfg.distill.scheme = scheme;
        cfg.distill.lambda_st = 0.0;
        let name = kd_name(scheme);
        let out = train_baseline_kd(ds, cfg, teacher.clone()).with_context(|| format!("stage {name}, seed {seed}"))?;
        write_train_log(&col.seed_dir(seed)?.join(format!("{name}.trainlog.jsonl")), &out.log)?;
        col.add(&name, seed, out.student.as_ref().unwrap(), ds)?;
        names.push(name);
    }
    Ok(names)
}

/// Trains a CF-only model of `role`, writing its log under the seed dir.
fn train_reference(spec: &ExperimentSpec, ds: &Dataset, seed: u64, role: Role, col: &mut Collector) -> Result<FactorModel> {
    let name = match role {
        Role::Teacher => TEACHER,
        Role::Student => STUDENT,
    };
    let out = train_cf(ds, seeded(&spec.train, seed), role).with_context(|| format!("stage {name}, seed {seed}"))?;
    write_train_log(&col.seed_dir(seed)?.join(format!("{name}.trainlog.jsonl")), &out.log)?;
    let model = match role {
        Role::Teacher => out.teacher,
        Role::Student => out.student,
    }
    .unwrap();
    col.add(name, seed, &model, ds)?;
    Ok(model)
}

fn run_training(spec: &ExperimentSpec, ds: &Dataset, dir: &Path) -> Result<Summary> {
    let mut col = Collector::new(dir, &spec.ks)?;
    let mut kd_names = Vec::new();
    for seed in spec.seeds() {
        match spec.mode {
            Mode::CfOnly => {
                train_reference(spec, ds, seed, Role::Teacher, &mut col)?;
                train_reference(spec, ds, seed, Role::Student, &mut col)?;
            }
            Mode::Bd => {
                let out = train_bd(ds, seeded(&spec.train, seed)).with_context(|| format!("stage bd, seed {seed}"))?;
                let seed_dir = col.seed_dir(seed)?;
                write_train_log(&seed_dir.join("bd.trainlog.jsonl"), &out.log)?;
                let (bt, bs) = (out.teacher.unwrap(), out.student.unwrap());
                col.add(BD_TEACHER, seed, &bt, ds)?;
                col.add(BD_STUDENT, seed, &bs, ds)?;
                let teacher = train_reference(spec, ds, seed, Role::Teacher, &mut col)?;
                let student = train_reference(spec, ds, seed, Role::Student, &mut col)?;
                let top_r = spec.analyze.top_r.unwrap_or(DEFAULT_SCATTER_TOP_R);
                analyze_pair(&teacher, &student, ds, top_r, &seed_dir.join("analysis-cf"))?;
                analyze_pair(&bt, &bs, ds, top_r, &seed_dir.join("analysis-bd"))?;
                let frozen = match &spec.kd.teacher_checkpoint {
                    Some(p) => load_matching(p, ds)?,
                    None => teacher,
                };
                kd_names = train_kd_set(spec, ds, seed, &frozen, &mut col)?;
            }
            Mode::BaselineKd => {
                let teacher = match &spec.kd.teacher_checkpoint {
                    Some(p) => load_matching(p, ds)?,
                    None => train_reference(spec, ds, seed, Role::Teacher, &mut col)?,
                };
                train_reference(spec, ds, seed, Role::Student, &mut col)?;
                kd_names = train_kd_set(spec, ds, seed, &teacher, &mut col)?;
            }
            Mode::Analyze | Mode::Latency => unreachable!(),
        }
    }
    let mut comparisons = vec![
        Comparison {
            name: "Improv.T".into(),
            new_model: BD_TEACHER.into(),
            old_models: vec![TEACHER.into()],
            with_test: false,
        },
        Comparison {
            name: "Improv.B".into(),
            new_model: BD_STUDENT.into(),
            old_models: kd_names.clone(),
            with_test: true,
        },
        Comparison {
            name: "Improv.S".into(),
            new_model: BD_STUDENT.into(),
            old_models: vec![STUDENT.into()],
            with_test: true,
        },
    ];
    if spec.mode == Mode::BaselineKd {
        comparisons = kd_names
            .iter()
            .map(|n| Comparison {
                name: format!("Improv.{n}"),
                new_model: n.clone(),
                old_models: vec![STUDENT.into()],
                with_test: true,
            })
            .collect();
    }
    col.finish(&comparisons)
}

/// Runs `spec` (already env-overridden and validated) to completion.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunOutput> {
    spec.validate()?;
    let ds = spec.dataset.load()?;
    let dir = create_run_dir(&spec.output_dir, spec.mode.as_str())?;
    fs::write(dir.join("config.toml"), spec.to_toml()?)?;
    write_json(
        &dir.join("dataset.json"),
        &DatasetStats {
            users: ds.n(),
            items: ds.m(),
            interactions: ds.num_interactions(),
            sparsity: ds.sparsity(),
        },
    )?;
    log::info!("{}: {} users, {} items, writing to {}", spec.mode.as_str(), ds.n(), ds.m(), dir.display());
    let mut out = RunOutput {
        dir: dir.clone(),
        summary: None,
        latency: Vec::new(),
    };
    match spec.mode {
        Mode::Bd | Mode::CfOnly | Mode::BaselineKd => out.summary = Some(run_training(spec, &ds, &dir)?),
        Mode::Analyze => {
            let t = load_matching(spec.analyze.teacher_checkpoint.as_ref().unwrap(), &ds)?;
            let s = load_matching(spec.analyze.student_checkpoint.as_ref().unwrap(), &ds)?;
            analyze_pair(&t, &s, &ds, spec.analyze.top_r.unwrap_or(DEFAULT_SCATTER_TOP_R), &dir)?;
        }
        Mode::Latency => {
            let mut csv = String::from("model,dim,parameter_count,users,repetitions,min_secs,mean_secs\n");
            for path in &spec.latency.checkpoints {
                let model = load_matching(path, &ds)?;
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let st = measure_latency(&name, &model, &ds, spec.latency.repetitions);
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    st.model, st.dim, st.parameter_count, st.users, st.repetitions, st.min_secs, st.mean_secs
                ));
                out.latency.push(st);
            }
            fs::write(dir.join("latency.csv"), csv)?;
            write_json(&dir.join("latency.json"), &out.latency)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utc_stamp_known_instants() {
        assert_eq!(utc_stamp(0), "19700101T000000Z");
        assert_eq!(utc_stamp(951_782_400), "20000229T000000Z");
        assert_eq!(utc_stamp(1_700_000_000), "20231114T221320Z");
    }

    #[test]
    fn run_dirs_do_not_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), "bd").unwrap();
        let b = create_run_dir(tmp.path(), "bd").unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }
}
