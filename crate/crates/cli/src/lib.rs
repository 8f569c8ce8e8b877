//! Command-line front end: experiment configs, run directories, reports,
//! latency measurement and plot data.

pub mod config;
pub mod latency;
pub mod plots;
pub mod report;
pub mod run;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bidistill::distill::sampling_distribution;
use bidistill::ranking::RankSnapshot;
use bidistill::{evaluate, Dataset, Direction, EvalReport, FactorModel, HeldOut, SamplingScheme};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ExperimentSpec, Mode};
use run::{create_run_dir, load_checkpoint, run_experiment, write_json, RunOutput};

#[derive(Debug, Parser)]
#[command(name = "bidistill", version, about = "Bidirectional teacher/student distillation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML experiment config. Without it, --data is required.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Interaction log (overrides the config and BIDISTILL_DATA).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Skip the first line of the interaction log.
    #[arg(long)]
    pub header: bool,
    /// Parent of the timestamped run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// First run seed (overrides the config and BIDISTILL_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of runs with consecutive seeds.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Total training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Validation,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train teacher and student with bidirectional distillation, plus the
    /// CF-only references and any configured KD baselines.
    TrainBd(Common),
    /// Train students distilled from a frozen teacher.
    TrainKd {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint; a CF-only teacher is trained when absent.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Sampling schemes of the baselines (repeatable).
        #[arg(long = "scheme")]
        schemes: Vec<String>,
    },
    /// Train CF-only teacher and student.
    TrainCf(Common),
    /// Evaluate one checkpoint on held-out items.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Rank-difference analytics of a teacher/student pair.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        top_r: Option<u32>,
    },
    /// Time full recommendation lists for every user.
    Latency {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Print one user's normalized sampling distribution per scheme as CSV.
    DumpSampling {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        /// User key as it appears in the interaction log.
        #[arg(long)]
        user: String,
        /// Restrict to these schemes (repeatable); all by default.
        #[arg(long = "scheme")]
        schemes: Vec<String>,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Resolves file config, then environment, then flags.
pub fn resolve_spec(common: &Common, mode: Mode) -> Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::from_toml("[dataset]\npath = \"\"")?,
    };
    spec.mode = mode;
    spec.apply_env(|k| std::env::var(k).ok())?;
    if let Some(p) = &common.data {
        spec.dataset.path = p.clone();
    }
    if common.header {
        spec.dataset.format.header = true;
    }
    if let Some(p) = &common.out {
        spec.output_dir = p.clone();
    }
    if let Some(s) = common.seed {
        spec.base_seed = s;
    }
    if let Some(r) = common.runs {
        spec.runs = r;
    }
    if let Some(e) = common.epochs {
        spec.train.epochs = e;
    }
    if spec.dataset.path.as_os_str().is_empty() {
        bail!("no dataset: pass --data, set BIDISTILL_DATA or use a config with [dataset] path");
    }
    Ok(spec)
}

fn parse_schemes(names: &[String]) -> Result<Vec<SamplingScheme>> {
    names.iter().map(|s| s.parse().map_err(anyhow::Error::from)).collect()
}

/// Evaluates a checkpoint, writing the report into a fresh run directory.
pub fn eval_checkpoint(spec: &ExperimentSpec, checkpoint: &Path, split: Split) -> Result<(PathBuf, EvalReport)> {
    let ds = spec.dataset.load()?;
    let model = load_checkpoint(checkpoint)?;
    let which = match split {
        Split::Validation => HeldOut::Validation,
        Split::Test => HeldOut::Test,
    };
    let mut report = match which {
        HeldOut::Test => evaluate(&model, &ds, &spec.ks),
        HeldOut::Validation => bidistill::eval::evaluate_held_out(&model, &ds, &spec.ks, which),
    };
    report.model = checkpoint.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = create_run_dir(&spec.output_dir, "eval")?;
    std::fs::write(dir.join("config.toml"), spec.to_toml()?)?;
    write_json(&dir.join("eval.json"), &report)?;
    let mut csv = report::EVAL_CSV_HEADER.to_string();
    csv.push_str(&report::eval_csv_rows(&report));
    std::fs::write(dir.join("eval.csv"), csv)?;
    Ok((dir, report))
}

/// CSV of `scheme,direction,item,rank_t,rank_s,weight,probability`.
pub fn dump_sampling(
    dataset: &Dataset,
    spec: &ExperimentSpec,
    teacher: &FactorModel,
    student: &FactorModel,
    user_key: &str,
    schemes: &[SamplingScheme],
) -> Result<String> {
    let u = dataset.user_index(user_key).with_context(|| format!("unknown user {user_key:?}"))?;
    let st = RankSnapshot::build(teacher, dataset, 0);
    let ss = RankSnapshot::build(student, dataset, 0);
    let mut out = String::from("scheme,direction,item,rank_t,rank_s,weight,probability\n");
    for &scheme in schemes {
        for dir in [Direction::TeacherToStudent, Direction::StudentToTeacher] {
            for row in sampling_distribution(scheme, dir, &spec.train.distill, &st, &ss, u) {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    scheme.as_str(),
                    dir.as_str(),
                    dataset.item_key(row.item),
                    row.rank_t,
                    row.rank_s,
                    row.weight,
                    row.probability
                )
                .unwrap();
            }
        }
    }
    Ok(out)
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<Option<RunOutput>> {
    match cli.command {
        Command::TrainBd(c) => run_experiment(&resolve_spec(&c, Mode::Bd)?).map(Some),
        Command::TrainCf(c) => run_experiment(&resolve_spec(&c, Mode::CfOnly)?).map(Some),
        Command::TrainKd {
            common,
            teacher,
            schemes,
        } => {
            let mut spec = resolve_spec(&common, Mode::BaselineKd)?;
            if teacher.is_some() {
                spec.kd.teacher_checkpoint = teacher;
            }
            if !schemes.is_empty() {
                spec.kd.schemes = parse_schemes(&schemes)?;
            }
            run_experiment(&spec).map(Some)
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let spec = resolve_spec(&common, Mode::CfOnly)?;
            let (dir, report) = eval_checkpoint(&spec, &checkpoint, split)?;
            for (idx, k) in report.ks.iter().enumerate() {
                println!("H@{k} {:.4}  N@{k} {:.4}", report.hit[idx], report.ndcg[idx]);
            }
            println!("{}", dir.display());
            Ok(None)
        }
        Command::Analyze {
            common,
            teacher,
            student,
            top_r,
        } => {
            let mut spec = resolve_spec(&common, Mode::Analyze)?;
            if teacher.is_some() {
                spec.analyze.teacher_checkpoint = teacher;
            }
            if student.is_some() {
                spec.analyze.student_checkpoint = student;
            }
            if top_r.is_some() {
                spec.analyze.top_r = top_r;
            }
            run_experiment(&spec).map(Some)
        }
        Command::Latency {
            common,
            checkpoints,
            repetitions,
        } => {
            let mut spec = resolve_spec(&common, Mode::Latency)?;
            if !checkpoints.is_empty() {
                spec.latency.checkpoints = checkpoints;
            }
            if let Some(r) = repetitions {
                spec.latency.repetitions = r;
            }
            run_experiment(&spec).map(Some)
        }
        Command::DumpSampling {
            common,
            teacher,
            student,
            user,
            schemes,
            output,
        } => {
            let spec = resolve_spec(&common, Mode::Analyze)?;
            let ds = spec.dataset.load()?;
            let schemes = if schemes.is_empty() {
                SamplingScheme::ALL.to_vec()
            } else {
                parse_schemes(&schemes)?
            };
            let csv = dump_sampling(&ds, &spec, &load_checkpoint(&teacher)?, &load_checkpoint(&student)?, &user, &schemes)?;
            match output {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(None)
        }
    }
}

