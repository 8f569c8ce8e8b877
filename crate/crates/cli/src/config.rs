//! Experiment specification read from TOML, with environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bidistill::{BuildOptions, Dataset, InputFormat, SamplingScheme, TrainConfig};
use serde::{Deserialize, Serialize};

pub const ENV_DATA: &str = "BIDISTILL_DATA";
pub const ENV_OUT: &str = "BIDISTILL_OUT";
pub const ENV_SEED: &str = "BIDISTILL_SEED";
pub const ENV_TEACHER: &str = "BIDISTILL_TEACHER";
pub const ENV_STUDENT: &str = "BIDISTILL_STUDENT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Bd,
    BaselineKd,
    CfOnly,
    Analyze,
    Latency,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bd => "bd",
            Mode::BaselineKd => "baseline-kd",
            Mode::CfOnly => "cf-only",
            Mode::Analyze => "analyze",
            Mode::Latency => "latency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: InputFormat,
    #[serde(default = "default_min_ratings")]
    pub min_ratings: usize,
    /// Seed of the random held-out picks for users without timestamps.
    #[serde(default)]
    pub split_seed: u64,
}

fn default_min_ratings() -> usize {
    10
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        let rows = bidistill::load_interactions(&self.path, self.format)
            .with_context(|| format!("loading {}", self.path.display()))?;
        let ds = bidistill::build_dataset(
            &rows,
            BuildOptions {
                min_ratings: self.min_ratings,
                seed: self.split_seed,
            },
        )
        .context("building the dataset")?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdSpec {
    /// Pre-trained teacher; when absent a CF-only teacher is trained per run.
    pub teacher_checkpoint: Option<PathBuf>,
    /// Sampling schemes of the frozen-teacher baselines.
    pub schemes: Vec<SamplingScheme>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSpec {
    pub teacher_checkpoint: Option<PathBuf>,
    pub student_checkpoint: Option<PathBuf>,
    /// Scatter keeps pairs ranked within this cut-off by either model.
    pub top_r: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySpec {
    pub checkpoints: Vec<PathBuf>,
    pub repetitions: usize,
}

impl Default for LatencySpec {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            repetitions: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub mode: Mode,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Run `r` uses seed `base_seed + r` for all of its random streams.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Extra models trained alongside `bd` runs to fill the comparison
    /// table: frozen-teacher baselines for these schemes.
    #[serde(default)]
    pub kd: KdSpec,
    #[serde(default)]
    pub analyze: AnalyzeSpec,
    #[serde(default)]
    pub latency: LatencySpec,
}

fn default_ks() -> Vec<usize> {
    vec![50, 100]
}

fn default_runs() -> usize {
    5
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing the experiment config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing the experiment config")
    }

    /// Applies `BIDISTILL_*` overrides from `lookup` (normally the process
    /// environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(p) = lookup(ENV_DATA) {
            self.dataset.path = p.into();
        }
        if let Some(p) = lookup(ENV_OUT) {
            self.output_dir = p.into();
        }
        if let Some(s) = lookup(ENV_SEED) {
            self.base_seed = s.trim().parse().with_context(|| format!("{ENV_SEED}={s} is not a u64"))?;
        }
        if let Some(p) = lookup(ENV_TEACHER) {
            self.kd.teacher_checkpoint = Some(p.clone().into());
            self.analyze.teacher_checkpoint = Some(p.into());
        }
        if let Some(p) = lookup(ENV_STUDENT) {
            self.analyze.student_checkpoint = Some(p.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            bail!("ks must be a non-empty list of positive cut-offs");
        }
        match self.mode {
            Mode::Bd | Mode::CfOnly | Mode::BaselineKd => {
                if self.runs == 0 {
                    bail!("runs must be at least 1");
                }
                self.train.validate().context("invalid [train] section")?;
                if self.mode == Mode::BaselineKd && self.kd.schemes.is_empty() {
                    bail!("baseline-kd mode needs at least one entry in kd.schemes");
                }
            }
            Mode::Analyze => {
                if self.analyze.teacher_checkpoint.is_none() || self.analyze.student_checkpoint.is_none() {
                    bail!("analyze mode needs analyze.teacher_checkpoint and analyze.student_checkpoint");
                }
            }
            Mode::Latency => {
                if self.latency.checkpoints.is_empty() || self.latency.repetitions == 0 {
                    bail!("latency mode needs latency.checkpoints and repetitions >= 1");
                }
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(|r| self.base_seed + r)
    }
}
