//! Bidirectional distillation: the binary distillation loss and the
//! sampling schemes that pick which unobserved items carry knowledge in
//! each direction.

mod loss;
mod sampler;

pub use loss::bd_loss;
pub use sampler::{
    sample_items, sample_items_baseline, sampling_distribution, DirectionSampler, DistRow, UserSampler,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which model teaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Teacher → student: the student learns.
    TeacherToStudent,
    /// Student → teacher: the teacher learns.
    StudentToTeacher,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TeacherToStudent => "t2s",
            Direction::StudentToTeacher => "s2t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    /// tanh weights toward the student, exp weights toward the teacher.
    #[default]
    RankDiscrepancy,
    /// `∝ exp(−rank·ε_e)` over the teaching model's ranking.
    RankAware,
    /// The teaching model's top-N candidates.
    TopN,
    Uniform,
    /// exp weights toward the student, tanh weights toward the teacher.
    SwappedRankDiscrepancy,
}

impl SamplingScheme {
    pub const ALL: [SamplingScheme; 5] = [
        SamplingScheme::RankDiscrepancy,
        SamplingScheme::RankAware,
        SamplingScheme::TopN,
        SamplingScheme::Uniform,
        SamplingScheme::SwappedRankDiscrepancy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplingScheme::RankDiscrepancy => "rank-discrepancy",
            SamplingScheme::RankAware => "rank-aware",
            SamplingScheme::TopN => "top-n",
            SamplingScheme::Uniform => "uniform",
            SamplingScheme::SwappedRankDiscrepancy => "swapped-rank-discrepancy",
        }
    }
}

impl std::str::FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampling scheme {s:?}")))
    }
}

/// Distillation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight of the distillation term in the student's loss.
    pub lambda_ts: f64,
    /// Weight of the distillation term in the teacher's loss.
    pub lambda_st: f64,
    pub temperature: f64,
    pub eps_t: f64,
    pub eps_e: f64,
    pub samples_per_user: usize,
    pub scheme: SamplingScheme,
    /// Limits rank-aware sampling to the teaching model's top ranks.
    pub rank_aware_truncation: Option<usize>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda_ts: 0.5,
            lambda_st: 0.5,
            temperature: 2.0,
            eps_t: 1e-3,
            eps_e: 1e-3,
            samples_per_user: 10,
            scheme: SamplingScheme::RankDiscrepancy,
            rank_aware_truncation: None,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.lambda_ts >= 0.0 && self.lambda_st >= 0.0) {
            return bad("distillation weights must be non-negative");
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad("temperature must be positive");
        }
        if !(self.eps_t > 0.0 && self.eps_e > 0.0) {
            return bad("eps_t and eps_e must be positive");
        }
        if self.samples_per_user == 0 {
            return bad("samples_per_user must be at least 1");
        }
        if self.rank_aware_truncation == Some(0) {
            return bad("rank_aware_truncation must be at least 1");
        }
        Ok(())
    }

    pub fn lambda(&self, direction: Direction) -> f64 {
        match direction {
            Direction::TeacherToStudent => self.lambda_ts,
            Direction::StudentToTeacher => self.lambda_st,
        }
    }
}

/// `tanh(max((rank_S − rank_T)·ε_t, 0))`.
#[inline]
pub fn weight_t_to_s(rank_t: u32, rank_s: u32, eps_t: f64) -> f64 {
    tanh_weight(rank_s as i64 - rank_t as i64, eps_t)
}

/// `exp((rank_T − rank_S)·ε_e)`.
#[inline]
pub fn weight_s_to_t(rank_t: u32, rank_s: u32, eps_e: f64) -> f64 {
    exp_log_weight(rank_t as i64 - rank_s as i64, eps_e).exp()
}

#[inline]
pub(crate) fn tanh_weight(discrepancy: i64, eps: f64) -> f64 {
    (discrepancy as f64 * eps).max(0.0).tanh()
}

#[inline]
pub(crate) fn exp_log_weight(discrepancy: i64, eps: f64) -> f64 {
    discrepancy as f64 * eps
}
