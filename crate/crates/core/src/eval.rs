//! Leave-one-out full-ranking evaluation (H@K, N@K), run aggregation and
//! paired significance testing.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::FactorModel;

/// Which held-out item is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeldOut {
    /// The validation item, with the test item removed from candidates.
    Validation,
    /// The test item, with the validation item removed from candidates.
    Test,
}

/// Rank (1 = best) of `target` among `u`'s unobserved items minus
/// `exclude`, given all of `u`'s logits. Ties go to the smaller item index.
pub fn held_out_rank(logits: &[f64], train: &[u32], target: u32, exclude: u32) -> u32 {
    let zt = logits[target as usize];
    let mut rank = 1;
    let mut t = 0;
    for (j, &z) in logits.iter().enumerate() {
        let j = j as u32;
        if t < train.len() && train[t] == j {
            t += 1;
            continue;
        }
        if j == target || j == exclude {
            continue;
        }
        if z > zt || (z == zt && j < target) {
            rank += 1;
        }
    }
    rank
}

/// Per-user ranks of the chosen held-out item.
pub fn held_out_ranks(model: &FactorModel, dataset: &Dataset, which: HeldOut) -> Vec<u32> {
    (0..dataset.n() as u32)
        .into_par_iter()
        .map_init(
            || vec![0.0; dataset.m()],
            |logits, u| {
                model.user_logits(u, logits);
                let (target, exclude) = match which {
                    HeldOut::Validation => (dataset.val_item(u), dataset.test_item(u)),
                    HeldOut::Test => (dataset.test_item(u), dataset.val_item(u)),
                };
                held_out_rank(logits, dataset.train_items(u), target, exclude)
            },
        )
        .collect()
}

#[inline]
pub fn hit(rank: u32, k: usize) -> f64 {
    if rank as usize <= k {
        1.0
    } else {
        0.0
    }
}

/// `1/log2(rank + 1)` inside the top `k`, zero outside.
#[inline]
pub fn ndcg(rank: u32, k: usize) -> f64 {
    if rank as usize <= k {
        1.0 / ((rank as f64) + 1.0).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub seed: Option<u64>,
    pub ks: Vec<usize>,
    /// Mean H@K, aligned with `ks`.
    pub hit: Vec<f64>,
    /// Mean N@K, aligned with `ks`.
    pub ndcg: Vec<f64>,
    /// Per-user rank of the held-out item.
    pub ranks: Vec<u32>,
    pub runtime_secs: f64,
}

impl EvalReport {
    pub fn from_ranks(model: impl Into<String>, seed: Option<u64>, ks: &[usize], ranks: Vec<u32>) -> Self {
        let n = ranks.len().max(1) as f64;
        let hit = ks.iter().map(|&k| ranks.iter().map(|&r| hit(r, k)).sum::<f64>() / n).collect();
        let ndcg = ks.iter().map(|&k| ranks.iter().map(|&r| ndcg(r, k)).sum::<f64>() / n).collect();
        Self {
            model: model.into(),
            seed,
            ks: ks.to_vec(),
            hit,
            ndcg,
            ranks,
            runtime_secs: 0.0,
        }
    }

    fn k_index(&self, k: usize) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    pub fn hit_at(&self, k: usize) -> Option<f64> {
        self.k_index(k).map(|i| self.hit[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.k_index(k).map(|i| self.ndcg[i])
    }

    pub fn per_user_hits(&self, k: usize) -> Vec<f64> {
        self.ranks.iter().map(|&r| hit(r, k)).collect()
    }

    pub fn per_user_ndcg(&self, k: usize) -> Vec<f64> {
        self.ranks.iter().map(|&r| ndcg(r, k)).collect()
    }
}

/// Ranks every user's test item against all unobserved items except the
/// validation item.
pub fn evaluate(model: &FactorModel, dataset: &Dataset, ks: &[usize]) -> EvalReport {
    evaluate_held_out(model, dataset, ks, HeldOut::Test)
}

pub fn evaluate_held_out(model: &FactorModel, dataset: &Dataset, ks: &[usize], which: HeldOut) -> EvalReport {
    let start = Instant::now();
    let ranks = held_out_ranks(model, dataset, which);
    let mut report = EvalReport::from_ranks("", Some(model.seed()), ks, ranks);
    report.runtime_secs = start.elapsed().as_secs_f64();
    report
}

/// Means over runs, with the per-run values kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: String,
    pub ks: Vec<usize>,
    pub hit: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub runs: Vec<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: Option<u64>,
    pub hit: Vec<f64>,
    pub ndcg: Vec<f64>,
}

impl AggregateReport {
    pub fn hit_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hit[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }
}

pub fn aggregate_runs(reports: &[EvalReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("no runs to aggregate".into()))?;
    if let Some(bad) = reports.iter().find(|r| r.ks != first.ks) {
        return Err(Error::Shape(format!("K lists differ: {:?} vs {:?}", first.ks, bad.ks)));
    }
    let s = reports.len() as f64;
    let mean = |f: &dyn Fn(&EvalReport) -> &Vec<f64>| -> Vec<f64> {
        (0..first.ks.len())
            .map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / s)
            .collect()
    };
    Ok(AggregateReport {
        model: first.model.clone(),
        ks: first.ks.clone(),
        hit: mean(&|r| &r.hit),
        ndcg: mean(&|r| &r.ndcg),
        runs: reports
            .iter()
            .map(|r| RunMetrics {
                seed: r.seed,
                hit: r.hit.clone(),
                ndcg: r.ndcg.clone(),
            })
            .collect(),
    })
}

/// Outcome of a paired t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TTest {
    Computed { t: f64, df: f64, p_value: f64, mean_diff: f64 },
    /// The differences have zero variance; the p-value is undefined.
    Degenerate { mean_diff: f64 },
}

impl TTest {
    pub fn p_value(&self) -> Option<f64> {
        match *self {
            TTest::Computed { p_value, .. } => Some(p_value),
            TTest::Degenerate { .. } => None,
        }
    }
}

/// Two-sided paired t-test on `a − b` with `n − 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Shape("paired t-test needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= f64::EPSILON * mean.abs().max(1.0) * 1e-3 {
        return Ok(TTest::Degenerate { mean_diff: mean });
    }
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest::Computed {
        t,
        df,
        p_value,
        mean_diff: mean,
    })
}
