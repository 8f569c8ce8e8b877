//! Flat CSV rows and the comparison summary table.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use bidistill::{aggregate_runs, paired_t_test, AggregateReport, EvalReport, TTest};
use serde::{Deserialize, Serialize};

pub const EVAL_CSV_HEADER: &str = "model,k,metric,seed,value\n";

/// One `model,k,metric,seed,value` row per cut-off and metric.
pub fn eval_csv_rows(report: &EvalReport) -> String {
    let seed = report.seed.map(|s| s.to_string()).unwrap_or_default();
    let mut out = String::new();
    for (idx, k) in report.ks.iter().enumerate() {
        for (metric, values) in [("hit", &report.hit), ("ndcg", &report.ndcg)] {
            writeln!(out, "{},{k},{metric},{seed},{}", report.model, values[idx]).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Hit,
    Ndcg,
}

impl Metric {
    pub fn label(self, k: usize) -> String {
        match self {
            Metric::Hit => format!("H@{k}"),
            Metric::Ndcg => format!("N@{k}"),
        }
    }

    fn mean(self, agg: &AggregateReport, k: usize) -> Option<f64> {
        match self {
            Metric::Hit => agg.hit_at(k),
            Metric::Ndcg => agg.ndcg_at(k),
        }
    }

    fn per_user(self, report: &EvalReport, k: usize) -> Vec<f64> {
        match self {
            Metric::Hit => report.per_user_hits(k),
            Metric::Ndcg => report.per_user_ndcg(k),
        }
    }
}

/// Relative improvement `(new − old) / old`.
pub fn improvement(new: f64, old: f64) -> f64 {
    (new - old) / old
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCell {
    pub k: usize,
    pub metric: Metric,
    pub new: f64,
    pub old: f64,
    pub value: f64,
    /// Per-user paired test, pooling users across runs.
    pub t_test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub name: String,
    pub new_model: String,
    pub old_model: String,
    pub cells: Vec<ImprovementCell>,
}

/// Row request: `name` compares `new_model` against `old_model`, or
/// against the best of several candidates per cell when more are given.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub name: String,
    pub new_model: String,
    pub old_models: Vec<String>,
    pub with_test: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ks: Vec<usize>,
    pub models: Vec<AggregateReport>,
    pub improvements: Vec<ImprovementRow>,
}

fn pooled(reports: &[EvalReport], metric: Metric, k: usize) -> Vec<f64> {
    let mut by_seed: Vec<&EvalReport> = reports.iter().collect();
    by_seed.sort_by_key(|r| r.seed);
    by_seed.iter().flat_map(|r| metric.per_user(r, k)).collect()
}

/// Aggregates each model's runs and fills the requested improvement rows.
/// Models whose reports are missing are skipped.
pub fn build_summary(groups: &[(String, Vec<EvalReport>)], ks: &[usize], comparisons: &[Comparison]) -> Result<Summary> {
    let mut models = Vec::new();
    for (name, reports) in groups {
        let mut agg = aggregate_runs(reports).with_context(|| format!("aggregating {name}"))?;
        agg.model = name.clone();
        models.push(agg);
    }
    let find = |name: &str| models.iter().position(|m| m.model == name);
    let mut improvements = Vec::new();
    for cmp in comparisons {
        let Some(new_idx) = find(&cmp.new_model) else { continue };
        let olds: Vec<usize> = cmp.old_models.iter().filter_map(|n| find(n)).collect();
        if olds.is_empty() {
            continue;
        }
        let mut cells = Vec::new();
        let mut old_names = Vec::new();
        for &k in ks {
            for metric in [Metric::Hit, Metric::Ndcg] {
                let Some(new) = metric.mean(&models[new_idx], k) else { continue };
                let (best, old) = olds
                    .iter()
                    .filter_map(|&o| metric.mean(&models[o], k).map(|v| (o, v)))
                    .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                if best == usize::MAX {
                    continue;
                }
                if !old_names.contains(&models[best].model) {
                    old_names.push(models[best].model.clone());
                }
                let t_test = if cmp.with_test {
                    let a = pooled(&groups[new_idx].1, metric, k);
                    let b = pooled(&groups[best].1, metric, k);
                    Some(paired_t_test(&a, &b).with_context(|| format!("t-test for {}", cmp.name))?)
                } else {
                    None
                };
                cells.push(ImprovementCell {
                    k,
                    metric,
                    new,
                    old,
                    value: improvement(new, old),
                    t_test,
                });
            }
        }
        improvements.push(ImprovementRow {
            name: cmp.name.clone(),
            new_model: cmp.new_model.clone(),
            old_model: old_names.join("|"),
            cells,
        });
    }
    Ok(Summary {
        ks: ks.to_vec(),
        models,
        improvements,
    })
}

fn stars(t: &Option<TTest>) -> &'static str {
    match t.as_ref().and_then(TTest::p_value) {
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        _ => "",
    }
}

impl Summary {
    /// Markdown table: one row per model mean, then one per improvement.
    /// `*` marks p < 0.05 and `**` marks p < 0.01.
    pub fn to_markdown(&self) -> String {
        let mut cols = Vec::new();
        for &k in &self.ks {
            cols.push((k, Metric::Hit));
            cols.push((k, Metric::Ndcg));
        }
        let mut out = String::from("| Model |");
        for (k, m) in &cols {
            write!(out, " {} |", m.label(*k)).unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(cols.len()));
        out.push('\n');
        for agg in &self.models {
            write!(out, "| {} |", agg.model).unwrap();
            for (k, m) in &cols {
                match m.mean(agg, *k) {
                    Some(v) => write!(out, " {v:.4} |").unwrap(),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        for row in &self.improvements {
            write!(out, "| *{}* |", row.name).unwrap();
            for (k, m) in &cols {
                match row.cells.iter().find(|c| c.k == *k && c.metric == *m) {
                    Some(c) => write!(out, " {:.2}%{} |", 100.0 * c.value, stars(&c.t_test)).unwrap(),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out
    }
}
