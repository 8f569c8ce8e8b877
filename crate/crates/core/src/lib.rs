//! Teacher/student recommenders that distill knowledge in both directions.
//!
//! A large matrix-factorization teacher and a small student are trained
//! together. Each periodically ranks all unobserved items, and each learns
//! from the other's soft predictions on items drawn according to how much
//! their rankings disagree.

pub mod data;
pub mod distill;
mod error;
pub mod eval;
pub mod models;
pub mod ranking;
#[cfg(test)]
mod testutil;
pub mod train;

pub use data::{build_dataset, load_interactions, BuildOptions, Columns, Dataset, Delimiter, InputFormat, RawInteraction};
pub use distill::{bd_loss, sample_items, sample_items_baseline, Direction, DistillConfig, SamplingScheme};
pub use error::{Error, Result};
pub use eval::{aggregate_runs, evaluate, paired_t_test, AggregateReport, EvalReport, HeldOut, TTest};
pub use models::{Checkpoint, FactorModel, LossKind};
pub use ranking::{average_rank_difference, rank_diff_report, rank_difference, RankDiffReport, RankSnapshot};
pub use train::{train_baseline_kd, train_bd, train_cf, Role, Seeds, TrainConfig, TrainLog, TrainOutcome, Trainer};
