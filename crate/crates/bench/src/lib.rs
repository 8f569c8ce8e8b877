//! Shared fixtures for the benchmarks.

use bidistill::data::synthetic;
use bidistill::{build_dataset, BuildOptions, Dataset, FactorModel, LossKind};

/// Synthetic dataset with a partly trained-looking teacher and student.
pub struct Fixture {
    pub dataset: Dataset,
    pub teacher: FactorModel,
    pub student: FactorModel,
}

pub fn fixture(n_users: usize, n_items: usize, per_user: usize) -> Fixture {
    let rows = synthetic::low_rank(n_users, n_items, 8, per_user, 2.0, 11);
    let dataset = build_dataset(&rows, BuildOptions { min_ratings: 3, seed: 0 }).expect("synthetic data is valid");
    let teacher = FactorModel::init(dataset.n(), dataset.m(), 50, 1, 0.1, LossKind::Pointwise).expect("valid shape");
    let student = FactorModel::init(dataset.n(), dataset.m(), 5, 2, 0.1, LossKind::Pointwise).expect("valid shape");
    Fixture {
        dataset,
        teacher,
        student,
    }
}
