//! Full candidate rankings, periodic rank snapshots and teacher/student
//! rank-difference analytics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::FactorModel;

/// Candidate items of one user ordered best first, with the rank (1-based)
/// of each candidate in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub order: Vec<u32>,
    pub ranks: Vec<u32>,
}

/// Orders `candidates` by descending logit, breaking ties by ascending item
/// index.
pub fn full_rank(model: &FactorModel, u: u32, candidates: &[u32]) -> Ranking {
    let mut logits = vec![0.0; model.m()];
    model.user_logits(u, &mut logits);
    rank_by_scores(&logits, candidates)
}

/// Ranks `candidates` by `scores[item]` (descending, ties by item index).
pub fn rank_by_scores(scores: &[f64], candidates: &[u32]) -> Ranking {
    let mut order = candidates.to_vec();
    sort_by_score(scores, &mut order);
    let mut pos: Vec<(u32, u32)> = order.iter().enumerate().map(|(r, &i)| (i, r as u32 + 1)).collect();
    pos.sort_unstable();
    let ranks = candidates
        .iter()
        .map(|i| pos[pos.binary_search_by_key(i, |&(item, _)| item).unwrap()].1)
        .collect();
    Ranking { order, ranks }
}

#[inline]
pub(crate) fn sort_by_score(scores: &[f64], items: &mut [u32]) {
    items.sort_unstable_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
}

/// Per-user full rankings of one model over the training candidates
/// (every item not observed in training, held-out items included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankSnapshot {
    epoch: usize,
    n: usize,
    m: usize,
    /// `n × m`, 0 marks a non-candidate.
    rank_of: Vec<u32>,
    order: Vec<u32>,
    offsets: Vec<usize>,
}

impl RankSnapshot {
    /// Ranks every user's training candidates under `model`.
    pub fn build(model: &FactorModel, dataset: &Dataset, epoch: usize) -> Self {
        let orders: Vec<Vec<u32>> = (0..dataset.n() as u32)
            .into_par_iter()
            .map_init(
                || vec![0.0; dataset.m()],
                |logits, u| {
                    model.user_logits(u, logits);
                    let mut items = dataset.candidates(u, None);
                    sort_by_score(logits, &mut items);
                    items
                },
            )
            .collect();
        Self::from_orders(epoch, dataset.m(), orders)
    }

    /// Builds a snapshot from explicit best-first candidate orders.
    pub fn from_orders(epoch: usize, m: usize, orders: Vec<Vec<u32>>) -> Self {
        let n = orders.len();
        let mut rank_of = vec![0u32; n * m];
        let mut order = Vec::with_capacity(orders.iter().map(Vec::len).sum());
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for (u, items) in orders.into_iter().enumerate() {
            for (r, &i) in items.iter().enumerate() {
                let slot = &mut rank_of[u * m + i as usize];
                assert_eq!(*slot, 0, "item {i} listed twice for user {u}");
                *slot = r as u32 + 1;
            }
            order.extend(items);
            offsets.push(order.len());
        }
        Self {
            epoch,
            n,
            m,
            rank_of,
            order,
            offsets,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Rank of `i` for `u`, `None` if `i` is not a candidate.
    #[inline]
    pub fn rank(&self, u: u32, i: u32) -> Option<u32> {
        match self.rank_of[u as usize * self.m + i as usize] {
            0 => None,
            r => Some(r),
        }
    }

    /// Dense rank row of `u` (0 for non-candidates).
    #[inline]
    pub fn rank_row(&self, u: u32) -> &[u32] {
        &self.rank_of[u as usize * self.m..(u as usize + 1) * self.m]
    }

    /// Candidates of `u`, best first.
    #[inline]
    pub fn order(&self, u: u32) -> &[u32] {
        &self.order[self.offsets[u as usize]..self.offsets[u as usize + 1]]
    }

    pub fn num_candidates(&self, u: u32) -> usize {
        self.offsets[u as usize + 1] - self.offsets[u as usize]
    }
}

/// `rank_T − rank_S`; positive when the student ranks `i` higher.
pub fn rank_difference(teacher: &RankSnapshot, student: &RankSnapshot, u: u32, i: u32) -> Result<i64> {
    match (teacher.rank(u, i), student.rank(u, i)) {
        (Some(t), Some(s)) => Ok(t as i64 - s as i64),
        _ => Err(Error::NotCandidate { user: u, item: i }),
    }
}

/// Sum of `|rank_T − rank_S|` over every user's test item, divided by `n·m`.
pub fn average_rank_difference(teacher: &RankSnapshot, student: &RankSnapshot, dataset: &Dataset) -> Result<f64> {
    let mut total = 0u64;
    for u in 0..dataset.n() as u32 {
        total += rank_difference(teacher, student, u, dataset.test_item(u))?.unsigned_abs();
    }
    Ok(total as f64 / (dataset.n() as f64 * dataset.m() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankDiffRecord {
    pub user: u32,
    pub item: u32,
    pub diff: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub rank_s: u32,
    pub rank_t: u32,
}

/// Rank-difference analytics over the test interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiffReport {
    /// One record per test interaction, in user order.
    pub records: Vec<RankDiffRecord>,
    /// The record diffs sorted ascending.
    pub sorted_diffs: Vec<i64>,
    /// Fraction of test interactions with `diff > 0`.
    pub student_win_fraction: f64,
    pub average_rank_difference: f64,
    /// `(rank_S, rank_T)` for every candidate within the top `top_r` of
    /// either model, all users.
    pub scatter: Vec<ScatterPoint>,
    pub top_r: u32,
}

pub const DEFAULT_SCATTER_TOP_R: u32 = 1000;

pub fn rank_diff_report(
    teacher: &RankSnapshot,
    student: &RankSnapshot,
    dataset: &Dataset,
    top_r: u32,
) -> Result<RankDiffReport> {
    let records = (0..dataset.n() as u32)
        .map(|u| {
            let item = dataset.test_item(u);
            rank_difference(teacher, student, u, item).map(|diff| RankDiffRecord { user: u, item, diff })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sorted_diffs: Vec<i64> = records.iter().map(|r| r.diff).collect();
    sorted_diffs.sort_unstable();
    let wins = records.iter().filter(|r| r.diff > 0).count();
    let student_win_fraction = if records.is_empty() {
        0.0
    } else {
        wins as f64 / records.len() as f64
    };

    let mut scatter = Vec::new();
    for u in 0..dataset.n() as u32 {
        let (rt, rs) = (teacher.rank_row(u), student.rank_row(u));
        for (&t, &s) in rt.iter().zip(rs) {
            if t != 0 && s != 0 && t.min(s) <= top_r {
                scatter.push(ScatterPoint { rank_s: s, rank_t: t });
            }
        }
    }

    Ok(RankDiffReport {
        records,
        sorted_diffs,
        student_win_fraction,
        average_rank_difference: average_rank_difference(teacher, student, dataset)?,
        scatter,
        top_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::models::LossKind;
    use proptest::prelude::*;

    fn bias_model(bias: Vec<f64>) -> FactorModel {
        let m = bias.len();
        FactorModel::from_parts(1, vec![0.0], vec![0.0; m], Some(bias), LossKind::Pointwise).unwrap()
    }

    #[test]
    fn sorts_by_logit() {
        let r = full_rank(&bias_model(vec![0.9, 0.1, 0.5]), 0, &[0, 1, 2]);
        assert_eq!(r.order, vec![0, 2, 1]);
        assert_eq!(r.ranks, vec![1, 3, 2]);
    }

    #[test]
    fn ties_follow_item_index() {
        let r = full_rank(&bias_model(vec![0.2; 5]), 0, &[4, 1, 3]);
        assert_eq!(r.order, vec![1, 3, 4]);
        assert_eq!(r.ranks, vec![3, 1, 2]);
    }

    /// Rank of each candidate = 1 + number of candidates that beat it.
    fn pairwise_oracle(scores: &[f64], candidates: &[u32]) -> Vec<u32> {
        candidates
            .iter()
            .map(|&i| {
                1 + candidates
                    .iter()
                    .filter(|&&j| {
                        let (sj, si) = (scores[j as usize], scores[i as usize]);
                        sj > si || (sj == si && j < i)
                    })
                    .count() as u32
            })
            .collect()
    }

    proptest! {
        #[test]
        fn agrees_with_pairwise_oracle(scores in prop::collection::vec(-3i32..3, 1..40), mask in prop::collection::vec(any::<bool>(), 40)) {
            let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 * 0.5).collect();
            let candidates: Vec<u32> = (0..scores.len() as u32).filter(|&i| mask[i as usize]).collect();
            prop_assume!(!candidates.is_empty());
            let r = rank_by_scores(&scores, &candidates);
            prop_assert_eq!(&r.ranks, &pairwise_oracle(&scores, &candidates));
            let mut sorted = r.ranks.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (1..=candidates.len() as u32).collect::<Vec<_>>());
        }

        #[test]
        fn invariant_to_per_user_shift(scores in prop::collection::vec(-50i32..50, 2..30), c in -100.0f64..100.0) {
            let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 / 8.0).collect();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c.round()).collect();
            let cand: Vec<u32> = (0..scores.len() as u32).collect();
            prop_assert_eq!(rank_by_scores(&scores, &cand), rank_by_scores(&shifted, &cand));
        }
    }

    fn toy_dataset() -> Dataset {
        Dataset::from_split(
            10,
            Split {
                train_pos: vec![vec![0, 1], vec![5]],
                val_item: vec![2, 6],
                test_item: vec![3, 7],
            },
        )
        .unwrap()
    }

    #[test]
    fn snapshot_candidates_exclude_observed_items() {
        let ds = Dataset::from_split(
            3,
            Split {
                train_pos: vec![vec![]],
                val_item: vec![0],
                test_item: vec![1],
            },
        )
        .unwrap();
        let snap = RankSnapshot::build(&bias_model(vec![0.0, 1.0, 2.0]), &ds, 7);
        assert_eq!(snap.epoch(), 7);
        assert_eq!(snap.order(0), &[2, 1, 0]);

        let ds = toy_dataset();
        let model = FactorModel::init(2, 10, 3, 1, 0.5, LossKind::Pointwise).unwrap();
        let snap = RankSnapshot::build(&model, &ds, 0);
        assert_eq!(snap.num_candidates(0), 8);
        assert_eq!(snap.rank(0, 0), None);
        assert!(snap.rank(0, 3).is_some() && snap.rank(0, 2).is_some());
        assert_eq!(snap, RankSnapshot::build(&model, &ds, 0));
    }

    #[test]
    fn rank_difference_arithmetic() {
        let ds = toy_dataset();
        let m = FactorModel::init(2, 10, 3, 1, 0.5, LossKind::Pointwise).unwrap();
        let a = RankSnapshot::build(&m, &ds, 0);
        assert_eq!(rank_difference(&a, &a, 0, 3).unwrap(), 0);
        assert_eq!(average_rank_difference(&a, &a, &ds).unwrap(), 0.0);
        assert!(matches!(rank_difference(&a, &a, 0, 1), Err(Error::NotCandidate { .. })));

        let mut t_order: Vec<u32> = (2..102).collect();
        t_order.rotate_left(99);
        let teacher = RankSnapshot::from_orders(0, 102, vec![t_order]);
        let student = RankSnapshot::from_orders(0, 102, vec![(2..102).collect()]);
        // Item 101 is first for the teacher and last (100th) for the student.
        assert_eq!(rank_difference(&student, &teacher, 0, 101).unwrap(), 99);
        assert_eq!(rank_difference(&teacher, &student, 0, 101).unwrap(), -99);
    }

    fn orders_with_test_ranks(ds: &Dataset, ranks: &[u32]) -> Vec<Vec<u32>> {
        (0..ds.n() as u32)
            .map(|u| {
                let mut c = ds.candidates(u, None);
                let t = ds.test_item(u);
                c.retain(|&i| i != t);
                c.insert(ranks[u as usize] as usize - 1, t);
                c
            })
            .collect()
    }

    #[test]
    fn hand_computed_average_and_report() {
        let ds = toy_dataset();
        // Teacher ranks test items 5 and 2; student 2 and 3: diffs +3, -1.
        let teacher = RankSnapshot::from_orders(0, 10, orders_with_test_ranks(&ds, &[5, 2]));
        let student = RankSnapshot::from_orders(0, 10, orders_with_test_ranks(&ds, &[2, 3]));
        let ard = average_rank_difference(&teacher, &student, &ds).unwrap();
        assert_eq!(ard, 0.2);
        assert_eq!(average_rank_difference(&student, &teacher, &ds).unwrap(), ard);

        let report = rank_diff_report(&teacher, &student, &ds, 1000).unwrap();
        assert_eq!(report.sorted_diffs, vec![-1, 3]);
        assert_eq!(report.student_win_fraction, 0.5);
        assert_eq!(report.records.len(), 2);
        // 8 candidates for user 0 and 9 for user 1.
        assert_eq!(report.scatter.len(), 17);

        let same = rank_diff_report(&teacher, &teacher, &ds, 2).unwrap();
        assert_eq!(same.student_win_fraction, 0.0);
        assert!(same.scatter.iter().all(|p| p.rank_s == p.rank_t && p.rank_s <= 2));
    }
}
