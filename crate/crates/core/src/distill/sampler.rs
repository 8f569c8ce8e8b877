use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{exp_log_weight, tanh_weight, Direction, DistillConfig, SamplingScheme};
use crate::ranking::RankSnapshot;

/// Number of alias draws per requested item before switching to an exact
/// sequential draw over the remaining mass.
const REJECTION_BUDGET: usize = 32;

#[derive(Debug, Clone, Copy)]
enum WeightFn {
    Tanh,
    Exp,
}

/// Candidate weights of one user for one direction.
struct Weights {
    items: Vec<u32>,
    /// Unnormalized; exp weights are shifted so the largest is 1.
    weights: Vec<f64>,
    /// Unshifted weights, only filled when requested.
    raw: Vec<f64>,
}

fn discrepancy_fn(scheme: SamplingScheme, direction: Direction) -> Option<WeightFn> {
    use Direction::*;
    match (scheme, direction) {
        (SamplingScheme::RankDiscrepancy, TeacherToStudent) => Some(WeightFn::Tanh),
        (SamplingScheme::RankDiscrepancy, StudentToTeacher) => Some(WeightFn::Exp),
        (SamplingScheme::SwappedRankDiscrepancy, TeacherToStudent) => Some(WeightFn::Exp),
        (SamplingScheme::SwappedRankDiscrepancy, StudentToTeacher) => Some(WeightFn::Tanh),
        _ => None,
    }
}

/// Weights over the candidates of `u`, enumerated by ascending item index.
///
/// `teaching` is the snapshot of the model whose predictions are followed,
/// `learning` that of the model being trained. Discrepancy schemes use
/// `rank_learning − rank_teaching`, which is positive when the teaching
/// model ranks the item higher.
fn candidate_weights(
    scheme: SamplingScheme,
    direction: Direction,
    cfg: &DistillConfig,
    teaching: &RankSnapshot,
    learning: Option<&RankSnapshot>,
    u: u32,
    keep_raw: bool,
) -> Weights {
    let trow = teaching.rank_row(u);
    let mut items = Vec::with_capacity(teaching.num_candidates(u));
    let mut weights = Vec::with_capacity(items.capacity());
    let mut raw = Vec::new();

    if let Some(f) = discrepancy_fn(scheme, direction) {
        let lrow = learning
            .expect("rank-discrepancy sampling needs the learning model's snapshot")
            .rank_row(u);
        let eps = match f {
            WeightFn::Tanh => cfg.eps_t,
            WeightFn::Exp => cfg.eps_e,
        };
        for (i, (&rt, &rl)) in trow.iter().zip(lrow).enumerate() {
            if rt == 0 || rl == 0 {
                continue;
            }
            let d = rl as i64 - rt as i64;
            items.push(i as u32);
            weights.push(match f {
                WeightFn::Tanh => tanh_weight(d, eps),
                WeightFn::Exp => exp_log_weight(d, eps),
            });
        }
        if let WeightFn::Exp = f {
            if keep_raw {
                raw = weights.iter().map(|x| x.exp()).collect();
            }
            shift_exp(&mut weights);
        } else if keep_raw {
            raw = weights.clone();
        }
        return Weights { items, weights, raw };
    }

    match scheme {
        SamplingScheme::RankAware => {
            let cutoff = cfg.rank_aware_truncation.unwrap_or(usize::MAX) as u64;
            for (i, &rt) in trow.iter().enumerate() {
                if rt == 0 {
                    continue;
                }
                items.push(i as u32);
                weights.push(if (rt as u64) <= cutoff {
                    -(rt as f64) * cfg.eps_e
                } else {
                    f64::NEG_INFINITY
                });
            }
            if keep_raw {
                raw = weights.iter().map(|x| x.exp()).collect();
            }
            shift_exp(&mut weights);
        }
        SamplingScheme::TopN => {
            for (i, &rt) in trow.iter().enumerate() {
                if rt != 0 {
                    items.push(i as u32);
                    weights.push(if rt as usize <= cfg.samples_per_user { 1.0 } else { 0.0 });
                }
            }
            if keep_raw {
                raw = weights.clone();
            }
        }
        SamplingScheme::Uniform => {
            for (i, &rt) in trow.iter().enumerate() {
                if rt != 0 {
                    items.push(i as u32);
                    weights.push(1.0);
                }
            }
            if keep_raw {
                raw = weights.clone();
            }
        }
        SamplingScheme::RankDiscrepancy | SamplingScheme::SwappedRankDiscrepancy => unreachable!(),
    }
    Weights { items, weights, raw }
}

/// Replaces log-weights by `exp(w − max w)`.
fn shift_exp(logw: &mut [f64]) {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        logw.fill(0.0);
        return;
    }
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
    }
}

/// Draws distillation items for one user.
#[derive(Debug, Clone)]
pub struct UserSampler {
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Empty,
    /// Deterministic selection, best first.
    Fixed(Vec<u32>),
    Uniform(Vec<u32>),
    Weighted {
        items: Vec<u32>,
        probs: Vec<f64>,
        alias: WeightedAliasIndex<f64>,
    },
}

impl UserSampler {
    pub fn build(
        scheme: SamplingScheme,
        direction: Direction,
        cfg: &DistillConfig,
        teaching: &RankSnapshot,
        learning: Option<&RankSnapshot>,
        u: u32,
    ) -> Self {
        if scheme == SamplingScheme::TopN {
            let top = teaching.order(u);
            let k = cfg.samples_per_user.min(top.len());
            let kind = if k == 0 { Kind::Empty } else { Kind::Fixed(top[..k].to_vec()) };
            return Self { kind };
        }
        if scheme == SamplingScheme::Uniform {
            let items: Vec<u32> = (0..teaching.m() as u32).filter(|&i| teaching.rank(u, i).is_some()).collect();
            let kind = if items.is_empty() { Kind::Empty } else { Kind::Uniform(items) };
            return Self { kind };
        }

        let w = candidate_weights(scheme, direction, cfg, teaching, learning, u, false);
        let mut items = Vec::new();
        let mut weights = Vec::new();
        for (&i, &x) in w.items.iter().zip(&w.weights) {
            if x > 0.0 {
                items.push(i);
                weights.push(x);
            }
        }
        if items.is_empty() {
            return Self { kind: Kind::Empty };
        }
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|x| x / total).collect();
        let alias = WeightedAliasIndex::new(weights).expect("positive finite weights");
        Self {
            kind: Kind::Weighted { items, probs, alias },
        }
    }

    /// Number of items that can be drawn.
    pub fn support(&self) -> usize {
        match &self.kind {
            Kind::Empty => 0,
            Kind::Fixed(v) | Kind::Uniform(v) => v.len(),
            Kind::Weighted { items, .. } => items.len(),
        }
    }

    /// Writes up to `n` distinct items into `out`. When the support has at
    /// most `n` items all of them are returned; an empty support yields
    /// nothing.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<u32>) {
        out.clear();
        match &self.kind {
            Kind::Empty => {}
            Kind::Fixed(items) => out.extend(items.iter().take(n)),
            Kind::Uniform(items) => {
                if items.len() <= n {
                    out.extend_from_slice(items);
                    return;
                }
                let mut picked: Vec<usize> = Vec::with_capacity(n);
                while picked.len() < n {
                    let k = rng.random_range(0..items.len());
                    if !picked.contains(&k) {
                        picked.push(k);
                    }
                }
                out.extend(picked.into_iter().map(|k| items[k]));
            }
            Kind::Weighted { items, probs, alias } => {
                if items.len() <= n {
                    out.extend_from_slice(items);
                    return;
                }
                let mut picked: Vec<usize> = Vec::with_capacity(n);
                let mut attempts = 0;
                while picked.len() < n {
                    if attempts < REJECTION_BUDGET * n {
                        attempts += 1;
                        let k = alias.sample(rng);
                        if !picked.contains(&k) {
                            picked.push(k);
                        }
                        continue;
                    }
                    // Exact draw proportional to the remaining mass.
                    let taken: f64 = picked.iter().map(|&k| probs[k]).sum();
                    let mut r = rng.random::<f64>() * (1.0 - taken);
                    let mut choice = None;
                    for (k, &p) in probs.iter().enumerate() {
                        if picked.contains(&k) {
                            continue;
                        }
                        choice = Some(k);
                        if r < p {
                            break;
                        }
                        r -= p;
                    }
                    picked.push(choice.expect("support larger than n"));
                }
                out.extend(picked.into_iter().map(|k| items[k]));
            }
        }
    }
}

/// Samplers for every user in one direction, rebuilt with each snapshot.
#[derive(Debug, Clone)]
pub struct DirectionSampler {
    users: Vec<UserSampler>,
}

impl DirectionSampler {
    pub fn build(
        scheme: SamplingScheme,
        direction: Direction,
        cfg: &DistillConfig,
        teaching: &RankSnapshot,
        learning: Option<&RankSnapshot>,
    ) -> Self {
        let users = (0..teaching.n() as u32)
            .into_par_iter()
            .map(|u| UserSampler::build(scheme, direction, cfg, teaching, learning, u))
            .collect();
        Self { users }
    }

    /// Snapshots are ordered (teacher, student); the teaching side follows
    /// `direction`.
    pub fn for_pair(
        scheme: SamplingScheme,
        direction: Direction,
        cfg: &DistillConfig,
        teacher: &RankSnapshot,
        student: &RankSnapshot,
    ) -> Self {
        let (teaching, learning) = match direction {
            Direction::TeacherToStudent => (teacher, student),
            Direction::StudentToTeacher => (student, teacher),
        };
        Self::build(scheme, direction, cfg, teaching, Some(learning))
    }

    pub fn user(&self, u: u32) -> &UserSampler {
        &self.users[u as usize]
    }

    pub fn draw<R: Rng + ?Sized>(&self, u: u32, n: usize, rng: &mut R, out: &mut Vec<u32>) {
        self.users[u as usize].draw(n, rng, out)
    }
}

/// Draws `n` distillation items for `u` under `cfg.scheme`.
pub fn sample_items<R: Rng + ?Sized>(
    direction: Direction,
    teacher: &RankSnapshot,
    student: &RankSnapshot,
    u: u32,
    n: usize,
    cfg: &DistillConfig,
    rng: &mut R,
) -> Vec<u32> {
    let (teaching, learning) = match direction {
        Direction::TeacherToStudent => (teacher, student),
        Direction::StudentToTeacher => (student, teacher),
    };
    let sampler = UserSampler::build(cfg.scheme, direction, cfg, teaching, Some(learning), u);
    let mut out = Vec::with_capacity(n);
    sampler.draw(n, rng, &mut out);
    out
}

/// Draws `n` items from a single teaching snapshot with a rank-only scheme
/// (`RankAware`, `TopN`, `Uniform`).
pub fn sample_items_baseline<R: Rng + ?Sized>(
    scheme: SamplingScheme,
    teaching: &RankSnapshot,
    u: u32,
    n: usize,
    cfg: &DistillConfig,
    rng: &mut R,
) -> Vec<u32> {
    assert!(
        discrepancy_fn(scheme, Direction::TeacherToStudent).is_none(),
        "{scheme:?} needs both snapshots"
    );
    let cfg = DistillConfig {
        samples_per_user: n,
        ..*cfg
    };
    let sampler = UserSampler::build(scheme, Direction::TeacherToStudent, &cfg, teaching, None, u);
    let mut out = Vec::with_capacity(n);
    sampler.draw(n, rng, &mut out);
    out
}

/// One candidate of a user's sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistRow {
    pub item: u32,
    pub rank_t: u32,
    pub rank_s: u32,
    /// Unnormalized weight.
    pub weight: f64,
    /// Single-draw probability.
    pub probability: f64,
}

/// The normalized single-draw distribution of `scheme` for `u` in
/// `direction`, over all candidates in ascending item order. For `TopN` the
/// top-N items share the mass equally.
pub fn sampling_distribution(
    scheme: SamplingScheme,
    direction: Direction,
    cfg: &DistillConfig,
    teacher: &RankSnapshot,
    student: &RankSnapshot,
    u: u32,
) -> Vec<DistRow> {
    let (teaching, learning) = match direction {
        Direction::TeacherToStudent => (teacher, student),
        Direction::StudentToTeacher => (student, teacher),
    };
    let w = candidate_weights(scheme, direction, cfg, teaching, Some(learning), u, true);
    let total: f64 = w.weights.iter().sum();
    w.items
        .iter()
        .enumerate()
        .map(|(k, &i)| DistRow {
            item: i,
            rank_t: teacher.rank(u, i).unwrap_or(0),
            rank_s: student.rank(u, i).unwrap_or(0),
            weight: w.raw[k],
            probability: if total > 0.0 { w.weights[k] / total } else { 0.0 },
        })
        .collect()
}
