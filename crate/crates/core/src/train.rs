//! Joint teacher/student training: warm-up, periodic snapshot refresh and
//! interleaved updates combining the collaborative-filtering and
//! distillation losses. Also covers CF-only training and the
//! frozen-teacher distillation baseline, all through one [`Trainer`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distill::{bd_loss, Direction, DirectionSampler, DistillConfig};
use crate::error::{Error, Result};
use crate::eval::{held_out_ranks, hit, ndcg, HeldOut};
use crate::models::{cf_loss_pairwise, cf_loss_pointwise, Adam, AdamConfig, FactorModel, Gradients, LossKind};
use crate::ranking::{average_rank_difference, RankSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub teacher_init: u64,
    pub student_init: u64,
    /// Distillation draws; each direction owns its own stream.
    pub sampling: u64,
    /// Epoch shuffles and CF negatives; each model owns its own stream.
    pub negatives: u64,
}

impl Seeds {
    /// Distinct, reproducible seeds derived from one run seed.
    pub fn from_run(seed: u64) -> Self {
        Self {
            teacher_init: seed.wrapping_mul(4).wrapping_add(1),
            student_init: seed.wrapping_mul(4).wrapping_add(2),
            sampling: seed.wrapping_mul(4).wrapping_add(3),
            negatives: seed.wrapping_mul(4).wrapping_add(4),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_run(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total epochs, warm-up included.
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Epochs between snapshot rebuilds once distillation starts.
    pub snapshot_period: usize,
    pub batch_size: usize,
    pub lr_teacher: f64,
    pub lr_student: f64,
    pub l2: f64,
    pub cf_negatives: usize,
    pub teacher_dim: usize,
    pub student_dim: usize,
    pub loss_kind: LossKind,
    pub init_scale: f64,
    /// Use distillation draws as extra CF negatives in the same step.
    pub reuse_samples_as_negatives: bool,
    /// Cut-off of the per-epoch validation H@K / N@K.
    pub val_k: usize,
    /// Return the best-validation checkpoint instead of the last epoch.
    pub select_best: bool,
    pub distill: DistillConfig,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            warmup_epochs: 5,
            snapshot_period: 10,
            batch_size: 128,
            lr_teacher: 1e-3,
            lr_student: 1e-3,
            l2: 0.0,
            cf_negatives: 1,
            teacher_dim: 50,
            student_dim: 5,
            loss_kind: LossKind::Pointwise,
            init_scale: 0.01,
            reuse_samples_as_negatives: true,
            val_k: 50,
            select_best: true,
            distill: DistillConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if self.warmup_epochs >= self.epochs {
            return bad(format!(
                "warmup_epochs ({}) must be less than epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.snapshot_period == 0 || self.batch_size == 0 || self.cf_negatives == 0 {
            return bad("snapshot_period, batch_size and cf_negatives must be at least 1".into());
        }
        if self.student_dim == 0 || self.student_dim > self.teacher_dim {
            return bad(format!(
                "need 1 <= student_dim ({}) <= teacher_dim ({})",
                self.student_dim, self.teacher_dim
            ));
        }
        if !(self.lr_teacher > 0.0 && self.lr_student > 0.0 && self.l2 >= 0.0) {
            return bad("learning rates must be positive and l2 non-negative".into());
        }
        if self.val_k == 0 {
            return bad("val_k must be at least 1".into());
        }
        self.distill.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    fn neg_stream(self) -> u64 {
        match self {
            Role::Teacher => 1,
            Role::Student => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Warmup,
    Distill,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelEpochStats {
    /// Mean CF loss per training interaction.
    pub cf_loss: f64,
    /// Mean distillation loss per training interaction (0 when inactive).
    pub bd_loss: f64,
    pub val_hit: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub teacher: Option<ModelEpochStats>,
    pub student: Option<ModelEpochStats>,
    /// Set when snapshots were rebuilt at the start of this epoch.
    pub snapshot_rebuilt: bool,
    /// Epoch of the snapshots used for this epoch's draws.
    pub snapshot_epoch: Option<usize>,
    /// Average rank difference of freshly rebuilt snapshots.
    pub avg_rank_difference: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_teacher_epoch: Option<usize>,
    pub best_student_epoch: Option<usize>,
    /// Average rank difference of the last-epoch teacher and student.
    pub final_avg_rank_difference: Option<f64>,
}

impl TrainLog {
    /// Average rank difference of the first snapshot built after warm-up.
    pub fn warmup_end_avg_rank_difference(&self) -> Option<f64> {
        self.epochs.iter().find_map(|e| e.avg_rank_difference)
    }

    pub fn snapshot_epochs(&self) -> Vec<usize> {
        self.epochs.iter().filter(|e| e.snapshot_rebuilt).map(|e| e.epoch).collect()
    }
}

/// `k` distinct items outside `u`'s training positives, by rejection.
pub fn sample_cf_negatives<R: Rng + ?Sized>(dataset: &Dataset, u: u32, k: usize, rng: &mut R, out: &mut Vec<u32>) {
    out.clear();
    let m = dataset.m() as u32;
    debug_assert!(dataset.m() - dataset.train_items(u).len() >= k);
    while out.len() < k {
        let j = rng.random_range(0..m);
        if !dataset.is_train(u, j) && !out.contains(&j) {
            out.push(j);
        }
    }
}

struct Learner {
    role: Role,
    model: FactorModel,
    opt: Adam,
    grads: Gradients,
    neg_rng: ChaCha8Rng,
    best: Option<(FactorModel, (f64, f64), usize)>,
    epoch_cf: f64,
    epoch_bd: f64,
}

impl Learner {
    fn new(role: Role, dataset: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let (dim, seed) = match role {
            Role::Teacher => (cfg.teacher_dim, cfg.seeds.teacher_init),
            Role::Student => (cfg.student_dim, cfg.seeds.student_init),
        };
        let model = FactorModel::init(dataset.n(), dataset.m(), dim, seed, cfg.init_scale, cfg.loss_kind)?;
        Ok(Self::from_model(role, model, cfg))
    }

    fn from_model(role: Role, model: FactorModel, cfg: &TrainConfig) -> Self {
        let lr = match role {
            Role::Teacher => cfg.lr_teacher,
            Role::Student => cfg.lr_student,
        };
        let mut neg_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.negatives);
        neg_rng.set_stream(role.neg_stream());
        Self {
            role,
            opt: Adam::new(&model, AdamConfig::new(lr, cfg.l2)),
            grads: Gradients::for_model(&model),
            model,
            neg_rng,
            best: None,
            epoch_cf: 0.0,
            epoch_bd: 0.0,
        }
    }

    fn cf_step(&mut self, dataset: &Dataset, cfg: &TrainConfig, u: u32, i: u32, negs: &mut Vec<u32>, extra: &[u32]) -> f64 {
        sample_cf_negatives(dataset, u, cfg.cf_negatives, &mut self.neg_rng, negs);
        if cfg.reuse_samples_as_negatives {
            negs.extend_from_slice(extra);
        }
        match self.model.loss_kind() {
            LossKind::Pointwise => cf_loss_pointwise(&self.model, u, &[i], negs, &mut self.grads),
            LossKind::Pairwise => negs
                .iter()
                .map(|&j| cf_loss_pairwise(&self.model, u, i, j, &mut self.grads))
                .sum(),
        }
    }

    fn apply(&mut self, epoch: usize, batch: usize) -> Result<()> {
        let res = self.opt.step(&mut self.model, &self.grads);
        self.grads.clear();
        res.map_err(|e| Error::Diverged {
            what: format!("{:?} update ({e})", self.role),
            epoch,
            batch,
        })
    }

    fn validate(&mut self, dataset: &Dataset, k: usize, epoch: usize, n_pairs: usize) -> ModelEpochStats {
        let ranks = held_out_ranks(&self.model, dataset, HeldOut::Validation);
        let n = ranks.len().max(1) as f64;
        let val_hit = ranks.iter().map(|&r| hit(r, k)).sum::<f64>() / n;
        let val_ndcg = ranks.iter().map(|&r| ndcg(r, k)).sum::<f64>() / n;
        let score = (val_hit, val_ndcg);
        if self.best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            self.best = Some((self.model.clone(), score, epoch));
        }
        let denom = n_pairs.max(1) as f64;
        let stats = ModelEpochStats {
            cf_loss: self.epoch_cf / denom,
            bd_loss: self.epoch_bd / denom,
            val_hit,
            val_ndcg,
        };
        self.epoch_cf = 0.0;
        self.epoch_bd = 0.0;
        stats
    }

    fn into_result(self, select_best: bool) -> (FactorModel, Option<usize>) {
        match (select_best, self.best) {
            (true, Some((m, _, e))) => (m, Some(e)),
            (_, best) => (self.model, best.map(|(_, _, e)| e)),
        }
    }
}

enum Side {
    Learning(Box<Learner>),
    Frozen(FactorModel),
    Absent,
}

impl Side {
    fn model(&self) -> Option<&FactorModel> {
        match self {
            Side::Learning(l) => Some(&l.model),
            Side::Frozen(m) => Some(m),
            Side::Absent => None,
        }
    }

    fn learner(&mut self) -> Option<&mut Learner> {
        match self {
            Side::Learning(l) => Some(l),
            _ => None,
        }
    }

    fn is_learning(&self) -> bool {
        matches!(self, Side::Learning(_))
    }
}

/// Epoch-by-epoch driver for all training modes.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    cfg: TrainConfig,
    teacher: Side,
    student: Side,
    epoch: usize,
    pairs: Vec<(u32, u32)>,
    shuffle_rng: ChaCha8Rng,
    rng_ts: ChaCha8Rng,
    rng_st: ChaCha8Rng,
    snapshots: Option<(RankSnapshot, RankSnapshot)>,
    sampler_ts: Option<DirectionSampler>,
    sampler_st: Option<DirectionSampler>,
    log: TrainLog,
}

/// Result of a training run. Models are the best-validation checkpoints
/// unless `select_best` is off.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub teacher: Option<FactorModel>,
    pub student: Option<FactorModel>,
    pub log: TrainLog,
}

impl<'a> Trainer<'a> {
    fn with_sides(dataset: &'a Dataset, cfg: TrainConfig, teacher: Side, student: Side) -> Result<Self> {
        cfg.validate()?;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.negatives);
        shuffle_rng.set_stream(0);
        let mut rng_ts = ChaCha8Rng::seed_from_u64(cfg.seeds.sampling);
        rng_ts.set_stream(1);
        let mut rng_st = ChaCha8Rng::seed_from_u64(cfg.seeds.sampling);
        rng_st.set_stream(2);
        Ok(Self {
            dataset,
            cfg,
            teacher,
            student,
            epoch: 0,
            pairs: dataset.train_pairs(),
            shuffle_rng,
            rng_ts,
            rng_st,
            snapshots: None,
            sampler_ts: None,
            sampler_st: None,
            log: TrainLog::default(),
        })
    }

    /// Teacher and student trained jointly.
    pub fn bidirectional(dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        let t = Learner::new(Role::Teacher, dataset, &cfg)?;
        let s = Learner::new(Role::Student, dataset, &cfg)?;
        Self::with_sides(dataset, cfg, Side::Learning(Box::new(t)), Side::Learning(Box::new(s)))
    }

    /// One model with the CF loss only.
    pub fn cf_only(dataset: &'a Dataset, cfg: TrainConfig, role: Role) -> Result<Self> {
        let learner = Side::Learning(Box::new(Learner::new(role, dataset, &cfg)?));
        match role {
            Role::Teacher => Self::with_sides(dataset, cfg, learner, Side::Absent),
            Role::Student => Self::with_sides(dataset, cfg, Side::Absent, learner),
        }
    }

    /// Student distilled from a fixed teacher with `cfg.distill.scheme`.
    pub fn frozen_teacher(dataset: &'a Dataset, cfg: TrainConfig, teacher: FactorModel) -> Result<Self> {
        if teacher.n() != dataset.n() || teacher.m() != dataset.m() {
            return Err(Error::Shape("teacher checkpoint does not match the dataset".into()));
        }
        let s = Learner::new(Role::Student, dataset, &cfg)?;
        Self::with_sides(dataset, cfg, Side::Frozen(teacher), Side::Learning(Box::new(s)))
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn teacher(&self) -> Option<&FactorModel> {
        self.teacher.model()
    }

    pub fn student(&self) -> Option<&FactorModel> {
        self.student.model()
    }

    pub fn snapshots(&self) -> Option<&(RankSnapshot, RankSnapshot)> {
        self.snapshots.as_ref()
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    fn direction_active(&self, dir: Direction) -> bool {
        let (learner, teaching) = match dir {
            Direction::TeacherToStudent => (&self.student, &self.teacher),
            Direction::StudentToTeacher => (&self.teacher, &self.student),
        };
        learner.is_learning() && teaching.model().is_some() && self.cfg.distill.lambda(dir) > 0.0
    }

    fn rebuild_snapshots(&mut self) -> Result<f64> {
        let (t, s) = (self.teacher.model().unwrap(), self.student.model().unwrap());
        let st = RankSnapshot::build(t, self.dataset, self.epoch);
        let ss = RankSnapshot::build(s, self.dataset, self.epoch);
        let scheme = self.cfg.distill.scheme;
        let dc = &self.cfg.distill;
        self.sampler_ts = self
            .direction_active(Direction::TeacherToStudent)
            .then(|| DirectionSampler::for_pair(scheme, Direction::TeacherToStudent, dc, &st, &ss));
        self.sampler_st = self
            .direction_active(Direction::StudentToTeacher)
            .then(|| DirectionSampler::for_pair(scheme, Direction::StudentToTeacher, dc, &st, &ss));
        let ard = average_rank_difference(&st, &ss, self.dataset)?;
        self.snapshots = Some((st, ss));
        Ok(ard)
    }

    /// Runs one epoch and returns its record.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        if self.is_done() {
            return Err(Error::Config("all epochs already ran".into()));
        }
        let start = Instant::now();
        let epoch = self.epoch;
        let cfg = self.cfg;
        let phase = if epoch < cfg.warmup_epochs { Phase::Warmup } else { Phase::Distill };
        let distilling = phase == Phase::Distill
            && (self.direction_active(Direction::TeacherToStudent) || self.direction_active(Direction::StudentToTeacher));

        let mut rebuilt = false;
        let mut ard = None;
        if distilling && (epoch - cfg.warmup_epochs).is_multiple_of(cfg.snapshot_period) {
            ard = Some(self.rebuild_snapshots()?);
            rebuilt = true;
        }
        let use_ts = distilling && self.sampler_ts.is_some();
        let use_st = distilling && self.sampler_st.is_some();

        self.pairs.shuffle(&mut self.shuffle_rng);
        let pairs = std::mem::take(&mut self.pairs);
        let n_samples = cfg.distill.samples_per_user;
        let temp = cfg.distill.temperature;
        let mut negs = Vec::with_capacity(cfg.cf_negatives + n_samples);
        let mut drawn = Vec::with_capacity(n_samples);
        let mut result = Ok(());

        for (b, batch) in pairs.chunks(cfg.batch_size).enumerate() {
            // Teacher first; the student then sees the updated teacher.
            if let Some(t) = self.teacher.learner() {
                for &(u, i) in batch {
                    drawn.clear();
                    if use_st {
                        self.sampler_st.as_ref().unwrap().draw(u, n_samples, &mut self.rng_st, &mut drawn);
                    }
                    t.epoch_cf += t.cf_step(self.dataset, &cfg, u, i, &mut negs, &drawn);
                    if use_st && !drawn.is_empty() {
                        let target = self.student.model().unwrap();
                        t.epoch_bd += bd_loss(&t.model, target, u, &drawn, temp, cfg.distill.lambda_st, &mut t.grads);
                    }
                }
                if let Err(e) = t.apply(epoch, b) {
                    result = Err(e);
                    break;
                }
            }
            if let Some(s) = self.student.learner() {
                for &(u, i) in batch {
                    drawn.clear();
                    if use_ts {
                        self.sampler_ts.as_ref().unwrap().draw(u, n_samples, &mut self.rng_ts, &mut drawn);
                    }
                    s.epoch_cf += s.cf_step(self.dataset, &cfg, u, i, &mut negs, &drawn);
                    if use_ts && !drawn.is_empty() {
                        let target = self.teacher.model().unwrap();
                        s.epoch_bd += bd_loss(&s.model, target, u, &drawn, temp, cfg.distill.lambda_ts, &mut s.grads);
                    }
                }
                if let Err(e) = s.apply(epoch, b) {
                    result = Err(e);
                    break;
                }
            }
        }
        let n_pairs = pairs.len();
        self.pairs = pairs;
        result?;

        let mut stats = [None, None];
        for (slot, side) in stats.iter_mut().zip([&mut self.teacher, &mut self.student]) {
            if let Some(l) = side.learner() {
                let st = l.validate(self.dataset, cfg.val_k, epoch, n_pairs);
                if !(st.cf_loss.is_finite() && st.bd_loss.is_finite()) {
                    return Err(Error::Diverged {
                        what: format!("{:?} loss", l.role),
                        epoch,
                        batch: n_pairs.div_ceil(cfg.batch_size),
                    });
                }
                *slot = Some(st);
            }
        }

        self.log.epochs.push(EpochRecord {
            epoch,
            phase,
            teacher: stats[0],
            student: stats[1],
            snapshot_rebuilt: rebuilt,
            snapshot_epoch: distilling.then(|| self.snapshots.as_ref().map(|s| s.0.epoch())).flatten(),
            avg_rank_difference: ard,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        self.epoch += 1;
        Ok(self.log.epochs.last().unwrap())
    }

    /// Runs the remaining epochs.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.is_done() {
            let rec = self.run_epoch()?;
            log::debug!("{}", serde_json::to_string(rec).unwrap_or_default());
        }
        Ok(self.finish())
    }

    /// Stops training and returns the selected models.
    pub fn finish(mut self) -> TrainOutcome {
        if let (Some(t), Some(s)) = (self.teacher.model(), self.student.model()) {
            let st = RankSnapshot::build(t, self.dataset, self.epoch);
            let ss = RankSnapshot::build(s, self.dataset, self.epoch);
            self.log.final_avg_rank_difference = average_rank_difference(&st, &ss, self.dataset).ok();
        }
        let select = self.cfg.select_best;
        let take = |side: Side, best_epoch: &mut Option<usize>| match side {
            Side::Learning(l) => {
                let (m, e) = l.into_result(select);
                *best_epoch = e;
                Some(m)
            }
            _ => None,
        };
        let mut log = self.log;
        let teacher = take(self.teacher, &mut log.best_teacher_epoch);
        let student = take(self.student, &mut log.best_student_epoch);
        TrainOutcome { teacher, student, log }
    }
}

/// Trains teacher and student jointly with bidirectional distillation.
pub fn train_bd(dataset: &Dataset, cfg: TrainConfig) -> Result<TrainOutcome> {
    Trainer::bidirectional(dataset, cfg)?.run()
}

/// Trains one model with the CF loss only, using the same seed streams as
/// the corresponding side of [`train_bd`].
pub fn train_cf(dataset: &Dataset, cfg: TrainConfig, role: Role) -> Result<TrainOutcome> {
    Trainer::cf_only(dataset, cfg, role)?.run()
}

/// Unidirectional distillation from a frozen, pre-trained teacher.
pub fn train_baseline_kd(dataset: &Dataset, cfg: TrainConfig, teacher: FactorModel) -> Result<TrainOutcome> {
    Trainer::frozen_teacher(dataset, cfg, teacher)?.run()
}
