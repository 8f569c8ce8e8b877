//! Matrix-factorization recommenders, their collaborative-filtering losses
//! and a sparse Adam optimizer.

mod adam;
mod grad;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use grad::Gradients;
pub use loss::{cf_loss_pairwise, cf_loss_pointwise, clamp_prob, PROB_CLIP};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which collaborative-filtering objective a model is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Binary cross-entropy on observed (1) and sampled unobserved (0) items.
    Pointwise,
    /// BPR: observed items should outrank sampled unobserved ones.
    Pairwise,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Embedding-table recommender: `z_ui = P[u]·Q[i] + b[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    n: usize,
    m: usize,
    d: usize,
    seed: u64,
    loss_kind: LossKind,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    item_bias: Option<Vec<f64>>,
}

impl FactorModel {
    /// Factors i.i.d. `Normal(0, init_scale²)`, biases zero.
    pub fn init(n: usize, m: usize, d: usize, seed: u64, init_scale: f64, loss_kind: LossKind) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::Config(format!("invalid init scale {init_scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| init_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let user_factors = draw(n * d);
        let item_factors = draw(m * d);
        Ok(Self {
            n,
            m,
            d,
            seed,
            loss_kind,
            user_factors,
            item_factors,
            item_bias: Some(vec![0.0; m]),
        })
    }

    /// Builds a model from explicit parameters.
    pub fn from_parts(
        d: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
        item_bias: Option<Vec<f64>>,
        loss_kind: LossKind,
    ) -> Result<Self> {
        if d == 0 || !user_factors.len().is_multiple_of(d) || !item_factors.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "factor lengths {} / {} not divisible by d={d}",
                user_factors.len(),
                item_factors.len()
            )));
        }
        let n = user_factors.len() / d;
        let m = item_factors.len() / d;
        if item_bias.as_ref().is_some_and(|b| b.len() != m) {
            return Err(Error::Shape("item bias length differs from item count".into()));
        }
        let model = Self {
            n,
            m,
            d,
            seed: 0,
            loss_kind,
            user_factors,
            item_factors,
            item_bias,
        };
        if !model.is_finite() {
            return Err(Error::Shape("parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn without_bias(mut self) -> Self {
        self.item_bias = None;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }
    pub fn has_bias(&self) -> bool {
        self.item_bias.is_some()
    }

    #[inline]
    pub fn user_row(&self, u: u32) -> &[f64] {
        let s = u as usize * self.d;
        &self.user_factors[s..s + self.d]
    }

    #[inline]
    pub fn item_row(&self, i: u32) -> &[f64] {
        let s = i as usize * self.d;
        &self.item_factors[s..s + self.d]
    }

    #[inline]
    pub fn bias(&self, i: u32) -> f64 {
        self.item_bias.as_ref().map_or(0.0, |b| b[i as usize])
    }

    pub(crate) fn user_row_mut(&mut self, u: u32) -> &mut [f64] {
        let s = u as usize * self.d;
        &mut self.user_factors[s..s + self.d]
    }

    pub(crate) fn item_row_mut(&mut self, i: u32) -> &mut [f64] {
        let s = i as usize * self.d;
        &mut self.item_factors[s..s + self.d]
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.item_bias.as_mut()
    }

    #[inline]
    pub fn logit(&self, u: u32, i: u32) -> f64 {
        dot(self.user_row(u), self.item_row(i)) + self.bias(i)
    }

    /// `σ(logit / temperature)`.
    #[inline]
    pub fn predict(&self, u: u32, i: u32, temperature: f64) -> f64 {
        debug_assert!(temperature > 0.0);
        sigmoid(self.logit(u, i) / temperature)
    }

    /// Logits of `u` for every item, written into `out` (length `m`).
    pub fn user_logits(&self, u: u32, out: &mut [f64]) {
        let p = self.user_row(u);
        for (i, (q, z)) in self.item_factors.chunks_exact(self.d).zip(out.iter_mut()).enumerate() {
            *z = dot(p, q) + self.bias(i as u32);
        }
    }

    /// `n·d + m·d (+ m)`.
    pub fn parameter_count(&self) -> usize {
        (self.n + self.m) * self.d + if self.has_bias() { self.m } else { 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.user_factors.iter().all(|x| x.is_finite())
            && self.item_factors.iter().all(|x| x.is_finite())
            && self.item_bias.iter().flatten().all(|x| x.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: Checkpoint::VERSION,
            n: self.n,
            m: self.m,
            d: self.d,
            seed: self.seed,
            loss_kind: self.loss_kind,
            user_factors: self.user_factors.clone(),
            item_factors: self.item_factors.clone(),
            item_bias: self.item_bias.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != Checkpoint::VERSION {
            return Err(Error::Shape(format!("unsupported checkpoint version {}", c.version)));
        }
        let mut model = Self::from_parts(c.d, c.user_factors, c.item_factors, c.item_bias, c.loss_kind)?;
        if model.n != c.n || model.m != c.m {
            return Err(Error::Shape("checkpoint header disagrees with parameter arrays".into()));
        }
        model.seed = c.seed;
        Ok(model)
    }
}

/// Serialized form of a [`FactorModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    pub item_bias: Option<Vec<f64>>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;
}
