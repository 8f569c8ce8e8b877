use serde::{Deserialize, Serialize};

use super::{FactorModel, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Added to the gradient as `l2 · θ` on touched rows only.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        Self {
            lr,
            l2,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            l2: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and sparse (row-wise) moment updates.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    d: usize,
    m_user: Vec<f64>,
    v_user: Vec<f64>,
    m_item: Vec<f64>,
    v_item: Vec<f64>,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

struct Moments<'a> {
    m: &'a mut [f64],
    v: &'a mut [f64],
}

impl Adam {
    pub fn new(model: &FactorModel, cfg: AdamConfig) -> Self {
        let (n, m, d) = (model.n(), model.m(), model.dim());
        Self {
            cfg,
            step: 0,
            d,
            m_user: vec![0.0; n * d],
            v_user: vec![0.0; n * d],
            m_item: vec![0.0; m * d],
            v_item: vec![0.0; m * d],
            m_bias: vec![0.0; m],
            v_bias: vec![0.0; m],
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to the rows touched in `grads`.
    pub fn step(&mut self, model: &mut FactorModel, grads: &Gradients) -> Result<()> {
        if grads.is_empty() {
            return Ok(());
        }
        let bad_user = grads.touched_users().iter().any(|&u| grads.user_grad(u).iter().any(|g| !g.is_finite()));
        let bad_item = grads
            .touched_items()
            .iter()
            .any(|&i| !grads.bias_grad(i).is_finite() || grads.item_grad(i).iter().any(|g| !g.is_finite()));
        if bad_user || bad_item {
            return Err(Error::NonFiniteGradient(if bad_user { "user factors" } else { "item parameters" }));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let cfg = self.cfg;
        let d = self.d;

        for &u in grads.touched_users() {
            let r = u as usize * d..(u as usize + 1) * d;
            let moments = Moments {
                m: &mut self.m_user[r.clone()],
                v: &mut self.v_user[r],
            };
            update_row(&cfg, c1, c2, model.user_row_mut(u), grads.user_grad(u), moments);
        }
        let has_bias = model.has_bias();
        for &i in grads.touched_items() {
            let r = i as usize * d..(i as usize + 1) * d;
            let moments = Moments {
                m: &mut self.m_item[r.clone()],
                v: &mut self.v_item[r],
            };
            update_row(&cfg, c1, c2, model.item_row_mut(i), grads.item_grad(i), moments);
            if has_bias {
                let k = i as usize;
                let bias = &mut model.bias_mut().unwrap()[k..k + 1];
                let moments = Moments {
                    m: &mut self.m_bias[k..k + 1],
                    v: &mut self.v_bias[k..k + 1],
                };
                update_row(&cfg, c1, c2, bias, &[grads.bias_grad(i)], moments);
            }
        }

        let finite = grads.touched_users().iter().all(|&u| model.user_row(u).iter().all(|x| x.is_finite()))
            && grads
                .touched_items()
                .iter()
                .all(|&i| model.bias(i).is_finite() && model.item_row(i).iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFiniteGradient("parameters after update"));
        }
        Ok(())
    }
}

#[inline]
fn update_row(cfg: &AdamConfig, c1: f64, c2: f64, theta: &mut [f64], grad: &[f64], mo: Moments<'_>) {
    for k in 0..theta.len() {
        let g = grad[k] + cfg.l2 * theta[k];
        mo.m[k] = cfg.beta1 * mo.m[k] + (1.0 - cfg.beta1) * g;
        mo.v[k] = cfg.beta2 * mo.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = mo.m[k] / c1;
        let v_hat = mo.v[k] / c2;
        theta[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::super::LossKind;
    use super::*;

    fn model() -> FactorModel {
        FactorModel::init(4, 5, 3, 2, 0.1, LossKind::Pointwise).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut m = model();
        let before = m.clone();
        let mut g = Gradients::for_model(&m);
        g.add_logit_grad(&m, 1, 2, 0.0);
        let mut opt = Adam::new(&m, AdamConfig::new(0.001, 0.0));
        opt.step(&mut m, &g).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias-corrected m̂ = 1, v̂ = 1, so Δ = -lr / (1 + eps).
        let mut m = FactorModel::from_parts(1, vec![1.0], vec![1.0], Some(vec![0.0]), LossKind::Pointwise).unwrap();
        let mut g = Gradients::for_model(&m);
        g.add_logit_grad(&m, 0, 0, 1.0);
        let mut opt = Adam::new(&m, AdamConfig::new(0.001, 0.0));
        opt.step(&mut m, &g).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((m.user_row(0)[0] - 1.0 - expected).abs() < 1e-15);
        assert!((m.bias(0) - expected).abs() < 1e-15);
        assert!((expected + 0.001).abs() < 1e-10);
    }

    #[test]
    fn untouched_rows_do_not_move() {
        let mut m = model();
        let before = m.clone();
        let mut g = Gradients::for_model(&m);
        g.add_logit_grad(&m, 1, 2, 0.7);
        let mut opt = Adam::new(&m, AdamConfig::new(0.01, 0.1));
        opt.step(&mut m, &g).unwrap();
        for u in 0..4 {
            assert_eq!(m.user_row(u) == before.user_row(u), u != 1);
        }
        for i in 0..5 {
            assert_eq!(m.item_row(i) == before.item_row(i), i != 2);
            assert_eq!(m.bias(i) == before.bias(i), i != 2);
        }
    }

    #[test]
    fn identical_inputs_give_identical_parameters() {
        let (mut a, mut b) = (model(), model());
        let mut oa = Adam::new(&a, AdamConfig::new(0.01, 0.01));
        let mut ob = Adam::new(&b, AdamConfig::new(0.01, 0.01));
        for k in 0..5u32 {
            let mut ga = Gradients::for_model(&a);
            ga.add_logit_grad(&a, k % 4, k % 5, 0.3 * k as f64 - 0.5);
            let mut gb = Gradients::for_model(&b);
            gb.add_logit_grad(&b, k % 4, k % 5, 0.3 * k as f64 - 0.5);
            oa.step(&mut a, &ga).unwrap();
            ob.step(&mut b, &gb).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut m = model();
        let mut g = Gradients::for_model(&m);
        g.add_logit_grad(&m, 0, 0, f64::NAN);
        let mut opt = Adam::new(&m, AdamConfig::default());
        assert!(matches!(opt.step(&mut m, &g), Err(Error::NonFiniteGradient(_))));
    }
}
