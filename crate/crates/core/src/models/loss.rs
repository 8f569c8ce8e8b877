use super::{sigmoid, FactorModel, Gradients};

/// Probabilities are clamped to `[PROB_CLIP, 1 - PROB_CLIP]` before taking
/// logarithms.
pub const PROB_CLIP: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Binary cross-entropy with label 1 on `pos` and label 0 on `neg`.
/// Gradients are accumulated into `grads`; the returned value is the loss.
pub fn cf_loss_pointwise(model: &FactorModel, u: u32, pos: &[u32], neg: &[u32], grads: &mut Gradients) -> f64 {
    let mut loss = 0.0;
    for &i in pos {
        let p = sigmoid(model.logit(u, i));
        loss -= clamp_prob(p).ln();
        grads.add_logit_grad(model, u, i, p - 1.0);
    }
    for &j in neg {
        let p = sigmoid(model.logit(u, j));
        loss -= (1.0 - clamp_prob(p)).ln();
        grads.add_logit_grad(model, u, j, p);
    }
    loss
}

/// BPR loss `-ln σ(z_ui - z_uj)`.
pub fn cf_loss_pairwise(model: &FactorModel, u: u32, pos: u32, neg: u32, grads: &mut Gradients) -> f64 {
    let delta = model.logit(u, pos) - model.logit(u, neg);
    let s = sigmoid(delta);
    let dz = s - 1.0;
    grads.add_logit_grad(model, u, pos, dz);
    grads.add_logit_grad(model, u, neg, -dz);
    -clamp_prob(s).ln()
}

#[cfg(test)]
mod tests {
    use super::super::LossKind;
    use super::*;
    use crate::testutil::{assert_grad_close, central_difference, flat_gradient};

    fn zero_model(n: usize, m: usize) -> FactorModel {
        FactorModel::init(n, m, 3, 0, 0.0, LossKind::Pointwise).unwrap()
    }

    #[test]
    fn pointwise_at_zero_logits_is_two_ln2() {
        let model = zero_model(1, 2);
        let mut g = Gradients::for_model(&model);
        let loss = cf_loss_pointwise(&model, 0, &[0], &[1], &mut g);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn pointwise_vanishes_under_separation() {
        let model = FactorModel::from_parts(1, vec![1.0], vec![1.0, 1.0], Some(vec![15.0, -17.0]), LossKind::Pointwise)
            .unwrap();
        let mut g = Gradients::for_model(&model);
        let loss = cf_loss_pointwise(&model, 0, &[0], &[1], &mut g);
        assert!(loss < 1e-6 && loss > 0.0);
    }

    #[test]
    fn pairwise_equal_logits_is_ln2_and_antisymmetric() {
        let model = zero_model(1, 2);
        let mut g = Gradients::for_model(&model);
        assert!((cf_loss_pairwise(&model, 0, 0, 1, &mut g) - std::f64::consts::LN_2).abs() < 1e-12);

        let model = FactorModel::from_parts(1, vec![1.0], vec![0.3, -0.4], None, LossKind::Pairwise).unwrap();
        let mut g = Gradients::for_model(&model);
        let delta = 0.7f64;
        let fwd = cf_loss_pairwise(&model, 0, 0, 1, &mut g);
        let back = cf_loss_pairwise(&model, 0, 1, 0, &mut g);
        assert!((fwd + sigmoid(delta).ln()).abs() < 1e-12);
        assert!((back + sigmoid(-delta).ln()).abs() < 1e-12);
    }

    #[test]
    fn losses_are_finite_for_extreme_parameters() {
        let model = FactorModel::from_parts(1, vec![1e6], vec![1e6, -1e6], Some(vec![0.0, 0.0]), LossKind::Pointwise)
            .unwrap();
        let mut g = Gradients::for_model(&model);
        assert!(cf_loss_pointwise(&model, 0, &[1], &[0], &mut g).is_finite());
        assert!(cf_loss_pairwise(&model, 0, 1, 0, &mut g).is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let model = FactorModel::init(3, 6, 8, seed, 0.5, LossKind::Pointwise).unwrap();
            let f = |m: &FactorModel| {
                let mut g = Gradients::for_model(m);
                cf_loss_pointwise(m, 1, &[0, 2], &[3, 5], &mut g)
            };
            let mut g = Gradients::for_model(&model);
            cf_loss_pointwise(&model, 1, &[0, 2], &[3, 5], &mut g);
            let analytic = flat_gradient(&model, &g);
            let numeric = central_difference(&model, 1e-4, f);
            assert_grad_close(&analytic, &numeric, 1e-4);

            let f = |m: &FactorModel| {
                let mut g = Gradients::for_model(m);
                cf_loss_pairwise(m, 2, 4, 1, &mut g)
            };
            let mut g = Gradients::for_model(&model);
            cf_loss_pairwise(&model, 2, 4, 1, &mut g);
            assert_grad_close(&flat_gradient(&model, &g), &central_difference(&model, 1e-4, f), 1e-4);
        }
    }
}
