use crate::models::{clamp_prob, sigmoid, FactorModel, Gradients};

/// Binary distillation loss of `learner` toward `target` on `items`:
/// `Σ_j −[q_j ln p_j + (1 − q_j) ln(1 − p_j)]` with `p = σ(z_learner/T)` and
/// `q = σ(z_target/T)`.
///
/// The target's predictions are constants. Gradients, scaled by `weight`,
/// are accumulated for the learner only; the returned loss is unweighted.
pub fn bd_loss(
    learner: &FactorModel,
    target: &FactorModel,
    u: u32,
    items: &[u32],
    temperature: f64,
    weight: f64,
    grads: &mut Gradients,
) -> f64 {
    let mut loss = 0.0;
    for &j in items {
        let p = sigmoid(learner.logit(u, j) / temperature);
        let q = sigmoid(target.logit(u, j) / temperature);
        let pc = clamp_prob(p);
        loss -= q * pc.ln() + (1.0 - q) * (1.0 - pc).ln();
        if weight != 0.0 {
            grads.add_logit_grad(learner, u, j, weight * (p - q) / temperature);
        }
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LossKind;
    use crate::testutil::{assert_grad_close, central_difference, flat_gradient};

    fn single(z: f64) -> FactorModel {
        FactorModel::from_parts(1, vec![1.0], vec![0.0], Some(vec![z]), LossKind::Pointwise).unwrap()
    }

    #[test]
    fn zero_logits_cost_ln2_per_item() {
        let (a, b) = (single(0.0), single(0.0));
        let mut g = Gradients::for_model(&a);
        let loss = bd_loss(&a, &b, 0, &[0], 3.0, 1.0, &mut g);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.bias_grad(0), 0.0);
    }

    #[test]
    fn hand_evaluated_cross_entropy() {
        // p = σ(1), q = σ(2) at T = 1.
        let (a, b) = (single(1.0), single(2.0));
        let mut g = Gradients::for_model(&a);
        let loss = bd_loss(&a, &b, 0, &[0], 1.0, 1.0, &mut g);
        let (p, q) = (sigmoid(1.0), sigmoid(2.0));
        let expected = -(q * p.ln() + (1.0 - q) * (1.0 - p).ln());
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.432465).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn equal_predictions_give_entropy_and_zero_gradient() {
        let (a, b) = (single(0.8), single(0.8));
        let mut g = Gradients::for_model(&a);
        let loss = bd_loss(&a, &b, 0, &[0], 2.0, 1.0, &mut g);
        let q = sigmoid(0.4);
        let entropy = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
        assert!((loss - entropy).abs() < 1e-12);
        assert_eq!(g.max_abs(), 0.0);
        for z in [-1.0, 0.0, 0.5, 2.0] {
            let mut g = Gradients::for_model(&a);
            assert!(bd_loss(&single(z), &b, 0, &[0], 2.0, 1.0, &mut g) >= entropy - 1e-12);
        }
    }

    #[test]
    fn target_is_not_touched_and_gradient_is_scaled() {
        let learner = FactorModel::init(2, 5, 4, 1, 0.5, LossKind::Pointwise).unwrap();
        let target = FactorModel::init(2, 5, 4, 2, 0.5, LossKind::Pointwise).unwrap();
        let mut g1 = Gradients::for_model(&learner);
        let mut g2 = Gradients::for_model(&learner);
        bd_loss(&learner, &target, 1, &[0, 3], 2.0, 1.0, &mut g1);
        bd_loss(&learner, &target, 1, &[0, 3], 2.0, 0.5, &mut g2);
        for (a, b) in flat_gradient(&learner, &g1).iter().zip(flat_gradient(&learner, &g2)) {
            assert!((a * 0.5 - b).abs() < 1e-15);
        }
        assert_eq!(g1.touched_users(), &[1]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let learner = FactorModel::init(3, 6, 8, seed, 0.6, LossKind::Pointwise).unwrap();
            let target = FactorModel::init(3, 6, 8, seed + 100, 0.6, LossKind::Pointwise).unwrap();
            let items = [0, 2, 5];
            let f = |m: &FactorModel| {
                let mut g = Gradients::for_model(m);
                bd_loss(m, &target, 1, &items, 2.0, 1.0, &mut g)
            };
            let mut g = Gradients::for_model(&learner);
            bd_loss(&learner, &target, 1, &items, 2.0, 1.0, &mut g);
            assert_grad_close(&flat_gradient(&learner, &g), &central_difference(&learner, 1e-4, f), 1e-4);
        }
    }
}
