//! Training losses and their exact parameter gradients.
//!
//! Every function returns `(loss, gradient)` where the gradient is laid out
//! like the network's flat parameters. Losses are means over the batch.

use ndarray::{Array2, ArrayView2};

use crate::nn::{log_softmax_rows, Mlp};

use super::replay::TransitionBatch;

/// `r + gamma * max_a Q_target(s', a)`, or `r` for terminal transitions.
pub fn td_targets(target: &Mlp, batch: &TransitionBatch, gamma: f64) -> Vec<f64> {
    let next_q = target.forward(batch.next_states.view()).output;
    batch
        .rewards
        .iter()
        .zip(&batch.terminals)
        .zip(next_q.rows())
        .map(|((&r, &terminal), q)| {
            if terminal {
                r
            } else {
                r + gamma * q.fold(f64::NEG_INFINITY, |m, &x| m.max(x))
            }
        })
        .collect()
}

/// Mean squared TD error of `online` against fixed `targets`.
pub fn td_loss(online: &Mlp, batch: &TransitionBatch, targets: &[f64]) -> (f64, Vec<f64>) {
    let pass = online.forward(batch.states.view());
    let n = targets.len() as f64;
    let mut grad_out = Array2::zeros(pass.logits.dim());
    let mut loss = 0.0;
    for (i, (&a, &y)) in batch.actions.iter().zip(targets).enumerate() {
        let err = pass.output[[i, a]] - y;
        loss += err * err;
        grad_out[[i, a]] = 2.0 * err / n;
    }
    (loss / n, online.backward(&pass, grad_out.view()))
}

/// Entropy of each row of a log-probability matrix.
fn row_entropies(log_probs: &Array2<f64>) -> Vec<f64> {
    log_probs
        .rows()
        .into_iter()
        .map(|row| -row.iter().map(|&lp| lp.exp() * lp).sum::<f64>())
        .collect()
}

/// Adds `-coef * mean(H)` to the loss and its gradient to `grad_logits`.
fn add_entropy_bonus(log_probs: &Array2<f64>, coef: f64, grad_logits: &mut Array2<f64>) -> f64 {
    if coef == 0.0 {
        return 0.0;
    }
    let n = log_probs.nrows() as f64;
    let entropies = row_entropies(log_probs);
    for ((row, mut g), &h) in log_probs.rows().into_iter().zip(grad_logits.rows_mut()).zip(&entropies) {
        for (gj, &lp) in g.iter_mut().zip(row) {
            // dH/dz_j = -p_j (log p_j + H)
            *gj += coef / n * lp.exp() * (lp + h);
        }
    }
    -coef * entropies.iter().sum::<f64>() / n
}

/// Vanilla policy-gradient loss `-mean(A_n log pi(a_n|s_n)) - c * mean(H)`.
/// Advantages are constants.
pub fn policy_gradient_loss(
    actor: &Mlp,
    states: ArrayView2<'_, f64>,
    actions: &[usize],
    advantages: &[f64],
    entropy_coef: f64,
) -> (f64, Vec<f64>) {
    let pass = actor.forward(states);
    let log_probs = log_softmax_rows(pass.logits.view());
    let n = actions.len() as f64;
    let mut grad = Array2::zeros(log_probs.dim());
    let mut loss = 0.0;
    for (i, (&a, &adv)) in actions.iter().zip(advantages).enumerate() {
        loss -= adv * log_probs[[i, a]];
        for j in 0..log_probs.ncols() {
            let indicator = if j == a { 1.0 } else { 0.0 };
            grad[[i, j]] = -adv * (indicator - log_probs[[i, j]].exp()) / n;
        }
    }
    loss /= n;
    loss += add_entropy_bonus(&log_probs, entropy_coef, &mut grad);
    (loss, actor.backward(&pass, grad.view()))
}

/// `coef * mean((R_n - V(s_n))^2)`.
pub fn value_loss(
    critic: &Mlp,
    states: ArrayView2<'_, f64>,
    returns: &[f64],
    coef: f64,
) -> (f64, Vec<f64>) {
    let pass = critic.forward(states);
    let n = returns.len() as f64;
    let mut grad = Array2::zeros(pass.logits.dim());
    let mut loss = 0.0;
    for (i, &ret) in returns.iter().enumerate() {
        let err = pass.output[[i, 0]] - ret;
        loss += err * err;
        grad[[i, 0]] = coef * 2.0 * err / n;
    }
    (coef * loss / n, critic.backward(&pass, grad.view()))
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// Probability ratios `pi(a|s) / pi_old(a|s)` of the current actor.
pub fn probability_ratios(
    actor: &Mlp,
    states: ArrayView2<'_, f64>,
    actions: &[usize],
    old_log_probs: &[f64],
) -> Vec<f64> {
    let log_probs = log_softmax_rows(actor.forward(states).logits.view());
    actions
        .iter()
        .zip(old_log_probs)
        .enumerate()
        .map(|(i, (&a, &old))| (log_probs[[i, a]] - old).exp())
        .collect()
}

/// PPO loss `-mean(min(r A, clip(r) A)) - c * mean(H)`.
pub fn ppo_clip_loss(
    actor: &Mlp,
    states: ArrayView2<'_, f64>,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip_range: f64,
    entropy_coef: f64,
) -> (f64, Vec<f64>) {
    let pass = actor.forward(states);
    let log_probs = log_softmax_rows(pass.logits.view());
    let n = actions.len() as f64;
    let mut grad = Array2::zeros(log_probs.dim());
    let mut loss = 0.0;
    for (i, ((&a, &old), &adv)) in actions.iter().zip(old_log_probs).zip(advantages).enumerate() {
        let ratio = (log_probs[[i, a]] - old).exp();
        let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
        loss -= (ratio * adv).min(clipped * adv);
        // Gradient flows only when the unclipped term is the minimum.
        if ratio * adv <= clipped * adv {
            let d_logp = adv * ratio;
            for j in 0..log_probs.ncols() {
                let indicator = if j == a { 1.0 } else { 0.0 };
                grad[[i, j]] = -d_logp * (indicator - log_probs[[i, j]].exp()) / n;
            }
        }
    }
    loss /= n;
    loss += add_entropy_bonus(&log_probs, entropy_coef, &mut grad);
    (loss, actor.backward(&pass, grad.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpSpec, OutputHead};
    use crate::rng::substream;
    use rand::Rng;

    fn states(rows: usize, seed: u64) -> Array2<f64> {
        let mut rng = substream(seed, "s", 0);
        Array2::from_shape_fn((rows, 6), |_| rng.random_range(-1.0..1.0))
    }

    fn actor(seed: u64) -> Mlp {
        let mut rng = substream(seed, "a", 0);
        Mlp::random(MlpSpec::new(6, &[8], 4, OutputHead::Softmax), &mut rng)
    }

    #[test]
    fn zero_advantages_give_zero_actor_gradient() {
        let a = actor(1);
        let s = states(5, 2);
        let (loss, grad) = policy_gradient_loss(&a, s.view(), &[0, 1, 2, 3, 0], &[0.0; 5], 0.0);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ppo_at_unit_ratio_equals_policy_gradient() {
        let a = actor(3);
        let s = states(5, 4);
        let actions = [0, 3, 2, 1, 1];
        let adv = [0.5, -1.0, 2.0, 0.1, -0.3];
        let old: Vec<f64> = {
            let lp = log_softmax_rows(a.forward(s.view()).logits.view());
            actions.iter().enumerate().map(|(i, &x)| lp[[i, x]]).collect()
        };
        for r in probability_ratios(&a, s.view(), &actions, &old) {
            assert!((r - 1.0).abs() < 1e-12);
        }
        let (_, g_ppo) = ppo_clip_loss(&a, s.view(), &actions, &old, &adv, 0.2, 0.0);
        let (_, g_pg) = policy_gradient_loss(&a, s.view(), &actions, &adv, 0.0);
        for (x, y) in g_ppo.iter().zip(&g_pg) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_clip_has_zero_gradient() {
        let a = actor(5);
        let s = states(1, 6);
        let lp = log_softmax_rows(a.forward(s.view()).logits.view());
        // old probability 2x smaller -> ratio 2 > 1.2 with positive advantage
        let old = [lp[[0, 2]] - 2f64.ln()];
        let (loss, grad) = ppo_clip_loss(&a, s.view(), &[2], &old, &[1.5], 0.2, 0.0);
        assert!((loss + 1.2 * 1.5).abs() < 1e-12);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn surrogate_value_matches_formula() {
        let a = actor(7);
        let s = states(6, 8);
        let actions = [1, 1, 0, 3, 2, 0];
        let adv = [1.0, -2.0, 0.5, -0.5, 3.0, -1.0];
        let old = [-1.0, -2.5, -0.3, -1.4, -2.0, -1.1];
        let (loss, _) = ppo_clip_loss(&a, s.view(), &actions, &old, &adv, 0.2, 0.0);
        let ratios = probability_ratios(&a, s.view(), &actions, &old);
        let direct: f64 = ratios
            .iter()
            .zip(&adv)
            .map(|(&r, &adv)| {
                let c = if r < 0.8 { 0.8 } else if r > 1.2 { 1.2 } else { r };
                if r * adv < c * adv {
                    r * adv
                } else {
                    c * adv
                }
            })
            .sum::<f64>()
            / 6.0;
        assert_eq!(loss, -direct);
    }
}
