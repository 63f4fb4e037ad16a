use rand::seq::SliceRandom;
use rand::Rng;

use super::gae::normalize;
use super::rollout::RolloutBuffer;
use super::TrainConfig;
use crate::env::Action;
use crate::net::{backward, forward_sequence, policy, NetParams, ParamGrads, Real, Tape};
use crate::{Error, Result};

/// Adam with PyTorch's bias correction and `eps` outside the square root.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f32, beta2: f32, eps: f32) -> Self {
        Adam { beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32) {
        assert!(params.len() == self.m.len() && grads.len() == self.m.len());
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Real>(grads: &mut [F], max_norm: F) -> F {
    let norm = grads.iter().map(|&g| g * g).sum::<F>().sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + F::lit(1e-6));
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts<F> {
    pub total: F,
    pub policy: F,
    pub value: F,
    pub entropy: F,
    pub clip_frac: F,
    pub approx_kl: F,
}

/// Clipped-surrogate PPO loss over one sequence, with its gradient with
/// respect to every step's logits (`len x actions`) and value.
///
/// `loss = -mean(min(rA, clip(r, 1-e, 1+e)A)) + vf_coef mean((V-R)^2) - ent_coef mean(H)`
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss<F: Real>(
    tape: &Tape<F>,
    actions: &[Action],
    old_log_probs: &[F],
    advantages: &[F],
    returns: &[F],
    clip: F,
    ent_coef: F,
    vf_coef: F,
) -> (LossParts<F>, Vec<F>, Vec<F>) {
    let n = tape.len();
    let na = tape.arch().actions;
    let nf = F::from_usize(n).unwrap();
    let one = F::one();
    let mut dlogits = vec![F::zero(); n * na];
    let mut dvalues = vec![F::zero(); n];
    let mut parts = LossParts::<F>::default();

    for t in 0..n {
        let logp = policy::log_softmax(tape.logits(t));
        let probs: Vec<F> = logp.iter().map(|lp| lp.exp()).collect();
        let ent: F = -probs.iter().zip(&logp).map(|(&p, &lp)| p * lp).sum::<F>();
        let a = actions[t].index();
        let log_ratio = logp[a] - old_log_probs[t];
        let ratio = log_ratio.exp();
        let adv = advantages[t];
        let unclipped = ratio * adv;
        let clipped = ratio.max(one - clip).min(one + clip) * adv;
        let surrogate = unclipped.min(clipped);
        // d surrogate / d ratio: zero once the clipped branch is the minimum
        let gate = if unclipped <= clipped { adv } else { F::zero() };

        let d = &mut dlogits[t * na..(t + 1) * na];
        for j in 0..na {
            let onehot = if j == a { one } else { F::zero() };
            let dpolicy = -(gate * ratio * (onehot - probs[j])) / nf;
            let dent = ent_coef * probs[j] * (logp[j] + ent) / nf;
            d[j] = dpolicy + dent;
        }
        let err = tape.value(t) - returns[t];
        dvalues[t] = vf_coef * F::lit(2.0) * err / nf;

        parts.policy -= surrogate / nf;
        parts.value += err * err / nf;
        parts.entropy += ent / nf;
        if (ratio - one).abs() > clip {
            parts.clip_frac += one / nf;
        }
        parts.approx_kl += ((ratio - one) - log_ratio) / nf;
    }
    parts.total = parts.policy + vf_coef * parts.value - ent_coef * parts.entropy;
    (parts, dlogits, dvalues)
}

/// Averages over every minibatch pass of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f32,
    pub value_loss: f32,
    pub entropy: f32,
    pub clip_frac: f32,
    pub approx_kl: f32,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f32,
    pub passes: usize,
}

/// Contiguous, equally sized minibatch ranges of a rollout.
pub fn minibatch_ranges(len: usize, minibatches: usize) -> Vec<std::ops::Range<usize>> {
    let size = len / minibatches;
    (0..minibatches).map(|i| i * size..(i + 1) * size).collect()
}

/// Re-forwards one minibatch from its stored carry.
pub fn reforward(params: &NetParams<f32>, buf: &RolloutBuffer, range: std::ops::Range<usize>) -> Result<Tape<f32>> {
    let ol = params.arch().obs_len();
    forward_sequence(
        params,
        &buf.obs[range.start * ol..range.end * ol],
        &buf.hidden[range.start],
        &buf.starts[range.clone()],
    )
}

/// Probability ratios of the buffer's actions under `params`, minibatch by
/// minibatch from the stored carries.
pub fn ratios(params: &NetParams<f32>, buf: &RolloutBuffer, minibatches: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(buf.len());
    for range in minibatch_ranges(buf.len(), minibatches) {
        let tape = reforward(params, buf, range.clone())?;
        for (k, t) in range.enumerate() {
            let (lp, _) = policy::evaluate_actions(tape.logits(k), buf.actions[t]);
            out.push((lp - buf.log_probs[t]).exp());
        }
    }
    Ok(out)
}

/// Gradient of the PPO loss for one minibatch, before clipping.
pub fn minibatch_grads(
    params: &NetParams<f32>,
    buf: &RolloutBuffer,
    range: std::ops::Range<usize>,
    advantages: &[f32],
    returns: &[f32],
    cfg: &TrainConfig,
) -> Result<(LossParts<f32>, ParamGrads<f32>)> {
    let tape = reforward(params, buf, range.clone())?;
    let (parts, dlogits, dvalues) = ppo_loss(
        &tape,
        &buf.actions[range.clone()],
        &buf.log_probs[range.clone()],
        &advantages[range.clone()],
        &returns[range],
        cfg.clip,
        cfg.ent_coef,
        cfg.vf_coef,
    );
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "PPO loss {:?} (policy {:?}, value {:?}, entropy {:?}, kl {:?}); parameter norm {}",
            parts.total,
            parts.policy,
            parts.value,
            parts.entropy,
            parts.approx_kl,
            params.norm()
        )));
    }
    let grads = backward(params, &tape, &dlogits, &dvalues)?;
    Ok((parts, grads))
}

/// Runs `cfg.epochs` passes over the buffer in shuffled sequence-contiguous
/// minibatches. `advantages` are raw GAE estimates; they are normalized here.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut NetParams<f32>,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    advantages: &[f32],
    returns: &[f32],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let adv = normalize(advantages);
    let mut ranges = minibatch_ranges(buf.len(), cfg.minibatches);
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        ranges.shuffle(rng);
        for range in &ranges {
            let (parts, mut grads) = minibatch_grads(params, buf, range.clone(), &adv, returns, cfg)?;
            let norm = clip_grad_norm(grads.values_mut(), cfg.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm {norm}")));
            }
            opt.step(params.values_mut(), grads.values(), cfg.lr);
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.clip_frac += parts.clip_frac;
            stats.approx_kl += parts.approx_kl;
            stats.grad_norm += norm;
            stats.passes += 1;
        }
    }
    if stats.passes > 0 {
        let k = stats.passes as f32;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.clip_frac /= k;
        stats.approx_kl /= k;
        stats.grad_norm /= k;
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Arch, HiddenState};

    fn tiny() -> Arch {
        Arch { conv_channels: 2, hidden: 3, mlp: 4, ..Arch::standard() }
    }

    fn one_step_tape(seed: u64) -> (NetParams<f64>, Tape<f64>) {
        let p: NetParams<f64> = init_params(tiny(), seed);
        let obs: Vec<f64> = (0..tiny().obs_len()).map(|i| (i % 7) as f64 / 7.0).collect();
        let tape = forward_sequence(&p, &obs, &HiddenState::zeros(3), &[false]).unwrap();
        (p, tape)
    }

    #[test]
    fn ratio_one_surrogates_agree() {
        let (_, tape) = one_step_tape(1);
        let (lp, ent) = policy::evaluate_actions(tape.logits(0), Action::Up);
        let (parts, _, _) = ppo_loss(&tape, &[Action::Up], &[lp], &[0.7], &[0.0], 0.2, 0.0, 0.0);
        assert!((parts.policy + 0.7).abs() < 1e-12);
        assert_eq!(parts.clip_frac, 0.0);
        assert!(parts.approx_kl.abs() < 1e-15);
        assert!((parts.entropy - ent).abs() < 1e-15);
    }

    #[test]
    fn ratios_are_one_before_the_first_step() {
        use crate::env::TaskKind;
        use crate::seeding::{rng_for, Stream};
        use crate::train::rollout::{collect_rollout, EpisodeRunner};
        let params: NetParams<f32> = init_params(tiny(), 4);
        for task in [TaskKind::SingleT, TaskKind::DualTN] {
            let mut runner = EpisodeRunner::new(task, 9, 4, Stream::Env, false).unwrap();
            let mut rng = rng_for(4, Stream::Policy);
            let (_, carry, _) = collect_rollout(&mut runner, &params, HiddenState::zeros(3), 60, &mut rng).unwrap();
            let (buf, _, _) = collect_rollout(&mut runner, &params, carry, 128, &mut rng).unwrap();
            for r in ratios(&params, &buf, 4).unwrap() {
                assert!((r - 1.0).abs() <= 1e-6, "{r}");
            }
        }
    }

    #[test]
    fn clipped_ratio_kills_policy_gradient() {
        let (_, tape) = one_step_tape(2);
        let (lp, _) = policy::evaluate_actions(tape.logits(0), Action::Left);
        let eps = 0.2f64;
        // old log-prob chosen so that ratio = 1 + 2 eps
        let old = lp - (1.0 + 2.0 * eps).ln();
        let (parts, dl, _) = ppo_loss(&tape, &[Action::Left], &[old], &[1.5], &[0.0], eps, 0.0, 0.0);
        assert!(dl.iter().all(|&g| g == 0.0), "{dl:?}");
        assert_eq!(parts.clip_frac, 1.0);
        // with negative advantage the unclipped branch is active again
        let (_, dl, _) = ppo_loss(&tape, &[Action::Left], &[old], &[-1.5], &[0.0], eps, 0.0, 0.0);
        assert!(dl.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn loss_gradient_matches_finite_differences_in_logits() {
        let (_, tape) = one_step_tape(3);
        let old = -1.5;
        let (_, dl, dv) = ppo_loss(&tape, &[Action::Down], &[old], &[0.8], &[0.3], 0.2, 0.05, 0.5);
        let logits = tape.logits(0).to_vec();
        let value = tape.value(0);
        let loss_at = |z: &[f64], v: f64| {
            let logp = policy::log_softmax(z);
            let ratio = (logp[2] - old).exp();
            let s = (ratio * 0.8).min(ratio.clamp(0.8, 1.2) * 0.8);
            let h = policy::entropy(z);
            -s + 0.5 * (v - 0.3).powi(2) - 0.05 * h
        };
        for j in 0..6 {
            let mut up = logits.clone();
            up[j] += 1e-6;
            let mut dn = logits.clone();
            dn[j] -= 1e-6;
            let fd = (loss_at(&up, value) - loss_at(&dn, value)) / 2e-6;
            assert!((fd - dl[j]).abs() < 1e-8, "logit {j}: {fd} vs {}", dl[j]);
        }
        let fd = (loss_at(&logits, value + 1e-6) - loss_at(&logits, value - 1e-6)) / 2e-6;
        assert!((fd - dv[0]).abs() < 1e-8);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0f64, 4.0];
        let n = clip_grad_norm(&mut g, 0.5);
        assert_eq!(n, 5.0);
        let after = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!(after <= 0.5 + 1e-6);
        let mut small = vec![0.1f64, 0.1];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut p = vec![0.5f32, -1.25, 3.0];
        let before = p.clone();
        let mut opt = Adam::new(3, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &[1.0, -2.0, 0.5], 0.0);
        opt.step(&mut p, &[1.0, -2.0, 0.5], 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0f32; 2];
        let mut opt = Adam::new(2, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &[2.0, -0.1], 0.01);
        // bias-corrected first step is lr * sign(g)
        assert!((p[0] + 0.01).abs() < 1e-6 && (p[1] - 0.01).abs() < 1e-6);
    }
}
