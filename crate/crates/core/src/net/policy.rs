//! Categorical action distribution over the policy logits.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::Real;
use crate::env::Action;

pub fn log_softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    log_softmax(logits).into_iter().map(F::exp).collect()
}

/// `-sum p log p`
pub fn entropy<F: Real>(logits: &[F]) -> F {
    log_softmax(logits).into_iter().map(|lp| -lp.exp() * lp).sum()
}

/// Draws an action from `softmax(logits)` and returns its log-probability.
pub fn sample_action<F: Real, R: Rng + ?Sized>(logits: &[F], rng: &mut R) -> (Action, F) {
    let logp = log_softmax(logits);
    let weights: Vec<f64> = logp.iter().map(|lp| lp.to_f64().unwrap().exp()).collect();
    let idx = WeightedIndex::new(&weights).expect("finite logits give valid weights").sample(rng);
    (Action::from_index(idx).expect("logit count matches action count"), logp[idx])
}

/// Log-probability of `action` and the distribution entropy.
pub fn evaluate_actions<F: Real>(logits: &[F], action: Action) -> (F, F) {
    let logp = log_softmax(logits);
    let ent = logp.iter().map(|&lp| -lp.exp() * lp).sum();
    (logp[action.index()], ent)
}

/// Most likely action.
pub fn greedy<F: Real>(logits: &[F]) -> Action {
    let (idx, _) = logits
        .iter()
        .enumerate()
        .fold((0, F::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    Action::from_index(idx).expect("logit count matches action count")
}
