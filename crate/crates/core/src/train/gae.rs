use crate::net::Real;

/// Generalized advantage estimates and value targets.
///
/// `dones[t]` marks a step that ended its episode; nothing is bootstrapped
/// across it. `bootstrap` is the value of the state after the last step.
pub fn compute_gae<F: Real>(
    rewards: &[F],
    values: &[F],
    dones: &[bool],
    bootstrap: F,
    gamma: F,
    lambda: F,
) -> (Vec<F>, Vec<F>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "buffer columns differ in length");
    let mut adv = vec![F::zero(); n];
    let mut next_value = bootstrap;
    let mut next_adv = F::zero();
    for t in (0..n).rev() {
        let live = if dones[t] { F::zero() } else { F::one() };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (adv, returns)
}

/// Shifts to zero mean and scales to unit (sample) standard deviation.
pub fn normalize<F: Real>(xs: &[F]) -> Vec<F> {
    let n = F::from_usize(xs.len()).unwrap();
    let mean = xs.iter().copied().sum::<F>() / n;
    let denom = F::from_usize(xs.len().saturating_sub(1).max(1)).unwrap();
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / denom;
    let scale = var.sqrt() + F::lit(1e-8);
    xs.iter().map(|&x| (x - mean) / scale).collect()
}
