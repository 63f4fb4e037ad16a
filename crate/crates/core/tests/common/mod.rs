//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ovenlab::env::{self, Action, Counter, EnvState, Oven, TaskKind};
use ovenlab::net::{backward, forward_sequence, init_params, Arch, HiddenState, NetParams};
use ovenlab::train::TraceRow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Miniature network with a two-unit LSTM.
pub fn tiny_arch() -> Arch {
    Arch { conv_channels: 3, hidden: 2, mlp: 4, ..Arch::standard() }
}

/// Worst relative error between the analytic gradient and central
/// differences of a random linear functional of logits and values, over
/// every parameter of `trials` random networks and 3-step sequences.
pub fn gradient_check(trials: usize, seed: u64, eps: f64) -> f64 {
    let arch = tiny_arch();
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut params: NetParams<f64> = init_params(arch, seed + trial as u64);
        for v in params.values_mut() {
            *v += r.random_range(-0.3..0.3);
        }
        let len = 3;
        let obs: Vec<f64> = (0..len * arch.obs_len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let initial = HiddenState { h: vec![r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)], c: vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)] };
        let starts: Vec<bool> = (0..len).map(|t| t > 0 && r.random_bool(0.2)).collect();
        let wl: Vec<f64> = (0..len * arch.actions).map(|_| r.random_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = |p: &NetParams<f64>| {
            let tape = forward_sequence(p, &obs, &initial, &starts).unwrap();
            let l: f64 = (0..len).flat_map(|t| tape.logits(t).to_vec()).zip(&wl).map(|(a, b)| a * b).sum();
            l + tape.values().iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>()
        };
        let tape = forward_sequence(&params, &obs, &initial, &starts).unwrap();
        let grads = backward(&params, &tape, &wl, &wv).unwrap();
        for i in 0..params.values().len() {
            let orig = params.values()[i];
            params.values_mut()[i] = orig + eps;
            let up = loss(&params);
            params.values_mut()[i] = orig - eps;
            let down = loss(&params);
            params.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.values()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Advantages as explicit discounted sums of TD errors, cut at episode ends.
pub fn gae_by_sums(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| if dones[t] { 0.0 } else if t + 1 < n { values[t + 1] } else { bootstrap };
    let delta: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * next_value(t) - values[t]).collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * delta[k];
                if dones[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// Discounted returns `R_t = r_t + gamma r_{t+1} + ...` up to the episode end
/// or the bootstrap value after the buffer.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut g = 0.0;
            let mut w = 1.0;
            for k in t..n {
                g += w * rewards[k];
                if dones[k] {
                    return g;
                }
                w *= gamma;
            }
            g + w * bootstrap
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (vals, vecs)
}

/// Sample covariance of the columns of a row-major `rows x cols` matrix.
pub fn covariance(data: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mean: Vec<f64> = (0..cols).map(|j| (0..rows).map(|i| data[i * cols + j]).sum::<f64>() / rows as f64).collect();
    (0..cols)
        .map(|a| {
            (0..cols)
                .map(|b| (0..rows).map(|i| (data[i * cols + a] - mean[a]) * (data[i * cols + b] - mean[b])).sum::<f64>() / (rows as f64 - 1.0))
                .collect()
        })
        .collect()
}

/// DFT straight from the definition, as `(re, im)` pairs.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|j| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let ang = -2.0 * std::f64::consts::PI * ((j * t) % n) as f64 / n as f64;
                (re + v * ang.cos(), im + v * ang.sin())
            })
        })
        .collect()
}

/// Student t density.
fn t_density(x: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Two-sided p-value by composite Simpson quadrature of the density on
/// `[0, |t|]`.
pub fn t_pvalue_quadrature(t: f64, df: f64) -> f64 {
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = t_density(0.0, df) + t_density(t.abs(), df);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * t_density(i as f64 * h, df);
    }
    1.0 - 2.0 * s * h / 3.0
}

/// Pooled two-sample t statistic and degrees of freedom, written out term by term.
pub fn pooled_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let sa = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (na - 1.0);
    let sb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (nb - 1.0);
    let sp = ((na - 1.0) * sa + (nb - 1.0) * sb) / (na + nb - 2.0);
    ((ma - mb) / (sp * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
}

pub fn welch_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (na - 1.0) / na;
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (nb - 1.0) / nb;
    ((ma - mb) / (va + vb).sqrt(), (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0)))
}

/// Most soups any action sequence can deliver in one episode, by exhaustive
/// forward search over the simulator itself. Only the position, the load
/// and the cooking time (saturated at the cook time) matter for soups.
pub fn max_soups(task: TaskKind, target: u32) -> u32 {
    use std::collections::HashMap;
    let key = |s: &EnvState| {
        let timer = match s.oven {
            Oven::Off => None,
            Oven::Cooking { timer, .. } => Some(timer.min(target)),
        };
        (s.agent, s.carrying, timer)
    };
    let (start, _) = env::reset(task, target, 0).unwrap();
    let mut layer: HashMap<_, (EnvState, u32)> = HashMap::from([(key(&start), (start, 0))]);
    for _ in 0..env::EPISODE_LEN {
        let mut next: HashMap<_, (EnvState, u32)> = HashMap::new();
        for (s, soups) in layer.values() {
            for a in Action::ALL {
                let mut s2 = s.clone();
                let r = s2.step(a).unwrap();
                let total = soups + u32::from(r.info.delivery);
                let k = key(&s2);
                if next.get(&k).is_none_or(|(_, best)| total > *best) {
                    next.insert(k, (s2, total));
                }
            }
        }
        layer = next;
    }
    layer.values().map(|(_, s)| *s).max().unwrap()
}

/// Whether `cell` touches the oven in the canonical layout.
pub fn at_oven(s: &EnvState) -> bool {
    s.layout.adjacent_to(s.agent, Counter::Oven)
}

/// Builds one complete trial of trace rows: the agent stands at the oven
/// doing `actions` at cooking times 1, 2, ..., takes the soup on the last
/// one and delivers on the following step.
pub fn fixture_trial(episode: u32, trial: u32, first_step: u32, actions: &[Action]) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| TraceRow {
            episode,
            step: first_step + i as u32,
            trial,
            action: a,
            oven_timer: Some(i as u32 + 1),
            number_value: None,
            reward: 0.0,
            delivery: false,
            correct_number: false,
            oven_check: a == Action::Interact,
            take_soup: false,
        })
        .collect();
    rows.last_mut().unwrap().take_soup = true;
    rows.push(TraceRow {
        episode,
        step: first_step + actions.len() as u32,
        trial,
        action: Action::Interact,
        oven_timer: None,
        number_value: None,
        reward: 1.0,
        delivery: true,
        correct_number: false,
        oven_check: false,
        take_soup: false,
    });
    rows
}

pub fn timers_of(rows: &[TraceRow], target: u32) -> Vec<u32> {
    ovenlab::behavior::extract_first_oven_checks(rows, target).unwrap().iter().map(|c| c.timer_value).collect()
}

/// Counts gathered by [`fuzz_episode`].
#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub soups: u32,
    pub answers: u32,
}

/// Plays one episode mixing the scripted policy with uniformly random
/// actions (probability `noise`) and checks every step against the task
/// rules. Returns the first violation.
pub fn fuzz_episode(task: TaskKind, target: u32, seed: u64, noise: f64) -> Result<FuzzStats, String> {
    use ovenlab::env::planner::ScriptedPolicy;
    use ovenlab::env::{number_answer, InteractOutcome, NUMBER_WINDOW_LEN};
    let mut r = rng(seed ^ 0x5eed);
    let (mut s, _) = env::reset(task, target, seed).map_err(|e| e.to_string())?;
    let mut policy = ScriptedPolicy::new();
    let mut stats = FuzzStats::default();
    let (mut total, mut trial) = (0.0f64, 0u32);
    // steps of number display still owed after the last placement
    let mut owed = 0u8;
    for step in 0..env::EPISODE_LEN {
        let a = if r.random_bool(noise) { Action::ALL[r.random_range(0..6)] } else { policy.act(&s) };
        let fail = |m: String| Err(format!("{task} d{target} seed {seed} step {step}: {m}"));
        let res = s.step(a).map_err(|e| e.to_string())?;
        let i = res.info;
        if i.take_soup && i.oven_timer.is_none_or(|v| v < target) {
            return fail(format!("soup taken at timer {:?}", i.oven_timer));
        }
        if i.trial_index != trial {
            return fail("trial index moved without a delivery".into());
        }
        trial += u32::from(i.delivery);
        let expected = f32::from(u8::from(i.delivery)) + f32::from(u8::from(i.correct_number));
        if res.reward != expected {
            return fail(format!("reward {} but delivery {} and correct answer {}", res.reward, i.delivery, i.correct_number));
        }
        total += f64::from(res.reward);
        match (owed > 0, i.number_value) {
            (true, Some(n)) => {
                owed -= 1;
                if i.correct_number != (a == number_answer(n)) || !(1..=10).contains(&n) {
                    return fail(format!("answer {a:?} to {n} scored {}", i.correct_number));
                }
                stats.answers += u32::from(i.correct_number);
            }
            (false, None) => {
                if i.correct_number {
                    return fail("number reward without a number".into());
                }
            }
            (true, None) => return fail("number window closed early".into()),
            (false, Some(_)) => return fail("number shown outside a window".into()),
        }
        if i.outcome == Some(InteractOutcome::PlaceOnion) && task == TaskKind::DualTN {
            owed = NUMBER_WINDOW_LEN;
        }
        stats.soups += u32::from(i.delivery);
        if res.done != (step + 1 == env::EPISODE_LEN) {
            return Err(format!("done flag {} at step {step}", res.done));
        }
    }
    if s.step(Action::Wait).is_ok() {
        return Err("stepping a finished episode succeeded".into());
    }
    if total != f64::from(stats.soups + stats.answers) {
        return Err(format!("total reward {total} != {} soups + {} answers", stats.soups, stats.answers));
    }
    Ok(stats)
}
