//! Recurrent PPO training and policy evaluation.

pub mod eval;
pub mod gae;
pub mod ppo;
pub mod rollout;

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate, EvalTrace, TraceRow};
pub use gae::compute_gae;
pub use ppo::{ppo_update, Adam, UpdateStats};
pub use rollout::{collect_rollout, EpisodeRunner, EpisodeSummary, RolloutBuffer};

use crate::env::TaskKind;
use crate::net::checkpoint::{Checkpoint, CheckpointHeader};
use crate::net::{init_params, Arch, HiddenState, NetParams};
use crate::seeding::{rng_for, Stream};
use crate::{Error, Result};

/// Training hyperparameters. Defaults reproduce the experiment protocol:
/// 100k environment steps with entropy coefficient 0.05; the rest are the
/// usual recurrent-PPO library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f32,
    pub gae_lambda: f32,
    pub clip: f32,
    pub ent_coef: f32,
    pub vf_coef: f32,
    pub lr: f32,
    pub max_grad_norm: f32,
    pub adam_betas: (f32, f32),
    pub adam_eps: f32,
    pub seed: u64,
    pub arch: Arch,
    /// Accept cook times outside 7..=10.
    pub allow_any_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 100_000,
            rollout_len: 128,
            epochs: 10,
            minibatches: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            ent_coef: 0.05,
            vf_coef: 0.5,
            lr: 3e-4,
            max_grad_norm: 0.5,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            arch: Arch::standard(),
            allow_any_target: false,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rollout_len == 0 || self.minibatches == 0 || !self.rollout_len.is_multiple_of(self.minibatches) {
            return bad("rollout_len must be a positive multiple of minibatches");
        }
        if self.epochs == 0 || self.total_steps == 0 {
            return bad("epochs and total_steps must be positive");
        }
        let finite = [
            self.gamma,
            self.gae_lambda,
            self.clip,
            self.ent_coef,
            self.vf_coef,
            self.lr,
            self.max_grad_norm,
            self.adam_eps,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("hyperparameters must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn rollouts(&self) -> u64 {
        self.total_steps.div_ceil(self.rollout_len as u64)
    }
}

/// One line of the training curve, written after every update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    /// Mean reward over the last 100 finished episodes.
    pub mean_ep_reward: f32,
    pub policy_loss: f32,
    pub value_loss: f32,
    pub entropy: f32,
    pub clip_frac: f32,
}

pub const CURVE_HEADER: &str = "step,mean_ep_reward,policy_loss,value_loss,entropy,clip_frac";

pub fn write_curve<W: Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.mean_ep_reward, r.policy_loss, r.value_loss, r.entropy, r.clip_frac
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRow>,
    pub episodes: Vec<EpisodeSummary>,
}

/// Trains one agent. A pure function of its arguments: every random draw
/// comes from streams of `cfg.seed`.
pub fn train(task: TaskKind, target: u32, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(task, target, cfg, |_| {})
}

/// [`train`] with a callback after every update.
pub fn train_with<F: FnMut(&CurveRow)>(
    task: TaskKind,
    target: u32,
    cfg: &TrainConfig,
    mut on_update: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let arch = cfg.arch;
    let mut params: NetParams<f32> = init_params(arch, cfg.seed);
    let mut opt = Adam::new(arch.param_count(), cfg.adam_betas.0, cfg.adam_betas.1, cfg.adam_eps);
    let mut runner = EpisodeRunner::new(task, target, cfg.seed, Stream::Env, cfg.allow_any_target)?;
    let mut act_rng = rng_for(cfg.seed, Stream::Policy);
    let mut shuffle_rng = rng_for(cfg.seed, Stream::Shuffle);
    let mut carry = HiddenState::zeros(arch.hidden);
    let mut recent: VecDeque<f32> = VecDeque::with_capacity(100);
    let mut curve = Vec::new();
    let mut episodes = Vec::new();
    let mut steps = 0u64;

    for _ in 0..cfg.rollouts() {
        let (buf, next_carry, finished) = collect_rollout(&mut runner, &params, carry, cfg.rollout_len, &mut act_rng)?;
        carry = next_carry;
        steps += buf.len() as u64;
        for ep in finished {
            if recent.len() == 100 {
                recent.pop_front();
            }
            recent.push_back(ep.reward);
            episodes.push(ep);
        }
        let (adv, returns) =
            compute_gae(&buf.rewards, &buf.values, &buf.dones, buf.bootstrap_value, cfg.gamma, cfg.gae_lambda);
        let stats = ppo_update(&mut params, &mut opt, &buf, &adv, &returns, cfg, &mut shuffle_rng)?;
        let mean = if recent.is_empty() { f32::NAN } else { recent.iter().sum::<f32>() / recent.len() as f32 };
        let row = CurveRow {
            step: steps,
            mean_ep_reward: mean,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
        };
        log::debug!("{task} d{target} s{}: step {steps} reward {mean:.3} entropy {:.3}", cfg.seed, stats.entropy);
        on_update(&row);
        curve.push(row);
    }

    let checkpoint = Checkpoint { header: CheckpointHeader::new(arch, task, target, cfg.seed, steps), params };
    Ok(TrainOutcome { checkpoint, curve, episodes })
}
