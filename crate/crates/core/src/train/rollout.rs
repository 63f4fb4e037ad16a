use rand::Rng;

use crate::env::{self, Action, EnvState, Observation, TaskKind};
use crate::net::{forward, policy, HiddenState, NetParams};
use crate::seeding::{episode_seed, Stream};
use crate::Result;

/// Totals of one finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub reward: f32,
    pub soups: u32,
    pub correct_numbers: u32,
}

/// Owns the environment across episode boundaries and reseeds every new
/// episode from the run seed.
#[derive(Debug, Clone)]
pub struct EpisodeRunner {
    task: TaskKind,
    target: u32,
    seed: u64,
    stream: Stream,
    episode: u64,
    state: EnvState,
    obs: Observation,
    fresh: bool,
    acc: EpisodeSummary,
}

impl EpisodeRunner {
    pub fn new(task: TaskKind, target: u32, seed: u64, stream: Stream, allow_any_target: bool) -> Result<Self> {
        let reset = if allow_any_target { env::reset_any_target } else { env::reset };
        let (state, obs) = reset(task, target, episode_seed(seed, stream, 0))?;
        Ok(EpisodeRunner {
            task,
            target,
            seed,
            stream,
            episode: 0,
            state,
            obs,
            fresh: true,
            acc: EpisodeSummary { reward: 0.0, soups: 0, correct_numbers: 0 },
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// True until the first step of the current episode.
    pub fn at_episode_start(&self) -> bool {
        self.fresh
    }

    /// Steps the environment; on episode end the summary is returned and the
    /// next episode is started.
    pub fn step(&mut self, action: Action) -> Result<(env::StepResult, Option<EpisodeSummary>)> {
        let r = self.state.step(action)?;
        self.fresh = false;
        self.acc.reward += r.reward;
        self.acc.soups += u32::from(r.info.delivery);
        self.acc.correct_numbers += u32::from(r.info.correct_number);
        self.obs = r.observation;
        let mut finished = None;
        if r.done {
            finished = Some(self.acc);
            self.episode += 1;
            let (state, obs) =
                env::reset_any_target(self.task, self.target, episode_seed(self.seed, self.stream, self.episode))?;
            self.state = state;
            self.obs = obs;
            self.fresh = true;
            self.acc = EpisodeSummary { reward: 0.0, soups: 0, correct_numbers: 0 };
        }
        Ok((r, finished))
    }
}

/// One rollout segment.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    /// Observations, `len x obs_len`.
    pub obs: Vec<f32>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f32>,
    /// The step ended its episode.
    pub dones: Vec<bool>,
    /// The carry before the step was reset to zero (first step of an episode).
    pub starts: Vec<bool>,
    /// Carry before each step.
    pub hidden: Vec<HiddenState<f32>>,
    /// Value of the state after the last step (zero if that step ended an episode).
    pub bootstrap_value: f32,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_len(&self) -> usize {
        self.obs.len() / self.len().max(1)
    }
}

/// Samples `n` steps with the current policy. The carry flows across calls
/// and is zeroed whenever an episode ends.
pub fn collect_rollout<R: Rng + ?Sized>(
    runner: &mut EpisodeRunner,
    params: &NetParams<f32>,
    mut carry: HiddenState<f32>,
    n: usize,
    rng: &mut R,
) -> Result<(RolloutBuffer, HiddenState<f32>, Vec<EpisodeSummary>)> {
    let width = params.arch().hidden;
    let mut buf = RolloutBuffer {
        obs: Vec::with_capacity(n * params.arch().obs_len()),
        actions: Vec::with_capacity(n),
        log_probs: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        dones: Vec::with_capacity(n),
        starts: Vec::with_capacity(n),
        hidden: Vec::with_capacity(n),
        bootstrap_value: 0.0,
    };
    let mut finished = Vec::new();
    for _ in 0..n {
        let obs = *runner.observation();
        let out = forward(params, obs.as_slice(), &carry)?;
        let (action, log_prob) = policy::sample_action(&out.logits, rng);
        buf.starts.push(runner.at_episode_start());
        buf.hidden.push(carry);
        buf.obs.extend_from_slice(obs.as_slice());
        buf.actions.push(action);
        buf.log_probs.push(log_prob);
        buf.values.push(out.value);

        let (result, summary) = runner.step(action)?;
        buf.rewards.push(result.reward);
        buf.dones.push(result.done);
        carry = out.new_hidden;
        if let Some(s) = summary {
            finished.push(s);
            carry = HiddenState::zeros(width);
        }
    }
    if !buf.dones.last().copied().unwrap_or(true) {
        buf.bootstrap_value = forward(params, runner.observation().as_slice(), &carry)?.value;
    }
    Ok((buf, carry, finished))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{forward_sequence, init_params, Arch};
    use crate::seeding::rng_for;

    fn small() -> Arch {
        Arch { conv_channels: 4, hidden: 8, mlp: 8, ..Arch::standard() }
    }

    #[test]
    fn rollout_bookkeeping() {
        let params: NetParams<f32> = init_params(small(), 1);
        let mut runner = EpisodeRunner::new(TaskKind::SingleT, 7, 1, Stream::Env, false).unwrap();
        let mut rng = rng_for(1, Stream::Policy);
        let carry = HiddenState { h: vec![0.0; 8], c: vec![0.0; 8] };
        let (buf, carry2, eps) = collect_rollout(&mut runner, &params, carry.clone(), 128, &mut rng).unwrap();
        assert_eq!(buf.len(), 128);
        assert_eq!(buf.dones.iter().filter(|&&d| d).count(), 1);
        assert!(buf.dones[99]);
        assert!(buf.starts[0] && buf.starts[100]);
        assert_eq!(buf.starts.iter().filter(|&&s| s).count(), 2);
        assert_eq!(buf.hidden[0], carry);
        assert_eq!(buf.hidden[100], HiddenState::zeros(8));
        assert_eq!(eps.len(), 1);
        assert_eq!(runner.episode(), 1);

        // re-forwarding reproduces the stored log-probabilities exactly
        let tape = forward_sequence(&params, &buf.obs, &buf.hidden[0], &buf.starts).unwrap();
        for t in 0..128 {
            let (lp, _) = policy::evaluate_actions(tape.logits(t), buf.actions[t]);
            assert_eq!(lp, buf.log_probs[t]);
            assert_eq!(tape.value(t), buf.values[t]);
        }
        assert_eq!(tape.final_hidden(), carry2);
    }

    #[test]
    fn bootstrap_zero_after_done() {
        let params: NetParams<f32> = init_params(small(), 1);
        let mut runner = EpisodeRunner::new(TaskKind::DualTN, 8, 2, Stream::Env, false).unwrap();
        let mut rng = rng_for(2, Stream::Policy);
        let (buf, carry, _) =
            collect_rollout(&mut runner, &params, HiddenState::zeros(8), 100, &mut rng).unwrap();
        assert!(buf.dones[99]);
        assert_eq!(buf.bootstrap_value, 0.0);
        assert_eq!(carry, HiddenState::zeros(8));
        let (buf, _, _) = collect_rollout(&mut runner, &params, carry, 28, &mut rng).unwrap();
        assert!(buf.starts[0]);
        assert_ne!(buf.bootstrap_value, 0.0);
    }
}
