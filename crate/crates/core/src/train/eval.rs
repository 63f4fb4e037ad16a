//! Evaluation episodes and the trace files they produce.
//!
//! `trace.csv` holds one row per step:
//!
//! ```text
//! episode,step,trial,action,oven_timer,number_value,reward,delivery,correct_number,oven_check,take_soup
//! ```
//!
//! `oven_timer` and `number_value` are empty when the oven is off or no
//! number is shown. `hidden.bin` is a sidecar with a JSON header line
//! ([`TraceMeta`]) followed by the LSTM output `h` of every step as
//! little-endian `f32`, row after row.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{self, Action, TaskKind, EPISODE_LEN};
use crate::net::checkpoint::Checkpoint;
use crate::net::{forward, policy, HiddenState};
use crate::seeding::{episode_seed, rng_for, Stream};
use crate::{Error, Result};

pub const TRACE_FILE: &str = "trace.csv";
pub const HIDDEN_FILE: &str = "hidden.bin";
const HIDDEN_FORMAT: &str = "ovenlab-hidden";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub episode: u32,
    pub step: u32,
    pub trial: u32,
    pub action: Action,
    pub oven_timer: Option<u32>,
    pub number_value: Option<u8>,
    pub reward: f32,
    pub delivery: bool,
    pub correct_number: bool,
    pub oven_check: bool,
    pub take_soup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format: String,
    pub task: TaskKind,
    pub target: u32,
    pub checkpoint_seed: u64,
    pub eval_seed: u64,
    pub episodes: u32,
    pub steps_per_episode: u32,
    pub hidden_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
    /// `rows.len() x hidden_width`
    pub hidden: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    episode: u32,
    step: u32,
    trial: u32,
    action: String,
    oven_timer: Option<u32>,
    number_value: Option<u8>,
    reward: f32,
    delivery: u8,
    correct_number: u8,
    oven_check: u8,
    take_soup: u8,
}

fn flag(v: u8, name: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::MalformedTrace(format!("{name} must be 0 or 1, got {other}"))),
    }
}

impl EvalTrace {
    pub fn episode_rows(&self, episode: u32) -> &[TraceRow] {
        let n = self.meta.steps_per_episode as usize;
        let e = episode as usize;
        &self.rows[e * n..(e + 1) * n]
    }

    pub fn hidden_row(&self, index: usize) -> &[f32] {
        let w = self.meta.hidden_width;
        &self.hidden[index * w..(index + 1) * w]
    }

    pub fn total_deliveries(&self) -> u32 {
        self.rows.iter().map(|r| u32::from(r.delivery)).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                episode: r.episode,
                step: r.step,
                trial: r.trial,
                action: r.action.name().to_string(),
                oven_timer: r.oven_timer,
                number_value: r.number_value,
                reward: r.reward,
                delivery: r.delivery.into(),
                correct_number: r.correct_number.into(),
                oven_check: r.oven_check.into(),
                take_soup: r.take_soup.into(),
            })
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses trace rows and checks their episode/step structure.
    pub fn read_rows<R: Read>(input: R) -> Result<Vec<TraceRow>> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(input).deserialize::<CsvRow>() {
            let r = rec.map_err(|e| Error::MalformedTrace(e.to_string()))?;
            rows.push(TraceRow {
                episode: r.episode,
                step: r.step,
                trial: r.trial,
                action: r.action.parse()?,
                oven_timer: r.oven_timer,
                number_value: r.number_value,
                reward: r.reward,
                delivery: flag(r.delivery, "delivery")?,
                correct_number: flag(r.correct_number, "correct_number")?,
                oven_check: flag(r.oven_check, "oven_check")?,
                take_soup: flag(r.take_soup, "take_soup")?,
            });
        }
        check_structure(&rows)?;
        Ok(rows)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv_bytes = Vec::new();
        self.write_csv(&mut csv_bytes)?;
        fs::write(dir.join(TRACE_FILE), csv_bytes)?;
        let mut bin = serde_json::to_vec(&self.meta)?;
        bin.push(b'\n');
        for v in &self.hidden {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(HIDDEN_FILE), bin)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rows = Self::read_rows(fs::File::open(dir.join(TRACE_FILE))?)?;
        let bytes = fs::read(dir.join(HIDDEN_FILE))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::MalformedTrace("hidden sidecar has no header".into()))?;
        let meta: TraceMeta = serde_json::from_slice(&bytes[..nl])?;
        if meta.format != HIDDEN_FORMAT {
            return Err(Error::MalformedTrace(format!("unknown sidecar format {}", meta.format)));
        }
        let body = &bytes[nl + 1..];
        if rows.len() != (meta.episodes * meta.steps_per_episode) as usize
            || body.len() != rows.len() * meta.hidden_width * 4
        {
            return Err(Error::MalformedTrace(format!(
                "{} rows and {} hidden bytes do not match {} episodes of {} steps",
                rows.len(),
                body.len(),
                meta.episodes,
                meta.steps_per_episode
            )));
        }
        let hidden = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(EvalTrace { meta, rows, hidden })
    }
}

fn check_structure(rows: &[TraceRow]) -> Result<()> {
    let mut expect = (0u32, 0u32);
    for (i, r) in rows.iter().enumerate() {
        let ok = (r.episode, r.step) == expect || (r.step == 0 && r.episode == expect.0 + 1 && expect.1 > 0);
        if !ok {
            return Err(Error::MalformedTrace(format!(
                "row {i}: episode {} step {} out of order",
                r.episode, r.step
            )));
        }
        expect = (r.episode, r.step + 1);
    }
    Ok(())
}

/// Runs `n_episodes` stochastic-policy episodes from a checkpoint.
pub fn evaluate(ck: &Checkpoint, n_episodes: u32, eval_seed: u64) -> Result<EvalTrace> {
    let h = &ck.header;
    let width = h.arch.hidden;
    let mut rng = rng_for(eval_seed, Stream::Policy);
    let mut rows = Vec::with_capacity((n_episodes * EPISODE_LEN) as usize);
    let mut hidden = Vec::with_capacity(rows.capacity() * width);
    for episode in 0..n_episodes {
        let (mut state, mut obs) =
            env::reset_any_target(h.task, h.target, episode_seed(eval_seed, Stream::Eval, episode as u64))?;
        let mut carry = HiddenState::<f32>::zeros(width);
        for step in 0..EPISODE_LEN {
            let out = forward(&ck.params, obs.as_slice(), &carry)?;
            let (action, _) = policy::sample_action(&out.logits, &mut rng);
            let r = state.step(action)?;
            rows.push(TraceRow {
                episode,
                step,
                trial: r.info.trial_index,
                action,
                oven_timer: r.info.oven_timer,
                number_value: r.info.number_value,
                reward: r.reward,
                delivery: r.info.delivery,
                correct_number: r.info.correct_number,
                oven_check: r.info.oven_check,
                take_soup: r.info.take_soup,
            });
            hidden.extend_from_slice(&out.new_hidden.h);
            carry = out.new_hidden;
            obs = r.observation;
        }
    }
    Ok(EvalTrace {
        meta: TraceMeta {
            format: HIDDEN_FORMAT.to_string(),
            task: h.task,
            target: h.target,
            checkpoint_seed: h.seed,
            eval_seed,
            episodes: n_episodes,
            steps_per_episode: EPISODE_LEN,
            hidden_width: width,
        },
        rows,
        hidden,
    })
}
