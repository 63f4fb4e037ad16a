//! Behavioral timing metrics on evaluation traces.
//!
//! The produced interval of an agent is read off its *first oven check*:
//! the cooking time shown on the first `Interact` aimed at a cooking oven
//! in each trial. An early check (below the cook time) only counts when the
//! agent keeps interacting with the oven on every step until it gets the
//! soup out; otherwise it is dropped and scanning continues.

mod ttest;

use std::io::Write;

use serde::Serialize;

use crate::env::{Action, TaskKind};
use crate::train::{EvalTrace, TraceRow};
use crate::{Error, Result};

pub use ttest::{student_t_two_sided, t_test, TTestResult, TestMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FirstOvenCheck {
    pub episode: u32,
    pub trial: u32,
    pub timer_value: u32,
    pub target: u32,
}

fn check_trial_order(rows: &[TraceRow]) -> Result<()> {
    for (i, w) in rows.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if a.episode != b.episode {
            continue;
        }
        let expected = a.trial + u32::from(a.delivery);
        if b.trial != expected {
            return Err(Error::MalformedTrace(format!(
                "row {}: trial {} follows trial {} (delivery {})",
                i + 1,
                b.trial,
                a.trial,
                a.delivery
            )));
        }
    }
    for (i, r) in rows.iter().enumerate() {
        if r.oven_check && (r.action != Action::Interact || r.oven_timer.is_none()) {
            return Err(Error::MalformedTrace(format!("row {i}: oven check without Interact on a cooking oven")));
        }
        if r.take_soup && !r.oven_check {
            return Err(Error::MalformedTrace(format!("row {i}: soup taken without an oven check")));
        }
    }
    Ok(())
}

/// Splits rows into complete trials: runs of equal `(episode, trial)` that
/// end in a delivery. A trial cut off by the end of its episode is dropped.
fn complete_trials(rows: &[TraceRow]) -> impl Iterator<Item = &[TraceRow]> {
    rows.chunk_by(|a, b| a.episode == b.episode && a.trial == b.trial)
        .filter(|t| t.last().is_some_and(|r| r.delivery))
}

fn first_check_in_trial(trial: &[TraceRow], target: u32) -> Option<u32> {
    let is_check = |r: &TraceRow| r.oven_check && r.number_value.is_none();
    let mut i = 0;
    while i < trial.len() {
        if !is_check(&trial[i]) {
            i += 1;
            continue;
        }
        let v = trial[i].oven_timer?;
        if v >= target {
            return Some(v);
        }
        let mut j = i;
        while j < trial.len() && trial[j].oven_check {
            if trial[j].take_soup {
                return Some(v);
            }
            j += 1;
        }
        i = j.max(i + 1);
    }
    None
}

/// At most one first oven check per complete trial, in trace order.
pub fn extract_first_oven_checks(rows: &[TraceRow], target: u32) -> Result<Vec<FirstOvenCheck>> {
    check_trial_order(rows)?;
    Ok(complete_trials(rows)
        .filter_map(|trial| {
            let v = first_check_in_trial(trial, target)?;
            Some(FirstOvenCheck { episode: trial[0].episode, trial: trial[0].trial, timer_value: v, target })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoupCounts {
    pub per_episode: Vec<u32>,
    pub mean: f64,
}

/// Deliveries per episode. Episodes are indexed by their `episode` field.
pub fn soups_per_episode(rows: &[TraceRow]) -> SoupCounts {
    let n = rows.iter().map(|r| r.episode as usize + 1).max().unwrap_or(0);
    let mut per_episode = vec![0u32; n];
    for r in rows.iter().filter(|r| r.delivery) {
        per_episode[r.episode as usize] += 1;
    }
    let mean = if n == 0 { 0.0 } else { per_episode.iter().map(|&c| f64::from(c)).sum::<f64>() / n as f64 };
    SoupCounts { per_episode, mean }
}

/// Pooled samples of one (task, target) condition, possibly over several
/// trained agents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionSamples {
    pub checks: Vec<FirstOvenCheck>,
    pub soups: Vec<u32>,
}

impl ConditionSamples {
    pub fn from_trace(trace: &EvalTrace) -> Result<Self> {
        Ok(ConditionSamples {
            checks: extract_first_oven_checks(&trace.rows, trace.meta.target)?,
            soups: soups_per_episode(&trace.rows).per_episode,
        })
    }

    pub fn extend(&mut self, other: ConditionSamples) {
        self.checks.extend(other.checks);
        self.soups.extend(other.soups);
    }

    pub fn values(&self) -> Vec<f64> {
        self.checks.iter().map(|c| f64::from(c.timer_value)).collect()
    }

    pub fn mean_check(&self) -> Option<f64> {
        mean(&self.values())
    }

    pub fn mean_soups(&self) -> Option<f64> {
        mean(&self.soups.iter().map(|&s| f64::from(s)).collect::<Vec<_>>())
    }
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

/// Single-task versus dual-task comparison at one cook time.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub target: u32,
    pub n_single: usize,
    pub n_dual: usize,
    pub mean_single: Option<f64>,
    pub mean_dual: Option<f64>,
    /// Dual minus single; `None` when either side has too few checks.
    pub test: Option<TTestResult>,
    pub soups_single: Option<f64>,
    pub soups_dual: Option<f64>,
    /// Dual soups over single soups.
    pub ratio: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn compare_conditions(
    single: &ConditionSamples,
    dual: &ConditionSamples,
    target: u32,
    mode: TestMode,
) -> Comparison {
    let mut warnings = Vec::new();
    let (a, b) = (dual.values(), single.values());
    let test = if a.len() < 2 || b.len() < 2 {
        warnings.push(format!("d{target}: too few first oven checks (single {}, dual {})", b.len(), a.len()));
        None
    } else {
        match t_test(&a, &b, mode) {
            Ok(t) => Some(t),
            Err(e) => {
                warnings.push(format!("d{target}: {e}"));
                None
            }
        }
    };
    let (soups_single, soups_dual) = (single.mean_soups(), dual.mean_soups());
    let ratio = match (soups_single, soups_dual) {
        (Some(s), Some(d)) if s > 0.0 => Some(d / s),
        _ => {
            warnings.push(format!("d{target}: soup ratio undefined"));
            None
        }
    };
    Comparison {
        target,
        n_single: b.len(),
        n_dual: a.len(),
        mean_single: single.mean_check(),
        mean_dual: dual.mean_check(),
        test,
        soups_single,
        soups_dual,
        ratio,
        warnings,
    }
}

pub const CHECKS_HEADER: &str = "task,target,episode,trial,value,seed";
pub const SUMMARY_HEADER: &str = "target,mean_T,mean_TN,t,df,p,soups_T,soups_TN,ratio";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_checks<W: Write>(mut out: W, task: TaskKind, seed: u64, checks: &[FirstOvenCheck]) -> std::io::Result<()> {
    for c in checks {
        writeln!(out, "{},{},{},{},{},{seed}", task.name(), c.target, c.episode, c.trial, c.timer_value)?;
    }
    Ok(())
}

pub fn write_summary<W: Write>(mut out: W, rows: &[Comparison]) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for c in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.target,
            opt(c.mean_single),
            opt(c.mean_dual),
            opt(c.test.map(|t| t.t)),
            opt(c.test.map(|t| t.df)),
            opt(c.test.map(|t| t.p_two_sided)),
            opt(c.soups_single),
            opt(c.soups_dual),
            opt(c.ratio)
        )?;
    }
    Ok(())
}
