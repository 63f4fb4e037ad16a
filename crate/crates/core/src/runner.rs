//! The `ovenlab` experiment runner: training, evaluation, reporting and the
//! full task x cook-time x seed grid.
//!
//! Each run lives in its own directory `{task}_d{target}_s{seed}` under the
//! output root:
//!
//! ```text
//! checkpoint.bin  curve.csv  trace.csv  hidden.bin  run.json
//! ```
//!
//! `manifest.json` at the root lists every run with a hash of everything
//! that determines its outputs. `run.json` records which stages finished
//! under that hash, so an interrupted grid resumes where it stopped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{self, compare_conditions, Comparison, ConditionSamples, TestMode};
use crate::env::{TaskKind, TARGETS};
use crate::net::checkpoint::Checkpoint;
use crate::net::Arch;
use crate::neural::{self, JumpStats, Spectrum};
use crate::train::{self, eval, EvalTrace, TrainConfig};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const DEFAULT_OUT: &str = "ovenlab-out";

pub fn code_version() -> String {
    format!("ovenlab {} checkpoint v{}", env!("CARGO_PKG_VERSION"), crate::net::checkpoint::VERSION)
}

#[derive(Debug, Parser)]
#[command(name = "ovenlab", version, about = "Interval timing in a cooking gridworld with recurrent PPO agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent.
    Train(TrainArgs),
    /// Run evaluation episodes from a checkpoint.
    Eval(EvalArgs),
    /// Analyse evaluated runs and write the report files.
    Report(ReportArgs),
    /// Train, evaluate and report the whole grid.
    Matrix(MatrixArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: TaskKind,
    #[arg(long, value_parser = clap::value_parser!(u32).range(7..=10))]
    pub duration: u32,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub steps: u64,
    #[arg(long, env = "OVENLAB_OUT", default_value = DEFAULT_OUT)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub episodes: u32,
    /// Defaults to the checkpoint's training seed.
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding the run directories.
    #[arg(long, env = "OVENLAB_OUT", default_value = DEFAULT_OUT)]
    pub runs: PathBuf,
    /// Defaults to `--runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "pooled")]
    pub test: TestMode,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 100_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 25)]
    pub episodes: u32,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_delimiter = ',', default_values_t = TARGETS)]
    pub durations: Vec<u32>,
    #[arg(long, env = "OVENLAB_OUT", default_value = DEFAULT_OUT)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
        Command::Matrix(a) => cmd_matrix(&a).map(|_| ()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub task: TaskKind,
    pub target: u32,
    pub seed: u64,
}

impl RunKey {
    pub fn dir_name(&self) -> String {
        format!("{}_d{}_s{}", self.task.name(), self.target, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    #[serde(flatten)]
    pub key: RunKey,
    pub steps: u64,
    pub episodes: u32,
    pub dir: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tasks: Vec<TaskKind>,
    pub targets: Vec<u32>,
    pub seeds: Vec<u64>,
    /// Shared hyperparameters; each run substitutes its own seed and steps.
    pub config: TrainConfig,
    pub out_dir: PathBuf,
    pub code_version: String,
    pub runs: Vec<RunEntry>,
}

impl ExperimentManifest {
    fn empty(out: &Path) -> Self {
        ExperimentManifest {
            tasks: vec![],
            targets: vec![],
            seeds: vec![],
            config: TrainConfig::default(),
            out_dir: out.to_path_buf(),
            code_version: code_version(),
            runs: vec![],
        }
    }

    pub fn grid(out: &Path, targets: &[u32], seeds: &[u64], steps: u64, episodes: u32) -> Self {
        let mut m = Self::empty(out);
        for task in TaskKind::ALL {
            for &target in targets {
                for &seed in seeds {
                    m.upsert(m.entry(RunKey { task, target, seed }, steps, episodes));
                }
            }
        }
        m
    }

    pub fn entry(&self, key: RunKey, steps: u64, episodes: u32) -> RunEntry {
        let cfg = self.run_config(key.seed, steps);
        let blob = serde_json::to_vec(&(&self.code_version, key, &cfg, episodes)).expect("plain data serializes");
        let hash = Sha256::digest(&blob).iter().map(|b| format!("{b:02x}")).collect();
        RunEntry { key, steps, episodes, dir: key.dir_name(), hash }
    }

    pub fn run_config(&self, seed: u64, steps: u64) -> TrainConfig {
        TrainConfig { seed, total_steps: steps, ..self.config.clone() }
    }

    /// Inserts or replaces the entry for `e.key`, keeping runs sorted and
    /// the summary fields in sync.
    pub fn upsert(&mut self, e: RunEntry) {
        self.runs.retain(|r| r.key != e.key);
        self.runs.push(e);
        self.runs.sort_by_key(|r| r.key);
        let mut tasks: Vec<_> = self.runs.iter().map(|r| r.key.task).collect();
        let mut targets: Vec<_> = self.runs.iter().map(|r| r.key.target).collect();
        let mut seeds: Vec<_> = self.runs.iter().map(|r| r.key.seed).collect();
        targets.sort_unstable();
        targets.dedup();
        tasks.sort();
        tasks.dedup();
        seeds.sort_unstable();
        seeds.dedup();
        (self.tasks, self.targets, self.seeds) = (tasks, targets, seeds);
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Trained,
    Evaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunRecord {
    hash: String,
    stage: Stage,
}

fn finished_stage(dir: &Path, hash: &str) -> Option<Stage> {
    let rec: RunRecord = serde_json::from_slice(&fs::read(dir.join(RUN_FILE)).ok()?).ok()?;
    let ok = rec.hash == hash
        && dir.join(CHECKPOINT_FILE).exists()
        && (rec.stage < Stage::Evaluated || dir.join(eval::TRACE_FILE).exists());
    ok.then_some(rec.stage)
}

fn mark(dir: &Path, hash: &str, stage: Stage) -> Result<()> {
    write_atomic(&dir.join(RUN_FILE), &serde_json::to_vec(&RunRecord { hash: hash.to_string(), stage })?)
}

fn train_run(manifest: &ExperimentManifest, e: &RunEntry) -> Result<Checkpoint> {
    let dir = manifest.out_dir.join(&e.dir);
    fs::create_dir_all(&dir)?;
    let cfg = manifest.run_config(e.key.seed, e.steps);
    log::info!("training {} ({} steps)", e.dir, e.steps);
    let out = train::train(e.key.task, e.key.target, &cfg)?;
    out.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let mut curve = Vec::new();
    train::write_curve(&mut curve, &out.curve)?;
    write_atomic(&dir.join(CURVE_FILE), &curve)?;
    mark(&dir, &e.hash, Stage::Trained)?;
    if let Some(last) = out.curve.last() {
        log::info!("{}: final mean episode reward {:.3}", e.dir, last.mean_ep_reward);
    }
    Ok(out.checkpoint)
}

pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let mut manifest = ExperimentManifest::load(&a.out)?.unwrap_or_else(|| ExperimentManifest::empty(&a.out));
    manifest.out_dir = a.out.clone();
    let e = manifest.entry(RunKey { task: a.task, target: a.duration, seed: a.seed }, a.steps, 25);
    manifest.upsert(e.clone());
    manifest.save(&a.out)?;
    train_run(&manifest, &e)?;
    let path = a.out.join(&e.dir).join(CHECKPOINT_FILE);
    println!("{}", path.display());
    Ok(path)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<PathBuf> {
    let ck = Checkpoint::load_expecting(&a.checkpoint, &Arch::standard())?;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let trace = train::evaluate(&ck, a.episodes, a.eval_seed.unwrap_or(ck.header.seed))?;
    trace.save(&out)?;
    println!(
        "{}: {} episodes, {} deliveries",
        out.join(eval::TRACE_FILE).display(),
        a.episodes,
        trace.total_deliveries()
    );
    Ok(out)
}

fn eval_run(manifest: &ExperimentManifest, e: &RunEntry, ck: &Checkpoint) -> Result<()> {
    let dir = manifest.out_dir.join(&e.dir);
    let trace = train::evaluate(ck, e.episodes, e.key.seed)?;
    trace.save(&dir)?;
    mark(&dir, &e.hash, Stage::Evaluated)
}

/// Trains and evaluates one grid cell, skipping stages already finished
/// under the same hash.
fn complete_run(manifest: &ExperimentManifest, e: &RunEntry) -> Result<bool> {
    let dir = manifest.out_dir.join(&e.dir);
    match finished_stage(&dir, &e.hash) {
        Some(Stage::Evaluated) => Ok(false),
        Some(Stage::Trained) => {
            let ck = Checkpoint::load_expecting(&dir.join(CHECKPOINT_FILE), &manifest.config.arch)?;
            eval_run(manifest, e, &ck)?;
            Ok(true)
        }
        None => {
            let ck = train_run(manifest, e)?;
            eval_run(manifest, e, &ck)?;
            Ok(true)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOutcome {
    pub executed: Vec<RunKey>,
    pub skipped: Vec<RunKey>,
    pub failed: Vec<(RunKey, String)>,
    pub report: Report,
}

pub fn cmd_matrix(a: &MatrixArgs) -> Result<MatrixOutcome> {
    if a.seeds.is_empty() || a.workers == 0 {
        return Err(Error::Config("need at least one seed and one worker".into()));
    }
    if let Some(d) = a.durations.iter().find(|d| !TARGETS.contains(d)) {
        return Err(Error::Config(format!("duration {d} outside 7..=10")));
    }
    let manifest = ExperimentManifest::grid(&a.out, &a.durations, &a.seeds, a.steps, a.episodes);
    manifest.save(&a.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(RunKey, Result<bool>)> = pool.install(|| {
        use rayon::prelude::*;
        manifest.runs.par_iter().map(|e| (e.key, complete_run(&manifest, e))).collect()
    });
    let mut outcome = MatrixOutcome { executed: vec![], skipped: vec![], failed: vec![], report: Report::default() };
    for (key, r) in results {
        match r {
            Ok(true) => outcome.executed.push(key),
            Ok(false) => outcome.skipped.push(key),
            Err(e) => {
                log::error!("{}: {e}", key.dir_name());
                outcome.failed.push((key, e.to_string()));
            }
        }
    }
    log::info!(
        "grid: {} run, {} already complete, {} failed",
        outcome.executed.len(),
        outcome.skipped.len(),
        outcome.failed.len()
    );
    outcome.report = cmd_report(&ReportArgs { runs: a.out.clone(), out: None, test: TestMode::Pooled })?;
    Ok(outcome)
}

/// Per-condition neural summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuralSummary {
    pub task: TaskKind,
    pub target: u32,
    pub runs: usize,
    /// Top non-DC peaks of the seed-averaged first-episode PC1 spectrum.
    pub peak_frequencies: Vec<f64>,
    pub target_frequency: f64,
    pub flat_episodes: usize,
    pub episodes: usize,
    pub mean_pc1_variance_ratio: f64,
    pub jump_delivery: Option<f64>,
    pub jump_other: Option<f64>,
    pub jump_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub target: u32,
    pub seeds_single: Vec<u64>,
    pub seeds_dual: Vec<u64>,
    pub n_single: usize,
    pub n_dual: usize,
    pub mean_single: Option<f64>,
    pub mean_dual: Option<f64>,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub soups_single: Option<f64>,
    pub soups_dual: Option<f64>,
    pub ratio: Option<f64>,
}

impl From<(&Comparison, Vec<u64>, Vec<u64>)> for SummaryRow {
    fn from((c, seeds_single, seeds_dual): (&Comparison, Vec<u64>, Vec<u64>)) -> Self {
        SummaryRow {
            target: c.target,
            seeds_single,
            seeds_dual,
            n_single: c.n_single,
            n_dual: c.n_dual,
            mean_single: c.mean_single,
            mean_dual: c.mean_dual,
            t: c.test.map(|t| t.t),
            df: c.test.map(|t| t.df),
            p: c.test.map(|t| t.p_two_sided),
            soups_single: c.soups_single,
            soups_dual: c.soups_dual,
            ratio: c.ratio,
        }
    }
}

/// Everything `report` computes, also written as `report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub neural: Vec<NeuralSummary>,
    pub warnings: Vec<String>,
}

struct LoadedRun {
    seed: u64,
    trace: EvalTrace,
}

type Conditions = BTreeMap<(TaskKind, u32), Vec<LoadedRun>>;

fn discover(root: &Path) -> Result<(Conditions, Vec<String>)> {
    let allowed: Option<Vec<String>> =
        ExperimentManifest::load(root)?.map(|m| m.runs.into_iter().map(|r| r.dir).collect());
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(eval::TRACE_FILE).exists() && p.join(eval::HIDDEN_FILE).exists())
        .collect();
    dirs.sort();
    let mut groups = Conditions::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if allowed.as_ref().is_some_and(|a| !a.contains(&name)) {
            warnings.push(format!("{name}: not in the manifest, ignored"));
            continue;
        }
        match EvalTrace::load(&dir) {
            Ok(trace) => {
                let seed = trace.meta.checkpoint_seed;
                groups.entry((trace.meta.task, trace.meta.target)).or_default().push(LoadedRun { seed, trace });
            }
            Err(e) => warnings.push(format!("{name}: {e}")),
        }
    }
    Ok((groups, warnings))
}

fn csv_line(out: &mut Vec<u8>, line: &str) {
    out.extend_from_slice(line.as_bytes());
    out.push(b'\n');
}

pub fn cmd_report(a: &ReportArgs) -> Result<Report> {
    let out_dir = a.out.clone().unwrap_or_else(|| a.runs.clone());
    fs::create_dir_all(&out_dir)?;
    let (groups, mut warnings) = discover(&a.runs)?;

    let mut checks_csv = Vec::new();
    csv_line(&mut checks_csv, behavior::CHECKS_HEADER);
    let mut spectra_csv = Vec::new();
    csv_line(&mut spectra_csv, neural::SPECTRA_HEADER);
    let mut runs_csv = Vec::new();
    csv_line(&mut runs_csv, &format!("{},seed,episode", neural::SPECTRA_HEADER));
    let mut mean_csv = Vec::new();
    csv_line(&mut mean_csv, neural::SPECTRA_HEADER);
    let mut pca_csv = Vec::new();
    csv_line(&mut pca_csv, neural::PCA_HEADER);

    let mut samples: BTreeMap<(TaskKind, u32), ConditionSamples> = BTreeMap::new();
    let mut neural_rows = Vec::new();
    for (&(task, target), runs) in &groups {
        let mut pooled = ConditionSamples::default();
        let mut first_spectra: Vec<Spectrum> = Vec::new();
        let mut all_spectra: Vec<Spectrum> = Vec::new();
        let mut jumps: Option<JumpStats> = None;
        let (mut flat, mut episodes, mut var1) = (0, 0, 0.0);
        for run in runs {
            let s = ConditionSamples::from_trace(&run.trace)?;
            behavior::write_checks(&mut checks_csv, task, run.seed, &s.checks)?;
            pooled.extend(s);
            for ep in 0..run.trace.meta.episodes {
                let rep = match neural::spectral_report(&run.trace, ep) {
                    Ok(r) => r,
                    Err(e) => {
                        warnings.push(format!("{task} d{target} s{} episode {ep}: {e}", run.seed));
                        continue;
                    }
                };
                neural::write_spectrum(&mut runs_csv, task, target, &rep.spectrum, &format!(",{},{ep}", run.seed))?;
                if ep == 0 {
                    neural::write_pca(&mut pca_csv, &rep, run.seed)?;
                    first_spectra.push(rep.spectrum.clone());
                }
                jumps = Some(jumps.map_or(rep.jumps, |j| j.merge(rep.jumps)));
                flat += usize::from(rep.flat);
                episodes += 1;
                var1 += rep.pca.explained_variance_ratio[0];
                all_spectra.push(rep.spectrum);
            }
        }
        if let (Ok(first), Ok(mean)) = (neural::mean_spectrum(&first_spectra), neural::mean_spectrum(&all_spectra)) {
            neural::write_spectrum(&mut spectra_csv, task, target, &first, "")?;
            neural::write_spectrum(&mut mean_csv, task, target, &mean, "")?;
            let j = jumps.expect("episodes were analysed");
            neural_rows.push(NeuralSummary {
                task,
                target,
                runs: runs.len(),
                peak_frequencies: first.peaks(3).iter().map(|p| p.frequency).collect(),
                target_frequency: 1.0 / f64::from(target),
                flat_episodes: flat,
                episodes,
                mean_pc1_variance_ratio: var1 / episodes as f64,
                jump_delivery: (j.delivery_count > 0).then(|| j.delivery_sum / j.delivery_count as f64),
                jump_other: (j.other_count > 0).then(|| j.other_sum / j.other_count as f64),
                jump_ratio: j.ratio(),
            });
        }
        samples.insert((task, target), pooled);
    }

    let seeds_of = |task, target| -> Vec<u64> {
        groups.get(&(task, target)).map(|r| r.iter().map(|r| r.seed).collect()).unwrap_or_default()
    };
    let mut comparisons = Vec::new();
    let mut summary = Vec::new();
    let targets: std::collections::BTreeSet<u32> = groups.keys().map(|&(_, t)| t).collect();
    for target in targets {
        match (samples.get(&(TaskKind::SingleT, target)), samples.get(&(TaskKind::DualTN, target))) {
            (Some(s), Some(d)) => {
                let c = compare_conditions(s, d, target, a.test);
                warnings.extend(c.warnings.iter().cloned());
                summary.push(SummaryRow::from((&c, seeds_of(TaskKind::SingleT, target), seeds_of(TaskKind::DualTN, target))));
                comparisons.push(c);
            }
            (s, _) => {
                let missing = if s.is_none() { TaskKind::SingleT } else { TaskKind::DualTN };
                warnings.push(format!("d{target}: no {} trace, condition skipped", missing.label()));
            }
        }
    }

    let mut summary_csv = Vec::new();
    behavior::write_summary(&mut summary_csv, &comparisons)?;
    write_atomic(&out_dir.join("first_oven_checks.csv"), &checks_csv)?;
    write_atomic(&out_dir.join("summary.csv"), &summary_csv)?;
    write_atomic(&out_dir.join("spectra.csv"), &spectra_csv)?;
    write_atomic(&out_dir.join("spectra_runs.csv"), &runs_csv)?;
    write_atomic(&out_dir.join("spectra_mean.csv"), &mean_csv)?;
    write_atomic(&out_dir.join("pca.csv"), &pca_csv)?;
    let report = Report { summary, neural: neural_rows, warnings };
    write_atomic(&out_dir.join(REPORT_FILE), &serde_json::to_vec_pretty(&report)?)?;

    for w in &report.warnings {
        log::warn!("{w}");
    }
    println!("{}", format_table(&report));
    Ok(report)
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "-".into())
}

pub fn format_table(r: &Report) -> String {
    let mut s = format!(
        "{:>3} {:>7} {:>7} {:>7} {:>7} {:>9} {:>7} {:>7} {:>6}\n",
        "d", "T", "T+N", "t", "df", "p", "soupsT", "soupsTN", "ratio"
    );
    for row in &r.summary {
        s.push_str(&format!(
            "{:>3} {:>7} {:>7} {:>7} {:>7} {:>9} {:>7} {:>7} {:>6}\n",
            row.target,
            cell(row.mean_single, 2),
            cell(row.mean_dual, 2),
            cell(row.t, 3),
            cell(row.df, 1),
            row.p.map(|p| format!("{p:.2e}")).unwrap_or_else(|| "-".into()),
            cell(row.soups_single, 2),
            cell(row.soups_dual, 2),
            cell(row.ratio, 3)
        ));
    }
    s
}
