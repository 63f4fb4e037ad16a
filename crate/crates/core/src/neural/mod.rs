//! Hidden-state dynamics: principal components of the LSTM output over an
//! evaluation episode and the spectrum of the first component.

use std::io::Write;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::env::TaskKind;
use crate::train::EvalTrace;
use crate::{Error, Result};

/// Steps analysed per episode.
pub const WINDOW: usize = 100;

/// A `rows x cols` matrix of hidden activations, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMatrix {
    inner: DMatrix<f64>,
}

impl HiddenMatrix {
    pub fn new(rows: usize, cols: usize, row_major: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 || row_major.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", row_major.len())));
        }
        if row_major.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hidden matrix".into()));
        }
        Ok(HiddenMatrix { inner: DMatrix::from_row_slice(rows, cols, row_major) })
    }

    /// The first [`WINDOW`] hidden vectors of one evaluation episode.
    pub fn from_trace(trace: &EvalTrace, episode: u32) -> Result<Self> {
        let m = &trace.meta;
        if episode >= m.episodes || (m.steps_per_episode as usize) < WINDOW {
            return Err(Error::Shape(format!(
                "episode {episode} of {} with {} steps cannot fill a {WINDOW}-step window",
                m.episodes, m.steps_per_episode
            )));
        }
        let start = episode as usize * m.steps_per_episode as usize;
        let w = m.hidden_width;
        let values: Vec<f64> = trace.hidden[start * w..(start + WINDOW) * w].iter().map(|&v| f64::from(v)).collect();
        Self::new(WINDOW, w, &values)
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.inner[(r, c)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit-length principal axes, strongest first.
    pub components: Vec<Vec<f64>>,
    /// `scores[t][i]`: projection of centered row `t` on component `i`.
    pub scores: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Set when the matrix has no variance at all.
    pub degenerate: bool,
}

impl PcaResult {
    pub fn score_series(&self, component: usize) -> Vec<f64> {
        self.scores.iter().map(|s| s[component]).collect()
    }
}

/// Principal component analysis by singular value decomposition of the
/// column-centered matrix. Each component is signed so that its
/// largest-magnitude entry is positive.
pub fn pca(m: &HiddenMatrix, k: usize) -> Result<PcaResult> {
    let (n, d) = (m.rows(), m.cols());
    if k == 0 || k > n.min(d) {
        return Err(Error::Config(format!("k = {k} outside 1..={}", n.min(d))));
    }
    let mean: Vec<f64> = m.inner.column_iter().map(|c| c.mean()).collect();
    let mut centered = m.inner.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let total: f64 = centered.iter().map(|v| v * v).sum();
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut components = Vec::with_capacity(k);
    let mut singular_values = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut c: Vec<f64> = v_t.row(i).iter().copied().collect();
        let big = c.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if big < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        singular_values.push(svd.singular_values[i]);
    }
    let scores = centered
        .row_iter()
        .map(|row| components.iter().map(|c| row.iter().zip(c).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let degenerate = total <= f64::EPSILON * (n * d) as f64 * m.inner.amax().max(1.0).powi(2);
    let explained_variance_ratio =
        singular_values.iter().map(|s| if degenerate { 0.0 } else { s * s / total }).collect();
    Ok(PcaResult { mean, components, scores, singular_values, explained_variance_ratio, degenerate })
}

/// Full complex DFT, `X_j = sum_t x_t exp(-2 pi i j t / N)`.
pub fn dft(series: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Cycles per step, `j / N` for bins `0..=N/2`.
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub target_frequency: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    pub frequency: f64,
    pub period: f64,
    pub magnitude: f64,
}

impl Spectrum {
    pub fn with_target(mut self, target: u32) -> Self {
        self.target_frequency = Some(1.0 / f64::from(target));
        self
    }

    pub fn bins(&self) -> usize {
        self.magnitudes.len()
    }

    /// Bin closest to the target frequency.
    pub fn target_bin(&self) -> Option<usize> {
        self.target_frequency.map(|f| ((f * self.n as f64).round() as usize).min(self.bins() - 1))
    }

    /// The `count` largest non-DC local maxima, strongest first.
    pub fn peaks(&self, count: usize) -> Vec<Peak> {
        let m = &self.magnitudes;
        let mut peaks: Vec<Peak> = (1..m.len())
            .filter(|&j| m[j] >= m[j - 1] && (j + 1 == m.len() || m[j] >= m[j + 1]))
            .map(|j| Peak { bin: j, frequency: self.frequencies[j], period: 1.0 / self.frequencies[j], magnitude: m[j] })
            .collect();
        peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.bin.cmp(&b.bin)));
        peaks.truncate(count);
        peaks
    }

    /// No non-DC bin exceeds three times the median non-DC magnitude.
    pub fn is_flat(&self) -> bool {
        let mut rest = self.magnitudes[1..].to_vec();
        if rest.is_empty() {
            return true;
        }
        rest.sort_by(f64::total_cmp);
        let mid = rest.len() / 2;
        let median = if rest.len().is_multiple_of(2) { 0.5 * (rest[mid - 1] + rest[mid]) } else { rest[mid] };
        rest[rest.len() - 1] <= 3.0 * median
    }
}

/// Magnitudes of the real-input DFT at bins `0..=N/2`.
pub fn dft_magnitude(series: &[f64]) -> Spectrum {
    let n = series.len();
    let full = dft(series);
    let bins = n / 2 + 1;
    Spectrum {
        frequencies: (0..bins).map(|j| j as f64 / n as f64).collect(),
        magnitudes: full.iter().take(bins).map(|c| c.norm()).collect(),
        target_frequency: None,
        n,
    }
}

/// Averages magnitudes of spectra that share a length.
pub fn mean_spectrum(spectra: &[Spectrum]) -> Result<Spectrum> {
    let first = spectra.first().ok_or_else(|| Error::Degenerate("no spectra to average".into()))?;
    if spectra.iter().any(|s| s.n != first.n) {
        return Err(Error::Shape("spectra of different lengths".into()));
    }
    let mut out = first.clone();
    for (j, m) in out.magnitudes.iter_mut().enumerate() {
        *m = spectra.iter().map(|s| s.magnitudes[j]).sum::<f64>() / spectra.len() as f64;
    }
    Ok(out)
}

/// Mean absolute PC1 step `|s[t+1] - s[t]|` after delivery steps versus
/// after all other steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpStats {
    pub delivery_sum: f64,
    pub delivery_count: usize,
    pub other_sum: f64,
    pub other_count: usize,
}

impl JumpStats {
    pub fn of(series: &[f64], deliveries: &[bool]) -> Self {
        let mut s = JumpStats { delivery_sum: 0.0, delivery_count: 0, other_sum: 0.0, other_count: 0 };
        for t in 0..series.len().saturating_sub(1) {
            let jump = (series[t + 1] - series[t]).abs();
            if deliveries[t] {
                s.delivery_sum += jump;
                s.delivery_count += 1;
            } else {
                s.other_sum += jump;
                s.other_count += 1;
            }
        }
        s
    }

    pub fn merge(self, o: JumpStats) -> Self {
        JumpStats {
            delivery_sum: self.delivery_sum + o.delivery_sum,
            delivery_count: self.delivery_count + o.delivery_count,
            other_sum: self.other_sum + o.other_sum,
            other_count: self.other_count + o.other_count,
        }
    }

    pub fn ratio(&self) -> Option<f64> {
        if self.delivery_count == 0 || self.other_count == 0 || self.other_sum == 0.0 {
            return None;
        }
        Some((self.delivery_sum / self.delivery_count as f64) / (self.other_sum / self.other_count as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub task: TaskKind,
    pub target: u32,
    pub episode: u32,
    pub pca: PcaResult,
    pub spectrum: Spectrum,
    pub peaks: Vec<Peak>,
    pub flat: bool,
    pub deliveries: Vec<bool>,
    pub jumps: JumpStats,
}

/// PCA (three components) of one episode's first [`WINDOW`] hidden states
/// and the PC1 spectrum marked at the cook-time frequency.
pub fn spectral_report(trace: &EvalTrace, episode: u32) -> Result<SpectralReport> {
    let matrix = HiddenMatrix::from_trace(trace, episode)?;
    let pca = pca(&matrix, 3)?;
    let pc1 = pca.score_series(0);
    let spectrum = dft_magnitude(&pc1).with_target(trace.meta.target);
    let deliveries: Vec<bool> = trace.episode_rows(episode)[..WINDOW].iter().map(|r| r.delivery).collect();
    Ok(SpectralReport {
        task: trace.meta.task,
        target: trace.meta.target,
        episode,
        peaks: spectrum.peaks(3),
        flat: spectrum.is_flat(),
        jumps: JumpStats::of(&pc1, &deliveries),
        spectrum,
        deliveries,
        pca,
    })
}

pub const SPECTRA_HEADER: &str = "task,target,bin,frequency,magnitude,is_target_bin";
pub const PCA_HEADER: &str = "task,target,step,pc1,pc2,pc3,delivery_flag,seed";

/// Spectrum rows; `suffix` is appended verbatim to every line.
pub fn write_spectrum<W: Write>(mut out: W, task: TaskKind, target: u32, s: &Spectrum, suffix: &str) -> std::io::Result<()> {
    let tb = s.target_bin();
    for j in 0..s.bins() {
        writeln!(
            out,
            "{},{target},{j},{},{},{}{suffix}",
            task.name(),
            s.frequencies[j],
            s.magnitudes[j],
            u8::from(tb == Some(j))
        )?;
    }
    Ok(())
}

pub fn write_pca<W: Write>(mut out: W, r: &SpectralReport, seed: u64) -> std::io::Result<()> {
    for (t, s) in r.pca.scores.iter().enumerate() {
        writeln!(
            out,
            "{},{},{t},{},{},{},{},{seed}",
            r.task.name(),
            r.target,
            s[0],
            s[1],
            s[2],
            u8::from(r.deliveries[t])
        )?;
    }
    Ok(())
}
