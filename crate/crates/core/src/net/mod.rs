//! Recurrent actor-critic network with hand-written backpropagation.
//!
//! ```text
//! obs (6x3x5) -> 1x1 conv (32 ch) + ReLU -> flatten (480)
//!             -> LSTM cell (256) -> policy MLP (64, tanh) -> 6 logits
//!                                -> value  MLP (64, tanh) -> 1 value
//! ```
//!
//! Everything is generic over [`Real`] so the same code path can be checked
//! against finite differences in `f64` while training runs in `f32`.

pub mod checkpoint;
mod init;
pub mod linalg;
pub mod policy;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use init::init_params;
pub use linalg::Real;
use linalg::{axpy, gemm, matvec_acc, matvec_t_acc, outer_acc, sigmoid, Mat};

use crate::env::{Action, CHANNELS, HEIGHT, WIDTH};
use crate::{Error, Result};

/// Layer sizes. [`Arch::standard`] is the experiment network; small
/// instances are used for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv_channels: usize,
    pub hidden: usize,
    pub mlp: usize,
    pub actions: usize,
}

impl Arch {
    pub const fn standard() -> Self {
        Arch {
            in_channels: CHANNELS,
            height: HEIGHT,
            width: WIDTH,
            conv_channels: 32,
            hidden: 256,
            mlp: 64,
            actions: Action::COUNT,
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn obs_len(&self) -> usize {
        self.in_channels * self.cells()
    }

    pub fn features(&self) -> usize {
        self.conv_channels * self.cells()
    }

    pub fn gates(&self) -> usize {
        4 * self.hidden
    }

    pub fn blocks(&self) -> Blocks {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (h, m, a) = (self.hidden, self.mlp, self.actions);
        let g = self.gates();
        Blocks {
            conv_w: take(self.conv_channels * self.in_channels),
            conv_b: take(self.conv_channels),
            lstm_wx: take(g * self.features()),
            lstm_wh: take(g * h),
            lstm_b: take(g),
            pi_w1: take(m * h),
            pi_b1: take(m),
            pi_w2: take(a * m),
            pi_b2: take(a),
            v_w1: take(m * h),
            v_b1: take(m),
            v_w2: take(m),
            v_b2: take(1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().v_b2.end
    }
}

/// Offsets of each parameter array inside the flat parameter vector, in
/// storage (and checkpoint) order. Matrices are row-major `out x in`; LSTM
/// gate rows are stacked input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks {
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    pub lstm_wx: Range<usize>,
    pub lstm_wh: Range<usize>,
    pub lstm_b: Range<usize>,
    pub pi_w1: Range<usize>,
    pub pi_b1: Range<usize>,
    pub pi_w2: Range<usize>,
    pub pi_b2: Range<usize>,
    pub v_w1: Range<usize>,
    pub v_b1: Range<usize>,
    pub v_w2: Range<usize>,
    pub v_b2: Range<usize>,
}

impl Blocks {
    pub fn named(&self) -> [(&'static str, Range<usize>); 13] {
        [
            ("conv_w", self.conv_w.clone()),
            ("conv_b", self.conv_b.clone()),
            ("lstm_wx", self.lstm_wx.clone()),
            ("lstm_wh", self.lstm_wh.clone()),
            ("lstm_b", self.lstm_b.clone()),
            ("pi_w1", self.pi_w1.clone()),
            ("pi_b1", self.pi_b1.clone()),
            ("pi_w2", self.pi_w2.clone()),
            ("pi_b2", self.pi_b2.clone()),
            ("v_w1", self.v_w1.clone()),
            ("v_b1", self.v_b1.clone()),
            ("v_w2", self.v_w2.clone()),
            ("v_b2", self.v_b2.clone()),
        ]
    }
}

/// All learnable weights as one flat vector; gradients share the type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<F> {
    arch: Arch,
    blocks: Blocks,
    values: Vec<F>,
}

pub type ParamGrads<F> = NetParams<F>;

impl<F: Real> NetParams<F> {
    pub fn zeros(arch: Arch) -> Self {
        NetParams { blocks: arch.blocks(), values: vec![F::zero(); arch.param_count()], arch }
    }

    pub fn from_values(arch: Arch, values: Vec<F>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(NetParams { blocks: arch.blocks(), values, arch })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn blocks(&self) -> &Blocks {
        &self.blocks
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn block(&self, r: &Range<usize>) -> &[F] {
        &self.values[r.clone()]
    }

    pub fn block_mut(&mut self, r: &Range<usize>) -> &mut [F] {
        &mut self.values[r.clone()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> F {
        self.values.iter().map(|&v| v * v).sum::<F>().sqrt()
    }

    /// Converts to another precision.
    pub fn cast<G: Real>(&self) -> NetParams<G> {
        NetParams {
            arch: self.arch,
            blocks: self.blocks.clone(),
            values: self.values.iter().map(|v| G::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }
}

/// LSTM carry `(h, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Real> HiddenState<F> {
    pub fn zeros(width: usize) -> Self {
        HiddenState { h: vec![F::zero(); width], c: vec![F::zero(); width] }
    }

    pub fn width(&self) -> usize {
        self.h.len()
    }
}

/// Activations of a forward pass over a sequence, kept for [`backward`].
///
/// All per-step arrays are stored step-major.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    arch: Arch,
    len: usize,
    starts: Vec<bool>,
    obs: Vec<F>,
    feats: Vec<F>,
    h_prev: Vec<F>,
    c_prev: Vec<F>,
    gates: Vec<F>,
    tanh_c: Vec<F>,
    h: Vec<F>,
    c: Vec<F>,
    pi_hidden: Vec<F>,
    v_hidden: Vec<F>,
    logits: Vec<F>,
    values: Vec<F>,
}

impl<F: Real> Tape<F> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn logits(&self, t: usize) -> &[F] {
        let a = self.arch.actions;
        &self.logits[t * a..(t + 1) * a]
    }

    pub fn value(&self, t: usize) -> F {
        self.values[t]
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Hidden output `h` after step `t`.
    pub fn h(&self, t: usize) -> &[F] {
        let w = self.arch.hidden;
        &self.h[t * w..(t + 1) * w]
    }

    /// Carry after the last step.
    pub fn final_hidden(&self) -> HiddenState<F> {
        let w = self.arch.hidden;
        let t = self.len - 1;
        HiddenState { h: self.h[t * w..(t + 1) * w].to_vec(), c: self.c[t * w..(t + 1) * w].to_vec() }
    }
}

/// Output of a single-step forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOut<F> {
    pub logits: Vec<F>,
    pub value: F,
    pub new_hidden: HiddenState<F>,
    pub tape: Tape<F>,
}

/// One recurrent step from `hidden`.
pub fn forward<F: Real>(params: &NetParams<F>, obs: &[F], hidden: &HiddenState<F>) -> Result<ForwardOut<F>> {
    let tape = forward_sequence(params, obs, hidden, &[false])?;
    Ok(ForwardOut {
        logits: tape.logits(0).to_vec(),
        value: tape.value(0),
        new_hidden: tape.final_hidden(),
        tape,
    })
}

/// Runs `starts.len()` consecutive steps. `obs` holds one observation per
/// step; where `starts[t]` is set the carry is zeroed before step `t`
/// (episode boundary), otherwise step 0 begins from `initial`.
pub fn forward_sequence<F: Real>(
    params: &NetParams<F>,
    obs: &[F],
    initial: &HiddenState<F>,
    starts: &[bool],
) -> Result<Tape<F>> {
    let arch = *params.arch();
    let len = starts.len();
    let (hw, g, nf, na, nm) = (arch.hidden, arch.gates(), arch.features(), arch.actions, arch.mlp);
    if len == 0 {
        return Err(Error::Shape("empty sequence".into()));
    }
    if obs.len() != len * arch.obs_len() {
        return Err(Error::Shape(format!(
            "observations hold {} values, expected {} x {}",
            obs.len(),
            len,
            arch.obs_len()
        )));
    }
    if initial.h.len() != hw || initial.c.len() != hw {
        return Err(Error::Shape(format!("hidden width {} != {}", initial.h.len(), hw)));
    }
    if let Some(bad) = obs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observation value at index {bad}")));
    }

    let b = params.blocks().clone();
    let cells = arch.cells();

    // 1x1 convolution + ReLU, flattened channel-major.
    let conv_w = params.block(&b.conv_w);
    let conv_b = params.block(&b.conv_b);
    let mut feats = vec![F::zero(); len * nf];
    for t in 0..len {
        let x = &obs[t * arch.obs_len()..(t + 1) * arch.obs_len()];
        let out = &mut feats[t * nf..(t + 1) * nf];
        for (ch, plane) in out.chunks_exact_mut(cells).enumerate() {
            plane.fill(conv_b[ch]);
            for k in 0..arch.in_channels {
                axpy(conv_w[ch * arch.in_channels + k], &x[k * cells..(k + 1) * cells], plane);
            }
            for v in plane.iter_mut() {
                *v = v.max(F::zero());
            }
        }
    }

    // Input projection for every step, row by row so each element is the
    // same dot product whatever the sequence length.
    let mut zx = vec![F::zero(); len * g];
    for (r, row) in params.block(&b.lstm_wx).chunks_exact(nf).enumerate() {
        for t in 0..len {
            zx[t * g + r] = linalg::dot(row, &feats[t * nf..(t + 1) * nf]);
        }
    }

    let wh = params.block(&b.lstm_wh);
    let bias = params.block(&b.lstm_b);
    let mut tape = Tape {
        arch,
        len,
        starts: starts.to_vec(),
        obs: obs.to_vec(),
        feats,
        h_prev: vec![F::zero(); len * hw],
        c_prev: vec![F::zero(); len * hw],
        gates: vec![F::zero(); len * g],
        tanh_c: vec![F::zero(); len * hw],
        h: vec![F::zero(); len * hw],
        c: vec![F::zero(); len * hw],
        pi_hidden: vec![F::zero(); len * nm],
        v_hidden: vec![F::zero(); len * nm],
        logits: vec![F::zero(); len * na],
        values: vec![F::zero(); len],
    };

    for t in 0..len {
        let s = t * hw..(t + 1) * hw;
        if !starts[t] {
            if t == 0 {
                tape.h_prev[s.clone()].copy_from_slice(&initial.h);
                tape.c_prev[s.clone()].copy_from_slice(&initial.c);
            } else {
                let p = (t - 1) * hw..t * hw;
                let (h, c) = (&tape.h[p.clone()], &tape.c[p]);
                tape.h_prev[s.clone()].copy_from_slice(h);
                tape.c_prev[s.clone()].copy_from_slice(c);
            }
        }

        let z = &mut tape.gates[t * g..(t + 1) * g];
        z.copy_from_slice(&zx[t * g..(t + 1) * g]);
        for (zi, &bi) in z.iter_mut().zip(bias) {
            *zi += bi;
        }
        matvec_acc(wh, &tape.h_prev[s.clone()], z);
        for v in &mut z[..2 * hw] {
            *v = sigmoid(*v);
        }
        for v in &mut z[2 * hw..3 * hw] {
            *v = v.tanh();
        }
        for v in &mut z[3 * hw..] {
            *v = sigmoid(*v);
        }

        for j in 0..hw {
            let (i, f, gg, o) = (z[j], z[hw + j], z[2 * hw + j], z[3 * hw + j]);
            let c = f * tape.c_prev[s.start + j] + i * gg;
            let tc = c.tanh();
            tape.c[s.start + j] = c;
            tape.tanh_c[s.start + j] = tc;
            tape.h[s.start + j] = o * tc;
        }

        let h = &tape.h[s.clone()];
        let a = &mut tape.pi_hidden[t * nm..(t + 1) * nm];
        a.copy_from_slice(params.block(&b.pi_b1));
        matvec_acc(params.block(&b.pi_w1), h, a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        let logits = &mut tape.logits[t * na..(t + 1) * na];
        logits.copy_from_slice(params.block(&b.pi_b2));
        matvec_acc(params.block(&b.pi_w2), a, logits);

        let a = &mut tape.v_hidden[t * nm..(t + 1) * nm];
        a.copy_from_slice(params.block(&b.v_b1));
        matvec_acc(params.block(&b.v_w1), h, a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        let mut value = params.block(&b.v_b2)[0];
        value += linalg::dot(params.block(&b.v_w2), a);
        tape.values[t] = value;
    }
    Ok(tape)
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient at each step's logits (`len x actions`) and value (`len`).
///
/// Backpropagation runs through time across the whole tape; it stops at the
/// first step and at every episode start, whose carry is a constant.
pub fn backward<F: Real>(
    params: &NetParams<F>,
    tape: &Tape<F>,
    dlogits: &[F],
    dvalues: &[F],
) -> Result<ParamGrads<F>> {
    let arch = *params.arch();
    if tape.arch != arch {
        return Err(Error::ArchMismatch(format!("tape {:?} vs params {:?}", tape.arch, arch)));
    }
    let len = tape.len;
    if dlogits.len() != len * arch.actions || dvalues.len() != len {
        return Err(Error::Shape(format!(
            "upstream gradients ({}, {}) do not match a tape of {} steps",
            dlogits.len(),
            dvalues.len(),
            len
        )));
    }
    let (hw, g, nf, na, nm) = (arch.hidden, arch.gates(), arch.features(), arch.actions, arch.mlp);
    let b = params.blocks().clone();
    let mut grads = NetParams::zeros(arch);

    let mut dz_all = vec![F::zero(); len * g];
    let mut dh_next = vec![F::zero(); hw];
    let mut dc_next = vec![F::zero(); hw];
    let mut dh = vec![F::zero(); hw];
    let mut dpre = vec![F::zero(); nm];
    let one = F::one();

    for t in (0..len).rev() {
        let s = t * hw..(t + 1) * hw;
        let h = &tape.h[s.clone()];
        dh.copy_from_slice(&dh_next);

        // value head
        let dv = dvalues[t];
        let va = &tape.v_hidden[t * nm..(t + 1) * nm];
        if dv != F::zero() {
            grads.block_mut(&b.v_b2)[0] += dv;
            axpy(dv, va, grads.block_mut(&b.v_w2));
            for ((d, &w), &a) in dpre.iter_mut().zip(params.block(&b.v_w2)).zip(va) {
                *d = dv * w * (one - a * a);
            }
            outer_acc(&dpre, h, grads.block_mut(&b.v_w1));
            axpy(one, &dpre, grads.block_mut(&b.v_b1));
            matvec_t_acc(params.block(&b.v_w1), &dpre, &mut dh);
        }

        // policy head
        let dl = &dlogits[t * na..(t + 1) * na];
        if dl.iter().any(|&v| v != F::zero()) {
            let pa = &tape.pi_hidden[t * nm..(t + 1) * nm];
            outer_acc(dl, pa, grads.block_mut(&b.pi_w2));
            axpy(one, dl, grads.block_mut(&b.pi_b2));
            dpre.fill(F::zero());
            matvec_t_acc(params.block(&b.pi_w2), dl, &mut dpre);
            for (d, &a) in dpre.iter_mut().zip(pa) {
                *d *= one - a * a;
            }
            outer_acc(&dpre, h, grads.block_mut(&b.pi_w1));
            axpy(one, &dpre, grads.block_mut(&b.pi_b1));
            matvec_t_acc(params.block(&b.pi_w1), &dpre, &mut dh);
        }

        // LSTM cell
        let gates = &tape.gates[t * g..(t + 1) * g];
        let dz = &mut dz_all[t * g..(t + 1) * g];
        for j in 0..hw {
            let (i, f, gg, o) = (gates[j], gates[hw + j], gates[2 * hw + j], gates[3 * hw + j]);
            let tc = tape.tanh_c[s.start + j];
            let dc = dh[j] * o * (one - tc * tc) + dc_next[j];
            let d_o = dh[j] * tc;
            dz[j] = dc * gg * i * (one - i);
            dz[hw + j] = dc * tape.c_prev[s.start + j] * f * (one - f);
            dz[2 * hw + j] = dc * i * (one - gg * gg);
            dz[3 * hw + j] = d_o * o * (one - o);
            dc_next[j] = dc * f;
        }
        if t == 0 || tape.starts[t] {
            dh_next.fill(F::zero());
            dc_next.fill(F::zero());
        } else {
            dh_next.fill(F::zero());
            matvec_t_acc(params.block(&b.lstm_wh), dz, &mut dh_next);
        }
    }

    // Batched weight gradients over all steps.
    gemm(
        Mat::transposed(&dz_all, len, g),
        Mat::row_major(&tape.feats, len, nf),
        F::one(),
        grads.block_mut(&b.lstm_wx),
    );
    gemm(
        Mat::transposed(&dz_all, len, g),
        Mat::row_major(&tape.h_prev, len, hw),
        F::one(),
        grads.block_mut(&b.lstm_wh),
    );
    {
        let db = grads.block_mut(&b.lstm_b);
        for dz in dz_all.chunks_exact(g) {
            axpy(one, dz, db);
        }
    }

    // Back through the input projection, ReLU and the 1x1 convolution.
    let mut dfeats = vec![F::zero(); len * nf];
    gemm(
        Mat::row_major(&dz_all, len, g),
        Mat::row_major(params.block(&b.lstm_wx), g, nf),
        F::zero(),
        &mut dfeats,
    );
    let cells = arch.cells();
    let cin = arch.in_channels;
    let mut dconv_w = vec![F::zero(); arch.conv_channels * cin];
    let mut dconv_b = vec![F::zero(); arch.conv_channels];
    for t in 0..len {
        let x = &tape.obs[t * arch.obs_len()..(t + 1) * arch.obs_len()];
        for ch in 0..arch.conv_channels {
            let base = t * nf + ch * cells;
            for cell in 0..cells {
                if tape.feats[base + cell] <= F::zero() {
                    continue;
                }
                let d = dfeats[base + cell];
                dconv_b[ch] += d;
                for k in 0..cin {
                    dconv_w[ch * cin + k] += d * x[k * cells + cell];
                }
            }
        }
    }
    grads.block_mut(&b.conv_w).copy_from_slice(&dconv_w);
    grads.block_mut(&b.conv_b).copy_from_slice(&dconv_b);
    Ok(grads)
}
