use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Arch, NetParams, Real};
use crate::seeding::{rng_for, Stream};

/// Random `rows x cols` matrix with orthonormal rows or columns (whichever
/// is shorter), scaled by `gain`. Row-major.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out.push(gain * v);
        }
    }
    out
}

/// Orthogonal initialization: gain sqrt(2) for the convolution and hidden MLP
/// layers, 0.01 for the policy output, 1 for the value output. LSTM weight
/// blocks are orthogonal with unit gain; all biases start at zero except the
/// forget gate, which starts at one.
pub fn init_params<F: Real>(arch: Arch, seed: u64) -> NetParams<F> {
    let mut rng = rng_for(seed, Stream::Init);
    let b = arch.blocks();
    let mut p = NetParams::<F>::zeros(arch);
    let sqrt2 = std::f64::consts::SQRT_2;
    let (h, m) = (arch.hidden, arch.mlp);
    let mats = [
        (&b.conv_w, arch.conv_channels, arch.in_channels, sqrt2),
        (&b.lstm_wx, arch.gates(), arch.features(), 1.0),
        (&b.lstm_wh, arch.gates(), h, 1.0),
        (&b.pi_w1, m, h, sqrt2),
        (&b.pi_w2, arch.actions, m, 0.01),
        (&b.v_w1, m, h, sqrt2),
        (&b.v_w2, 1, m, 1.0),
    ];
    for (range, rows, cols, gain) in mats {
        let w = orthogonal(rows, cols, gain, &mut rng);
        for (dst, v) in p.block_mut(range).iter_mut().zip(w) {
            *dst = F::lit(v);
        }
    }
    p.block_mut(&b.lstm_b)[h..2 * h].fill(F::one());
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{forward, policy, HiddenState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (rows, cols) in [(8, 3), (3, 8), (5, 5)] {
            let w = orthogonal(rows, cols, 2.0, &mut rng);
            let m = DMatrix::from_row_slice(rows, cols, &w) / 2.0;
            let gram = if rows >= cols { m.transpose() * &m } else { &m * m.transpose() };
            let eye = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
            assert!((gram - eye).abs().max() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_biased() {
        let arch = Arch::standard();
        let a: NetParams<f32> = init_params(arch, 9);
        let b: NetParams<f32> = init_params(arch, 9);
        assert_eq!(a, b);
        let c: NetParams<f32> = init_params(arch, 10);
        assert_ne!(a, c);
        let bias = a.block(&a.blocks().lstm_b);
        assert!(bias[256..512].iter().all(|&v| v == 1.0));
        assert!(bias[..256].iter().chain(&bias[512..]).all(|&v| v == 0.0));
        assert!(a.is_finite());
    }

    #[test]
    fn small_initial_logits() {
        let arch = Arch::standard();
        let p: NetParams<f32> = init_params(arch, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst = 0.0f32;
        for _ in 0..1000 {
            let obs: Vec<f32> = (0..arch.obs_len()).map(|_| rng.random_range(0.0..1.0)).collect();
            let out = forward(&p, &obs, &HiddenState::zeros(arch.hidden)).unwrap();
            worst = out.logits.iter().fold(worst, |m, l| m.max(l.abs()));
            let s: f32 = policy::softmax(&out.logits).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(worst < 0.5, "max |logit| {worst}");
    }
}
