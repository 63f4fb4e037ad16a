use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestMode {
    /// Student's test with pooled variance.
    Pooled,
    /// Welch's unequal-variance test.
    Welch,
}

impl std::str::FromStr for TestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(TestMode::Pooled),
            "welch" => Ok(TestMode::Welch),
            other => Err(Error::Config(format!("unknown test mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub mode: TestMode,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
}

pub(crate) fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (m, ss / (n - 1.0))
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Independent two-sample t-test.
pub fn t_test(a: &[f64], b: &[f64], mode: TestMode) -> Result<TTestResult> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(Error::Degenerate(format!("need at least 2 samples per side, got {na} and {nb}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (fa, fb) = (na as f64, nb as f64);
    let (se2, df) = match mode {
        TestMode::Pooled => {
            let df = fa + fb - 2.0;
            let sp2 = ((fa - 1.0) * va + (fb - 1.0) * vb) / df;
            (sp2 * (1.0 / fa + 1.0 / fb), df)
        }
        TestMode::Welch => {
            let (qa, qb) = (va / fa, vb / fb);
            let se2 = qa + qb;
            (se2, se2 * se2 / (qa * qa / (fa - 1.0) + qb * qb / (fb - 1.0)))
        }
    };
    if se2 <= 0.0 {
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    Ok(TTestResult { mode, t, df, p_two_sided: student_t_two_sided(t, df), mean_a: ma, mean_b: mb, n_a: na, n_b: nb })
}
