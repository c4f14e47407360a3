//! Relative temporal matrix and the exponential-power decay kernel
//! `α · γ^((T + ε)^β)`, plus two comparator encoders used by benchmarks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Bucket width of the log-bucket comparator, in seconds.
pub const BUCKET_UNIT_SECONDS: f64 = 60.0;
pub const DEFAULT_NUM_BUCKETS: usize = 128;
/// Offset of the inverse-proportion comparator, in seconds.
pub const DEFAULT_INVERSE_OFFSET: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Pairwise `|tᵢ − tⱼ|` in seconds, converted to floating point once.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTemporalMatrix {
    values: Matrix,
}

impl RelativeTemporalMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Wraps an arbitrary interval matrix. Used by benchmarks and tests that
    /// need intervals not derived from a single timestamp sequence.
    pub fn from_intervals(values: Matrix) -> Result<Self> {
        if values.rows() != values.cols() {
            return Err(Error::Shape {
                op: "RelativeTemporalMatrix",
                lhs: values.shape(),
                rhs: (values.cols(), values.rows()),
            });
        }
        if values.as_slice().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Data("intervals must be finite and non-negative".into()));
        }
        Ok(RelativeTemporalMatrix { values })
    }
}

/// Builds `T[i][j] = |tᵢ − tⱼ|` from time-ordered integer seconds.
pub fn build_relative_matrix(timestamps: &[i64]) -> Result<RelativeTemporalMatrix> {
    if timestamps.is_empty() {
        return Err(Error::Data("empty timestamp sequence".into()));
    }
    if let Some(pos) = timestamps.iter().position(|&t| t < 0) {
        return Err(Error::Data(format!("negative timestamp at position {pos}")));
    }
    if let Some(pos) = timestamps.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Data(format!(
            "timestamps decrease at position {} ({} -> {})",
            pos + 1,
            timestamps[pos],
            timestamps[pos + 1]
        )));
    }
    let n = timestamps.len();
    let as_float: Vec<f64> = timestamps.iter().map(|&t| t as f64).collect();
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        let ti = as_float[i];
        for (j, v) in values.row_mut(i).iter_mut().enumerate() {
            *v = (ti - as_float[j]).abs();
        }
    }
    Ok(RelativeTemporalMatrix { values })
}

/// Parameters of one exponential-power temporal encoder.
///
/// `alpha` and `beta` are learned; `gamma` and `epsilon` are configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalEncoderParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl TemporalEncoderParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, epsilon: f64) -> Result<Self> {
        let p = TemporalEncoderParams {
            alpha,
            beta,
            gamma,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    /// `α = 1, β = 1`: plain exponential decay.
    pub fn initial(gamma: f64, epsilon: f64) -> Result<Self> {
        Self::new(1.0, 1.0, gamma, epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Numeric(format!(
                "temporal encoder parameters not finite (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Scalar kernel value at interval `x`.
    #[inline]
    pub fn kernel(&self, x: f64) -> f64 {
        self.alpha * (self.gamma.ln() * (x + self.epsilon).powf(self.beta)).exp()
    }
}

/// `A[i][j] = α · γ^((T[i][j] + ε)^β)`, no causal mask.
pub fn exp_power_attention(t: &RelativeTemporalMatrix, p: &TemporalEncoderParams) -> Matrix {
    let ln_gamma = p.gamma.ln();
    let (alpha, beta, eps) = (p.alpha, p.beta, p.epsilon);
    t.values.map(|x| alpha * (ln_gamma * (x + eps).powf(beta)).exp())
}

/// Gradients of `Σ upstream ⊙ A` with respect to `α` and `β`.
pub fn exp_power_gradients(
    t: &RelativeTemporalMatrix,
    p: &TemporalEncoderParams,
    upstream: &Matrix,
) -> Result<(f64, f64)> {
    if upstream.shape() != t.values.shape() {
        return Err(Error::Shape {
            op: "exp_power_gradients",
            lhs: t.values.shape(),
            rhs: upstream.shape(),
        });
    }
    let ln_gamma = p.gamma.ln();
    let mut d_alpha = 0.0;
    let mut d_beta = 0.0;
    for (&x, &g) in t.values.as_slice().iter().zip(upstream.as_slice()) {
        if g == 0.0 {
            continue;
        }
        let s = x + p.epsilon;
        if s == 0.0 {
            return Err(Error::Numeric(
                "zero interval with epsilon = 0 makes the beta gradient undefined; set epsilon > 0".into(),
            ));
        }
        let s_beta = s.powf(p.beta);
        let decay = (ln_gamma * s_beta).exp();
        d_alpha += g * decay;
        d_beta += g * p.alpha * decay * ln_gamma * s_beta * s.ln();
    }
    Ok((d_alpha, d_beta))
}

/// `f'(x) = αβ·ln γ·s^(β−1)·γ^(s^β)` with `s = x + ε`.
///
/// With `ε = 0` and `β < 1` this diverges as `x → 0`; any `ε > 0` keeps it
/// bounded on `[0, X]`.
pub fn interval_derivative(x: f64, p: &TemporalEncoderParams) -> f64 {
    let s = x + p.epsilon;
    let ln_gamma = p.gamma.ln();
    let s_beta = s.powf(p.beta);
    p.alpha * p.beta * ln_gamma * s.powf(p.beta - 1.0) * (ln_gamma * s_beta).exp()
}

/// Log-bucket index: `min(B − 1, ⌊log₂(1 + x / unit)⌋)`.
#[inline]
pub fn bucket_index(x: f64, num_buckets: usize) -> usize {
    let b = (1.0 + x / BUCKET_UNIT_SECONDS).log2().floor() as usize;
    b.min(num_buckets - 1)
}

/// Bucketed comparator: each interval looks up a learned per-bucket weight.
pub fn bucket_attention_baseline(t: &RelativeTemporalMatrix, num_buckets: usize, weights: &[f64]) -> Result<Matrix> {
    if num_buckets == 0 {
        return Err(Error::Config("num_buckets must be >= 1".into()));
    }
    if weights.len() != num_buckets {
        return Err(Error::Shape {
            op: "bucket_attention_baseline",
            lhs: (1, num_buckets),
            rhs: (1, weights.len()),
        });
    }
    Ok(t.values.map(|x| weights[bucket_index(x, num_buckets)]))
}

/// Inverse-proportion comparator `a / (T + c)`.
pub fn inverse_proportion_baseline(t: &RelativeTemporalMatrix, a: f64, c: f64) -> Result<Matrix> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Config(format!("inverse-proportion offset must be > 0, got {c}")));
    }
    Ok(t.values.map(|x| a / (x + c)))
}
