//! The analytical data-generating model.
//!
//! Inputs are `x ~ N(mu, I)` of length `L`; the desired response is the exact
//! linear function `d = a·x_L + c`, i.e. the regression vector is rotated so
//! that only its last entry is nonzero.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{inverse_std_normal_cdf, moment0, ScalarGaussian};
use crate::rng::GaussianStream;

/// Smallest input dimension for which the degenerate eigenspace is nonempty.
pub const MIN_INPUT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalModelConfig", into = "SignalModelConfig")]
pub struct SignalModel {
    mu: Vec<f64>,
    a: f64,
    c: f64,
}

/// One draw of the input vector and its desired response.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub x: Vec<f64>,
    pub d: f64,
}

impl SignalModel {
    pub fn new(mu: Vec<f64>, a: f64, c: f64) -> Result<Self> {
        if mu.len() < MIN_INPUT_DIM {
            return Err(Error::Domain(format!(
                "input dimension L must be at least {MIN_INPUT_DIM}, got {}",
                mu.len()
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) || !c.is_finite() || !a.is_finite() {
            return Err(Error::Domain("model parameters must be finite".into()));
        }
        if a == 0.0 {
            return Err(Error::Domain("a must be nonzero".into()));
        }
        Ok(Self { mu, a, c })
    }

    /// Model whose activation probability `Pr[d > 0]` equals `p_target`.
    ///
    /// `c = |a|·Φ⁻¹(p) − a·mu_L`, which places `mu_d/|a|` at `Φ⁻¹(p)`.
    pub fn with_activation(mu: Vec<f64>, a: f64, p_target: f64) -> Result<Self> {
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::Domain(format!(
                "activation probability must lie in (0,1), got {p_target}"
            )));
        }
        let z = inverse_std_normal_cdf(p_target)?;
        let mu_last = *mu.last().ok_or_else(|| Error::Domain("empty mean vector".into()))?;
        let c = a.abs() * z - a * mu_last;
        Self::new(mu, a, c)
    }

    /// Input dimension `L`.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu_last(&self) -> f64 {
        self.mu[self.mu.len() - 1]
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `mu_d = a·mu_L + c`.
    pub fn mu_d(&self) -> f64 {
        self.a * self.mu_last() + self.c
    }

    pub fn desired_distribution(&self) -> ScalarGaussian {
        ScalarGaussian::new(self.mu_d(), self.a).expect("validated at construction")
    }

    /// `Pr[d > 0] = E{u(d)}`.
    pub fn activation_prob(&self) -> f64 {
        moment0(&self.desired_distribution())
    }

    /// Zero-error augmented weights `[c, 0, …, 0, a]` (bias first).
    pub fn optimal_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim() + 1];
        w[0] = self.c;
        w[self.dim()] = self.a;
        w
    }

    /// Desired response for a given input.
    pub fn desired(&self, x: &[f64]) -> f64 {
        self.a * x[x.len() - 1] + self.c
    }

    /// Draws a fresh sample into caller-owned storage.
    pub fn sample_into<R: RngCore>(&self, gauss: &mut GaussianStream<R>, x: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        for (xi, &m) in x.iter_mut().zip(&self.mu) {
            *xi = m + gauss.next_std();
        }
        self.desired(x)
    }

    pub fn sample<R: RngCore>(&self, gauss: &mut GaussianStream<R>) -> SamplePair {
        let mut x = vec![0.0; self.dim()];
        let d = self.sample_into(gauss, &mut x);
        SamplePair { x, d }
    }
}

/// The evenly spaced mean vector `[2, 1.6, …, −2]` generalised to length `len`.
pub fn linear_ramp_mean(len: usize, start: f64, end: f64) -> Vec<f64> {
    if len == 1 {
        return vec![start];
    }
    let step = (end - start) / (len - 1) as f64;
    (0..len).map(|i| start + step * i as f64).collect()
}

/// The Monte Carlo benchmark mean vector: eleven points from 2 down to −2.
pub fn reference_mean() -> Vec<f64> {
    // Exact decimal values; the ramp formula leaves rounding residue.
    vec![2.0, 1.6, 1.2, 0.8, 0.4, 0.0, -0.4, -0.8, -1.2, -1.6, -2.0]
}

/// JSON config record for [`SignalModel`]: either the offset `c` or the
/// target activation probability must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct SignalModelConfig {
    #[serde(rename = "L")]
    pub dim: usize,
    pub mu: Vec<f64>,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_prob: Option<f64>,
}

impl TryFrom<SignalModelConfig> for SignalModel {
    type Error = Error;

    fn try_from(cfg: SignalModelConfig) -> Result<Self> {
        if cfg.mu.len() != cfg.dim {
            return Err(Error::Dimension {
                expected: cfg.dim,
                actual: cfg.mu.len(),
            });
        }
        match (cfg.c, cfg.activation_prob) {
            (Some(c), None) => SignalModel::new(cfg.mu, cfg.a, c),
            (None, Some(p)) => SignalModel::with_activation(cfg.mu, cfg.a, p),
            (Some(_), Some(_)) => Err(Error::Domain(
                "give either c or activation_prob, not both".into(),
            )),
            (None, None) => Err(Error::Domain("one of c or activation_prob is required".into())),
        }
    }
}

impl From<SignalModel> for SignalModelConfig {
    fn from(m: SignalModel) -> Self {
        Self {
            dim: m.dim(),
            mu: m.mu,
            a: m.a,
            c: Some(m.c),
            activation_prob: None,
        }
    }
}
