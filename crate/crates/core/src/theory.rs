//! Mean-weight evolution of the gated LMS analysis model.
//!
//! Under the independence assumption the augmented mean `E{w̄} = E{[b; w]}`
//! obeys `E{w̄_{k+1}} = (I − ηA) E{w̄_k} + ηb`. The operator is built two ways:
//! entry by entry from the block moments `R = E{u(d) x xᵀ}`,
//! `r = E{u(d) x}`, `p = E{d u(d) x}`, and from the compact rank-structured
//! form `A = u0 (I + μ̄μ̄ᵀ − δ₁δ₁ᵀ) − K δ_{L+1}δ_{L+1}ᵀ`. Both must agree.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SignalModel;
use crate::moments::{moment0, moment1};

/// Eigenvalues within this distance of `u0` count toward its multiplicity.
pub const MULTIPLICITY_TOL: f64 = 1e-9;

/// Solves are refused above this condition number.
pub const MAX_CONDITION: f64 = 1e12;

/// Entry-wise moment blocks of the weight/bias recursions.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMoments {
    /// `E{u(d) x xᵀ}`, L×L.
    pub r_matrix: DMatrix<f64>,
    /// `E{u(d) x}`.
    pub r: DVector<f64>,
    /// `E{d u(d) x}`.
    pub p: DVector<f64>,
    /// `E{u(d)}`.
    pub u0: f64,
    /// `E{d u(d)}`.
    pub m1: f64,
}

impl BlockMoments {
    /// `[[u0, rᵀ], [r, R]]`, the operator acting on `[b; w]`.
    pub fn augmented_matrix(&self) -> DMatrix<f64> {
        let n = self.r.len() + 1;
        let mut out = DMatrix::zeros(n, n);
        out[(0, 0)] = self.u0;
        for i in 0..self.r.len() {
            out[(0, i + 1)] = self.r[i];
            out[(i + 1, 0)] = self.r[i];
        }
        out.view_mut((1, 1), (n - 1, n - 1)).copy_from(&self.r_matrix);
        out
    }

    /// `[E{d u(d)}; p]`.
    pub fn augmented_forcing(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.p.len() + 1);
        out[0] = self.m1;
        out.rows_mut(1, self.p.len()).copy_from(&self.p);
        out
    }
}

/// Closed-form evaluation of `R`, `r` and `p`.
pub fn assemble_blocks(model: &SignalModel) -> BlockMoments {
    let dist = model.desired_distribution();
    let l = model.dim();
    let last = l - 1;
    let mu = model.mu();
    let mu_l = model.mu_last();
    let (a, c) = (model.a(), model.c());
    let sgn = a.signum();
    let u0 = moment0(&dist);
    let g = dist.density_term();

    let mut r_matrix = DMatrix::zeros(l, l);
    for i in 0..last {
        for j in 0..last {
            let delta = if i == j { 1.0 } else { 0.0 };
            r_matrix[(i, j)] = (mu[i] * mu[j] + delta) * u0;
        }
        let cross = mu[i] * sgn * g + mu[i] * mu_l * u0;
        r_matrix[(i, last)] = cross;
        r_matrix[(last, i)] = cross;
    }
    r_matrix[(last, last)] = (mu_l * sgn - c / a.abs()) * g + (mu_l * mu_l + 1.0) * u0;

    let mut r = DVector::zeros(l);
    for i in 0..last {
        r[i] = mu[i] * u0;
    }
    r[last] = sgn * g + mu_l * u0;

    let mut p = DVector::zeros(l);
    for i in 0..last {
        p[i] = a * r_matrix[(i, last)] + mu[i] * c * u0;
    }
    p[last] = a * (mu_l * sgn * g + (mu_l * mu_l + 1.0 + c / a * mu_l) * u0);

    BlockMoments {
        r_matrix,
        r,
        p,
        u0,
        m1: moment1(&dist),
    }
}

/// The compact-form mean-recursion operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryOperator {
    /// `(L+1)×(L+1)` symmetric matrix `A`.
    pub a_matrix: DMatrix<f64>,
    /// Forcing vector `b`.
    pub forcing: DVector<f64>,
    pub k: f64,
    /// `[1, mu_1, …, mu_{L−1}, h]`.
    pub mu_bar: DVector<f64>,
    pub h: f64,
    /// `E{u(d)} = Pr[d > 0]`.
    pub u0: f64,
    /// `[c, 0, …, 0, a]`, the exact-model solution.
    pub target: DVector<f64>,
}

pub fn assemble_operator(model: &SignalModel) -> TheoryOperator {
    let dist = model.desired_distribution();
    let l = model.dim();
    let n = l + 1;
    let mu_l = model.mu_last();
    let (a, c) = (model.a(), model.c());
    let sgn = a.signum();
    let u0 = moment0(&dist);
    let g = dist.density_term();

    let h = mu_l + sgn * g / u0;
    let k = (mu_l * sgn + c / a.abs()) * g + g * g / u0;

    let mut mu_bar = DVector::zeros(n);
    mu_bar[0] = 1.0;
    for i in 0..l - 1 {
        mu_bar[i + 1] = model.mu()[i];
    }
    mu_bar[l] = h;

    let mut a_matrix = &mu_bar * mu_bar.transpose();
    for i in 1..n {
        a_matrix[(i, i)] += 1.0;
    }
    // Ī − δ₁δ₁ᵀ leaves the (1,1) slot at μ̄₁² = 1.
    a_matrix *= u0;
    a_matrix[(l, l)] -= k;

    let mut forcing = &mu_bar * (u0 * (c + a * h));
    forcing[l] += a * (u0 - k);

    TheoryOperator {
        a_matrix,
        forcing,
        k,
        mu_bar,
        h,
        u0,
        target: DVector::from_vec(model.optimal_weights()),
    }
}

/// Spectrum of `A` and the step-size bound it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub u0: f64,
    /// Number of eigenvalues within [`MULTIPLICITY_TOL`] of `u0`.
    pub u0_multiplicity: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `2/λ_max`; the mean recursion contracts for `0 < η < eta_max`.
    pub eta_max: f64,
    pub condition_number: f64,
}

impl TheoryOperator {
    pub fn dim(&self) -> usize {
        self.forcing.len()
    }

    pub fn symmetric_eigen(&self) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
        if self.a_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("operator has non-finite entries".into()));
        }
        SymmetricEigen::try_new(self.a_matrix.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))
    }

    pub fn eigen_report(&self) -> Result<SpectrumReport> {
        let eig = self.symmetric_eigen()?;
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|x, y| x.total_cmp(y));
        let lambda_min = eigenvalues[0];
        let lambda_max = eigenvalues[eigenvalues.len() - 1];
        let abs_min = eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let abs_max = eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let u0_multiplicity = eigenvalues
            .iter()
            .filter(|&&v| (v - self.u0).abs() <= MULTIPLICITY_TOL)
            .count();
        Ok(SpectrumReport {
            u0: self.u0,
            u0_multiplicity,
            lambda_min,
            lambda_max,
            eta_max: 2.0 / lambda_max,
            condition_number: abs_max / abs_min,
            eigenvalues,
        })
    }

    /// Steady state `A⁻¹b` of the mean recursion.
    pub fn fixed_point(&self) -> Result<DVector<f64>> {
        let report = self.eigen_report()?;
        if report.condition_number.is_nan() || report.condition_number > MAX_CONDITION {
            return Err(Error::IllConditioned {
                condition: report.condition_number,
                limit: MAX_CONDITION,
            });
        }
        self.a_matrix
            .clone()
            .lu()
            .solve(&self.forcing)
            .ok_or_else(|| Error::Numerical("LU solve hit a zero pivot".into()))
    }

    /// One step of `E{w̄} ← E{w̄} − η (A E{w̄} − b)`.
    pub fn step_mean(&self, mean: &DVector<f64>, eta: f64) -> DVector<f64> {
        let mut residual = &self.a_matrix * mean;
        residual -= &self.forcing;
        mean - residual * eta
    }

    /// Iterates the mean recursion `iters` times from `w0`.
    ///
    /// Step sizes outside the contraction range are flagged, not refused.
    pub fn iterate_mean(&self, w0: &[f64], eta: f64, iters: usize) -> Result<MeanTrajectory> {
        if w0.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: w0.len(),
            });
        }
        let eta_max = self.eigen_report()?.eta_max;
        let mut mean = DVector::from_column_slice(w0);
        let mut means = Vec::with_capacity(iters + 1);
        let mut sq_error_norm = Vec::with_capacity(iters + 1);
        for _ in 0..=iters {
            sq_error_norm.push((&mean - &self.target).norm_squared());
            means.push(mean.iter().copied().collect());
            if means.len() <= iters {
                mean = self.step_mean(&mean, eta);
            }
        }
        Ok(MeanTrajectory {
            eta,
            eta_max,
            contracting: eta > 0.0 && eta < eta_max,
            means,
            sq_error_norm,
        })
    }

    /// Average over initial points of `‖E{w̄}_k − w̄*‖²`, each point run through
    /// its own mean recursion. Recorded at `k = 0, stride, 2·stride, …, ≤ iters`.
    pub fn averaged_error_curve(
        &self,
        initial_points: &[Vec<f64>],
        eta: f64,
        iters: usize,
        stride: usize,
    ) -> Result<Vec<f64>> {
        if stride == 0 {
            return Err(Error::Domain("record stride must be at least 1".into()));
        }
        if initial_points.is_empty() {
            return Err(Error::Domain("need at least one initial point".into()));
        }
        let n = self.dim();
        // The recursion is affine, so propagate errors e = w̄ − w̄*:
        // e ← (I − ηA) e, because A w̄* = b.
        let step = DMatrix::identity(n, n) - &self.a_matrix * eta;
        let points = iters / stride + 1;
        let mut sums = vec![0.0; points];
        for w0 in initial_points {
            if w0.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: w0.len(),
                });
            }
            let mut err = DVector::from_column_slice(w0) - &self.target;
            sums[0] += err.norm_squared();
            for k in 1..=iters {
                err = &step * &err;
                if k % stride == 0 {
                    sums[k / stride] += err.norm_squared();
                }
            }
        }
        let count = initial_points.len() as f64;
        Ok(sums.into_iter().map(|s| s / count).collect())
    }
}

/// Deterministic mean-weight trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTrajectory {
    pub eta: f64,
    pub eta_max: f64,
    /// `0 < η < 2/λ_max`.
    pub contracting: bool,
    /// `E{w̄}_k` for `k = 0..=iters`.
    pub means: Vec<Vec<f64>>,
    /// `‖E{w̄}_k − w̄*‖²`.
    pub sq_error_norm: Vec<f64>,
}

/// Default shared step as a fraction of `1/λ_max`, i.e. `η = 0.1/λ_max`.
pub const DEFAULT_STEP_FRACTION: f64 = 0.1;

/// `fraction / λ_max` with `λ_max` the largest over `models`, so every model
/// of a sweep runs with the same stable step.
pub fn shared_step(models: &[SignalModel], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 2.0) {
        return Err(Error::Domain(format!("step fraction must lie in (0,2), got {fraction}")));
    }
    Ok(fraction / max_lambda(models)?)
}

/// Largest `λ_max` over a set of models; the shared-step reference.
pub fn max_lambda(models: &[SignalModel]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for m in models {
        best = best.max(assemble_operator(m).eigen_report()?.lambda_max);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Domain("no models given".into()))
    }
}
