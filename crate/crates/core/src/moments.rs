//! Truncated Gaussian moments `E{dⁿ u(d)}` for `d ~ N(mu_d, a²)` and the
//! normal-distribution special functions they are built from.
//!
//! `u(·)` is the unit step, so `E{dⁿ u(d)} = ∫₀^∞ xⁿ N(x; mu_d, a²) dx`.
//! Only `|a|` enters the closed forms.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1/√(2π)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Distribution of the desired response, `d ~ N(mu_d, a²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarGaussian {
    mu_d: f64,
    a: f64,
}

impl ScalarGaussian {
    pub fn new(mu_d: f64, a: f64) -> Result<Self> {
        if !mu_d.is_finite() || !a.is_finite() {
            return Err(Error::Domain(format!(
                "gaussian parameters must be finite (mu_d={mu_d}, a={a})"
            )));
        }
        if a == 0.0 {
            return Err(Error::Domain("a must be nonzero".into()));
        }
        Ok(Self { mu_d, a })
    }

    pub fn mu_d(&self) -> f64 {
        self.mu_d
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Standard deviation `|a|`.
    pub fn sigma(&self) -> f64 {
        self.a.abs()
    }

    /// `exp(−mu_d²/(2a²)) / √(2π)`, the density term shared by every moment.
    pub fn density_term(&self) -> f64 {
        let z = self.mu_d / self.sigma();
        INV_SQRT_2PI * (-0.5 * z * z).exp()
    }
}

/// Standard normal CDF `Φ(z) = (erf(z/√2) + 1)/2`.
///
/// Evaluated through `erfc` so the lower tail keeps full relative accuracy.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `E{u(d)} = Pr[d > 0] = Φ(mu_d/|a|)`.
pub fn moment0(g: &ScalarGaussian) -> f64 {
    std_normal_cdf(g.mu_d / g.sigma())
}

/// `E{d u(d)} = |a| φ₀ + mu_d E{u(d)}`, with `φ₀` the shared density term.
pub fn moment1(g: &ScalarGaussian) -> f64 {
    g.sigma() * g.density_term() + g.mu_d * moment0(g)
}

/// `E{d² u(d)} = |a| mu_d φ₀ + (mu_d² + a²) E{u(d)}`.
pub fn moment2(g: &ScalarGaussian) -> f64 {
    g.sigma() * g.mu_d * g.density_term() + (g.mu_d * g.mu_d + g.a * g.a) * moment0(g)
}

// Acklam's rational approximation to the normal quantile (relative error
// below 1.15e-9), polished by one Halley step on Φ.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.024_25;

fn acklam(p: f64) -> f64 {
    let (a, b, c, d) = (ACKLAM_A, ACKLAM_B, ACKLAM_C, ACKLAM_D);
    let tail = |q: f64| {
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Inverse standard normal CDF, `Φ⁻¹(p)` for `0 < p < 1`.
pub fn inverse_std_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0,1), got {p}"
        )));
    }
    let x = acklam(p);
    // Residual in the tail that keeps relative accuracy.
    let e = if x < 0.0 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - 0.5 * libm::erfc(x * FRAC_1_SQRT_2)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu_d: f64, a: f64) -> ScalarGaussian {
        ScalarGaussian::new(mu_d, a).unwrap()
    }

    #[test]
    fn cdf_fixed_points() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(40.0) - 1.0).abs() <= 1e-15);
        assert!(std_normal_cdf(-40.0) >= 0.0);
    }

    #[test]
    fn zero_a_rejected() {
        assert!(matches!(ScalarGaussian::new(1.0, 0.0), Err(Error::Domain(_))));
        assert!(ScalarGaussian::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn trivial_moments() {
        assert_eq!(moment0(&g(0.0, 0.5)), 0.5);
        assert_eq!(moment0(&g(0.5, 0.5)), std_normal_cdf(1.0));
        assert!((moment1(&g(0.0, 1.0)) - INV_SQRT_2PI).abs() < 1e-16);
        assert!((moment1(&g(0.0, 0.5)) - 0.5 * INV_SQRT_2PI).abs() < 1e-16);
        assert!((moment2(&g(0.0, 1.0)) - 0.5).abs() < 1e-16);
        assert!((moment2(&g(0.0, 0.5)) - 0.125).abs() < 1e-16);
    }

    #[test]
    fn sign_of_a_is_irrelevant() {
        for &(m, a) in &[(0.3, 0.7), (-1.2, 0.1), (2.0, 1.5)] {
            assert_eq!(moment0(&g(m, a)), moment0(&g(m, -a)));
            assert_eq!(moment1(&g(m, a)), moment1(&g(m, -a)));
            assert_eq!(moment2(&g(m, a)), moment2(&g(m, -a)));
        }
    }

    #[test]
    fn quantile_basics() {
        assert_eq!(inverse_std_normal_cdf(0.5).unwrap(), 0.0);
        let z = inverse_std_normal_cdf(std_normal_cdf(1.3)).unwrap();
        assert!((z - 1.3).abs() < 1e-12, "{z}");
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(inverse_std_normal_cdf(bad), Err(Error::Domain(_))));
        }
    }
}
