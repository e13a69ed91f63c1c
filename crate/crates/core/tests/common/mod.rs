//! Independent oracles used to freeze expected values. None of these share
//! code paths with the library routines they check.
#![allow(dead_code)]

use relu_dynamics::moments::std_normal_cdf;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(centre);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

fn adapt(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, abs_tol: f64, rel_tol: f64, depth: u32) -> f64 {
    let (value, err) = gauss_kronrod(f, lo, hi);
    if err <= abs_tol.max(rel_tol * value.abs()) || depth == 0 {
        return value;
    }
    let mid = 0.5 * (lo + hi);
    adapt(f, lo, mid, 0.5 * abs_tol, rel_tol, depth - 1)
        + adapt(f, mid, hi, 0.5 * abs_tol, rel_tol, depth - 1)
}

/// Adaptive 15-point Gauss–Kronrod quadrature on `[lo, hi]`.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    adapt(&f, lo, hi, 1e-17, 1e-14, 50)
}

fn gaussian_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `∫₀^∞ xⁿ N(x; mu_d, a²) dx` by quadrature over the support that carries
/// non-negligible mass.
pub fn truncated_moment(n: i32, mu_d: f64, a: f64) -> f64 {
    let sigma = a.abs();
    let lo = (mu_d - 40.0 * sigma).max(0.0);
    let hi = mu_d + 40.0 * sigma;
    // Split at the mode so the peak is resolved.
    let mid = mu_d.clamp(lo, hi.max(lo));
    let f = |x: f64| x.powi(n) * gaussian_density(x, mu_d, sigma);
    integrate(f, lo, mid) + integrate(f, mid, hi)
}

/// `z` with `Φ(z) = p`, by bisection on the library CDF.
pub fn bisect_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub type Matrix = Vec<Vec<f64>>;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(input: &Matrix) -> Vec<f64> {
    let n = input.len();
    let mut m = input.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            let aik = a[i][k];
            for j in 0..m {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn identity(n: usize) -> Matrix {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// `m^k` by repeated squaring.
pub fn mat_pow(m: &Matrix, mut k: u64) -> Matrix {
    let mut result = identity(m.len());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = mat_mul(&result, &base);
        }
        base = mat_mul(&base, &base);
        k >>= 1;
    }
    result
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn to_rows(m: &nalgebra::DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Closeness check: relative `rel`, falling back to absolute `abs` for small values.
pub fn close(value: f64, expect: f64, rel: f64, abs: f64) -> bool {
    let diff = (value - expect).abs();
    diff <= abs || diff <= rel * expect.abs()
}

/// Activation probabilities of the Monte Carlo sweep, largest first.
pub const PR_SWEEP: [f64; 7] = [0.8, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
