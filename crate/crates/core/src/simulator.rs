//! Monte Carlo simulation of the single-unit update rules.
//!
//! Two variants share the LMS-style correction `w̄ += η (d − y) x̄` with
//! `x̄ = [1; x]` and `y = w̄ᵀx̄`; they differ only in the gate:
//!
//! * `Original`: backpropagation through `f(y) = max(0, y)`, gated on `y > 0`.
//! * `Analysis`: the locally convergent model, gated on `d > 0`.
//!
//! Both gates are closed at exactly zero.

use std::fmt;
use std::io::{self, Write};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SamplePair, SignalModel};
use crate::rng::{gaussian_substream, GaussianStream};

/// Runs reduced per batch; bounds memory for long series.
const REDUCE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Analysis,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Original => "original",
            Variant::Analysis => "analysis",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Variant::Original),
            "analysis" => Ok(Variant::Analysis),
            other => Err(Error::Domain(format!("unknown variant `{other}`"))),
        }
    }
}

/// Augmented weights `[b; w]` of one adaptive unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitState {
    pub w_bar: Vec<f64>,
}

impl UnitState {
    pub fn new(w_bar: Vec<f64>) -> Self {
        Self { w_bar }
    }

    /// Linear pre-activation `y = wᵀx + b`.
    pub fn output(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len() + 1, self.w_bar.len());
        let w = &self.w_bar[1..];
        self.w_bar[0] + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
    }

    /// Applies one gated update in place; returns whether the gate was open.
    pub fn update(&mut self, variant: Variant, x: &[f64], d: f64, eta: f64) -> bool {
        let y = self.output(x);
        let open = match variant {
            Variant::Original => y > 0.0,
            Variant::Analysis => d > 0.0,
        };
        if open {
            let g = eta * (d - y);
            self.w_bar[0] += g;
            for (wi, xi) in self.w_bar[1..].iter_mut().zip(x) {
                *wi += g * xi;
            }
        }
        open
    }

    pub fn sq_distance(&self, target: &[f64]) -> f64 {
        self.w_bar
            .iter()
            .zip(target)
            .map(|(w, t)| (w - t) * (w - t))
            .sum()
    }

    fn check(&self, sample: &SamplePair) -> Result<()> {
        if sample.x.len() + 1 != self.w_bar.len() {
            return Err(Error::Dimension {
                expected: self.w_bar.len() - 1,
                actual: sample.x.len(),
            });
        }
        Ok(())
    }
}

/// ReLU backpropagation step: `f(y) = y` and `f'(y) = 1` when `y > 0`.
pub fn step_original(state: &UnitState, sample: &SamplePair, eta: f64) -> Result<UnitState> {
    state.check(sample)?;
    let mut next = state.clone();
    next.update(Variant::Original, &sample.x, sample.d, eta);
    Ok(next)
}

/// Analysis-model step: LMS with data-dependent step `η u(d)`.
pub fn step_analysis(state: &UnitState, sample: &SamplePair, eta: f64) -> Result<UnitState> {
    state.check(sample)?;
    let mut next = state.clone();
    next.update(Variant::Analysis, &sample.x, sample.d, eta);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: SignalModel,
    pub variant: Variant,
    pub eta: f64,
    pub iters: usize,
    pub runs: usize,
    /// Standard deviation of each initial weight-error coordinate.
    pub init_std: f64,
    pub master_seed: u64,
    pub record_stride: usize,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain(format!("eta must be finite and nonnegative, got {}", self.eta)));
        }
        if self.iters == 0 {
            return Err(Error::Domain("iters must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Domain("runs must be at least 1".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Domain(format!("init_std must be nonnegative, got {}", self.init_std)));
        }
        if self.record_stride == 0 {
            return Err(Error::Domain("record_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Iterations at which the averaged error is recorded: `0, s, 2s, …, ≤ iters`.
    pub fn record_points(&self) -> Vec<usize> {
        (0..=self.iters).step_by(self.record_stride).collect()
    }

    /// FNV-1a digest of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }

    /// Initial state of run `index` and the stream it continues with.
    ///
    /// The initial error `e ~ N(0, init_std² I)` is the first draw of the
    /// run's substream.
    pub fn initial_state(&self, index: usize) -> (UnitState, GaussianStream<impl RngCore>) {
        let mut gauss = gaussian_substream(self.master_seed, index as u64);
        let mut w_bar = self.model.optimal_weights();
        for w in &mut w_bar {
            *w += self.init_std * gauss.next_std();
        }
        (UnitState::new(w_bar), gauss)
    }

    /// Initial augmented weights of every run, in run order.
    pub fn initial_weights(&self) -> Vec<Vec<f64>> {
        (0..self.runs).map(|i| self.initial_state(i).0.w_bar).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Drives one unit for `iters` fresh samples.
///
/// `observe(k, state, fired)` is called after every update `k = 1..=iters`.
pub fn simulate_run<R: RngCore>(
    model: &SignalModel,
    variant: Variant,
    eta: f64,
    iters: usize,
    state: &mut UnitState,
    gauss: &mut GaussianStream<R>,
    mut observe: impl FnMut(usize, &UnitState, bool),
) {
    let mut x = vec![0.0; model.dim()];
    for k in 1..=iters {
        let d = model.sample_into(gauss, &mut x);
        let fired = state.update(variant, &x, d, eta);
        observe(k, state, fired);
    }
}

/// Squared weight-error norm of a single run at the record points.
pub fn run_series(config: &SimulationConfig, index: usize) -> Vec<f64> {
    let target = config.model.optimal_weights();
    let (mut state, mut gauss) = config.initial_state(index);
    let stride = config.record_stride;
    let mut series = Vec::with_capacity(config.iters / stride + 1);
    series.push(state.sq_distance(&target));
    simulate_run(
        &config.model,
        config.variant,
        config.eta,
        config.iters,
        &mut state,
        &mut gauss,
        |k, s, _| {
            if k % stride == 0 {
                series.push(s.sq_distance(&target));
            }
        },
    );
    series
}

/// Neumaier-compensated running sums, one per record point.
#[derive(Debug, Clone)]
struct CompensatedSums {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedSums {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    fn add(&mut self, values: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(&mut self.comp).zip(values) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    fn totals(&self) -> impl Iterator<Item = f64> + '_ {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

/// Averaged squared weight-error trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config_digest: String,
    pub variant: Variant,
    pub runs: usize,
    pub iterations: Vec<usize>,
    pub avg_sq_error_norm: Vec<f64>,
}

impl TrajectoryRecord {
    /// CSV with header `iteration,avg_sq_error_norm`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iteration,avg_sq_error_norm")?;
        for (k, v) in self.iterations.iter().zip(&self.avg_sq_error_norm) {
            writeln!(out, "{k},{v:e}")?;
        }
        Ok(())
    }
}

pub fn run_monte_carlo(config: &SimulationConfig) -> Result<TrajectoryRecord> {
    run_monte_carlo_with(config, Execution::Parallel)
}

/// Runs every replicate and averages in run-index order, so serial and
/// parallel execution produce identical records.
pub fn run_monte_carlo_with(config: &SimulationConfig, exec: Execution) -> Result<TrajectoryRecord> {
    config.validate()?;
    let iterations = config.record_points();
    let mut sums = CompensatedSums::new(iterations.len());
    let indices: Vec<usize> = (0..config.runs).collect();
    for chunk in indices.chunks(REDUCE_CHUNK) {
        let batch: Vec<Vec<f64>> = match exec {
            Execution::Serial => chunk.iter().map(|&i| run_series(config, i)).collect(),
            Execution::Parallel => chunk.par_iter().map(|&i| run_series(config, i)).collect(),
        };
        for series in &batch {
            sums.add(series);
        }
    }
    let runs = config.runs as f64;
    Ok(TrajectoryRecord {
        config_digest: config.digest(),
        variant: config.variant,
        runs: config.runs,
        iterations,
        avg_sq_error_norm: sums.totals().map(|s| s / runs).collect(),
    })
}

/// First recorded iteration at which the averaged error is at most
/// `fraction` times its initial value, or `None` if it never gets there.
pub fn time_to_threshold(record: &TrajectoryRecord, fraction: f64) -> Result<Option<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!("fraction must lie in (0,1), got {fraction}")));
    }
    let Some(&initial) = record.avg_sq_error_norm.first() else {
        return Err(Error::Domain("empty trajectory record".into()));
    };
    let limit = fraction * initial;
    Ok(record
        .avg_sq_error_norm
        .iter()
        .position(|&v| v <= limit)
        .map(|i| record.iterations[i]))
}
