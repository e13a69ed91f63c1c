//! Convergence analysis of a single ReLU unit trained by a gated LMS-type update.
//!
//! * [`moments`]: closed-form truncated Gaussian moments and normal special functions.
//! * [`model`]: the Gaussian input / linear desired-response data model.
//! * [`theory`]: mean-weight recursion operator, its spectrum and fixed point.
//! * [`simulator`]: Monte Carlo runs of the original and analysis update rules.
//! * [`probe`]: a small ReLU MLP instrumented to record per-layer `Pr[y > 0]`.

pub mod error;
pub mod model;
pub mod moments;
pub mod probe;
pub mod rng;
pub mod simulator;
pub mod theory;

pub use error::{Error, Result};
pub use model::{SamplePair, SignalModel, SignalModelConfig};
pub use moments::ScalarGaussian;
pub use probe::{ActivationStats, MlpConfig, ProbeRun};
pub use simulator::{SimulationConfig, TrajectoryRecord, UnitState, Variant};
pub use theory::{BlockMoments, MeanTrajectory, SpectrumReport, TheoryOperator};
