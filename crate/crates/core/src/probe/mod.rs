//! Measurements for the convergence analysis of a single stage: gradient
//! norms, input-distribution drift, smoothness and variance constants, and
//! the resulting weighted-norm bound.
//!
//! The drift figure is a histogram proxy; the true quantity is a distance
//! between densities and has no finite-sample estimator here.

pub mod bound;
pub mod drift;
pub mod estimate;
pub mod toy;

pub use bound::{bound_check, BoundReport, TheoryTrace, TracePoint};
pub use drift::{drift_estimate, histogram_distance, DriftProbe, GRID_BINS};
pub use estimate::{estimate_constants, grad_norm_estimate, ConstantEstimates, ProbeModel, SamplingPlan, StageProbe};
pub use toy::{run_theory, theory_records, toy_specs, TheoryConfig, TheoryOutcome, THEORY_TAG};
