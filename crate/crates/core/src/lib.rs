//! Active sequential multiple testing.
//!
//! `K` independent streams, one observation per time instant. Each stream is
//! tested with SPRT boundaries `(-b, a)`; the procedures differ in which
//! undecided stream they observe next. The crate provides the stream models,
//! the LLR engine, three sampling procedures, closed-form lower bounds and a
//! deterministic Monte Carlo runner.

pub mod bounds;
pub mod error;
pub mod llr;
pub mod montecarlo;
pub mod procedures;
pub mod stats;
pub mod stream_models;

pub use bounds::{
    bernoulli_kl, calibrate_thresholds, lower_bounds, maxmin_allocation, maxmin_allocation_exact, AllocationResult,
    LowerBoundReport,
};
pub use error::{Error, Result};
pub use llr::{apply_increment, run_local_sprt, Decision, LlrState, SprtOutcome, Status, Thresholds, DEFAULT_HORIZON};
pub use montecarlo::{
    derive_seed, estimate_error_rates, run_experiment, write_csv, AggregateStats, ErrorRateEstimate, ExperimentConfig,
    Sweep, ThresholdSpec,
};
pub use procedures::{
    run_follow_the_leader, run_oracle, run_procedure, run_proposed, sort_streams, stream_rng, IncrementSource,
    Phase2Rule, ProcedureSpec, SimulatedStreams, TrialResult,
};
pub use stream_models::{kl_divergences, sample_llr_increment, GroundTruth, Hypothesis, ModelSpec, StreamModel};
