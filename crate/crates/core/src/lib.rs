//! Online conformal abstention with feedback unlocking.
//!
//! A learner picks an acceptance threshold from a finite grid each round,
//! answers when the model's score clears it, and is charged a loss that
//! trades off abstention against a false-discovery-rate margin. Because the
//! grid is ordered, one observed outcome also reveals the loss of every
//! threshold on the same side of the score; ExAUL feeds those "unlocked"
//! arms back into its estimator.

pub mod abstention;
pub mod environments;
pub mod error;
pub mod harness;
pub mod learners;
pub mod metrics;

pub use abstention::{
    accepts, clamp_score, compute_loss, estimate_loss_exaul, estimate_loss_ix, unlock_set,
    HypothesisGrid, LossParams, LossTerms, UnlockSet, MAX_SCORE,
};
pub use environments::{
    gen_pool, gen_pool_with_concentration, load_pool, write_pool, AdversaryConfig, AdversaryState,
    Calibration, Draw, Environment, ExamplePool, RoundOutcome, Schedule, ScheduleKind,
};
pub use error::{Error, Result};
pub use harness::{
    audit_run_dir, run_experiment, run_trial, ExperimentConfig, ExperimentOutput,
    ExperimentSummary, LambdaSpec, RunAudit, StepRow, SummaryRow, TrialResult,
};
pub use learners::{default_rates, Algorithm, LearnerState, RateMode, RateSchedule};
pub use metrics::{audit_bounds, AuditConfig, AuditReport, FdrCheck, MetricsLedger};
