//! Metrics and the experiments that check the method's claims.

mod ablation;
mod alignment_theorem;
mod approximation;
mod checks;
mod information;
mod metrics;
mod ols;
mod timing;

pub use ablation::{ablation_ground_truth, ground_truth_candidates, AblationRun};
pub use alignment_theorem::{
    motivation_experiment, verify_alignment_theorem, AlignmentTheoremReport, LinearBoundary, MotivationReport,
    MotivationTask, Normalization, TheoremInstance,
};
pub use checks::{
    full_model_gradient_check, normalization_invariants, sampler_marginals, MarginalReport, NormalizationReport, Toy,
    ToyShape,
};
pub use approximation::{default_target, score_approximation, ApproximationReport, ApproximationSettings};
pub use information::{discretize, information_fraction, information_fraction_numeric, IfEstimate};
pub use metrics::{eval_metrics, higher_is_better, metric_name};
pub use ols::{ols_fit, OlsFit, Qr};
pub use timing::{fit_slope, timing_scaling, TimingPoint, TimingReport};
