//! Distillation of learned algorithms into smaller networks or symbolic
//! expressions, from synthetic inputs only.

mod blackbox;
mod symbolic;
mod synthetic;

pub use blackbox::{
    distill_blackbox, distill_blackbox_from, regression_mse, select_best_checkpoint, student_spec_for, AbandonedArm,
    Candidate, CheckpointRecord, DistillConfig, DistillOutcome, RlEvalTask, RlEvaluator, RlScore, StudentSize, Teacher,
};
pub use symbolic::{
    distill_symbolic, optimize_constants, select_lowest_mse, symbolic_test_mse, Dataset, RoundRecord, Scored,
    SymDistillConfig, SymDistillOutcome,
};
pub use synthetic::{
    generate_synthetic_inputs, DriftSampler, OptimizerSampler, SyntheticBatch, SyntheticInputSpec, TargetKind,
};
