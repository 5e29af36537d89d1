//! Training loop, evaluation, ablation suite, sweeps, gradient checks and plots.

mod ablation;
mod gradcheck;
mod report;
mod sweep;
mod train;

pub use ablation::{run_ablation_suite, AblationRow, AblationTable};
pub use gradcheck::{gradcheck, micro_config, GradcheckEntry, GradcheckReport, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use report::plot_sweep;
pub use sweep::{sweep, SweepAxis, SweepRow, SweepTable};
pub use train::{
    evaluate, evaluate_model, predict_records, train, train_on, EpochRecord, PreparedData, TrainOutcome,
    TrainingHistory, CHECKPOINT_FILE, CONFIG_FILE, HISTORY_FILE,
};
