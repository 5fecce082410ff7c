//! Configuration, training, evaluation, ablation and robustness runs.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod robustness;
pub mod run;
pub mod train;

pub use ablate::{ablate, AblationRow, AblationTable, AblationTerms, ABLATIONS};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use eval::{evaluate, predict, write_predictions, Evaluation};
pub use robustness::{robustness, RobustnessCurve, RobustnessPoint};
pub use run::RunDir;
pub use train::{train, StepLog, TrainOutcome, Trainer};
