//! Datasets, configuration, persistence and experiment drivers.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod records;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use commands::{
    ablate, cmd_ablate, cmd_eval, cmd_make_dataset, cmd_train, cmd_transfer, evaluate_checkpoint,
    evaluate_model, run_training, select_for_eval, transfer, AblationGrid, TrainRun,
    TransferReport,
};
pub use config::{
    apply_overrides, resolve_output, EmbedderSpec, EvalSpec, ExperimentConfig, OUTPUT_ROOT_ENV,
};
pub use datasets::{make_dataset, read_dataset, Dataset, DatasetKind, DatasetSpec};
pub use records::{read_records, Record, RecordWriter};
