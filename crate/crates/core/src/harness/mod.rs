//! Experiment pipeline: config, dataset, training, attack fan-out, diversity
//! measurements and report tables, all under one output directory.

mod config;
mod diversity;
mod pipeline;
mod report;

pub use config::{
    AttackSpec, DatasetSpec, DiversitySpec, ExperimentConfig, Family, ModelChoice, SurrogateMode,
    SurrogateSpec, TargetSpec, TrainSpec,
};
pub use diversity::{odi_diversity, transfer_diversity, DiversityPair, DiversityReport};
pub use pipeline::{
    build_split, evaluation_inputs, generate_dataset, in_distribution, load_models,
    measure_diversity, out_of_distribution, per_class_subsample, run_attack, run_experiment,
    save_models, stage_attack, stage_diversity, stage_gen_data, stage_train, train_all,
    ExperimentResult, Manifest, ManifestEntry, ResultTree, TrainedModels, TrainingRow,
};
pub use report::{report, BoundaryRow, CwRow, PgdRow, QueryRow, Report, RestartRow};
