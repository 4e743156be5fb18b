//! Classifiers used as attack targets and surrogates, plus the synthetic data
//! they are trained on.

mod data;
mod io;
mod mlp;
mod train;

pub use data::{generate_blobs, load_split, save_split, BlobSpec, Dataset, Split};
pub use io::{from_json, load, save, to_json, MODEL_FORMAT, MODEL_VERSION};
pub use mlp::MlpClassifier;
pub use train::{accuracy, train, AdversarialConfig, OptimizerKind, TrainConfig, TrainReport};
