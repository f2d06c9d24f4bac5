//! Deep-supervised training of the initialization network, the prior
//! networks and the step sizes.

pub mod dataset;
pub mod loss;
pub mod synthetic;
pub mod trainer;

pub use dataset::{fallback_mask, load_dataset, DatasetOptions, Layout, Split, TrainSample};
pub use loss::{loss, LossTerms};
pub use synthetic::{synthetic_triplets, write_istd, SyntheticConfig};
pub use trainer::{read_trace, train, write_trace, LossRecord, RunPaths, TrainConfig, TrainOutcome, Trainer};
