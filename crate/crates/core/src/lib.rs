//! Volume classifier built from a ViT-style slice encoder, attention pooling
//! over slices and two heads (classification and unit-norm projection),
//! trained with cross-entropy plus a margin contrastive loss with
//! hard-negative mining. Includes the synthetic mask generator and the
//! volume, dataset and checkpoint file formats.

pub mod aggregator;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod layers;
pub mod model;
pub mod optim;
pub mod pairs;
pub mod params;
pub mod pipeline;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{AggregatorConfig, EncoderConfig, HeadConfig, LossConfig, ModelConfig, TrainConfig};
pub use error::{CoreError, Result};
pub use model::{Model, Prediction, PreparedVolume};
pub use pairs::PairBatch;
pub use params::{ParamSpec, ParamStore};
pub use pipeline::{RunConfig, SplitVolumes};
pub use trainer::{fit, train_epoch, EpochRecord, EpochStats, FitResult};
