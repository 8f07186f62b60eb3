//! Self-contained neural-network engine: tensor layers, the channel
//! selection layer, MAE/Adam training, and model serialization.

pub mod io;
pub mod layers;
pub mod model;
pub mod train;

pub use io::{load_model, load_model_file, save_model, save_model_file};
pub use layers::{cs_mask, CsMode, Layer, LayerGrad};
pub use model::{ArchId, NetworkModel, INPUT_BINS, OUTPUT_CHANNELS};
pub use train::{train, TargetMode, TrainConfig, TrainUtterance};
