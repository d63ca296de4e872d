//! Desk-scale convolutional classifiers: configuration, weight instances,
//! MAP training and predictive evaluation.

pub mod config;
pub mod engine;
pub mod model;
pub mod train;

pub use config::{ConvBlockSpec, ImageShape, NetworkConfig};
pub use engine::{Act, Arch, NetParams};
pub use model::{
    accuracy, build_model, instance_accuracy, predictive_mc, predictive_mc_dataset, Provenance,
    WeightInstance,
};
pub use train::{dataset_loss, train_from, train_map, NoSink, SnapshotSink, TrainSettings, TrainingLog};
