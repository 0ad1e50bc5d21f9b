//! Multi-scale referring segmentation for remote-sensing imagery.
//!
//! The crate provides the network building blocks (spectral pyramid,
//! spatial relations, cross-modal alignment, intra- and cross-scale
//! fusion), the dataset schema and split tooling, evaluation metrics, and a
//! training / evaluation / ablation harness.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod cross_modal_align;
pub mod data_model;
pub mod error;
pub mod harness;
pub mod hfim;
pub mod ifim;
pub mod language;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod spatial_relations;
pub mod spectral_pyramid;
pub mod synthetic;

pub use error::{Error, Result};
pub use mrsnet_autograd as autograd;
