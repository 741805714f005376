//! Skeleton-based action recognition assisted by unsupervised localization of
//! the interacted object.
//!
//! The pipeline runs three stages in series. A skeleton-only graph network
//! produces preliminary action scores ([`backbone`]). Those scores condition a
//! joint-to-candidate affinity that yields per-frame attention over detected
//! objects ([`localizer`]). The attention-weighted object feature then extends
//! the skeleton graph of a second recognizer ([`fusion`]).
//!
//! All models run on a small reverse-mode tape ([`tape`]) in `f64`.

pub mod backbone;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod localizer;
pub mod model;
pub mod nn;
pub mod oracles;
pub mod params;
pub mod tape;
pub mod training;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use model::{Model, Prepared};
pub use nn::{ModelConfig, ModelDims, Variant};
pub use training::{evaluate, predict, train, TrainConfig};
