//! Hierarchical visual localization over 360° panoramas.
//!
//! A query image is first assigned to a room by a softmax classifier over its
//! holistic descriptor, then localized within that room by exhaustive
//! Euclidean nearest-neighbour retrieval against the stored visual map.
//!
//! The crate is organized bottom-up:
//!
//! * [`imaging`]: panorama buffers and pixel primitives.
//! * [`augment`]: the illumination and rotation effects used to grow training sets.
//! * [`dataset`]: pose-labelled manifests, spatial downsampling and splits.
//! * [`descriptor`]: HOG / block-mean descriptors and the binary exchange format.
//! * [`classifier`]: the room-retrieval softmax head and its SGD trainer.
//! * [`localization`]: coarse-to-fine and flat retrieval.
//! * [`evaluation`]: accuracy, MAE, error distributions and latency summaries.
//! * [`synthetic`]: a generator for small pose-labelled corpora.

pub mod augment;
pub mod classifier;
pub mod dataset;
pub mod descriptor;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod localization;
pub mod synthetic;

pub use augment::{Effect, EffectGrid, Recipe};
pub use classifier::{SoftmaxModel, TrainConfig};
pub use dataset::{Condition, ImageRecord, Manifest, Pose, SplitTag};
pub use descriptor::{Descriptor, DescriptorSet, Method};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, LatencyReport};
pub use imaging::Panorama;
pub use localization::{LocalizationResult, Mode, RoomClassifier, VisualMap};
