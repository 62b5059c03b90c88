//! Character-level HyperNetwork hate-speech classifiers.
//!
//! * [`text`] — the 69-symbol alphabet and fixed-length encoding.
//! * [`backbone`] — the character CNN main network.
//! * [`hypernet`] — static and dynamic auxiliary networks that generate the
//!   backbone's convolution kernels.
//! * [`cnngru`] — the word-level CNN-GRU baseline.
//! * [`model`] — the four model kinds behind one interface.
//! * [`training`] — BCE + Adam mini-batch training with early stopping.
//! * [`data`] / [`toy`] — dataset loading, splitting, augmentation and a
//!   synthetic corpus.
//! * [`eval`] — hate-class metrics, experiment grids and reports.
//! * [`checkpoint`] — the model file format.

pub mod backbone;
pub mod checkpoint;
pub mod cnngru;
pub mod data;
mod error;
pub mod eval;
pub mod hypernet;
pub mod model;
pub mod params;
pub mod report;
pub mod text;
pub mod toy;
pub mod training;

pub use data::{Dataset, Example, Label, Provenance};
pub use error::{Error, Result};
pub use eval::{hate_metrics, EvalReport, ExperimentRow};
pub use model::{Model, ModelConfig, ModelKind};
pub use training::{train, TrainConfig, TrainHistory, Trained};
