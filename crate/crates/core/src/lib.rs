//! Facial-region ensemble classification.
//!
//! Images with landmark annotations are aligned to a canonical template and
//! cut into six facial region crops. One CNN per region is pretrained on an
//! identity task, fine-tuned on the target classes with a replaced head, and
//! the per-region softmax outputs are averaged into a ranked class list.

pub mod dataio;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod gestaltnet;
pub mod nn;
pub mod preproc;
pub mod raster;
pub mod rng;

pub use error::{GestaltError, Result};
