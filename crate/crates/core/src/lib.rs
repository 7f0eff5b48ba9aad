//! Confusion-aware refinement of semantic-segmentation label probabilities.
//!
//! A trained segmenter's systematic mistakes are summarized as a dataset-wide
//! confusion matrix `P(C = c | l)`. Combined with a per-image label prior
//! `P(l)`, Bayes' rule turns it into a refinement matrix `R` with
//! `R[l][c] = P(l | C = c)`, and each pixel's softmax output `x` is re-estimated
//! as `R x`.
//!
//! Modules, bottom up:
//!
//! - [`data`]: label sets, probability and label maps, the SEGT tensor format,
//!   dataset manifests, background-class stripping.
//! - [`confusion`]: border masks, count accumulation and floored normalization.
//! - [`priors`]: uniform, global, binary, histogram and solved priors.
//! - [`refinement`]: the refinement matrix, per-pixel transform and the
//!   label-masking baseline.
//! - [`metrics`]: pixel accuracy, mean IoU and PGM heatmaps.
//! - [`synth`]: synthetic datasets from a known confusion process.
//! - [`pipeline`]: the file-to-file stages used by the command-line tool.

pub mod confusion;
pub mod data;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod priors;
pub mod refinement;
pub mod synth;

pub use confusion::{ConfusionModel, CountMatrix, PixelMask};
pub use data::{LabelMap, LabelSet, Manifest, ProbabilityMap, Split, Tensor};
pub use error::{Error, Result};
pub use matrix::SquareMatrix;
pub use metrics::EvalReport;
pub use priors::{Prior, PriorBank, PriorKind, SolverOptions};
pub use refinement::RefinementMatrix;
pub use synth::SynthSpec;
