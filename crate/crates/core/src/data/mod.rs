//! Containers, file formats and preprocessing for classifier output and ground truth.

pub mod manifest;
pub mod maps;
pub mod tensor;

pub use manifest::{LoadedImage, Manifest, Record, Split};
pub use maps::{
    strip_class_and_renormalize, validate_probability_map, LabelMap, LabelSet, ProbabilityMap,
    SumDeviation, LOAD_SUM_TOLERANCE,
};
pub use tensor::{load_tensor, store_tensor, DType, Tensor, TensorData};
