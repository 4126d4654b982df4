//! Dataset manifests, slice files, preprocessing and stratified splits.

pub mod image_io;
pub mod manifest;
pub mod preprocess;
pub mod split;

pub use image_io::{read_image, write_image, ImageFormat};
pub use manifest::{load_manifest, Manifest, ManifestEntry};
pub use preprocess::{preprocess, preprocess_to, PreprocessedImage, DEFAULT_INPUT_SIZE};
pub use split::{stratified_split, stratified_split_indices, SplitIndices, SplitSpec};
