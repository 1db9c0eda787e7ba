//! Nuclei detection and weakly-supervised instance segmentation with
//! compositional von Mises-Fisher part models.

pub mod annotation;
pub mod decompose;
pub mod detect;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod image;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod segment;
pub mod synth;
pub mod threshold;
pub mod train;
pub mod vmf;

pub use error::{NucleoError, Result};
pub use features::{convolve_extract, learn_filter_bank, FeatureMap, FilterBank};
pub use image::{BoundingBox, GrayImage, Grid};
pub use mixture::{CompositionalMixture, NucleusCrop};
pub use vmf::VmfKernelBank;
