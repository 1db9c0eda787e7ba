//! Trained model and its file format.
//!
//! The file is a JSON document with a fixed `format` tag and version. Numeric
//! arrays are stored as base64 of little-endian `f64` bytes next to their
//! shape, so a save/load round trip reproduces every value bit for bit.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::decompose::{DEFAULT_LAMBDA, DEFAULT_PSI};
use crate::error::{NucleoError, Result};
use crate::features::FilterBank;
use crate::mixture::CompositionalMixture;
use crate::vmf::VmfKernelBank;

pub const MODEL_FORMAT: &str = "NUCLEO-MODEL";
pub const MODEL_VERSION: u32 = 1;

pub const DEFAULT_ROTATIONS: [f64; 5] = [-90.0, -60.0, -30.0, 30.0, 60.0];
pub const DEFAULT_NMS_RADIUS: f64 = 6.0;
pub const DEFAULT_PRIOR_VARIANCE: f64 = 10.0;
pub const DEFAULT_PRIOR_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDefaults {
    /// Extra rotations in degrees; 0 is always included.
    pub rotations: Vec<f64>,
    pub nms_radius: f64,
    /// Calibrated score threshold, if one was fitted.
    pub threshold: Option<f64>,
}

impl Default for DetectionDefaults {
    fn default() -> Self {
        Self { rotations: DEFAULT_ROTATIONS.to_vec(), nms_radius: DEFAULT_NMS_RADIUS, threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionDefaults {
    pub psi: f64,
    pub lambda: f64,
    pub prior_variance: f64,
    pub prior_floor: f64,
}

impl Default for DecompositionDefaults {
    fn default() -> Self {
        Self { psi: DEFAULT_PSI, lambda: DEFAULT_LAMBDA, prior_variance: DEFAULT_PRIOR_VARIANCE, prior_floor: DEFAULT_PRIOR_FLOOR }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NucleoModel {
    pub filters: FilterBank,
    pub kernels: VmfKernelBank,
    pub mixture: CompositionalMixture,
    pub detection: DetectionDefaults,
    pub decomposition: DecompositionDefaults,
}

impl NucleoModel {
    pub fn new(
        filters: FilterBank,
        kernels: VmfKernelBank,
        mixture: CompositionalMixture,
        detection: DetectionDefaults,
        decomposition: DecompositionDefaults,
    ) -> Result<Self> {
        if filters.num_filters() != kernels.dim() {
            return Err(NucleoError::Dimension(format!(
                "{} filters but kernels of dimension {}",
                filters.num_filters(),
                kernels.dim()
            )));
        }
        if mixture.kernels() != kernels.len() {
            return Err(NucleoError::Dimension("mixture and kernel bank disagree on the kernel count".into()));
        }
        Ok(Self { filters, kernels, mixture, detection, decomposition })
    }

    pub fn parameter_count(&self) -> usize {
        self.filters.parameter_count() + self.kernels.kernels().len() + self.mixture.parameter_count()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            parameter_count: self.parameter_count(),
            filters: FiltersSection {
                kernel_size: self.filters.kernel_size(),
                weights: Array::new(
                    vec![self.filters.num_filters(), self.filters.kernel_size(), self.filters.kernel_size()],
                    self.filters.weights(),
                ),
                bias: Array::new(vec![self.filters.num_filters()], self.filters.bias()),
            },
            kernels: KernelsSection {
                sigma: self.kernels.sigma(),
                background_index: self.kernels.background_index(),
                foreground_indices: self.kernels.foreground_indices().to_vec(),
                means: Array::new(vec![self.kernels.len(), self.kernels.dim()], self.kernels.kernels()),
            },
            mixture: MixtureSection {
                patch_size: self.mixture.patch_size(),
                alphas: Array::new(
                    vec![
                        self.mixture.components(),
                        self.mixture.patch_size(),
                        self.mixture.patch_size(),
                        self.mixture.kernels(),
                    ],
                    self.mixture.alphas(),
                ),
                nu: Array::new(vec![self.mixture.components()], self.mixture.nu()),
            },
            detection: self.detection.clone(),
            decomposition: self.decomposition.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|_| NucleoError::UnrecognizedFormat)?;
        if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
            return Err(NucleoError::UnrecognizedFormat);
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| NucleoError::CorruptModel("missing version".into()))?;
        if version != MODEL_VERSION as u64 {
            return Err(NucleoError::UnsupportedVersion(version.min(u32::MAX as u64) as u32));
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| NucleoError::CorruptModel(e.to_string()))?;
        let corrupt = |e: NucleoError| NucleoError::CorruptModel(e.to_string());

        let d = file.filters.bias.shape.first().copied().unwrap_or(0);
        let ks = file.filters.kernel_size;
        let weights = file.filters.weights.decode(&[d, ks, ks])?;
        let bias = file.filters.bias.decode(&[d])?;
        let filters = FilterBank::new(ks, weights, bias).map_err(corrupt)?;

        let kshape = &file.kernels.means.shape;
        if kshape.len() != 2 {
            return Err(NucleoError::CorruptModel("kernel means must be two-dimensional".into()));
        }
        let means = file.kernels.means.decode(&[kshape[0], kshape[1]])?;
        let kernels = VmfKernelBank::new(kshape[1], means, file.kernels.sigma)
            .and_then(|b| b.with_background(file.kernels.background_index))
            .map_err(corrupt)?;
        if kernels.foreground_indices() != file.kernels.foreground_indices.as_slice() {
            return Err(NucleoError::CorruptModel("foreground kernels are not the complement of the background".into()));
        }

        let p = file.mixture.patch_size;
        let m = file.mixture.nu.shape.first().copied().unwrap_or(0);
        let alphas = file.mixture.alphas.decode(&[m, p, p, kernels.len()])?;
        let nu = file.mixture.nu.decode(&[m])?;
        let mixture = CompositionalMixture::new(p, kernels.len(), alphas, nu, kernels.foreground_indices()).map_err(corrupt)?;
        Self::new(filters, kernels, mixture, file.detection, file.decomposition).map_err(corrupt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct Array {
    shape: Vec<usize>,
    data: String,
}

impl Array {
    fn new(shape: Vec<usize>, values: &[f64]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { shape, data: STANDARD.encode(bytes) }
    }

    fn decode(&self, expect: &[usize]) -> Result<Vec<f64>> {
        if self.shape != expect {
            return Err(NucleoError::CorruptModel(format!("array shape {:?}, expected {:?}", self.shape, expect)));
        }
        let bytes = STANDARD.decode(&self.data).map_err(|e| NucleoError::CorruptModel(e.to_string()))?;
        let n: usize = expect.iter().product();
        if bytes.len() != n * 8 {
            return Err(NucleoError::CorruptModel(format!("array payload holds {} bytes, expected {}", bytes.len(), n * 8)));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct FiltersSection {
    kernel_size: usize,
    weights: Array,
    bias: Array,
}

#[derive(Serialize, Deserialize)]
struct KernelsSection {
    sigma: f64,
    background_index: usize,
    foreground_indices: Vec<usize>,
    means: Array,
}

#[derive(Serialize, Deserialize)]
struct MixtureSection {
    patch_size: usize,
    alphas: Array,
    nu: Array,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    parameter_count: usize,
    filters: FiltersSection,
    kernels: KernelsSection,
    mixture: MixtureSection,
    detection: DetectionDefaults,
    decomposition: DecompositionDefaults,
}
