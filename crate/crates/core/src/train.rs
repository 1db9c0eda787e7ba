//! Training pipeline from images annotated with nucleus boxes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotation::AnnotationFile;
use crate::detect::{rotated_likelihood, find_peaks, LikelihoodMap};
use crate::error::{invalid, NucleoError, Result};
use crate::features::{convolve_extract, learn_filter_bank, sample_patches, FilterBank};
use crate::image::{BoundingBox, GrayImage};
use crate::metrics::{best_f1, pr_curve_multi, ScoredPoint, DEFAULT_MATCH_RADIUS};
use crate::mixture::{cluster_crops, learn_mixture, make_crop, DEFAULT_COMPONENTS, DEFAULT_EM_ITERS, DEFAULT_PATCH_SIZE};
use crate::model::{DecompositionDefaults, DetectionDefaults, NucleoModel};
use crate::vmf::{
    background_activation_sums, background_from_sums, learn_vmf_kernels, DEFAULT_KERNELS, DEFAULT_SIGMA, MAX_LEARNING_VECTORS,
};

pub const DEFAULT_FILTERS: usize = 32;
pub const DEFAULT_KERNEL_SIZE: usize = 5;
pub const DEFAULT_FILTER_PATCHES: usize = 20_000;
/// Boxes are grown by this much before measuring a nucleus, so the
/// intensity threshold sees some background.
pub const CROP_BOX_MARGIN: i64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_filters: usize,
    pub kernel_size: usize,
    pub filter_patches: usize,
    pub kernels: usize,
    pub sigma: f64,
    pub components: usize,
    pub patch_size: usize,
    pub em_iters: usize,
    pub max_vectors: usize,
    pub seed: u64,
    pub detection: DetectionDefaults,
    pub decomposition: DecompositionDefaults,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_filters: DEFAULT_FILTERS,
            kernel_size: DEFAULT_KERNEL_SIZE,
            filter_patches: DEFAULT_FILTER_PATCHES,
            kernels: DEFAULT_KERNELS,
            sigma: DEFAULT_SIGMA,
            components: DEFAULT_COMPONENTS,
            patch_size: DEFAULT_PATCH_SIZE,
            em_iters: DEFAULT_EM_ITERS,
            max_vectors: MAX_LEARNING_VECTORS,
            seed: 0,
            detection: DetectionDefaults::default(),
            decomposition: DecompositionDefaults::default(),
        }
    }
}

pub struct TrainingSample {
    pub image: GrayImage,
    pub annotation: AnnotationFile,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub isolated_nuclei: usize,
    pub vmf_log_likelihood: Vec<f64>,
    pub mixture_objective: Vec<f64>,
    pub parameter_count: usize,
}

fn boxes_of(a: &AnnotationFile) -> Vec<BoundingBox> {
    a.nuclei.iter().map(|n| n.bounding_box()).collect()
}

/// Fit filters, vMF kernels, background kernel and mixture, in that order.
pub fn train(samples: &[TrainingSample], config: &TrainConfig, filters: Option<FilterBank>) -> Result<(NucleoModel, TrainReport)> {
    if samples.is_empty() {
        return invalid("no training images");
    }
    for s in samples {
        if s.image.width() != s.annotation.width || s.image.height() != s.annotation.height {
            return invalid("annotation size differs from its image");
        }
    }
    let isolated: usize = samples.iter().map(|s| s.annotation.nuclei.iter().filter(|n| n.isolated).count()).sum();
    if isolated < config.components {
        return Err(NucleoError::InsufficientData(format!(
            "need ≥ {} isolated nuclei (the mixture component count), found {isolated}",
            config.components
        )));
    }

    let filters = match filters {
        Some(f) => f,
        None => {
            let images: Vec<GrayImage> = samples.iter().map(|s| s.image.clone()).collect();
            let patches = sample_patches(&images, config.kernel_size, config.filter_patches, config.seed);
            learn_filter_bank(&patches, config.num_filters, config.seed)?
        }
    };
    log::info!("filter bank: {} filters of size {}", filters.num_filters(), filters.kernel_size());

    // per-image share of the vector budget, drawn without keeping the maps
    let budget = (config.max_vectors / samples.len()).max(1);
    let chunks: Vec<Vec<f64>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<Vec<f64>> {
            let fm = convolve_extract(&s.image, &filters)?;
            let valid: Vec<usize> = (0..fm.valid_mask().len()).filter(|&p| fm.valid_mask()[p]).collect();
            let pick: Vec<usize> = if valid.len() > budget {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1 + i as u64));
                let mut idx = sample(&mut rng, valid.len(), budget).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|j| valid[j]).collect()
            } else {
                valid
            };
            let d = fm.dim();
            Ok(pick.iter().flat_map(|&p| fm.vectors()[p * d..(p + 1) * d].to_vec()).collect())
        })
        .collect::<Result<_>>()?;
    let data: Vec<f64> = chunks.concat();
    log::info!("learning {} vMF kernels from {} vectors", config.kernels, data.len() / filters.num_filters());
    let fit = learn_vmf_kernels(&data, filters.num_filters(), config.kernels, config.sigma, config.seed)?;
    drop(data);

    let sums: Vec<(Vec<f64>, usize)> = samples
        .par_iter()
        .map(|s| {
            let fm = convolve_extract(&s.image, &filters)?;
            background_activation_sums(&fit.bank, &fm, &boxes_of(&s.annotation))
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; fit.bank.len()];
    let mut count = 0;
    for (s, c) in &sums {
        total.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        count += c;
    }
    let bank = background_from_sums(&fit.bank, &total, count)?;
    log::info!("background kernel {}", bank.background_index());

    let crops: Vec<_> = samples
        .par_iter()
        .map(|s| {
            s.annotation
                .nuclei
                .iter()
                .filter(|n| n.isolated)
                .map(|n| {
                    let b = n.bounding_box().dilate(CROP_BOX_MARGIN).clip(s.image.width(), s.image.height()).unwrap_or(n.bounding_box());
                    make_crop(&s.image, &b, &filters, config.patch_size)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let assignment = cluster_crops(&crops, config.components, config.seed)?;
    let patches: Vec<_> = crops.into_iter().map(|c| c.patch).collect();
    let mix = learn_mixture(&patches, &assignment, config.components, &bank, config.em_iters)?;

    let model = NucleoModel::new(filters, bank, mix.mixture, config.detection.clone(), config.decomposition.clone())?;
    let report = TrainReport {
        isolated_nuclei: isolated,
        vmf_log_likelihood: fit.log_likelihood,
        mixture_objective: mix.objective,
        parameter_count: model.parameter_count(),
    };
    Ok((model, report))
}

/// Peaks of a likelihood map with no threshold, as scored points.
pub fn all_peaks(map: &LikelihoodMap, nms_radius: f64) -> Vec<ScoredPoint> {
    find_peaks(map, f64::NEG_INFINITY, nms_radius)
        .into_iter()
        .map(|d| ScoredPoint { x: d.x as f64, y: d.y as f64, score: d.score })
        .collect()
}

/// Best-F1 threshold over validation images; stores it in the model.
pub fn calibrate_threshold(model: &mut NucleoModel, samples: &[TrainingSample]) -> Result<f64> {
    let per_image: Vec<(Vec<ScoredPoint>, Vec<(f64, f64)>)> = samples
        .iter()
        .map(|s| {
            let map = rotated_likelihood(&s.image, model, &model.detection.rotations)?;
            Ok((all_peaks(&map, model.detection.nms_radius), s.annotation.centers()))
        })
        .collect::<Result<_>>()?;
    let curve = pr_curve_multi(&per_image, DEFAULT_MATCH_RADIUS)?;
    let best = best_f1(&curve).expect("curve is never empty");
    model.detection.threshold = Some(best.threshold);
    Ok(best.threshold)
}
