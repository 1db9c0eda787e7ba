//! Mixture of compositional models over aligned nucleus patches.
//!
//! Each component holds a `P x P` template of kernel coefficients. A patch is
//! scored by the foreground-weighted average of per-position log mixture
//! densities; the best component wins.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{dim_err, invalid, NucleoError, Result};
use crate::features::{convolve_extract, FeatureMap, FilterBank};
use crate::image::{BoundingBox, GrayImage};
use crate::kmeans::{dot, kmeans};
use crate::threshold::otsu_threshold;
use crate::vmf::VmfKernelBank;

pub const DEFAULT_COMPONENTS: usize = 20;
pub const DEFAULT_PATCH_SIZE: usize = 27;
pub const DEFAULT_EM_ITERS: usize = 3;
pub const ALPHA_FLOOR: f64 = 1e-4;
pub const INNER_SWEEPS: usize = 5;
const CLUSTER_ITERS: usize = 100;

/// Size and orientation of a nucleus from the second moments of its
/// thresholded support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NucleusGeometry {
    pub long_axis: f64,
    pub short_axis: f64,
    /// Major-axis angle from +x towards +y, in `[-pi/2, pi/2)`.
    pub orientation: f64,
    pub center_x: f64,
    pub center_y: f64,
}

/// Otsu-binarize the box content and take ellipse-equivalent diameters and
/// orientation from the central moments. An empty or degenerate foreground
/// falls back to the box extent with orientation 0.
pub fn measure_nucleus_geometry(image: &GrayImage, bbox: &BoundingBox) -> Result<NucleusGeometry> {
    let b = bbox
        .clip(image.width(), image.height())
        .ok_or_else(|| NucleoError::InvalidInput(format!("box {bbox:?} lies outside the image")))?;
    let mut vals = Vec::new();
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            vals.push(image.get(x as usize, y as usize));
        }
    }
    let fallback = || {
        let (w, h) = (b.width() as f64, b.height() as f64);
        NucleusGeometry {
            long_axis: w.max(h),
            short_axis: w.min(h),
            orientation: 0.0,
            center_x: (b.x0 + b.x1) as f64 / 2.0,
            center_y: (b.y0 + b.y1) as f64 / 2.0,
        }
    };
    let Some(t) = otsu_threshold(&vals) else { return Ok(fallback()) };
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            if image.get(x as usize, y as usize) > t {
                n += 1.0;
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    if n == 0.0 {
        return Ok(fallback());
    }
    let (cx, cy) = (sx / n, sy / n);
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            if image.get(x as usize, y as usize) > t {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                m20 += dx * dx;
                m02 += dy * dy;
                m11 += dx * dy;
            }
        }
    }
    // pixels are unit squares: add their own 1/12 spread
    let (m20, m02, m11) = (m20 / n + 1.0 / 12.0, m02 / n + 1.0 / 12.0, m11 / n);
    let half_tr = (m20 + m02) / 2.0;
    let disc = (((m20 - m02) / 2.0).powi(2) + m11 * m11).sqrt();
    let l1 = half_tr + disc;
    let l2 = (half_tr - disc).max(0.0);
    if l2 <= 0.0 {
        return Ok(fallback());
    }
    let mut orientation = 0.5 * (2.0 * m11).atan2(m20 - m02);
    if orientation >= std::f64::consts::FRAC_PI_2 {
        orientation -= std::f64::consts::PI;
    }
    Ok(NucleusGeometry {
        long_axis: 4.0 * l1.sqrt(),
        short_axis: 4.0 * l2.sqrt(),
        orientation,
        center_x: cx,
        center_y: cy,
    })
}

/// Feature patch of an isolated nucleus, rotated so the major axis is horizontal.
#[derive(Debug, Clone)]
pub struct NucleusCrop {
    pub patch: FeatureMap,
    pub bbox: BoundingBox,
    pub geometry: NucleusGeometry,
}

/// Resample a window around `(cx, cy)` with the `orientation` direction
/// mapped onto +x, featurize it, and keep the central `patch_size` square.
pub fn extract_aligned_patch(
    image: &GrayImage,
    cx: f64,
    cy: f64,
    orientation: f64,
    filters: &FilterBank,
    patch_size: usize,
) -> Result<FeatureMap> {
    if patch_size % 2 == 0 {
        return invalid(format!("patch size must be odd, got {patch_size}"));
    }
    let half = patch_size / 2 + filters.kernel_size() + 4;
    let side = 2 * half + 1;
    let (s, c) = orientation.sin_cos();
    let h = half as f64;
    let window = GrayImage::from_fn(side, side, |x, y| {
        let (u, v) = (x as f64 - h, y as f64 - h);
        image.sample_bilinear(cx + u * c - v * s, cy + u * s + v * c)
    });
    let fm = convolve_extract(&window, filters)?;
    let off = half - patch_size / 2;
    fm.crop(off, off, patch_size, patch_size)
}

pub fn make_crop(image: &GrayImage, bbox: &BoundingBox, filters: &FilterBank, patch_size: usize) -> Result<NucleusCrop> {
    let geometry = measure_nucleus_geometry(image, bbox)?;
    let patch = extract_aligned_patch(image, geometry.center_x, geometry.center_y, geometry.orientation, filters, patch_size)?;
    Ok(NucleusCrop { patch, bbox: *bbox, geometry })
}

/// k-means on `(long_axis, short_axis)`.
pub fn cluster_by_size(axes: &[(f64, f64)], components: usize, seed: u64) -> Result<Vec<usize>> {
    if components == 0 {
        return invalid("component count must be positive");
    }
    if axes.len() < components {
        return Err(NucleoError::InsufficientData(format!(
            "{} nuclei for {components} mixture components; lower the component count",
            axes.len()
        )));
    }
    let data: Vec<f64> = axes.iter().flat_map(|&(l, s)| [l, s]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(kmeans(&data, 2, components, CLUSTER_ITERS, &mut rng).assignment)
}

pub fn cluster_crops(crops: &[NucleusCrop], components: usize, seed: u64) -> Result<Vec<usize>> {
    let axes: Vec<(f64, f64)> = crops.iter().map(|c| (c.geometry.long_axis, c.geometry.short_axis)).collect();
    cluster_by_size(&axes, components, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionalMixture {
    components: usize,
    patch_size: usize,
    kernels: usize,
    /// `components x P x P x K`.
    alphas: Vec<f64>,
    nu: Vec<f64>,
    /// `components x P x P`.
    fg_masks: Vec<f64>,
}

impl CompositionalMixture {
    pub fn new(patch_size: usize, kernels: usize, alphas: Vec<f64>, nu: Vec<f64>, foreground: &[usize]) -> Result<Self> {
        if patch_size % 2 == 0 || patch_size == 0 {
            return invalid(format!("patch size must be odd, got {patch_size}"));
        }
        let per = patch_size * patch_size * kernels;
        if kernels == 0 || nu.is_empty() || alphas.len() != nu.len() * per {
            return dim_err("mixture coefficient array does not match its shape");
        }
        if foreground.iter().any(|&k| k >= kernels) {
            return invalid("foreground kernel index out of range");
        }
        for (r, row) in alphas.chunks(kernels).enumerate() {
            if row.iter().any(|a| !(*a >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return invalid(format!("coefficient row {r} is not a distribution"));
            }
        }
        if nu.iter().any(|v| !(*v >= 0.0)) || (nu.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return invalid("mixture priors must form a distribution");
        }
        let fg_masks = alphas.chunks(kernels).map(|row| foreground.iter().map(|&k| row[k]).sum::<f64>().min(1.0)).collect();
        Ok(Self { components: nu.len(), patch_size, kernels, alphas, nu, fg_masks })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Coefficients of component `m`, `P x P x K`.
    pub fn component_alphas(&self, m: usize) -> &[f64] {
        let per = self.patch_size * self.patch_size * self.kernels;
        &self.alphas[m * per..(m + 1) * per]
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn fg_mask(&self, m: usize) -> &[f64] {
        let per = self.patch_size * self.patch_size;
        &self.fg_masks[m * per..(m + 1) * per]
    }

    pub fn parameter_count(&self) -> usize {
        self.alphas.len() + self.nu.len()
    }
}

/// Per-position `sigma * f . mu_k` split as `c + ln e_k` with `c` the max
/// logit, so `e_k` is in `(0, 1]`. Invalid positions have all logits 0.
struct PatchLogits {
    e: Vec<f64>,
    c: Vec<f64>,
}

fn patch_logits(patch: &FeatureMap, bank: &VmfKernelBank) -> PatchLogits {
    let k = bank.len();
    let n = patch.width() * patch.height();
    let mut e = vec![0.0; n * k];
    let mut c = vec![0.0; n];
    for i in 0..n {
        let (x, y) = (i % patch.width(), i / patch.width());
        let row = &mut e[i * k..(i + 1) * k];
        if !patch.is_valid(x, y) {
            row.iter_mut().for_each(|v| *v = 1.0);
            continue;
        }
        let f = patch.vector(x, y);
        let mut best = f64::NEG_INFINITY;
        for (j, v) in row.iter_mut().enumerate() {
            *v = bank.sigma() * dot(f, bank.kernel(j));
            best = best.max(*v);
        }
        row.iter_mut().for_each(|v| *v = (*v - best).exp());
        c[i] = best;
    }
    PatchLogits { e, c }
}

fn score_logits(lg: &PatchLogits, alphas: &[f64], mask: &[f64], k: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        den += m;
        if m == 0.0 {
            continue;
        }
        let s: f64 = alphas[i * k..(i + 1) * k].iter().zip(&lg.e[i * k..(i + 1) * k]).map(|(a, e)| a * e).sum();
        num += m * (lg.c[i] + s.ln());
    }
    if den == 0.0 {
        f64::NEG_INFINITY
    } else {
        num / den
    }
}

fn check_patch(patch: &FeatureMap, mixture: &CompositionalMixture, bank: &VmfKernelBank) -> Result<()> {
    if patch.width() != mixture.patch_size || patch.height() != mixture.patch_size {
        return dim_err(format!(
            "patch is {}x{}, mixture expects {}",
            patch.width(),
            patch.height(),
            mixture.patch_size
        ));
    }
    if patch.dim() != bank.dim() || bank.len() != mixture.kernels {
        return dim_err("patch, kernel bank and mixture dimensions disagree");
    }
    Ok(())
}

/// Foreground-weighted mean log mixture density of `patch` under component
/// `m`; `-inf` when the component mask is all zero.
pub fn masked_log_likelihood(
    patch: &FeatureMap,
    mixture: &CompositionalMixture,
    m: usize,
    bank: &VmfKernelBank,
) -> Result<f64> {
    check_patch(patch, mixture, bank)?;
    if m >= mixture.components {
        return invalid(format!("component {m} out of range"));
    }
    let lg = patch_logits(patch, bank);
    Ok(score_logits(&lg, mixture.component_alphas(m), mixture.fg_mask(m), mixture.kernels))
}

/// Best component and its score; ties go to the lowest index.
pub fn mixture_score(patch: &FeatureMap, mixture: &CompositionalMixture, bank: &VmfKernelBank) -> Result<(usize, f64)> {
    check_patch(patch, mixture, bank)?;
    let lg = patch_logits(patch, bank);
    Ok(best_of(&lg, mixture))
}

fn best_of(lg: &PatchLogits, mixture: &CompositionalMixture) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for m in 0..mixture.components {
        let s = score_logits(lg, mixture.component_alphas(m), mixture.fg_mask(m), mixture.kernels);
        if s > best.1 {
            best = (m, s);
        }
    }
    best
}

/// Learned mixture plus the final crop assignment and objective trace.
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub mixture: CompositionalMixture,
    pub assignment: Vec<usize>,
    /// Mean best-component score after initialization and each outer step.
    pub objective: Vec<f64>,
}

/// Kernel-posterior averaging over the crops of one component, starting
/// from uniform coefficients.
fn fit_component(logits: &[PatchLogits], members: &[usize], positions: usize, k: usize) -> Vec<f64> {
    let mut alpha = vec![1.0 / k as f64; positions * k];
    let mut post = vec![0.0; k];
    for _ in 0..INNER_SWEEPS {
        let mut next = vec![0.0; positions * k];
        for &c in members {
            let lg = &logits[c];
            for i in 0..positions {
                let a = &alpha[i * k..(i + 1) * k];
                let e = &lg.e[i * k..(i + 1) * k];
                let mut z = 0.0;
                for j in 0..k {
                    post[j] = a[j] * e[j];
                    z += post[j];
                }
                for j in 0..k {
                    next[i * k + j] += post[j] / z;
                }
            }
        }
        for row in next.chunks_mut(k) {
            let n = members.len() as f64;
            row.iter_mut().for_each(|v| *v = (*v / n).max(ALPHA_FLOOR));
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        alpha = next;
    }
    alpha
}

fn fg_mask_of(alpha: &[f64], k: usize, foreground: &[usize]) -> Vec<f64> {
    alpha.chunks(k).map(|row| foreground.iter().map(|&j| row[j]).sum::<f64>().min(1.0)).collect()
}

/// Learn component templates from aligned patches, starting from
/// `assignment`, then run `em_iters` outer steps of reassignment and
/// re-estimation. A re-estimated component is kept only if it does not lower
/// the total score of its own crops, which makes the objective monotone.
pub fn learn_mixture(
    patches: &[FeatureMap],
    assignment: &[usize],
    components: usize,
    bank: &VmfKernelBank,
    em_iters: usize,
) -> Result<MixtureFit> {
    if patches.is_empty() {
        return Err(NucleoError::InsufficientData("no nucleus patches".into()));
    }
    if assignment.len() != patches.len() {
        return dim_err("assignment length differs from patch count");
    }
    if components == 0 || assignment.iter().any(|&a| a >= components) {
        return invalid("assignment refers to a component out of range");
    }
    let p = patches[0].width();
    if p % 2 == 0 || patches.iter().any(|f| f.width() != p || f.height() != p || f.dim() != bank.dim()) {
        return dim_err("patches must share an odd square size and the kernel dimension");
    }
    let k = bank.len();
    let positions = p * p;
    let fg = bank.foreground_indices();
    let logits: Vec<PatchLogits> = patches.par_iter().map(|f| patch_logits(f, bank)).collect();

    let members_of = |assign: &[usize], m: usize| -> Vec<usize> { (0..assign.len()).filter(|&c| assign[c] == m).collect() };

    let uniform = vec![1.0 / k as f64; positions * k];
    let mut alphas: Vec<Vec<f64>> = (0..components)
        .into_par_iter()
        .map(|m| {
            let members = members_of(assignment, m);
            if members.is_empty() {
                uniform.clone()
            } else {
                fit_component(&logits, &members, positions, k)
            }
        })
        .collect();
    let mut masks: Vec<Vec<f64>> = alphas.iter().map(|a| fg_mask_of(a, k, fg)).collect();
    let mut assign = assignment.to_vec();

    let best_for = |alphas: &[Vec<f64>], masks: &[Vec<f64>], c: usize| -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for m in 0..components {
            let s = score_logits(&logits[c], &alphas[m], &masks[m], k);
            if s > best.1 {
                best = (m, s);
            }
        }
        best
    };
    let objective_of = |alphas: &[Vec<f64>], masks: &[Vec<f64>]| -> f64 {
        let total: f64 = (0..patches.len()).into_par_iter().map(|c| best_for(alphas, masks, c).1).collect::<Vec<_>>().iter().sum();
        total / patches.len() as f64
    };
    let mut objective = vec![objective_of(&alphas, &masks)];

    for _ in 0..em_iters {
        let best: Vec<(usize, f64)> = (0..patches.len()).into_par_iter().map(|c| best_for(&alphas, &masks, c)).collect();
        assign = best.iter().map(|b| b.0).collect();
        let updates: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..components)
            .into_par_iter()
            .map(|m| {
                let members = members_of(&assign, m);
                if members.is_empty() {
                    return None;
                }
                let cand = fit_component(&logits, &members, positions, k);
                let cand_mask = fg_mask_of(&cand, k, fg);
                let old: f64 = members.iter().map(|&c| best[c].1).sum();
                let new: f64 = members.iter().map(|&c| score_logits(&logits[c], &cand, &cand_mask, k)).sum();
                (new >= old).then_some((cand, cand_mask))
            })
            .collect();
        let mut changed = false;
        for (m, u) in updates.into_iter().enumerate() {
            if let Some((a, mk)) = u {
                changed |= a != alphas[m];
                alphas[m] = a;
                masks[m] = mk;
            }
        }
        objective.push(objective_of(&alphas, &masks));
        if !changed {
            break;
        }
    }

    let mut counts = vec![0usize; components];
    for &a in &assign {
        counts[a] += 1;
    }
    let nu: Vec<f64> = counts.iter().map(|&c| c as f64 / assign.len() as f64).collect();
    let mixture = CompositionalMixture::new(p, k, alphas.concat(), nu, fg)?;
    Ok(MixtureFit { mixture, assignment: assign, objective })
}
