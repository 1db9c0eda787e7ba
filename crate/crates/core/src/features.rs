//! Single-layer convolutional features with unit normalization, and an
//! unsupervised filter bank learned from raw image patches.
//!
//! Each output position carries the rectified filter responses scaled to unit
//! length. Positions whose rectified response is (numerically) zero carry no
//! texture information; they are flagged invalid and hold the zero vector.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{dim_err, invalid, NucleoError, Result};
use crate::image::{reflect_index, GrayImage};
use crate::kmeans::{norm, spherical_kmeans};

/// Rectified responses below this norm mark a position invalid.
pub const INVALID_NORM: f64 = 1e-8;

const WHITEN_RIDGE: f64 = 1e-3;
const KMEANS_ITERS: usize = 100;

/// A bank of `num_filters` square filters with per-filter bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    num_filters: usize,
    kernel_size: usize,
    /// `num_filters x kernel_size x kernel_size`, row-major per filter.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FilterBank {
    pub fn new(kernel_size: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if kernel_size == 0 || kernel_size % 2 == 0 {
            return invalid(format!("kernel size must be odd, got {kernel_size}"));
        }
        let num_filters = bias.len();
        if num_filters == 0 {
            return invalid("filter bank needs at least one filter");
        }
        if weights.len() != num_filters * kernel_size * kernel_size {
            return dim_err(format!(
                "{} weights for {num_filters} filters of size {kernel_size}",
                weights.len()
            ));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return invalid("filter weights must be finite");
        }
        Ok(Self { num_filters, kernel_size, weights, bias })
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn filter(&self, j: usize) -> &[f64] {
        let n = self.kernel_size * self.kernel_size;
        &self.weights[j * n..(j + 1) * n]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// `H x W` grid of unit-norm `D`-dimensional feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    dim: usize,
    vectors: Vec<f64>,
    valid: Vec<bool>,
}

impl FeatureMap {
    /// Build from raw vectors, which must already be unit-norm where valid
    /// and zero where invalid.
    pub fn from_parts(width: usize, height: usize, dim: usize, vectors: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if vectors.len() != width * height * dim || valid.len() != width * height {
            return dim_err("feature map buffers do not match the declared shape");
        }
        for (i, ok) in valid.iter().enumerate() {
            let v = &vectors[i * dim..(i + 1) * dim];
            if *ok {
                if (norm(v) - 1.0).abs() > 1e-6 {
                    return invalid(format!("feature vector {i} is not unit-norm"));
                }
            } else if v.iter().any(|x| *x != 0.0) {
                return invalid(format!("invalid feature vector {i} is not zero"));
            }
        }
        Ok(Self { width, height, dim, vectors, valid })
    }

    /// Map where every position holds `v` (normalized), or is invalid when `v` is zero.
    pub fn filled(width: usize, height: usize, v: &[f64]) -> Self {
        let len = norm(v);
        let dim = v.len();
        let (unit, ok): (Vec<f64>, bool) =
            if len > 0.0 { (v.iter().map(|x| x / len).collect(), true) } else { (vec![0.0; dim], false) };
        let mut vectors = Vec::with_capacity(width * height * dim);
        for _ in 0..width * height {
            vectors.extend_from_slice(&unit);
        }
        Self { width, height, dim, vectors, valid: vec![ok; width * height] }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn vector(&self, x: usize, y: usize) -> &[f64] {
        let i = y * self.width + x;
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Overwrite one position with `v` normalized (zero vector marks it invalid).
    pub fn set_vector(&mut self, x: usize, y: usize, v: &[f64]) {
        assert_eq!(v.len(), self.dim);
        let i = y * self.width + x;
        let len = norm(v);
        let slot = &mut self.vectors[i * self.dim..(i + 1) * self.dim];
        if len > 0.0 {
            for (s, x) in slot.iter_mut().zip(v) {
                *s = x / len;
            }
            self.valid[i] = true;
        } else {
            slot.iter_mut().for_each(|s| *s = 0.0);
            self.valid[i] = false;
        }
    }

    /// Copy out the `w x h` sub-map with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<FeatureMap> {
        if x0 + w > self.width || y0 + h > self.height {
            return dim_err("crop window exceeds the feature map");
        }
        let mut vectors = Vec::with_capacity(w * h * self.dim);
        let mut valid = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.dim;
            vectors.extend_from_slice(&self.vectors[start..start + w * self.dim]);
            valid.extend_from_slice(&self.valid[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(FeatureMap { width: w, height: h, dim: self.dim, vectors, valid })
    }
}

/// Same-size correlation of `image` with every filter (reflect padding),
/// rectified and normalized to unit length per position.
pub fn convolve_extract(image: &GrayImage, bank: &FilterBank) -> Result<FeatureMap> {
    let ks = bank.kernel_size;
    let (w, h) = (image.width(), image.height());
    if w < ks || h < ks {
        return dim_err(format!("image {w}x{h} is smaller than the {ks}x{ks} kernel"));
    }
    let r = ks / 2;
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let mut padded = vec![0.0; pw * ph];
    for py in 0..ph {
        let sy = reflect_index(py as i64 - r as i64, h);
        for px in 0..pw {
            let sx = reflect_index(px as i64 - r as i64, w);
            padded[py * pw + px] = image.get(sx, sy);
        }
    }

    let planes: Vec<Vec<f64>> = (0..bank.num_filters)
        .into_par_iter()
        .map(|j| {
            let filt = bank.filter(j);
            let mut plane = vec![bank.bias[j]; w * h];
            for y in 0..h {
                let out = &mut plane[y * w..(y + 1) * w];
                for dy in 0..ks {
                    let src_row = &padded[(y + dy) * pw..(y + dy + 1) * pw];
                    for dx in 0..ks {
                        let wt = filt[dy * ks + dx];
                        for (o, s) in out.iter_mut().zip(&src_row[dx..dx + w]) {
                            *o += wt * s;
                        }
                    }
                }
            }
            plane
        })
        .collect();

    let d = bank.num_filters;
    let mut vectors = vec![0.0; w * h * d];
    let mut valid = vec![false; w * h];
    for i in 0..w * h {
        let v = &mut vectors[i * d..(i + 1) * d];
        for (j, plane) in planes.iter().enumerate() {
            v[j] = plane[i].max(0.0);
        }
        let len = norm(v);
        if len >= INVALID_NORM {
            v.iter_mut().for_each(|x| *x /= len);
            valid[i] = true;
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(FeatureMap { width: w, height: h, dim: d, vectors, valid })
}

/// Draw `count` random `kernel_size x kernel_size` patches from the images.
pub fn sample_patches(images: &[GrayImage], kernel_size: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let usable: Vec<&GrayImage> =
        images.iter().filter(|im| im.width() >= kernel_size && im.height() >= kernel_size).collect();
    if usable.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let im = usable[rng.gen_range(0..usable.len())];
            let x0 = rng.gen_range(0..=im.width() - kernel_size);
            let y0 = rng.gen_range(0..=im.height() - kernel_size);
            let mut p = Vec::with_capacity(kernel_size * kernel_size);
            for y in y0..y0 + kernel_size {
                for x in x0..x0 + kernel_size {
                    p.push(im.get(x, y));
                }
            }
            p
        })
        .collect()
}

/// Learn a filter bank by whitening the patches (mean removal plus ridge
/// covariance whitening) and running spherical k-means on the whitened
/// directions. Filters map raw patches onto the centroid directions and are
/// scaled to unit length.
///
/// Degenerate input (all patches identical) yields `num_filters` copies of
/// the normalized patch.
pub fn learn_filter_bank(patches: &[Vec<f64>], num_filters: usize, seed: u64) -> Result<FilterBank> {
    if num_filters == 0 {
        return invalid("num_filters must be positive");
    }
    if patches.len() < num_filters {
        return Err(NucleoError::InsufficientData(format!(
            "{} patches for {num_filters} filters",
            patches.len()
        )));
    }
    let n = patches[0].len();
    let ks = (n as f64).sqrt().round() as usize;
    if ks * ks != n || ks % 2 == 0 {
        return invalid(format!("patch length {n} is not an odd square"));
    }
    if patches.iter().any(|p| p.len() != n) {
        return invalid("patches differ in size");
    }

    if patches.iter().all(|p| p == &patches[0]) {
        let len = norm(&patches[0]);
        if len == 0.0 {
            return invalid("all patches are zero; no direction to learn");
        }
        let dir: Vec<f64> = patches[0].iter().map(|v| v / len).collect();
        let weights = (0..num_filters).flat_map(|_| dir.clone()).collect();
        return FilterBank::new(ks, weights, vec![0.0; num_filters]);
    }

    let count = patches.len() as f64;
    let mut mean = vec![0.0; n];
    for p in patches {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let mut cov = DMatrix::<f64>::zeros(n, n);
    for p in patches {
        let c: Vec<f64> = p.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for a in 0..n {
            for b in a..n {
                cov[(a, b)] += c[a] * c[b];
            }
        }
    }
    for a in 0..n {
        for b in a..n {
            let v = cov[(a, b)] / count;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let scale = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + WHITEN_RIDGE).sqrt());
    let whiten = &eig.eigenvectors * DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose();

    let mut unit = Vec::with_capacity(patches.len() * n);
    for p in patches {
        let c = nalgebra::DVector::from_iterator(n, p.iter().zip(&mean).map(|(v, m)| v - m));
        let z = &whiten * c;
        let len = z.norm();
        if len > 1e-12 {
            unit.extend(z.iter().map(|v| v / len));
        }
    }
    if unit.len() / n < num_filters {
        return Err(NucleoError::InsufficientData("too few non-degenerate patches after whitening".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = spherical_kmeans(&unit, n, num_filters, KMEANS_ITERS, &mut rng);

    let mut weights = Vec::with_capacity(num_filters * n);
    let mut bias = Vec::with_capacity(num_filters);
    for c in 0..num_filters {
        let centroid = nalgebra::DVector::from_column_slice(&clusters.centroids[c * n..(c + 1) * n]);
        // whiten is symmetric, so response = centroid . W (x - mean) = (W centroid) . x + b
        let filt = &whiten * centroid;
        let len = filt.norm().max(1e-300);
        let b: f64 = -filt.iter().zip(&mean).map(|(f, m)| f * m).sum::<f64>();
        weights.extend(filt.iter().map(|v| v / len));
        bias.push(b / len);
    }
    FilterBank::new(ks, weights, bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_bank(ks: usize) -> FilterBank {
        let mut w = vec![0.0; ks * ks];
        w[ks * ks / 2] = 1.0;
        FilterBank::new(ks, w, vec![0.0]).unwrap()
    }

    #[test]
    fn delta_filter_on_constant_image() {
        let img = GrayImage::constant(9, 9, 0.5);
        let fm = convolve_extract(&img, &delta_bank(5)).unwrap();
        assert_eq!((fm.width(), fm.height(), fm.dim()), (9, 9, 1));
        for y in 0..9 {
            for x in 0..9 {
                assert!(fm.is_valid(x, y));
                assert!((fm.vector(x, y)[0] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_mean_filters_kill_constants() {
        let ks = 3;
        let mut w = vec![0.0; 2 * ks * ks];
        // horizontal and vertical difference filters
        w[3] = -1.0;
        w[5] = 1.0;
        w[9 + 1] = -1.0;
        w[9 + 7] = 1.0;
        let bank = FilterBank::new(ks, w, vec![0.0, 0.0]).unwrap();
        let fm = convolve_extract(&GrayImage::constant(8, 6, 0.3), &bank).unwrap();
        assert!(fm.valid_mask().iter().all(|v| !v));
        assert!(fm.vectors().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn image_smaller_than_kernel_is_rejected() {
        let err = convolve_extract(&GrayImage::constant(3, 8, 0.1), &delta_bank(5)).unwrap_err();
        assert!(matches!(err, NucleoError::Dimension(_)));
    }

    #[test]
    fn filter_bank_validation() {
        assert!(FilterBank::new(4, vec![0.0; 16], vec![0.0]).is_err());
        assert!(FilterBank::new(3, vec![0.0; 8], vec![0.0]).is_err());
        assert!(FilterBank::new(3, vec![f64::NAN; 9], vec![0.0]).is_err());
    }

    #[test]
    fn identical_patches_take_the_fallback_path() {
        let p: Vec<f64> = (0..25).map(|i| 0.1 + i as f64 * 0.01).collect();
        let bank = learn_filter_bank(&vec![p.clone(); 10], 3, 1).unwrap();
        let len = norm(&p);
        for j in 0..3 {
            for (a, b) in bank.filter(j).iter().zip(&p) {
                assert!((a - b / len).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn too_few_patches_is_an_error() {
        let p = vec![vec![0.0; 9]; 2];
        assert!(matches!(learn_filter_bank(&p, 3, 0), Err(NucleoError::InsufficientData(_))));
        assert!(learn_filter_bank(&[vec![0.0; 4]], 1, 0).is_err());
    }

    #[test]
    fn crop_copies_the_window() {
        let img = GrayImage::from_fn(10, 8, |x, y| (x * 7 + y * 3) as f64 / 100.0);
        let fm = convolve_extract(&img, &delta_bank(3)).unwrap();
        let c = fm.crop(2, 3, 4, 2).unwrap();
        assert_eq!(c.vector(1, 1), fm.vector(3, 4));
        assert!(fm.crop(8, 0, 4, 2).is_err());
    }
}
