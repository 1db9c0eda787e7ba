//! Weakly-supervised instance segmentation and the candidate prior.

use rayon::prelude::*;

use crate::decompose::{decompose, contour::label_components4, DecomposeParams, Pixel};
use crate::error::{dim_err, invalid, Result};
use crate::features::{convolve_extract, FeatureMap};
use crate::image::{GrayImage, Grid};
use crate::kmeans::dot;
use crate::model::NucleoModel;
use crate::threshold::otsu_threshold;
use crate::vmf::VmfKernelBank;

pub const DEFAULT_MIN_AREA: usize = 20;

/// `1 - mu_0 . f`; textureless (invalid) positions score 0.
pub fn foreground_score_map(fm: &FeatureMap, bank: &VmfKernelBank) -> Result<Grid<f64>> {
    if fm.dim() != bank.dim() {
        return dim_err("feature dimension does not match the kernel bank");
    }
    let mu0 = bank.kernel(bank.background_index());
    Ok(Grid::from_fn(fm.width(), fm.height(), |x, y| if fm.is_valid(x, y) { 1.0 - dot(fm.vector(x, y), mu0) } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    Otsu,
    Fixed(f64),
}

/// Binarize (`score > threshold`) and return 4-connected components of at
/// least `min_area` pixels, in raster order of their first pixel.
pub fn threshold_components(scores: &Grid<f64>, mode: ThresholdMode, min_area: usize) -> Result<Vec<Vec<Pixel>>> {
    foreground_components(scores, mode, 0, min_area)
}

/// Keep pixels whose whole `(2r+1) x (2r+1)` square is set; the square is
/// clipped at the image border. With `r` the filter half-width this undoes
/// the spread of the filter support past a nucleus edge.
pub fn erode_square(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    // separable: rows, then columns
    let run = |get: &dyn Fn(usize) -> bool, n: usize| -> Vec<bool> {
        (0..n).map(|i| (i.saturating_sub(r)..=(i + r).min(n - 1)).all(get)).collect()
    };
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let out = run(&|x| mask[y * w + x], w);
        rows[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        for (y, v) in run(&|y| rows[y * w + x], h).into_iter().enumerate() {
            out[y * w + x] = v;
        }
    }
    out
}

/// Binarize, erode by `erode` pixels, then 4-connected components of at
/// least `min_area` pixels in raster order of their first pixel.
pub fn foreground_components(scores: &Grid<f64>, mode: ThresholdMode, erode: usize, min_area: usize) -> Result<Vec<Vec<Pixel>>> {
    if scores.as_slice().iter().any(|v| !v.is_finite()) {
        return invalid("score map contains non-finite values");
    }
    let t = match mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Otsu => match otsu_threshold(scores.as_slice()) {
            Some(t) => t,
            None => return Ok(Vec::new()),
        },
    };
    let (w, h) = (scores.width(), scores.height());
    let mask: Vec<bool> = scores.as_slice().iter().map(|v| *v > t).collect();
    let mask = erode_square(&mask, w, h, erode);
    let (labels, n) = label_components4(&mask, w, h);
    let mut comps: Vec<Vec<Pixel>> = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            comps[l as usize - 1].push(((i % w) as i64, (i / w) as i64));
        }
    }
    comps.retain(|c| c.len() >= min_area);
    Ok(comps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub pixels: Vec<Pixel>,
    pub centroid: (f64, f64),
}

fn centroid(px: &[Pixel]) -> (f64, f64) {
    let n = px.len() as f64;
    (px.iter().map(|p| p.0 as f64).sum::<f64>() / n, px.iter().map(|p| p.1 as f64).sum::<f64>() / n)
}

/// Near-convex parts of every component. The count is the number of
/// components whose decomposition was infeasible (kept whole).
///
/// Parts cover the hole-filled component; filled pixels that belong to a
/// different component (one nested in a hole) are left to that component.
pub fn generate_candidates(components: &[Vec<Pixel>], params: &DecomposeParams) -> Result<(Vec<Candidate>, usize)> {
    let results: Vec<_> = components.par_iter().map(|c| decompose(c, params)).collect::<Result<_>>()?;
    let mut owner = std::collections::HashMap::new();
    for (i, c) in components.iter().enumerate() {
        for &p in c {
            owner.insert(p, i);
        }
    }
    // hole pixels claimed by several filled components go to the smallest
    let mut claimed: std::collections::HashMap<Pixel, usize> = std::collections::HashMap::new();
    for (i, d) in results.iter().enumerate() {
        for p in d.parts.iter().flatten().filter(|p| !owner.contains_key(*p)) {
            claimed
                .entry(*p)
                .and_modify(|o| {
                    if (components[i].len(), i) < (components[*o].len(), *o) {
                        *o = i;
                    }
                })
                .or_insert(i);
        }
    }
    owner.extend(claimed);
    let mut out = Vec::new();
    let mut infeasible = 0;
    for (i, d) in results.into_iter().enumerate() {
        infeasible += d.infeasible as usize;
        for part in d.parts {
            let part: Vec<Pixel> = part.into_iter().filter(|p| owner[p] == i).collect();
            if part.is_empty() {
                continue;
            }
            let c = centroid(&part);
            out.push(Candidate { pixels: part, centroid: c });
        }
    }
    Ok((out, infeasible))
}

/// Existence prior `q` in `[floor, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMap {
    grid: Grid<f64>,
}

impl PriorMap {
    pub fn new(grid: Grid<f64>) -> Result<Self> {
        if grid.as_slice().iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return invalid("prior values must lie in (0, 1]");
        }
        Ok(Self { grid })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Grid::new(width, height, value))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.grid.get(x, y)
    }
}

/// Pointwise max of Gaussian bumps at the rounded candidate centroids,
/// floored at `floor`.
pub fn candidate_prior(centroids: &[(f64, f64)], variance: f64, floor: f64, width: usize, height: usize) -> Result<PriorMap> {
    if !(variance > 0.0) {
        return invalid("prior variance must be positive");
    }
    if !(floor > 0.0 && floor <= 1.0) {
        return invalid("prior floor must lie in (0, 1]");
    }
    let centers: Vec<(f64, f64)> = centroids.iter().map(|c| (c.0.round(), c.1.round())).collect();
    let grid = Grid::from_fn(width, height, |x, y| {
        let best = centers
            .iter()
            .map(|c| {
                let d2 = (x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2);
                (-d2 / (2.0 * variance)).exp()
            })
            .fold(0.0, f64::max);
        best.max(floor)
    });
    PriorMap::new(grid)
}

/// Per-pixel instance ids: 0 is background, instances are `1..=N` without gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    grid: Grid<u32>,
    count: usize,
}

impl InstanceLabelMap {
    /// Wrap a label grid; ids must be exactly `1..=N` for some `N`.
    pub fn new(grid: Grid<u32>) -> Result<Self> {
        let max = grid.as_slice().iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; max + 1];
        for &l in grid.as_slice() {
            seen[l as usize] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return invalid("instance labels are not contiguous");
        }
        Ok(Self { grid, count: max })
    }

    /// Renumber arbitrary ids to `1..=N` in order of first appearance (raster scan).
    pub fn from_raw(grid: Grid<u32>) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut next = 0u32;
        let relabeled = grid.map(|&l| {
            if l == 0 {
                0
            } else {
                *map.entry(l).or_insert_with(|| {
                    next += 1;
                    next
                })
            }
        });
        let count = next as usize;
        Self { grid: relabeled, count }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { grid: Grid::new(width, height, 0), count: 0 }
    }

    pub fn grid(&self) -> &Grid<u32> {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    /// Pixel lists per instance; entry `i` holds instance `i + 1`.
    pub fn instances(&self) -> Vec<Vec<Pixel>> {
        let mut out = vec![Vec::new(); self.count];
        for y in 0..self.height() {
            for x in 0..self.width() {
                let l = *self.grid.get(x, y);
                if l > 0 {
                    out[l as usize - 1].push((x as i64, y as i64));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub decompose: DecomposeParams,
    pub threshold: ThresholdMode,
    pub min_area: usize,
    /// Half-width of the square erosion after thresholding.
    pub erode: usize,
}

impl SegmentParams {
    pub fn from_model(model: &NucleoModel) -> Self {
        Self {
            decompose: DecomposeParams { psi: model.decomposition.psi, lambda: model.decomposition.lambda, ..Default::default() },
            threshold: ThresholdMode::Otsu,
            min_area: DEFAULT_MIN_AREA,
            erode: model.filters.kernel_size() / 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: InstanceLabelMap,
    /// Candidates in label order: candidate `i` is instance `i + 1`.
    pub candidates: Vec<Candidate>,
    pub infeasible_components: usize,
}

pub fn segment_features(fm: &FeatureMap, bank: &VmfKernelBank, params: &SegmentParams) -> Result<Segmentation> {
    let scores = foreground_score_map(fm, bank)?;
    let comps = foreground_components(&scores, params.threshold, params.erode, params.min_area)?;
    let (mut candidates, infeasible_components) = generate_candidates(&comps, &params.decompose)?;
    candidates.sort_by(|a, b| a.centroid.1.total_cmp(&b.centroid.1).then(a.centroid.0.total_cmp(&b.centroid.0)));
    let mut grid = Grid::new(fm.width(), fm.height(), 0u32);
    for (i, c) in candidates.iter().enumerate() {
        for &(x, y) in &c.pixels {
            grid.set(x as usize, y as usize, i as u32 + 1);
        }
    }
    let labels = InstanceLabelMap::new(grid)?;
    Ok(Segmentation { labels, candidates, infeasible_components })
}

impl Segmentation {
    /// Candidate prior from this segmentation with the model's variance and floor.
    pub fn prior(&self, model: &NucleoModel) -> Result<PriorMap> {
        let centroids: Vec<(f64, f64)> = self.candidates.iter().map(|c| c.centroid).collect();
        let d = &model.decomposition;
        candidate_prior(&centroids, d.prior_variance, d.prior_floor, self.labels.width(), self.labels.height())
    }
}

/// Foreground score, threshold, decomposition; one instance per candidate,
/// labelled in raster order of the centroids.
pub fn segment(image: &GrayImage, model: &NucleoModel, params: &SegmentParams) -> Result<Segmentation> {
    let fm = convolve_extract(image, &model.filters)?;
    segment_features(&fm, &model.kernels, params)
}
