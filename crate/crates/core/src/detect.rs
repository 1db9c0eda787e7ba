//! Sliding-window mixture scoring, rotation search, prior and peak picking.

use rayon::prelude::*;

use crate::error::{dim_err, invalid, Result};
use crate::features::{convolve_extract, FeatureMap};
use crate::image::{exact_sin_cos, GrayImage, Grid};
use crate::kmeans::dot;
use crate::mixture::CompositionalMixture;
use crate::model::NucleoModel;
use crate::segment::PriorMap;
use crate::vmf::VmfKernelBank;

/// Side of the square neighbourhood a peak must strictly dominate.
pub const PEAK_NEIGHBOURHOOD: usize = 5;

/// Per-pixel best window score, with the winning component and rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMap {
    pub score: Grid<f64>,
    pub component: Grid<u32>,
    /// Winning rotation in degrees.
    pub rotation: Grid<f64>,
}

impl LikelihoodMap {
    pub fn width(&self) -> usize {
        self.score.width()
    }

    pub fn height(&self) -> usize {
        self.score.height()
    }
}

/// Natural log accurate to a few ulps for positive normal input.
#[inline(always)]
fn fast_ln(x: f64) -> f64 {
    let bits = x.to_bits();
    // exponent as a double without an int-to-float conversion
    let e = f64::from_bits((bits >> 52) | 0x4330_0000_0000_0000) - (4_503_599_627_370_496.0 + 1023.0);
    let m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    let big = m > std::f64::consts::SQRT_2;
    let m = if big { m * 0.5 } else { m };
    let e = if big { e + 1.0 } else { e };
    let z = (m - 1.0) / (m + 1.0);
    let z2 = z * z;
    let mut p = 1.0 / 21.0;
    p = p * z2 + 1.0 / 19.0;
    p = p * z2 + 1.0 / 17.0;
    p = p * z2 + 1.0 / 15.0;
    p = p * z2 + 1.0 / 13.0;
    p = p * z2 + 1.0 / 11.0;
    p = p * z2 + 1.0 / 9.0;
    p = p * z2 + 1.0 / 7.0;
    p = p * z2 + 1.0 / 5.0;
    p = p * z2 + 1.0 / 3.0;
    p = p * z2 + 1.0;
    2.0 * z * p + e * std::f64::consts::LN_2
}

/// Kernel logits per position split as `c + ln e_k` with `c = max_k`,
/// stored as `K` planes.
struct Planes {
    width: usize,
    k: usize,
    e: Vec<f64>,
    c: Vec<f64>,
}

impl Planes {
    fn new(fm: &FeatureMap, bank: &VmfKernelBank) -> Self {
        let (w, h, k) = (fm.width(), fm.height(), bank.len());
        let n = w * h;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut e = vec![0.0; k * w];
                let mut c = vec![0.0; w];
                let mut logits = vec![0.0; k];
                for x in 0..w {
                    if !fm.is_valid(x, y) {
                        for j in 0..k {
                            e[j * w + x] = 1.0;
                        }
                        continue;
                    }
                    let f = fm.vector(x, y);
                    let mut best = f64::NEG_INFINITY;
                    for (j, l) in logits.iter_mut().enumerate() {
                        *l = bank.sigma() * dot(f, bank.kernel(j));
                        best = best.max(*l);
                    }
                    for j in 0..k {
                        e[j * w + x] = (logits[j] - best).exp();
                    }
                    c[x] = best;
                }
                (e, c)
            })
            .collect();
        let mut e = vec![0.0; k * n];
        let mut c = vec![0.0; n];
        for (y, (re, rc)) in rows.into_iter().enumerate() {
            for j in 0..k {
                e[j * n + y * w..j * n + (y + 1) * w].copy_from_slice(&re[j * w..(j + 1) * w]);
            }
            c[y * w..(y + 1) * w].copy_from_slice(&rc);
        }
        Self { width: w, k, e, c }
    }

    #[inline]
    fn plane(&self, j: usize) -> &[f64] {
        let n = self.c.len();
        &self.e[j * n..(j + 1) * n]
    }
}

/// One component prepared for scoring: normalized mask weights and
/// coefficients for the offsets with non-zero weight.
struct Template {
    offsets: Vec<(usize, usize)>,
    weights: Vec<f64>,
    alphas: Vec<f64>,
}

fn templates(mixture: &CompositionalMixture) -> Vec<Option<Template>> {
    let p = mixture.patch_size();
    let k = mixture.kernels();
    (0..mixture.components())
        .map(|m| {
            let mask = mixture.fg_mask(m);
            let total: f64 = mask.iter().sum();
            if total == 0.0 {
                return None;
            }
            let a = mixture.component_alphas(m);
            let mut t = Template { offsets: Vec::new(), weights: Vec::new(), alphas: Vec::new() };
            for (u, &w) in mask.iter().enumerate() {
                if w != 0.0 {
                    t.offsets.push((u % p, u / p));
                    t.weights.push(w / total);
                    t.alphas.extend_from_slice(&a[u * k..(u + 1) * k]);
                }
            }
            Some(t)
        })
        .collect()
}

/// Scores of one component for window top-left corners `(x0 + j, y)`,
/// `j < out.len()`, added into `out`. `s` and `l` are scratch rows.
#[inline(always)]
fn score_row_body(planes: &Planes, t: &Template, y: usize, x0: usize, out: &mut [f64], s: &mut [f64], l: &mut [f64]) {
    let (w, k) = (planes.width, planes.k);
    let len = out.len();
    for (o, &(dx, dy)) in t.offsets.iter().enumerate() {
        let base = (y + dy) * w + x0 + dx;
        let a = &t.alphas[o * k..(o + 1) * k];
        for (sv, ev) in s.iter_mut().zip(&planes.plane(0)[base..base + len]) {
            *sv = a[0] * ev;
        }
        for (j, &aj) in a.iter().enumerate().skip(1) {
            for (sv, ev) in s.iter_mut().zip(&planes.plane(j)[base..base + len]) {
                *sv += aj * ev;
            }
        }
        for (lv, sv) in l.iter_mut().zip(s.iter()) {
            *lv = fast_ln(*sv);
        }
        if s.iter().any(|v| *v < f64::MIN_POSITIVE) {
            for (lv, sv) in l.iter_mut().zip(s.iter()) {
                if *sv < f64::MIN_POSITIVE {
                    *lv = sv.ln();
                }
            }
        }
        let wt = t.weights[o];
        for ((ov, lv), cv) in out.iter_mut().zip(l.iter()).zip(&planes.c[base..base + len]) {
            *ov += wt * (cv + lv);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn score_row_avx2(planes: &Planes, t: &Template, y: usize, x0: usize, out: &mut [f64], s: &mut [f64], l: &mut [f64]) {
    score_row_body(planes, t, y, x0, out, s, l)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn score_row_avx512(planes: &Planes, t: &Template, y: usize, x0: usize, out: &mut [f64], s: &mut [f64], l: &mut [f64]) {
    score_row_body(planes, t, y, x0, out, s, l)
}

/// Dispatch to the widest available vector unit. No fused multiply-add is
/// enabled, so every path computes bit-identical results.
fn score_row(planes: &Planes, t: &Template, y: usize, x0: usize, out: &mut [f64], s: &mut [f64], l: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { score_row_avx512(planes, t, y, x0, out, s, l) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { score_row_avx2(planes, t, y, x0, out, s, l) };
        }
    }
    score_row_body(planes, t, y, x0, out, s, l)
}

/// Likelihood map restricted to window centres flagged in `needed` (all
/// positions where the window fits when `None`).
fn likelihood_map_where(
    fm: &FeatureMap,
    mixture: &CompositionalMixture,
    bank: &VmfKernelBank,
    needed: Option<&[bool]>,
) -> Result<(Grid<f64>, Grid<u32>)> {
    let p = mixture.patch_size();
    let (w, h) = (fm.width(), fm.height());
    if w < p || h < p {
        return dim_err(format!("feature map {w}x{h} is smaller than the {p}x{p} window"));
    }
    if fm.dim() != bank.dim() || mixture.kernels() != bank.len() {
        return dim_err("feature map, kernel bank and mixture dimensions disagree");
    }
    let planes = Planes::new(fm, bank);
    let temps = templates(mixture);
    let half = p / 2;
    let ow = w - p + 1;
    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..h - p + 1)
        .into_par_iter()
        .map(|y| {
            let cy = y + half;
            let (lo, hi) = match needed {
                None => (0, ow),
                Some(mask) => {
                    let row = &mask[cy * w + half..cy * w + half + ow];
                    match (row.iter().position(|b| *b), row.iter().rposition(|b| *b)) {
                        (Some(a), Some(b)) => (a, b + 1),
                        _ => return (vec![f64::NEG_INFINITY; ow], vec![0; ow]),
                    }
                }
            };
            let len = hi - lo;
            let mut best = vec![f64::NEG_INFINITY; ow];
            let mut comp = vec![0u32; ow];
            let mut acc = vec![0.0; len];
            let (mut s, mut l) = (vec![0.0; len], vec![0.0; len]);
            for (m, t) in temps.iter().enumerate() {
                let Some(t) = t else { continue };
                acc.iter_mut().for_each(|v| *v = 0.0);
                score_row(&planes, t, y, lo, &mut acc, &mut s, &mut l);
                for (j, &v) in acc.iter().enumerate() {
                    if v > best[lo + j] {
                        best[lo + j] = v;
                        comp[lo + j] = m as u32;
                    }
                }
            }
            (best, comp)
        })
        .collect();
    let mut score = Grid::new(w, h, f64::NEG_INFINITY);
    let mut component = Grid::new(w, h, 0u32);
    for (y, (b, c)) in rows.into_iter().enumerate() {
        for x in 0..ow {
            let (cx, cy) = (x + half, y + half);
            if needed.map_or(true, |m| m[cy * w + cx]) {
                score.set(cx, cy, b[x]);
                component.set(cx, cy, c[x]);
            }
        }
    }
    Ok((score, component))
}

/// Best mixture score of the window centred at every position (stride 1);
/// `-inf` where the window does not fit.
pub fn likelihood_map(fm: &FeatureMap, mixture: &CompositionalMixture, bank: &VmfKernelBank) -> Result<LikelihoodMap> {
    let (score, component) = likelihood_map_where(fm, mixture, bank, None)?;
    let rotation = Grid::new(fm.width(), fm.height(), 0.0);
    Ok(LikelihoodMap { score, component, rotation })
}

/// Where the content at `(x, y)` lands after `GrayImage::rotate(degrees)` of
/// a `w x h` image.
fn rotated_position(x: f64, y: f64, w: usize, h: usize, sin: f64, cos: f64) -> (f64, f64) {
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (dx, dy) = (x - cx, y - cy);
    (cx + dx * cos - dy * sin, cy + dx * sin + dy * cos)
}

/// Score every pixel of the image at 0 degrees and at each extra rotation and
/// keep the pixel-wise maximum; ties keep the earlier rotation (0 first).
///
/// The image is reflect-padded by half a window so every pixel has a full
/// window. Rotated maps are brought back to the original frame by bilinear
/// interpolation of the score (the component comes from the nearest sample);
/// pixels whose four samples are not all scored skip that rotation.
pub fn rotated_likelihood(image: &GrayImage, model: &NucleoModel, rotations: &[f64]) -> Result<LikelihoodMap> {
    let (w, h) = (image.width(), image.height());
    let pad = model.mixture.patch_size() / 2;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let padded = GrayImage::from_fn(pw, ph, |x, y| image.get_reflect(x as i64 - pad as i64, y as i64 - pad as i64));
    let fm = convolve_extract(&padded, &model.filters)?;
    let (score0, comp0) = likelihood_map_where(&fm, &model.mixture, &model.kernels, None)?;
    let mut combined = LikelihoodMap {
        score: Grid::from_fn(w, h, |x, y| *score0.get(x + pad, y + pad)),
        component: Grid::from_fn(w, h, |x, y| *comp0.get(x + pad, y + pad)),
        rotation: Grid::new(w, h, 0.0),
    };
    drop((score0, comp0, fm));
    for &deg in rotations.iter().filter(|d| **d != 0.0) {
        let (sin, cos) = exact_sin_cos(deg);
        let inside = |qx: f64, qy: f64| {
            qx >= pad as f64 && qy >= pad as f64 && qx <= (pw - 1 - pad) as f64 && qy <= (ph - 1 - pad) as f64
        };
        let mut needed = vec![false; pw * ph];
        let mut source = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                let (qx, qy) = rotated_position((x + pad) as f64, (y + pad) as f64, pw, ph, sin, cos);
                let (x0, y0) = (qx.floor(), qy.floor());
                let (x1, y1) = (qx.ceil(), qy.ceil());
                if inside(x0, y0) && inside(x1, y1) {
                    for (cx, cy) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
                        needed[cy as usize * pw + cx as usize] = true;
                    }
                    source[y * w + x] = Some((qx, qy));
                }
            }
        }
        let rot_fm = convolve_extract(&padded.rotate(deg), &model.filters)?;
        let (score, comp) = likelihood_map_where(&rot_fm, &model.mixture, &model.kernels, Some(&needed))?;
        for y in 0..h {
            for x in 0..w {
                let Some((qx, qy)) = source[y * w + x] else { continue };
                let (x0, y0) = (qx.floor() as usize, qy.floor() as usize);
                let (x1, y1) = (qx.ceil() as usize, qy.ceil() as usize);
                let (tx, ty) = (qx - x0 as f64, qy - y0 as f64);
                let top = *score.get(x0, y0) * (1.0 - tx) + *score.get(x1, y0) * tx;
                let bot = *score.get(x0, y1) * (1.0 - tx) + *score.get(x1, y1) * tx;
                let v = top * (1.0 - ty) + bot * ty;
                if v > *combined.score.get(x, y) {
                    combined.score.set(x, y, v);
                    combined.component.set(x, y, *comp.get(qx.round() as usize, qy.round() as usize));
                    combined.rotation.set(x, y, deg);
                }
            }
        }
    }
    Ok(combined)
}

/// Add `log q` pointwise; `-inf` stays `-inf`.
pub fn apply_prior(map: &LikelihoodMap, prior: &PriorMap) -> Result<LikelihoodMap> {
    if !map.score.same_shape(prior.grid()) {
        return dim_err("prior and likelihood map differ in shape");
    }
    let mut out = map.clone();
    for (s, q) in out.score.as_mut_slice().iter_mut().zip(prior.grid().as_slice()) {
        if s.is_finite() {
            *s += q.ln();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub score: f64,
    pub component: usize,
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    /// Sorted by descending score.
    pub detections: Vec<Detection>,
    pub threshold: f64,
}

impl DetectionSet {
    /// Text table: header, then `x y score component rotation` per line.
    pub fn to_table(&self) -> String {
        let mut s = String::from("x\ty\tscore\tcomponent\trotation\n");
        for d in &self.detections {
            s.push_str(&format!("{}\t{}\t{:.6}\t{}\t{}\n", d.x, d.y, d.score, d.component, d.rotation));
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut detections = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || crate::error::NucleoError::InvalidInput(format!("malformed detection line {}", i + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            detections.push(Detection {
                x: f[0].parse().map_err(|_| bad())?,
                y: f[1].parse().map_err(|_| bad())?,
                score: f[2].parse().map_err(|_| bad())?,
                component: f[3].parse().map_err(|_| bad())?,
                rotation: f[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { detections, threshold: f64::NEG_INFINITY })
    }
}

/// Strict local maxima over a 5x5 neighbourhood with score at least
/// `threshold`, then greedy suppression of anything closer than
/// `nms_radius` to an accepted peak (descending score, row-major ties).
pub fn find_peaks(map: &LikelihoodMap, threshold: f64, nms_radius: f64) -> Vec<Detection> {
    let (w, h) = (map.width(), map.height());
    let r = (PEAK_NEIGHBOURHOOD / 2) as i64;
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = *map.score.get(x, y);
            if !v.is_finite() || v < threshold {
                continue;
            }
            let mut is_peak = true;
            'n: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if let Some(&o) = map.score.get_checked(x as i64 + dx, y as i64 + dy) {
                        if o >= v {
                            is_peak = false;
                            break 'n;
                        }
                    }
                }
            }
            if is_peak {
                peaks.push(Detection {
                    x,
                    y,
                    score: v,
                    component: *map.component.get(x, y) as usize,
                    rotation: *map.rotation.get(x, y),
                });
            }
        }
    }
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    let mut kept: Vec<Detection> = Vec::new();
    for p in peaks {
        let far = kept.iter().all(|k| {
            let (dx, dy) = (k.x as f64 - p.x as f64, k.y as f64 - p.y as f64);
            (dx * dx + dy * dy).sqrt() >= nms_radius
        });
        if far {
            kept.push(p);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectParams {
    pub rotations: Vec<f64>,
    pub nms_radius: f64,
    pub threshold: f64,
}

impl DetectParams {
    pub fn from_model(model: &NucleoModel) -> Self {
        Self {
            rotations: model.detection.rotations.clone(),
            nms_radius: model.detection.nms_radius,
            threshold: model.detection.threshold.unwrap_or(f64::NEG_INFINITY),
        }
    }
}

pub fn detect(image: &GrayImage, model: &NucleoModel, prior: Option<&PriorMap>, params: &DetectParams) -> Result<DetectionSet> {
    if !(params.nms_radius >= 0.0) {
        return invalid("nms radius must be non-negative");
    }
    let map = rotated_likelihood(image, model, &params.rotations)?;
    let map = match prior {
        Some(q) => apply_prior(&map, q)?,
        None => map,
    };
    Ok(DetectionSet { detections: find_peaks(&map, params.threshold, params.nms_radius), threshold: params.threshold })
}
