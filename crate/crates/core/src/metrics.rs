//! Point matching, precision-recall curves, AJI and Dice.

use crate::error::{dim_err, invalid, Result};
use crate::segment::InstanceLabelMap;

/// Default matching distance in pixels.
pub const DEFAULT_MATCH_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `(prediction index, ground-truth index)`.
    pub pairs: Vec<(usize, usize)>,
}

/// Prediction indices by descending score, input order on ties.
fn score_order(pred: &[ScoredPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].score.total_cmp(&pred[a].score).then(a.cmp(&b)));
    order
}

/// Ground-truth index each prediction claims, walking `order`.
fn greedy_claims(pred: &[ScoredPoint], gt: &[(f64, f64)], radius: f64, order: &[usize]) -> Vec<Option<usize>> {
    // gt raster order decides distance ties
    let mut gt_order: Vec<usize> = (0..gt.len()).collect();
    gt_order.sort_by(|&a, &b| gt[a].1.total_cmp(&gt[b].1).then(gt[a].0.total_cmp(&gt[b].0)).then(a.cmp(&b)));
    let mut claimed = vec![false; gt.len()];
    let mut out = vec![None; pred.len()];
    for &i in order {
        let p = pred[i];
        let mut best: Option<(f64, usize)> = None;
        for &g in &gt_order {
            if claimed[g] {
                continue;
            }
            let d = (p.x - gt[g].0).hypot(p.y - gt[g].1);
            if d <= radius && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, g));
            }
        }
        if let Some((_, g)) = best {
            claimed[g] = true;
            out[i] = Some(g);
        }
    }
    out
}

/// Greedy matching: predictions by descending score each take the nearest
/// unclaimed ground-truth point within `radius` (inclusive).
pub fn match_points(pred: &[ScoredPoint], gt: &[(f64, f64)], radius: f64) -> Result<MatchResult> {
    if !(radius > 0.0) {
        return invalid("match radius must be positive");
    }
    let order = score_order(pred);
    let claims = greedy_claims(pred, gt, radius, &order);
    let mut pairs: Vec<(usize, usize)> = order.iter().filter_map(|&i| claims[i].map(|g| (i, g))).collect();
    pairs.sort_unstable();
    let tp = pairs.len();
    Ok(MatchResult { true_positives: tp, false_positives: pred.len() - tp, false_negatives: gt.len() - tp, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        let s = self.precision + self.recall;
        if s == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / s
        }
    }
}

/// Precision-recall curve for one image. See [`pr_curve_multi`].
pub fn pr_curve(pred: &[ScoredPoint], gt: &[(f64, f64)], radius: f64) -> Result<Vec<PrPoint>> {
    pr_curve_multi(&[(pred.to_vec(), gt.to_vec())], radius)
}

/// Precision-recall curve pooled over images (matching stays per image).
///
/// The first point is `(+inf, 1, 0)`: no prediction survives. Then one point
/// per distinct prediction score, descending; a prediction survives a
/// threshold when its score is at least the threshold.
pub fn pr_curve_multi(images: &[(Vec<ScoredPoint>, Vec<(f64, f64)>)], radius: f64) -> Result<Vec<PrPoint>> {
    if !(radius > 0.0) {
        return invalid("match radius must be positive");
    }
    let total_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
    if total_gt == 0 {
        return invalid("precision-recall needs at least one ground-truth point");
    }
    // Greedy claims only depend on higher-scored predictions, so the matching
    // of every score prefix is a prefix of the full matching.
    let mut events: Vec<(f64, bool)> = Vec::new();
    for (pred, gt) in images {
        let order = score_order(pred);
        let claims = greedy_claims(pred, gt, radius, &order);
        events.extend(order.iter().map(|&i| (pred[i].score, claims[i].is_some())));
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![PrPoint { threshold: f64::INFINITY, precision: 1.0, recall: 0.0 }];
    let (mut tp, mut n) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            n += 1;
            tp += events[i].1 as usize;
            i += 1;
        }
        curve.push(PrPoint { threshold: t, precision: tp as f64 / n as f64, recall: tp as f64 / total_gt as f64 });
    }
    Ok(curve)
}

/// Curve point with the highest F1; the earliest (highest threshold) wins ties.
pub fn best_f1(curve: &[PrPoint]) -> Option<PrPoint> {
    curve.iter().copied().fold(None, |best, p| match best {
        Some(b) if b.f1() >= p.f1() => Some(b),
        _ => Some(p),
    })
}

/// Aggregated Jaccard index exactly as printed: every ground-truth instance
/// takes the prediction of maximum overlap (lowest id on ties, none when
/// nothing overlaps), and predictions never taken are added to the
/// denominator. Two empty maps score 1.
pub fn aji(gt: &InstanceLabelMap, pred: &InstanceLabelMap) -> Result<f64> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return dim_err("label maps differ in shape");
    }
    let (ng, np) = (gt.count(), pred.count());
    if ng == 0 && np == 0 {
        return Ok(1.0);
    }
    let mut inter = vec![0u64; (ng + 1) * (np + 1)];
    for (&g, &p) in gt.grid().as_slice().iter().zip(pred.grid().as_slice()) {
        inter[g as usize * (np + 1) + p as usize] += 1;
    }
    let size = |row: usize, col: Option<usize>| -> u64 {
        match col {
            None => (0..=np).map(|p| inter[row * (np + 1) + p]).sum(),
            Some(c) => (0..=ng).map(|g| inter[g * (np + 1) + c]).sum(),
        }
    };
    let pred_size: Vec<u64> = (0..=np).map(|p| size(0, Some(p))).collect();
    let mut used = vec![false; np + 1];
    let (mut num, mut den) = (0u64, 0u64);
    for g in 1..=ng {
        let gsize = size(g, None);
        let mut best = (0u64, 0usize);
        for p in 1..=np {
            let v = inter[g * (np + 1) + p];
            if v > best.0 {
                best = (v, p);
            }
        }
        if best.0 == 0 {
            den += gsize;
        } else {
            used[best.1] = true;
            num += best.0;
            den += gsize + pred_size[best.1] - best.0;
        }
    }
    for p in 1..=np {
        if !used[p] {
            den += pred_size[p];
        }
    }
    Ok(if den == 0 { 1.0 } else { num as f64 / den as f64 })
}

/// Dice coefficient of the two foreground sets; two empty sets score 1.
pub fn dsc(gt: &InstanceLabelMap, pred: &InstanceLabelMap) -> Result<f64> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return dim_err("label maps differ in shape");
    }
    let a = gt.grid().as_slice().iter().map(|&v| v > 0);
    let b = pred.grid().as_slice().iter().map(|&v| v > 0);
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (x, y) in a.zip(b) {
        na += x as u64;
        nb += y as u64;
        both += (x && y) as u64;
    }
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 })
}
