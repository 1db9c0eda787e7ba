//! Otsu thresholding over a 256-bin histogram.

pub const OTSU_BINS: usize = 256;

/// Otsu threshold of `values` (non-finite values ignored). Foreground is
/// `value > threshold`. Returns `None` when the data has a single level, in
/// which case everything is background.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let bin = |v: f64| (((v - lo) / width) as usize).min(OTSU_BINS - 1);
    let mut hist = [0usize; OTSU_BINS];
    let mut total = 0usize;
    for v in finite {
        hist[bin(v)] += 1;
        total += 1;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total_f - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return None;
    }
    // upper edge of the last background bin
    Some(lo + (best.1 + 1) as f64 * width)
}
