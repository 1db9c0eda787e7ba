//! Smoothed contour, signed curvature, inward normals and concave points.

use super::contour::BoundaryPolygon;

pub const DEFAULT_SMOOTH_WINDOW: usize = 7;
pub const DEFAULT_KAPPA_MIN: f64 = 0.02;
/// Half-width of the chord stencil used for tangents and turning angles.
pub const STENCIL: usize = 3;

/// Circular moving average of the vertex coordinates.
pub fn smooth_contour(poly: &BoundaryPolygon, window: usize) -> Vec<(f64, f64)> {
    let n = poly.len();
    let half = (window / 2) as i64;
    (0..n as i64)
        .map(|i| {
            let (mut sx, mut sy) = (0.0, 0.0);
            for d in -half..=half {
                let v = poly.vertices[(i + d).rem_euclid(n as i64) as usize];
                sx += v.0 as f64;
                sy += v.1 as f64;
            }
            let w = (2 * half + 1) as f64;
            (sx / w, sy / w)
        })
        .collect()
}

/// Signed curvature per vertex: turning angle between the tangents (chords
/// over `STENCIL` vertices either side) taken `STENCIL` vertices behind and
/// ahead, over the smoothed arc length between them. Positive is convex for
/// the contour orientation produced by tracing. Contours shorter than the
/// window get `+inf` everywhere.
pub fn boundary_curvature(poly: &BoundaryPolygon, window: usize) -> Vec<f64> {
    let n = poly.len();
    if n < window.max(2 * STENCIL + 1) {
        return vec![f64::INFINITY; n];
    }
    let s = smooth_contour(poly, window);
    let at = |i: i64| s[i.rem_euclid(n as i64) as usize];
    let k = STENCIL as i64;
    let tangent = |i: i64| {
        let (a, c) = (at(i - k), at(i + k));
        (c.0 - a.0, c.1 - a.1)
    };
    (0..n as i64)
        .map(|i| {
            let t1 = tangent(i - k);
            let t2 = tangent(i + k);
            let cross = t1.0 * t2.1 - t1.1 * t2.0;
            let dotp = t1.0 * t2.0 + t1.1 * t2.1;
            let len: f64 = (i - k..i + k)
                .map(|j| {
                    let (a, b) = (at(j), at(j + 1));
                    (b.0 - a.0).hypot(b.1 - a.1)
                })
                .sum();
            if len == 0.0 || (t1 == (0.0, 0.0) || t2 == (0.0, 0.0)) {
                0.0
            } else {
                cross.atan2(dotp) / len
            }
        })
        .collect()
}

/// Unit inward normals of the smoothed contour (interior lies to the left of
/// the tangent in `(x, y)` coordinates). Zero where the tangent vanishes.
pub fn inward_normals(poly: &BoundaryPolygon, window: usize) -> Vec<(f64, f64)> {
    let n = poly.len();
    if n < 3 {
        return vec![(0.0, 0.0); n];
    }
    let s = smooth_contour(poly, window);
    let k = STENCIL.min((n - 1) / 2).max(1);
    (0..n)
        .map(|i| {
            let a = s[(i + n - k) % n];
            let c = s[(i + k) % n];
            let t = (c.0 - a.0, c.1 - a.1);
            let len = t.0.hypot(t.1);
            if len == 0.0 {
                (0.0, 0.0)
            } else {
                (-t.1 / len, t.0 / len)
            }
        })
        .collect()
}

/// Minimum of each contiguous (cyclic) run of negative curvature, kept when
/// below `-kappa_min`. Ties within a run go to the first vertex of the run.
pub fn concave_points(curvature: &[f64], kappa_min: f64) -> Vec<usize> {
    let n = curvature.len();
    if n == 0 {
        return Vec::new();
    }
    let neg = |i: usize| curvature[i] < 0.0;
    let Some(start) = (0..n).find(|&i| !neg(i)) else {
        // all negative: a single run
        let best = (0..n).fold(0, |b, i| if curvature[i] < curvature[b] { i } else { b });
        return if curvature[best] < -kappa_min { vec![best] } else { Vec::new() };
    };
    let mut out = Vec::new();
    let mut run: Option<usize> = None;
    for step in 1..=n {
        let i = (start + step) % n;
        if neg(i) {
            run = Some(match run {
                Some(b) if curvature[b] <= curvature[i] => b,
                _ => i,
            });
        } else if let Some(b) = run.take() {
            if curvature[b] < -kappa_min {
                out.push(b);
            }
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::contour::{trace_boundary, Region};

    #[test]
    fn circle_curvature_matches_the_radius() {
        let r = Region::from_fn(0, 0, 51, 51, |x, y| (x - 25).pow(2) + (y - 25).pow(2) <= 400).unwrap();
        let k = boundary_curvature(&trace_boundary(&r), 7);
        assert!(k.iter().all(|v| *v > 0.0));
        let mean = k.iter().sum::<f64>() / k.len() as f64;
        assert!((mean - 0.05).abs() < 0.3 * 0.05, "{mean}");
    }

    #[test]
    fn square_has_no_concavity() {
        let r = Region::from_fn(0, 0, 12, 12, |_, _| true).unwrap();
        let k = boundary_curvature(&trace_boundary(&r), 7);
        assert!(k.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn short_contours_are_treated_convex() {
        let r = Region::from_fn(0, 0, 2, 2, |_, _| true).unwrap();
        assert!(boundary_curvature(&trace_boundary(&r), 7).iter().all(|v| v.is_infinite() && *v > 0.0));
    }

    #[test]
    fn concave_point_selection() {
        assert!(concave_points(&[0.1; 10], 0.02).is_empty());
        let mut k = vec![0.1; 30];
        for (i, v) in [(15, -0.03), (16, -0.05), (17, -0.2), (18, -0.1)] {
            k[i] = v;
        }
        k[25] = -0.01;
        assert_eq!(concave_points(&k, 0.02), vec![17]);
        // run wrapping around the end
        let mut k = vec![0.1; 10];
        k[9] = -0.3;
        k[0] = -0.5;
        assert_eq!(concave_points(&k, 0.02), vec![0]);
    }

    #[test]
    fn normals_point_inside() {
        let r = Region::from_fn(0, 0, 21, 21, |x, y| (x - 10).pow(2) + (y - 10).pow(2) <= 81).unwrap();
        let poly = trace_boundary(&r);
        for (v, n) in poly.vertices.iter().zip(inward_normals(&poly, 7)) {
            let to_center = (10.0 - v.0 as f64, 10.0 - v.1 as f64);
            assert!(n.0 * to_center.0 + n.1 * to_center.1 > 0.0);
        }
    }
}
