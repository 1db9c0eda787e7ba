//! Chord concavity, candidate cuts, mutex pairs and the cut-selection problem.

use std::collections::BTreeMap;

use super::contour::{BoundaryPolygon, Pixel, Region};
use crate::error::{invalid, Result};

pub const DEFAULT_PSI: f64 = 3.0;
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Chord sampling step in pixels.
const SAMPLE_STEP: f64 = 0.25;

/// Candidate cut between two concave boundary vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub p_index: usize,
    pub q_index: usize,
    pub p: Pixel,
    pub q: Pixel,
    pub weight: f64,
}

/// Boundary vertex pair that must end up in different parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutexPair {
    pub v1: usize,
    pub v2: usize,
    pub concavity: f64,
}

/// `min w.x` subject to every mutex column being covered and no two chosen
/// cuts intersecting.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSelectionProblem {
    /// `a[i][j]`: cut `i` splits mutex pair `j`.
    pub a: Vec<Vec<bool>>,
    /// `b[i][j]`: cuts `i` and `j` cross.
    pub b: Vec<Vec<bool>>,
    pub weights: Vec<f64>,
    pub mutex_count: usize,
}

impl CutSelectionProblem {
    pub fn new(a: Vec<Vec<bool>>, b: Vec<Vec<bool>>, weights: Vec<f64>, mutex_count: usize) -> Result<Self> {
        let n = weights.len();
        if a.len() != n || b.len() != n || a.iter().any(|r| r.len() != mutex_count) || b.iter().any(|r| r.len() != n) {
            return invalid("cut-selection matrices do not match the cut count");
        }
        for i in 0..n {
            if b[i][i] {
                return invalid("a cut cannot conflict with itself");
            }
            for j in 0..n {
                if b[i][j] != b[j][i] {
                    return invalid("conflict matrix must be symmetric");
                }
            }
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return invalid("cut weights must be positive and finite");
        }
        Ok(Self { a, b, weights, mutex_count })
    }

    pub fn cut_count(&self) -> usize {
        self.weights.len()
    }
}

fn seg_dist((px, py): (f64, f64), (ax, ay): (f64, f64), (bx, by): (f64, f64)) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) };
    (px - ax - t * dx).hypot(py - ay - t * dy)
}

fn samples(a: Pixel, b: Pixel) -> impl Iterator<Item = (f64, f64)> {
    let len = ((b.0 - a.0) as f64).hypot((b.1 - a.1) as f64);
    let steps = (len / SAMPLE_STEP).ceil().max(1.0) as usize;
    (1..steps).map(move |s| {
        let t = s as f64 / steps as f64;
        (a.0 as f64 + t * (b.0 - a.0) as f64, a.1 as f64 + t * (b.1 - a.1) as f64)
    })
}

/// True if some sample of the open chord has none of its four surrounding
/// lattice pixels in the shape.
fn chord_exits(shape: &Region, a: Pixel, b: Pixel) -> bool {
    samples(a, b).any(|(x, y)| {
        let (fx, fy) = (x.floor() as i64, y.floor() as i64);
        !(shape.contains(fx, fy) || shape.contains(fx + 1, fy) || shape.contains(fx, fy + 1) || shape.contains(fx + 1, fy + 1))
    })
}

/// True if every sample of the open chord rounds to a shape pixel.
fn chord_inside(shape: &Region, a: Pixel, b: Pixel) -> bool {
    samples(a, b).all(|(x, y)| shape.contains(x.round() as i64, y.round() as i64))
}

/// Vertices strictly between `i` and `j` on the shorter cyclic arc (ties go
/// to the forward arc `i -> j`).
fn shorter_arc(n: usize, i: usize, j: usize) -> Vec<usize> {
    let fwd = (j + n - i) % n;
    let back = n - fwd;
    if fwd <= back {
        (1..fwd).map(|s| (i + s) % n).collect()
    } else {
        (1..back).map(|s| (j + s) % n).collect()
    }
}

/// Largest distance from the shorter boundary arc to the chord `v1 v2` if the
/// chord leaves the shape, else 0.
pub fn pair_concavity(poly: &BoundaryPolygon, shape: &Region, v1: usize, v2: usize) -> f64 {
    let n = poly.len();
    if v1 == v2 || n < 3 {
        return 0.0;
    }
    let (a, b) = (poly.vertices[v1], poly.vertices[v2]);
    if a == b || !chord_exits(shape, a, b) {
        return 0.0;
    }
    let af = (a.0 as f64, a.1 as f64);
    let bf = (b.0 as f64, b.1 as f64);
    shorter_arc(n, v1, v2)
        .into_iter()
        .map(|u| {
            let p = poly.vertices[u];
            seg_dist((p.0 as f64, p.1 as f64), af, bf)
        })
        .fold(0.0, f64::max)
}

/// Largest pair concavity over all vertex pairs of the contour.
pub fn shape_concavity(poly: &BoundaryPolygon, shape: &Region) -> f64 {
    let n = poly.len();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            best = best.max(pair_concavity(poly, shape, i, j));
        }
    }
    best
}

fn angle_deg(n: (f64, f64), v: (f64, f64)) -> f64 {
    let len = n.0.hypot(n.1) * v.0.hypot(v.1);
    if len == 0.0 {
        return 90.0;
    }
    ((n.0 * v.0 + n.1 * v.1) / len).clamp(-1.0, 1.0).acos().to_degrees()
}

/// `exp(angle(n_p, pq)) + exp(angle(n_q, qp)) + exp(lambda |pq|)` with the
/// angles in degrees.
pub fn cut_weight(p: Pixel, q: Pixel, normal_p: (f64, f64), normal_q: (f64, f64), lambda: f64) -> Result<f64> {
    if p == q {
        return invalid("zero-length cut");
    }
    let pq = ((q.0 - p.0) as f64, (q.1 - p.1) as f64);
    let qp = (-pq.0, -pq.1);
    Ok(angle_deg(normal_p, pq).exp() + angle_deg(normal_q, qp).exp() + (lambda * pq.0.hypot(pq.1)).exp())
}

/// Whether `x` lies strictly inside the forward arc from `a` to `b`.
fn strictly_between(n: usize, a: usize, b: usize, x: usize) -> bool {
    let d = (x + n - a) % n;
    d > 0 && d < (b + n - a) % n
}

/// Cut endpoints `p, q` separate `v1, v2` when each open arc between `v1`
/// and `v2` contains exactly one of them; shared endpoints do not separate.
pub fn separates(n: usize, p: usize, q: usize, v1: usize, v2: usize) -> bool {
    if p == v1 || p == v2 || q == v1 || q == v2 || p == q || v1 == v2 {
        return false;
    }
    strictly_between(n, v1, v2, p) != strictly_between(n, v1, v2, q)
}

fn orient(a: Pixel, b: Pixel, c: Pixel) -> i64 {
    ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).signum()
}

/// Proper crossing of two segments; shared endpoints and touching do not count.
pub fn segments_cross(a: Pixel, b: Pixel, c: Pixel, d: Pixel) -> bool {
    orient(a, b, c) * orient(a, b, d) < 0 && orient(c, d, a) * orient(c, d, b) < 0
}

/// Vertex on the far side of mutex pair `m` from `p` whose chord to `p` is
/// shortest relative to the boundary path between them (the narrowest neck
/// through `p`). A cut from `p` to it splits `m`.
pub fn opposite_point(poly: &BoundaryPolygon, shape: &Region, p: usize, m: &MutexPair) -> Option<usize> {
    let n = poly.len();
    let pp = poly.vertices[p];
    let mut best: Option<(f64, usize)> = None;
    for q in (0..n).filter(|&q| separates(n, p, q, m.v1, m.v2)) {
        let v = poly.vertices[q];
        let chord = ((v.0 - pp.0) as f64).hypot((v.1 - pp.1) as f64);
        let steps = (q + n - p) % n;
        let arc = steps.min(n - steps) as f64;
        let ratio = chord / arc;
        if chord > 0.0 && best.map_or(true, |(r, _)| ratio < r) && chord_inside(shape, pp, v) {
            best = Some((ratio, q));
        }
    }
    best.map(|(_, q)| q)
}

/// Everything the decomposer builds for one contour.
#[derive(Debug, Clone)]
pub struct CutAnalysis {
    pub cuts: Vec<Cut>,
    pub mutex: Vec<MutexPair>,
    pub problem: CutSelectionProblem,
}

/// Candidate cuts between concave points, thinned mutex pairs, and the
/// selection problem over them. Only cuts that split at least one mutex pair
/// are kept.
pub fn enumerate_cuts_and_mutex(
    poly: &BoundaryPolygon,
    shape: &Region,
    concave: &[usize],
    normals: &[(f64, f64)],
    psi: f64,
    lambda: f64,
) -> Result<CutAnalysis> {
    if !(psi > 0.0) {
        return invalid("psi must be positive");
    }
    let n = poly.len();
    let empty = || CutAnalysis { cuts: vec![], mutex: vec![], problem: CutSelectionProblem::new(vec![], vec![], vec![], 0).unwrap() };
    if n < 3 || concave.is_empty() {
        return Ok(empty());
    }

    // one representative per set of concave points enclosed by the pair's arc
    let mut groups: BTreeMap<Vec<usize>, MutexPair> = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let c = pair_concavity(poly, shape, i, j);
            if c <= psi {
                continue;
            }
            let arc = shorter_arc(n, i, j);
            let mut key: Vec<usize> = concave.iter().copied().filter(|cp| arc.contains(cp)).collect();
            key.sort_unstable();
            let pair = MutexPair { v1: i, v2: j, concavity: c };
            groups.entry(key).and_modify(|e| if c > e.concavity { *e = pair }).or_insert(pair);
        }
    }
    let mut mutex: Vec<MutexPair> = groups.into_values().collect();
    mutex.sort_by_key(|m| (m.v1, m.v2));

    let mut cuts = Vec::new();
    for (a, &p) in concave.iter().enumerate() {
        for &q in &concave[a + 1..] {
            let (pp, qq) = (poly.vertices[p], poly.vertices[q]);
            if pp == qq || !chord_inside(shape, pp, qq) {
                continue;
            }
            if !mutex.iter().any(|m| separates(n, p, q, m.v1, m.v2)) {
                continue;
            }
            let weight = cut_weight(pp, qq, normals[p], normals[q], lambda)?;
            cuts.push(Cut { p_index: p, q_index: q, p: pp, q: qq, weight });
        }
    }

    let column = |m: &MutexPair| -> Vec<bool> { cuts.iter().map(|c| separates(n, c.p_index, c.q_index, m.v1, m.v2)).collect() };
    let cols: Vec<Vec<bool>> = mutex.iter().map(column).collect();
    // a column whose splitters include all splitters of another is implied by it
    let subset = |a: &[bool], b: &[bool]| a.iter().zip(b).all(|(x, y)| !*x || *y);
    let keep: Vec<bool> = (0..cols.len())
        .map(|j| {
            !(0..cols.len()).any(|o| {
                o != j && cols[o].iter().any(|v| *v) && subset(&cols[o], &cols[j]) && (cols[o] != cols[j] || o < j)
            })
        })
        .collect();
    let mutex: Vec<MutexPair> = mutex.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(m, _)| m).collect();
    let cols: Vec<Vec<bool>> = cols.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(c, _)| c).collect();

    let nc = cuts.len();
    let a: Vec<Vec<bool>> = (0..nc).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let b: Vec<Vec<bool>> = (0..nc)
        .map(|i| (0..nc).map(|j| i != j && segments_cross(cuts[i].p, cuts[i].q, cuts[j].p, cuts[j].q)).collect())
        .collect();
    let weights = cuts.iter().map(|c| c.weight).collect();
    let problem = CutSelectionProblem::new(a, b, weights, mutex.len())?;
    Ok(CutAnalysis { cuts, mutex, problem })
}
