//! Near-convex decomposition of binary components.
//!
//! Trace the outer contour, find concave points from the smoothed curvature,
//! collect chords that exit the shape too far (mutex pairs), and pick the
//! cheapest set of non-crossing cuts that separates all of them.

pub mod contour;
pub mod curvature;
pub mod cuts;
pub mod raster;
pub mod solver;

pub use contour::{trace_boundary, BoundaryPolygon, Pixel, Region};
pub use curvature::{boundary_curvature, concave_points, inward_normals, DEFAULT_KAPPA_MIN, DEFAULT_SMOOTH_WINDOW};
pub use cuts::{
    cut_weight, enumerate_cuts_and_mutex, opposite_point, pair_concavity, shape_concavity, Cut, CutAnalysis, CutSelectionProblem,
    MutexPair, DEFAULT_LAMBDA, DEFAULT_PSI,
};
pub use solver::{solve_cut_selection, CutSelection, MAX_CUTS};

use crate::error::{invalid, NucleoError, Result};

/// Parts are re-decomposed while they stay this far above `psi`.
pub const CONCAVITY_SLACK: f64 = 0.5;
pub const MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeParams {
    pub psi: f64,
    pub lambda: f64,
    pub smooth_window: usize,
    pub kappa_min: f64,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self { psi: DEFAULT_PSI, lambda: DEFAULT_LAMBDA, smooth_window: DEFAULT_SMOOTH_WINDOW, kappa_min: DEFAULT_KAPPA_MIN }
    }
}

/// Contour analysis of a single (hole-filled) region.
#[derive(Debug, Clone)]
pub struct ShapeAnalysis {
    pub polygon: BoundaryPolygon,
    pub curvature: Vec<f64>,
    pub concave: Vec<usize>,
    pub analysis: CutAnalysis,
}

pub fn analyze_shape(region: &Region, params: &DecomposeParams) -> Result<ShapeAnalysis> {
    let polygon = trace_boundary(region);
    let curvature = boundary_curvature(&polygon, params.smooth_window);
    let concave = concave_points(&curvature, params.kappa_min);
    let normals = inward_normals(&polygon, params.smooth_window);
    let analysis = enumerate_cuts_and_mutex(&polygon, region, &concave, &normals, params.psi, params.lambda)?;
    Ok(ShapeAnalysis { polygon, curvature, concave, analysis })
}

#[derive(Debug, Clone, Default)]
pub struct DecomposedParts {
    /// Disjoint pixel sets covering the hole-filled input.
    pub parts: Vec<Vec<Pixel>>,
    pub selected_cuts: Vec<Cut>,
    /// Some cut-selection problem had no solution; the affected piece was kept whole.
    pub infeasible: bool,
}

fn decompose_filled(filled: &Region, params: &DecomposeParams, depth: usize, out: &mut DecomposedParts) -> Result<()> {
    let shape = analyze_shape(filled, params)?;
    if shape.analysis.mutex.is_empty() {
        out.parts.push(filled.pixels());
        return Ok(());
    }
    let mut an = shape.analysis;
    let mut selection = solve_cut_selection(&an.problem);
    if matches!(selection, Err(NucleoError::Infeasible { .. })) {
        // a pocket with a concave point on one side only: let it cut straight across
        let mut ends = shape.concave.clone();
        for (j, m) in an.mutex.iter().enumerate() {
            if an.problem.a.iter().any(|row| row[j]) {
                continue;
            }
            for &p in &shape.concave {
                ends.extend(opposite_point(&shape.polygon, filled, p, m));
            }
        }
        ends.sort_unstable();
        ends.dedup();
        if ends.len() > shape.concave.len() {
            let normals = inward_normals(&shape.polygon, params.smooth_window);
            an = enumerate_cuts_and_mutex(&shape.polygon, filled, &ends, &normals, params.psi, params.lambda)?;
            selection = solve_cut_selection(&an.problem);
        }
    }
    let selection = match selection {
        Ok(s) => s,
        Err(NucleoError::Infeasible { .. }) | Err(NucleoError::Capacity { .. }) => {
            log::warn!("component at {:?} could not be decomposed; kept whole", filled.origin());
            out.infeasible = true;
            out.parts.push(filled.pixels());
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    let chosen: Vec<Cut> = an.cuts.iter().zip(&selection.x).filter(|(_, s)| **s).map(|(c, _)| c.clone()).collect();
    let lines: Vec<(Pixel, Pixel)> = chosen.iter().map(|c| (c.p, c.q)).collect();
    let pieces = raster::split_region(filled, &lines);
    out.selected_cuts.extend(chosen);
    if pieces.len() == 1 {
        out.parts.extend(pieces);
        return Ok(());
    }
    for piece in pieces {
        let region = Region::from_pixels(&piece)?.fill_holes();
        let refine = depth < MAX_DEPTH && piece.len() > 1 && {
            let poly = trace_boundary(&region);
            shape_concavity(&poly, &region) > params.psi + CONCAVITY_SLACK
        };
        if refine {
            // filled holes may reach into sibling pieces; keep only our pixels
            let mut sub = DecomposedParts::default();
            decompose_filled(&region, params, depth + 1, &mut sub)?;
            let own: std::collections::HashSet<Pixel> = piece.iter().copied().collect();
            for part in sub.parts {
                let kept: Vec<Pixel> = part.into_iter().filter(|p| own.contains(p)).collect();
                if !kept.is_empty() {
                    out.parts.push(kept);
                }
            }
            out.selected_cuts.extend(sub.selected_cuts);
            out.infeasible |= sub.infeasible;
        } else {
            out.parts.push(piece);
        }
    }
    Ok(())
}

/// Split a component into near-convex parts. Holes are filled first; parts
/// are returned in raster order of their first pixel.
pub fn decompose(pixels: &[Pixel], params: &DecomposeParams) -> Result<DecomposedParts> {
    if !(params.psi > 0.0) {
        return invalid("psi must be positive");
    }
    let filled = Region::from_pixels(pixels)?.fill_holes();
    let mut out = DecomposedParts::default();
    decompose_filled(&filled, params, 0, &mut out)?;
    out.parts.sort_by_key(|p| (p[0].1, p[0].0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disks(centers: &[(f64, f64)], r: f64) -> Vec<Pixel> {
        let mut px = Vec::new();
        for y in -20..80 {
            for x in -20..100 {
                if centers.iter().any(|c| (x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2) <= r * r) {
                    px.push((x, y));
                }
            }
        }
        px
    }

    #[test]
    fn ellipse_is_one_part() {
        let mut px = Vec::new();
        for y in 0..30 {
            for x in 0..40 {
                if ((x as f64 - 20.0) / 15.0).powi(2) + ((y as f64 - 15.0) / 9.0).powi(2) <= 1.0 {
                    px.push((x, y));
                }
            }
        }
        let d = decompose(&px, &DecomposeParams::default()).unwrap();
        assert_eq!(d.parts.len(), 1);
        assert!(d.selected_cuts.is_empty());
    }

    #[test]
    fn dumbbell_splits_in_two() {
        let px = disks(&[(20.0, 20.0), (36.0, 20.0)], 10.0);
        let params = DecomposeParams::default();
        let an = analyze_shape(&Region::from_pixels(&px).unwrap(), &params).unwrap();
        assert_eq!(an.concave.len(), 2);
        assert_eq!(an.analysis.cuts.len(), 1);
        assert_eq!(an.analysis.problem.a, vec![vec![true]]);
        assert_eq!(an.analysis.problem.b, vec![vec![false]]);
        let d = decompose(&px, &params).unwrap();
        assert_eq!(d.parts.len(), 2);
        let total: usize = d.parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, px.len());
    }

    #[test]
    fn zero_psi_is_rejected() {
        let p = DecomposeParams { psi: 0.0, ..Default::default() };
        assert!(decompose(&[(0, 0)], &p).is_err());
        assert!(decompose(&[], &DecomposeParams::default()).is_err());
    }
}
