mod common;

use std::collections::HashSet;

use common::{model, render, samples};
use nucleo::decompose::{DecomposeParams, Pixel};
use nucleo::features::convolve_extract;
use nucleo::metrics::dsc;
use nucleo::segment::{
    candidate_prior, foreground_components, foreground_score_map, generate_candidates, segment, InstanceLabelMap, SegmentParams,
};
use nucleo::synth::Ellipse;
use nucleo::image::Grid;
use nucleo::GrayImage;
use proptest::prelude::*;

fn disks(centers: &[(f64, f64)], r: f64) -> Vec<Pixel> {
    let mut px = Vec::new();
    for y in 0..60 {
        for x in 0..80 {
            if centers.iter().any(|c| (x as f64 - c.0).hypot(y as f64 - c.1) <= r) {
                px.push((x, y));
            }
        }
    }
    px
}

fn iou(a: &[Pixel], b: &[Pixel]) -> f64 {
    let a: HashSet<&Pixel> = a.iter().collect();
    let b: HashSet<&Pixel> = b.iter().collect();
    a.intersection(&b).count() as f64 / a.union(&b).count() as f64
}

fn instance_pixels(ids: &[u32], size: usize, id: u32) -> Vec<Pixel> {
    (0..ids.len()).filter(|&i| ids[i] == id).map(|i| ((i % size) as i64, (i / size) as i64)).collect()
}

#[test]
fn dumbbell_candidates_sit_on_the_disk_centers() {
    let px = disks(&[(25.0, 30.0), (41.0, 30.0)], 10.0);
    let (cands, infeasible) = generate_candidates(&[px], &DecomposeParams::default()).unwrap();
    assert_eq!(infeasible, 0);
    assert_eq!(cands.len(), 2);
    let mut xs: Vec<(f64, f64)> = cands.iter().map(|c| c.centroid).collect();
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (c, want) in xs.iter().zip([(25.0, 30.0), (41.0, 30.0)]) {
        assert!((c.0 - want.0).hypot(c.1 - want.1) <= 2.0, "{c:?} vs {want:?}");
    }
}

#[test]
fn convex_component_is_one_candidate() {
    let px = disks(&[(30.0, 30.0)], 9.0);
    let n = px.len() as f64;
    let mean = (px.iter().map(|p| p.0 as f64).sum::<f64>() / n, px.iter().map(|p| p.1 as f64).sum::<f64>() / n);
    let (cands, _) = generate_candidates(&[px.clone()], &DecomposeParams::default()).unwrap();
    assert_eq!(cands.len(), 1);
    assert_eq!(cands[0].centroid, mean);
    assert_eq!(cands[0].pixels.len(), px.len());
    assert!(generate_candidates(&[], &DecomposeParams::default()).unwrap().0.is_empty());
}

#[test]
fn two_nuclei_give_two_components_close_to_the_truth() {
    let m = model();
    let e = [
        Ellipse { cx: 40.0, cy: 50.0, a: 9.0, b: 6.0, theta: 0.3 },
        Ellipse { cx: 85.0, cy: 75.0, a: 8.0, b: 6.5, theta: -1.0 },
    ];
    let (img, ids) = render(&e, 128, 21);
    let params = SegmentParams::from_model(m);
    let scores = foreground_score_map(&convolve_extract(&img, &m.filters).unwrap(), &m.kernels).unwrap();
    let comps = foreground_components(&scores, params.threshold, params.erode, params.min_area).unwrap();
    assert_eq!(comps.len(), 2);
    let pred: HashSet<Pixel> = comps.iter().flatten().copied().collect();
    let truth: HashSet<Pixel> = (1..=2).flat_map(|i| instance_pixels(&ids, 128, i)).collect();
    let disagree = pred.symmetric_difference(&truth).count() as f64 / truth.len() as f64;
    assert!(disagree <= 0.10, "pixel disagreement {disagree:.3}");
}

#[test]
fn isolated_nucleus_is_segmented_accurately() {
    let m = model();
    let (img, ids) = render(&[Ellipse { cx: 60.0, cy: 66.0, a: 9.0, b: 6.5, theta: 0.7 }], 128, 5);
    let seg = segment(&img, m, &SegmentParams::from_model(m)).unwrap();
    assert_eq!(seg.labels.count(), 1);
    let truth = InstanceLabelMap::new(Grid::from_vec(128, 128, ids).unwrap()).unwrap();
    let score = dsc(&truth, &seg.labels).unwrap();
    assert!(score >= 0.85, "DSC {score:.3}");
}

#[test]
fn touching_pair_is_split() {
    let m = model();
    // two round nuclei whose outlines touch
    let e = [
        Ellipse { cx: 56.0, cy: 64.0, a: 9.0, b: 9.0, theta: 0.0 },
        Ellipse { cx: 72.0, cy: 64.0, a: 9.0, b: 9.0, theta: 0.0 },
    ];
    let (img, ids) = render(&e, 128, 9);
    let seg = segment(&img, m, &SegmentParams::from_model(m)).unwrap();
    assert_eq!(seg.labels.count(), 2);
    let inst = seg.labels.instances();
    for id in 1..=2 {
        let truth = instance_pixels(&ids, 128, id);
        let best = inst.iter().map(|p| iou(p, &truth)).fold(0.0, f64::max);
        assert!(best >= 0.6, "instance {id}: IoU {best:.3}");
    }
}

#[test]
fn blank_image_has_no_instances() {
    let m = model();
    let seg = segment(&GrayImage::constant(96, 96, 0.12), m, &SegmentParams::from_model(m)).unwrap();
    assert_eq!(seg.labels.count(), 0);
    assert!(seg.labels.grid().as_slice().iter().all(|l| *l == 0));
}

/// 4-connected flood fill size from the first pixel.
fn connected(pixels: &[Pixel]) -> bool {
    let set: HashSet<Pixel> = pixels.iter().copied().collect();
    let mut seen = HashSet::from([pixels[0]]);
    let mut stack = vec![pixels[0]];
    while let Some((x, y)) = stack.pop() {
        for n in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if set.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == set.len()
}

#[test]
fn synthetic_label_maps_are_well_formed() {
    let m = model();
    let params = SegmentParams::from_model(m);
    for s in samples(3, 7000) {
        let seg = segment(&s.image, m, &params).unwrap();
        let labels: HashSet<u32> = seg.labels.grid().as_slice().iter().copied().collect();
        let n = seg.labels.count() as u32;
        assert_eq!(labels, (0..=n).collect::<HashSet<u32>>());
        for inst in seg.labels.instances() {
            assert!(connected(&inst));
        }
        // one instance per candidate, in centroid raster order
        let fm = convolve_extract(&s.image, &m.filters).unwrap();
        let comps =
            foreground_components(&foreground_score_map(&fm, &m.kernels).unwrap(), params.threshold, params.erode, params.min_area)
                .unwrap();
        let (cands, _) = generate_candidates(&comps, &params.decompose).unwrap();
        assert_eq!(cands.len(), seg.candidates.len());
        assert_eq!(seg.labels.count(), seg.candidates.len());
        for w in seg.candidates.windows(2) {
            assert!((w[0].centroid.1, w[0].centroid.0) <= (w[1].centroid.1, w[1].centroid.0));
        }
    }
}

#[test]
fn two_candidate_prior_matches_direct_evaluation() {
    let c = [(10.3, 12.6), (20.0, 15.0)];
    let q = candidate_prior(&c, 10.0, 0.05, 32, 24).unwrap();
    for y in 0..24 {
        for x in 0..32 {
            let bump = |p: (f64, f64)| (-((x as f64 - p.0.round()).powi(2) + (y as f64 - p.1.round()).powi(2)) / 20.0).exp();
            let want = bump(c[0]).max(bump(c[1])).max(0.05);
            assert!((q.get(x, y) - want).abs() < 1e-12);
        }
    }
    // the floor is reached at sqrt(2 * 10 * ln 20) ~ 7.74 px
    let single = candidate_prior(&[(10.0, 10.0)], 10.0, 0.05, 30, 30).unwrap();
    assert_eq!(single.get(10, 10), 1.0);
    assert!(single.get(17, 10) > 0.05);
    assert_eq!(single.get(18, 10), 0.05);
    assert!(candidate_prior(&[], 10.0, 0.05, 5, 5).unwrap().grid().as_slice().iter().all(|v| *v == 0.05));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prior_values_stay_in_range(
        c in prop::collection::vec((0.0f64..40.0, 0.0f64..30.0), 0..6),
        variance in 1.0f64..50.0,
    ) {
        let q = candidate_prior(&c, variance, 0.05, 40, 30).unwrap();
        for v in q.grid().as_slice() {
            prop_assert!((0.05..=1.0).contains(v));
        }
        for p in &c {
            let (x, y) = (p.0.round() as usize, p.1.round() as usize);
            if x < 40 && y < 30 {
                prop_assert_eq!(q.get(x, y), 1.0);
            }
        }
    }
}
