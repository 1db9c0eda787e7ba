//! One test per acceptance criterion. Each prints a `criterion N ...: PASS`
//! or `FAIL` line with its measurements, then asserts.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use nucleo::annotation::AnnotationFile;
use nucleo::decompose::{decompose, solve_cut_selection, trace_boundary, CutSelectionProblem, DecomposeParams, Pixel, Region};
use nucleo::detect::{apply_prior, find_peaks, rotated_likelihood, DetectParams, Detection, LikelihoodMap};
use nucleo::image::Grid;
use nucleo::metrics::{aji, best_f1, dsc, match_points, pr_curve, pr_curve_multi, ScoredPoint};
use nucleo::model::NucleoModel;
use nucleo::segment::{segment, InstanceLabelMap, PriorMap, SegmentParams, Segmentation};
use nucleo::synth::{generate, GroundTruth, SynthConfig};
use nucleo::train::{train, TrainConfig, TrainingSample};
use nucleo::vmf::learn_vmf_kernels;

fn verdict(n: u32, name: &str, pass: bool, details: &str) {
    let line = format!("criterion {n} {name}: {} ({details})\n", if pass { "PASS" } else { "FAIL" });
    // straight to the handle so the harness does not capture it
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- criterion 1

fn exhaustive(problem: &CutSelectionProblem) -> Option<(f64, Vec<bool>)> {
    let n = problem.cut_count();
    let mut best: Option<(f64, Vec<bool>)> = None;
    for mask in 0u32..1 << n {
        let x: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let conflict = (0..n).any(|i| (i + 1..n).any(|j| x[i] && x[j] && problem.b[i][j]));
        let covered = (0..problem.mutex_count).all(|m| (0..n).any(|i| x[i] && problem.a[i][m]));
        if conflict || !covered {
            continue;
        }
        let cost: f64 = (0..n).filter(|&i| x[i]).map(|i| problem.weights[i]).sum();
        let better = match &best {
            None => true,
            Some((c, bx)) => cost < *c || (cost == *c && x < *bx),
        };
        if better {
            best = Some((cost, x));
        }
    }
    best
}

#[test]
fn criterion_1_solver_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let problems: Vec<CutSelectionProblem> = (0..200)
        .map(|_| {
            let n = rng.gen_range(1..=15);
            let m = rng.gen_range(0..=12);
            let a: Vec<Vec<bool>> = (0..n).map(|_| (0..m).map(|_| rng.gen_bool(0.3)).collect()).collect();
            let mut b = vec![vec![false; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let c = rng.gen_bool(0.2);
                    b[i][j] = c;
                    b[j][i] = c;
                }
            }
            // mix integer weights (exact ties) and real-valued ones
            let weights: Vec<f64> =
                (0..n).map(|_| if rng.gen_bool(0.5) { rng.gen_range(1..5) as f64 } else { rng.gen_range(3.0..400.0) }).collect();
            CutSelectionProblem::new(a, b, weights, m).unwrap()
        })
        .collect();
    let start = Instant::now();
    let solved: Vec<_> = problems.iter().map(solve_cut_selection).collect();
    let secs = start.elapsed().as_secs_f64();
    let (mut agree, mut feasible) = (0, 0);
    for (p, s) in problems.iter().zip(&solved) {
        match (s, exhaustive(p)) {
            (Ok(s), Some((cost, x))) => {
                feasible += 1;
                agree += (s.cost == cost && s.x == x) as usize;
            }
            (Err(_), None) => agree += 1,
            _ => {}
        }
    }
    let pass = agree == 200 && secs < 10.0;
    verdict(1, "solver oracle", pass, &format!("{agree}/200 agree, {feasible} feasible, solver {secs:.2} s"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

fn ellipse_union(e: &[(f64, f64, f64, f64, f64)]) -> Vec<Pixel> {
    let mut px = Vec::new();
    for y in 0..90 {
        for x in 0..90 {
            let inside = e.iter().any(|&(cx, cy, a, b, t)| {
                let (s, c) = t.sin_cos();
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                ((dx * c + dy * s) / a).powi(2) + ((-dx * s + dy * c) / b).powi(2) <= 1.0
            });
            if inside {
                px.push((x as i64, y as i64));
            }
        }
    }
    px
}

fn point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Concavity by brute force over every pair of contour pixels: a chord that
/// leaves the pixel set (probed every 0.25 px; a probe is outside when none of
/// its four lattice neighbours is set) scores the farthest contour pixel of
/// the shorter arc between its ends.
fn brute_concavity(part: &[Pixel]) -> f64 {
    let set: HashSet<Pixel> = part.iter().copied().collect();
    let contour = trace_boundary(&Region::from_pixels(part).unwrap()).vertices;
    let n = contour.len();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (contour[i], contour[j]);
            if a == b {
                continue;
            }
            let steps = (((b.0 - a.0) as f64).hypot((b.1 - a.1) as f64) / 0.25).ceil() as usize;
            let exits = (1..steps).any(|s| {
                let t = s as f64 / steps as f64;
                let (x, y) = (a.0 as f64 + t * (b.0 - a.0) as f64, a.1 as f64 + t * (b.1 - a.1) as f64);
                let (fx, fy) = (x.floor() as i64, y.floor() as i64);
                [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|(dx, dy)| !set.contains(&(fx + dx, fy + dy)))
            });
            if !exits {
                continue;
            }
            let fwd = j - i;
            let arc: Vec<usize> = if fwd <= n - fwd { (i + 1..j).collect() } else { (j + 1..n).chain(0..i).collect() };
            let (af, bf) = ((a.0 as f64, a.1 as f64), (b.0 as f64, b.1 as f64));
            for u in arc {
                best = best.max(point_segment((contour[u].0 as f64, contour[u].1 as f64), af, bf));
            }
        }
    }
    best
}

#[test]
fn criterion_2_decomposition_postconditions() {
    let params = DecomposeParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut shapes = Vec::new();
    while shapes.len() < 100 {
        let k = rng.gen_range(1..=4);
        let (cx, cy) = (45.0, 45.0);
        let e: Vec<(f64, f64, f64, f64, f64)> = (0..k)
            .map(|_| {
                let a = rng.gen_range(6.0..13.0);
                let b = rng.gen_range(5.0..9.0f64).min(a);
                (cx + rng.gen_range(-14.0..14.0), cy + rng.gen_range(-14.0..14.0), a, b, rng.gen_range(0.0..std::f64::consts::PI))
            })
            .collect();
        let px = ellipse_union(&e);
        // keep one 4-connected blob: the ellipses must overlap
        let r = Region::from_pixels(&px).unwrap();
        if px.len() > 20 && r.fill_holes().pixels().len() == px.len() && is_connected(&px) {
            shapes.push(px);
        }
    }
    let start = Instant::now();
    let outputs: Vec<_> = shapes.iter().map(|s| decompose(s, &params).unwrap()).collect();
    let secs = start.elapsed().as_secs_f64();
    let (mut partition_ok, mut convex_ok, mut infeasible, mut parts, mut worst) = (0, 0, 0, 0, 0.0f64);
    for (s, d) in shapes.iter().zip(&outputs) {
        let mut seen = HashSet::new();
        let disjoint = d.parts.iter().flatten().all(|p| seen.insert(*p));
        partition_ok += (disjoint && seen == s.iter().copied().collect::<HashSet<_>>()) as usize;
        parts += d.parts.len();
        if d.infeasible {
            infeasible += 1;
            continue;
        }
        let c = d.parts.iter().map(|p| brute_concavity(p)).fold(0.0, f64::max);
        worst = worst.max(c);
        convex_ok += (c <= params.psi + 0.5) as usize;
    }
    let pass = partition_ok == 100 && convex_ok == 100 - infeasible && secs < 30.0;
    verdict(
        2,
        "decomposition postconditions",
        pass,
        &format!(
            "{partition_ok}/100 exact partitions, {convex_ok}/{} feasible outputs within psi+0.5 (worst {worst:.2}), {infeasible} reported infeasible, {parts} parts, {secs:.2} s",
            100 - infeasible
        ),
    );
    assert!(pass);
}

fn is_connected(px: &[Pixel]) -> bool {
    let set: HashSet<Pixel> = px.iter().copied().collect();
    let mut seen = HashSet::from([px[0]]);
    let mut stack = vec![px[0]];
    while let Some((x, y)) = stack.pop() {
        for n in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if set.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == set.len()
}

// ---------------------------------------------------------------- criterion 3

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Wood's rejection sampler.
fn sample_vmf(mu: &[f64], kappa: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = mu.len() as f64;
    let b = (-2.0 * kappa + (4.0 * kappa * kappa + (d - 1.0).powi(2)).sqrt()) / (d - 1.0);
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + (d - 1.0) * (1.0 - x0 * x0).ln();
    let beta = Beta::new((d - 1.0) / 2.0, (d - 1.0) / 2.0).unwrap();
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.gen();
        if kappa * w + (d - 1.0) * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    let mut v = unit(mu.len(), rng);
    let p = dot(&v, mu);
    v.iter_mut().zip(mu).for_each(|(a, m)| *a -= p * m);
    let n = dot(&v, &v).sqrt();
    mu.iter().zip(&v).map(|(m, a)| w * m + (1.0 - w * w).sqrt() * a / n).collect()
}

#[test]
fn criterion_3_vmf_learning() {
    let mut monotone = true;
    let mut worst_cos = f64::INFINITY;
    let mut deterministic = true;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<Vec<f64>> = (0..3).map(|_| unit(8, &mut rng)).collect();
        let data: Vec<f64> = means.iter().flat_map(|m| (0..400).flat_map(|_| sample_vmf(m, 60.0, &mut rng)).collect::<Vec<_>>()).collect();
        let fit = learn_vmf_kernels(&data, 8, 3, 30.0, seed).unwrap();
        monotone &= fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9);
        // the assignment problem over 3 clusters, solved by trying every permutation
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|p| (0..3).map(|i| dot(&means[i], fit.bank.kernel(p[i]))).collect::<Vec<f64>>())
            .max_by(|a, b| a.iter().sum::<f64>().total_cmp(&b.iter().sum::<f64>()))
            .unwrap();
        worst_cos = best.iter().copied().fold(worst_cos, f64::min);
        let again = learn_vmf_kernels(&data, 8, 3, 30.0, seed).unwrap();
        deterministic &= again.bank.kernels().iter().zip(fit.bank.kernels()).all(|(a, b)| a.to_bits() == b.to_bits())
            && again.log_likelihood.iter().zip(&fit.log_likelihood).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    // monotonicity on unstructured data too
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let data: Vec<f64> = (0..300).flat_map(|_| unit(5, &mut rng)).collect();
        let fit = learn_vmf_kernels(&data, 5, 4, 30.0, seed).unwrap();
        monotone &= fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    }
    let pass = monotone && worst_cos >= 0.98 && deterministic;
    verdict(3, "vMF learning", pass, &format!("monotone {monotone}, worst matched cosine {worst_cos:.4}, bit-exact reruns {deterministic}"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

fn squares(rects: &[(usize, usize)]) -> InstanceLabelMap {
    let g = Grid::from_fn(40, 30, |x, y| {
        rects.iter().position(|&(x0, y0)| x >= x0 && x < x0 + 10 && y >= y0 && y < y0 + 10).map_or(0, |i| i as u32 + 1)
    });
    InstanceLabelMap::new(g).unwrap()
}

#[test]
fn criterion_4_metric_hand_cases() {
    let a = squares(&[(5, 5)]);
    let mut ok = Vec::new();
    ok.push(aji(&a, &a).unwrap() == 1.0 && dsc(&a, &a).unwrap() == 1.0);
    let far = squares(&[(25, 15)]);
    ok.push(aji(&a, &far).unwrap() == 0.0 && dsc(&a, &far).unwrap() == 0.0);
    let shifted = squares(&[(10, 5)]);
    let (j, d) = (aji(&a, &shifted).unwrap(), dsc(&a, &shifted).unwrap());
    ok.push(j == 50.0 / 150.0 && (j - 0.3333).abs() < 5e-5 && d == 0.5);
    let gt: Vec<(f64, f64)> = (0..5).map(|i| (10.0 + 20.0 * i as f64, 10.0)).collect();
    let sp = |x, y, score| ScoredPoint { x, y, score };
    let pred = [sp(10.0, 11.0, 0.9), sp(31.0, 10.0, 0.8), sp(50.0, 12.0, 0.7), sp(100.0, 100.0, 0.6), sp(200.0, 5.0, 0.5)];
    let curve: Vec<(f64, f64, f64)> = pr_curve(&pred, &gt, 3.0).unwrap().iter().map(|p| (p.threshold, p.precision, p.recall)).collect();
    ok.push(
        curve
            == vec![
                (f64::INFINITY, 1.0, 0.0),
                (0.9, 1.0, 0.2),
                (0.8, 1.0, 0.4),
                (0.7, 1.0, 0.6),
                (0.6, 0.75, 0.6),
                (0.5, 0.6, 0.6),
            ],
    );
    let pass = ok.iter().all(|v| *v);
    verdict(
        4,
        "metric hand cases",
        pass,
        &format!("identity {}, disjoint {}, half overlap aji {j:.4} dsc {d:.4} {}, five-point curve {}", ok[0], ok[1], ok[2], ok[3]),
    );
    assert!(pass);
}

// ------------------------------------------------------------ criteria 5 to 7

struct HeldOut {
    truth: GroundTruth,
    map: LikelihoodMap,
    seg: Segmentation,
    prior: PriorMap,
    detect_secs: f64,
}

struct Run {
    model: NucleoModel,
    isolated: usize,
    train_secs: f64,
    images: Vec<HeldOut>,
}

const TRAIN_IMAGES: u64 = 200;
const TEST_IMAGES: u64 = 50;

/// Train on 200 generated images, then score 50 held-out ones with touching
/// pairs. Detection maps are kept so the prior ablation reuses them.
fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let samples: Vec<TrainingSample> = (0..TRAIN_IMAGES)
            .map(|seed| {
                let s = generate(&SynthConfig { seed, ..Default::default() }).unwrap();
                let annotation = AnnotationFile::from_truth(&s.truth, 256, 256, None);
                TrainingSample { image: s.image, annotation }
            })
            .collect();
        let isolated = samples.iter().map(|s| s.annotation.nuclei.iter().filter(|n| n.isolated).count()).sum();
        let start = Instant::now();
        let (model, _) = train(&samples, &TrainConfig::default(), None).unwrap();
        let train_secs = start.elapsed().as_secs_f64();
        drop(samples);
        let params = SegmentParams::from_model(&model);
        let images = (0..TEST_IMAGES)
            .map(|i| {
                let s = generate(&SynthConfig { seed: 1_000_000 + i, touching_prob: 0.3, ..Default::default() }).unwrap();
                // the default detect path: segmentation for the prior, then the rotated likelihood
                let start = Instant::now();
                let seg = segment(&s.image, &model, &params).unwrap();
                let prior = seg.prior(&model).unwrap();
                let map = rotated_likelihood(&s.image, &model, &model.detection.rotations).unwrap();
                let peaks = find_peaks(&apply_prior(&map, &prior).unwrap(), f64::NEG_INFINITY, model.detection.nms_radius);
                let detect_secs = start.elapsed().as_secs_f64();
                std::hint::black_box(peaks);
                HeldOut { truth: s.truth, map, seg, prior, detect_secs }
            })
            .collect();
        Run { model, isolated, train_secs, images }
    })
}

fn scored(peaks: &[Detection]) -> Vec<ScoredPoint> {
    peaks.iter().map(|d| ScoredPoint { x: d.x as f64, y: d.y as f64, score: d.score }).collect()
}

/// All peaks per image, with or without the candidate prior.
fn peaks(r: &Run, with_prior: bool) -> Vec<(Vec<ScoredPoint>, Vec<(f64, f64)>)> {
    let nms = DetectParams::from_model(&r.model).nms_radius;
    r.images
        .iter()
        .map(|h| {
            let map = if with_prior { apply_prior(&h.map, &h.prior).unwrap() } else { h.map.clone() };
            (scored(&find_peaks(&map, f64::NEG_INFINITY, nms)), h.truth.centers.clone())
        })
        .collect()
}

#[test]
fn criterion_5_synthetic_detection() {
    let r = run();
    let curve = pr_curve_multi(&peaks(r, true), 3.0).unwrap();
    let best = best_f1(&curve).unwrap();
    let curve0 = pr_curve_multi(&peaks(r, false), 3.0).unwrap();
    let best0 = best_f1(&curve0).unwrap();
    let mean_secs = r.images.iter().map(|h| h.detect_secs).sum::<f64>() / r.images.len() as f64;
    let max_secs = r.images.iter().map(|h| h.detect_secs).fold(0.0, f64::max);
    let threads = rayon::current_num_threads();
    let pass = r.isolated >= 1000 && best.f1() >= 0.85 && max_secs < 5.0;
    verdict(
        5,
        "synthetic detection",
        pass,
        &format!(
            "{} isolated training nuclei, training {:.0} s; best F1 {:.4} (P {:.4} R {:.4}) with prior, {:.4} without; detect {mean_secs:.2} s mean, {max_secs:.2} s max per 256x256 image on {threads} thread(s)",
            r.isolated,
            r.train_secs,
            best.f1(),
            best.precision,
            best.recall,
            best0.f1()
        ),
    );
    assert!(pass);
}

/// Index of the predicted instance overlapping gt instance `id` most, or 0.
fn best_overlap(gt: &InstanceLabelMap, pred: &InstanceLabelMap, id: u32) -> u32 {
    let mut counts = vec![0usize; pred.count() + 1];
    for (&g, &p) in gt.grid().as_slice().iter().zip(pred.grid().as_slice()) {
        if g == id && p > 0 {
            counts[p as usize] += 1;
        }
    }
    (1..counts.len()).fold(0, |b, p| if counts[p] > counts[b] { p } else { b }) as u32
}

#[test]
fn criterion_6_synthetic_segmentation() {
    let r = run();
    let psi = r.model.decomposition.psi;
    let (mut sum_dsc, mut sum_aji) = (0.0, 0.0);
    let (mut deep_pairs, mut split) = (0, 0);
    for h in &r.images {
        sum_dsc += dsc(&h.truth.masks, &h.seg.labels).unwrap();
        sum_aji += aji(&h.truth.masks, &h.seg.labels).unwrap();
        let inst = h.truth.masks.instances();
        for &(i, j) in &h.truth.touching_pairs {
            let union: Vec<Pixel> = inst[i].iter().chain(&inst[j]).copied().collect();
            if brute_concavity(&union) <= psi {
                continue;
            }
            deep_pairs += 1;
            let a = best_overlap(&h.truth.masks, &h.seg.labels, i as u32 + 1);
            let b = best_overlap(&h.truth.masks, &h.seg.labels, j as u32 + 1);
            split += (a != 0 && b != 0 && a != b) as usize;
        }
    }
    let n = r.images.len() as f64;
    let (mean_dsc, mean_aji) = (sum_dsc / n, sum_aji / n);
    let rate = if deep_pairs == 0 { 0.0 } else { split as f64 / deep_pairs as f64 };
    let pass = mean_dsc >= 0.80 && mean_aji >= 0.55 && deep_pairs > 0 && rate >= 0.80;
    verdict(
        6,
        "synthetic segmentation",
        pass,
        &format!("mean DSC {mean_dsc:.4}, mean AJI {mean_aji:.4}; {split}/{deep_pairs} touching pairs with neck depth > psi split ({:.1}%)", 100.0 * rate),
    );
    assert!(pass);
}

fn false_positives(images: &[(Vec<ScoredPoint>, Vec<(f64, f64)>)], threshold: f64) -> usize {
    images
        .iter()
        .map(|(p, g)| {
            let kept: Vec<ScoredPoint> = p.iter().copied().filter(|s| s.score >= threshold).collect();
            match_points(&kept, g, 3.0).unwrap().false_positives
        })
        .sum()
}

#[test]
fn criterion_7_candidate_prior() {
    let r = run();
    let (without, with) = (peaks(r, false), peaks(r, true));
    let b0 = best_f1(&pr_curve_multi(&without, 3.0).unwrap()).unwrap();
    let b1 = best_f1(&pr_curve_multi(&with, 3.0).unwrap()).unwrap();
    let (fp0, fp1) = (false_positives(&without, b0.threshold), false_positives(&with, b0.threshold));
    let pass = b1.f1() >= b0.f1() - 0.02 && fp1 < fp0;
    verdict(
        7,
        "candidate prior",
        pass,
        &format!(
            "best F1 {:.4} without, {:.4} with (change {:+.4}); false positives at threshold {:.4}: {fp0} without, {fp1} with",
            b0.f1(),
            b1.f1(),
            b1.f1() - b0.f1(),
            b0.threshold
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

fn nucleo(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_nucleo")).args(args).current_dir(cwd).env("RUST_LOG", "error").status().unwrap().success()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Every subcommand once, in a fresh directory.
fn cli_session() -> (tempfile::TempDir, bool) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = ["--width", "128", "--height", "128", "--min-count", "4", "--max-count", "6"];
    let steps: Vec<Vec<&str>> = vec![
        [&["synth", "--out", "tr", "--images", "8", "--seed", "3"][..], &small[..]].concat(),
        [&["synth", "--out", "va", "--images", "3", "--seed", "900", "--touching", "0.3"][..], &small[..]].concat(),
        vec![
            "train", "--images", "tr/images", "--annotations", "tr/annotations", "--out", "model.json", "--filters", "16", "--kernels", "8",
            "--mixtures", "4", "--patch", "21", "--calibrate-images", "va/images", "--calibrate-annotations", "va/annotations",
        ],
        vec!["detect", "--model", "model.json", "--out", "det", "va/images"],
        vec!["detect", "--model", "model.json", "--out", "det_all", "--all-peaks", "va/images"],
        vec!["segment", "--model", "model.json", "--out", "seg", "--overlay", "va/images"],
        vec!["eval", "--pred", "det_all", "--gt", "va/annotations", "--out", "ev"],
        vec!["eval", "--mode", "segmentation", "--pred", "seg", "--gt", "va/masks", "--out", "evs"],
        vec!["plot", "--table", "ev/pr.tsv", "--out-image", "pr.png", "--out-table", "pr101.tsv"],
        vec!["diagnose", "--model", "model.json", "--out", "diag", "--image", "va/images/0000.png"],
    ];
    let ok = steps.iter().all(|s| nucleo(s, d));
    (dir, ok)
}

#[test]
fn criterion_8_reproducibility() {
    let (a, ok_a) = cli_session();
    let (b, ok_b) = cli_session();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<String> = ta.iter().zip(&tb).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
    let same_files = ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| x.0 == y.0);
    let model = NucleoModel::load(&a.path().join("model.json")).unwrap();
    let text = model.to_json().unwrap();
    let back = NucleoModel::from_json(&text).unwrap();
    let round_trip = back == model && back.to_json().unwrap() == text && fs::read_to_string(a.path().join("model.json")).unwrap() == text;
    let pass = ok_a && ok_b && same_files && differing.is_empty() && round_trip;
    verdict(
        8,
        "reproducibility",
        pass,
        &format!("{} output files, {} differ between runs, model round trip exact {round_trip}", ta.len(), differing.len()),
    );
    assert!(pass, "differing: {differing:?}");
}
