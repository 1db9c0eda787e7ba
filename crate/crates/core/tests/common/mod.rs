#![allow(dead_code)]

use std::sync::OnceLock;

use nucleo::annotation::AnnotationFile;
use nucleo::model::{DetectionDefaults, NucleoModel};
use nucleo::synth::{generate, Ellipse, SplitMix64, SynthConfig};
use nucleo::train::{calibrate_threshold, train, TrainConfig, TrainingSample};
use nucleo::GrayImage;

pub fn samples(n: usize, seed: u64) -> Vec<TrainingSample> {
    (0..n)
        .map(|i| {
            let cfg = SynthConfig { width: 128, height: 128, count: (4, 6), seed: seed + i as u64, ..Default::default() };
            let s = generate(&cfg).unwrap();
            TrainingSample { annotation: AnnotationFile::from_truth(&s.truth, 128, 128, None), image: s.image }
        })
        .collect()
}

/// Small model trained once per test binary, threshold calibrated on a
/// separate split.
pub fn model() -> &'static NucleoModel {
    static MODEL: OnceLock<NucleoModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let config = TrainConfig {
            num_filters: 16,
            filter_patches: 4000,
            kernels: 8,
            components: 4,
            patch_size: 21,
            max_vectors: 30_000,
            detection: DetectionDefaults::default(),
            ..Default::default()
        };
        let (mut model, _) = train(&samples(12, 1000), &config, None).unwrap();
        calibrate_threshold(&mut model, &samples(4, 5000)).unwrap();
        model
    })
}

/// Textured nuclei on a plain background, drawn like the generator does.
/// Returns the image and the per-pixel instance id (0 background, overlaps
/// go to the ellipse with the smaller normalized distance).
pub fn render(ellipses: &[Ellipse], size: usize, seed: u64) -> (GrayImage, Vec<u32>) {
    let mut rng = SplitMix64::new(seed);
    let gw = size / 4 + 2;
    let lattice: Vec<f64> = (0..gw * gw).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut ids = vec![0u32; size * size];
    let img = GrayImage::from_fn(size, size, |x, y| {
        let best = ellipses
            .iter()
            .enumerate()
            .map(|(i, e)| (e.level(x as f64, y as f64), i))
            .filter(|(l, _)| *l <= 1.0)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let base = match best {
            Some((_, i)) => {
                ids[y * size + x] = i as u32 + 1;
                let (fx, fy) = (x as f64 / 4.0, y as f64 / 4.0);
                let (ix, iy) = (fx as usize, fy as usize);
                let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                let l = |i: usize, j: usize| lattice[j * gw + i];
                let t = (l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx) * (1.0 - ty)
                    + (l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx) * ty;
                0.6 + 0.12 * t
            }
            None => 0.12,
        };
        ((base + 0.004 * rng.normal()).clamp(0.0, 1.0) * 255.0).round() / 255.0
    });
    (img, ids)
}

pub fn nucleus_at_center() -> GrayImage {
    render(&[Ellipse { cx: 64.0, cy: 64.0, a: 10.0, b: 6.0, theta: 0.0 }], 128, 7).0
}
