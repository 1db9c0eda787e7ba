use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use nucleo::annotation::AnnotationFile;
use nucleo::detect::{detect as run_detect, DetectParams, DetectionSet};
use nucleo::diagnostics::{component_foreground_images, decomposition_overlay, kernel_activation_images, label_overlay};
use nucleo::features::convolve_extract;
use nucleo::io::{load_image, load_labels, save_image, save_labels};
use nucleo::metrics::{aji, best_f1, dsc, match_points, pr_curve_multi, ScoredPoint};
use nucleo::model::{DecompositionDefaults, DetectionDefaults, NucleoModel};
use nucleo::segment::{foreground_components, foreground_score_map, segment as run_segment, SegmentParams, ThresholdMode};
use nucleo::synth::{generate, SynthConfig};
use nucleo::train::{calibrate_threshold, train as run_train, TrainConfig, TrainingSample};
use nucleo::NucleoError;

use crate::plot::{format_resampled, format_table, parse_table, render, resample, Row};
use crate::{DetectArgs, DiagnoseArgs, EvalArgs, EvalMode, PlotArgs, SegmentArgs, SynthArgs, TrainArgs};

/// An error with the exit code it maps to: 2 for bad input, 1 otherwise.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: 2, error: anyhow::anyhow!(msg.into()) }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self { code: 1, error: anyhow::anyhow!(msg.into()) }
    }
}

impl From<NucleoError> for Failure {
    fn from(e: NucleoError) -> Self {
        let code = match &e {
            NucleoError::Dimension(_)
            | NucleoError::InvalidInput(_)
            | NucleoError::InsufficientData(_)
            | NucleoError::UnrecognizedFormat
            | NucleoError::UnsupportedVersion(_)
            | NucleoError::CorruptModel(_)
            | NucleoError::Json(_)
            | NucleoError::Image(image::ImageError::Decoding(_) | image::ImageError::Unsupported(_)) => 2,
            NucleoError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Self { code, error: e.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        NucleoError::from(e).into()
    }
}

type Res<T = ()> = Result<T, Failure>;

fn with_path<T>(path: &Path, r: nucleo::Result<T>) -> Res<T> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.error = f.error.context(path.display().to_string());
        f
    })
}

fn require(path: &Path, what: &str) -> Res {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Res<NucleoModel> {
    require(path, "model")?;
    with_path(path, NucleoModel::load(path))
}

fn create_dir(path: &Path) -> Res {
    fs::create_dir_all(path).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Res {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Files with one of `exts` under each input (directories are listed, not
/// recursed), sorted by path.
fn collect(inputs: &[PathBuf], exts: &[&str]) -> Res<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        require(input, "input")?;
        if input.is_dir() {
            for entry in fs::read_dir(input)? {
                let p = entry?.path();
                let ok = p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)));
                if p.is_file() && ok {
                    out.push(p);
                }
            }
        } else {
            out.push(input.clone());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Failure::usage("no input files found"));
    }
    Ok(out)
}

const IMAGE_EXTS: [&str; 3] = ["png", "tif", "tiff"];

/// `(pred, gt)` file pairs matched by stem; unmatched files are an error.
fn pair_by_stem(pred: &[PathBuf], gt: &[PathBuf]) -> Res<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for g in gt {
        let p = pred.iter().find(|p| stem(p) == stem(g)).ok_or_else(|| Failure::usage(format!("no prediction for {}", g.display())))?;
        pairs.push((p.clone(), g.clone()));
    }
    if pairs.len() != pred.len() {
        return Err(Failure::usage("some predictions have no ground truth"));
    }
    Ok(pairs)
}

fn load_samples(images: &Path, annotations: &Path) -> Res<Vec<TrainingSample>> {
    let image_files = collect(&[images.to_path_buf()], &IMAGE_EXTS)?;
    image_files
        .par_iter()
        .map(|img| {
            let ann = annotations.join(format!("{}.json", stem(img)));
            require(&ann, "annotation")?;
            Ok(TrainingSample { image: with_path(img, load_image(img))?, annotation: with_path(&ann, AnnotationFile::load(&ann))? })
        })
        .collect()
}

pub fn synth(a: &SynthArgs) -> Res {
    let base = SynthConfig::default();
    let cfg = |i: usize| SynthConfig {
        width: a.width,
        height: a.height,
        count: (a.min_count, a.max_count),
        touching_prob: a.touching,
        noise_std: a.noise.unwrap_or(base.noise_std),
        texture_amplitude: a.texture.unwrap_or(base.texture_amplitude),
        seed: a.seed.wrapping_add(i as u64),
        ..base.clone()
    };
    cfg(0).validate()?;
    for d in ["images", "annotations", "masks"] {
        create_dir(&a.out.join(d))?;
    }
    let width = (a.images.max(1) - 1).to_string().len().max(4);
    (0..a.images).into_par_iter().try_for_each(|i| -> Res {
        let s = generate(&cfg(i))?;
        if s.truth.placement_shortfall {
            log::warn!("image {i}: fewer nuclei placed than requested");
        }
        let name = format!("{i:0width$}");
        save_image(&a.out.join("images").join(format!("{name}.png")), &s.image)?;
        save_labels(&a.out.join("masks").join(format!("{name}.png")), &s.truth.masks)?;
        let ann = AnnotationFile::from_truth(&s.truth, a.width, a.height, Some(format!("../masks/{name}.png")));
        ann.save(&a.out.join("annotations").join(format!("{name}.json")))?;
        Ok(())
    })?;
    log::info!("wrote {} images to {}", a.images, a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Res {
    let samples = load_samples(&a.images, &a.annotations)?;
    let filters = match &a.filters_from {
        Some(p) => Some(load_model(p)?.filters),
        None => None,
    };
    let config = TrainConfig {
        num_filters: a.filters,
        kernel_size: a.kernel_size,
        kernels: a.kernels,
        sigma: a.sigma,
        components: a.mixtures,
        patch_size: a.patch,
        seed: a.seed,
        detection: DetectionDefaults { rotations: a.rotations.clone(), nms_radius: a.nms_radius, threshold: None },
        decomposition: DecompositionDefaults { psi: a.psi, lambda: a.lambda, prior_variance: a.prior_variance, ..Default::default() },
        ..Default::default()
    };
    let (mut model, report) = run_train(&samples, &config, filters)?;
    drop(samples);
    if let (Some(ci), Some(ca)) = (&a.calibrate_images, &a.calibrate_annotations) {
        let val = load_samples(ci, ca)?;
        let t = calibrate_threshold(&mut model, &val)?;
        log::info!("calibrated detection threshold {t:.6}");
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&a.out)?;
    log::info!("{} isolated nuclei; final vMF log-likelihood {:.6}", report.isolated_nuclei, report.vmf_log_likelihood.last().copied().unwrap_or(f64::NAN));
    println!("parameters: {}", report.parameter_count);
    Ok(())
}

pub fn detect(a: &DetectArgs) -> Res {
    let model = load_model(&a.model)?;
    let files = collect(&a.inputs, &IMAGE_EXTS)?;
    let mut params = DetectParams::from_model(&model);
    if let Some(r) = &a.rotations {
        params.rotations = r.clone();
    }
    if let Some(r) = a.nms_radius {
        params.nms_radius = r;
    }
    if let Some(t) = a.threshold {
        params.threshold = t;
    }
    if a.all_peaks {
        params.threshold = f64::NEG_INFINITY;
    }
    let mut prior_model = model.clone();
    if let Some(v) = a.prior_variance {
        prior_model.decomposition.prior_variance = v;
    }
    create_dir(&a.out)?;
    files.par_iter().try_for_each(|f| -> Res {
        let image = with_path(f, load_image(f))?;
        let prior = if a.no_prior {
            None
        } else {
            Some(run_segment(&image, &model, &SegmentParams::from_model(&model))?.prior(&prior_model)?)
        };
        let set = run_detect(&image, &model, prior.as_ref(), &params)?;
        write(&a.out.join(format!("{}.tsv", stem(f))), &set.to_table())?;
        log::info!("{}: {} detections", f.display(), set.detections.len());
        Ok(())
    })
}

pub fn segment(a: &SegmentArgs) -> Res {
    let model = load_model(&a.model)?;
    let files = collect(&a.inputs, &IMAGE_EXTS)?;
    let mut params = SegmentParams::from_model(&model);
    if let Some(p) = a.psi {
        params.decompose.psi = p;
    }
    if let Some(l) = a.lambda {
        params.decompose.lambda = l;
    }
    if let Some(t) = a.threshold {
        params.threshold = ThresholdMode::Fixed(t);
    }
    create_dir(&a.out)?;
    if a.overlay {
        create_dir(&a.out.join("overlays"))?;
    }
    files.par_iter().try_for_each(|f| -> Res {
        let image = with_path(f, load_image(f))?;
        let seg = run_segment(&image, &model, &params)?;
        save_labels(&a.out.join(format!("{}.png", stem(f))), &seg.labels)?;
        if a.overlay {
            let o = label_overlay(&image, &seg.labels);
            o.save(a.out.join("overlays").join(format!("{}.png", stem(f)))).map_err(|e| Failure::runtime(e.to_string()))?;
        }
        if seg.infeasible_components > 0 {
            log::warn!("{}: {} components could not be decomposed", f.display(), seg.infeasible_components);
        }
        log::info!("{}: {} instances", f.display(), seg.labels.count());
        Ok(())
    })
}

fn fmt_report(lines: &[(&str, String)]) -> String {
    lines.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
}

pub fn eval(a: &EvalArgs) -> Res {
    create_dir(&a.out)?;
    match a.mode {
        EvalMode::Detection => eval_detection(a),
        EvalMode::Segmentation => eval_segmentation(a),
    }
}

fn eval_detection(a: &EvalArgs) -> Res {
    if !(a.radius > 0.0) {
        return Err(Failure::usage("radius must be positive"));
    }
    let pred = collect(&[a.pred.clone()], &["tsv"])?;
    let gt = collect(&[a.gt.clone()], &["json"])?;
    let pairs = pair_by_stem(&pred, &gt)?;
    let per_image: Vec<(Vec<ScoredPoint>, Vec<(f64, f64)>)> = pairs
        .iter()
        .map(|(p, g)| -> Res<_> {
            let set = with_path(p, DetectionSet::from_table(&fs::read_to_string(p)?))?;
            let ann = with_path(g, AnnotationFile::load(g))?;
            let pts = set.detections.iter().map(|d| ScoredPoint { x: d.x as f64, y: d.y as f64, score: d.score }).collect();
            Ok((pts, ann.centers()))
        })
        .collect::<Res<_>>()?;
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for (p, g) in &per_image {
        let m = match_points(p, g, a.radius)?;
        tp += m.true_positives;
        fp += m.false_positives;
        fnn += m.false_negatives;
    }
    let curve = pr_curve_multi(&per_image, a.radius)?;
    let best = best_f1(&curve).expect("curve is never empty");
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fnn == 0 { 0.0 } else { tp as f64 / (tp + fnn) as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let report = fmt_report(&[
        ("mode", "detection".into()),
        ("images", pairs.len().to_string()),
        ("ground_truth", (tp + fnn).to_string()),
        ("predictions", (tp + fp).to_string()),
        ("radius", a.radius.to_string()),
        ("true_positives", tp.to_string()),
        ("false_positives", fp.to_string()),
        ("false_negatives", fnn.to_string()),
        ("precision", format!("{precision:.6}")),
        ("recall", format!("{recall:.6}")),
        ("f1", format!("{f1:.6}")),
        ("best_threshold", format!("{:.6}", best.threshold)),
        ("best_precision", format!("{:.6}", best.precision)),
        ("best_recall", format!("{:.6}", best.recall)),
        ("best_f1", format!("{:.6}", best.f1())),
    ]);
    write(&a.out.join("report.txt"), &report)?;
    let rows: Vec<Row> = curve.iter().map(|p| Row { threshold: p.threshold, precision: p.precision, recall: p.recall }).collect();
    write(&a.out.join("pr.tsv"), &format_table(&rows))?;
    log::info!("precision {precision:.4} recall {recall:.4}; best F1 {:.4}", best.f1());
    Ok(())
}

fn eval_segmentation(a: &EvalArgs) -> Res {
    let pred = collect(&[a.pred.clone()], &IMAGE_EXTS)?;
    let gt = collect(&[a.gt.clone()], &IMAGE_EXTS)?;
    let pairs = pair_by_stem(&pred, &gt)?;
    let scores: Vec<(String, f64, f64)> = pairs
        .par_iter()
        .map(|(p, g)| -> Res<_> {
            let pm = with_path(p, load_labels(p))?;
            let gm = with_path(g, load_labels(g))?;
            Ok((stem(g), aji(&gm, &pm)?, dsc(&gm, &pm)?))
        })
        .collect::<Res<_>>()?;
    let n = scores.len() as f64;
    let mut report = fmt_report(&[
        ("mode", "segmentation".into()),
        ("images", scores.len().to_string()),
        ("aji", format!("{:.6}", scores.iter().map(|s| s.1).sum::<f64>() / n)),
        ("dsc", format!("{:.6}", scores.iter().map(|s| s.2).sum::<f64>() / n)),
    ]);
    for (name, j, d) in &scores {
        report.push_str(&format!("image {name}: aji {j:.6} dsc {d:.6}\n"));
    }
    write(&a.out.join("report.txt"), &report)
}

pub fn plot(a: &PlotArgs) -> Res {
    require(&a.table, "table")?;
    let rows = parse_table(&fs::read_to_string(&a.table)?).map_err(|e| Failure { code: 2, error: e.context(a.table.display().to_string()) })?;
    render(&rows).save(&a.out_image).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", a.out_image.display())))?;
    write(&a.out_table, &format_resampled(&resample(&rows)))
}

pub fn diagnose(a: &DiagnoseArgs) -> Res {
    let model = load_model(&a.model)?;
    create_dir(&a.out)?;
    let save = |img: &dyn Fn(&Path) -> image::ImageResult<()>, name: String| -> Res {
        img(&a.out.join(&name)).map_err(|e| Failure::runtime(format!("cannot write {name}: {e}")))
    };
    for (m, img) in component_foreground_images(&model.mixture).iter().enumerate() {
        save(&|p| img.save(p), format!("component_{m:02}.png"))?;
    }
    let Some(path) = &a.image else { return Ok(()) };
    let image = with_path(path, load_image(path))?;
    let fm = convolve_extract(&image, &model.filters)?;
    for (k, img) in kernel_activation_images(&fm, &model.kernels)?.iter().enumerate() {
        save(&|p| img.save(p), format!("activation_{k:02}.png"))?;
    }
    let params = SegmentParams::from_model(&model);
    let scores = foreground_score_map(&fm, &model.kernels)?;
    let comps = foreground_components(&scores, params.threshold, params.erode, params.min_area)?;
    for (i, c) in comps.iter().enumerate() {
        let img = decomposition_overlay(c, &params.decompose, a.scale)?;
        save(&|p| img.save(p), format!("decomposition_{i:03}.png"))?;
    }
    let seg = run_segment(&image, &model, &params)?;
    save(&|p| label_overlay(&image, &seg.labels).save(p), "labels_overlay.png".into())
}
