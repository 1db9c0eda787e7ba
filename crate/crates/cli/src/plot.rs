//! Precision-recall tables and a plain raster rendering of the curve.

use image::{Rgb, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn format_table(rows: &[Row]) -> String {
    let mut s = String::from("threshold\tprecision\trecall\n");
    for r in rows {
        s.push_str(&format!("{:.6}\t{:.6}\t{:.6}\n", r.threshold, r.precision, r.recall));
    }
    s
}

pub fn parse_table(text: &str) -> anyhow::Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<f64> = line.split('\t').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| anyhow::anyhow!("line {}: not a number", i + 1))?;
        if f.len() != 3 {
            anyhow::bail!("line {}: expected threshold, precision, recall", i + 1);
        }
        if !(0.0..=1.0).contains(&f[1]) || !(0.0..=1.0).contains(&f[2]) {
            anyhow::bail!("line {}: precision and recall must lie in [0, 1]", i + 1);
        }
        rows.push(Row { threshold: f[0], precision: f[1], recall: f[2] });
    }
    if rows.is_empty() {
        anyhow::bail!("empty precision-recall table");
    }
    Ok(rows)
}

/// Precision at recall levels 0, 0.01, ..., 1: the best precision among
/// points reaching at least that recall, 0 where none does.
pub fn resample(rows: &[Row]) -> Vec<(f64, f64)> {
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            let p = rows.iter().filter(|row| row.recall >= r - 1e-12).map(|row| row.precision).fold(0.0, f64::max);
            (r, p)
        })
        .collect()
}

pub fn format_resampled(points: &[(f64, f64)]) -> String {
    let mut s = String::from("recall\tprecision\n");
    for (r, p) in points {
        s.push_str(&format!("{r:.2}\t{p:.6}\n"));
    }
    s
}

const SIZE: u32 = 400;
const MARGIN: u32 = 40;

fn to_px(recall: f64, precision: f64) -> (f64, f64) {
    let span = (SIZE - 2 * MARGIN) as f64;
    (MARGIN as f64 + recall * span, (SIZE - MARGIN) as f64 - precision * span)
}

fn segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = ((a.0 + (b.0 - a.0) * t).round(), (a.1 + (b.1 - a.1) * t).round());
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Recall on x, precision on y, both 0..1, with axes and a light 0.1 grid.
pub fn render(rows: &[Row]) -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    for i in 1..10 {
        let v = i as f64 / 10.0;
        segment(&mut img, to_px(v, 0.0), to_px(v, 1.0), Rgb([225, 225, 225]));
        segment(&mut img, to_px(0.0, v), to_px(1.0, v), Rgb([225, 225, 225]));
    }
    segment(&mut img, to_px(0.0, 0.0), to_px(1.0, 0.0), Rgb([0, 0, 0]));
    segment(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), Rgb([0, 0, 0]));
    for w in rows.windows(2) {
        segment(&mut img, to_px(w[0].recall, w[0].precision), to_px(w[1].recall, w[1].precision), Rgb([20, 60, 200]));
    }
    img
}
