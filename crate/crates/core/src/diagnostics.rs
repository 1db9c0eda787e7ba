//! Images for looking at what a model learned and what the decomposer did.

use image::{GrayImage as Luma8, Rgb, RgbImage};

use crate::decompose::{analyze_shape, decompose, DecomposeParams, Pixel, Region};
use crate::error::Result;
use crate::features::FeatureMap;
use crate::image::{GrayImage, Grid};
use crate::io::grid_to_luma8;
use crate::mixture::CompositionalMixture;
use crate::segment::InstanceLabelMap;
use crate::vmf::{activation_maps, VmfKernelBank};

/// Average foreground pattern of each mixture component, `P x P`, 0..1 mapped to 0..255.
pub fn component_foreground_images(mixture: &CompositionalMixture) -> Vec<Luma8> {
    let p = mixture.patch_size();
    (0..mixture.components())
        .map(|m| grid_to_luma8(&Grid::from_vec(p, p, mixture.fg_mask(m).to_vec()).expect("mask size"), 0.0, 1.0))
        .collect()
}

/// Cosine activation of each kernel, -1..1 mapped to 0..255.
pub fn kernel_activation_images(fm: &FeatureMap, bank: &VmfKernelBank) -> Result<Vec<Luma8>> {
    Ok(activation_maps(fm, bank)?.iter().map(|g| grid_to_luma8(g, -1.0, 1.0)).collect())
}

const BOUNDARY: Rgb<u8> = Rgb([255, 255, 0]);
const CANDIDATE: Rgb<u8> = Rgb([0, 160, 255]);
const SELECTED: Rgb<u8> = Rgb([255, 0, 0]);
const CONCAVE: Rgb<u8> = Rgb([0, 255, 0]);

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(img, (a.0 + (b.0 - a.0) * t).round() as i64, (a.1 + (b.1 - a.1) * t).round() as i64, color);
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// One component drawn at `scale` pixels per image pixel: parts in gray
/// shades, the traced boundary, concave points, candidate cuts and the
/// selected cuts.
pub fn decomposition_overlay(component: &[Pixel], params: &DecomposeParams, scale: u32) -> Result<RgbImage> {
    let region = Region::from_pixels(component)?.fill_holes();
    let shape = analyze_shape(&region, params)?;
    let parts = decompose(component, params)?;
    let (x0, y0) = region.origin();
    let (w, h) = region.size();
    let margin = 2i64;
    let s = scale.max(1) as i64;
    let mut img = RgbImage::new(((w as i64 + 2 * margin) * s) as u32, ((h as i64 + 2 * margin) * s) as u32);
    let to_img = |p: Pixel| (((p.0 - x0 + margin) * s + s / 2) as f64, ((p.1 - y0 + margin) * s + s / 2) as f64);
    for (i, part) in parts.parts.iter().enumerate() {
        let shade = 70 + ((i * 53) % 120) as u8;
        for &p in part {
            let (cx, cy) = to_img(p);
            for dy in 0..s {
                for dx in 0..s {
                    put(&mut img, cx as i64 - s / 2 + dx, cy as i64 - s / 2 + dy, Rgb([shade, shade, shade]));
                }
            }
        }
    }
    let v = &shape.polygon.vertices;
    for i in 0..v.len() {
        line(&mut img, to_img(v[i]), to_img(v[(i + 1) % v.len()]), BOUNDARY);
    }
    for c in &shape.analysis.cuts {
        line(&mut img, to_img(c.p), to_img(c.q), CANDIDATE);
    }
    for c in &parts.selected_cuts {
        line(&mut img, to_img(c.p), to_img(c.q), SELECTED);
    }
    for &i in &shape.concave {
        let (cx, cy) = to_img(v[i]);
        for dy in -1..=1 {
            for dx in -1..=1 {
                put(&mut img, cx as i64 + dx, cy as i64 + dy, CONCAVE);
            }
        }
    }
    Ok(img)
}

/// The image in gray with instance boundaries drawn white.
pub fn label_overlay(image: &GrayImage, labels: &InstanceLabelMap) -> Luma8 {
    let (w, h) = (image.width(), image.height());
    let g = labels.grid();
    Luma8::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let l = *g.get(x, y);
        let edge = l > 0
            && [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|&(dx, dy)| g.get_checked(x as i64 + dx, y as i64 + dy).map_or(true, |&o| o != l));
        if edge {
            image::Luma([255])
        } else {
            image::Luma([(image.get(x, y) * 200.0).round() as u8])
        }
    })
}
