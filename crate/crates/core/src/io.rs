//! Image and label-map files.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{invalid, Result};
use crate::image::{GrayImage, Grid};
use crate::segment::InstanceLabelMap;

/// Read an 8- or 16-bit single-channel PNG or TIFF, scaled into `[0, 1]`.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => return invalid(format!("{}: expected a single-channel image, got {:?}", path.display(), other.color())),
    };
    GrayImage::new(w, h, values)
}

/// Quantize to 8 bits (rounding) and write as PNG.
pub fn save_image(path: &Path, image: &GrayImage) -> Result<()> {
    let buf: Vec<u8> = image.values().iter().map(|v| (v * 255.0).round() as u8).collect();
    let out: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(image.width() as u32, image.height() as u32, buf).expect("buffer size");
    out.save(path)?;
    Ok(())
}

/// Write labels as a 16-bit PNG with ids as pixel values.
pub fn save_labels(path: &Path, labels: &InstanceLabelMap) -> Result<()> {
    if labels.count() > u16::MAX as usize {
        return invalid(format!("{} instances do not fit a 16-bit label image", labels.count()));
    }
    let buf: Vec<u16> = labels.grid().as_slice().iter().map(|&l| l as u16).collect();
    let out: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, buf).expect("buffer size");
    out.save(path)?;
    Ok(())
}

/// Read a label image (8 or 16 bit). Ids are renumbered to `1..=N` in
/// raster order of first appearance.
pub fn load_labels(path: &Path) -> Result<InstanceLabelMap> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ids: Vec<u32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => return invalid(format!("{}: expected a single-channel label image, got {:?}", path.display(), other.color())),
    };
    Ok(InstanceLabelMap::from_raw(Grid::from_vec(w, h, ids)?))
}

/// Values mapped linearly from `[lo, hi]` to 8 bits; non-finite values become 0.
pub fn grid_to_luma8(grid: &Grid<f64>, lo: f64, hi: f64) -> image::GrayImage {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let buf: Vec<u8> = grid
        .as_slice()
        .iter()
        .map(|&v| if v.is_finite() { ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, buf).expect("buffer size")
}
