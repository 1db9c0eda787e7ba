//! Raster containers: a generic row-major grid and the normalized gray image.

use crate::error::{dim_err, invalid, Result};

/// Row-major 2-D grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return dim_err(format!(
                "grid data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Signed lookup, `None` outside the grid.
    #[inline]
    pub fn get_checked(&self, x: i64, y: i64) -> Option<&T> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(&self.data[y as usize * self.width + x as usize])
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n - 2`).
#[inline]
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    grid: Grid<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return dim_err("image must be at least 1x1");
        }
        let grid = Grid::from_vec(width, height, values)?;
        if let Some(v) = grid.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("image intensity {v} outside [0, 1]"));
        }
        Ok(Self { grid })
    }

    /// Build from a closure; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self { grid: Grid::from_fn(width, height, |x, y| f(x, y).clamp(0.0, 1.0)) }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.grid.get(x, y)
    }

    /// Reflect-padded lookup.
    #[inline]
    pub fn get_reflect(&self, x: i64, y: i64) -> f64 {
        *self.grid.get(reflect_index(x, self.width()), reflect_index(y, self.height()))
    }

    pub fn values(&self) -> &[f64] {
        self.grid.as_slice()
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    /// Bilinear sample at a real position, reflect-padded outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = self.get_reflect(x0, y0);
        let v10 = self.get_reflect(x0 + 1, y0);
        let v01 = self.get_reflect(x0, y0 + 1);
        let v11 = self.get_reflect(x0 + 1, y0 + 1);
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        top + (bottom - top) * fy
    }

    /// Square window of side `2 * half + 1` centered at `(cx, cy)`, reflect-padded.
    pub fn window(&self, cx: i64, cy: i64, half: usize) -> GrayImage {
        let side = 2 * half + 1;
        let h = half as i64;
        GrayImage::from_fn(side, side, |x, y| self.get_reflect(cx - h + x as i64, cy - h + y as i64))
    }

    /// Rotate the content by `degrees` about the image center, keeping the
    /// frame size. A structure at angle `phi` (measured from +x towards +y)
    /// ends up at `phi + degrees`. Uncovered corners are filled from the
    /// reflect-padded source.
    pub fn rotate(&self, degrees: f64) -> GrayImage {
        let (sin, cos) = exact_sin_cos(degrees);
        let cx = (self.width() as f64 - 1.0) / 2.0;
        let cy = (self.height() as f64 - 1.0) / 2.0;
        GrayImage::from_fn(self.width(), self.height(), |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse rotation R(-theta)
            let sx = cx + dx * cos + dy * sin;
            let sy = cy - dx * sin + dy * cos;
            self.sample_bilinear(sx, sy)
        })
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90.
pub fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let quarter = degrees / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        degrees.to_radians().sin_cos()
    }
}

/// Axis-aligned box with inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BoundingBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x <= self.x1 as f64 && y >= self.y0 as f64 && y <= self.y1 as f64
    }

    pub fn dilate(&self, by: i64) -> Self {
        Self { x0: self.x0 - by, y0: self.y0 - by, x1: self.x1 + by, y1: self.y1 + by }
    }

    pub fn clip(&self, width: usize, height: usize) -> Option<Self> {
        let b = Self {
            x0: self.x0.max(0),
            y0: self.y0.max(0),
            x1: self.x1.min(width as i64 - 1),
            y1: self.y1.min(height as i64 - 1),
        };
        (b.x0 <= b.x1 && b.y0 <= b.y1).then_some(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn rejects_out_of_range_intensity() {
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn quarter_turn_is_exact() {
        let img = GrayImage::from_fn(5, 5, |x, y| (x + 5 * y) as f64 / 25.0);
        let r = img.rotate(90.0);
        // content at +x moves to +y
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(r.get(x, y), img.get(y, 4 - x));
            }
        }
        assert_eq!(img.rotate(0.0), img);
    }

    #[test]
    fn rotation_moves_structure_by_the_angle() {
        // horizontal bright bar rotated by 30 degrees lies along the 30 degree direction
        let img = GrayImage::from_fn(41, 41, |_, y| if y == 20 { 1.0 } else { 0.0 });
        let r = img.rotate(30.0);
        let t = 30f64.to_radians();
        let (px, py) = (20.0 + 12.0 * t.cos(), 20.0 + 12.0 * t.sin());
        assert!(r.get(px.round() as usize, py.round() as usize) > 0.4);
        let (qx, qy) = (20.0 + 12.0 * t.cos(), 20.0 - 12.0 * t.sin());
        assert!(r.get(qx.round() as usize, qy.round() as usize) < 0.1);
    }
}
