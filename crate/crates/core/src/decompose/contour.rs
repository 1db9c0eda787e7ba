//! Binary regions, hole filling and Moore boundary tracing.

use std::collections::VecDeque;

use crate::error::{invalid, Result};

/// Pixel coordinate `(x, y)`.
pub type Pixel = (i64, i64);

/// Binary pixel set stored as a bitmap over its bounding box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    x0: i64,
    y0: i64,
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Region {
    pub fn from_pixels(pixels: &[Pixel]) -> Result<Self> {
        if pixels.is_empty() {
            return invalid("region is empty");
        }
        let x0 = pixels.iter().map(|p| p.0).min().unwrap();
        let y0 = pixels.iter().map(|p| p.1).min().unwrap();
        let x1 = pixels.iter().map(|p| p.0).max().unwrap();
        let y1 = pixels.iter().map(|p| p.1).max().unwrap();
        let width = (x1 - x0 + 1) as usize;
        let height = (y1 - y0 + 1) as usize;
        let mut bits = vec![false; width * height];
        for &(x, y) in pixels {
            bits[(y - y0) as usize * width + (x - x0) as usize] = true;
        }
        Ok(Self { x0, y0, width, height, bits })
    }

    /// Region from a predicate over an absolute pixel rectangle.
    pub fn from_fn(x0: i64, y0: i64, width: usize, height: usize, f: impl Fn(i64, i64) -> bool) -> Result<Self> {
        let mut px = Vec::new();
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                if f(x0 + x, y0 + y) {
                    px.push((x0 + x, y0 + y));
                }
            }
        }
        Self::from_pixels(&px)
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        let (lx, ly) = (x - self.x0, y - self.y0);
        lx >= 0 && ly >= 0 && (lx as usize) < self.width && (ly as usize) < self.height && self.bits[ly as usize * self.width + lx as usize]
    }

    /// Pixels in raster order.
    pub fn pixels(&self) -> Vec<Pixel> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    out.push((self.x0 + x as i64, self.y0 + y as i64));
                }
            }
        }
        out
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn origin(&self) -> Pixel {
        (self.x0, self.y0)
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Fill every background pixel not 4-connected to the bounding-box border.
    pub fn fill_holes(&self) -> Region {
        let (w, h) = (self.width + 2, self.height + 2);
        let inside = |x: usize, y: usize| x >= 1 && y >= 1 && x <= self.width && y <= self.height && self.bits[(y - 1) * self.width + x - 1];
        let mut outside = vec![false; w * h];
        let mut queue = VecDeque::from([(0usize, 0usize)]);
        outside[0] = true;
        while let Some((x, y)) = queue.pop_front() {
            let mut visit = |nx: usize, ny: usize| {
                if !outside[ny * w + nx] && !inside(nx, ny) {
                    outside[ny * w + nx] = true;
                    queue.push_back((nx, ny));
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        let bits = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| !outside[(y + 1) * w + x + 1])
            .collect();
        Region { x0: self.x0, y0: self.y0, width: self.width, height: self.height, bits }
    }
}

/// Closed outer contour; positive shoelace area in `(x, y)` coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryPolygon {
    pub vertices: Vec<Pixel>,
}

impl BoundaryPolygon {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Fewer than three vertices: a dot or a line, convex by convention.
    pub fn is_trivially_convex(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Twice the signed area.
    pub fn doubled_area(&self) -> i64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.0 * b.1 - b.0 * a.1
            })
            .sum()
    }
}

// Clockwise on screen (y down), starting east.
const DIRS: [Pixel; 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Moore-neighbour tracing of the outer contour of the hole-filled region,
/// starting at the top-most, then left-most pixel and heading along the top
/// row first.
pub fn trace_boundary(region: &Region) -> BoundaryPolygon {
    let filled = region.fill_holes();
    let start = filled.pixels()[0];
    // the pixel to the west is background; scan clockwise from there
    let step = |p: Pixel, back: usize| -> Option<(Pixel, usize)> {
        for s in 0..8 {
            let d = (back + s) % 8;
            let q = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
            if filled.contains(q.0, q.1) {
                // new backtrack: the neighbour scanned just before q, seen from q
                let prev = (back + s + 7) % 8;
                let b = (p.0 + DIRS[prev].0 - q.0, p.1 + DIRS[prev].1 - q.1);
                let nb = DIRS.iter().position(|&dd| dd == b).expect("backtrack is a neighbour");
                return Some((q, nb));
            }
        }
        None
    };
    let Some(first) = step(start, 4) else {
        return BoundaryPolygon { vertices: vec![start] };
    };
    let mut vertices = vec![start];
    let (mut cur, mut back) = first;
    loop {
        let (next, nb) = step(cur, back).expect("contour pixel has a neighbour");
        if cur == start && next == first.0 {
            break;
        }
        vertices.push(cur);
        cur = next;
        back = nb;
    }
    BoundaryPolygon { vertices }
}

/// 4-connected components of a boolean raster; returns a label grid (0 =
/// background, components numbered in raster order of their first pixel)
/// and the component count.
pub fn label_components4(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; width * height];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..width * height {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if mask[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
    }
    (labels, next as usize)
}
