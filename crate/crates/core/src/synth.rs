//! Deterministic synthetic nuclei images with full ground truth.

use crate::error::{invalid, Result};
use crate::image::{BoundingBox, GrayImage, Grid};
use crate::segment::InstanceLabelMap;

/// Total placement attempts before giving up on the requested count.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
/// Free pixels kept between separately placed nuclei.
pub const ISOLATION_GAP: f64 = 3.0;
/// Every ellipse stays this far inside the image border.
pub const BORDER_MARGIN: f64 = 2.0;
/// Lattice spacing of the interior value noise.
pub const TEXTURE_CELL: usize = 4;

/// Counter-based splitmix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }

    /// Standard normal by Box-Muller (one draw per call, two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive nucleus count range.
    pub count: (usize, usize),
    /// Long-axis diameter range in pixels.
    pub long_axis: (f64, f64),
    /// Short-axis diameter range in pixels.
    pub short_axis: (f64, f64),
    /// Orientation range in degrees.
    pub orientation: (f64, f64),
    pub touching_prob: f64,
    pub background_mean: f64,
    pub nucleus_mean: f64,
    pub noise_std: f64,
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            count: (8, 14),
            long_axis: (12.0, 20.0),
            short_axis: (9.0, 14.0),
            orientation: (-90.0, 90.0),
            touching_prob: 0.0,
            background_mean: 0.12,
            nucleus_mean: 0.6,
            noise_std: 0.004,
            texture_amplitude: 0.12,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: (f64, f64)| r.0 > 0.0 && r.0 <= r.1 && r.1.is_finite();
        if self.width == 0 || self.height == 0 {
            return invalid("image size must be positive");
        }
        if self.count.0 > self.count.1 {
            return invalid("count range is reversed");
        }
        if !range_ok(self.long_axis) || !range_ok(self.short_axis) {
            return invalid("axis ranges must be positive and ordered");
        }
        if !(self.orientation.0 <= self.orientation.1) {
            return invalid("orientation range is reversed");
        }
        if !(0.0..=1.0).contains(&self.touching_prob) {
            return invalid("touching probability must lie in [0, 1]");
        }
        if !(self.background_mean < self.nucleus_mean) {
            return invalid("background mean must be below the nucleus mean");
        }
        if !(self.noise_std >= 0.0) || !(self.texture_amplitude >= 0.0) {
            return invalid("noise and texture amplitudes must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes.
    pub a: f64,
    pub b: f64,
    /// Radians, long axis from +x toward +y.
    pub theta: f64,
}

impl Ellipse {
    /// Normalized radial distance; `<= 1` inside.
    pub fn level(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        (u * u + v * v).sqrt()
    }

    /// Same ellipse with both semi-axes grown by `d`.
    fn grown(&self, d: f64) -> Self {
        Self { a: self.a + d, b: self.b + d, ..*self }
    }

    fn extent(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        ((self.a * c).hypot(self.b * s), (self.a * s).hypot(self.b * c))
    }

    fn pixel_box(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let (ex, ey) = self.extent();
        let x0 = (self.cx - ex).floor().max(0.0) as usize;
        let y0 = (self.cy - ey).floor().max(0.0) as usize;
        let x1 = ((self.cx + ex).ceil() as usize).min(w - 1);
        let y1 = ((self.cy + ey).ceil() as usize).min(h - 1);
        (x0, y0, x1, y1)
    }

    fn inside_image(&self, w: usize, h: usize) -> bool {
        let (ex, ey) = self.extent();
        self.cx - ex >= BORDER_MARGIN
            && self.cy - ey >= BORDER_MARGIN
            && self.cx + ex <= w as f64 - 1.0 - BORDER_MARGIN
            && self.cy + ey <= h as f64 - 1.0 - BORDER_MARGIN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub centers: Vec<(f64, f64)>,
    pub boxes: Vec<BoundingBox>,
    pub masks: InstanceLabelMap,
    pub isolated: Vec<bool>,
    pub ellipses: Vec<Ellipse>,
    /// Instance index pairs built as touching pairs.
    pub touching_pairs: Vec<(usize, usize)>,
    /// Fewer nuclei than requested could be placed.
    pub placement_shortfall: bool,
}

pub struct Synthesis {
    pub image: GrayImage,
    pub truth: GroundTruth,
}

fn random_ellipse(cfg: &SynthConfig, rng: &mut SplitMix64, cx: f64, cy: f64) -> Ellipse {
    let mut long = rng.uniform(cfg.long_axis.0, cfg.long_axis.1);
    let mut short = rng.uniform(cfg.short_axis.0, cfg.short_axis.1);
    if short > long {
        std::mem::swap(&mut short, &mut long);
    }
    let theta = rng.uniform(cfg.orientation.0, cfg.orientation.1).to_radians();
    Ellipse { cx, cy, a: long / 2.0, b: short / 2.0, theta }
}

/// True if `e` grown by the isolation gap touches an occupied pixel.
fn collides(e: &Ellipse, occupied: &Grid<u32>) -> bool {
    let g = e.grown(ISOLATION_GAP);
    let (x0, y0, x1, y1) = g.pixel_box(occupied.width(), occupied.height());
    for y in y0..=y1 {
        for x in x0..=x1 {
            if *occupied.get(x, y) != 0 && g.level(x as f64, y as f64) <= 1.0 {
                return true;
            }
        }
    }
    false
}

/// Rasterize; pixels inside several ellipses of the group go to the one with
/// the smallest normalized distance (earlier on ties).
fn paint(group: &[(Ellipse, u32)], occupied: &mut Grid<u32>) {
    let (w, h) = (occupied.width(), occupied.height());
    let mut boxes = group.iter().map(|(e, _)| e.pixel_box(w, h));
    let first = boxes.next().unwrap();
    let (x0, y0, x1, y1) = boxes.fold(first, |a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let mut best: Option<(f64, u32)> = None;
            for (e, id) in group {
                let l = e.level(x as f64, y as f64);
                if l <= 1.0 && best.map_or(true, |(bl, _)| l < bl) {
                    best = Some((l, *id));
                }
            }
            if let Some((_, id)) = best {
                occupied.set(x, y, id);
            }
        }
    }
}

fn value_noise(w: usize, h: usize, rng: &mut SplitMix64) -> Grid<f64> {
    let gw = w / TEXTURE_CELL + 2;
    let gh = h / TEXTURE_CELL + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Grid::from_fn(w, h, |x, y| {
        let fx = x as f64 / TEXTURE_CELL as f64;
        let fy = y as f64 / TEXTURE_CELL as f64;
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        // smoothstep weights
        let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
        let l = |i: usize, j: usize| lattice[j * gw + i];
        let top = l(ix, iy) * (1.0 - sx) + l(ix + 1, iy) * sx;
        let bot = l(ix, iy + 1) * (1.0 - sx) + l(ix + 1, iy + 1) * sx;
        top * (1.0 - sy) + bot * sy
    })
}

/// Render one image. Intensities are multiples of 1/255, so an 8-bit PNG
/// stores them exactly.
pub fn generate(cfg: &SynthConfig) -> Result<Synthesis> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = SplitMix64::new(cfg.seed);
    let target = rng.range(cfg.count.0, cfg.count.1);
    let mut occupied = Grid::new(w, h, 0u32);
    let mut ellipses: Vec<Ellipse> = Vec::new();
    let mut pairs = Vec::new();
    let mut attempts = 0;
    while ellipses.len() < target && attempts < MAX_PLACEMENT_ATTEMPTS {
        let want_pair = target - ellipses.len() >= 2 && rng.next_f64() < cfg.touching_prob;
        let cx = rng.uniform(0.0, w as f64 - 1.0);
        let cy = rng.uniform(0.0, h as f64 - 1.0);
        let first = random_ellipse(cfg, &mut rng, cx, cy);
        let mut group = vec![first];
        if want_pair {
            let u = rng.uniform(0.7, 0.95);
            let phi = rng.uniform(0.0, std::f64::consts::TAU);
            let mut second = random_ellipse(cfg, &mut rng, 0.0, 0.0);
            let d = (first.b + second.b) * u;
            second.cx = cx + d * phi.cos();
            second.cy = cy + d * phi.sin();
            group.push(second);
        }
        attempts += 1;
        if group.iter().any(|e| !e.inside_image(w, h) || collides(e, &occupied)) {
            continue;
        }
        let base = ellipses.len() as u32;
        let ids: Vec<(Ellipse, u32)> = group.iter().enumerate().map(|(i, e)| (*e, base + 1 + i as u32)).collect();
        paint(&ids, &mut occupied);
        if group.len() == 2 {
            pairs.push((ellipses.len(), ellipses.len() + 1));
        }
        ellipses.extend(group);
    }
    let shortfall = ellipses.len() < target;
    if shortfall {
        log::warn!("placed {} of {} nuclei after {} attempts", ellipses.len(), target, attempts);
    }

    let texture = value_noise(w, h, &mut rng);
    let brightness: Vec<f64> = ellipses.iter().map(|_| rng.uniform(0.9, 1.1)).collect();
    let noise: Vec<f64> = (0..w * h).map(|_| rng.normal()).collect();
    let image = GrayImage::from_fn(w, h, |x, y| {
        let id = *occupied.get(x, y) as usize;
        let base = if id == 0 {
            cfg.background_mean
        } else {
            cfg.nucleus_mean * brightness[id - 1] + cfg.texture_amplitude * texture.get(x, y)
        };
        let v = (base + cfg.noise_std * noise[y * w + x]).clamp(0.0, 1.0);
        (v * 255.0).round() / 255.0
    });

    let n = ellipses.len();
    let mut touching = vec![false; n];
    let mut boxes = vec![BoundingBox { x0: i64::MAX, y0: i64::MAX, x1: i64::MIN, y1: i64::MIN }; n];
    for y in 0..h {
        for x in 0..w {
            let id = *occupied.get(x, y);
            if id == 0 {
                continue;
            }
            let b = &mut boxes[id as usize - 1];
            *b = BoundingBox::new(b.x0.min(x as i64), b.y0.min(y as i64), b.x1.max(x as i64), b.y1.max(y as i64));
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < w && ny < h {
                    let o = *occupied.get(nx, ny);
                    if o != 0 && o != id {
                        touching[id as usize - 1] = true;
                        touching[o as usize - 1] = true;
                    }
                }
            }
        }
    }
    let masks = InstanceLabelMap::new(occupied)?;
    Ok(Synthesis {
        image,
        truth: GroundTruth {
            centers: ellipses.iter().map(|e| (e.cx, e.cy)).collect(),
            boxes,
            masks,
            isolated: touching.iter().map(|t| !t).collect(),
            ellipses,
            touching_pairs: pairs,
            placement_shortfall: shortfall,
        },
    })
}
