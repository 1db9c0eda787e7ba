//! Cut rasterization and splitting a region into parts.

use super::contour::{label_components4, Pixel, Region};

/// Pieces smaller than this are merged into a neighbour like cut pixels.
pub const MIN_PART_AREA: usize = 5;

/// 4-connected digital line from `a` to `b`, both endpoints included.
pub fn line4(a: Pixel, b: Pixel) -> Vec<Pixel> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (sx, sy) = (dx.signum(), dy.signum());
    let (nx, ny) = (dx.abs(), dy.abs());
    let mut out = vec![a];
    let (mut x, mut y) = a;
    let (mut ix, mut iy) = (0i64, 0i64);
    while ix < nx || iy < ny {
        // step along the axis whose next crossing comes first
        if (1 + 2 * ix) * ny < (1 + 2 * iy) * nx {
            x += sx;
            ix += 1;
        } else {
            y += sy;
            iy += 1;
        }
        out.push((x, y));
    }
    out
}

/// Remove the cut lines from `region`, label the remaining 4-connected pieces
/// and hand every cut pixel (and every piece below `MIN_PART_AREA`) to the
/// adjacent part it shares the most 4-neighbours with, lower id on ties.
/// Parts are returned in raster order of their first pixel.
pub fn split_region(region: &Region, cuts: &[(Pixel, Pixel)]) -> Vec<Vec<Pixel>> {
    let (ox, oy) = region.origin();
    let (w, h) = region.size();
    let idx = |p: Pixel| ((p.1 - oy) as usize) * w + (p.0 - ox) as usize;
    let mut mask: Vec<bool> = (0..w * h).map(|i| region.contains(ox + (i % w) as i64, oy + (i / w) as i64)).collect();
    let shape = mask.clone();
    for &(a, b) in cuts {
        for p in line4(a, b) {
            if region.contains(p.0, p.1) {
                mask[idx(p)] = false;
            }
        }
    }
    let (labels, count) = label_components4(&mask, w, h);
    let mut sizes = vec![0usize; count + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let big: Vec<bool> = sizes.iter().enumerate().map(|(l, &s)| l > 0 && s >= MIN_PART_AREA).collect();
    let mut part: Vec<u32> = labels.iter().map(|&l| if big[l as usize] { l } else { 0 }).collect();
    if !big.iter().any(|b| *b) {
        return vec![region.pixels()];
    }

    loop {
        let mut updates = Vec::new();
        for i in 0..w * h {
            if !shape[i] || part[i] != 0 {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let mut counts: Vec<(u32, usize)> = Vec::new();
            let mut neighbours = Vec::with_capacity(4);
            if x > 0 {
                neighbours.push(i - 1);
            }
            if x + 1 < w {
                neighbours.push(i + 1);
            }
            if y > 0 {
                neighbours.push(i - w);
            }
            if y + 1 < h {
                neighbours.push(i + w);
            }
            for j in neighbours {
                let l = part[j];
                if l == 0 {
                    continue;
                }
                match counts.iter_mut().find(|c| c.0 == l) {
                    Some(c) => c.1 += 1,
                    None => counts.push((l, 1)),
                }
            }
            if let Some(&(l, _)) = counts.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))) {
                updates.push((i, l));
            }
        }
        if updates.is_empty() {
            break;
        }
        for (i, l) in updates {
            part[i] = l;
        }
    }

    let mut order: Vec<u32> = Vec::new();
    let mut groups: Vec<Vec<Pixel>> = Vec::new();
    for i in 0..w * h {
        if !shape[i] {
            continue;
        }
        let l = part[i];
        let g = match order.iter().position(|&o| o == l) {
            Some(g) => g,
            None => {
                order.push(l);
                groups.push(Vec::new());
                groups.len() - 1
            }
        };
        groups[g].push((ox + (i % w) as i64, oy + (i / w) as i64));
    }
    groups
}
