//! Seeded k-means variants shared by filter learning, vMF initialization and
//! nucleus clustering.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draw an index with probability proportional to `weights`; uniform when
/// every weight is zero.
fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return rng.gen_range(0..weights.len());
    }
    let mut target = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    // rounding fell off the end: last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Distance used by k-means++ seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedDistance {
    /// Squared Euclidean distance.
    Euclidean,
    /// Cosine distance `1 - cos`, squared; points are assumed unit-norm.
    Cosine,
}

/// k-means++ seeding over `n = data.len() / dim` points. Returns `k` point
/// indices; repeats are possible only when fewer than `k` distinct points exist.
pub fn kmeans_pp_seeds(data: &[f64], dim: usize, k: usize, metric: SeedDistance, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len() / dim;
    assert!(n > 0 && k > 0);
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let dist = |a: &[f64], b: &[f64]| match metric {
        SeedDistance::Euclidean => sq_dist(a, b),
        SeedDistance::Cosine => {
            let d = (1.0 - dot(a, b)).max(0.0);
            d * d
        }
    };
    let mut seeds = Vec::with_capacity(k);
    seeds.push(rng.gen_range(0..n));
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(point(i), point(seeds[0]))).collect();
    while seeds.len() < k {
        let next = weighted_pick(&nearest, rng);
        seeds.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(point(i), point(next)));
        }
    }
    seeds
}

/// Result of a Lloyd-style clustering run.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// Euclidean k-means from k-means++ seeds. Ties go to the lowest centroid;
/// an emptied cluster is moved to the point farthest from its centroid.
pub fn kmeans(data: &[f64], dim: usize, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let n = data.len() / dim;
    let seeds = kmeans_pp_seeds(data, dim, k, SeedDistance::Euclidean, rng);
    let mut centroids: Vec<f64> = seeds.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].to_vec()).collect();
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let p = &data[i * dim..(i + 1) * dim];
            let best = (0..k)
                .map(|c| (c, sq_dist(p, &centroids[c * dim..(c + 1) * dim])))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
                .0;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for d in 0..dim {
                sums[c * dim + d] += data[i * dim + d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| {
                        let a = assignment[i];
                        (i, sq_dist(&data[i * dim..(i + 1) * dim], &centroids[a * dim..(a + 1) * dim]))
                    })
                    .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
                    .0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
                assignment[far] = c;
            }
        }
    }
    Clustering { centroids, assignment, iterations }
}

/// Spherical k-means over unit vectors: cosine assignment, normalized-mean
/// centroids. An emptied cluster is moved to the worst-fitting point.
pub fn spherical_kmeans(data: &[f64], dim: usize, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let n = data.len() / dim;
    let seeds = kmeans_pp_seeds(data, dim, k, SeedDistance::Cosine, rng);
    let mut centroids: Vec<f64> = seeds.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].to_vec()).collect();
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = false;
        let mut fit = vec![0.0; n];
        for i in 0..n {
            let p = &data[i * dim..(i + 1) * dim];
            let (best, cos) = (0..k)
                .map(|c| (c, dot(p, &centroids[c * dim..(c + 1) * dim])))
                .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            fit[i] = cos;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for d in 0..dim {
                sums[c * dim + d] += data[i * dim + d];
            }
        }
        for c in 0..k {
            let s = &sums[c * dim..(c + 1) * dim];
            let len = norm(s);
            if counts[c] > 0 && len > 0.0 {
                for d in 0..dim {
                    centroids[c * dim + d] = s[d] / len;
                }
            } else {
                let worst = fit
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &f)| if f < acc.1 { (i, f) } else { acc })
                    .0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[worst * dim..(worst + 1) * dim]);
                fit[worst] = 1.0;
            }
        }
    }
    Clustering { centroids, assignment, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn seeding_is_deterministic_and_spreads_out() {
        let data = vec![0.0, 0.0, 0.1, 0.0, 10.0, 10.0, 10.1, 10.0];
        let a = kmeans_pp_seeds(&data, 2, 2, SeedDistance::Euclidean, &mut ChaCha8Rng::seed_from_u64(3));
        let b = kmeans_pp_seeds(&data, 2, 2, SeedDistance::Euclidean, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_ne!(a[0] / 2, a[1] / 2);
    }

    #[test]
    fn identical_points_do_not_break_seeding() {
        let data = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let s = kmeans_pp_seeds(&data, 2, 3, SeedDistance::Cosine, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.len(), 3);
    }
}
