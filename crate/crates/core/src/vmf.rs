//! von Mises-Fisher kernel bank: densities, EM learning, activation maps and
//! background-kernel selection.
//!
//! All densities are unnormalized: with one shared concentration the
//! normalizing constant cancels everywhere it matters.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{dim_err, invalid, NucleoError, Result};
use crate::features::FeatureMap;
use crate::image::{BoundingBox, Grid};
use crate::kmeans::{dot, kmeans_pp_seeds, norm, SeedDistance};

pub const DEFAULT_SIGMA: f64 = 30.0;
pub const DEFAULT_KERNELS: usize = 12;
pub const MAX_EM_ITERS: usize = 200;
pub const EM_TOLERANCE: f64 = 1e-5;
/// Cap on vectors fed to kernel learning.
pub const MAX_LEARNING_VECTORS: usize = 500_000;
/// Nucleus boxes are grown by this many pixels before background statistics.
pub const BACKGROUND_BOX_MARGIN: i64 = 3;

const UNIT_TOL: f64 = 1e-6;
// Fixed E-step chunking keeps the reduction order independent of thread count.
const CHUNK: usize = 4096;

fn check_unit_or_zero(v: &[f64], what: &str) -> Result<bool> {
    let n = norm(v);
    if n == 0.0 {
        Ok(false)
    } else if (n - 1.0).abs() <= UNIT_TOL {
        Ok(true)
    } else {
        invalid(format!("{what} has norm {n}, expected 1"))
    }
}

/// `sigma * f . mu`; zero for the invalid (zero) feature vector.
pub fn vmf_log_density(f: &[f64], mu: &[f64], sigma: f64) -> Result<f64> {
    if f.len() != mu.len() {
        return dim_err(format!("vector lengths {} and {} differ", f.len(), mu.len()));
    }
    if !check_unit_or_zero(mu, "kernel")? {
        return invalid("kernel must be unit-norm");
    }
    if !check_unit_or_zero(f, "feature")? {
        return Ok(0.0);
    }
    Ok(sigma * dot(f, mu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmfKernelBank {
    dim: usize,
    kernels: Vec<f64>,
    sigma: f64,
    background_index: usize,
    foreground_indices: Vec<usize>,
}

impl VmfKernelBank {
    /// Bank with kernel 0 as provisional background until
    /// [`select_background_kernel`] is run.
    pub fn new(dim: usize, kernels: Vec<f64>, sigma: f64) -> Result<Self> {
        if dim == 0 || kernels.is_empty() || kernels.len() % dim != 0 {
            return dim_err(format!("{} kernel values do not form rows of length {dim}", kernels.len()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma must be positive, got {sigma}"));
        }
        for (k, mu) in kernels.chunks(dim).enumerate() {
            if !check_unit_or_zero(mu, "kernel")? {
                return invalid(format!("kernel {k} is zero"));
            }
        }
        let count = kernels.len() / dim;
        Ok(Self { dim, kernels, sigma, background_index: 0, foreground_indices: (1..count).collect() })
    }

    pub fn with_background(mut self, background_index: usize) -> Result<Self> {
        if background_index >= self.len() {
            return invalid(format!("background index {background_index} out of range"));
        }
        self.background_index = background_index;
        self.foreground_indices = (0..self.len()).filter(|&k| k != background_index).collect();
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.kernels.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn kernel(&self, k: usize) -> &[f64] {
        &self.kernels[k * self.dim..(k + 1) * self.dim]
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    pub fn background_index(&self) -> usize {
        self.background_index
    }

    pub fn foreground_indices(&self) -> &[usize] {
        &self.foreground_indices
    }

    pub fn is_foreground(&self, k: usize) -> bool {
        k != self.background_index
    }
}

/// Outcome of kernel learning, with the per-iteration average log-likelihood.
#[derive(Debug, Clone)]
pub struct VmfFit {
    pub bank: VmfKernelBank,
    /// Entry 0 is the initialization, then one entry per EM iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

/// Per-chunk sufficient statistics.
struct Stats {
    sums: Vec<f64>,
    weight: Vec<f64>,
    ll: f64,
    worst: (f64, usize),
}

fn e_step(data: &[f64], dim: usize, kernels: &[f64], sigma: f64) -> Stats {
    let k = kernels.len() / dim;
    let n = data.len() / dim;
    let partial: Vec<Stats> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s = Stats { sums: vec![0.0; k * dim], weight: vec![0.0; k], ll: 0.0, worst: (f64::INFINITY, 0) };
            let mut logits = vec![0.0; k];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let f = &data[i * dim..(i + 1) * dim];
                let mut best = f64::NEG_INFINITY;
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = sigma * dot(f, &kernels[j * dim..(j + 1) * dim]);
                    best = best.max(*l);
                }
                let mut z = 0.0;
                for l in logits.iter_mut() {
                    *l = (*l - best).exp();
                    z += *l;
                }
                let lse = best + z.ln();
                s.ll += lse;
                if lse < s.worst.0 {
                    s.worst = (lse, i);
                }
                for j in 0..k {
                    let r = logits[j] / z;
                    s.weight[j] += r;
                    for (acc, x) in s.sums[j * dim..(j + 1) * dim].iter_mut().zip(f) {
                        *acc += r * x;
                    }
                }
            }
            s
        })
        .collect();
    let mut total = Stats { sums: vec![0.0; k * dim], weight: vec![0.0; k], ll: 0.0, worst: (f64::INFINITY, 0) };
    for p in partial {
        for (a, b) in total.sums.iter_mut().zip(&p.sums) {
            *a += b;
        }
        for (a, b) in total.weight.iter_mut().zip(&p.weight) {
            *a += b;
        }
        total.ll += p.ll;
        if p.worst.0 < total.worst.0 {
            total.worst = p.worst;
        }
    }
    total.ll = total.ll / n as f64 - (k as f64).ln();
    total
}

/// Average log-likelihood of `data` under the uniform mixture of `kernels`.
pub fn average_log_likelihood(data: &[f64], dim: usize, kernels: &[f64], sigma: f64) -> f64 {
    e_step(data, dim, kernels, sigma).ll
}

/// Fit `k` kernels to unit vectors (rows of `data`) by EM with a shared,
/// fixed concentration and uniform weights.
pub fn learn_vmf_kernels(data: &[f64], dim: usize, k: usize, sigma: f64, seed: u64) -> Result<VmfFit> {
    if dim == 0 || data.len() % dim != 0 {
        return dim_err("feature data is not a whole number of vectors");
    }
    if k == 0 {
        return invalid("kernel count must be positive");
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(NucleoError::InsufficientData(format!("{n} feature vectors for {k} kernels")));
    }
    for (i, v) in data.chunks(dim).enumerate() {
        if !check_unit_or_zero(v, "feature")? {
            return invalid(format!("feature vector {i} is invalid (zero)"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = kmeans_pp_seeds(data, dim, k, SeedDistance::Cosine, &mut rng);
    let mut kernels: Vec<f64> = seeds.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].to_vec()).collect();

    let mut stats = e_step(data, dim, &kernels, sigma);
    let mut trace = vec![stats.ll];
    let mut iterations = 0;
    while iterations < MAX_EM_ITERS {
        iterations += 1;
        let mut next = kernels.clone();
        for j in 0..k {
            let s = &stats.sums[j * dim..(j + 1) * dim];
            let len = norm(s);
            let row = &mut next[j * dim..(j + 1) * dim];
            if stats.weight[j] > 1e-300 && len > 1e-300 {
                for (r, v) in row.iter_mut().zip(s) {
                    *r = v / len;
                }
            } else {
                let w = stats.worst.1;
                row.copy_from_slice(&data[w * dim..(w + 1) * dim]);
            }
        }
        let movement = (0..k)
            .map(|j| {
                let a = &kernels[j * dim..(j + 1) * dim];
                let b = &next[j * dim..(j + 1) * dim];
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / k as f64;
        kernels = next;
        stats = e_step(data, dim, &kernels, sigma);
        trace.push(stats.ll);
        if movement < EM_TOLERANCE {
            break;
        }
    }
    log::debug!("vMF EM: {iterations} iterations, final average log-likelihood {:.6}", stats.ll);
    Ok(VmfFit { bank: VmfKernelBank::new(dim, kernels, sigma)?, log_likelihood: trace, iterations })
}

/// Collect valid vectors from feature maps, subsampled uniformly to at most
/// `max_vectors` (in original order).
pub fn gather_valid_vectors(maps: &[&FeatureMap], max_vectors: usize, seed: u64) -> Vec<f64> {
    let dim = maps.first().map_or(0, |m| m.dim());
    let mut index: Vec<(usize, usize)> = Vec::new();
    for (m, fm) in maps.iter().enumerate() {
        for (i, ok) in fm.valid_mask().iter().enumerate() {
            if *ok {
                index.push((m, i));
            }
        }
    }
    if index.len() > max_vectors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, index.len(), max_vectors).into_vec();
        keep.sort_unstable();
        index = keep.into_iter().map(|i| index[i]).collect();
    }
    let mut out = Vec::with_capacity(index.len() * dim);
    for (m, i) in index {
        out.extend_from_slice(&maps[m].vectors()[i * dim..(i + 1) * dim]);
    }
    out
}

/// Per-kernel cosine maps; invalid positions get -1.
pub fn activation_maps(fm: &FeatureMap, bank: &VmfKernelBank) -> Result<Vec<Grid<f64>>> {
    if fm.dim() != bank.dim() {
        return dim_err(format!("feature dim {} vs kernel dim {}", fm.dim(), bank.dim()));
    }
    let (w, h) = (fm.width(), fm.height());
    Ok((0..bank.len())
        .map(|k| {
            let mu = bank.kernel(k);
            Grid::from_fn(w, h, |x, y| {
                if fm.is_valid(x, y) {
                    dot(fm.vector(x, y), mu).clamp(-1.0, 1.0)
                } else {
                    -1.0
                }
            })
        })
        .collect())
}

/// Per-kernel activation sums over the pixels of one map outside every
/// nucleus box dilated by the background margin, with the pixel count.
pub fn background_activation_sums(bank: &VmfKernelBank, fm: &FeatureMap, boxes: &[BoundingBox]) -> Result<(Vec<f64>, usize)> {
    if fm.dim() != bank.dim() {
        return dim_err("feature map dimension does not match the kernel bank");
    }
    let mut inside = vec![false; fm.width() * fm.height()];
    for b in boxes.iter().filter_map(|b| b.dilate(BACKGROUND_BOX_MARGIN).clip(fm.width(), fm.height())) {
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                inside[y as usize * fm.width() + x as usize] = true;
            }
        }
    }
    let mut sums = vec![0.0; bank.len()];
    let mut count = 0usize;
    for y in 0..fm.height() {
        for x in 0..fm.width() {
            if inside[y * fm.width() + x] {
                continue;
            }
            count += 1;
            for (j, s) in sums.iter_mut().enumerate() {
                *s += if fm.is_valid(x, y) { dot(fm.vector(x, y), bank.kernel(j)) } else { -1.0 };
            }
        }
    }
    Ok((sums, count))
}

/// Background choice from accumulated sums: highest mean activation, ties
/// (within 1e-12) to the lowest index.
pub fn background_from_sums(bank: &VmfKernelBank, sums: &[f64], count: usize) -> Result<VmfKernelBank> {
    if count == 0 {
        return Err(NucleoError::InsufficientData("no background pixels in any training image".into()));
    }
    if sums.len() != bank.len() {
        return dim_err("one activation sum per kernel expected");
    }
    let mut best = 0;
    for j in 1..sums.len() {
        if sums[j] / count as f64 > sums[best] / count as f64 + 1e-12 {
            best = j;
        }
    }
    bank.clone().with_background(best)
}

/// Pick the kernel with the highest mean activation outside all (dilated)
/// nucleus boxes as background; the rest are foreground. Ties go to the
/// lowest index.
pub fn select_background_kernel(
    bank: &VmfKernelBank,
    maps: &[&FeatureMap],
    boxes: &[Vec<BoundingBox>],
) -> Result<VmfKernelBank> {
    if maps.len() != boxes.len() {
        return dim_err(format!("{} feature maps but {} annotation lists", maps.len(), boxes.len()));
    }
    let mut sums = vec![0.0; bank.len()];
    let mut count = 0usize;
    for (fm, bxs) in maps.iter().zip(boxes) {
        let (s, c) = background_activation_sums(bank, fm, bxs)?;
        if c == 0 {
            log::warn!("training image without background pixels skipped");
        }
        sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        count += c;
    }
    background_from_sums(bank, &sums, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm(v);
        v.iter().map(|x| x / n).collect()
    }

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn log_density_examples() {
        let mu = unit(&[1.0, 2.0, 2.0]);
        assert!((vmf_log_density(&mu, &mu, 30.0).unwrap() - 30.0).abs() < 1e-12);
        let neg: Vec<f64> = mu.iter().map(|x| -x).collect();
        assert!((vmf_log_density(&neg, &mu, 30.0).unwrap() + 30.0).abs() < 1e-12);
        let perp = unit(&[2.0, -1.0, 0.0]);
        assert!(vmf_log_density(&perp, &mu, 7.0).unwrap().abs() < 1e-12);
        assert_eq!(vmf_log_density(&[0.0; 3], &mu, 30.0).unwrap(), 0.0);
        assert!(vmf_log_density(&[0.5, 0.0, 0.0], &mu, 30.0).is_err());
    }

    #[test]
    fn degenerate_data_gives_identical_kernels() {
        let v = unit(&[0.3, -0.2, 0.9, 0.1]);
        let data: Vec<f64> = (0..50).flat_map(|_| v.clone()).collect();
        let fit = learn_vmf_kernels(&data, 4, 2, 30.0, 9).unwrap();
        for k in 0..2 {
            assert!(dot(fit.bank.kernel(k), &v) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn em_trace_is_monotone_and_kernels_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..400)
            .flat_map(|_| unit(&(0..6).map(|_| rng.gen::<f64>() - 0.3).collect::<Vec<_>>()))
            .collect();
        let fit = learn_vmf_kernels(&data, 6, 4, 30.0, 1).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", w);
        }
        for k in 0..4 {
            assert!((norm(fit.bank.kernel(k)) - 1.0).abs() < 1e-6);
        }
        let again = learn_vmf_kernels(&data, 6, 4, 30.0, 1).unwrap();
        assert_eq!(fit.bank, again.bank);
    }

    #[test]
    fn activation_maps_follow_the_dot_product() {
        let dim = 3;
        let bank = VmfKernelBank::new(
            dim,
            [basis(3, 0), basis(3, 1), unit(&[1.0, 1.0, 0.0])].concat(),
            30.0,
        )
        .unwrap();
        let fm = FeatureMap::filled(4, 3, bank.kernel(2));
        let maps = activation_maps(&fm, &bank).unwrap();
        assert!(maps[2].as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let expect = dot(bank.kernel(2), bank.kernel(0));
        assert!(maps[0].as_slice().iter().all(|v| (v - expect).abs() < 1e-12));

        let blank = FeatureMap::filled(4, 3, &[0.0; 3]);
        let maps = activation_maps(&blank, &bank).unwrap();
        assert!(maps.iter().all(|m| m.as_slice().iter().all(|v| *v == -1.0)));

        let wrong = FeatureMap::filled(4, 3, &[1.0, 0.0]);
        assert!(activation_maps(&wrong, &bank).is_err());
    }

    #[test]
    fn background_is_the_kernel_filling_the_outside() {
        let dim = 8;
        let kernels: Vec<f64> = (0..8).flat_map(|i| basis(dim, i)).collect();
        let bank = VmfKernelBank::new(dim, kernels, 30.0).unwrap();
        let mut fm = FeatureMap::filled(30, 30, &basis(dim, 5));
        for y in 10..20 {
            for x in 10..20 {
                fm.set_vector(x, y, &basis(dim, 1));
            }
        }
        let boxes = vec![vec![BoundingBox::new(12, 12, 17, 17)]];
        let picked = select_background_kernel(&bank, &[&fm], &boxes).unwrap();
        assert_eq!(picked.background_index(), 5);
        assert_eq!(picked.foreground_indices(), &[0, 1, 2, 3, 4, 6, 7]);
    }

    #[test]
    fn background_ties_go_to_lowest_index() {
        let dim = 2;
        let bank = VmfKernelBank::new(dim, [basis(2, 0), basis(2, 1)].concat(), 30.0).unwrap();
        let fm = FeatureMap::filled(10, 10, &[1.0, 1.0]);
        let picked = select_background_kernel(&bank, &[&fm], &[vec![]]).unwrap();
        assert_eq!(picked.background_index(), 0);

        let covered = vec![vec![BoundingBox::new(0, 0, 9, 9)]];
        assert!(select_background_kernel(&bank, &[&fm], &covered).is_err());
    }
}
