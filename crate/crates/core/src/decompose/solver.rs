//! Exact branch-and-bound for the cut-selection integer program.

use super::cuts::CutSelectionProblem;
use crate::error::{NucleoError, Result};

/// Largest cut count the bitmask solver accepts.
pub const MAX_CUTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CutSelection {
    pub x: Vec<bool>,
    /// Sum of selected weights in index order.
    pub cost: f64,
}

/// Cost of `x` summed in index order, so equal selections always compare equal.
pub fn canonical_cost(weights: &[f64], x: &[bool]) -> f64 {
    weights.iter().zip(x).filter(|(_, s)| **s).map(|(w, _)| *w).sum()
}

/// `a` is lexicographically smaller than `b` (index 0 compared first, 0 < 1).
fn lex_less(a: u64, b: u64) -> bool {
    let diff = a ^ b;
    diff != 0 && (b >> diff.trailing_zeros()) & 1 == 1
}

struct Search<'a> {
    order: Vec<usize>,
    weights: &'a [f64],
    conflicts: Vec<u64>,
    splitters: Vec<u64>,
    best: Option<(f64, u64)>,
}

impl Search<'_> {
    /// Uncovered pairs whose remaining splitter sets are pairwise disjoint each
    /// need their own cut, so the sum of their cheapest options is admissible.
    fn lower_bound(&self, uncovered: &[usize], allowed: u64) -> f64 {
        let mut items: Vec<(f64, u64)> = uncovered
            .iter()
            .map(|&j| {
                let s = self.splitters[j] & allowed;
                let cheapest = (0..64).filter(|i| s >> i & 1 == 1).map(|i| self.weights[i]).fold(f64::INFINITY, f64::min);
                (cheapest, s)
            })
            .collect();
        items.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut used = 0u64;
        let mut bound = 0.0;
        for (w, s) in items {
            if s & used == 0 {
                used |= s;
                bound += w;
            }
        }
        bound
    }

    fn consider(&mut self, chosen: u64) {
        let x: Vec<bool> = (0..self.weights.len()).map(|i| chosen >> i & 1 == 1).collect();
        let cost = canonical_cost(self.weights, &x);
        let better = match self.best {
            None => true,
            Some((c, b)) => cost < c || (cost == c && lex_less(chosen, b)),
        };
        if better {
            self.best = Some((cost, chosen));
        }
    }

    fn dfs(&mut self, depth: usize, chosen: u64, banned: u64, cost: f64) {
        let uncovered: Vec<usize> = (0..self.splitters.len()).filter(|&j| self.splitters[j] & chosen == 0).collect();
        if uncovered.is_empty() {
            self.consider(chosen);
            return;
        }
        if depth == self.order.len() {
            return;
        }
        let decided: u64 = self.order[..depth].iter().fold(0, |m, &i| m | 1 << i);
        let allowed = !decided & !banned;
        if uncovered.iter().any(|&j| self.splitters[j] & allowed == 0) {
            return;
        }
        if let Some((best, _)) = self.best {
            // slack keeps ties alive despite summation-order rounding
            let bound = cost + self.lower_bound(&uncovered, allowed);
            if bound > best + 1e-9 * best.abs() {
                return;
            }
        }
        let i = self.order[depth];
        if allowed >> i & 1 == 1 {
            self.dfs(depth + 1, chosen | 1 << i, banned | self.conflicts[i], cost + self.weights[i]);
        }
        self.dfs(depth + 1, chosen, banned, cost);
    }
}

/// Minimum-weight set of pairwise non-crossing cuts splitting every mutex
/// pair. Among equal-cost optima the lexicographically smallest selection
/// vector wins.
pub fn solve_cut_selection(problem: &CutSelectionProblem) -> Result<CutSelection> {
    let n = problem.cut_count();
    if n > MAX_CUTS {
        return Err(NucleoError::Capacity { cuts: n, limit: MAX_CUTS });
    }
    let splitters: Vec<u64> =
        (0..problem.mutex_count).map(|j| (0..n).filter(|&i| problem.a[i][j]).fold(0u64, |m, i| m | 1 << i)).collect();
    if let Some(pair) = splitters.iter().position(|s| *s == 0) {
        return Err(NucleoError::Infeasible { pair });
    }
    let conflicts: Vec<u64> =
        (0..n).map(|i| (0..n).filter(|&j| problem.b[i][j]).fold(0u64, |m, j| m | 1 << j)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| problem.weights[a].total_cmp(&problem.weights[b]).then(a.cmp(&b)));
    let mut search = Search { order, weights: &problem.weights, conflicts, splitters, best: None };
    search.dfs(0, 0, 0, 0.0);
    match search.best {
        Some((cost, chosen)) => Ok(CutSelection { x: (0..n).map(|i| chosen >> i & 1 == 1).collect(), cost }),
        None => Err(NucleoError::Infeasible { pair: usize::MAX }),
    }
}
