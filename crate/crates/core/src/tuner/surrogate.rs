//! Surrogate models over the configuration grid and the constrained
//! expected-improvement acquisition.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::GaussianProcess;
use super::{TrialRecord, TunerError};
use crate::config::{Config, Provenance};
use crate::stack::{ConfigSpace, PerformanceSpec};

/// Random candidates scored per suggestion.
pub const CANDIDATES: usize = 1024;
/// Spaces at most this large are scored exhaustively.
pub const EXHAUSTIVE_LIMIT: u128 = 4096;
/// Tail ratios are floored here before taking logs.
const MIN_RATIO: f64 = 1e-3;
const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    out
}

/// Point `index` of the `dims`-dimensional Halton sequence, rotated by
/// `shift` modulo one.
pub fn halton_point(index: u64, dims: usize, shift: &[f64]) -> Vec<f64> {
    (0..dims)
        .map(|d| {
            let base = PRIMES.get(d).copied().unwrap_or_else(|| 97 + 2 * d as u64);
            (radical_inverse(index, base) + shift.get(d).copied().unwrap_or(0.0)).fract()
        })
        .collect()
}

/// Grid coordinates of configurations: one level index per knob, placed in
/// the unit interval linearly for quotas and logarithmically for rates.
#[derive(Debug, Clone)]
pub struct Grid {
    pub counts: Vec<usize>,
    positions: Vec<Vec<f64>>,
}

fn linear_positions(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

fn log_positions(levels: &[f64]) -> Vec<f64> {
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    if levels.len() <= 1 || lo <= 0.0 || hi <= lo {
        return linear_positions(levels.len());
    }
    let span = (hi / lo).ln();
    levels.iter().map(|l| (l / lo).ln() / span).collect()
}

impl Grid {
    pub fn new(space: &ConfigSpace) -> Self {
        let positions: Vec<Vec<f64>> = (0..space.dims())
            .map(|i| {
                let levels = space.knob_levels(i);
                if i < space.quota_knobs.len() {
                    linear_positions(levels.len())
                } else {
                    log_positions(&levels)
                }
            })
            .collect();
        Self {
            counts: positions.iter().map(Vec::len).collect(),
            positions,
        }
    }

    /// Grid with linear placement on every axis.
    pub fn linear(counts: Vec<usize>) -> Self {
        Self {
            positions: counts.iter().map(|&n| linear_positions(n)).collect(),
            counts,
        }
    }

    pub fn unit(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.positions)
            .map(|(&i, p)| p[i])
            .collect()
    }

    /// Nearest level on every axis.
    pub fn snap(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .zip(&self.positions)
            .map(|(&u, p)| {
                let u = u.clamp(0.0, 1.0);
                let i = p.partition_point(|&v| v < u);
                if i == 0 {
                    0
                } else if i == p.len() || u - p[i - 1] <= p[i] - u {
                    i - 1
                } else {
                    i
                }
            })
            .collect()
    }

    pub fn of_config(&self, space: &ConfigSpace, config: &Config) -> Vec<usize> {
        linear_grid_index(&space.unit_from_config(config), &self.counts)
    }

    pub fn config(&self, space: &ConfigSpace, idx: &[usize], provenance: Provenance) -> Config {
        let x: Vec<f64> = idx
            .iter()
            .zip(&self.counts)
            .map(|(&i, &n)| {
                if n <= 1 {
                    0.5
                } else {
                    i as f64 / (n - 1) as f64
                }
            })
            .collect();
        space.config_from_unit(&x, provenance)
    }

    pub fn size(&self) -> u128 {
        self.counts
            .iter()
            .fold(1u128, |a, &n| a.saturating_mul(n as u128))
    }

    /// The `k`-th grid point in mixed-radix order.
    pub fn nth(&self, mut k: u128) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&n| {
                let i = (k % n as u128) as usize;
                k /= n as u128;
                i
            })
            .collect()
    }
}

/// Level indices from the space's own linear unit coordinates.
fn linear_grid_index(x: &[f64], counts: &[usize]) -> Vec<usize> {
    x.iter()
        .zip(counts)
        .map(|(&u, &n)| ((u.clamp(0.0, 1.0) * (n - 1) as f64).round() as usize).min(n - 1))
        .collect()
}

/// Probabilistic models fitted to a trial history.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub objective: GaussianProcess,
    /// One model per core app, on the log of its tail performance ratio.
    pub constraints: Vec<(String, GaussianProcess)>,
    /// Highest predicted objective at a feasible trial, if any.
    pub incumbent: Option<f64>,
    grid: Grid,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

/// Fits the objective model and one constraint model per core app.
pub fn fit_surrogate(
    history: &[TrialRecord],
    space: &ConfigSpace,
    spec: &PerformanceSpec,
) -> Result<SurrogateModel, TunerError> {
    let grid = Grid::new(space);
    let distinct: HashSet<Vec<usize>> = history
        .iter()
        .map(|t| grid.of_config(space, &t.config))
        .collect();
    if distinct.len() < 2 {
        return Err(TunerError::DegenerateHistory);
    }
    let xs: Vec<Vec<f64>> = history
        .iter()
        .map(|t| grid.unit(&grid.of_config(space, &t.config)))
        .collect();
    let ys: Vec<f64> = history.iter().map(|t| t.objective).collect();
    let objective = GaussianProcess::fit(&xs, &ys).ok_or(TunerError::DegenerateHistory)?;
    let mut constraints = Vec::new();
    for a in spec.core() {
        let ys: Vec<f64> = history
            .iter()
            .map(|t| {
                t.core_tail
                    .get(&a.app)
                    .copied()
                    .unwrap_or(0.0)
                    .max(MIN_RATIO)
                    .ln()
            })
            .collect();
        let gp = GaussianProcess::fit(&xs, &ys).ok_or(TunerError::DegenerateHistory)?;
        constraints.push((a.app.clone(), gp));
    }
    let incumbent = history
        .iter()
        .zip(&xs)
        .filter(|(t, _)| t.feasible)
        .map(|(_, x)| objective.predict(x).0)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(SurrogateModel {
        objective,
        constraints,
        incumbent,
        grid,
    })
}

impl SurrogateModel {
    /// Probability that every core constraint holds at `x`.
    pub fn feasibility(&self, x: &[f64]) -> f64 {
        let n = standard_normal();
        self.constraints
            .iter()
            .map(|(_, gp)| {
                let (m, v) = gp.predict(x);
                1.0 - n.cdf(-m / v.sqrt())
            })
            .product()
    }

    /// Expected improvement of the objective over the incumbent.
    pub fn expected_improvement(&self, x: &[f64]) -> f64 {
        let Some(best) = self.incumbent else {
            return 1.0;
        };
        let (m, v) = self.objective.predict(x);
        let s = v.sqrt();
        let d = m - best;
        if s < 1e-12 {
            return d.max(0.0);
        }
        let n = standard_normal();
        let z = d / s;
        d * n.cdf(z) + s * n.pdf(z)
    }

    /// Constrained expected improvement; without a feasible incumbent this
    /// is the feasibility probability alone.
    pub fn acquisition(&self, x: &[f64]) -> f64 {
        self.expected_improvement(x) * self.feasibility(x)
    }
}

fn score(model: &SurrogateModel, idx: &[usize]) -> f64 {
    model.acquisition(&model.grid.unit(idx))
}

/// Proposes the untried grid config with the highest acquisition value.
pub fn suggest_next(
    model: &SurrogateModel,
    history: &[TrialRecord],
    space: &ConfigSpace,
    seed: u64,
) -> Result<Config, TunerError> {
    let grid = &model.grid;
    let tried: HashSet<Vec<usize>> = history
        .iter()
        .map(|t| grid.of_config(space, &t.config))
        .collect();
    let size = grid.size();
    if size <= tried.len() as u128 {
        return Err(TunerError::SpaceExhausted);
    }

    if size <= EXHAUSTIVE_LIMIT {
        let best = (0..size)
            .map(|k| grid.nth(k))
            .filter(|idx| !tried.contains(idx))
            .map(|idx| (score(model, &idx), idx))
            .fold(None, |b: Option<(f64, Vec<usize>)>, c| match b {
                Some(b) if b.0 >= c.0 => Some(b),
                _ => Some(c),
            });
        let (_, idx) = best.ok_or(TunerError::SpaceExhausted)?;
        return Ok(grid.config(space, &idx, Provenance::Tuned));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = grid.counts.len();
    let anchors: Vec<Vec<f64>> = {
        let mut ranked: Vec<&TrialRecord> = history.iter().collect();
        ranked.sort_by(|a, b| b.ranked_objective().total_cmp(&a.ranked_objective()));
        ranked
            .iter()
            .take(4)
            .map(|t| grid.unit(&grid.of_config(space, &t.config)))
            .collect()
    };
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(CANDIDATES);
    for c in 0..CANDIDATES {
        let x: Vec<f64> = if c % 4 == 3 && !anchors.is_empty() {
            let a = &anchors[c / 4 % anchors.len()];
            a.iter().map(|u| u + rng.gen_range(-0.15..0.15)).collect()
        } else {
            (0..dims).map(|_| rng.gen::<f64>()).collect()
        };
        candidates.push(grid.snap(&x));
    }
    let mut scored: Vec<(f64, Vec<usize>)> = candidates
        .into_iter()
        .filter(|idx| !tried.contains(idx))
        .map(|idx| (score(model, &idx), idx))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let Some((mut best_score, mut best)) = scored.into_iter().next() else {
        return random_untried(grid, &tried, &mut rng)
            .map(|idx| grid.config(space, &idx, Provenance::Tuned))
            .ok_or(TunerError::SpaceExhausted);
    };
    // Coordinate-wise refinement around the best candidate.
    for _ in 0..5 {
        let mut improved = false;
        for d in 0..dims {
            for step in [-4i64, -2, -1, 1, 2, 4] {
                let j = best[d] as i64 + step;
                if j < 0 || j >= grid.counts[d] as i64 {
                    continue;
                }
                let mut idx = best.clone();
                idx[d] = j as usize;
                if tried.contains(&idx) {
                    continue;
                }
                let s = score(model, &idx);
                if s > best_score {
                    best_score = s;
                    best = idx;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(grid.config(space, &best, Provenance::Tuned))
}

fn random_untried(
    grid: &Grid,
    tried: &HashSet<Vec<usize>>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    for _ in 0..10_000 {
        let idx: Vec<usize> = grid.counts.iter().map(|&n| rng.gen_range(0..n)).collect();
        if !tried.contains(&idx) {
            return Some(idx);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_first_points() {
        let p: Vec<Vec<f64>> = (1..4).map(|i| halton_point(i, 2, &[])).collect();
        assert_eq!(p[0], vec![0.5, 1.0 / 3.0]);
        assert_eq!(p[1], vec![0.25, 2.0 / 3.0]);
        assert_eq!(p[2], vec![0.75, 1.0 / 9.0]);
    }

    #[test]
    fn grid_round_trip() {
        let g = Grid::linear(vec![3, 1, 5]);
        let idx = vec![2, 0, 3];
        assert_eq!(g.snap(&g.unit(&idx)), idx);
        assert_eq!(g.size(), 15);
        let all: HashSet<Vec<usize>> = (0..15).map(|k| g.nth(k)).collect();
        assert_eq!(all.len(), 15);
    }

    #[test]
    fn rate_axis_is_logarithmic() {
        let p = log_positions(&[0.5, 1.0, 2.0, 4.0]);
        for (a, b) in p.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = Grid {
            counts: vec![4],
            positions: vec![p],
        };
        assert_eq!(g.snap(&[0.3]), vec![1]);
        assert_eq!(g.snap(&[0.9]), vec![3]);
        assert_eq!(g.snap(&[0.0]), vec![0]);
    }
}
