//! Oracle-equivalence suites shared by `recover selftest` and the
//! acceptance tests. Each suite compares a fast implementation against an
//! independent reference from [`crate::oracle`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bp::{self, NoiseKernel};
use crate::density::{convolve_circular, sample_spike_slab_prior, DensityGrid, SampledDensity};
use crate::detector::{bht_decide, build_references, BhtDecision, StateVector};
use crate::error::Result;
use crate::estimator::mmse_on_support;
use crate::model::{generate_matrix, seeded_rng};
use crate::oracle;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error, or another figure of merit.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {} (worst {:.3e}, tol {:.1e})", self.name, self.detail, self.worst, self.tolerance)
    }
}

pub const CONVOLUTION_TOL: f64 = 1e-10;
pub const TREE_TV_TOL: f64 = 1e-6;
pub const MMSE_REL_TOL: f64 = 1e-10;

fn random_density(grid: DensityGrid, rng: &mut ChaCha8Rng) -> SampledDensity {
    let w: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>().powi(4)).collect();
    SampledDensity::from_weights(grid, w).expect("positive weights")
}

/// FFT convolution against the direct double loop on `pairs` random pairs.
pub fn convolution(seed: u64, pairs: usize) -> Result<Check> {
    let grid = DensityGrid::new(256, 5.0)?;
    let mut rng = seeded_rng(seed, 100);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = random_density(grid, &mut rng);
        let b = random_density(grid, &mut rng);
        let fast = convolve_circular(&a, &b)?;
        let slow = oracle::convolve_direct(&a, &b);
        for (x, y) in fast.mass().iter().zip(slow.mass()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(Check {
        name: "fft-convolution",
        passed: worst <= CONVOLUTION_TOL,
        worst,
        tolerance: CONVOLUTION_TOL,
        detail: format!("{pairs} pairs at n_d=256"),
    })
}

/// BP marginals on random trees against exhaustive grid marginalization.
pub fn tree_bp(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = seeded_rng(seed, 101);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = 1 + k % 6;
        let n_d = if n <= 4 { 16 } else { 8 };
        let grid = DensityGrid::new(n_d, 5.0)?;
        let q = rng.gen_range(0.1..0.5);
        let prior = sample_spike_slab_prior(&grid, q, 5.0)?;
        let graph = oracle::random_tree_graph(n, &mut rng);
        let sigma_n = rng.gen_range(0.3..3.0) * grid.step();
        // grid-valued signal with measurements inside the grid
        let z = loop {
            let cells: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_d)).collect();
            let z: Vec<f64> = (0..graph.n_checks())
                .map(|j| {
                    let s: f64 = graph.check_neighbors(j).iter().map(|&i| grid.value(cells[i])).sum();
                    s + sigma_n * (rng.gen::<f64>() - 0.5)
                })
                .collect();
            if z.iter().all(|&v| v >= grid.min_value() && v <= grid.max_value()) {
                break z;
            }
        };
        let kernel = NoiseKernel::aware(&grid, sigma_n);
        let iterations = 2 * (n + graph.n_checks()) + 2;
        let out = bp::run(&graph, &z, &prior, kernel, iterations, None)?;
        let exact = oracle::exhaustive_grid_marginals(&graph, &z, &prior, kernel.variance())?;
        for (a, b) in out.marginals.iter().zip(&exact) {
            worst = worst.max(a.total_variation(b));
        }
    }
    Ok(Check {
        name: "tree-bp",
        passed: worst <= TREE_TV_TOL,
        worst,
        tolerance: TREE_TV_TOL,
        detail: format!("{instances} random trees, N <= 6"),
    })
}

/// QR-based MMSE against explicit inversion on random 8x12 instances.
pub fn mmse(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = seeded_rng(seed, 102);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let matrix = generate_matrix(8, 12, rng.gen_range(1..=4), &mut rng)?;
        let state = StateVector((0..12).map(|_| rng.gen_bool(0.4)).collect());
        let z: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let sigma_x1 = rng.gen_range(0.5..10.0);
        let sigma_n = rng.gen_range(0.01..3.0);
        let fast = mmse_on_support(&matrix, &state, &z, sigma_x1, sigma_n)?;
        let support = state.support();
        if support.is_empty() {
            continue;
        }
        let slow = oracle::mmse_dense_inverse(&matrix.columns_dense(&support), &z, sigma_x1, sigma_n);
        let num: f64 = support.iter().zip(&slow).map(|(&i, s)| (fast[i] - s).powi(2)).sum();
        let den: f64 = slow.iter().map(|s| s * s).sum();
        if den > 0.0 {
            worst = worst.max((num / den).sqrt());
        }
    }
    Ok(Check {
        name: "mmse-on-support",
        passed: worst <= MMSE_REL_TOL,
        worst,
        tolerance: MMSE_REL_TOL,
        detail: format!("{instances} instances, M=8, N=12"),
    })
}

/// Relative quadrature error of the grid for one scalar observation: slab
/// truncation plus the Riemann error of `∫ slab(x) N(z − x) dx`.
fn scalar_quadrature_error(grid: &DensityGrid, z: f64, sigma_x1: f64, sigma_n: f64) -> f64 {
    let gauss = |x: f64, v: f64| (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let vx = sigma_x1 * sigma_x1;
    let vn = sigma_n * sigma_n;
    let t = grid.step();
    let slab_mass: f64 = grid.values().map(|x| gauss(x, vx) * t).sum();
    let conv: f64 = grid.values().map(|x| gauss(x, vx) * gauss(z - x, vn) * t).sum();
    (1.0 - slab_mass).abs() + (conv / gauss(z, vx + vn) - 1.0).abs()
}

/// Uncalibrated hypothesis test on the one-variable, one-measurement graph
/// against the analytic posterior odds. Draws whose analytic log odds lie
/// within two quadrature errors of the threshold are skipped.
pub fn scalar_bht(seed: u64, draws: usize) -> Result<Check> {
    let sigma_x1 = 5.0;
    let q = 0.05;
    let grid = DensityGrid::new(256, sigma_x1)?;
    let prior = sample_spike_slab_prior(&grid, q, sigma_x1)?;
    let refs = build_references(&grid, q, sigma_x1)?;
    let graph = crate::model::BipartiteGraph::from_columns(1, vec![vec![0]])?;
    let mut rng = seeded_rng(seed, 103);
    let (mut compared, mut disagreements) = (0usize, 0usize);
    let mut min_margin = f64::INFINITY;
    for _ in 0..draws {
        let z = rng.gen_range(-12.0..12.0);
        let sigma_n = rng.gen_range(2.0 * grid.step()..4.0);
        let odds = oracle::scalar_support_odds(z, q, sigma_x1, sigma_n);
        let margin = odds.ln().abs();
        let eps = scalar_quadrature_error(&grid, z, sigma_x1, sigma_n);
        if margin <= 2.0 * eps {
            continue;
        }
        min_margin = min_margin.min(margin / eps);
        let out = bp::run(&graph, &[z], &prior, NoiseKernel::aware(&grid, sigma_n), 1, None)?;
        let grid_says = bht_decide(&out.marginals[0], &refs, q) == BhtDecision::Support;
        compared += 1;
        if grid_says != (odds > 1.0) {
            disagreements += 1;
        }
    }
    Ok(Check {
        name: "scalar-bht",
        passed: disagreements == 0 && compared > 0,
        worst: disagreements as f64,
        tolerance: 0.0,
        detail: format!("{compared}/{draws} decisive draws compared, smallest margin {min_margin:.1} quadrature errors"),
    })
}

/// Every suite at its acceptance size.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        convolution(seed, 50)?,
        tree_bp(seed, 36)?,
        mmse(seed, 100)?,
        scalar_bht(seed, 100)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for c in [convolution(7, 5).unwrap(), tree_bp(7, 6).unwrap(), mmse(7, 10).unwrap(), scalar_bht(7, 20).unwrap()] {
            assert!(c.passed, "{c}");
        }
    }
}
