//! Reference computations that share no code path with the fast
//! implementations they check: direct convolution, brute-force grid
//! marginalization, explicit matrix inversion and closed-form scalar
//! posteriors. Used by the test suites and by `recover selftest`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::density::{sample_gaussian_wrapped, SampledDensity};
use crate::error::{invalid, Result};
use crate::model::BipartiteGraph;

/// `O(n_d²)` centre-aligned circular convolution.
pub fn convolve_direct(a: &SampledDensity, b: &SampledDensity) -> SampledDensity {
    let n = a.grid().len();
    let c = n / 2;
    let mut out = vec![0.0; n];
    for (m, o) in out.iter_mut().enumerate() {
        for k in 0..n {
            *o += a.mass()[k] * b.mass()[(m + n + c - k) % n];
        }
    }
    SampledDensity::from_weights(*a.grid(), out).expect("convolution of densities is a density")
}

/// Exact marginals of the grid-valued model
/// `p(m_1..m_N) ∝ Π_i prior[m_i] · Π_j G_j[(Σ_{i∈N_C(j)} x_i) mod grid]`,
/// where `G_j` is the wrapped noise density centred at `z_j`, by summing
/// over every configuration. Sums wrap around the grid exactly like the
/// circular convolutions of the message-passing engine.
pub fn exhaustive_grid_marginals(
    graph: &BipartiteGraph,
    z: &[f64],
    prior: &SampledDensity,
    noise_variance: f64,
) -> Result<Vec<SampledDensity>> {
    let grid = *prior.grid();
    let n_d = grid.len();
    let n = graph.n_vars();
    let configs = (n_d as u64).checked_pow(n as u32).filter(|&c| c <= 50_000_000);
    let Some(configs) = configs else {
        return Err(invalid(format!("{n_d}^{n} configurations is too many to enumerate")));
    };
    let kernels: Vec<SampledDensity> = z
        .iter()
        .map(|&zj| sample_gaussian_wrapped(&grid, zj, noise_variance).map(|(d, _)| d))
        .collect::<Result<_>>()?;
    let c = grid.center() as i64;
    let mut marg = vec![vec![0.0; n_d]; n];
    let mut cells = vec![0usize; n];
    for code in 0..configs {
        let mut rest = code;
        for cell in cells.iter_mut() {
            *cell = (rest % n_d as u64) as usize;
            rest /= n_d as u64;
        }
        let mut w: f64 = cells.iter().map(|&m| prior.mass()[m]).product();
        if w == 0.0 {
            continue;
        }
        for (j, kernel) in kernels.iter().enumerate() {
            let offset: i64 = graph.check_neighbors(j).iter().map(|&i| cells[i] as i64 - c).sum();
            let idx = (c + offset).rem_euclid(n_d as i64) as usize;
            w *= kernel.mass()[idx];
        }
        for (i, &m) in cells.iter().enumerate() {
            marg[i][m] += w;
        }
    }
    marg.into_iter()
        .map(|w| SampledDensity::from_weights(grid, w))
        .collect()
}

/// Random connected bipartite tree with `n_vars` variables and between one
/// and `n_vars` checks.
pub fn random_tree_graph<R: Rng + ?Sized>(n_vars: usize, rng: &mut R) -> BipartiteGraph {
    assert!(n_vars >= 1);
    let n_checks = rng.gen_range(1..=n_vars);
    let mut columns = vec![Vec::new(); n_vars];
    columns[0].push(0);
    let mut placed_vars = vec![0usize];
    let mut placed_checks = vec![0usize];
    #[derive(Clone, Copy)]
    enum Node {
        Var(usize),
        Check(usize),
    }
    let mut pool: Vec<Node> = (1..n_vars)
        .map(Node::Var)
        .chain((1..n_checks).map(Node::Check))
        .collect();
    pool.shuffle(rng);
    for node in pool {
        match node {
            Node::Var(i) => {
                let j = placed_checks[rng.gen_range(0..placed_checks.len())];
                columns[i].push(j);
                placed_vars.push(i);
            }
            Node::Check(j) => {
                let i = placed_vars[rng.gen_range(0..placed_vars.len())];
                columns[i].push(j);
                placed_checks.push(j);
            }
        }
    }
    BipartiteGraph::from_columns(n_checks, columns).expect("tree construction is consistent")
}

/// MMSE on a support via explicit inversion of
/// `I/σ_X1² + GᵀG/σ_N²`.
pub fn mmse_dense_inverse(g: &DMatrix<f64>, z: &[f64], sigma_x1: f64, sigma_n: f64) -> Vec<f64> {
    let k = g.ncols();
    let a = DMatrix::identity(k, k) / (sigma_x1 * sigma_x1) + g.transpose() * g / (sigma_n * sigma_n);
    let inv = a.try_inverse().expect("posterior precision is invertible");
    let x = inv * g.transpose() * DVector::from_column_slice(z) / (sigma_n * sigma_n);
    x.iter().copied().collect()
}

/// Posterior odds `Pr{S=1|z} / Pr{S=0|z}` for one element observed once,
/// `z = x + n`, under the continuous spike-and-slab prior.
pub fn scalar_support_odds(z: f64, q: f64, sigma_x1: f64, sigma_n: f64) -> f64 {
    let v1 = sigma_x1 * sigma_x1 + sigma_n * sigma_n;
    let v0 = sigma_n * sigma_n;
    // ratio of N(z; 0, v1) to N(z; 0, v0)
    let log_lr = 0.5 * (v0 / v1).ln() - z * z / (2.0 * v1) + z * z / (2.0 * v0);
    q / (1.0 - q) * log_lr.exp()
}
