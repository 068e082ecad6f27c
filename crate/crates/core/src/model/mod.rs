//! Problem instances `z = Φx₀ + n`: signal models, sparse-binary sensing
//! matrices and Gaussian measurement noise.

mod graph;
pub mod io;

pub use graph::{BipartiteGraph, SensingMatrix};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Result};

/// Deterministic RNG for one logical stream of one seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    /// On-support values drawn from `N(0, σ_X1²)` restricted to
    /// `x_min ≤ |x| ≤ x_max`.
    Gaussian,
    /// On-support values are `±σ_X1` with equiprobable sign.
    Signed,
}

impl SignalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignalKind::Gaussian => "gaussian",
            SignalKind::Signed => "signed",
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(SignalKind::Gaussian),
            "signed" => Ok(SignalKind::Signed),
            other => Err(invalid(format!("unknown signal kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalModel {
    pub kind: SignalKind,
    pub n: usize,
    pub q: f64,
    pub sigma_x1: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl SignalModel {
    /// Gaussian model with the default magnitude cap `x_max = 3σ_X1`.
    pub fn gaussian(n: usize, q: f64, sigma_x1: f64, x_min: f64) -> Self {
        SignalModel {
            kind: SignalKind::Gaussian,
            n,
            q,
            sigma_x1,
            x_min,
            x_max: 3.0 * sigma_x1,
        }
    }

    pub fn signed(n: usize, q: f64, sigma_x1: f64) -> Self {
        SignalModel {
            kind: SignalKind::Signed,
            n,
            q,
            sigma_x1,
            x_min: sigma_x1,
            x_max: sigma_x1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(invalid(format!("q = {} outside [0, 1]", self.q)));
        }
        if !(self.sigma_x1 > 0.0 && self.sigma_x1.is_finite()) {
            return Err(invalid(format!("sigma_x1 = {} must be positive", self.sigma_x1)));
        }
        if !(self.x_min >= 0.0 && self.x_min <= self.x_max && self.x_max.is_finite()) {
            return Err(invalid(format!(
                "need 0 <= x_min <= x_max < inf, got x_min = {}, x_max = {}",
                self.x_min, self.x_max
            )));
        }
        if self.kind == SignalKind::Gaussian {
            let (mass, _) = truncated_moments(self.sigma_x1, self.x_min, self.x_max);
            if mass < 1e-4 {
                return Err(invalid(format!(
                    "magnitude window [{}, {}] has probability {mass:.2e} under N(0, {}^2)",
                    self.x_min, self.x_max, self.sigma_x1
                )));
            }
        }
        Ok(())
    }

    /// `E[X² | S = 1]` under the generating distribution.
    pub fn on_support_second_moment(&self) -> f64 {
        match self.kind {
            SignalKind::Signed => self.sigma_x1 * self.sigma_x1,
            SignalKind::Gaussian => truncated_moments(self.sigma_x1, self.x_min, self.x_max).1,
        }
    }
}

/// Probability of `lo ≤ |X| ≤ hi` for `X ~ N(0, σ²)` and the conditional
/// second moment `E[X² | lo ≤ |X| ≤ hi]`, by composite Simpson quadrature.
pub fn truncated_moments(sigma: f64, lo: f64, hi: f64) -> (f64, f64) {
    const INTERVALS: usize = 4000;
    if hi <= lo {
        return (0.0, lo * lo);
    }
    let h = (hi - lo) / INTERVALS as f64;
    let pdf = |x: f64| (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let (mut m0, mut m2) = (0.0, 0.0);
    for k in 0..=INTERVALS {
        let x = lo + k as f64 * h;
        let w = if k == 0 || k == INTERVALS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = pdf(x);
        m0 += w * p;
        m2 += w * p * x * x;
    }
    // both tails
    m0 *= 2.0 * h / 3.0;
    m2 *= 2.0 * h / 3.0;
    (m0, m2 / m0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    pub values: Vec<f64>,
    pub state: Vec<bool>,
}

impl SparseSignal {
    pub fn from_values(values: Vec<f64>) -> Self {
        let state = values.iter().map(|&v| v != 0.0).collect();
        SparseSignal { values, state }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Support cardinality `K`.
    pub fn sparsity(&self) -> usize {
        self.state.iter().filter(|&&s| s).count()
    }

    /// `‖x_{0,s}‖₂²`, the on-support energy.
    pub fn support_energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

pub fn generate_signal<R: Rng + ?Sized>(model: &SignalModel, rng: &mut R) -> SparseSignal {
    let slab = Normal::new(0.0, model.sigma_x1).expect("sigma_x1 validated positive");
    let values = (0..model.n)
        .map(|_| {
            if !rng.gen_bool(model.q) {
                return 0.0;
            }
            match model.kind {
                SignalKind::Signed => {
                    if rng.gen_bool(0.5) {
                        model.sigma_x1
                    } else {
                        -model.sigma_x1
                    }
                }
                SignalKind::Gaussian => loop {
                    let x: f64 = slab.sample(rng);
                    let a = x.abs();
                    // x_min = 0 still excludes an exact zero so the state stays consistent
                    if a >= model.x_min && a <= model.x_max && x != 0.0 {
                        break x;
                    }
                },
            }
        })
        .collect();
    SparseSignal::from_values(values)
}

/// Each column gets `column_weight` distinct rows drawn uniformly without
/// replacement. No girth constraint is imposed.
pub fn generate_matrix<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    column_weight: usize,
    rng: &mut R,
) -> Result<SensingMatrix> {
    if column_weight > m {
        return Err(invalid(format!("column weight {column_weight} exceeds m = {m}")));
    }
    if column_weight == 0 {
        return Err(invalid("column weight must be at least 1"));
    }
    let columns = (0..n)
        .map(|_| {
            let mut rows = rand::seq::index::sample(rng, m, column_weight).into_vec();
            rows.sort_unstable();
            rows
        })
        .collect();
    SensingMatrix::from_columns(m, columns)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_n: f64,
}

impl NoiseModel {
    pub fn new(sigma_n: f64) -> Result<Self> {
        if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
            return Err(invalid(format!("sigma_n = {sigma_n} must be finite and >= 0")));
        }
        Ok(NoiseModel { sigma_n })
    }
}

/// `z = Φx + n` with `n ~ N(0, σ_N² I)`.
pub fn measure<R: Rng + ?Sized>(
    matrix: &SensingMatrix,
    signal: &SparseSignal,
    noise: NoiseModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut z = matrix.mul_vec(&signal.values)?;
    if noise.sigma_n > 0.0 {
        for zj in &mut z {
            let e: f64 = StandardNormal.sample(rng);
            *zj += noise.sigma_n * e;
        }
    }
    Ok(z)
}

/// Realized SNR `10 log10(‖Φx₀‖² / (M σ_N²))`. Returns `+inf` for a
/// noiseless instance.
pub fn snr_db(matrix: &SensingMatrix, signal: &SparseSignal, noise: NoiseModel) -> Result<f64> {
    let y = matrix.mul_vec(&signal.values)?;
    if noise.sigma_n == 0.0 {
        return Ok(f64::INFINITY);
    }
    let energy: f64 = y.iter().map(|v| v * v).sum();
    Ok(10.0 * (energy / (matrix.m() as f64 * noise.sigma_n * noise.sigma_n)).log10())
}

/// Noise level giving the target SNR in expectation, using
/// `E‖Φx₀‖² = L·N·q·E[X²|S=1]`.
pub fn sigma_for_snr(matrix: &SensingMatrix, model: &SignalModel, target_snr_db: f64) -> f64 {
    if target_snr_db == f64::INFINITY {
        return 0.0;
    }
    let energy = matrix.column_weight() as f64
        * model.n as f64
        * model.q
        * model.on_support_second_moment();
    (energy / (matrix.m() as f64 * 10f64.powf(target_snr_db / 10.0))).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_gaussian() -> SignalModel {
        SignalModel::gaussian(1024, 0.05, 5.0, 1.25)
    }

    #[test]
    fn gaussian_signal_respects_magnitude_window() {
        let model = standard_gaussian();
        model.validate().unwrap();
        let mut total_k = 0;
        for trial in 0..50 {
            let s = generate_signal(&model, &mut seeded_rng(trial, 0));
            for (&v, &st) in s.values.iter().zip(&s.state) {
                assert_eq!(st, v != 0.0);
                if st {
                    assert!((1.25..=15.0).contains(&v.abs()), "{v}");
                }
            }
            total_k += s.sparsity();
        }
        let mean_k = total_k as f64 / 50.0;
        assert!((mean_k - 51.2).abs() < 4.0, "mean K = {mean_k}");
    }

    #[test]
    fn q_zero_gives_zero_signal() {
        for model in [SignalModel::gaussian(64, 0.0, 5.0, 1.25), SignalModel::signed(64, 0.0, 5.0)] {
            let s = generate_signal(&model, &mut seeded_rng(3, 0));
            assert!(s.values.iter().all(|&v| v == 0.0));
            assert!(s.state.iter().all(|&b| !b));
        }
    }

    #[test]
    fn signed_support_rate() {
        let model = SignalModel::signed(10, 0.5, 5.0);
        let mut rng = seeded_rng(11, 0);
        let mut on = 0usize;
        let draws = 10_000;
        for _ in 0..draws {
            let s = generate_signal(&model, &mut rng);
            for &v in &s.values {
                assert!(v == 0.0 || v == 5.0 || v == -5.0);
            }
            on += s.sparsity();
        }
        let rate = on as f64 / (draws * 10) as f64;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn generation_is_reproducible() {
        let model = standard_gaussian();
        let a = generate_signal(&model, &mut seeded_rng(99, 1));
        let b = generate_signal(&model, &mut seeded_rng(99, 1));
        assert_eq!(a, b);
        let ma = generate_matrix(512, 1024, 4, &mut seeded_rng(99, 2)).unwrap();
        let mb = generate_matrix(512, 1024, 4, &mut seeded_rng(99, 2)).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn full_size_matrix_shape() {
        let mat = generate_matrix(512, 1024, 4, &mut seeded_rng(1, 0)).unwrap();
        assert_eq!(mat.graph().edge_count(), 4096);
        assert!((mat.density() - 4.0 / 512.0).abs() < 1e-15);
        for i in 0..1024 {
            assert_eq!(mat.column(i).len(), 4);
        }
    }

    #[test]
    fn full_weight_is_all_ones() {
        let mat = generate_matrix(4, 4, 4, &mut seeded_rng(5, 0)).unwrap();
        let dense = mat.to_dense();
        assert!(dense.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn adjacency_cross_check() {
        let mat = generate_matrix(6, 10, 2, &mut seeded_rng(7, 0)).unwrap();
        for i in 0..10 {
            for j in 0..6 {
                assert_eq!(mat.column(i).contains(&j), mat.row(j).contains(&i));
            }
        }
    }

    #[test]
    fn rejects_weight_above_rows() {
        assert!(generate_matrix(3, 10, 4, &mut seeded_rng(0, 0)).is_err());
    }

    #[test]
    fn noiseless_measure_by_hand() {
        let mat = SensingMatrix::from_columns(2, vec![vec![0, 1], vec![0]]);
        // columns of unequal weight are rejected by SensingMatrix
        assert!(mat.is_err());
        let graph = BipartiteGraph::from_columns(2, vec![vec![0, 1], vec![0]]).unwrap();
        let mat = SensingMatrix::from_irregular_graph(graph);
        let s = SparseSignal::from_values(vec![2.0, 3.0]);
        let z = measure(&mat, &s, NoiseModel::new(0.0).unwrap(), &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(z, vec![5.0, 2.0]);
        let zero = SparseSignal::from_values(vec![0.0, 0.0]);
        let z = measure(&mat, &zero, NoiseModel::new(0.0).unwrap(), &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn snr_of_unit_and_hundredfold_ratio() {
        // 512 rows each holding a single column of weight 1 makes ‖Φx‖² = ‖x‖²
        let graph = BipartiteGraph::from_columns(512, (0..512).map(|j| vec![j]).collect()).unwrap();
        let mat = SensingMatrix::from_irregular_graph(graph);
        let noise = NoiseModel::new(1.0).unwrap();
        let s = SparseSignal::from_values(vec![1.0; 512]);
        assert!(snr_db(&mat, &s, noise).unwrap().abs() < 1e-12);
        let s = SparseSignal::from_values(vec![10.0; 512]);
        assert!((snr_db(&mat, &s, noise).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(snr_db(&mat, &s, NoiseModel::new(0.0).unwrap()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn sigma_for_signed_closed_form() {
        let model = SignalModel::signed(1024, 0.05, 5.0);
        let mat = generate_matrix(512, 1024, 4, &mut seeded_rng(0, 0)).unwrap();
        let s = sigma_for_snr(&mat, &model, 0.0);
        assert!((s - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(sigma_for_snr(&mat, &model, f64::INFINITY), 0.0);
        assert!(sigma_for_snr(&mat, &model, 300.0) < 1e-10);
    }

    #[test]
    fn truncated_moment_matches_monte_carlo() {
        let (mass, m2) = truncated_moments(5.0, 1.25, 15.0);
        let mut rng = seeded_rng(42, 0);
        let normal = Normal::new(0.0, 5.0).unwrap();
        let (mut acc, mut sum2) = (0usize, 0.0);
        let draws = 400_000;
        for _ in 0..draws {
            let x: f64 = normal.sample(&mut rng);
            if (1.25..=15.0).contains(&x.abs()) {
                acc += 1;
                sum2 += x * x;
            }
        }
        let mc_mass = acc as f64 / draws as f64;
        let mc_m2 = sum2 / acc as f64;
        assert!((mass - mc_mass).abs() < 0.005, "{mass} vs {mc_mass}");
        assert!((m2 - mc_m2).abs() / mc_m2 < 0.01, "{m2} vs {mc_m2}");
    }

    #[test]
    fn calibrated_sigma_recovers_target_snr() {
        let model = standard_gaussian();
        let mut realized = 0.0;
        let trials = 200;
        for t in 0..trials {
            let mat = generate_matrix(512, 1024, 4, &mut seeded_rng(t, 0)).unwrap();
            let s = generate_signal(&model, &mut seeded_rng(t, 1));
            let sigma = sigma_for_snr(&mat, &model, 10.0);
            realized += snr_db(&mat, &s, NoiseModel::new(sigma).unwrap()).unwrap();
        }
        let mean = realized / trials as f64;
        assert!((mean - 10.0).abs() < 0.5, "mean realized SNR {mean}");
    }

    #[test]
    fn gaussian_sigma_for_snr_matches_simulation() {
        // Monte-Carlo calibration: average ‖Φx‖² over fresh instances
        let model = standard_gaussian();
        let mat = generate_matrix(512, 1024, 4, &mut seeded_rng(0, 0)).unwrap();
        let mut energy = 0.0;
        let trials = 400;
        for t in 0..trials {
            let s = generate_signal(&model, &mut seeded_rng(1000 + t, 1));
            energy += mat.mul_vec(&s.values).unwrap().iter().map(|v| v * v).sum::<f64>();
        }
        energy /= trials as f64;
        let mc_sigma = (energy / (512.0 * 100.0)).sqrt();
        let sigma = sigma_for_snr(&mat, &model, 20.0);
        assert!((sigma - mc_sigma).abs() / mc_sigma < 0.02, "{sigma} vs {mc_sigma}");
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = standard_gaussian();
        m.q = 1.5;
        assert!(m.validate().is_err());
        let mut m = standard_gaussian();
        m.sigma_x1 = 0.0;
        assert!(m.validate().is_err());
        let mut m = standard_gaussian();
        m.x_min = 20.0;
        assert!(m.validate().is_err());
        assert!(NoiseModel::new(-1.0).is_err());
    }
}
