//! Signal-value estimation.
//!
//! Given a support, values follow from the Gaussian linear model
//! `x̂_s = (I/σ_X1² + Φ_sᵀΦ_s/σ_N²)⁻¹ Φ_sᵀz/σ_N²`, solved here as the
//! equivalent augmented least-squares problem
//! `min ‖(Φ_s x − z)/σ_N‖² + ‖x/σ_X1‖²` by Householder QR.

use nalgebra::{DMatrix, DVector};

use crate::density::SampledDensity;
use crate::detector::StateVector;
use crate::error::{invalid, Error, Result};
use crate::model::SensingMatrix;

/// Largest `N` accepted by [`exhaustive_mmse`].
pub const EXHAUSTIVE_MAX_N: usize = 16;
/// Largest `N` accepted by [`exhaustive_mmse_signed`].
pub const EXHAUSTIVE_SIGNED_MAX_N: usize = 12;

/// Detected support, value estimate and the metrics of one recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub x_hat: Vec<f64>,
    pub s_hat: StateVector,
    pub ser: f64,
    pub nmse: f64,
}

/// Noise variance used by the linear estimator; a noiseless instance gets
/// `10⁻¹²·σ_X1²` so the system stays well posed.
pub fn effective_noise_variance(sigma_x1: f64, sigma_n: f64) -> f64 {
    if sigma_n == 0.0 {
        1e-12 * sigma_x1 * sigma_x1
    } else {
        sigma_n * sigma_n
    }
}

fn check_scales(sigma_x1: f64, sigma_n: f64) -> Result<()> {
    if !(sigma_x1 > 0.0 && sigma_x1.is_finite()) {
        return Err(invalid(format!("sigma_x1 = {sigma_x1} must be positive")));
    }
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(invalid(format!("sigma_n = {sigma_n} must be finite and >= 0")));
    }
    Ok(())
}

/// Linear MMSE estimate restricted to the support of `s_hat`; zero elsewhere.
pub fn mmse_on_support(
    matrix: &SensingMatrix,
    s_hat: &StateVector,
    z: &[f64],
    sigma_x1: f64,
    sigma_n: f64,
) -> Result<Vec<f64>> {
    check_scales(sigma_x1, sigma_n)?;
    if s_hat.len() != matrix.n() || z.len() != matrix.m() {
        return Err(Error::Dimension(format!(
            "state of length {} and {} measurements for a {}x{} matrix",
            s_hat.len(),
            z.len(),
            matrix.m(),
            matrix.n()
        )));
    }
    let support = s_hat.support();
    let mut x = vec![0.0; matrix.n()];
    if support.is_empty() {
        return Ok(x);
    }
    let (m, k) = (matrix.m(), support.len());
    let sn = effective_noise_variance(sigma_x1, sigma_n).sqrt();
    let mut a = DMatrix::zeros(m + k, k);
    a.view_mut((0, 0), (m, k))
        .copy_from(&(matrix.columns_dense(&support) / sn));
    for c in 0..k {
        a[(m + c, c)] = 1.0 / sigma_x1;
    }
    let mut b = DVector::zeros(m + k);
    for (j, &zj) in z.iter().enumerate() {
        b[j] = zj / sn;
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let sol = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Numerical("singular triangular factor in MMSE solve".into()))?;
    for (c, &i) in support.iter().enumerate() {
        x[i] = sol[c];
    }
    Ok(x)
}

/// MMSE estimate with the true support.
pub fn oracle_estimate(
    matrix: &SensingMatrix,
    true_state: &StateVector,
    z: &[f64],
    sigma_x1: f64,
    sigma_n: f64,
) -> Result<Vec<f64>> {
    mmse_on_support(matrix, true_state, z, sigma_x1, sigma_n)
}

/// Expected normalized error of the oracle estimator,
/// `Tr[(I/σ_X1² + Φ_sᵀΦ_s/σ_N²)⁻¹] / ‖x_{0,s}‖²`.
pub fn oracle_mse_formula(
    matrix: &SensingMatrix,
    true_state: &StateVector,
    sigma_x1: f64,
    sigma_n: f64,
    x0: &[f64],
) -> Result<f64> {
    check_scales(sigma_x1, sigma_n)?;
    let support = true_state.support();
    if support.is_empty() {
        return Err(invalid("oracle MSE is undefined for an empty support"));
    }
    let energy: f64 = support.iter().map(|&i| x0[i] * x0[i]).sum();
    if energy == 0.0 {
        return Err(invalid("oracle MSE is undefined for zero on-support energy"));
    }
    let phi = matrix.columns_dense(&support);
    let noise_var = effective_noise_variance(sigma_x1, sigma_n);
    let k = support.len();
    let precision = DMatrix::identity(k, k) / (sigma_x1 * sigma_x1) + phi.transpose() * &phi / noise_var;
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision not positive definite".into()))?;
    Ok(chol.inverse().trace() / energy)
}

/// Support-averaged MMSE over all `2^N` supports of the spike-and-slab
/// model with Gaussian slab: `Σ_s E[X|s,z]·Pr{s|z}`.
pub fn exhaustive_mmse(
    matrix: &SensingMatrix,
    z: &[f64],
    q: f64,
    sigma_x1: f64,
    sigma_n: f64,
) -> Result<Vec<f64>> {
    check_scales(sigma_x1, sigma_n)?;
    let n = matrix.n();
    if n > EXHAUSTIVE_MAX_N {
        return Err(invalid(format!("exhaustive MMSE limited to N <= {EXHAUSTIVE_MAX_N}, got {n}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("q = {q} outside [0, 1]")));
    }
    let m = matrix.m();
    let zv = DVector::from_column_slice(z);
    let var_x = sigma_x1 * sigma_x1;
    let noise_var = effective_noise_variance(sigma_x1, sigma_n);
    let log_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut log_weights = Vec::with_capacity(1 << n);
    let mut means = Vec::with_capacity(1 << n);
    for mask in 0u32..(1u32 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let k = support.len();
        let log_prior = log_or_neg_inf(q) * k as f64 + log_or_neg_inf(1.0 - q) * (n - k) as f64;
        if log_prior == f64::NEG_INFINITY {
            continue;
        }
        let phi = matrix.columns_dense(&support);
        let cov = &phi * phi.transpose() * var_x + DMatrix::identity(m, m) * noise_var;
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("evidence covariance not positive definite".into()))?;
        let alpha = chol.solve(&zv);
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_evidence = -0.5 * (zv.dot(&alpha) + log_det + m as f64 * log_2pi);
        let mean_s = phi.transpose() * alpha * var_x;
        log_weights.push(log_prior + log_evidence);
        means.push((support, mean_s));
    }
    let weights = softmax(&log_weights);
    let mut x = vec![0.0; n];
    for (w, (support, mean_s)) in weights.iter().zip(&means) {
        for (c, &i) in support.iter().enumerate() {
            x[i] += w * mean_s[c];
        }
    }
    Ok(x)
}

/// Posterior mean for the signed model, enumerating every element over
/// `{0, +σ_X1, -σ_X1}` with prior weights `1-q, q/2, q/2`.
pub fn exhaustive_mmse_signed(
    matrix: &SensingMatrix,
    z: &[f64],
    q: f64,
    sigma_x1: f64,
    sigma_n: f64,
) -> Result<Vec<f64>> {
    check_scales(sigma_x1, sigma_n)?;
    let n = matrix.n();
    if n > EXHAUSTIVE_SIGNED_MAX_N {
        return Err(invalid(format!(
            "signed exhaustive MMSE limited to N <= {EXHAUSTIVE_SIGNED_MAX_N}, got {n}"
        )));
    }
    let noise_var = effective_noise_variance(sigma_x1, sigma_n);
    let levels = [(0.0, log_or_neg_inf(1.0 - q)), (sigma_x1, log_or_neg_inf(q / 2.0)), (-sigma_x1, log_or_neg_inf(q / 2.0))];
    let total = 3usize.pow(n as u32);
    let mut log_weights = Vec::with_capacity(total);
    let mut configs = Vec::with_capacity(total);
    let mut x = vec![0.0; n];
    for code in 0..total {
        let mut c = code;
        let mut log_prior = 0.0;
        for xi in x.iter_mut() {
            let (v, lp) = levels[c % 3];
            *xi = v;
            log_prior += lp;
            c /= 3;
        }
        if log_prior == f64::NEG_INFINITY {
            continue;
        }
        let y = matrix.mul_vec(&x)?;
        let rss: f64 = y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        log_weights.push(log_prior - rss / (2.0 * noise_var));
        configs.push(code);
    }
    let weights = softmax(&log_weights);
    let mut mean = vec![0.0; n];
    for (w, &code) in weights.iter().zip(&configs) {
        let mut c = code;
        for mi in mean.iter_mut() {
            *mi += w * levels[c % 3].0;
            c /= 3;
        }
    }
    Ok(mean)
}

fn log_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn softmax(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Peak-location value estimate: the grid value at each marginal's mode.
///
/// The grid is circular, so cell 0 stands for both `-3σ_X1` and `+3σ_X1`.
/// A mode there takes the sign of the side holding more adjacent mass.
pub fn map_value_readout(marginals: &[SampledDensity]) -> Vec<f64> {
    marginals
        .iter()
        .map(|m| {
            let g = m.grid();
            let k = m.argmax();
            let mass = m.mass();
            if k == 0 && mass[g.len() - 1] > mass[1] {
                -g.value(0)
            } else {
                g.value(k)
            }
        })
        .collect()
}

/// Normalized quantization floor `(t_s²/12) / σ_X1²` of grid readouts.
pub fn quantization_floor(step: f64, sigma_x1: f64) -> f64 {
    step * step / 12.0 / (sigma_x1 * sigma_x1)
}
