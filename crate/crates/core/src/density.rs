//! Probability densities sampled on a fixed, zero-centered grid.
//!
//! A grid of `n_d` cells with step `t_s = 6σ_X1 / n_d` covers
//! `[-3σ_X1, 3σ_X1)`; cell `m` holds value `(m - n_d/2)·t_s`, so the centre
//! cell is exactly zero. Convolutions are circular on this grid and keep the
//! zero cell fixed: convolving with a unit mass at the centre is the identity.

use std::cell::RefCell;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Products whose linear-domain sum falls below this are recomputed in the
/// log domain.
pub const UNDERFLOW_SUM: f64 = 1e-300;

/// Log-domain stand-in for an exactly zero cell.
const LOG_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityGrid {
    n_d: usize,
    t_s: f64,
}

impl DensityGrid {
    /// Three-sigma grid: `t_s = 2·3σ_X1 / n_d`.
    pub fn new(n_d: usize, sigma_x1: f64) -> Result<Self> {
        if n_d < 2 || !n_d.is_power_of_two() {
            return Err(invalid(format!("n_d = {n_d} must be a power of two >= 2")));
        }
        if !(sigma_x1 > 0.0 && sigma_x1.is_finite()) {
            return Err(invalid(format!("sigma_x1 = {sigma_x1} must be positive")));
        }
        Ok(DensityGrid {
            n_d,
            t_s: 6.0 * sigma_x1 / n_d as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.n_d
    }

    pub fn is_empty(&self) -> bool {
        self.n_d == 0
    }

    pub fn step(&self) -> f64 {
        self.t_s
    }

    pub fn center(&self) -> usize {
        self.n_d / 2
    }

    pub fn value(&self, m: usize) -> f64 {
        (m as f64 - self.center() as f64) * self.t_s
    }

    pub fn min_value(&self) -> f64 {
        self.value(0)
    }

    pub fn max_value(&self) -> f64 {
        self.value(self.n_d - 1)
    }

    /// Nearest cell to `x`, saturating at the grid edges.
    pub fn nearest_index(&self, x: f64) -> usize {
        let k = (x / self.t_s).round() + self.center() as f64;
        k.clamp(0.0, (self.n_d - 1) as f64) as usize
    }

    /// Rounds `x` to the grid, saturating at the edges.
    pub fn quantize(&self, x: f64) -> f64 {
        self.value(self.nearest_index(x))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_d).map(|m| self.value(m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledDensity {
    grid: DensityGrid,
    mass: Vec<f64>,
}

impl SampledDensity {
    /// Normalizes nonnegative weights into a density.
    pub fn from_weights(grid: DensityGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} weights for a grid of {} cells",
                weights.len(),
                grid.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Numerical("weights sum to zero".into()));
        }
        let mass = weights.into_iter().map(|w| w / sum).collect();
        Ok(SampledDensity { grid, mass })
    }

    /// Caller guarantees the mass is already normalized.
    pub(crate) fn from_normalized(grid: DensityGrid, mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), grid.len());
        SampledDensity { grid, mass }
    }

    pub fn uniform(grid: DensityGrid) -> Self {
        let n = grid.len();
        SampledDensity {
            grid,
            mass: vec![1.0 / n as f64; n],
        }
    }

    pub fn delta(grid: DensityGrid, index: usize) -> Self {
        let mut mass = vec![0.0; grid.len()];
        mass[index] = 1.0;
        SampledDensity { grid, mass }
    }

    /// Unit mass at the cell nearest to `x`.
    pub fn delta_at(grid: DensityGrid, x: f64) -> Self {
        Self::delta(grid, grid.nearest_index(x))
    }

    pub fn grid(&self) -> &DensityGrid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// Index of the largest cell; ties go to the cell closest to the centre,
    /// then to the lower index.
    pub fn argmax(&self) -> usize {
        let c = self.grid.center();
        let mut best = c;
        for (m, &p) in self.mass.iter().enumerate() {
            let b = self.mass[best];
            if p > b || (p == b && m.abs_diff(c) < best.abs_diff(c)) {
                best = m;
            }
        }
        best
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(m, p)| p * self.grid.value(m))
            .sum()
    }

    pub fn total_variation(&self, other: &SampledDensity) -> f64 {
        0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// `value,mass` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "value,mass")?;
        for (m, p) in self.mass.iter().enumerate() {
            writeln!(out, "{},{}", self.grid.value(m), p)?;
        }
        Ok(())
    }
}

/// Sampled `N(mean, variance)` without the clamp report.
pub fn sample_gaussian(grid: &DensityGrid, mean: f64, variance: f64) -> Result<SampledDensity> {
    sample_gaussian_clamped(grid, mean, variance).map(|(d, _)| d)
}

/// Sampled `N(mean, variance)`. A mean outside the grid is moved to the
/// nearest edge; the flag reports whether that happened.
pub fn sample_gaussian_clamped(
    grid: &DensityGrid,
    mean: f64,
    variance: f64,
) -> Result<(SampledDensity, bool)> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(invalid(format!("variance = {variance} must be positive")));
    }
    if !mean.is_finite() {
        return Err(invalid("mean must be finite"));
    }
    let clamped = mean < grid.min_value() || mean > grid.max_value();
    let mean = mean.clamp(grid.min_value(), grid.max_value());
    let mut logw: Vec<f64> = grid
        .values()
        .map(|x| -(x - mean) * (x - mean) / (2.0 * variance))
        .collect();
    exp_normalize(&mut logw);
    Ok((SampledDensity::from_normalized(*grid, logw), clamped))
}

/// Wrapped `N(mean, variance)` on the grid read as a circle of
/// circumference `n_d·t_s`, matching the circular convolutions of the
/// message updates. The flag reports whether `mean` lay outside the grid.
pub fn sample_gaussian_wrapped(
    grid: &DensityGrid,
    mean: f64,
    variance: f64,
) -> Result<(SampledDensity, bool)> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(invalid(format!("variance = {variance} must be positive")));
    }
    if !mean.is_finite() {
        return Err(invalid("mean must be finite"));
    }
    let span = grid.len() as f64 * grid.step();
    let outside = mean < grid.min_value() || mean > grid.max_value();
    let mean = (mean - grid.min_value()).rem_euclid(span) + grid.min_value();
    let mut logw: Vec<f64> = grid
        .values()
        .map(|x| {
            let terms = (-2..=2).map(|k| {
                let d = x - mean + k as f64 * span;
                -d * d / (2.0 * variance)
            });
            let top = terms.clone().fold(f64::NEG_INFINITY, f64::max);
            top + terms.map(|t| (t - top).exp()).sum::<f64>().ln()
        })
        .collect();
    exp_normalize(&mut logw);
    Ok((SampledDensity::from_normalized(*grid, logw), outside))
}

/// Sampled Gaussian slab `N(0, σ²)` normalized over the grid.
pub fn sample_slab(grid: &DensityGrid, sigma: f64) -> Result<SampledDensity> {
    sample_gaussian(grid, 0.0, sigma * sigma)
}

/// Spike-and-slab prior `q·N(0, σ_X1²) + (1-q)·δ₀` on the grid, where the
/// slab is first normalized to unit mass.
pub fn sample_spike_slab_prior(grid: &DensityGrid, q: f64, sigma_x1: f64) -> Result<SampledDensity> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("q = {q} outside [0, 1]")));
    }
    let slab = sample_slab(grid, sigma_x1)?;
    let mut mass: Vec<f64> = slab.mass.iter().map(|p| q * p).collect();
    mass[grid.center()] += 1.0 - q;
    SampledDensity::from_weights(*grid, mass)
}

/// Pointwise product of all factors, normalized to unit sum.
pub fn multiply_normalize(factors: &[&SampledDensity]) -> Result<SampledDensity> {
    let first = factors
        .first()
        .ok_or_else(|| invalid("multiply_normalize needs at least one factor"))?;
    let grid = first.grid;
    if factors.iter().any(|f| f.grid != grid) {
        return Err(Error::Dimension("factors live on different grids".into()));
    }
    let mut out = vec![0.0; grid.len()];
    product_normalize_into(factors.iter().map(|f| f.mass()), &mut out);
    Ok(SampledDensity::from_normalized(grid, out))
}

/// Writes the normalized product of `factors` into `out`. Returns `true`
/// when the log-domain fallback was needed.
pub(crate) fn product_normalize_into<'a, I>(factors: I, out: &mut [f64]) -> bool
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    out.fill(1.0);
    for f in factors.clone() {
        for (o, &p) in out.iter_mut().zip(f) {
            *o *= p;
        }
    }
    let sum: f64 = out.iter().sum();
    if sum >= UNDERFLOW_SUM && sum.is_finite() {
        for o in out.iter_mut() {
            *o /= sum;
        }
        return false;
    }
    out.fill(0.0);
    for f in factors {
        for (o, &p) in out.iter_mut().zip(f) {
            *o += if p > 0.0 { p.ln().max(LOG_FLOOR) } else { LOG_FLOOR };
        }
    }
    exp_normalize(out);
    true
}

/// In place: `w ← exp(w - max w)` then normalize.
fn exp_normalize(w: &mut [f64]) {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in w.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
}

/// Reflection `x → -x`: `mass'[m] = mass[(n_d - m) mod n_d]`. Cell 0 (the
/// value `-3σ_X1`, which has no mirror on the grid) maps to itself.
pub fn reverse(d: &SampledDensity) -> SampledDensity {
    let n = d.grid.len();
    let mass = (0..n).map(|m| d.mass[(n - m) % n]).collect();
    SampledDensity::from_normalized(d.grid, mass)
}

/// Centre-aligned circular convolution
/// `out[m] = Σ_k a[k]·b[(m - k + n_d/2) mod n_d]`, computed by FFT.
pub fn convolve_circular(a: &SampledDensity, b: &SampledDensity) -> Result<SampledDensity> {
    convolve_many(&[a, b])
}

/// Centre-aligned circular convolution of all inputs using one forward FFT
/// per input and a single inverse FFT.
pub fn convolve_many(ds: &[&SampledDensity]) -> Result<SampledDensity> {
    let first = ds.first().ok_or_else(|| invalid("convolve_many needs at least one density"))?;
    let grid = first.grid;
    if ds.iter().any(|d| d.grid != grid) {
        return Err(Error::Dimension("densities live on different grids".into()));
    }
    if ds.len() == 1 {
        return Ok((*first).clone());
    }
    let mut fft = Spectral::new(grid.len());
    let mut acc = fft.centered_spectrum(first.mass());
    for d in &ds[1..] {
        let s = fft.centered_spectrum(d.mass());
        for (a, b) in acc.iter_mut().zip(&s) {
            *a *= b;
        }
    }
    let mut out = vec![0.0; grid.len()];
    fft.density_from_spectrum(&mut acc, &mut out);
    Ok(SampledDensity::from_normalized(grid, out))
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// FFT workspace for one grid size. Spectra are of the *centred* sequence
/// `r[p] = mass[(p + n_d/2) mod n_d]`, so that plain circular convolution of
/// centred sequences realizes the centre-aligned convolution, and reversal
/// of a density is complex conjugation of its spectrum.
pub(crate) struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Spectral {
    pub(crate) fn new(n: usize) -> Self {
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Spectral {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub(crate) fn centered_spectrum(&mut self, mass: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.n];
        self.centered_spectrum_into(mass, &mut buf);
        buf
    }

    pub(crate) fn centered_spectrum_into(&mut self, mass: &[f64], buf: &mut [Complex64]) {
        let c = self.n / 2;
        for (p, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(mass[(p + c) % self.n], 0.0);
        }
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// Inverse transform of a centred spectrum (consumed as scratch), then
    /// un-centring, clamping at zero and normalizing into `out`.
    pub(crate) fn density_from_spectrum(&mut self, spec: &mut [Complex64], out: &mut [f64]) {
        self.inverse.process_with_scratch(spec, &mut self.scratch);
        let c = self.n / 2;
        let mut sum = 0.0;
        for (m, o) in out.iter_mut().enumerate() {
            let v = spec[(m + self.n - c) % self.n].re.max(0.0);
            *o = v;
            sum += v;
        }
        if sum > 0.0 && sum.is_finite() {
            for o in out.iter_mut() {
                *o /= sum;
            }
        } else {
            out.fill(1.0 / self.n as f64);
        }
    }
}
