//! Support detection from sampled marginal posteriors.
//!
//! The hypothesis test compares, per element, the inner products of the
//! marginal with two reference functions `r1 = f(x|S=1)/f(x)` and
//! `r0 = f(x|S=0)/f(x)` against the prior odds `(1-q)/q`. The calibrated
//! variant replaces the point mass at zero in `f(x|S=0)` by a narrow
//! Gaussian of standard deviation `c·x_min`, so posterior mass below the
//! minimum on-support magnitude counts toward the zero hypothesis.

use std::io::Write;

use crate::density::{sample_gaussian, sample_slab, DensityGrid, SampledDensity};
use crate::error::{invalid, Result};

/// Default calibration constant `c`.
pub const DEFAULT_CALIBRATION: f64 = 1.0 / 6.0;

/// Detected (or true) support indicator.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateVector(pub Vec<bool>);

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        StateVector(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&s| s).count()
    }

    pub fn hamming(&self, other: &StateVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl From<Vec<bool>> for StateVector {
    fn from(bits: Vec<bool>) -> Self {
        StateVector(bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair {
    grid: DensityGrid,
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
}

impl ReferencePair {
    fn from_components(q: f64, slab: &SampledDensity, spike: &SampledDensity) -> Self {
        let (r0, r1) = slab
            .mass()
            .iter()
            .zip(spike.mass())
            .map(|(&s1, &s0)| {
                let mix = q * s1 + (1.0 - q) * s0;
                (s0 / mix, s1 / mix)
            })
            .unzip();
        ReferencePair {
            grid: *slab.grid(),
            r0,
            r1,
        }
    }

    pub fn grid(&self) -> &DensityGrid {
        &self.grid
    }

    /// Inner products `(Σ r1·f, Σ r0·f)` with a marginal.
    pub fn inner_products(&self, marginal: &SampledDensity) -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&p, &a1), &a0) in marginal.mass().iter().zip(&self.r1).zip(&self.r0) {
            num += a1 * p;
            den += a0 * p;
        }
        (num, den)
    }

    /// `value,r0,r1` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "value,r0,r1")?;
        for (m, (a0, a1)) in self.r0.iter().zip(&self.r1).enumerate() {
            writeln!(out, "{},{a0},{a1}", self.grid.value(m))?;
        }
        Ok(())
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("reference functions need 0 < q < 1, got {q}")));
    }
    Ok(())
}

/// References for the spike-and-slab prior: `S=0` is the unit mass at zero.
pub fn build_references(grid: &DensityGrid, q: f64, sigma_x1: f64) -> Result<ReferencePair> {
    check_q(q)?;
    let slab = sample_slab(grid, sigma_x1)?;
    let spike = SampledDensity::delta(*grid, grid.center());
    Ok(ReferencePair::from_components(q, &slab, &spike))
}

/// References with `f(x|S=0; x_min) = N(x; 0, (c·x_min)²)` and the prior
/// re-mixed accordingly.
pub fn build_calibrated_references(
    grid: &DensityGrid,
    q: f64,
    sigma_x1: f64,
    x_min: f64,
    c: f64,
) -> Result<ReferencePair> {
    check_q(q)?;
    if !(x_min > 0.0 && c > 0.0) {
        return Err(invalid(format!("calibration needs x_min > 0 and c > 0, got {x_min}, {c}")));
    }
    let slab = sample_slab(grid, sigma_x1)?;
    let width = c * x_min;
    let spike = sample_gaussian(grid, 0.0, width * width)?;
    Ok(ReferencePair::from_components(q, &slab, &spike))
}

/// Per-element outcome of the hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BhtDecision {
    Support,
    Zero,
    /// Both inner products vanished; reported as off-support.
    Degenerate,
}

/// Decision for one marginal: on-support iff `Σ r1 f / Σ r0 f > (1-q)/q`.
pub fn bht_decide(marginal: &SampledDensity, refs: &ReferencePair, q: f64) -> BhtDecision {
    let (num, den) = refs.inner_products(marginal);
    if den == 0.0 {
        return if num > 0.0 {
            BhtDecision::Support
        } else {
            BhtDecision::Degenerate
        };
    }
    if num / den > (1.0 - q) / q {
        BhtDecision::Support
    } else {
        BhtDecision::Zero
    }
}

/// Hypothesis-test detector over all marginals. Ties at the threshold go to
/// the zero hypothesis.
pub fn bht_detect(marginals: &[SampledDensity], refs: &ReferencePair, q: f64) -> StateVector {
    marginals
        .iter()
        .map(|m| bht_decide(m, refs, q) == BhtDecision::Support)
        .collect::<Vec<_>>()
        .into()
}

/// Peak-location detector: on-support iff the marginal's mode is not the
/// zero cell (ties resolve toward zero).
pub fn map_detect(marginals: &[SampledDensity]) -> StateVector {
    marginals
        .iter()
        .map(|m| m.argmax() != m.grid().center())
        .collect::<Vec<_>>()
        .into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{sample_gaussian, sample_spike_slab_prior};
    use proptest::prelude::*;

    fn grid() -> DensityGrid {
        DensityGrid::new(256, 5.0).unwrap()
    }

    #[test]
    fn plain_references_shape() {
        let g = grid();
        let r = build_references(&g, 0.05, 5.0).unwrap();
        let c = g.center();
        assert!(r.r0[c] > 0.0);
        assert!(r.r0.iter().enumerate().all(|(m, &v)| m == c || v == 0.0));
        assert!(r.r1.iter().enumerate().all(|(m, &v)| m == c || v > r.r1[c]));
        for (a0, a1) in r.r0.iter().zip(&r.r1) {
            assert!(a0.is_finite() && a1.is_finite() && *a0 >= 0.0 && *a1 >= 0.0);
            assert!((0.05 * a1 + 0.95 * a0 - 1.0).abs() < 1e-12);
        }
        assert!(build_references(&g, 0.0, 5.0).is_err());
        assert!(build_references(&g, 1.0, 5.0).is_err());
    }

    #[test]
    fn calibration_moves_weight_to_r0_below_x_min() {
        let g = grid();
        let plain = build_references(&g, 0.05, 5.0).unwrap();
        let cal = build_calibrated_references(&g, 0.05, 5.0, 1.25, DEFAULT_CALIBRATION).unwrap();
        for m in 0..g.len() {
            let x = g.value(m).abs();
            if x < 1.25 {
                assert!(cal.r0[m] > plain.r0[m] || (x == 0.0 && cal.r0[m] >= 0.0));
                if x > 0.0 {
                    assert!(cal.r0[m] > plain.r0[m]);
                    assert!(cal.r1[m] < plain.r1[m]);
                }
            }
            assert!((0.05 * cal.r1[m] + 0.95 * cal.r0[m] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_converges_to_plain_references() {
        let g = grid();
        let plain = build_references(&g, 0.05, 5.0).unwrap();
        let cal = build_calibrated_references(&g, 0.05, 5.0, 1e-4, 1e-3).unwrap();
        for m in 0..g.len() {
            assert!((cal.r0[m] - plain.r0[m]).abs() < 1e-12);
            assert!((cal.r1[m] - plain.r1[m]).abs() / plain.r1[m] < 1e-12);
        }
    }

    #[test]
    fn prior_as_marginal_is_rejected() {
        // Σ r1·f_X = 1 and Σ r0·f_X = 1, so the test value is 1 against 19
        let g = grid();
        let prior = sample_spike_slab_prior(&g, 0.05, 5.0).unwrap();
        let refs = build_references(&g, 0.05, 5.0).unwrap();
        let (num, den) = refs.inner_products(&prior);
        assert!((num - 1.0).abs() < 1e-12 && (den - 1.0).abs() < 1e-12);
        assert_eq!(bht_detect(&[prior.clone()], &refs, 0.05), StateVector(vec![false]));
        assert_eq!(map_detect(&[prior]), StateVector(vec![false]));
    }

    #[test]
    fn zero_evidence_gives_zero_state() {
        let g = grid();
        let refs = build_references(&g, 0.05, 5.0).unwrap();
        let delta = SampledDensity::delta(g, g.center());
        assert_eq!(bht_decide(&delta, &refs, 0.05), BhtDecision::Zero);
    }

    #[test]
    fn degenerate_denominator() {
        let g = grid();
        let refs = build_references(&g, 0.05, 5.0).unwrap();
        let off = SampledDensity::delta_at(g, 4.0);
        assert_eq!(bht_decide(&off, &refs, 0.05), BhtDecision::Support);
        let zero_refs = ReferencePair {
            grid: g,
            r0: vec![0.0; 256],
            r1: vec![0.0; 256],
        };
        assert_eq!(bht_decide(&off, &zero_refs, 0.05), BhtDecision::Degenerate);
    }

    #[test]
    fn spread_slab_caught_by_bht_but_not_map() {
        // zero spike taller than any single slab cell, yet most mass on the slab
        let g = grid();
        let slab = sample_gaussian(&g, 6.7, 4.0).unwrap();
        let mut w: Vec<f64> = slab.mass().iter().map(|p| 0.6 * p).collect();
        w[g.center()] += 0.4;
        let marginal = SampledDensity::from_weights(g, w).unwrap();
        let refs = build_calibrated_references(&g, 0.05, 5.0, 1.25, DEFAULT_CALIBRATION).unwrap();
        assert_eq!(map_detect(&[marginal.clone()]), StateVector(vec![false]));
        assert_eq!(bht_detect(&[marginal], &refs, 0.05), StateVector(vec![true]));
    }

    #[test]
    fn map_flags_quantization_offset() {
        let g = grid();
        let m = sample_gaussian(&g, 0.25, 1e-4).unwrap();
        assert_eq!(map_detect(&[m]), StateVector(vec![true]));
        let on = SampledDensity::delta_at(g, 6.7);
        assert_eq!(map_detect(&[on]), StateVector(vec![true]));
    }

    #[test]
    fn calibrated_bht_rejects_small_offsets() {
        // With a zero-hypothesis width of x_min/6 the decision boundary for a
        // point mass sits near 0.73 at these parameters, so offsets up to
        // half of x_min are always assigned to the zero hypothesis.
        let g = grid();
        let refs = build_calibrated_references(&g, 0.05, 5.0, 1.25, DEFAULT_CALIBRATION).unwrap();
        for m in 0..g.len() {
            let x = g.value(m).abs();
            if x > 0.0 && x < 0.625 {
                let d = SampledDensity::delta(g, m);
                assert_eq!(bht_decide(&d, &refs, 0.05), BhtDecision::Zero, "x = {x}");
            }
            if x >= 1.25 {
                let d = SampledDensity::delta(g, m);
                assert_eq!(bht_decide(&d, &refs, 0.05), BhtDecision::Support, "x = {x}");
            }
        }
        // the uncalibrated test accepts any nonzero point mass
        let plain = build_references(&g, 0.05, 5.0).unwrap();
        let d = SampledDensity::delta(g, g.center() + 1);
        assert_eq!(bht_decide(&d, &plain, 0.05), BhtDecision::Support);
    }

    #[test]
    fn csv_export_has_header() {
        let g = DensityGrid::new(4, 1.0).unwrap();
        let refs = build_references(&g, 0.5, 1.0).unwrap();
        let mut buf = Vec::new();
        refs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("value,r0,r1\n"));
        assert_eq!(text.lines().count(), 5);
    }

    fn arb_marginal() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 64).prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn threshold_monotone_in_q(w in arb_marginal(), q1 in 0.01f64..0.49, dq in 0.0f64..0.3) {
            let g = DensityGrid::new(64, 2.0).unwrap();
            let m = SampledDensity::from_weights(g, w).unwrap();
            let refs = build_references(&g, 0.2, 2.0).unwrap();
            let lo = bht_detect(&[m.clone()], &refs, q1);
            let hi = bht_detect(&[m], &refs, q1 + dq);
            prop_assert!(!lo.0[0] || hi.0[0]);
        }

        #[test]
        fn detectors_ignore_positive_scaling(w in arb_marginal(), scale in 1e-3f64..1e3) {
            let g = DensityGrid::new(64, 2.0).unwrap();
            let a = SampledDensity::from_weights(g, w.clone()).unwrap();
            let b = SampledDensity::from_weights(g, w.iter().map(|x| x * scale).collect()).unwrap();
            let refs = build_calibrated_references(&g, 0.1, 2.0, 0.5, DEFAULT_CALIBRATION).unwrap();
            prop_assert_eq!(map_detect(&[a.clone()]), map_detect(&[b.clone()]));
            // guard against ratios within roundoff of the threshold
            let (n, d) = refs.inner_products(&a);
            prop_assume!(((n / d) / 9.0 - 1.0).abs() > 1e-9);
            prop_assert_eq!(bht_detect(&[a], &refs, 0.1), bht_detect(&[b], &refs, 0.1));
        }
    }
}
