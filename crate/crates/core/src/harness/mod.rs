//! End-to-end pipelines, metrics and Monte-Carlo SNR sweeps.

mod config;
pub mod selftest;

pub use config::{Algorithm, ExperimentConfig};

use std::io::Write;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bp::{self, BpOutput, NoiseKernel};
use crate::density::{sample_spike_slab_prior, DensityGrid, SampledDensity};
use crate::detector::{bht_detect, build_calibrated_references, build_references, map_detect, ReferencePair, StateVector};
use crate::error::{Error, Result};
use crate::estimator::{map_value_readout, mmse_on_support, oracle_mse_formula, RecoveryResult};
use crate::model::{generate_matrix, generate_signal, seeded_rng, sigma_for_snr, SensingMatrix, SparseSignal};

const STREAM_MATRIX: u64 = 0;
const STREAM_SIGNAL: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Fraction of positions whose support state differs.
pub fn ser(true_state: &StateVector, detected: &StateVector) -> f64 {
    assert_eq!(true_state.len(), detected.len(), "state vectors differ in length");
    if true_state.is_empty() {
        return 0.0;
    }
    true_state.hamming(detected) as f64 / true_state.len() as f64
}

/// `‖x̂ − x₀‖² / ‖x_{0,s}‖²`. With an all-zero `x₀` the denominator is
/// taken as 1, so an all-zero estimate scores 0.
pub fn nmse(x_hat: &[f64], x0: &[f64]) -> f64 {
    assert_eq!(x_hat.len(), x0.len(), "vectors differ in length");
    let err: f64 = x_hat.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
    let energy: f64 = x0.iter().map(|v| v * v).sum();
    if energy > 0.0 {
        err / energy
    } else {
        err
    }
}

/// One `(Φ, x₀, z)` draw together with the noise level that produced it.
#[derive(Debug, Clone)]
pub struct Instance {
    pub matrix: SensingMatrix,
    pub signal: SparseSignal,
    pub z: Vec<f64>,
    pub sigma_n: f64,
}

impl Instance {
    /// Trial `trial` of a sweep. `Φ`, `x₀` and the unit noise draw depend
    /// only on `seed + trial`, so every SNR point sees the same matrix and
    /// signal and only the noise scale changes.
    pub fn generate(cfg: &ExperimentConfig, snr_db: f64, trial: u64) -> Result<Self> {
        let seed = cfg.seed.wrapping_add(trial);
        let matrix = generate_matrix(cfg.m, cfg.model.n, cfg.column_weight, &mut seeded_rng(seed, STREAM_MATRIX))?;
        let signal = generate_signal(&cfg.model, &mut seeded_rng(seed, STREAM_SIGNAL));
        let sigma_n = sigma_for_snr(&matrix, &cfg.model, snr_db);
        if !sigma_n.is_finite() {
            return Err(Error::InvalidParameter(format!("no noise level for SNR {snr_db} dB")));
        }
        let mut z = matrix.mul_vec(&signal.values)?;
        let mut rng = seeded_rng(seed, STREAM_NOISE);
        for zj in &mut z {
            let e: f64 = StandardNormal.sample(&mut rng);
            *zj += sigma_n * e;
        }
        Ok(Instance { matrix, signal, z, sigma_n })
    }

    pub fn true_state(&self) -> StateVector {
        StateVector(self.signal.state.clone())
    }

    fn finish(&self, x_hat: Vec<f64>, s_hat: StateVector) -> RecoveryResult {
        RecoveryResult {
            ser: ser(&self.true_state(), &s_hat),
            nmse: nmse(&x_hat, &self.signal.values),
            x_hat,
            s_hat,
        }
    }
}

/// Everything about a decoder that does not depend on the instance.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub grid: DensityGrid,
    pub prior: SampledDensity,
    pub references: ReferencePair,
    pub q: f64,
    pub sigma_x1: f64,
    pub iterations: usize,
}

impl Decoder {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let m = &cfg.model;
        let grid = DensityGrid::new(cfg.n_d, m.sigma_x1)?;
        let prior = sample_spike_slab_prior(&grid, m.q, m.sigma_x1)?;
        let references = if cfg.calibrate {
            build_calibrated_references(&grid, m.q, m.sigma_x1, cfg.calibration_x_min(), cfg.calibration_c)?
        } else {
            build_references(&grid, m.q, m.sigma_x1)?
        };
        Ok(Decoder {
            grid,
            prior,
            references,
            q: m.q,
            sigma_x1: m.sigma_x1,
            iterations: cfg.iterations,
        })
    }

    /// Runs BP with the noise-aware or the blind measurement kernel.
    pub fn marginals(&self, inst: &Instance, noise_aware: bool, trace_var: Option<usize>) -> Result<BpOutput> {
        let kernel = if noise_aware {
            NoiseKernel::aware(&self.grid, inst.sigma_n)
        } else {
            NoiseKernel::blind(&self.grid)
        };
        let out = bp::run(inst.matrix.graph(), &inst.z, &self.prior, kernel, self.iterations, trace_var)?;
        for d in &out.marginals {
            if d.mass().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numerical("non-finite marginal".into()));
            }
        }
        Ok(out)
    }

    /// Hypothesis-test detection on given marginals, then MMSE on the support.
    pub fn bht_from_marginals(&self, inst: &Instance, marginals: &[SampledDensity]) -> Result<RecoveryResult> {
        let s_hat = bht_detect(marginals, &self.references, self.q);
        let x_hat = mmse_on_support(&inst.matrix, &s_hat, &inst.z, self.sigma_x1, inst.sigma_n)?;
        Ok(inst.finish(x_hat, s_hat))
    }

    /// MAP detection on given marginals with the grid peak as value.
    pub fn csbp_from_marginals(&self, inst: &Instance, marginals: &[SampledDensity]) -> RecoveryResult {
        let s_hat = map_detect(marginals);
        inst.finish(map_value_readout(marginals), s_hat)
    }

    /// MAP detection on given marginals, then MMSE on the detected support.
    pub fn map_dd_from_marginals(&self, inst: &Instance, marginals: &[SampledDensity]) -> Result<RecoveryResult> {
        let s_hat = map_detect(marginals);
        let x_hat = mmse_on_support(&inst.matrix, &s_hat, &inst.z, self.sigma_x1, inst.sigma_n)?;
        Ok(inst.finish(x_hat, s_hat))
    }

    pub fn recover_bht_bp(&self, inst: &Instance) -> Result<RecoveryResult> {
        let out = self.marginals(inst, true, None)?;
        self.bht_from_marginals(inst, &out.marginals)
    }

    pub fn recover_csbp(&self, inst: &Instance, noise_aware: bool) -> Result<RecoveryResult> {
        let out = self.marginals(inst, noise_aware, None)?;
        Ok(self.csbp_from_marginals(inst, &out.marginals))
    }

    pub fn recover_oracle(&self, inst: &Instance) -> Result<RecoveryResult> {
        let s = inst.true_state();
        let x_hat = mmse_on_support(&inst.matrix, &s, &inst.z, self.sigma_x1, inst.sigma_n)?;
        Ok(inst.finish(x_hat, s))
    }

    /// Expected oracle NMSE for this instance; 0 when the support is empty.
    pub fn oracle_bound(&self, inst: &Instance) -> Result<f64> {
        if inst.signal.sparsity() == 0 {
            return Ok(0.0);
        }
        oracle_mse_formula(&inst.matrix, &inst.true_state(), self.sigma_x1, inst.sigma_n, &inst.signal.values)
    }

    /// Runs a single algorithm on an instance.
    pub fn recover(&self, algo: Algorithm, inst: &Instance) -> Result<RecoveryResult> {
        match algo {
            Algorithm::BhtBp => self.recover_bht_bp(inst),
            Algorithm::CsBp => self.recover_csbp(inst, false),
            Algorithm::CsBpNs => self.recover_csbp(inst, true),
            Algorithm::MapDd => {
                let out = self.marginals(inst, true, None)?;
                self.map_dd_from_marginals(inst, &out.marginals)
            }
            Algorithm::Oracle => self.recover_oracle(inst),
            Algorithm::OracleBound => {
                let nmse = self.oracle_bound(inst)?;
                let s = inst.true_state();
                Ok(RecoveryResult {
                    x_hat: inst.signal.values.clone(),
                    s_hat: s,
                    ser: 0.0,
                    nmse,
                })
            }
        }
    }
}

/// Per-algorithm metrics of one trial; `None` marks a failed recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub ser: f64,
    pub nmse: f64,
    pub seconds: f64,
}

/// Runs every algorithm of `algos` on one instance, sharing the BP runs.
pub fn run_trial(decoder: &Decoder, algos: &[Algorithm], inst: &Instance) -> Vec<Option<TrialMetrics>> {
    let timed = |f: &dyn Fn() -> Result<BpOutput>| {
        let t = Instant::now();
        (f(), t.elapsed().as_secs_f64())
    };
    let aware = algos
        .iter()
        .any(Algorithm::uses_aware_bp)
        .then(|| timed(&|| decoder.marginals(inst, true, None)));
    let blind = algos
        .iter()
        .any(Algorithm::uses_blind_bp)
        .then(|| timed(&|| decoder.marginals(inst, false, None)));

    algos
        .iter()
        .map(|&algo| {
            let t = Instant::now();
            let (result, bp_seconds) = match algo {
                Algorithm::BhtBp | Algorithm::CsBpNs | Algorithm::MapDd | Algorithm::CsBp => {
                    let (bp, secs) = if algo.uses_blind_bp() { &blind } else { &aware }.as_ref().expect("BP run scheduled");
                    let r = match bp {
                        Err(_) => None,
                        Ok(out) => match algo {
                            Algorithm::BhtBp => decoder.bht_from_marginals(inst, &out.marginals).ok(),
                            Algorithm::MapDd => decoder.map_dd_from_marginals(inst, &out.marginals).ok(),
                            _ => Some(decoder.csbp_from_marginals(inst, &out.marginals)),
                        },
                    };
                    (r, *secs)
                }
                _ => (decoder.recover(algo, inst).ok(), 0.0),
            };
            let seconds = t.elapsed().as_secs_f64() + bp_seconds;
            result
                .filter(|r| r.ser.is_finite() && r.nmse.is_finite())
                .map(|r| TrialMetrics { ser: r.ser, nmse: r.nmse, seconds })
        })
        .collect()
}

/// Aggregated metrics of one `(algorithm, SNR)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub algo: Algorithm,
    pub snr_db: f64,
    /// Trials that produced a result.
    pub trials: usize,
    /// Trials excluded after a numerical failure.
    pub failed: usize,
    pub ser_mean: f64,
    pub nmse_mean: f64,
    pub runtime_s: f64,
}

/// Per-trial metrics of a sweep, indexed `[snr][trial][algorithm]`.
pub type TrialTable = Vec<Vec<Vec<Option<TrialMetrics>>>>;

/// Runs every trial of the sweep and returns the raw per-trial metrics.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<TrialTable> {
    cfg.validate()?;
    let decoder = Decoder::new(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        cfg.snr_points
            .iter()
            .map(|&snr| {
                (0..cfg.trials as u64)
                    .into_par_iter()
                    .map(|t| {
                        let inst = Instance::generate(cfg, snr, t)?;
                        Ok(run_trial(&decoder, &cfg.algorithms, &inst))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect()
    })
}

/// Ordered mean over the successful trials of each `(algorithm, SNR)` cell.
pub fn aggregate(cfg: &ExperimentConfig, table: &TrialTable) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for (&snr, trials) in cfg.snr_points.iter().zip(table) {
        for (a, &algo) in cfg.algorithms.iter().enumerate() {
            let ok: Vec<TrialMetrics> = trials.iter().filter_map(|t| t[a]).collect();
            let mean = |f: fn(&TrialMetrics) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(f).sum::<f64>() / ok.len() as f64
                }
            };
            rows.push(MetricsRow {
                algo,
                snr_db: snr,
                trials: ok.len(),
                failed: trials.len() - ok.len(),
                ser_mean: mean(|t| t.ser),
                nmse_mean: mean(|t| t.nmse),
                runtime_s: if cfg.timing { ok.iter().map(|t| t.seconds).sum() } else { 0.0 },
            });
        }
    }
    rows
}

/// Full sweep. Fails with [`Error::Numerical`] when a cell has no
/// successful trial at all.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let rows = aggregate(cfg, &run_trials(cfg)?);
    if let Some(r) = rows.iter().find(|r| r.trials == 0) {
        return Err(Error::Numerical(format!("every trial of {} at {} dB failed", r.algo, r.snr_db)));
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "algo,snr_db,trials,ser_mean,nmse_mean,runtime_s";

pub fn write_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    out.write_all(CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.algo, r.snr_db, r.trials, r.ser_mean, r.nmse_mean, r.runtime_s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SignalModel;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.model = SignalModel::gaussian(64, 0.05, 5.0, 1.25);
        cfg.m = 32;
        cfg.n_d = 128;
        cfg.trials = 3;
        cfg.snr_points = vec![20.0, 40.0];
        cfg.algorithms = Algorithm::ALL.to_vec();
        cfg
    }

    #[test]
    fn ser_examples() {
        let a = StateVector(vec![true, false, true, false]);
        assert_eq!(ser(&a, &a), 0.0);
        let c = StateVector(a.0.iter().map(|b| !b).collect());
        assert_eq!(ser(&a, &c), 1.0);
        let mut x = vec![false; 1024];
        let y = StateVector(x.clone());
        x[17] = true;
        assert_eq!(ser(&y, &StateVector(x)), 1.0 / 1024.0);
    }

    #[test]
    fn nmse_examples() {
        let x0 = [0.0, 3.0, -4.0, 0.0];
        assert_eq!(nmse(&x0, &x0), 0.0);
        assert_eq!(nmse(&[0.0; 4], &x0), 1.0);
        let e = 0.3;
        assert!((nmse(&[0.0, 1.0 + e, 0.0], &[0.0, 1.0, 0.0]) - e * e).abs() < 1e-15);
        assert_eq!(nmse(&[0.0; 3], &[0.0; 3]), 0.0);
        assert_eq!(nmse(&[0.0, 2.0, 0.0], &[0.0; 3]), 4.0);
    }

    #[test]
    fn instances_share_matrix_and_signal_across_snr() {
        let cfg = small_config();
        let a = Instance::generate(&cfg, 10.0, 2).unwrap();
        let b = Instance::generate(&cfg, 30.0, 2).unwrap();
        let c = Instance::generate(&cfg, 10.0, 3).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.signal, b.signal);
        assert!(a.sigma_n > b.sigma_n);
        let ya = a.matrix.mul_vec(&a.signal.values).unwrap();
        let ratio = (a.z[0] - ya[0]) / (b.z[0] - ya[0]);
        assert!((ratio - a.sigma_n / b.sigma_n).abs() < 1e-9);
        assert_ne!(a.signal, c.signal);
        let again = Instance::generate(&cfg, 10.0, 2).unwrap();
        assert_eq!(a.z, again.z);
    }

    #[test]
    fn high_snr_recovers_support() {
        let mut cfg = small_config();
        cfg.model.n = 32;
        cfg.m = 24;
        cfg.n_d = 256;
        let dec = Decoder::new(&cfg).unwrap();
        let mut exact = 0;
        for t in 0..5 {
            let inst = Instance::generate(&cfg, 60.0, t).unwrap();
            let r = dec.recover_bht_bp(&inst).unwrap();
            if r.s_hat == inst.true_state() {
                exact += 1;
                assert!(r.nmse < 1e-6, "nmse {}", r.nmse);
            }
        }
        assert!(exact >= 4, "{exact}/5 exact supports");
    }

    #[test]
    fn empty_support_gives_zero_output() {
        let mut cfg = small_config();
        cfg.model.q = 1e-9;
        let dec = Decoder::new(&cfg).unwrap();
        let inst = Instance::generate(&cfg, 20.0, 0).unwrap();
        assert_eq!(inst.signal.sparsity(), 0);
        let r = dec.recover_bht_bp(&inst).unwrap();
        assert_eq!(r.ser, 0.0);
        assert_eq!(r.nmse, 0.0);
        assert!(r.x_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_trial_matches_individual_runs() {
        let cfg = small_config();
        let dec = Decoder::new(&cfg).unwrap();
        let inst = Instance::generate(&cfg, 20.0, 1).unwrap();
        let shared = run_trial(&dec, &cfg.algorithms, &inst);
        for (algo, m) in cfg.algorithms.iter().zip(shared) {
            let r = dec.recover(*algo, &inst).unwrap();
            let m = m.unwrap();
            assert_eq!((m.ser, m.nmse), (r.ser, r.nmse), "{algo}");
        }
    }

    #[test]
    fn one_row_per_cell_and_exact_means() {
        let mut cfg = small_config();
        cfg.trials = 1;
        cfg.snr_points = vec![25.0];
        cfg.algorithms = vec![Algorithm::BhtBp];
        assert_eq!(run_sweep(&cfg).unwrap().len(), 1);

        let cfg = small_config();
        let table = run_trials(&cfg).unwrap();
        let rows = aggregate(&cfg, &table);
        assert_eq!(rows.len(), cfg.snr_points.len() * cfg.algorithms.len());
        for r in &rows {
            assert!(r.ser_mean >= 0.0 && r.nmse_mean >= 0.0);
            assert_eq!(r.trials + r.failed, cfg.trials);
        }
        let s = cfg.snr_points.iter().position(|&v| v == rows[0].snr_db).unwrap();
        let direct: Vec<f64> = table[s].iter().map(|t| t[0].unwrap().nmse).collect();
        let mean = direct.iter().sum::<f64>() / direct.len() as f64;
        assert!((rows[0].nmse_mean - mean).abs() <= 1e-12 * mean.max(1.0));
    }

    #[test]
    fn csv_is_deterministic() {
        let cfg = small_config();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&run_sweep(&cfg).unwrap(), &mut a).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.workers = 2;
        write_csv(&run_sweep(&cfg2).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("algo,snr_db,trials,ser_mean,nmse_mean,runtime_s\n"));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 1 + 2 * Algorithm::ALL.len());
    }
}
