//! Experiment configuration: a flat `key = value` text file.
//!
//! `preset` (if present) is applied first; every other key overrides it.
//! Blank lines and `#` comments are ignored.

use std::path::PathBuf;
use std::str::FromStr;

use crate::bp::DEFAULT_ITERATIONS;
use crate::detector::DEFAULT_CALIBRATION;
use crate::error::{Error, Result};
use crate::model::{SignalKind, SignalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Noise-aware BP, hypothesis-test detection, MMSE on the support.
    BhtBp,
    /// Noise-blind BP, MAP detection, grid readout of the values.
    CsBp,
    /// Noise-aware BP, MAP detection, grid readout of the values.
    CsBpNs,
    /// Noise-aware BP, MAP detection, MMSE on the detected support.
    MapDd,
    /// MMSE with the true support (empirical error).
    Oracle,
    /// Trace-formula error of the oracle estimator.
    OracleBound,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::BhtBp,
        Algorithm::CsBp,
        Algorithm::CsBpNs,
        Algorithm::MapDd,
        Algorithm::Oracle,
        Algorithm::OracleBound,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::BhtBp => "bht-bp",
            Algorithm::CsBp => "cs-bp",
            Algorithm::CsBpNs => "cs-bp-ns",
            Algorithm::MapDd => "map-dd",
            Algorithm::Oracle => "oracle",
            Algorithm::OracleBound => "oracle-bound",
        }
    }

    pub fn uses_aware_bp(&self) -> bool {
        matches!(self, Algorithm::BhtBp | Algorithm::CsBpNs | Algorithm::MapDd)
    }

    pub fn uses_blind_bp(&self) -> bool {
        matches!(self, Algorithm::CsBp)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm `{s}`")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: SignalModel,
    pub m: usize,
    pub column_weight: usize,
    pub n_d: usize,
    pub iterations: usize,
    /// Use `N(0, (c·x_min)²)` for the zero hypothesis of the detector.
    pub calibrate: bool,
    pub calibration_c: f64,
    /// `x_min` used to calibrate signed signals; defaults to `σ_X1`.
    pub signed_x_min: Option<f64>,
    pub algorithms: Vec<Algorithm>,
    pub snr_points: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
    /// Record wall-clock runtimes in the CSV. Off by default so that output
    /// is a pure function of the config.
    pub timing: bool,
}

impl ExperimentConfig {
    /// `N=512, M=256, L=4, q=0.05, σ_X1=5, x_min=1.25, n_d=256, 100 trials`.
    pub fn desk() -> Self {
        ExperimentConfig {
            model: SignalModel::gaussian(512, 0.05, 5.0, 1.25),
            m: 256,
            column_weight: 4,
            n_d: 256,
            iterations: DEFAULT_ITERATIONS,
            calibrate: true,
            calibration_c: DEFAULT_CALIBRATION,
            signed_x_min: None,
            algorithms: vec![Algorithm::BhtBp, Algorithm::CsBp, Algorithm::CsBpNs, Algorithm::Oracle],
            snr_points: (2..=10).map(|k| 5.0 * k as f64).collect(),
            trials: 100,
            seed: 1,
            output: None,
            workers: 0,
            timing: false,
        }
    }

    /// Desk preset at `N=1024, M=512` with 200 trials.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.model.n = 1024;
        cfg.m = 512;
        cfg.trials = 200;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.trim() {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidParameter(format!("unknown preset `{other}`"))),
        }
    }

    /// Switches the signal kind, resetting the magnitude window to the
    /// kind's defaults.
    pub fn with_kind(mut self, kind: SignalKind) -> Self {
        let SignalModel { n, q, sigma_x1, .. } = self.model;
        self.model = match kind {
            SignalKind::Gaussian => SignalModel::gaussian(n, q, sigma_x1, sigma_x1 / 4.0),
            SignalKind::Signed => SignalModel::signed(n, q, sigma_x1),
        };
        self
    }

    /// `x_min` fed to the calibrated references.
    pub fn calibration_x_min(&self) -> f64 {
        match self.model.kind {
            SignalKind::Gaussian => self.model.x_min,
            SignalKind::Signed => self.signed_x_min.unwrap_or(self.model.sigma_x1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_d < 2 || !self.n_d.is_power_of_two() {
            return bad(format!("n_d = {} must be a power of two", self.n_d));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_points.is_empty() {
            return bad("snr_db needs at least one point".into());
        }
        if self.snr_points.iter().any(|s| s.is_nan()) {
            return bad("snr_db points must be numbers".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.column_weight == 0 || self.column_weight > self.m {
            return bad(format!("column weight {} must lie in 1..={}", self.column_weight, self.m));
        }
        if !(self.model.q > 0.0 && self.model.q < 1.0) {
            return bad(format!("detection needs 0 < q < 1, got {}", self.model.q));
        }
        if self.calibrate && !(self.calibration_c > 0.0 && self.calibration_x_min() > 0.0) {
            return bad("calibration needs c > 0 and x_min > 0".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: k + 1,
                    msg: format!("expected `key = value`, found `{line}`"),
                });
            };
            entries.push((k + 1, key.trim().to_ascii_lowercase(), value.trim().to_string()));
        }
        let mut cfg = match entries.iter().find(|(_, k, _)| k == "preset") {
            Some((line, _, v)) => Self::preset(v).map_err(|e| Error::Config { line: *line, msg: e.to_string() })?,
            None => Self::desk(),
        };
        // the kind goes first so later magnitude keys are not reset by it
        if let Some((line, _, v)) = entries.iter().find(|(_, k, _)| k == "kind") {
            let kind = v.parse().map_err(|e: Error| Error::Config { line: *line, msg: e.to_string() })?;
            cfg = cfg.with_kind(kind);
        }
        for (line, key, value) in &entries {
            cfg.apply(key, value).map_err(|msg| Error::Config { line: *line, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("{key}: `{v}`: {e}"))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String>
        where
            T::Err: std::fmt::Display,
        {
            v.split(',').map(|t| num(key, t.trim())).collect()
        }
        match key {
            "preset" | "kind" => {}
            "n" => self.model.n = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "l" | "column_weight" => self.column_weight = num(key, value)?,
            "q" => self.model.q = num(key, value)?,
            "sigma_x1" => self.model.sigma_x1 = num(key, value)?,
            "x_min" => self.model.x_min = num(key, value)?,
            "x_max" => self.model.x_max = num(key, value)?,
            "n_d" => self.n_d = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "calibrate" => self.calibrate = num(key, value)?,
            "calibration_c" | "c" => self.calibration_c = num(key, value)?,
            "signed_x_min" => self.signed_x_min = Some(num(key, value)?),
            "algorithms" => {
                self.algorithms = value
                    .split(',')
                    .map(|t| t.parse::<Algorithm>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "snr_db" => self.snr_points = list(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "workers" => self.workers = num(key, value)?,
            "timing" => self.timing = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let d = ExperimentConfig::desk();
        assert_eq!((d.model.n, d.m, d.column_weight, d.n_d, d.iterations, d.trials), (512, 256, 4, 256, 10, 100));
        assert_eq!(d.model.x_min, 1.25);
        assert_eq!(d.model.x_max, 15.0);
        let p = ExperimentConfig::paper();
        assert_eq!((p.model.n, p.m, p.trials), (1024, 512, 200));
        d.validate().unwrap();
        p.validate().unwrap();
    }

    #[test]
    fn parse_overrides_preset() {
        let text = "# sweep\ntrials = 3\npreset = paper\nsnr_db = 10, 20.5\nalgorithms = bht-bp,cs-bp-ns\nkind = signed\noutput = out.csv\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.model.n, 1024);
        assert_eq!(cfg.snr_points, vec![10.0, 20.5]);
        assert_eq!(cfg.algorithms, vec![Algorithm::BhtBp, Algorithm::CsBpNs]);
        assert_eq!(cfg.model.kind, SignalKind::Signed);
        assert_eq!(cfg.model.x_min, 5.0);
        assert_eq!(cfg.calibration_x_min(), 5.0);
        assert_eq!(cfg.output, Some(PathBuf::from("out.csv")));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match ExperimentConfig::parse("trials = 2\nbogus = 1\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("n_d = abc") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        assert!(ExperimentConfig::parse("n_d = 100").is_err());
        assert!(ExperimentConfig::parse("trials = 0").is_err());
        assert!(ExperimentConfig::parse("algorithms = foo").is_err());
    }

    #[test]
    fn algorithm_ids_roundtrip() {
        for a in Algorithm::ALL {
            assert_eq!(a.id().parse::<Algorithm>().unwrap(), a);
        }
    }
}
