//! Sampled-density belief propagation on the sensing graph.
//!
//! Flooding schedule: every iteration first recomputes all signal messages
//! `a_{i→j}` from the previous measurement messages, then all measurement
//! messages `b_{j→i}` from the fresh signal messages. After the last
//! iteration each variable's marginal is the normalized product of the prior
//! and all of its incoming measurement messages.

use std::io::Write;

use num_complex::Complex64;

use crate::density::{product_normalize_into, sample_gaussian_wrapped, DensityGrid, SampledDensity, Spectral};
use crate::error::{invalid, Error, Result};
use crate::model::BipartiteGraph;

/// Default number of flooding iterations.
pub const DEFAULT_ITERATIONS: usize = 10;

/// Gaussian kernel placed at each measurement value inside `b_{j→i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseKernel {
    variance: f64,
}

impl NoiseKernel {
    /// Uses the noise statistic `N(0, σ_N²)`, with the variance floored at
    /// `t_s²/12`, the rounding noise of one grid cell. Without the floor a
    /// kernel much narrower than a cell cannot absorb the rounding of the
    /// neighbour sums and the messages contradict each other.
    pub fn aware(grid: &DensityGrid, sigma_n: f64) -> Self {
        let floor = grid.step() * grid.step() / 12.0;
        NoiseKernel {
            variance: (sigma_n * sigma_n).max(floor),
        }
    }

    /// Noise-blind surrogate: a one-cell blur of variance `(t_s/2)²`.
    pub fn blind(grid: &DensityGrid) -> Self {
        NoiseKernel {
            variance: (grid.step() / 2.0).powi(2),
        }
    }

    /// Kernel of an explicit variance.
    pub fn with_variance(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(invalid(format!("kernel variance = {variance} must be positive")));
        }
        Ok(NoiseKernel { variance })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BpDiagnostics {
    /// Measurement values outside the grid, wrapped onto it.
    pub wrapped_means: usize,
    /// Products that needed the log-domain fallback.
    pub underflow_fallbacks: usize,
}

/// All edge messages of one decoding run. Messages are indexed by edge id
/// (see [`BipartiteGraph::edge`]).
#[derive(Debug, Clone)]
pub struct BpState {
    grid: DensityGrid,
    signal_messages: Vec<SampledDensity>,
    measurement_messages: Vec<SampledDensity>,
    iteration: usize,
    diagnostics: BpDiagnostics,
}

impl BpState {
    /// Every measurement message starts uniform; signal messages start as
    /// placeholders until the first update.
    pub fn new(graph: &BipartiteGraph, grid: DensityGrid) -> Self {
        let uniform = SampledDensity::uniform(grid);
        let e = graph.edge_count();
        BpState {
            grid,
            signal_messages: vec![uniform.clone(); e],
            measurement_messages: vec![uniform; e],
            iteration: 0,
            diagnostics: BpDiagnostics::default(),
        }
    }

    pub fn grid(&self) -> &DensityGrid {
        &self.grid
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn diagnostics(&self) -> BpDiagnostics {
        self.diagnostics
    }

    pub fn signal_message(&self, edge: usize) -> &SampledDensity {
        &self.signal_messages[edge]
    }

    pub fn measurement_message(&self, edge: usize) -> &SampledDensity {
        &self.measurement_messages[edge]
    }

    pub fn message_count(&self) -> usize {
        self.signal_messages.len() + self.measurement_messages.len()
    }

    /// Overwrites one measurement message (for hand-built scenarios).
    pub fn set_measurement_message(&mut self, edge: usize, msg: SampledDensity) -> Result<()> {
        if msg.grid() != &self.grid {
            return Err(Error::Dimension("message grid differs from state grid".into()));
        }
        self.measurement_messages[edge] = msg;
        Ok(())
    }

    /// Overwrites one signal message (for hand-built scenarios).
    pub fn set_signal_message(&mut self, edge: usize, msg: SampledDensity) -> Result<()> {
        if msg.grid() != &self.grid {
            return Err(Error::Dimension("message grid differs from state grid".into()));
        }
        self.signal_messages[edge] = msg;
        Ok(())
    }

    /// `a_{i→j} = η[f_X · Π_{k ∈ N_V(i)\{j}} b_{k→i}]` for every edge.
    pub fn update_signal_messages(&mut self, graph: &BipartiteGraph, prior: &SampledDensity) -> Result<()> {
        self.check_prior(prior)?;
        let n = self.grid.len();
        let mut fallbacks = 0;
        let mut updated = Vec::with_capacity(graph.edge_count());
        for i in 0..graph.n_vars() {
            let edges = graph.var_edges(i);
            for &e in edges {
                let mut out = vec![0.0; n];
                let factors = std::iter::once(prior.mass()).chain(
                    edges
                        .iter()
                        .filter(|&&k| k != e)
                        .map(|&k| self.measurement_messages[k].mass()),
                );
                fallbacks += product_normalize_into(factors, &mut out) as usize;
                updated.push(SampledDensity::from_normalized(self.grid, out));
            }
        }
        // edges are numbered variable-major, so `updated` is in edge order
        self.signal_messages = updated;
        self.diagnostics.underflow_fallbacks += fallbacks;
        Ok(())
    }

    /// `b_{j→i} = N(·; z_j, σ²) ⊗ (⊗_{k ∈ N_C(j)\{i}} a_{k→j}[-m])` for every
    /// edge, with leave-one-out spectral products so each row costs one
    /// forward FFT per neighbour and one inverse FFT per outgoing message.
    pub fn update_measurement_messages(
        &mut self,
        graph: &BipartiteGraph,
        z: &[f64],
        kernel: NoiseKernel,
    ) -> Result<()> {
        if z.len() != graph.n_checks() {
            return Err(Error::Dimension(format!(
                "{} measurements for {} checks",
                z.len(),
                graph.n_checks()
            )));
        }
        let n = self.grid.len();
        let mut fft = Spectral::new(n);
        for (j, &zj) in z.iter().enumerate() {
            let edges = graph.check_edges(j);
            if edges.is_empty() {
                continue;
            }
            let (noise, wrapped) = sample_gaussian_wrapped(&self.grid, zj, kernel.variance)?;
            self.diagnostics.wrapped_means += wrapped as usize;
            if edges.len() == 1 {
                self.measurement_messages[edges[0]] = noise;
                continue;
            }
            // reversal of a real density is conjugation of its centred spectrum
            let spectra: Vec<Vec<Complex64>> = edges
                .iter()
                .map(|&e| {
                    let mut s = fft.centered_spectrum(self.signal_messages[e].mass());
                    s.iter_mut().for_each(|c| *c = c.conj());
                    s
                })
                .collect();
            let d = edges.len();
            // prefix[k] = G · S_0 ⋯ S_{k-1}; suffix[k] = S_k ⋯ S_{d-1}
            let mut prefix = Vec::with_capacity(d);
            prefix.push(fft.centered_spectrum(noise.mass()));
            for k in 1..d {
                let next: Vec<Complex64> = prefix[k - 1].iter().zip(&spectra[k - 1]).map(|(a, b)| a * b).collect();
                prefix.push(next);
            }
            let mut suffix = vec![Complex64::new(1.0, 0.0); n];
            for k in (0..d).rev() {
                let mut spec: Vec<Complex64> = prefix[k].iter().zip(&suffix).map(|(a, b)| a * b).collect();
                let mut out = vec![0.0; n];
                fft.density_from_spectrum(&mut spec, &mut out);
                self.measurement_messages[edges[k]] = SampledDensity::from_normalized(self.grid, out);
                for (s, c) in suffix.iter_mut().zip(&spectra[k]) {
                    *s *= c;
                }
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Marginal posterior of one variable from the current messages.
    pub fn marginal(&mut self, graph: &BipartiteGraph, prior: &SampledDensity, i: usize) -> SampledDensity {
        let mut out = vec![0.0; self.grid.len()];
        let factors = std::iter::once(prior.mass()).chain(
            graph
                .var_edges(i)
                .iter()
                .map(|&e| self.measurement_messages[e].mass()),
        );
        self.diagnostics.underflow_fallbacks += product_normalize_into(factors, &mut out) as usize;
        SampledDensity::from_normalized(self.grid, out)
    }

    /// `f_{X_i}[m | z] = η[f_X · Π_{j ∈ N_V(i)} b_{j→i}]` for every variable.
    pub fn compute_marginals(&mut self, graph: &BipartiteGraph, prior: &SampledDensity) -> Result<Vec<SampledDensity>> {
        self.check_prior(prior)?;
        Ok((0..graph.n_vars()).map(|i| self.marginal(graph, prior, i)).collect())
    }

    fn check_prior(&self, prior: &SampledDensity) -> Result<()> {
        if prior.grid() != &self.grid {
            return Err(Error::Dimension("prior grid differs from state grid".into()));
        }
        Ok(())
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct BpOutput {
    pub marginals: Vec<SampledDensity>,
    pub diagnostics: BpDiagnostics,
    /// Marginal of the traced variable before the first and after every
    /// iteration, when tracing was requested.
    pub trace: Vec<SampledDensity>,
}

/// Runs `iterations` flooding iterations and returns the marginals.
pub fn run(
    graph: &BipartiteGraph,
    z: &[f64],
    prior: &SampledDensity,
    kernel: NoiseKernel,
    iterations: usize,
    trace_var: Option<usize>,
) -> Result<BpOutput> {
    if iterations == 0 {
        return Err(invalid("at least one BP iteration is required"));
    }
    if let Some(i) = trace_var {
        if i >= graph.n_vars() {
            return Err(invalid(format!("traced variable {i} out of range")));
        }
    }
    let mut state = BpState::new(graph, *prior.grid());
    let mut trace = Vec::new();
    if let Some(i) = trace_var {
        trace.push(state.marginal(graph, prior, i));
    }
    for _ in 0..iterations {
        state.update_signal_messages(graph, prior)?;
        state.update_measurement_messages(graph, z, kernel)?;
        if let Some(i) = trace_var {
            trace.push(state.marginal(graph, prior, i));
        }
    }
    let marginals = state.compute_marginals(graph, prior)?;
    Ok(BpOutput {
        marginals,
        diagnostics: state.diagnostics(),
        trace,
    })
}

/// Writes a marginal trace as `iteration,value,mass` rows.
pub fn write_trace_csv<W: Write>(trace: &[SampledDensity], mut out: W) -> Result<()> {
    writeln!(out, "iteration,value,mass")?;
    for (l, d) in trace.iter().enumerate() {
        for (m, p) in d.mass().iter().enumerate() {
            writeln!(out, "{l},{},{p}", d.grid().value(m))?;
        }
    }
    Ok(())
}
