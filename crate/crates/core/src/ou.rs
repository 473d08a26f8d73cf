//! Exact sampling of the Ornstein-Uhlenbeck process `dW_x = A W_x dt + sigma dW`.
//!
//! Each step draws the Brownian increment and the stochastic-convolution
//! increment of every mode from their exact joint Gaussian law, so the state
//! needs no time discretization and the increments remain available for
//! Girsanov sums.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{norm, GalerkinModel, StateVector};
use crate::rng::{path_rng, std_normal};
use crate::stats::MeanAccumulator;

/// Uniform time grid `t_k = k T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathGrid {
    n_steps: usize,
    horizon: f64,
    dt: f64,
}

impl PathGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::GridMismatch("grid needs at least one step".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::GridMismatch(format!("horizon {horizon} must be positive")));
        }
        Ok(Self {
            n_steps,
            horizon,
            dt: horizon / n_steps as f64,
        })
    }

    /// Grid with step at most `dt` on `[0, horizon]`.
    pub fn with_max_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::GridMismatch(format!("dt {dt} must be positive")));
        }
        Self::new(horizon, (horizon / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.time(k))
    }
}

/// One realization on a grid: `w` is `W_{x,A,sigma}`, `w0` is the same noise
/// started at the origin, `dw` the Brownian increments. State arrays are
/// node-major with `dim` entries per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: PathGrid,
    dim: usize,
    x_start: StateVector,
    w: Vec<f64>,
    w0: Vec<f64>,
    dw: Vec<f64>,
    running_max: Vec<f64>,
    running_max0: Vec<f64>,
    seed_tag: u64,
}

fn running_max_of(data: &[f64], dim: usize) -> Vec<f64> {
    let mut best = 0.0f64;
    data.chunks_exact(dim)
        .map(|v| {
            best = best.max(norm(v));
            best
        })
        .collect()
}

impl SamplePath {
    /// Builds a path from externally supplied `w0` and increments, e.g. for
    /// deterministic test injection. `w` is set to `e^{tA} x + w0`.
    pub fn from_parts(
        model: &GalerkinModel,
        grid: PathGrid,
        x_start: &[f64],
        w0: Vec<f64>,
        dw: Vec<f64>,
        seed_tag: u64,
    ) -> Result<Self> {
        let d = model.dim();
        if x_start.len() != d {
            return Err(Error::DimensionMismatch {
                what: "x_start",
                expected: d,
                got: x_start.len(),
            });
        }
        if w0.len() != grid.n_nodes() * d {
            return Err(Error::GridMismatch(format!(
                "w0 has {} entries, grid needs {}",
                w0.len(),
                grid.n_nodes() * d
            )));
        }
        if dw.len() != grid.n_steps() * d {
            return Err(Error::GridMismatch(format!(
                "dw has {} entries, grid needs {}",
                dw.len(),
                grid.n_steps() * d
            )));
        }
        let mut w = w0.clone();
        for (k, node) in w.chunks_exact_mut(d).enumerate() {
            let t = grid.time(k);
            for ((v, l), x) in node.iter_mut().zip(model.eigenvalues()).zip(x_start) {
                *v += (l * t).exp() * x;
            }
        }
        Ok(Self {
            running_max: running_max_of(&w, d),
            running_max0: running_max_of(&w0, d),
            grid,
            dim: d,
            x_start: x_start.to_vec().into(),
            w,
            w0,
            dw,
            seed_tag,
        })
    }

    /// The noiseless path: `w0 = 0`, `dw = 0`.
    pub fn zero_noise(model: &GalerkinModel, grid: PathGrid, x_start: &[f64]) -> Result<Self> {
        let d = model.dim();
        Self::from_parts(
            model,
            grid,
            x_start,
            vec![0.0; grid.n_nodes() * d],
            vec![0.0; grid.n_steps() * d],
            0,
        )
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x_start(&self) -> &StateVector {
        &self.x_start
    }

    pub fn seed_tag(&self) -> u64 {
        self.seed_tag
    }

    /// `W_{x,A,sigma}(t_k)`.
    pub fn w(&self, k: usize) -> &[f64] {
        &self.w[k * self.dim..(k + 1) * self.dim]
    }

    /// `W_{0,A,sigma}(t_k)`.
    pub fn w0(&self, k: usize) -> &[f64] {
        &self.w0[k * self.dim..(k + 1) * self.dim]
    }

    /// `W(t_{k+1}) - W(t_k)`.
    pub fn dw(&self, k: usize) -> &[f64] {
        &self.dw[k * self.dim..(k + 1) * self.dim]
    }

    pub fn w_flat(&self) -> &[f64] {
        &self.w
    }

    pub fn w0_flat(&self) -> &[f64] {
        &self.w0
    }

    /// `max_{j <= k} |W_{x,A,sigma}(t_j)|`.
    pub fn running_max(&self) -> &[f64] {
        &self.running_max
    }

    /// `max_{j <= k} |W_{0,A,sigma}(t_j)|`.
    pub fn running_max0(&self) -> &[f64] {
        &self.running_max0
    }
}

/// Per-mode constants of one exact transition of length `h`.
#[derive(Debug, Clone, Copy)]
struct ModeStep {
    decay: f64,
    /// Regression coefficient of the convolution increment on `dW`.
    slope: f64,
    /// Conditional standard deviation of the convolution increment given `dW`.
    resid: f64,
}

fn mode_step(lambda: f64, sigma: f64, h: f64) -> ModeStep {
    let var_xi = sigma * sigma * (2.0 * lambda * h).exp_m1() / (2.0 * lambda);
    let cov = sigma * (lambda * h).exp_m1() / lambda;
    ModeStep {
        decay: (lambda * h).exp(),
        slope: cov / h,
        resid: (var_xi - cov * cov / h).max(0.0).sqrt(),
    }
}

/// Samples one path with the given seed.
pub fn sample_ou_path(model: &GalerkinModel, grid: &PathGrid, seed: u64) -> SamplePath {
    sample_ou_path_from(model, grid, model.x0(), seed)
}

/// Samples one path started at `x_start`.
pub fn sample_ou_path_from(model: &GalerkinModel, grid: &PathGrid, x_start: &[f64], seed: u64) -> SamplePath {
    let d = model.dim();
    let h = grid.dt();
    let steps: Vec<ModeStep> = model
        .eigenvalues()
        .iter()
        .zip(model.sigma())
        .map(|(&l, &s)| mode_step(l, s, h))
        .collect();
    let sqrt_h = h.sqrt();
    let mut rng = path_rng(seed);
    let mut w0 = vec![0.0; grid.n_nodes() * d];
    let mut dw = vec![0.0; grid.n_steps() * d];
    for k in 0..grid.n_steps() {
        for (i, st) in steps.iter().enumerate() {
            let db = sqrt_h * std_normal(&mut rng);
            let xi = st.slope * db + st.resid * std_normal(&mut rng);
            dw[k * d + i] = db;
            w0[(k + 1) * d + i] = st.decay * w0[k * d + i] + xi;
        }
    }
    SamplePath::from_parts(model, *grid, x_start, w0, dw, seed).expect("consistent shapes")
}

/// `sum_k e^{(T - t_{k+1}) A} sigma dW_k` minus `w0(T)`: the coupling residual
/// of a discrete stochastic convolution against the exact one.
pub fn coupling_residual(model: &GalerkinModel, path: &SamplePath) -> f64 {
    let grid = path.grid();
    let d = model.dim();
    let n = grid.n_steps();
    let mut err = vec![0.0; d];
    for k in 0..n {
        let lag = grid.horizon() - grid.time(k + 1);
        for i in 0..d {
            err[i] += (model.eigenvalues()[i] * lag).exp() * model.sigma()[i] * path.dw(k)[i];
        }
    }
    for (e, w) in err.iter_mut().zip(path.w0(n)) {
        *e -= w;
    }
    norm(&err)
}

/// One row of the exponential-moment probe `E exp(gamma W0*(T))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FerniqueRow {
    pub gamma: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FerniqueTable {
    pub rows: Vec<FerniqueRow>,
    /// Largest `gamma` with a finite estimate of relative stderr below 10%.
    pub largest_stable_gamma: Option<f64>,
}

/// Empirical `E exp(gamma W*)` from per-path maxima `sups`.
pub fn fernique_probe(sups: &[f64], gammas: &[f64]) -> Result<FerniqueTable> {
    if sups.is_empty() {
        return Err(Error::Empty("path maxima"));
    }
    let rows: Vec<FerniqueRow> = gammas
        .iter()
        .map(|&gamma| {
            if gamma == 0.0 {
                return FerniqueRow {
                    gamma,
                    estimate: 1.0,
                    stderr: 0.0,
                    stable: true,
                };
            }
            let mut acc = MeanAccumulator::new();
            acc.extend(sups.iter().map(|s| (gamma * s).exp()));
            let (estimate, stderr) = (acc.mean(), acc.stderr());
            let stable = estimate.is_finite() && stderr.is_finite() && stderr < 0.1 * estimate;
            FerniqueRow {
                gamma,
                estimate,
                stderr,
                stable,
            }
        })
        .collect();
    let largest_stable_gamma = rows
        .iter()
        .filter(|r| r.stable)
        .map(|r| r.gamma)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
    Ok(FerniqueTable {
        rows,
        largest_stable_gamma,
    })
}
