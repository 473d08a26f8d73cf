//! Lie-splitting integrator for the regularized random ODE
//! `Z' = A Z + F_alpha(t, Z + W0)`, `Z(0) = x`, and the pathwise bounds.

use serde::Serialize;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::model::{dist, norm, GalerkinModel};
use crate::ou::{PathGrid, SamplePath};

/// `Z_alpha` and `X_alpha = Z_alpha + W0` on the grid of the source path.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolution {
    alpha: f64,
    lambda_y: Option<f64>,
    grid: PathGrid,
    dim: usize,
    source_seed: u64,
    z: Vec<f64>,
    x: Vec<f64>,
}

impl RegularizedSolution {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda_y(&self) -> Option<f64> {
        self.lambda_y
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_seed(&self) -> u64 {
        self.source_seed
    }

    pub fn z(&self, k: usize) -> &[f64] {
        &self.z[k * self.dim..(k + 1) * self.dim]
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    pub fn z_flat(&self) -> &[f64] {
        &self.z
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }
}

/// Rejects steps above `alpha / 8`.
pub fn check_step(dt: f64, alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let required = alpha / 8.0;
    if dt > required * (1.0 + 1e-12) {
        Err(Error::StepTooLarge { dt, alpha, required })
    } else {
        Ok(())
    }
}

/// Integrates `Z_alpha` from `x0` along `path`. With `lambda_y` set, the
/// linear flow uses the Yosida approximant `A_lambda` instead of `A`.
pub fn integrate_z(
    model: &GalerkinModel,
    drift: &DriftSpec,
    alpha: f64,
    path: &SamplePath,
    x0: &[f64],
    lambda_y: Option<f64>,
) -> Result<RegularizedSolution> {
    let grid = *path.grid();
    let d = model.dim();
    if path.dim() != d || x0.len() != d {
        return Err(Error::DimensionMismatch {
            what: "integrator state",
            expected: d,
            got: if path.dim() != d { path.dim() } else { x0.len() },
        });
    }
    let h = grid.dt();
    check_step(h, alpha)?;
    let rates = match lambda_y {
        Some(l) => model.yosida_a_eigenvalues(l)?,
        None => model.eigenvalues().to_vec(),
    };
    let decay: Vec<f64> = rates.iter().map(|l| (l * h).exp()).collect();
    let n = grid.n_nodes();
    let mut z = vec![0.0; n * d];
    let mut x = vec![0.0; n * d];
    z[..d].copy_from_slice(x0);
    for (xi, (zi, wi)) in x[..d].iter_mut().zip(x0.iter().zip(path.w0(0))) {
        *xi = zi + wi;
    }
    let mut zp = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut f = vec![0.0; d];
    for k in 0..grid.n_steps() {
        let w_next = path.w0(k + 1);
        for i in 0..d {
            zp[i] = decay[i] * z[k * d + i];
            y[i] = zp[i] + w_next[i];
        }
        drift.yosida_f_into(grid.time(k + 1), alpha, &y, &mut f)?;
        let base = (k + 1) * d;
        for i in 0..d {
            let zi = zp[i] + h * f[i];
            if !zi.is_finite() {
                return Err(Error::NonFinite { step: k + 1 });
            }
            z[base + i] = zi;
            x[base + i] = zi + w_next[i];
        }
    }
    Ok(RegularizedSolution {
        alpha,
        lambda_y,
        grid,
        dim: d,
        source_seed: path.seed_tag(),
        z,
        x,
    })
}

/// Recomputes `X_alpha = Z_alpha + W0` against the source path.
pub fn assemble_x(solution: &RegularizedSolution, path: &SamplePath) -> Result<Vec<f64>> {
    if solution.grid != *path.grid() || solution.dim != path.dim() {
        return Err(Error::GridMismatch("solution and path use different grids".into()));
    }
    Ok(solution
        .z
        .iter()
        .zip(path.w0_flat())
        .map(|(z, w)| z + w)
        .collect())
}

/// Path-dependent right-hand sides of the a priori bounds. They depend on the
/// noise and the initial state but not on `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBounds {
    dt: f64,
    /// `int_0^t e^{-beta(t-s)} a(|W0(s)|) ds`, trapezoidal.
    drift_integral: Vec<f64>,
    /// `int_0^t e^{-beta(t-s)} a(|W0(s)|)^2 / beta^2 ds`, trapezoidal.
    square_integral: Vec<f64>,
    /// `|x| e^{-beta t}`.
    decayed_start: Vec<f64>,
    /// `|e^{tA} x|`.
    flow_norm: Vec<f64>,
    w0_norm: Vec<f64>,
    w_norm: Vec<f64>,
    beta: f64,
    x_norm: f64,
}

impl PathBounds {
    pub fn new(model: &GalerkinModel, drift: &DriftSpec, path: &SamplePath) -> Self {
        let grid = path.grid();
        let h = grid.dt();
        let beta = model.beta();
        let bound = drift.bound_fn(model.dim());
        let x = path.x_start();
        let x_norm = x.norm();
        let n = grid.n_nodes();
        let e = (-beta * h).exp();
        let mut drift_integral = Vec::with_capacity(n);
        let mut square_integral = Vec::with_capacity(n);
        let mut w0_norm = Vec::with_capacity(n);
        let mut w_norm = Vec::with_capacity(n);
        let mut decayed_start = Vec::with_capacity(n);
        let mut flow_norm = Vec::with_capacity(n);
        let (mut i1, mut i2) = (0.0, 0.0);
        let (mut a_prev, mut a2_prev) = (0.0, 0.0);
        for k in 0..n {
            let r = norm(path.w0(k));
            let a = bound.eval(r);
            let a2 = a * a / (beta * beta);
            if k > 0 {
                i1 = e * i1 + 0.5 * h * (e * a_prev + a);
                i2 = e * i2 + 0.5 * h * (e * a2_prev + a2);
            }
            a_prev = a;
            a2_prev = a2;
            drift_integral.push(i1);
            square_integral.push(i2);
            w0_norm.push(r);
            w_norm.push(norm(path.w(k)));
            let t = grid.time(k);
            decayed_start.push(x_norm * (-beta * t).exp());
            let fl: f64 = model
                .eigenvalues()
                .iter()
                .zip(x.iter())
                .map(|(l, v)| ((l * t).exp() * v).powi(2))
                .sum();
            flow_norm.push(fl.sqrt());
        }
        Self {
            dt: h,
            drift_integral,
            square_integral,
            decayed_start,
            flow_norm,
            w0_norm,
            w_norm,
            beta,
            x_norm,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.drift_integral.len()
    }

    pub fn slack(&self) -> f64 {
        1.0 + 10.0 * self.dt
    }

    /// `Z*_t = |x| e^{-beta t} + (1/2) int_0^t e^{-beta(t-s)} a(|W0(s)|) ds`.
    pub fn z_star(&self, k: usize) -> f64 {
        self.decayed_start[k] + 0.5 * self.drift_integral[k]
    }

    /// The same bound without the factor `1/2`.
    pub fn z_full(&self, k: usize) -> f64 {
        self.decayed_start[k] + self.drift_integral[k]
    }

    /// `|x| e^{-beta t} + int_0^t e^{-beta(t-s)} a(|W0(s)|) ds + |W0(t)|`.
    pub fn x_bound(&self, k: usize) -> f64 {
        self.z_full(k) + self.w0_norm[k]
    }

    /// `|x|^2 e^{-beta t} + beta int_0^t e^{-beta(t-s)} a(|W0(s)|)^2 / beta^2 ds`.
    pub fn gronwall(&self, k: usize) -> f64 {
        self.x_norm * self.decayed_start[k] + self.beta * self.square_integral[k]
    }

    /// The stopping-time threshold `Z*_t + |e^{tA} x| + |W_x(t)|`.
    pub fn threshold(&self, k: usize) -> f64 {
        self.z_star(k) + self.flow_norm[k] + self.w_norm[k]
    }

    pub fn w0_norm(&self, k: usize) -> f64 {
        self.w0_norm[k]
    }

    pub fn drift_integral(&self, k: usize) -> f64 {
        self.drift_integral[k]
    }
}

/// Node counts that violate the a priori bounds, with the worst ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BoundReport {
    pub nodes: usize,
    /// `|Z| <= Z*` (with the factor 1/2).
    pub z_half_violations: usize,
    /// `|Z| <= |x| e^{-beta t} + int e^{-beta(t-s)} a ds`.
    pub z_full_violations: usize,
    /// `|X| <= |x| e^{-beta t} + int e^{-beta(t-s)} a ds + |W0|`.
    pub x_violations: usize,
    /// `|Z|^2 <= |x|^2 e^{-beta t} + beta int e^{-beta(t-s)} a^2 / beta^2 ds`.
    pub gronwall_violations: usize,
    pub max_z_half_ratio: f64,
    pub max_z_full_ratio: f64,
    pub max_x_ratio: f64,
    pub max_gronwall_ratio: f64,
    pub first_z_half_violation: Option<usize>,
}

impl BoundReport {
    pub fn merge(&mut self, other: &BoundReport) {
        self.nodes += other.nodes;
        self.z_half_violations += other.z_half_violations;
        self.z_full_violations += other.z_full_violations;
        self.x_violations += other.x_violations;
        self.gronwall_violations += other.gronwall_violations;
        self.max_z_half_ratio = self.max_z_half_ratio.max(other.max_z_half_ratio);
        self.max_z_full_ratio = self.max_z_full_ratio.max(other.max_z_full_ratio);
        self.max_x_ratio = self.max_x_ratio.max(other.max_x_ratio);
        self.max_gronwall_ratio = self.max_gronwall_ratio.max(other.max_gronwall_ratio);
        if self.first_z_half_violation.is_none() {
            self.first_z_half_violation = other.first_z_half_violation;
        }
    }
}

/// `lhs <= rhs * slack`, also tracking `lhs / rhs`.
fn compare(lhs: f64, rhs: f64, slack: f64, worst: &mut f64) -> bool {
    if rhs > 0.0 {
        *worst = worst.max(lhs / rhs);
    } else if lhs > 0.0 {
        *worst = f64::INFINITY;
    }
    lhs <= rhs * slack
}

pub fn check_pathwise_bound(solution: &RegularizedSolution, bounds: &PathBounds) -> Result<BoundReport> {
    let n = solution.grid.n_nodes();
    if bounds.n_nodes() != n {
        return Err(Error::GridMismatch("bounds and solution use different grids".into()));
    }
    let slack = bounds.slack();
    let mut r = BoundReport {
        nodes: n,
        ..BoundReport::default()
    };
    for k in 0..n {
        let z = norm(solution.z(k));
        let x = norm(solution.x(k));
        if !compare(z, bounds.z_star(k), slack, &mut r.max_z_half_ratio) {
            r.z_half_violations += 1;
            r.first_z_half_violation.get_or_insert(k);
        }
        if !compare(z, bounds.z_full(k), slack, &mut r.max_z_full_ratio) {
            r.z_full_violations += 1;
        }
        if !compare(x, bounds.x_bound(k), slack, &mut r.max_x_ratio) {
            r.x_violations += 1;
        }
        if !compare(z * z, bounds.gronwall(k), slack, &mut r.max_gronwall_ratio) {
            r.gronwall_violations += 1;
        }
    }
    Ok(r)
}

/// Largest ratio `|Z1(t) - Z2(t)| / (e^{-beta t} |x1 - x2|)` over the grid.
pub fn contraction_ratio(model: &GalerkinModel, a: &RegularizedSolution, b: &RegularizedSolution) -> f64 {
    let x_gap = dist(a.z(0), b.z(0));
    let mut worst = 0.0f64;
    for k in 0..a.grid.n_nodes() {
        let bound = (-model.beta() * a.grid.time(k)).exp() * x_gap;
        let gap = dist(a.z(k), b.z(k));
        if bound > 0.0 {
            worst = worst.max(gap / bound);
        } else if gap > 0.0 {
            worst = f64::INFINITY;
        }
    }
    worst
}

/// First crossing of level `n` by the stopping threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingRecord {
    pub n: u32,
    pub tau: f64,
    /// Node index of `tau`.
    pub node: usize,
    pub hit: bool,
}

/// `tau_n` for each level, computed in one pass over the running maximum of the threshold.
pub fn stopping_times(bounds: &PathBounds, grid: &PathGrid, levels: &[u32]) -> Vec<StoppingRecord> {
    let mut out: Vec<StoppingRecord> = levels
        .iter()
        .map(|&n| StoppingRecord {
            n,
            tau: grid.horizon(),
            node: grid.n_steps(),
            hit: false,
        })
        .collect();
    let mut open: Vec<usize> = (0..levels.len()).collect();
    for k in 0..grid.n_nodes() {
        if open.is_empty() {
            break;
        }
        let th = bounds.threshold(k);
        open.retain(|&j| {
            if th >= out[j].n as f64 {
                out[j] = StoppingRecord {
                    n: out[j].n,
                    tau: grid.time(k),
                    node: k,
                    hit: true,
                };
                false
            } else {
                true
            }
        });
    }
    out
}

/// Same as [`stopping_times`] for a single level.
pub fn stopping_time(bounds: &PathBounds, grid: &PathGrid, n: u32) -> StoppingRecord {
    stopping_times(bounds, grid, &[n])[0]
}

/// Counts nodes with `t < tau_n` (or all nodes if the level is never hit)
/// where `|X_alpha(t)| > n`.
pub fn certify_stopping(solution: &RegularizedSolution, records: &[StoppingRecord]) -> usize {
    records
        .iter()
        .map(|rec| {
            let end = if rec.hit { rec.node } else { solution.grid.n_nodes() };
            (0..end).filter(|&k| norm(solution.x(k)) > rec.n as f64).count()
        })
        .sum()
}

/// Pathwise sup-norm distances `max_k |X_{alpha_j}(t_k) - X_{alpha_{j+1}}(t_k)|`.
pub fn sup_gaps(solutions: &[RegularizedSolution]) -> Vec<f64> {
    solutions
        .windows(2)
        .map(|w| {
            (0..w[0].grid.n_nodes())
                .map(|k| dist(w[0].x(k), w[1].x(k)))
                .fold(0.0, f64::max)
        })
        .collect()
}
