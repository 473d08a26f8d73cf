//! The tail function `p(y) = min{1, 1/y + P(tau_{n(y)} < T)}` and the OU
//! tail `p0(s) = sup_t P(|W0(t)| > s)`.
//!
//! `y` ranges over values like `e^{5 a(n)^2 T}`, so everything is indexed by
//! `ln y`.

use serde::Serialize;

use crate::drift::BoundFn;
use crate::error::{Error, Result};
use crate::stats::wilson_interval;

/// Anything that can report `p(y)` for `y = e^{ln_y}`.
pub trait TailProbability: Send + Sync {
    fn p_ln(&self, ln_y: f64) -> f64;

    /// `ln p(e^{ln_y})`, overridden where `p` underflows.
    fn ln_p(&self, ln_y: f64) -> f64 {
        self.p_ln(ln_y).ln()
    }

    fn p(&self, y: f64) -> f64 {
        if y <= 0.0 {
            self.p_ln(f64::NEG_INFINITY)
        } else {
            self.p_ln(y.ln())
        }
    }

    /// Values of `ln y` just after which `p` may jump.
    fn ln_breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `p(y) = min(1, 1/y)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct InverseTail;

impl TailProbability for InverseTail {
    fn p_ln(&self, ln_y: f64) -> f64 {
        (-ln_y).exp().min(1.0)
    }

    fn ln_p(&self, ln_y: f64) -> f64 {
        (-ln_y).min(0.0)
    }
}

/// `p(y) = p0`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTail(pub f64);

impl TailProbability for ConstantTail {
    fn p_ln(&self, _: f64) -> f64 {
        self.0
    }
}

/// Empirical `p(y)` built from per-path maxima of the stopping threshold over
/// nodes before `T`: `tau_n < T` exactly when that maximum reaches `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFunction {
    bound: BoundFn,
    sigma_inv_norm: f64,
    horizon: f64,
    sorted_max: Vec<f64>,
    n_max: u32,
    confidence_z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub ln_y: f64,
    pub n_of_y: u32,
    /// `n(y)` was capped at `n_max`.
    pub truncated: bool,
    pub hits: u64,
    pub freq: f64,
    pub wilson_upper: f64,
    pub p: f64,
    pub p_rearranged: f64,
    /// `min{1, 1/y + wilson_upper}`.
    pub p_upper: f64,
    /// `min{1, e^{5 (a(n) ||sigma^{-1}||)^2 T} / y^2 + freq}`.
    pub p_chebyshev: f64,
}

impl TailFunction {
    pub fn new(bound: BoundFn, sigma_inv_norm: f64, horizon: f64, mut max_thresholds: Vec<f64>, n_max: u32) -> Result<Self> {
        if max_thresholds.is_empty() {
            return Err(Error::Empty("threshold maxima"));
        }
        max_thresholds.sort_by(|a, b| a.total_cmp(b));
        Ok(Self {
            bound,
            sigma_inv_norm,
            horizon,
            sorted_max: max_thresholds,
            n_max,
            confidence_z: None,
        })
    }

    /// Makes `p_ln` use the Wilson upper bound of the frequency, which keeps
    /// `1/sqrt(p)` on the conservative side.
    pub fn with_upper_confidence(mut self, z: f64) -> Self {
        self.confidence_z = Some(z);
        self
    }

    fn frequency(&self, n: u32) -> f64 {
        let hits = self.hits(n);
        let trials = self.sorted_max.len() as u64;
        match self.confidence_z {
            Some(z) => wilson_interval(hits, trials, z).1,
            None => hits as f64 / trials as f64,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.sorted_max.len()
    }

    /// `ln y` must exceed `5 (a(0) ||sigma^{-1}||)^2 T`.
    pub fn admissible_ln_y(&self) -> f64 {
        5.0 * (self.bound.eval(0.0) * self.sigma_inv_norm).powi(2) * self.horizon
    }

    /// `5 (a(n) ||sigma^{-1}||)^2 T`.
    pub fn log_moment_bound(&self, n: u32) -> f64 {
        5.0 * (self.bound.eval(n as f64) * self.sigma_inv_norm).powi(2) * self.horizon
    }

    /// `n(y)`: the largest `n <= n_max` with `a(n) < sqrt(ln y / (5T)) / ||sigma^{-1}||`.
    pub fn level(&self, ln_y: f64) -> Result<(u32, bool)> {
        let threshold = self.admissible_ln_y();
        if !(ln_y > threshold) {
            return Err(Error::BelowAdmissible { ln_y, threshold });
        }
        let limit = (ln_y / (5.0 * self.horizon)).sqrt() / self.sigma_inv_norm;
        let n = self.bound.max_level_below(limit, self.n_max).expect("admissible ln y");
        Ok((n, n == self.n_max))
    }

    /// Number of paths with `tau_n < T`.
    pub fn hits(&self, n: u32) -> u64 {
        let below = self.sorted_max.partition_point(|&m| m < n as f64);
        (self.sorted_max.len() - below) as u64
    }

    pub fn row(&self, ln_y: f64) -> Result<TailRow> {
        let (n, truncated) = self.level(ln_y)?;
        let hits = self.hits(n);
        let trials = self.sorted_max.len() as u64;
        let freq = hits as f64 / trials as f64;
        let (_, hi) = wilson_interval(hits, trials, 1.96);
        let inv_y = (-ln_y).exp();
        let p = (inv_y + freq).min(1.0);
        let cheb = (self.log_moment_bound(n) - 2.0 * ln_y).exp();
        Ok(TailRow {
            ln_y,
            n_of_y: n,
            truncated,
            hits,
            freq,
            wilson_upper: hi,
            p,
            p_rearranged: p,
            p_upper: (inv_y + hi).min(1.0),
            p_chebyshev: (cheb + freq).min(1.0),
        })
    }

    /// Rows for each grid value, with a running-minimum rearrangement column.
    pub fn table(&self, ln_y_grid: &[f64]) -> Result<Vec<TailRow>> {
        if ln_y_grid.is_empty() {
            return Err(Error::Empty("y grid"));
        }
        let mut rows = ln_y_grid.iter().map(|&l| self.row(l)).collect::<Result<Vec<_>>>()?;
        let mut best = f64::INFINITY;
        for r in rows.iter_mut() {
            best = best.min(r.p);
            r.p_rearranged = best;
        }
        Ok(rows)
    }

    /// Grid uniform in `ln ln y` on `(admissible, ln_y_max]`.
    pub fn default_grid(&self, ln_y_max: f64, n: usize) -> Vec<f64> {
        let lo = self.admissible_ln_y().max(1e-2) * (1.0 + 1e-9) + 1e-12;
        log_spaced(lo, ln_y_max, n)
    }
}

impl TailProbability for TailFunction {
    /// `1` below the admissible range, where `n(y)` is undefined.
    fn p_ln(&self, ln_y: f64) -> f64 {
        match self.level(ln_y) {
            Ok((n, _)) => ((-ln_y).exp() + self.frequency(n)).min(1.0),
            Err(_) => 1.0,
        }
    }

    fn ln_p(&self, ln_y: f64) -> f64 {
        match self.level(ln_y) {
            Ok((n, _)) => {
                let f = self.frequency(n);
                if f == 0.0 {
                    (-ln_y).min(0.0)
                } else {
                    let (a, b) = (-ln_y, f.ln());
                    (a.max(b) + (-(a - b).abs()).exp().ln_1p()).min(0.0)
                }
            }
            Err(_) => 0.0,
        }
    }

    fn ln_breakpoints(&self) -> Vec<f64> {
        let mut out = vec![self.admissible_ln_y()];
        for n in 1..=self.n_max {
            if self.hits(n) < self.hits(n - 1) {
                out.push(self.log_moment_bound(n));
            }
            if self.hits(n) == 0 {
                break;
            }
        }
        out
    }
}

/// `n` points geometrically spaced on `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `p0(s) = max_t P(|W0(t)| > s)` over a set of sampled times.
#[derive(Debug, Clone, PartialEq)]
pub struct OuTail {
    per_time: Vec<Vec<f64>>,
}

impl OuTail {
    /// `norms[j][i]` is `|W0(t_j)|` on path `i`.
    pub fn new(mut norms: Vec<Vec<f64>>) -> Result<Self> {
        if norms.is_empty() || norms.iter().any(|v| v.is_empty()) {
            return Err(Error::Empty("OU norm samples"));
        }
        for v in norms.iter_mut() {
            v.sort_by(|a, b| a.total_cmp(b));
        }
        Ok(Self { per_time: norms })
    }

    pub fn p0(&self, s: f64) -> f64 {
        self.per_time
            .iter()
            .map(|v| (v.len() - v.partition_point(|&x| x <= s)) as f64 / v.len() as f64)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct P0Row {
    pub s: f64,
    pub p0: f64,
}

pub fn p0_tail(tail: &OuTail, s_grid: &[f64]) -> Vec<P0Row> {
    s_grid.iter().map(|&s| P0Row { s, p0: tail.p0(s) }).collect()
}

/// Best-fit constants for `Psi(y) < 1 / sqrt(p0(C1 a^{-1}(C2 a^{-1}(sqrt(ln(C3 + y))))))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainFit {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Mean squared log misfit against `1 / sqrt(p(y))`.
    pub misfit: f64,
    /// Whether the supplied `Psi` sits below the chain at every grid point.
    pub psi_below_chain: bool,
    pub violations: usize,
}

/// Inverse of a power bound; `None` for bounded `a`, where the chain does not apply.
fn bound_inverse(bound: &BoundFn) -> Option<impl Fn(f64) -> f64> {
    match *bound {
        BoundFn::Power { coef, degree } if degree > 1.0 => Some(move |v: f64| (v.max(0.0) / coef).powf(1.0 / degree)),
        _ => None,
    }
}

/// Grid search over `C_i in {1/4, 1/2, 1, 2, 4}`. The fit is reported, never asserted.
pub fn fit_chain(
    p0: &OuTail,
    bound: &BoundFn,
    tail: &dyn TailProbability,
    ln_y_grid: &[f64],
    ln_psi: &dyn Fn(f64) -> f64,
) -> Option<ChainFit> {
    let inv = bound_inverse(bound)?;
    let choices = [0.25, 0.5, 1.0, 2.0, 4.0];
    // ln of the chain's right side at y = e^{ln_y}; infinite once p0 vanishes.
    let chain = |c1: f64, c2: f64, c3: f64, ln_y: f64| {
        let y = ln_y.exp();
        let s = c1 * inv(c2 * inv((c3 + y).ln().max(0.0).sqrt()));
        -0.5 * p0.p0(s).ln()
    };
    let mut best: Option<ChainFit> = None;
    for &c1 in &choices {
        for &c2 in &choices {
            for &c3 in &choices {
                let mut misfit = 0.0;
                let mut count = 0usize;
                for &l in ln_y_grid {
                    let (lhs, target) = (chain(c1, c2, c3, l), -0.5 * tail.p_ln(l).ln());
                    if lhs.is_finite() {
                        misfit += (lhs - target).powi(2);
                        count += 1;
                    }
                }
                let misfit = if count > 0 { misfit / count as f64 } else { f64::INFINITY };
                if best.as_ref().is_none_or(|b| misfit < b.misfit) {
                    best = Some(ChainFit {
                        c1,
                        c2,
                        c3,
                        misfit,
                        psi_below_chain: true,
                        violations: 0,
                    });
                }
            }
        }
    }
    let mut fit = best?;
    fit.violations = ln_y_grid
        .iter()
        .filter(|&&l| !(ln_psi(l) < chain(fit.c1, fit.c2, fit.c3, l)))
        .count();
    fit.psi_below_chain = fit.violations == 0;
    Some(fit)
}
