//! Convex weights `phi`, the estimate constant `C(c, beta, B)` and the
//! pathwise `phi`-bound on `X_alpha`.

use serde::{Deserialize, Serialize};

use crate::drift::BoundFn;
use crate::error::{Error, Result};
use crate::integrator::RegularizedSolution;
use crate::model::{norm, GalerkinModel};
use crate::ou::SamplePath;
use crate::quad::golden_section_max;

/// Catalog of weights. `Power` with `p >= 1` has `phi(0) = 0`; it is admitted
/// because every formula downstream stays well defined there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiFunction {
    /// `u^p`.
    Power { p: f64 },
    /// `e^u`.
    Exponential,
    /// `u ln(1 + u)`.
    Xlog,
}

impl PhiFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhiFunction::Power { p } if !(p.is_finite() && *p >= 1.0) => {
                Err(Error::InvalidArgument(format!("power phi needs p >= 1, got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PhiFunction::Power { p } => format!("power(p={p})"),
            PhiFunction::Exponential => "exponential".into(),
            PhiFunction::Xlog => "xlog".into(),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            PhiFunction::Power { p } => u.powf(p),
            PhiFunction::Exponential => u.exp(),
            PhiFunction::Xlog => u * u.ln_1p(),
        }
    }

    pub fn deriv1(&self, u: f64) -> f64 {
        match *self {
            PhiFunction::Power { p } => {
                if p == 1.0 {
                    1.0
                } else {
                    p * u.powf(p - 1.0)
                }
            }
            PhiFunction::Exponential => u.exp(),
            PhiFunction::Xlog => u.ln_1p() + u / (1.0 + u),
        }
    }

    pub fn deriv2(&self, u: f64) -> f64 {
        match *self {
            PhiFunction::Power { p } => {
                if p == 1.0 {
                    0.0
                } else {
                    p * (p - 1.0) * u.powf(p - 2.0)
                }
            }
            PhiFunction::Exponential => u.exp(),
            PhiFunction::Xlog => (2.0 + u) / ((1.0 + u) * (1.0 + u)),
        }
    }

    /// `lim u phi'(u) / phi(u)`.
    pub fn l_phi(&self) -> f64 {
        match *self {
            PhiFunction::Power { p } => p,
            PhiFunction::Exponential => f64::INFINITY,
            PhiFunction::Xlog => 1.0,
        }
    }

    /// `u phi'(u) / phi(u)`.
    pub fn elasticity(&self, u: f64) -> f64 {
        match *self {
            PhiFunction::Power { p } => p,
            PhiFunction::Exponential => u,
            PhiFunction::Xlog => 1.0 + u / ((1.0 + u) * u.ln_1p()),
        }
    }

    /// `f(u) = phi'(u) (c sqrt(u) - beta u) + B phi(u)`.
    pub fn lemma_f(&self, u: f64, c: f64, beta: f64, b: f64) -> f64 {
        let drift = c * u.sqrt() - beta * u;
        let head = if drift == 0.0 { 0.0 } else { self.deriv1(u) * drift };
        head + b * self.eval(u)
    }
}

/// How a returned constant relates to the true maximum of `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormKind {
    /// Equal to the maximum.
    Exact,
    /// An upper bound of the maximum.
    UpperBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CConstant {
    /// The certified maximum of `f` over `[0, infinity)`.
    pub c: f64,
    /// `max{c^2 / beta^2, c^2 / (4 (beta - B)^2)}`, or the extended bracket when `B >= beta`.
    pub u0: f64,
    /// `true` when `B >= beta` forced a bracket beyond the two-term formula.
    pub extended_bracket: bool,
    /// Location of the maximum.
    pub argmax: f64,
    pub closed_form: Option<(f64, ClosedFormKind)>,
}

const GRID_POINTS: usize = 4096;

/// Right end of an interval beyond which `f' <= 0`.
fn search_bracket(phi: &PhiFunction, c: f64, beta: f64, b: f64) -> (f64, bool) {
    let two_term = |b: f64| (c * c / (beta * beta)).max(c * c / (4.0 * (beta - b) * (beta - b)));
    if b < beta {
        return (two_term(b), false);
    }
    let u = match *phi {
        // f = c p u^{p-1/2} + (B - p beta) u^p has its only critical point here.
        PhiFunction::Power { p } => {
            let r = c * (p - 0.5) / (p * beta - b);
            r * r
        }
        // For u >= 1: c sqrt(u) <= c^2/(2 beta) + beta u / 2 and c / (2 sqrt(u)) <= c / 2.
        PhiFunction::Exponential => {
            let tail = 2.0 * (c * c / (2.0 * beta) + 0.5 * c + b - beta) / beta;
            tail.max(1.0).max(c * c / (beta * beta))
        }
        PhiFunction::Xlog => unreachable!("B < beta enforced for L_phi = 1"),
    };
    (u, true)
}

/// Maximum of `f` on `[0, u_b]`: a grid uniform in `sqrt(u)` refined by
/// golden-section search around the best cell.
fn maximize_f(phi: &PhiFunction, c: f64, beta: f64, b: f64, u_b: f64) -> (f64, f64) {
    let f = |u: f64| phi.lemma_f(u, c, beta, b);
    let s_b = u_b.sqrt();
    let node = |j: usize| {
        let s = s_b * j as f64 / GRID_POINTS as f64;
        s * s
    };
    let (mut best_j, mut best) = (0usize, f(0.0));
    for j in 1..=GRID_POINTS {
        let v = f(node(j));
        if v > best {
            best = v;
            best_j = j;
        }
    }
    let lo = node(best_j.saturating_sub(1));
    let hi = node((best_j + 1).min(GRID_POINTS));
    let (u_star, v_star) = golden_section_max(f, lo, hi, 1e-12 * u_b.max(1.0));
    if v_star > best {
        (u_star, v_star)
    } else {
        (node(best_j), best)
    }
}

/// `C(c, beta, B) = max_{u >= 0} phi'(u) (c sqrt(u) - beta u) + B phi(u)`.
pub fn c_constant(phi: &PhiFunction, c: f64, beta: f64, b: f64) -> Result<CConstant> {
    phi.validate()?;
    let limit = beta * phi.l_phi();
    if !(c >= 0.0 && c.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("need c >= 0 and beta > 0, got c = {c}, beta = {beta}")));
    }
    if !(b > 0.0 && b < limit) {
        return Err(Error::ConstantHypothesis { b, limit });
    }
    let (u0, extended_bracket) = search_bracket(phi, c, beta, b);
    let (argmax, value) = maximize_f(phi, c, beta, b, u0);
    Ok(CConstant {
        c: value,
        u0,
        extended_bracket,
        argmax,
        closed_form: closed_form(phi, c, beta, b),
    })
}

/// Known closed forms of `C(c, beta, B)`.
pub fn closed_form(phi: &PhiFunction, c: f64, beta: f64, b: f64) -> Option<(f64, ClosedFormKind)> {
    match *phi {
        PhiFunction::Power { p } => {
            let r = (p - 0.5) / (p * beta - b);
            Some((0.5 * c.powf(2.0 * p) * r.powf(2.0 * p - 1.0), ClosedFormKind::Exact))
        }
        PhiFunction::Exponential if b == 0.5 * beta => {
            Some((0.5 * beta * (c * c / (beta * beta)).exp(), ClosedFormKind::Exact))
        }
        PhiFunction::Xlog => {
            let g = beta - b;
            Some((0.25 * c * c * (c * c / (g * g * g) + 1.0 / beta), ClosedFormKind::UpperBound))
        }
        PhiFunction::Exponential => None,
    }
}

/// `(K_phi(t_k), K_{phi,beta,a}(t_k))` with `K_phi = phi(2 |W0|^2)` and
/// `K_{phi,beta,a} = phi(2 a(W0*)^2 / beta^2)`. Overflow shows up as `inf`.
pub fn k_functions(path: &SamplePath, phi: &PhiFunction, beta: f64, bound: &BoundFn) -> Vec<(f64, f64)> {
    (0..path.grid().n_nodes())
        .map(|k| {
            let r = norm(path.w0(k));
            let a = bound.eval(path.running_max0()[k]);
            (phi.eval(2.0 * r * r), phi.eval(2.0 * a * a / (beta * beta)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhiBoundReport {
    pub nodes: usize,
    /// Violations of the displayed bound: `phi(4 |x|^2)` with `K` at factor 2.
    pub violations: usize,
    /// Violations of the derivation's last line: `phi(2 |x|^2)` with `K` at factor 2.
    pub violations_sharp: usize,
    /// Violations of the convexity-consistent form: every argument at factor 4.
    pub violations_corrected: usize,
    /// Nodes whose right side overflowed to `inf`.
    pub overflow_nodes: usize,
    pub first_overflow: Option<usize>,
    pub max_ratio: f64,
    pub max_ratio_sharp: f64,
    pub max_ratio_corrected: f64,
}

impl PhiBoundReport {
    pub fn merge(&mut self, o: &PhiBoundReport) {
        self.nodes += o.nodes;
        self.violations += o.violations;
        self.violations_sharp += o.violations_sharp;
        self.violations_corrected += o.violations_corrected;
        self.overflow_nodes += o.overflow_nodes;
        if self.first_overflow.is_none() {
            self.first_overflow = o.first_overflow;
        }
        self.max_ratio = self.max_ratio.max(o.max_ratio);
        self.max_ratio_sharp = self.max_ratio_sharp.max(o.max_ratio_sharp);
        self.max_ratio_corrected = self.max_ratio_corrected.max(o.max_ratio_corrected);
    }
}

/// Checks `phi(|X(t)|^2) <= e^{-beta t}/2 phi(4|x|^2) + K_phi(t)/2 + (beta t / 2) K_{phi,beta,a}(t)`
/// with slack `1 + 10 dt`, together with two variants of the constants.
///
/// Splitting `X = Z + W0` gives `|X|^2 <= 2|Z|^2 + 2|W0|^2`, so convexity only yields
/// `phi(|X|^2) <= phi(4|Z|^2)/2 + phi(4|W0|^2)/2`; the corrected variant carries the
/// factor 4 into both `K` terms and is the provable one.
pub fn check_phi_bound(
    solution: &RegularizedSolution,
    path: &SamplePath,
    phi: &PhiFunction,
    model: &GalerkinModel,
    bound: &BoundFn,
) -> Result<PhiBoundReport> {
    if solution.grid() != path.grid() {
        return Err(Error::GridMismatch("solution and path use different grids".into()));
    }
    let beta = model.beta();
    let grid = path.grid();
    let slack = 1.0 + 10.0 * grid.dt();
    let x2 = path.x_start().norm().powi(2);
    let (start_wide, start_sharp) = (phi.eval(4.0 * x2), phi.eval(2.0 * x2));
    let ks = k_functions(path, phi, beta, bound);
    let mut r = PhiBoundReport {
        nodes: grid.n_nodes(),
        ..PhiBoundReport::default()
    };
    for (k, (kp, kpa)) in ks.into_iter().enumerate() {
        let t = grid.time(k);
        let e = (-beta * t).exp();
        let lhs = phi.eval(norm(solution.x(k)).powi(2));
        let tail = 0.5 * kp + 0.5 * beta * t * kpa;
        let w2 = norm(path.w0(k)).powi(2);
        let a = bound.eval(path.running_max0()[k]);
        let tail4 = 0.5 * phi.eval(4.0 * w2) + 0.5 * beta * t * phi.eval(4.0 * a * a / (beta * beta));
        for (rhs, viol, worst) in [
            (0.5 * e * start_wide + tail, &mut r.violations, &mut r.max_ratio),
            (0.5 * e * start_sharp + tail, &mut r.violations_sharp, &mut r.max_ratio_sharp),
            (0.5 * e * start_wide + tail4, &mut r.violations_corrected, &mut r.max_ratio_corrected),
        ] {
            if rhs > 0.0 && rhs.is_finite() {
                *worst = worst.max(lhs / rhs);
            }
            if !(lhs <= rhs * slack) {
                *viol += 1;
            }
        }
        if !tail.is_finite() {
            r.overflow_nodes += 1;
            r.first_overflow.get_or_insert(k);
        }
    }
    Ok(r)
}
