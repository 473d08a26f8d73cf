//! Catalog of maximal dissipative drifts.
//!
//! Every kind is represented only through its minimal section `F0`, its
//! resolvent `J_alpha = (I - alpha F)^{-1}` and the Yosida approximant
//! `F_alpha = (J_alpha - I) / alpha`. All shipped kinds are defined on the
//! whole space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dist, dot, norm, StateVector};
use crate::rng::{path_rng, std_normal};

/// A non-negative time profile `m: [0, T] -> [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Modulation {
    /// `m(t) = |sin t|`.
    AbsSin,
    /// `m(t) = values[j]` on `[breaks[j-1], breaks[j])`, with `values.len() == breaks.len() + 1`.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
}

impl Modulation {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Modulation::AbsSin => t.sin().abs(),
            Modulation::Piecewise { breaks, values } => {
                let j = breaks.partition_point(|&b| b <= t);
                values[j]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Modulation::Piecewise { breaks, values } = self {
            if values.len() != breaks.len() + 1 {
                return Err(Error::InvalidDrift(
                    "piecewise modulation needs one more value than breaks".into(),
                ));
            }
            if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidDrift("piecewise breaks must increase".into()));
            }
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidDrift("modulation values must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// The increasing function `a` with `|F0(t, x)| <= a(|x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundFn {
    Zero,
    Constant { value: f64 },
    /// `a(r) = coef * r^degree`.
    Power { coef: f64, degree: f64 },
}

impl BoundFn {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            BoundFn::Zero => 0.0,
            BoundFn::Constant { value } => value,
            BoundFn::Power { coef, degree } => {
                if degree == 0.0 {
                    coef
                } else {
                    coef * r.powf(degree)
                }
            }
        }
    }

    /// Largest integer `n <= n_max` with `a(n) < threshold`, or `None` if even `a(0)` is too large.
    pub fn max_level_below(&self, threshold: f64, n_max: u32) -> Option<u32> {
        if self.eval(0.0) >= threshold {
            return None;
        }
        let (mut lo, mut hi) = (0u32, n_max);
        if self.eval(hi as f64) < threshold {
            return Some(hi);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.eval(mid as f64) < threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }
}

/// A drift `F(t, x)` from the shipped catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    /// `F(x) = -g(|x|) x` with `g(r) = coef * r^exponent`; `exponent = 2` is the cubic drift.
    Radial { coef: f64, exponent: f64 },
    /// `F(x) = -d||x||_1`, the negative subdifferential of the l1 norm.
    L1Subgradient,
    /// `F(x) = -x / (epsilon + |x|)`.
    Saturating { epsilon: f64 },
    /// `F(t, x) = m(t) F_base(x)`.
    TimeModulated {
        base: Box<DriftSpec>,
        modulation: Modulation,
    },
}

const NEWTON_MAX_ITER: usize = 200;

impl DriftSpec {
    pub fn cubic() -> Self {
        DriftSpec::Radial {
            coef: 1.0,
            exponent: 2.0,
        }
    }

    pub fn linear() -> Self {
        DriftSpec::Radial {
            coef: 1.0,
            exponent: 0.0,
        }
    }

    pub fn saturating() -> Self {
        DriftSpec::Saturating { epsilon: 1.0 }
    }

    pub fn label(&self) -> String {
        match self {
            DriftSpec::Zero => "zero".into(),
            DriftSpec::Radial { coef, exponent } => format!("radial(coef={coef},exp={exponent})"),
            DriftSpec::L1Subgradient => "l1_subgradient".into(),
            DriftSpec::Saturating { epsilon } => format!("saturating(eps={epsilon})"),
            DriftSpec::TimeModulated { base, modulation } => {
                let m = match modulation {
                    Modulation::AbsSin => "abs_sin".to_string(),
                    Modulation::Piecewise { .. } => "piecewise".to_string(),
                };
                format!("time_modulated({},{m})", base.label())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DriftSpec::Zero | DriftSpec::L1Subgradient => Ok(()),
            DriftSpec::Radial { coef, exponent } => {
                if !(coef.is_finite() && *coef > 0.0) {
                    return Err(Error::InvalidDrift(format!("radial coef = {coef} must be positive")));
                }
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(Error::InvalidDrift(format!(
                        "radial exponent = {exponent} must be non-negative"
                    )));
                }
                Ok(())
            }
            DriftSpec::Saturating { epsilon } => {
                if !(epsilon.is_finite() && *epsilon > 0.0) {
                    return Err(Error::InvalidDrift(format!("epsilon = {epsilon} must be positive")));
                }
                Ok(())
            }
            DriftSpec::TimeModulated { base, modulation } => {
                modulation.validate()?;
                base.validate()
            }
        }
    }

    /// `true` when `F(t, .)` is single-valued everywhere.
    pub fn is_single_valued(&self) -> bool {
        match self {
            DriftSpec::L1Subgradient => false,
            DriftSpec::TimeModulated { base, .. } => base.is_single_valued(),
            _ => true,
        }
    }

    /// The time-independent part and the multiplier `m(t)`.
    fn split(&self, t: f64) -> (&DriftSpec, f64) {
        let mut spec = self;
        let mut m = 1.0;
        while let DriftSpec::TimeModulated { base, modulation } = spec {
            m *= modulation.eval(t);
            spec = base;
        }
        (spec, m)
    }

    /// The named closed form of `a` on a `dim`-dimensional truncation.
    pub fn bound_fn(&self, dim: usize) -> BoundFn {
        match self {
            DriftSpec::Zero => BoundFn::Zero,
            DriftSpec::Radial { coef, exponent } => BoundFn::Power {
                coef: *coef,
                degree: exponent + 1.0,
            },
            DriftSpec::L1Subgradient => BoundFn::Constant {
                value: (dim as f64).sqrt(),
            },
            DriftSpec::Saturating { .. } => BoundFn::Constant { value: 1.0 },
            DriftSpec::TimeModulated { base, .. } => base.bound_fn(dim),
        }
    }

    /// `a(r)` for a `dim`-dimensional state.
    pub fn radial_bound(&self, dim: usize, r: f64) -> f64 {
        self.bound_fn(dim).eval(r)
    }

    /// Least-norm element `F0(t, x)` of `F(t, x)`.
    pub fn minimal_section(&self, t: f64, x: &[f64]) -> StateVector {
        let mut out = vec![0.0; x.len()];
        self.minimal_section_into(t, x, &mut out);
        out.into()
    }

    pub fn minimal_section_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (base, m) = self.split(t);
        match base {
            DriftSpec::Zero | DriftSpec::TimeModulated { .. } => out.fill(0.0),
            DriftSpec::Radial { coef, exponent } => {
                let r = norm(x);
                let g = if *exponent == 0.0 { *coef } else { coef * r.powf(*exponent) };
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -m * g * v;
                }
            }
            DriftSpec::L1Subgradient => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = if *v > 0.0 {
                        -m
                    } else if *v < 0.0 {
                        m
                    } else {
                        0.0
                    };
                }
            }
            DriftSpec::Saturating { epsilon } => {
                let r = norm(x);
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -m * v / (epsilon + r);
                }
            }
        }
    }

    /// `J_alpha(t, x)`.
    pub fn resolvent(&self, t: f64, alpha: f64, x: &[f64]) -> Result<StateVector> {
        check_alpha(alpha)?;
        let (base, m) = self.split(t);
        let beta = alpha * m;
        let mut out = x.to_vec();
        match base {
            DriftSpec::Zero | DriftSpec::TimeModulated { .. } => {}
            _ if beta == 0.0 => {}
            DriftSpec::L1Subgradient => {
                for v in out.iter_mut() {
                    *v = v.signum() * (v.abs() - beta).max(0.0);
                }
            }
            DriftSpec::Radial { .. } | DriftSpec::Saturating { .. } => {
                let r = norm(x);
                if r > 0.0 {
                    let s = radial_root(base, beta, r)?;
                    let scale = s / r;
                    for v in out.iter_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        Ok(out.into())
    }

    /// `F_alpha(t, x)`.
    pub fn yosida_f(&self, t: f64, alpha: f64, x: &[f64]) -> Result<StateVector> {
        let mut out = vec![0.0; x.len()];
        self.yosida_f_into(t, alpha, x, &mut out)?;
        Ok(out.into())
    }

    /// Writes `F_alpha(t, x)` into `out` without allocating.
    pub fn yosida_f_into(&self, t: f64, alpha: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_alpha(alpha)?;
        let (base, m) = self.split(t);
        let beta = alpha * m;
        match base {
            DriftSpec::Zero | DriftSpec::TimeModulated { .. } => out.fill(0.0),
            _ if m == 0.0 => out.fill(0.0),
            DriftSpec::L1Subgradient => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -(v / alpha).clamp(-m, m);
                }
            }
            DriftSpec::Radial { .. } | DriftSpec::Saturating { .. } => {
                let r = norm(x);
                if r == 0.0 {
                    out.fill(0.0);
                } else {
                    // F_alpha = -(r - s) / (alpha r) x = -m k(s) / r x, using s + beta k(s) = r.
                    let s = radial_root(base, beta, r)?;
                    let scale = -m * profile(base, s) / r;
                    for (o, v) in out.iter_mut().zip(x) {
                        *o = scale * v;
                    }
                }
            }
        }
        Ok(())
    }

    /// `|J - alpha F0(t, J) - x|` at `J = J_alpha(t, x)`.
    pub fn resolvent_residual(&self, t: f64, alpha: f64, x: &[f64]) -> Result<f64> {
        let j = self.resolvent(t, alpha, x)?;
        let f0 = self.minimal_section(t, &j);
        Ok(j.iter()
            .zip(f0.iter())
            .zip(x)
            .map(|((j, f), x)| (j - alpha * f - x).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Radial profile `k(s) = g(s) s` and its derivative.
fn profile(base: &DriftSpec, s: f64) -> f64 {
    match *base {
        DriftSpec::Radial { coef, exponent } => coef * s.powf(exponent + 1.0),
        DriftSpec::Saturating { epsilon } => s / (epsilon + s),
        _ => 0.0,
    }
}

fn profile_deriv(base: &DriftSpec, s: f64) -> f64 {
    match *base {
        DriftSpec::Radial { coef, exponent } => coef * (exponent + 1.0) * s.powf(exponent),
        DriftSpec::Saturating { epsilon } => epsilon / ((epsilon + s) * (epsilon + s)),
        _ => 0.0,
    }
}

/// Solves `s + beta k(s) = r` on `[0, r]`.
///
/// `h(s) = s + beta k(s) - r` is increasing; it is convex for power profiles
/// and concave for the saturating one. Newton started on the side where the
/// tangent stays on one side of the root therefore converges monotonically,
/// and the bracket guards against rounding.
fn radial_root(base: &DriftSpec, beta: f64, r: f64) -> Result<f64> {
    let h = |s: f64| s + beta * profile(base, s) - r;
    let mut s = match *base {
        DriftSpec::Radial { coef, exponent } => {
            if exponent == 0.0 {
                return Ok(r / (1.0 + beta * coef));
            }
            r.min((r / (beta * coef)).powf(1.0 / (exponent + 1.0)))
        }
        DriftSpec::Saturating { .. } => (r - beta).max(0.0),
        _ => return Ok(r),
    };
    let (mut lo, mut hi) = (0.0f64, r);
    for _ in 0..NEWTON_MAX_ITER {
        let hs = h(s);
        if hs == 0.0 {
            return Ok(s);
        }
        if hs > 0.0 {
            hi = hi.min(s);
        } else {
            lo = lo.max(s);
        }
        let mut next = s - hs / (1.0 + beta * profile_deriv(base, s));
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 4.0 * f64::EPSILON * s.abs().max(f64::MIN_POSITIVE) || hi - lo <= f64::EPSILON * hi {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::ResolventDiverged { radius: r, alpha: beta })
}

/// Sampled dissipativity and Lipschitz diagnostics for one drift.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativityReport {
    pub n_pairs: usize,
    /// `max <F0(t,x1) - F0(t,x2), x1 - x2>`; must be `<= 0`.
    pub max_monotonicity: f64,
    /// Per alpha: `max |F_alpha(x1) - F_alpha(x2)| / |x1 - x2|`; must be `<= 2 / alpha`.
    pub lipschitz: Vec<(f64, f64)>,
    /// `max (|F_alpha(x)| - |F0(x)|)`; must be `<= 0`.
    pub max_yosida_excess: f64,
}

impl DissipativityReport {
    pub fn passed(&self) -> bool {
        self.max_monotonicity <= 0.0
            && self.max_yosida_excess <= 0.0
            && self.lipschitz.iter().all(|(a, l)| *l <= 2.0 / a)
    }
}

/// Random state with a log-uniform scale in `[e^-3, e^2]`.
pub fn sample_state<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let scale = rng.random_range(-3.0f64..2.0).exp();
    (0..dim).map(|_| scale * std_normal(rng)).collect()
}

pub fn check_dissipative(
    spec: &DriftSpec,
    dim: usize,
    horizon: f64,
    alphas: &[f64],
    seed: u64,
    n_pairs: usize,
) -> Result<DissipativityReport> {
    if n_pairs == 0 {
        return Err(Error::Empty("n_pairs"));
    }
    let mut rng = path_rng(seed);
    let mut max_mono = f64::NEG_INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    let mut lipschitz: Vec<(f64, f64)> = alphas.iter().map(|&a| (a, 0.0)).collect();
    for _ in 0..n_pairs {
        let t = rng.random_range(0.0..horizon);
        let x1 = sample_state(&mut rng, dim);
        let x2 = sample_state(&mut rng, dim);
        let f1 = spec.minimal_section(t, &x1);
        let f2 = spec.minimal_section(t, &x2);
        let df: Vec<f64> = f1.iter().zip(f2.iter()).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
        max_mono = max_mono.max(dot(&df, &dx));
        let dxn = norm(&dx);
        for (alpha, worst) in lipschitz.iter_mut() {
            let g1 = spec.yosida_f(t, *alpha, &x1)?;
            let g2 = spec.yosida_f(t, *alpha, &x2)?;
            if dxn > 0.0 {
                *worst = worst.max(dist(&g1, &g2) / dxn);
            }
            max_excess = max_excess.max(g1.norm() - f1.norm());
        }
    }
    Ok(DissipativityReport {
        n_pairs,
        max_monotonicity: max_mono,
        lipschitz,
        max_yosida_excess: if alphas.is_empty() { 0.0 } else { max_excess },
    })
}
