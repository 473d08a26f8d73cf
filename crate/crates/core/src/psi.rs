//! Increasing functions `Psi` for the uniform-integrability statistic
//! `E[rho Psi(rho)]`, and the numerical check of `int Psi'(y) p(y) dy`.
//!
//! Values are computed as `ln Psi(e^{ln_y})` so that arguments far beyond
//! the `f64` range (the cubic drift needs `ln y` in the thousands) stay usable.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::girsanov::exp_mean;
use crate::quad::GaussRule;
use crate::stats::Estimate;
use crate::tail::TailProbability;

/// `ln(e^l + s)` for `s > -e^l`, and `-inf` when the sum is not positive.
fn ln_add(l: f64, s: f64) -> f64 {
    if l < 700.0 {
        let v = l.exp() + s;
        if v > 0.0 {
            v.ln()
        } else {
            f64::NEG_INFINITY
        }
    } else {
        l + (s * (-l).exp()).ln_1p()
    }
}

/// `ln(1 + e^l)`.
fn softplus(l: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p()
}

/// Smooth step on `[0, 1]`.
fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let (a, b) = ((-1.0 / u).exp(), (-1.0 / (1.0 - u)).exp());
        a / (a + b)
    }
}

/// Plateau bump on `[0, 3]`, equal to 1 on `[1, 2]`.
pub fn bump(u: f64) -> f64 {
    if u <= 0.0 || u >= 3.0 {
        0.0
    } else if u < 1.0 {
        smoothstep(u)
    } else if u <= 2.0 {
        1.0
    } else {
        smoothstep(3.0 - u)
    }
}

/// `int_0^v bump`. The smooth step integrates to 1/2 on `[0, 1]` by symmetry.
pub fn bump_integral(v: f64, rule: &GaussRule) -> f64 {
    let step = |x: f64| rule.integrate(0.0, x, smoothstep);
    if v <= 0.0 {
        0.0
    } else if v < 1.0 {
        step(v)
    } else if v <= 2.0 {
        0.5 + (v - 1.0)
    } else if v < 3.0 {
        2.0 - step(3.0 - v)
    } else {
        2.0
    }
}

/// `Psi = sum_k int_0^{y - y_k} bump`, with knots `y_k` spaced more than 3 apart.
#[derive(Debug, Clone)]
pub struct BumpPsi {
    ln_knots: Vec<f64>,
    /// The table ran out before the knot cap was reached.
    pub exhausted: bool,
    rule: Arc<GaussRule>,
}

impl BumpPsi {
    pub fn ln_knots(&self) -> &[f64] {
        &self.ln_knots
    }

    fn locate(&self, ln_y: f64) -> Option<(usize, f64)> {
        let m = self.ln_knots.partition_point(|&l| l < ln_y);
        if m == 0 {
            return None;
        }
        let lk = self.ln_knots[m - 1];
        let v = (lk + (ln_y - lk).exp_m1().ln()).exp();
        Some((m, v))
    }

    pub fn psi(&self, ln_y: f64) -> f64 {
        match self.locate(ln_y) {
            None => 0.0,
            Some((m, v)) => 2.0 * (m - 1) as f64 + bump_integral(v, &self.rule),
        }
    }

    pub fn psi_prime(&self, ln_y: f64) -> f64 {
        self.locate(ln_y).map_or(0.0, |(_, v)| bump(v))
    }

    /// `sum_k int_0^3 bump(u) p(y_k + u) du` and the bound `sum_k 3/k^2`.
    pub fn integral_against(&self, tail: &dyn TailProbability) -> (f64, f64) {
        let mut total = 0.0;
        let mut bound = 0.0;
        for (i, &lk) in self.ln_knots.iter().enumerate() {
            let k = (i + 1) as f64;
            let f = |u: f64| bump(u) * tail.p_ln(ln_add(lk, u));
            total += self.rule.integrate(0.0, 1.0, f) + self.rule.integrate(1.0, 2.0, f) + self.rule.integrate(2.0, 3.0, f);
            bound += 3.0 / (k * k);
        }
        (total, bound)
    }
}

/// Greedy knots from a `(ln y, p)` table sorted by `ln y`: `y_k` is the first
/// table value with `p <= 1/k^2` and `y_k > y_{k-1} + 3`.
pub fn build_psi_bump(table: &[(f64, f64)], max_knots: usize) -> Result<PsiSpec> {
    if table.is_empty() {
        return Err(Error::Empty("p table"));
    }
    let mut knots: Vec<f64> = Vec::new();
    let mut idx = 0;
    while knots.len() < max_knots {
        let k = (knots.len() + 1) as f64;
        let level = 1.0 / (k * k);
        let found = table[idx..].iter().position(|&(l, p)| {
            p <= level && knots.last().is_none_or(|&prev| l - prev > (3.0 * (-prev).exp()).ln_1p())
        });
        match found {
            Some(j) => {
                knots.push(table[idx + j].0);
                idx += j + 1;
            }
            None => break,
        }
    }
    let exhausted = knots.len() < max_knots;
    Ok(PsiSpec::Bump(BumpPsi {
        ln_knots: knots,
        exhausted,
        rule: Arc::new(GaussRule::new(32)),
    }))
}

#[derive(Clone)]
pub enum PsiSpec {
    /// `Psi(y) = y`. Not admissible; used to test the change-of-measure identity.
    Identity,
    Constant(f64),
    /// `Psi(y) = exp((ln(1 + y))^delta)`.
    ClosedForm { delta: f64 },
    /// `Psi(y) = 1 / sqrt(p(y))`.
    Envelope { tail: Arc<dyn TailProbability> },
    /// `Psi_delta(y) = int m(u) / sqrt(p(y + delta (u - 1))) du` with
    /// `m(u) = (35/32)(1 - u^2)^3` on `[-1, 1]` and `p(s < 0) = p(0)`.
    Mollified {
        tail: Arc<dyn TailProbability>,
        delta: f64,
        rule: Arc<GaussRule>,
    },
    Bump(BumpPsi),
}

impl fmt::Debug for PsiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn psi_closed_form(delta: f64) -> Result<PsiSpec> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("closed-form delta {delta} must lie in (0, 1]")));
    }
    Ok(PsiSpec::ClosedForm { delta })
}

pub fn build_psi_envelope(tail: Arc<dyn TailProbability>) -> PsiSpec {
    PsiSpec::Envelope { tail }
}

pub fn build_psi_mollified(tail: Arc<dyn TailProbability>, delta: f64) -> Result<PsiSpec> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("mollifier width {delta} must be positive")));
    }
    Ok(PsiSpec::Mollified {
        tail,
        delta,
        rule: Arc::new(GaussRule::new(64)),
    })
}

impl PsiSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Constant(c) => format!("constant({c})"),
            Self::ClosedForm { delta } => format!("closed_form({delta})"),
            Self::Envelope { .. } => "envelope".into(),
            Self::Mollified { delta, .. } => format!("mollified({delta})"),
            Self::Bump(b) => format!("bump({} knots)", b.ln_knots.len()),
        }
    }

    /// Whether `int Psi' p <= sqrt(p(0))` is expected.
    pub fn envelope_respecting(&self) -> bool {
        matches!(self, Self::Constant(_) | Self::Envelope { .. } | Self::Mollified { .. })
    }

    /// `ln Psi(e^{ln_y})`; `ln_y = -inf` means `y = 0`.
    pub fn ln_psi(&self, ln_y: f64) -> f64 {
        match self {
            Self::Identity => ln_y,
            Self::Constant(c) => c.ln(),
            Self::ClosedForm { delta } => softplus(ln_y).powf(*delta),
            Self::Envelope { tail } => -0.5 * tail.ln_p(ln_y),
            Self::Mollified { tail, delta, rule } => {
                let terms: Vec<f64> = rule
                    .nodes()
                    .iter()
                    .zip(rule.weights())
                    .map(|(&u, &w)| {
                        let m = 35.0 / 32.0 * (1.0 - u * u).powi(3);
                        (w * m).ln() - 0.5 * tail.ln_p(ln_add(ln_y, delta * (u - 1.0)))
                    })
                    .collect();
                let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
            }
            Self::Bump(b) => b.psi(ln_y).ln(),
        }
    }

    pub fn psi(&self, y: f64) -> f64 {
        let l = if y > 0.0 { y.ln() } else { f64::NEG_INFINITY };
        self.ln_psi(l).exp()
    }

    /// `Psi'(e^{ln_y})`; a centred difference in `y` for the tail-derived variants.
    pub fn psi_prime(&self, ln_y: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Constant(_) => 0.0,
            Self::ClosedForm { delta } => {
                let s = softplus(ln_y);
                if s == 0.0 {
                    return if *delta < 1.0 { f64::INFINITY } else { 1.0 };
                }
                (s.powf(*delta) + delta.ln() + (delta - 1.0) * s.ln() - s).exp()
            }
            Self::Bump(b) => b.psi_prime(ln_y),
            Self::Envelope { .. } | Self::Mollified { .. } => {
                let h = 1e-6;
                let y = ln_y.exp();
                if !y.is_finite() {
                    return 0.0;
                }
                let (a, b) = ((y - h).max(0.0), y + h);
                (self.psi(b) - self.psi(a)) / (b - a)
            }
        }
    }
}

/// Nodes for the Stieltjes sum.
#[derive(Debug, Clone, Copy)]
pub struct IntegralGrid {
    pub y_min: f64,
    /// Geometric spacing up to here.
    pub y_switch: f64,
    pub ln_y_max: f64,
    pub n_low: usize,
    /// Uniform in `ln ln y` above `y_switch`.
    pub n_high: usize,
}

impl Default for IntegralGrid {
    fn default() -> Self {
        Self {
            y_min: 1e-8,
            y_switch: 1e8,
            ln_y_max: 1e6,
            n_low: 20_000,
            n_high: 4_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiIntegralReport {
    pub psi: String,
    pub method: &'static str,
    pub integral: f64,
    pub remainder: f64,
    /// `ln(integral + remainder)`, finite even where the sum overflows `f64`.
    pub ln_total: f64,
    pub bound: Option<f64>,
    pub passed: bool,
}

/// `int_0^inf Psi'(y) p(y) dy`. Bump functions use the knot sum; everything
/// else a Stieltjes trapezoid in `ln y` with a geometric tail remainder. Just
/// after a jump of `p` the right value is used, so steps of `p` and of a
/// `Psi` derived from `p` combine at the post-jump level.
pub fn check_psi_integral(psi: &PsiSpec, tail: &dyn TailProbability, grid: IntegralGrid) -> PsiIntegralReport {
    if let PsiSpec::Bump(b) = psi {
        let (integral, bound) = b.integral_against(tail);
        return PsiIntegralReport {
            psi: psi.label(),
            method: "knot_sum",
            integral,
            remainder: 0.0,
            ln_total: integral.ln(),
            bound: Some(bound),
            passed: integral.is_finite() && integral <= bound,
        };
    }
    let ln_switch = grid.y_switch.ln().min(grid.ln_y_max);
    let mut nodes: Vec<(f64, bool)> = vec![(f64::NEG_INFINITY, false)];
    let (a, b) = (grid.y_min.ln(), ln_switch);
    for i in 0..grid.n_low {
        nodes.push((a + (b - a) * i as f64 / (grid.n_low - 1) as f64, false));
    }
    if grid.ln_y_max > ln_switch {
        let (a, b) = (ln_switch.ln(), grid.ln_y_max.ln());
        for i in 1..grid.n_high {
            nodes.push(((a + (b - a) * i as f64 / (grid.n_high - 1) as f64).exp(), false));
        }
    }
    for bp in tail.ln_breakpoints() {
        if bp > grid.y_min.ln() && bp < grid.ln_y_max {
            nodes.push((bp, false));
            nodes.push((bp + 1e-10 * bp.abs().max(1.0), true));
        }
    }
    nodes.sort_by(|x, y| x.0.total_cmp(&y.0));

    let vals: Vec<(f64, f64)> = nodes.iter().map(|&(l, _)| (psi.ln_psi(l), tail.ln_p(l))).collect();
    // ln of each interval's increment; -inf for empty intervals
    let ln_inc: Vec<f64> = (1..nodes.len())
        .map(|j| {
            let ((l0, p0), (l1, p1)) = (vals[j - 1], vals[j]);
            let lp = if nodes[j].1 {
                p1
            } else {
                p0.max(p1) + (-(p0 - p1).abs()).exp().ln_1p() - std::f64::consts::LN_2
            };
            if l1 == f64::NEG_INFINITY || !(l1 > l0) || lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                l1 + lp + (-(l0 - l1).exp_m1()).ln()
            }
        })
        .collect();
    let ln_integral = ln_sum(&ln_inc);
    // Geometric extrapolation from the last two intervals; a flat end means Psi has
    // stopped growing and nothing remains.
    let ln_remainder = match ln_inc.len() {
        n if n >= 2 => {
            let (prev, last) = (ln_inc[n - 2], ln_inc[n - 1]);
            if last == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else if last < prev {
                let ln_r = last - prev;
                last + ln_r - (-ln_r.exp_m1()).ln()
            } else {
                f64::INFINITY
            }
        }
        _ => f64::NEG_INFINITY,
    };
    let ln_total = ln_add2(ln_integral, ln_remainder);
    let total = ln_total.exp();
    let (bound, passed) = if psi.envelope_respecting() {
        let bound = tail.p_ln(f64::NEG_INFINITY).sqrt() * (1.0 + 1e-3);
        (Some(bound), total <= bound)
    } else {
        (None, ln_total < f64::INFINITY)
    };
    PsiIntegralReport {
        psi: psi.label(),
        method: "stieltjes_trapezoid",
        integral: ln_integral.exp(),
        remainder: ln_remainder.exp(),
        ln_total,
        bound,
        passed,
    }
}

fn ln_add2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    if m == f64::INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn ln_sum(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    pub psi: String,
    /// `E[rho Psi(rho)]` over OU paths.
    pub route1: Estimate,
    /// `E[Psi(rho_tilde)]` over regularized paths.
    pub route2: Estimate,
    pub combined_stderr: f64,
    pub agree: bool,
    /// Paths where `rho Psi(rho)` or `Psi(rho_tilde)` overflows `f64`.
    pub overflow_route1: Vec<usize>,
    pub overflow_route2: Vec<usize>,
}

fn route_estimate(logs: &[f64]) -> (Estimate, Vec<usize>) {
    let overflow = logs
        .iter()
        .enumerate()
        .filter(|(_, l)| !(**l < 709.0))
        .map(|(i, _)| i)
        .collect();
    let (mean, stderr) = exp_mean(logs);
    (
        Estimate {
            mean,
            stderr,
            n: logs.len() as u64,
        },
        overflow,
    )
}

/// Both sides of `E[rho Psi(rho)] = E[Psi(rho_tilde)]`, agreeing when the
/// difference is within 4 combined standard errors.
pub fn entropy_statistic(log_rhos: &[f64], log_rho_tildes: &[f64], psi: &PsiSpec) -> Result<EntropyReport> {
    if log_rhos.is_empty() || log_rho_tildes.is_empty() {
        return Err(Error::Empty("density samples"));
    }
    let r1: Vec<f64> = log_rhos.iter().map(|&l| l + psi.ln_psi(l)).collect();
    let r2: Vec<f64> = log_rho_tildes.iter().map(|&l| psi.ln_psi(l)).collect();
    let (route1, overflow_route1) = route_estimate(&r1);
    let (route2, overflow_route2) = route_estimate(&r2);
    let combined_stderr = route1.stderr.hypot(route2.stderr);
    let diff = (route1.mean - route2.mean).abs();
    let agree = overflow_route1.is_empty()
        && overflow_route2.is_empty()
        && route1.mean.is_finite()
        && route2.mean.is_finite()
        && (diff <= 4.0 * combined_stderr || diff <= 1e-12 * route1.mean.abs().max(1.0));
    Ok(EntropyReport {
        psi: psi.label(),
        route1,
        route2,
        combined_stderr,
        agree,
        overflow_route1,
        overflow_route2,
    })
}

/// `max / min` of a list of positive estimates; `inf` if any is non-positive or non-finite.
pub fn stability_ratio(values: &[f64]) -> f64 {
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return f64::INFINITY;
    }
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail::{ConstantTail, InverseTail};

    #[test]
    fn closed_form_values() {
        let psi = psi_closed_form(1.0).unwrap();
        for y in [0.0, 0.5, 3.0, 1e5] {
            assert!((psi.psi(y) - (1.0 + y)).abs() < 1e-9 * (1.0 + y));
        }
        let psi = psi_closed_form(0.5).unwrap();
        assert!((psi.psi(std::f64::consts::E - 1.0) - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(psi.psi(0.0), 1.0);
        assert!(psi_closed_form(0.0).is_err() && psi_closed_form(1.5).is_err());
        // derivative against a difference quotient
        let (y, h) = (2.0f64, 1e-6);
        let fd = (psi.psi(y + h) - psi.psi(y - h)) / (2.0 * h);
        assert!((psi.psi_prime(y.ln()) - fd).abs() < 1e-6);
    }

    #[test]
    fn bump_shape() {
        let rule = GaussRule::new(32);
        assert!((bump_integral(1.0, &rule) - 0.5).abs() < 1e-12);
        assert!((bump_integral(3.0, &rule) - 2.0).abs() < 1e-12);
        assert!((bump_integral(2.5, &rule) - (2.0 - bump_integral(0.5, &rule))).abs() < 1e-14);
        let whole = rule.integrate(0.0, 1.0, bump) + rule.integrate(1.0, 2.0, bump) + rule.integrate(2.0, 3.0, bump);
        assert!((whole - 2.0).abs() < 1e-10);
    }

    #[test]
    fn bump_knots_for_inverse_tail() {
        let table: Vec<(f64, f64)> = (1..=20_000).map(|i| {
            let y = i as f64 * 0.05;
            (y.ln(), InverseTail.p(y))
        }).collect();
        let psi = build_psi_bump(&table, 30).unwrap();
        let PsiSpec::Bump(b) = &psi else { unreachable!() };
        let ys: Vec<f64> = b.ln_knots().iter().map(|l| l.exp()).collect();
        assert!((ys[0] - 0.05).abs() < 1e-12);
        for (k, w) in ys.windows(2).enumerate() {
            assert!(w[1] > w[0] + 3.0);
            // p(y_k) <= 1/k^2 and y_k is the first such grid point after the spacing gap
            let kk = (k + 2) as f64;
            assert!(1.0 / w[1] <= 1.0 / (kk * kk) + 1e-12);
            assert!(w[1] <= (kk * kk).max(w[0] + 3.0) + 0.05 + 1e-9);
        }
        assert_eq!(psi.psi(0.0), 0.0);
        let vals: Vec<f64> = (0..2000).map(|i| psi.psi(i as f64 * 0.5)).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert!(vals[1999] > 2.0 * 25.0);
        let rep = check_psi_integral(&psi, &InverseTail, IntegralGrid::default());
        assert!(rep.passed && rep.integral < rep.bound.unwrap());
        assert!(rep.bound.unwrap() < std::f64::consts::PI.powi(2) / 2.0);
    }

    #[test]
    fn envelope_identity_for_inverse_tail() {
        let psi = build_psi_envelope(Arc::new(InverseTail));
        let rep = check_psi_integral(&psi, &InverseTail, IntegralGrid::default());
        assert!(((rep.integral + rep.remainder) - 1.0).abs() < 1e-3, "{rep:?}");
    }

    #[test]
    fn constant_psi_and_tail() {
        let rep = check_psi_integral(&PsiSpec::Constant(3.0), &InverseTail, IntegralGrid::default());
        assert_eq!(rep.integral, 0.0);
        let psi = build_psi_mollified(Arc::new(ConstantTail(0.25)), 0.1).unwrap();
        for y in [0.0, 0.05, 1.0, 1e30] {
            assert!((psi.psi(y) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mollified_converges_to_envelope() {
        let env = build_psi_envelope(Arc::new(InverseTail));
        let fine = build_psi_mollified(Arc::new(InverseTail), 1e-3).unwrap();
        assert!((fine.psi(0.5) - 1.0).abs() < 1e-15);
        for y in [2.0, 7.0, 30.0] {
            let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|&d| (build_psi_mollified(Arc::new(InverseTail), d).unwrap().psi(y) - env.psi(y)).abs())
                .collect();
            assert!(errs[2] < 1e-3 && errs[1] < errs[0] && errs[2] < errs[1] + 1e-15);
        }
        let psi = build_psi_mollified(Arc::new(InverseTail), 0.1).unwrap();
        let rep = check_psi_integral(&psi, &InverseTail, IntegralGrid::default());
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn zero_drift_routes_give_psi_of_one() {
        let zeros = vec![0.0; 50];
        for psi in [PsiSpec::Identity, psi_closed_form(0.5).unwrap()] {
            let rep = entropy_statistic(&zeros, &zeros, &psi).unwrap();
            assert!((rep.route1.mean - psi.psi(1.0)).abs() < 1e-12);
            assert_eq!(rep.route1.mean, rep.route2.mean);
            assert!(rep.agree);
        }
    }

    #[test]
    fn envelope_of_bounded_drift_tail() {
        use crate::drift::BoundFn;
        use crate::tail::TailFunction;
        let maxima: Vec<f64> = (0..200).map(|i| 2.0 + i as f64 * 0.01).collect();
        let tail = Arc::new(TailFunction::new(BoundFn::Constant { value: 1.0 }, 1.0, 1.0, maxima, 100).unwrap());
        for psi in [build_psi_envelope(tail.clone()), build_psi_mollified(tail.clone(), 0.1).unwrap()] {
            let rep = check_psi_integral(&psi, tail.as_ref(), IntegralGrid::default());
            assert!(rep.passed && rep.integral.is_finite(), "{rep:?}");
            // p = 1 up to ln y = 5, then 1/y
            let exact = (-5.0f64).exp() * ((2.5f64).exp() - 1.0) + (-2.5f64).exp();
            assert!((rep.integral + rep.remainder - exact).abs() < 2e-3, "{rep:?} vs {exact}");
        }
    }

    #[test]
    fn huge_arguments_stay_finite() {
        let psi = psi_closed_form(0.5).unwrap();
        assert!((psi.ln_psi(1e4) - 100.0).abs() < 1e-9);
        assert!(ln_add(2000.0, 3.0) == 2000.0);
        assert!(ln_add(0.0, -2.0) == f64::NEG_INFINITY);
    }
}
