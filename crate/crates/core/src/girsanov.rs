//! Girsanov exponents along simulated paths.
//!
//! `zeta` uses the OU path `W_x` with the noise increments that generated it;
//! `rho_tilde` uses `X_alpha` with the same increments and a plus sign on the
//! quadratic term. Both are left-point (Ito) sums and are kept in log space.

use serde::Serialize;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::integrator::{RegularizedSolution, StoppingRecord};
use crate::model::GalerkinModel;
use crate::ou::SamplePath;
use crate::stats::MeanAccumulator;

/// Partial sums of `sum <sigma^{-1} F, dW>` and `sum |sigma^{-1} F|^2 dt`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ItoSums {
    pub martingale: f64,
    pub quadratic: f64,
}

impl ItoSums {
    /// `martingale - quadratic / 2`.
    pub fn zeta(&self) -> f64 {
        self.martingale - 0.5 * self.quadratic
    }

    /// `martingale + quadratic / 2`.
    pub fn log_rho_tilde(&self) -> f64 {
        self.martingale + 0.5 * self.quadratic
    }
}

/// Left-point sums of `F_alpha(t_k, state(k))` against `dW_k` for `k < end`,
/// recording the running sums at each node listed in `marks` (sorted).
fn ito_sums<'a, S>(
    model: &GalerkinModel,
    drift: &DriftSpec,
    alpha: f64,
    path: &SamplePath,
    state: S,
    end: usize,
    marks: &[usize],
) -> Result<(ItoSums, Vec<ItoSums>)>
where
    S: Fn(usize) -> &'a [f64],
{
    let grid = path.grid();
    if end > grid.n_steps() {
        return Err(Error::InvalidArgument(format!(
            "end node {end} beyond grid with {} steps",
            grid.n_steps()
        )));
    }
    let d = model.dim();
    let h = grid.dt();
    let inv: Vec<f64> = model.sigma().iter().map(|s| 1.0 / s).collect();
    let mut f = vec![0.0; d];
    let mut sums = ItoSums::default();
    let mut recorded = Vec::with_capacity(marks.len());
    let mut next_mark = marks.iter().peekable();
    for k in 0..end {
        while next_mark.peek() == Some(&&k) {
            recorded.push(sums);
            next_mark.next();
        }
        drift.yosida_f_into(grid.time(k), alpha, state(k), &mut f)?;
        let dw = path.dw(k);
        for i in 0..d {
            let v = inv[i] * f[i];
            sums.martingale += v * dw[i];
            sums.quadratic += v * v * h;
        }
    }
    for _ in next_mark {
        recorded.push(sums);
    }
    Ok((sums, recorded))
}

/// `zeta_alpha(x, t_end)` along `W_{x,A,sigma}`.
pub fn zeta(model: &GalerkinModel, drift: &DriftSpec, alpha: f64, path: &SamplePath, end: usize) -> Result<f64> {
    Ok(ito_sums(model, drift, alpha, path, |k| path.w(k), end, &[])?.0.zeta())
}

/// `zeta` at `T` together with the stopped values `zeta(T ^ tau_n)` for each record.
pub fn zeta_with_stops(
    model: &GalerkinModel,
    drift: &DriftSpec,
    alpha: f64,
    path: &SamplePath,
    stops: &[StoppingRecord],
) -> Result<(f64, Vec<f64>)> {
    let mut order: Vec<usize> = (0..stops.len()).collect();
    order.sort_by_key(|&j| stops[j].node);
    let marks: Vec<usize> = order.iter().map(|&j| stops[j].node).collect();
    let n = path.grid().n_steps();
    let (total, at) = ito_sums(model, drift, alpha, path, |k| path.w(k), n, &marks)?;
    let mut stopped = vec![0.0; stops.len()];
    for (slot, &j) in order.iter().enumerate() {
        stopped[j] = at[slot].zeta();
    }
    Ok((total.zeta(), stopped))
}

/// Ito sums along `X_alpha`.
pub fn x_path_sums(
    model: &GalerkinModel,
    drift: &DriftSpec,
    solution: &RegularizedSolution,
    path: &SamplePath,
) -> Result<ItoSums> {
    if solution.grid() != path.grid() {
        return Err(Error::GridMismatch("solution and path use different grids".into()));
    }
    let n = path.grid().n_steps();
    Ok(ito_sums(model, drift, solution.alpha(), path, |k| solution.x(k), n, &[])?.0)
}

/// `log rho_tilde` along `X_alpha`.
pub fn log_rho_tilde(
    model: &GalerkinModel,
    drift: &DriftSpec,
    solution: &RegularizedSolution,
    path: &SamplePath,
) -> Result<f64> {
    let s = x_path_sums(model, drift, solution, path)?;
    let v = s.log_rho_tilde();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!(
            "log rho_tilde overflowed: martingale part {}, quadratic part {}",
            s.martingale, s.quadratic
        )))
    }
}

/// Per-path density statistics for one `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRecord {
    pub path_id: usize,
    /// `zeta_alpha(x, T) = log rho`.
    pub log_rho: f64,
    pub log_rho_tilde: f64,
    /// `zeta(T ^ tau_n)` per tau level, stopping on the OU path.
    pub stopped_log_rho: Vec<f64>,
    /// Stopping records of the path that generated `X_alpha`.
    pub taus: Vec<StoppingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityEnsemble {
    pub alpha: f64,
    pub drift: String,
    pub master_seed: u64,
    pub levels: Vec<u32>,
    pub records: Vec<DensityRecord>,
}

impl DensityEnsemble {
    pub fn n_paths(&self) -> usize {
        self.records.len()
    }

    pub fn log_rhos(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_rho).collect()
    }

    pub fn log_rho_tildes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_rho_tilde).collect()
    }
}

/// Mean of `exp(l_i)` and its standard error, computed with a common shift.
pub fn exp_mean(logs: &[f64]) -> (f64, f64) {
    if logs.is_empty() {
        return (0.0, 0.0);
    }
    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return (0.0, 0.0);
    }
    let mut acc = MeanAccumulator::new();
    acc.extend(logs.iter().map(|l| (l - shift).exp()));
    let scale = shift.exp();
    (acc.mean() * scale, acc.stderr() * scale)
}

/// `(log mean, stderr / mean)` of `exp(l_i)`; stays finite when the mean overflows.
pub fn log_exp_mean(logs: &[f64], n_total: usize) -> (f64, f64) {
    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logs.is_empty() || shift == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, 0.0);
    }
    let n = n_total as f64;
    let scaled: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let second = scaled.iter().map(|v| v * v).sum::<f64>() / n;
    let var = (second - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (shift + mean.ln(), (var / n).sqrt() / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub passed: bool,
}

/// `|mean(rho) - 1| <= 4 stderr`.
pub fn martingale_check(log_rhos: &[f64]) -> MartingaleReport {
    let (mean, stderr) = exp_mean(log_rhos);
    MartingaleReport {
        mean,
        stderr,
        n: log_rhos.len(),
        passed: (mean - 1.0).abs() <= 4.0 * stderr,
    }
}

/// `mean(rho) <= 1 + 4 stderr`, the supermartingale side for stopped densities.
pub fn supermartingale_check(log_rhos: &[f64]) -> MartingaleReport {
    let (mean, stderr) = exp_mean(log_rhos);
    MartingaleReport {
        mean,
        stderr,
        n: log_rhos.len(),
        passed: mean <= 1.0 + 4.0 * stderr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppedMomentReport {
    pub n: u32,
    pub a_n: f64,
    /// `log E[rho_tilde^2 1{tau_n >= T}]`.
    pub log_estimate: f64,
    pub relative_stderr: f64,
    /// `5 (a(n) ||sigma^{-1}||)^2 T`.
    pub log_bound: f64,
    pub surviving_paths: usize,
    pub passed: bool,
}

/// Compares `E[rho_tilde^2 1{tau_n >= T}]` with `exp(5 (a(n) ||sigma^{-1}||)^2 T)`,
/// allowing `(1 + 4 relative stderr)`.
pub fn stopped_moment_bound(
    log_rho_tildes: &[f64],
    taus: &[StoppingRecord],
    a_n: f64,
    sigma_inv_norm: f64,
    horizon: f64,
) -> Result<StoppedMomentReport> {
    if log_rho_tildes.len() != taus.len() {
        return Err(Error::InvalidArgument("one stopping record per path required".into()));
    }
    if log_rho_tildes.is_empty() {
        return Err(Error::Empty("density ensemble"));
    }
    let n = taus[0].n;
    let kept: Vec<f64> = log_rho_tildes
        .iter()
        .zip(taus)
        .filter(|(_, tau)| tau.tau >= horizon)
        .map(|(l, _)| 2.0 * l)
        .collect();
    let (log_estimate, relative_stderr) = log_exp_mean(&kept, log_rho_tildes.len());
    let log_bound = 5.0 * (a_n * sigma_inv_norm).powi(2) * horizon;
    Ok(StoppedMomentReport {
        n,
        a_n,
        log_estimate,
        relative_stderr,
        log_bound,
        surviving_paths: kept.len(),
        passed: log_estimate <= log_bound + (4.0 * relative_stderr).ln_1p(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::integrate_z;
    use crate::model::{validate_model, ModelParams};
    use crate::ou::{sample_ou_path, PathGrid};

    fn model() -> GalerkinModel {
        validate_model(&ModelParams {
            dim: 2,
            beta: 1.0,
            eigenvalues: None,
            sigma_diag: Some(vec![1.0, 2.0]),
            horizon: 1.0,
            x0: Some(vec![0.5, -0.5]),
        })
        .unwrap()
    }

    #[test]
    fn zero_drift_has_unit_density() {
        let m = model();
        let g = PathGrid::new(1.0, 100).unwrap();
        let p = sample_ou_path(&m, &g, 1);
        assert_eq!(zeta(&m, &DriftSpec::Zero, 0.1, &p, 100).unwrap(), 0.0);
        let s = integrate_z(&m, &DriftSpec::Zero, 0.1, &p, m.x0(), None).unwrap();
        assert_eq!(log_rho_tilde(&m, &DriftSpec::Zero, &s, &p).unwrap(), 0.0);
        let r = martingale_check(&[0.0; 10]);
        assert!(r.passed && r.mean == 1.0 && r.stderr == 0.0);
    }

    #[test]
    fn injected_constant_path_has_closed_form_sums() {
        // Constant state x = (2, 0) so the l1 Yosida value is (-1, 0) for alpha < 2;
        // dW = (0.1, 0.3) per step; sigma = (1, 2).
        let m = model();
        let g = PathGrid::new(1.0, 10).unwrap();
        let zero_model = m.with_x0(vec![0.0, 0.0]).unwrap();
        let w0 = [2.0, 0.0].repeat(11);
        let dw = [0.1, 0.3].repeat(10);
        let p = SamplePath::from_parts(&zero_model, g, &[0.0, 0.0], w0, dw, 0).unwrap();
        let z = zeta(&zero_model, &DriftSpec::L1Subgradient, 0.5, &p, 10).unwrap();
        let expected = 10.0 * (-1.0 * 0.1) - 0.5 * 10.0 * 0.1;
        assert!((z - expected).abs() < 1e-14, "{z} vs {expected}");
        let half = zeta(&zero_model, &DriftSpec::L1Subgradient, 0.5, &p, 5).unwrap();
        assert!((half - expected / 2.0).abs() < 1e-14);
    }

    #[test]
    fn flipping_increments_flips_only_the_martingale_part() {
        let m = model();
        let g = PathGrid::new(1.0, 50).unwrap();
        let p = sample_ou_path(&m, &g, 4);
        let zm = m.with_x0(vec![0.0, 0.0]).unwrap();
        let w0: Vec<f64> = (0..=50).flat_map(|k| p.w(k).to_vec()).collect();
        let dw: Vec<f64> = (0..50).flat_map(|k| p.dw(k).to_vec()).collect();
        let neg: Vec<f64> = dw.iter().map(|v| -v).collect();
        let a = SamplePath::from_parts(&zm, g, &[0.0, 0.0], w0.clone(), dw, 0).unwrap();
        let b = SamplePath::from_parts(&zm, g, &[0.0, 0.0], w0, neg, 0).unwrap();
        let sa = ito_sums(&zm, &DriftSpec::cubic(), 0.1, &a, |k| a.w(k), 50, &[]).unwrap().0;
        let sb = ito_sums(&zm, &DriftSpec::cubic(), 0.1, &b, |k| b.w(k), 50, &[]).unwrap().0;
        assert_eq!(sa.martingale, -sb.martingale);
        assert_eq!(sa.quadratic, sb.quadratic);
        assert!((sa.log_rho_tilde() - sa.quadratic - sa.zeta()).abs() < 1e-14);
    }

    #[test]
    fn saturating_rho_tilde_has_pathwise_bound() {
        let m = model();
        let g = PathGrid::new(1.0, 1000).unwrap();
        for seed in 0..20 {
            let p = sample_ou_path(&m, &g, seed);
            let s = integrate_z(&m, &DriftSpec::saturating(), 0.01, &p, m.x0(), None).unwrap();
            let l = log_rho_tilde(&m, &DriftSpec::saturating(), &s, &p).unwrap();
            let abs_dw: f64 = (0..1000).map(|k| crate::model::norm(p.dw(k))).sum();
            assert!(l.abs() <= m.sigma_inv_norm() * (abs_dw + 0.5));
        }
    }

    #[test]
    fn stopped_values_match_truncated_sums() {
        let m = model();
        let g = PathGrid::new(1.0, 200).unwrap();
        let p = sample_ou_path(&m, &g, 2);
        let stops = [
            StoppingRecord { n: 3, tau: 1.0, node: 200, hit: false },
            StoppingRecord { n: 1, tau: 0.25, node: 50, hit: true },
        ];
        let (total, stopped) = zeta_with_stops(&m, &DriftSpec::cubic(), 0.1, &p, &stops).unwrap();
        assert_eq!(stopped[0], total);
        assert_eq!(stopped[1], zeta(&m, &DriftSpec::cubic(), 0.1, &p, 50).unwrap());
    }

    #[test]
    fn stopped_bound_is_exact_for_zero_drift() {
        let taus = vec![StoppingRecord { n: 2, tau: 1.0, node: 10, hit: false }; 100];
        let r = stopped_moment_bound(&[0.0; 100], &taus, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(r.log_estimate, 0.0);
        assert_eq!(r.log_bound, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn log_exp_mean_matches_direct_mean() {
        let logs = [0.1, -0.3, 0.7, 0.0];
        let (lm, rel) = log_exp_mean(&logs, 4);
        let (m, se) = exp_mean(&logs);
        assert!((lm.exp() - m).abs() < 1e-14);
        assert!((rel * m - se).abs() < 1e-12);
        let (huge, _) = log_exp_mean(&[1000.0, 1000.0], 2);
        assert!((huge - 1000.0).abs() < 1e-12);
    }
}
