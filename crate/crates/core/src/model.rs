//! Finite Galerkin truncation of the linear part: a diagonal dissipative
//! generator `A`, diagonal noise `sigma`, a horizon and an initial state.

use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// A point of the truncated state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Unvalidated model parameters as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub dim: usize,
    pub beta: f64,
    /// Diagonal of `A`. Defaults to `-beta * i^2` for `i = 1..=dim`.
    #[serde(default)]
    pub eigenvalues: Option<Vec<f64>>,
    /// Diagonal of `sigma`. Defaults to all ones.
    #[serde(default)]
    pub sigma_diag: Option<Vec<f64>>,
    pub horizon: f64,
    /// Initial state. Defaults to the origin.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

/// A validated truncation: every eigenvalue satisfies `lambda_i <= -beta < 0`
/// and every noise amplitude is finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinModel {
    eigenvalues: Vec<f64>,
    beta: f64,
    sigma: Vec<f64>,
    horizon: f64,
    x0: StateVector,
    sigma_inv_norm: f64,
}

/// Checks every model invariant and attaches `||sigma^{-1}||`.
pub fn validate_model(raw: &ModelParams) -> Result<GalerkinModel> {
    let d = raw.dim;
    if d == 0 {
        return Err(Error::InvalidModel("dimension must be positive".into()));
    }
    if !(raw.beta.is_finite() && raw.beta > 0.0) {
        return Err(Error::InvalidModel(format!(
            "beta = {} must be finite and positive",
            raw.beta
        )));
    }
    if !(raw.horizon.is_finite() && raw.horizon > 0.0) {
        return Err(Error::InvalidModel(format!(
            "horizon = {} must be finite and positive",
            raw.horizon
        )));
    }
    let eigenvalues = match &raw.eigenvalues {
        Some(ev) => ev.clone(),
        None => (1..=d).map(|i| -raw.beta * (i * i) as f64).collect(),
    };
    check_len("eigenvalues", d, eigenvalues.len())?;
    for (index, &value) in eigenvalues.iter().enumerate() {
        if !value.is_finite() || value > -raw.beta {
            return Err(Error::EigenvalueAboveBound {
                index,
                value,
                neg_beta: -raw.beta,
            });
        }
    }
    let sigma = raw.sigma_diag.clone().unwrap_or_else(|| vec![1.0; d]);
    check_len("sigma_diag", d, sigma.len())?;
    for (index, &value) in sigma.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidSigma { index, value });
        }
    }
    let x0 = raw.x0.clone().unwrap_or_else(|| vec![0.0; d]);
    check_len("x0", d, x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("x0 has non-finite entries".into()));
    }
    let sigma_min = sigma.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GalerkinModel {
        eigenvalues,
        beta: raw.beta,
        sigma,
        horizon: raw.horizon,
        x0: StateVector(x0),
        sigma_inv_norm: 1.0 / sigma_min,
    })
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    } else {
        Ok(())
    }
}

impl GalerkinModel {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn x0(&self) -> &StateVector {
        &self.x0
    }

    /// Operator norm of `sigma^{-1}`, i.e. `1 / min_i sigma_i`.
    pub fn sigma_inv_norm(&self) -> f64 {
        self.sigma_inv_norm
    }

    /// Same model with a different initial state.
    pub fn with_x0(&self, x0: Vec<f64>) -> Result<Self> {
        check_len("x0", self.dim(), x0.len())?;
        let mut m = self.clone();
        m.x0 = StateVector(x0);
        Ok(m)
    }

    /// Same model with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidModel(format!("horizon = {horizon}")));
        }
        let mut m = self.clone();
        m.horizon = horizon;
        Ok(m)
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            dim: self.dim(),
            beta: self.beta,
            eigenvalues: Some(self.eigenvalues.clone()),
            sigma_diag: Some(self.sigma.clone()),
            horizon: self.horizon,
            x0: Some(self.x0.to_vec()),
        }
    }

    /// `A v` computed coordinatewise.
    pub fn generator_apply(&self, v: &[f64]) -> StateVector {
        self.eigenvalues.iter().zip(v).map(|(l, x)| l * x).collect::<Vec<_>>().into()
    }

    /// `e^{tA} v`.
    pub fn semigroup_apply(&self, t: f64, v: &[f64]) -> Result<StateVector> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        check_len("state", self.dim(), v.len())?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(v)
            .map(|(l, x)| (l * t).exp() * x)
            .collect::<Vec<_>>()
            .into())
    }

    /// Resolvent `R_lambda(A) x = (lambda I - A)^{-1} x`.
    pub fn resolvent_a(&self, lambda_y: f64, x: &[f64]) -> StateVector {
        self.eigenvalues
            .iter()
            .zip(x)
            .map(|(l, v)| v / (lambda_y - l))
            .collect::<Vec<_>>()
            .into()
    }

    /// Eigenvalues of the Yosida approximant `A_lambda = lambda A R_lambda(A)`.
    pub fn yosida_a_eigenvalues(&self, lambda_y: f64) -> Result<Vec<f64>> {
        if !(lambda_y.is_finite() && lambda_y >= 1.0) {
            return Err(Error::YosidaParameter(lambda_y));
        }
        Ok(self
            .eigenvalues
            .iter()
            .map(|l| lambda_y * l / (lambda_y - l))
            .collect())
    }

    /// `A_lambda x`.
    pub fn yosida_a(&self, lambda_y: f64, x: &[f64]) -> Result<StateVector> {
        check_len("state", self.dim(), x.len())?;
        let ev = self.yosida_a_eigenvalues(lambda_y)?;
        Ok(ev.iter().zip(x).map(|(l, v)| l * v).collect::<Vec<_>>().into())
    }

    /// Closed-form per-mode moments of `W_{x0,A,sigma}(t)`.
    pub fn ou_moments(&self, t: f64) -> Result<(StateVector, Vec<f64>)> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let mean = self.semigroup_apply(t, &self.x0)?;
        let var = self
            .eigenvalues
            .iter()
            .zip(&self.sigma)
            .map(|(&l, &s)| s * s * (2.0 * l * t).exp_m1() / (2.0 * l))
            .collect();
        Ok((mean, var))
    }
}

/// Free-function forms of the model operations.
pub fn semigroup_apply(model: &GalerkinModel, t: f64, v: &[f64]) -> Result<StateVector> {
    model.semigroup_apply(t, v)
}

pub fn yosida_a(model: &GalerkinModel, lambda_y: f64, x: &[f64]) -> Result<StateVector> {
    model.yosida_a(lambda_y, x)
}

pub fn ou_moments(model: &GalerkinModel, t: f64) -> Result<(StateVector, Vec<f64>)> {
    model.ou_moments(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_rng, std_normal};

    fn params(dim: usize) -> ModelParams {
        ModelParams {
            dim,
            beta: 1.0,
            eigenvalues: None,
            sigma_diag: None,
            horizon: 1.0,
            x0: None,
        }
    }

    #[test]
    fn tight_scalar_model_is_valid() {
        let m = validate_model(&ModelParams {
            eigenvalues: Some(vec![-1.0]),
            sigma_diag: Some(vec![1.0]),
            ..params(1)
        })
        .unwrap();
        assert_eq!(m.sigma_inv_norm(), 1.0);
    }

    #[test]
    fn eigenvalue_above_minus_beta_is_rejected() {
        let err = validate_model(&ModelParams {
            eigenvalues: Some(vec![-1.0, -0.5]),
            ..params(2)
        })
        .unwrap_err();
        assert_eq!(
            err,
            Error::EigenvalueAboveBound {
                index: 1,
                value: -0.5,
                neg_beta: -1.0
            }
        );
        assert!(err.to_string().contains("-0.5"));
    }

    #[test]
    fn sigma_inverse_norm_uses_smallest_entry() {
        let m = validate_model(&ModelParams {
            sigma_diag: Some(vec![2.0, 1.0, 0.5]),
            ..params(3)
        })
        .unwrap();
        assert_eq!(m.sigma_inv_norm(), 2.0);
    }

    #[test]
    fn zero_sigma_and_bad_beta_are_rejected() {
        assert!(matches!(
            validate_model(&ModelParams {
                sigma_diag: Some(vec![1.0, 0.0]),
                ..params(2)
            }),
            Err(Error::InvalidSigma { index: 1, .. })
        ));
        assert!(validate_model(&ModelParams { beta: 0.0, ..params(2) }).is_err());
        assert!(validate_model(&ModelParams { dim: 0, ..params(1) }).is_err());
    }

    #[test]
    fn semigroup_halves_after_ln2() {
        let m = validate_model(&ModelParams {
            eigenvalues: Some(vec![-1.0]),
            ..params(1)
        })
        .unwrap();
        let v = m.semigroup_apply(2f64.ln(), &[4.0]).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-14);
        assert_eq!(m.semigroup_apply(0.0, &[3.5]).unwrap()[0], 3.5);
        assert!(matches!(m.semigroup_apply(-1.0, &[1.0]), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn semigroup_contracts_and_composes() {
        let m = validate_model(&params(4)).unwrap();
        let mut rng = path_rng(3);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..4).map(|_| 3.0 * std_normal(&mut rng)).collect();
            let t = rng.random_range(0.0..2.0);
            let s = rng.random_range(0.0..2.0);
            let a = m.semigroup_apply(t + s, &v).unwrap();
            let b = m.semigroup_apply(t, &m.semigroup_apply(s, &v).unwrap()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
            assert!(a.norm() <= (-(t + s)).exp() * norm(&v) * (1.0 + 1e-14) + 1e-300);
        }
    }

    #[test]
    fn yosida_a_examples() {
        let m = validate_model(&ModelParams {
            eigenvalues: Some(vec![-1.0]),
            ..params(1)
        })
        .unwrap();
        assert_eq!(m.yosida_a(1.0, &[0.0]).unwrap()[0], 0.0);
        assert!((m.yosida_a(1.0, &[2.0]).unwrap()[0] + 1.0).abs() < 1e-15);
        assert!(matches!(m.yosida_a(0.5, &[1.0]), Err(Error::YosidaParameter(_))));
    }

    #[test]
    fn yosida_a_gap_decreases_in_lambda() {
        let m = validate_model(&params(4)).unwrap();
        let x = [1.0, -2.0, 0.5, 3.0];
        let ax = m.generator_apply(&x);
        let gaps: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&l| dist(&m.yosida_a(l, &x).unwrap(), &ax))
            .collect();
        assert!(gaps.windows(2).all(|g| g[1] < g[0]));
        assert!(gaps[3] < 0.02 * ax.norm());
    }

    #[test]
    fn moments_at_origin_and_stationary_limit() {
        let m = validate_model(&ModelParams {
            x0: Some(vec![1.0, 2.0]),
            ..params(2)
        })
        .unwrap();
        let (mean, var) = m.ou_moments(0.0).unwrap();
        assert_eq!(mean.to_vec(), vec![1.0, 2.0]);
        assert_eq!(var, vec![0.0, 0.0]);
        let long = validate_model(&ModelParams {
            eigenvalues: Some(vec![-1.0]),
            horizon: 50.0,
            ..params(1)
        })
        .unwrap();
        let (_, var) = long.ou_moments(50.0).unwrap();
        assert!((var[0] - 0.5).abs() < 1e-12);
        assert!(m.ou_moments(1.5).is_err());
    }

    use rand::Rng;
}
