use std::fmt;
use std::path::{Path, PathBuf};

use monou::phi::PhiFunction;
use monou::pseudoweak::Psi0;
use monou::{validate_model, BoundFn, DriftSpec, GalerkinModel, ModelParams, PathGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub grid: GridBlock,
    pub drift: DriftBlock,
    pub sweep: SweepBlock,
    pub mc: McBlock,
    #[serde(default)]
    pub phi: PhiBlock,
    #[serde(default)]
    pub girsanov: GirsanovBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftBlock {
    #[serde(flatten)]
    pub spec: DriftSpec,
    /// Overrides the bound `a` implied by the drift.
    pub bound_fn: Option<BoundFn>,
}

// `flatten` would swallow unknown keys, so the drift keys are split off by hand
// and handed to the strict `DriftSpec` deserializer.
impl<'de> Deserialize<'de> for DriftBlock {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::deserialize(d)?;
        let bound_fn = match map.remove("bound_fn") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(BoundFn::deserialize(v).map_err(|e| D::Error::custom(format!("bound_fn: {e}")))?),
        };
        let input = serde_json::Value::Object(map);
        let spec = DriftSpec::deserialize(&input).map_err(D::Error::custom)?;
        // unit variants of a tagged enum ignore extra keys, so compare against the canonical form
        let canonical = serde_json::to_value(&spec).map_err(D::Error::custom)?;
        if let Some(key) = extra_key(&input, &canonical, "drift") {
            return Err(D::Error::custom(format!("unknown key `{key}`")));
        }
        Ok(Self { spec, bound_fn })
    }
}

fn extra_key(input: &serde_json::Value, canonical: &serde_json::Value, path: &str) -> Option<String> {
    let (serde_json::Value::Object(a), serde_json::Value::Object(b)) = (input, canonical) else {
        return None;
    };
    a.iter().find_map(|(k, v)| {
        let here = format!("{path}.{k}");
        match b.get(k) {
            None => Some(here),
            Some(c) => extra_key(v, c, &here),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub alphas: Vec<f64>,
    #[serde(default = "default_cesaro_tail")]
    pub cesaro_tail: usize,
    #[serde(default)]
    pub psi0: Psi0,
    pub lambda_y: Option<f64>,
}

fn default_cesaro_tail() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub n_paths: usize,
    pub master_seed: u64,
    /// Worker threads; the global pool when absent.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiBlock {
    pub kinds: Vec<PhiFunction>,
    /// `B` values for the constant table.
    pub b_values: Vec<f64>,
    /// `c` values for the constant table.
    pub c_values: Vec<f64>,
}

impl Default for PhiBlock {
    fn default() -> Self {
        Self {
            kinds: vec![PhiFunction::Power { p: 2.0 }, PhiFunction::Exponential, PhiFunction::Xlog],
            b_values: vec![0.5],
            c_values: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiKind {
    Identity,
    ClosedForm,
    Envelope,
    Mollified,
    Bump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiBlock {
    pub kind: PsiKind,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YGrid {
    /// Defaults to just above the admissible start.
    pub ln_y_min: Option<f64>,
    pub ln_y_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirsanovBlock {
    pub levels: Vec<u32>,
    pub n_max: u32,
    pub y_grid: YGrid,
    pub psi: PsiBlock,
    pub mollifier_delta: f64,
    pub confidence_z: f64,
    pub max_knots: usize,
}

impl Default for GirsanovBlock {
    fn default() -> Self {
        Self {
            levels: vec![2, 4, 6, 8],
            n_max: 200,
            y_grid: YGrid {
                ln_y_min: None,
                ln_y_max: 1e6,
                points: 2000,
            },
            psi: PsiBlock {
                kind: PsiKind::ClosedForm,
                delta: Some(0.5),
            },
            mollifier_delta: 0.1,
            confidence_z: 1.96,
            max_knots: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

/// A configuration problem tied to the key that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for issue in &self.0 {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// The validated pieces the pipeline runs on.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: GalerkinModel,
    pub grid: PathGrid,
    pub bound: BoundFn,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            ConfigError(vec![ConfigIssue {
                key: "<parse>".into(),
                message: e.to_string(),
            }])
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError(vec![ConfigIssue {
                key: "<file>".into(),
                message: format!("{}: {e}", path.display()),
            }])
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut issues = Vec::new();
        let mut push = |key: &str, message: String| {
            issues.push(ConfigIssue {
                key: key.into(),
                message,
            })
        };

        let model = match validate_model(&self.model) {
            Ok(m) => Some(m),
            Err(e) => {
                push("model", e.to_string());
                None
            }
        };
        let grid = match (self.grid.n_steps, self.grid.dt) {
            (Some(n), None) => PathGrid::new(self.model.horizon, n).map_err(|e| e.to_string()),
            (None, Some(dt)) => PathGrid::with_max_step(self.model.horizon, dt).map_err(|e| e.to_string()),
            _ => Err("exactly one of n_steps and dt must be set".to_string()),
        };
        let grid = match grid {
            Ok(g) => Some(g),
            Err(m) => {
                push("grid", m);
                None
            }
        };
        if let Err(e) = self.drift.spec.validate() {
            push("drift", e.to_string());
        }

        let alphas = &self.sweep.alphas;
        if alphas.len() < 2 {
            push("sweep.alphas", "needs at least two entries".into());
        } else if alphas.windows(2).any(|w| !(w[1] < w[0])) || alphas.iter().any(|a| !(*a > 0.0)) {
            push("sweep.alphas", "must be positive and strictly decreasing".into());
        } else {
            if let Some(g) = &grid {
                let min = alphas[alphas.len() - 1];
                if g.dt() > min / 8.0 * (1.0 + 1e-12) {
                    push("grid", format!("dt = {} exceeds min(sweep.alphas) / 8 = {}", g.dt(), min / 8.0));
                }
            }
            if !(2..=alphas.len()).contains(&self.sweep.cesaro_tail) {
                push("sweep.cesaro_tail", format!("must lie in [2, {}]", alphas.len()));
            }
        }
        if let Some(l) = self.sweep.lambda_y {
            if !(l >= 1.0) {
                push("sweep.lambda_y", format!("{l} must be >= 1"));
            }
        }
        if self.mc.n_paths < 2 {
            push("mc.n_paths", "needs at least two paths".into());
        }
        if self.mc.threads == Some(0) {
            push("mc.threads", "must be positive".into());
        }

        let beta = self.model.beta;
        for (i, phi) in self.phi.kinds.iter().enumerate() {
            if let Err(e) = phi.validate() {
                push(&format!("phi.kinds[{i}]"), e.to_string());
            }
            for (j, &b) in self.phi.b_values.iter().enumerate() {
                let limit = beta * phi.l_phi();
                if !(b > 0.0 && b < limit) {
                    push(&format!("phi.b_values[{j}]"), format!("B = {b} must lie in (0, {limit}) for {}", phi.label()));
                }
            }
        }
        if self.phi.c_values.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            push("phi.c_values", "must be finite and non-negative".into());
        }

        let g = &self.girsanov;
        if g.levels.is_empty() {
            push("girsanov.levels", "needs at least one level".into());
        }
        if g.y_grid.points < 2 {
            push("girsanov.y_grid.points", "needs at least two points".into());
        }
        let bound = self
            .drift
            .bound_fn
            .unwrap_or_else(|| self.drift.spec.bound_fn(self.model.dim));
        if self.drift.bound_fn.is_some() {
            for r in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
                let need = self.drift.spec.radial_bound(self.model.dim, r);
                if bound.eval(r) < need * (1.0 - 1e-12) {
                    push("drift.bound_fn", format!("a({r}) = {} is below the drift's |F0| bound {need}", bound.eval(r)));
                    break;
                }
            }
        }
        if let Some(m) = &model {
            let start = 5.0 * (bound.eval(0.0) * m.sigma_inv_norm()).powi(2) * m.horizon();
            if let Some(lo) = g.y_grid.ln_y_min {
                if !(lo > start) {
                    push("girsanov.y_grid.ln_y_min", format!("{lo} must exceed the admissible start ln y = {start}"));
                }
            }
            if !(g.y_grid.ln_y_max > start.max(g.y_grid.ln_y_min.unwrap_or(0.0))) {
                push("girsanov.y_grid.ln_y_max", "must exceed the grid start".into());
            }
        }
        match (g.psi.kind, g.psi.delta) {
            (PsiKind::ClosedForm, Some(d)) if !(d > 0.0 && d <= 1.0) => {
                push("girsanov.psi.delta", format!("{d} must lie in (0, 1]"))
            }
            (PsiKind::ClosedForm, None) => push("girsanov.psi.delta", "required for closed_form".into()),
            _ => {}
        }
        if !(g.mollifier_delta > 0.0) {
            push("girsanov.mollifier_delta", "must be positive".into());
        }
        if !(g.confidence_z >= 0.0) {
            push("girsanov.confidence_z", "must be non-negative".into());
        }

        match (model, grid, issues.is_empty()) {
            (Some(model), Some(grid), true) => Ok(Resolved { model, grid, bound }),
            _ => Err(ConfigError(issues)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = include_str!("../../../configs/smoke_zero.toml");
    const DEFAULT: &str = include_str!("../../../configs/default.toml");

    #[test]
    fn shipped_configs_parse_and_validate() {
        for text in [SMOKE, DEFAULT] {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            cfg.resolve().unwrap();
            let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(again, cfg);
        }
    }

    #[test]
    fn errors_carry_key_paths() {
        let mut cfg = ExperimentConfig::from_toml(DEFAULT).unwrap();
        cfg.grid.dt = Some(0.01);
        cfg.sweep.alphas = vec![0.1, 0.2];
        cfg.phi.b_values = vec![5.0];
        let err = cfg.resolve().unwrap_err();
        let keys: Vec<&str> = err.0.iter().map(|i| i.key.as_str()).collect();
        assert!(keys.contains(&"sweep.alphas"));
        assert!(keys.contains(&"phi.b_values[0]"));
        cfg.sweep.alphas = vec![0.1, 0.01];
        let err = cfg.resolve().unwrap_err();
        assert!(err.0.iter().any(|i| i.key == "grid"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = DEFAULT.replace("[mc]", "[mc]\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = DEFAULT.replace("exponent = 2.0", "exponent = 2.0\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = DEFAULT.replace("[drift]\nkind = \"radial\"\ncoef = 1.0\nexponent = 2.0", "[drift]\nkind = \"zero\"\ncoef = 1.0");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = DEFAULT.replace("exponent = 2.0", "exponent = 2.0\nbound_fn = { form = \"power\", coef = 2.0, degree = 3.0 }");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.drift.bound_fn, Some(BoundFn::Power { coef: 2.0, degree: 3.0 }));
        assert_eq!(cfg.drift.spec, DriftSpec::cubic());
    }
}
