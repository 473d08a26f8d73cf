//! Fixtures shared by the benchmarks.

use monou::{sample_ou_path, validate_model, GalerkinModel, ModelParams, PathGrid, SamplePath};

/// The four-mode model of the default configuration.
pub fn model() -> GalerkinModel {
    validate_model(&ModelParams {
        dim: 4,
        beta: 1.0,
        eigenvalues: None,
        sigma_diag: None,
        horizon: 1.0,
        x0: Some(vec![1.0, 0.5, -0.5, 0.25]),
    })
    .expect("valid model")
}

pub fn grid(n_steps: usize) -> PathGrid {
    PathGrid::new(1.0, n_steps).expect("valid grid")
}

pub fn path(model: &GalerkinModel, n_steps: usize) -> SamplePath {
    sample_ou_path(model, &grid(n_steps), 42)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_consistent() {
        let m = model();
        let p = path(&m, 100);
        assert_eq!(p.grid().n_steps(), 100);
        assert_eq!(p.dim(), m.dim());
    }
}
