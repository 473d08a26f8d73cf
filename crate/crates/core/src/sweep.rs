//! Integration of a decreasing list of `alpha` values on shared noise, with
//! sup-norm and pseudo-weak gap diagnostics and the Cesaro limit candidate.

use serde::Serialize;

use crate::drift::DriftSpec;
use crate::ensemble::map_paths;
use crate::error::{Error, Result};
use crate::integrator::{
    certify_stopping, check_pathwise_bound, check_step, integrate_z, stopping_times, sup_gaps, BoundReport, PathBounds,
    RegularizedSolution, StoppingRecord,
};
use crate::model::{dist, norm, GalerkinModel};
use crate::ou::{sample_ou_path, PathGrid, SamplePath};
use crate::pseudoweak::{cesaro_limit, limsup_check, weak_gap, FieldSums, GapMatrix, LimsupReport, PsiMap, TestFamily};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Strictly decreasing, at least two entries.
    pub alphas: Vec<f64>,
    pub levels: Vec<u32>,
    pub family: TestFamily,
    pub map: PsiMap,
    /// Number of smallest-`alpha` fields averaged into the candidate.
    pub cesaro_tail: usize,
    pub lambda_y: Option<f64>,
    /// Evenly spaced nodes at which `|W0|` is recorded for the OU tail.
    pub w0_samples: usize,
}

impl SweepConfig {
    pub fn new(alphas: Vec<f64>) -> Self {
        Self {
            alphas,
            levels: vec![2, 4, 6, 8],
            family: TestFamily::default(),
            map: PsiMap::default(),
            cesaro_tail: 2,
            lambda_y: None,
            w0_samples: 32,
        }
    }

    pub fn validate(&self, grid: &PathGrid) -> Result<()> {
        if self.alphas.len() < 2 {
            return Err(Error::InvalidArgument("the alpha list needs at least two entries".into()));
        }
        if self.alphas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidArgument("the alpha list must be strictly decreasing".into()));
        }
        if !(2..=self.alphas.len()).contains(&self.cesaro_tail) {
            return Err(Error::InvalidArgument(format!(
                "cesaro_tail {} must lie in [2, {}]",
                self.cesaro_tail,
                self.alphas.len()
            )));
        }
        check_step(grid.dt(), *self.alphas.last().expect("nonempty"))
    }

    pub fn sample_nodes(&self, grid: &PathGrid) -> Vec<usize> {
        let n = grid.n_steps();
        let m = self.w0_samples.clamp(1, n);
        (1..=m).map(|i| i * n / m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub path_id: usize,
    /// `None` for the smallest `alpha`.
    pub sup_gap_to_next_alpha: Option<f64>,
    pub bound_violations: usize,
    pub taus: Vec<f64>,
}

/// Everything one path contributes to the sweep report.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSweep {
    pub path_id: usize,
    pub seed: u64,
    pub bounds: Vec<BoundReport>,
    pub stopping: Vec<StoppingRecord>,
    pub stopping_violations: Vec<usize>,
    pub sup_gaps: Vec<f64>,
    /// Max of the stopping threshold over nodes before `T`.
    pub threshold_max: f64,
    pub w0_norms: Vec<f64>,
    integrals: Vec<Vec<f64>>,
    candidate_integrals: Vec<f64>,
    candidate_sup_gap: f64,
    candidate_clamped: usize,
    candidate_entries: usize,
    limsup: LimsupReport,
    subsequence_integrals: Option<[Vec<f64>; 2]>,
}

fn candidate_for(xs: &[&[f64]], tail: usize, dim: usize, map: &PsiMap) -> Result<crate::pseudoweak::CesaroCandidate> {
    cesaro_limit(&xs[xs.len() - tail..], dim, map)
}

pub fn sweep_path(
    model: &GalerkinModel,
    drift: &DriftSpec,
    grid: &PathGrid,
    cfg: &SweepConfig,
    path_id: usize,
    path: &SamplePath,
) -> Result<(PathSweep, Vec<RegularizedSolution>)> {
    let d = model.dim();
    let bounds = PathBounds::new(model, drift, path);
    let sols = cfg
        .alphas
        .iter()
        .map(|&a| integrate_z(model, drift, a, path, model.x0(), cfg.lambda_y))
        .collect::<Result<Vec<_>>>()?;
    let stopping = stopping_times(&bounds, grid, &cfg.levels);
    let reports = sols
        .iter()
        .map(|s| check_pathwise_bound(s, &bounds))
        .collect::<Result<Vec<_>>>()?;
    let stopping_violations = sols.iter().map(|s| certify_stopping(s, &stopping)).collect();
    let integrals = sols
        .iter()
        .map(|s| cfg.family.integrate(grid, &cfg.map.apply_field(s.x_flat(), d), d))
        .collect();

    let xs: Vec<&[f64]> = sols.iter().map(|s| s.x_flat()).collect();
    let cand = candidate_for(&xs, cfg.cesaro_tail, d, &cfg.map)?;
    let finest = *xs.last().expect("nonempty");
    let candidate_sup_gap = cand
        .field
        .chunks_exact(d)
        .zip(finest.chunks_exact(d))
        .map(|(a, b)| dist(a, b))
        .fold(0.0, f64::max);
    let limsup = limsup_check(&xs[xs.len() - cfg.cesaro_tail..], &cand.field, d);

    let even: Vec<&[f64]> = xs.iter().step_by(2).copied().collect();
    let odd: Vec<&[f64]> = xs.iter().skip(1).step_by(2).copied().collect();
    let subsequence_integrals = if even.len() >= 2 && odd.len() >= 2 {
        let ce = candidate_for(&even, 2, d, &cfg.map)?;
        let co = candidate_for(&odd, 2, d, &cfg.map)?;
        Some([&ce.field, &co.field].map(|f| cfg.family.integrate(grid, &cfg.map.apply_field(f, d), d)))
    } else {
        None
    };

    let threshold_max = (0..grid.n_steps()).map(|k| bounds.threshold(k)).fold(0.0, f64::max);
    let w0_norms = cfg.sample_nodes(grid).iter().map(|&k| norm(path.w0(k))).collect();
    Ok((
        PathSweep {
            path_id,
            seed: path.seed_tag(),
            bounds: reports,
            stopping,
            stopping_violations,
            sup_gaps: sup_gaps(&sols),
            threshold_max,
            w0_norms,
            integrals,
            candidate_integrals: cfg.family.integrate(grid, &cfg.map.apply_field(&cand.field, d), d),
            candidate_sup_gap,
            candidate_clamped: cand.clamped,
            candidate_entries: cand.entries,
            limsup,
            subsequence_integrals,
        },
        sols,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub bounds: BoundReport,
    pub stopping_violations: usize,
    /// Largest pathwise sup-norm gap to the next `alpha`.
    pub max_sup_gap_to_next: Option<f64>,
    /// Pseudo-weak gap to the next `alpha`.
    pub weak_gap_to_next: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub n_paths: usize,
    pub per_alpha: Vec<AlphaSummary>,
    /// Pseudo-weak gaps between consecutive `alpha` values.
    pub gap_sequence: Vec<f64>,
    /// Full gap matrices behind `gap_sequence`.
    pub gap_matrices: Vec<GapMatrix>,
    /// Pseudo-weak gap of the candidate to the smallest-`alpha` field.
    pub candidate_weak_gap: f64,
    /// `candidate_weak_gap` over the last entry of `gap_sequence`.
    pub candidate_gap_ratio: f64,
    pub candidate_sup_gap: f64,
    pub candidate_clamped: usize,
    pub candidate_entries: usize,
    pub limsup: LimsupReport,
    /// Gap between candidates from the even- and odd-indexed `alpha` values.
    pub subsequence_gap: Option<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Reduces per-path results in path order.
    pub fn from_paths(cfg: &SweepConfig, dim: usize, paths: &[PathSweep]) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Empty("sweep paths"));
        }
        let m = cfg.alphas.len();
        let n_tests = cfg.family.n_tests(dim);
        let mut sums = vec![FieldSums::new(n_tests); m];
        let mut cand = FieldSums::new(n_tests);
        let mut subseq = [FieldSums::new(n_tests), FieldSums::new(n_tests)];
        let mut bounds = vec![BoundReport::default(); m];
        let mut stop_viol = vec![0usize; m];
        let mut max_sup = vec![0.0f64; m - 1];
        let mut limsup = LimsupReport {
            nodes: 0,
            violations: 0,
            first_violation: None,
            tail_length: cfg.cesaro_tail,
        };
        let (mut cand_sup, mut clamped, mut entries) = (0.0f64, 0, 0);
        let mut rows = Vec::with_capacity(paths.len() * m);
        for p in paths {
            for j in 0..m {
                sums[j].add(p.path_id, &p.integrals[j]);
                bounds[j].merge(&p.bounds[j]);
                stop_viol[j] += p.stopping_violations[j];
                if j + 1 < m {
                    max_sup[j] = max_sup[j].max(p.sup_gaps[j]);
                }
                let b = &p.bounds[j];
                rows.push(SweepRow {
                    alpha: cfg.alphas[j],
                    path_id: p.path_id,
                    sup_gap_to_next_alpha: p.sup_gaps.get(j).copied(),
                    bound_violations: b.z_half_violations + b.z_full_violations,
                    taus: p.stopping.iter().map(|r| r.tau).collect(),
                });
            }
            cand.add(p.path_id, &p.candidate_integrals);
            if let Some(s) = &p.subsequence_integrals {
                subseq[0].add(p.path_id, &s[0]);
                subseq[1].add(p.path_id, &s[1]);
            }
            cand_sup = cand_sup.max(p.candidate_sup_gap);
            clamped += p.candidate_clamped;
            entries += p.candidate_entries;
            limsup.merge(&p.limsup);
        }
        let gap_matrices = sums
            .windows(2)
            .map(|w| weak_gap(&w[0], &w[1], &cfg.family, dim))
            .collect::<Result<Vec<_>>>()?;
        let gap_sequence: Vec<f64> = gap_matrices.iter().map(|g| g.max).collect();
        let candidate_weak_gap = weak_gap(&cand, &sums[m - 1], &cfg.family, dim)?.max;
        let finest = *gap_sequence.last().expect("two alphas");
        let candidate_gap_ratio = if finest > 0.0 {
            candidate_weak_gap / finest
        } else if candidate_weak_gap <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        let subsequence_gap = if subseq[0].n_paths() > 0 {
            Some(weak_gap(&subseq[0], &subseq[1], &cfg.family, dim)?.max)
        } else {
            None
        };
        let per_alpha = (0..m)
            .map(|j| AlphaSummary {
                alpha: cfg.alphas[j],
                bounds: bounds[j],
                stopping_violations: stop_viol[j],
                max_sup_gap_to_next: max_sup.get(j).copied(),
                weak_gap_to_next: gap_sequence.get(j).copied(),
            })
            .collect();
        Ok(Self {
            n_paths: paths.len(),
            per_alpha,
            gap_sequence,
            gap_matrices,
            candidate_weak_gap,
            candidate_gap_ratio,
            candidate_sup_gap: cand_sup,
            candidate_clamped: clamped,
            candidate_entries: entries,
            limsup,
            subsequence_gap,
            rows,
        })
    }
}

/// Runs the sweep over `n_paths` OU paths, calling `hook` on each path with
/// its solutions so callers can compute further per-path statistics without
/// integrating again.
pub fn alpha_sweep_with<T, F>(
    model: &GalerkinModel,
    drift: &DriftSpec,
    grid: &PathGrid,
    cfg: &SweepConfig,
    n_paths: usize,
    master_seed: u64,
    hook: F,
) -> Result<(SweepReport, Vec<PathSweep>, Vec<T>)>
where
    T: Send,
    F: Fn(&PathSweep, &SamplePath, &[RegularizedSolution]) -> Result<T> + Sync,
{
    cfg.validate(grid)?;
    drift.validate()?;
    let results = map_paths(n_paths, master_seed, |i, seed| -> Result<(PathSweep, T)> {
        let path = sample_ou_path(model, grid, seed);
        let (summary, sols) = sweep_path(model, drift, grid, cfg, i, &path)?;
        let extra = hook(&summary, &path, &sols)?;
        Ok((summary, extra))
    });
    let mut summaries = Vec::with_capacity(n_paths);
    let mut extras = Vec::with_capacity(n_paths);
    for r in results {
        let (s, e) = r?;
        summaries.push(s);
        extras.push(e);
    }
    let report = SweepReport::from_paths(cfg, model.dim(), &summaries)?;
    Ok((report, summaries, extras))
}

pub fn alpha_sweep(
    model: &GalerkinModel,
    drift: &DriftSpec,
    grid: &PathGrid,
    cfg: &SweepConfig,
    n_paths: usize,
    master_seed: u64,
) -> Result<(SweepReport, Vec<PathSweep>)> {
    let (report, paths, _) = alpha_sweep_with(model, drift, grid, cfg, n_paths, master_seed, |_, _, _| Ok(()))?;
    Ok((report, paths))
}
