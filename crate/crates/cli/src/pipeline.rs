use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Result;
use monou::ensemble::{map_paths, with_threads};
use monou::girsanov::{
    log_rho_tilde, martingale_check, stopped_moment_bound, supermartingale_check, zeta_with_stops,
};
use monou::integrator::StoppingRecord;
use monou::phi::{c_constant, check_phi_bound, k_functions, ClosedFormKind, PhiBoundReport};
use monou::psi::{
    build_psi_bump, build_psi_envelope, build_psi_mollified, check_psi_integral, entropy_statistic, psi_closed_form,
    stability_ratio, EntropyReport, IntegralGrid,
};
use monou::pseudoweak::PsiMap;
use monou::stats::moment_estimate;
use monou::sweep::{alpha_sweep_with, PathSweep, SweepReport};
use monou::tail::{fit_chain, log_spaced, p0_tail, InverseTail, OuTail, TailFunction};
use monou::{sample_ou_path, BoundFn, DriftSpec, PsiSpec, SweepConfig, TailProbability};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PsiKind, Resolved};
use crate::output::{checks_table, num, opt, ArtifactDir, Check, RunManifest, RunStatus, Table};

/// Pipeline stages in execution order; running a stage runs all earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Sweep,
    Phi,
    Girsanov,
    Psi,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Simulate, Stage::Sweep, Stage::Phi, Stage::Girsanov, Stage::Psi];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Sweep => "sweep",
            Stage::Phi => "phi",
            Stage::Girsanov => "girsanov",
            Stage::Psi => "psi",
        }
    }

    /// Files a completed stage leaves behind.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Simulate => &["ou_moments.csv"],
            Stage::Sweep => &["sweep.csv", "gaps.csv", "gap_sequence.csv"],
            Stage::Phi => &["phi.csv", "constants.csv", "k_functions.csv"],
            Stage::Girsanov => &["densities.csv", "tail.csv"],
            Stage::Psi => &[
                "psi_closed_form.csv",
                "psi_envelope.csv",
                "psi_mollified.csv",
                "psi_bump.csv",
                "p0.csv",
                "entropy.csv",
            ],
        }
    }
}

/// Paths whose K-functions are written out.
const K_PATHS: usize = 4;
/// Nodes per path in the K-function table.
const K_NODES: usize = 200;

#[derive(Debug, Clone)]
struct AlphaExtras {
    log_rho: f64,
    log_rho_tilde: f64,
    stopped_log_rho: Vec<f64>,
    phi: Vec<PhiBoundReport>,
}

#[derive(Debug, Clone)]
struct PathExtras {
    w_end: Vec<f64>,
    per_alpha: Vec<AlphaExtras>,
    k_rows: Vec<[String; 5]>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    res: &'a Resolved,
    stage: Stage,
    log: &'a (dyn Fn(&str) + Sync),
    checks: Vec<Check>,
    done: Vec<Stage>,
}

/// Runs every stage up to `stage`, writing artifacts and then the manifest.
/// A stage error still produces a manifest with `status = failed`.
pub fn run(cfg: &ExperimentConfig, res: &Resolved, out: &Path, stage: Stage, log: &(dyn Fn(&str) + Sync)) -> Result<RunManifest> {
    let start = Instant::now();
    let mut dir = ArtifactDir::create(out)?;
    let mut ctx = Ctx {
        cfg,
        res,
        stage,
        log,
        checks: Vec::new(),
        done: Vec::new(),
    };
    let outcome = match cfg.mc.threads {
        Some(t) => with_threads(t, || execute(&mut ctx, &mut dir)),
        None => execute(&mut ctx, &mut dir),
    };
    let error = outcome.err().map(|e| format!("{e:#}"));
    if error.is_none() {
        dir.table("results.csv", checks_table(&ctx.checks))?;
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: if error.is_none() { RunStatus::Complete } else { RunStatus::Failed },
        requested_stage: stage,
        completed_stages: ctx.done,
        error,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        checks: ctx.checks,
        files: dir.files().clone(),
    };
    dir.write_manifest(&manifest)?;
    Ok(manifest)
}

fn sweep_config(cfg: &ExperimentConfig) -> SweepConfig {
    let mut s = SweepConfig::new(cfg.sweep.alphas.clone());
    s.levels = cfg.girsanov.levels.clone();
    s.map = PsiMap::new(cfg.sweep.psi0);
    s.cesaro_tail = cfg.sweep.cesaro_tail;
    s.lambda_y = cfg.sweep.lambda_y;
    s
}

fn execute(ctx: &mut Ctx, dir: &mut ArtifactDir) -> Result<()> {
    let (cfg, res) = (ctx.cfg, ctx.res);
    let (model, grid) = (&res.model, &res.grid);
    let drift = &cfg.drift.spec;
    let n_paths = cfg.mc.n_paths;
    let seed = cfg.mc.master_seed;

    if ctx.stage == Stage::Simulate {
        (ctx.log)(&format!("simulate: {n_paths} OU paths, {} steps", grid.n_steps()));
        let ends = map_paths(n_paths, seed, |_, s| sample_ou_path(model, grid, s).w(grid.n_steps()).to_vec());
        ou_moments(ctx, dir, &ends)?;
        ctx.done.push(Stage::Simulate);
        return Ok(());
    }

    let scfg = sweep_config(cfg);
    let stage = ctx.stage;
    let bound = res.bound;
    let phis = cfg.phi.kinds.clone();
    (ctx.log)(&format!(
        "sweep: {n_paths} paths x {} alphas, {} steps, drift {}",
        scfg.alphas.len(),
        grid.n_steps(),
        drift.label()
    ));
    let hook = |sw: &PathSweep, path: &monou::SamplePath, sols: &[monou::RegularizedSolution]| -> monou::Result<PathExtras> {
        let mut per_alpha = Vec::with_capacity(sols.len());
        for sol in sols {
            let phi = if stage >= Stage::Phi {
                phis.iter()
                    .map(|p| check_phi_bound(sol, path, p, model, &bound))
                    .collect::<monou::Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let (log_rho, stopped_log_rho, lrt) = if stage >= Stage::Girsanov {
                let (z, stopped) = zeta_with_stops(model, drift, sol.alpha(), path, &sw.stopping)?;
                (z, stopped, log_rho_tilde(model, drift, sol, path)?)
            } else {
                (0.0, Vec::new(), 0.0)
            };
            per_alpha.push(AlphaExtras {
                log_rho,
                log_rho_tilde: lrt,
                stopped_log_rho,
                phi,
            });
        }
        let mut k_rows = Vec::new();
        if stage >= Stage::Phi && sw.path_id < K_PATHS {
            let n = grid.n_nodes();
            let stride = n.div_ceil(K_NODES).max(1);
            for p in &phis {
                let ks = k_functions(path, p, model.beta(), &bound);
                for k in (0..n).step_by(stride) {
                    k_rows.push([
                        sw.path_id.to_string(),
                        p.label(),
                        num(grid.time(k)),
                        num(ks[k].0),
                        num(ks[k].1),
                    ]);
                }
            }
        }
        Ok(PathExtras {
            w_end: path.w(grid.n_steps()).to_vec(),
            per_alpha,
            k_rows,
        })
    };
    let (report, paths, extras) = alpha_sweep_with(model, drift, grid, &scfg, n_paths, seed, hook)?;

    let ends: Vec<Vec<f64>> = extras.iter().map(|e| e.w_end.clone()).collect();
    ou_moments(ctx, dir, &ends)?;
    ctx.done.push(Stage::Simulate);

    sweep_outputs(ctx, dir, &scfg, &report)?;
    ctx.done.push(Stage::Sweep);
    if stage == Stage::Sweep {
        return Ok(());
    }

    phi_outputs(ctx, dir, &scfg, &extras)?;
    ctx.done.push(Stage::Phi);
    if stage == Stage::Phi {
        return Ok(());
    }

    let tails = girsanov_outputs(ctx, dir, &scfg, &paths, &extras)?;
    ctx.done.push(Stage::Girsanov);
    if stage == Stage::Girsanov {
        return Ok(());
    }

    psi_outputs(ctx, dir, &scfg, &paths, &extras, tails)?;
    ctx.done.push(Stage::Psi);
    Ok(())
}

fn ou_moments(ctx: &mut Ctx, dir: &mut ArtifactDir, ends: &[Vec<f64>]) -> Result<()> {
    let model = &ctx.res.model;
    let t = model.horizon();
    let (mean, var) = model.ou_moments(t)?;
    let mut table = Table::new([
        "mode",
        "t",
        "mean",
        "mean_theory",
        "mean_stderr",
        "var",
        "var_theory",
        "var_stderr",
        "z_mean",
        "z_var",
    ]);
    let mut worst: f64 = 0.0;
    for i in 0..model.dim() {
        let xs: Vec<f64> = ends.iter().map(|w| w[i]).collect();
        let m = moment_estimate(&xs);
        let z_mean = (m.mean - mean[i]) / m.mean_stderr;
        let z_var = (m.variance - var[i]) / m.variance_stderr;
        worst = worst.max(z_mean.abs()).max(z_var.abs());
        table.row([
            (i + 1).to_string(),
            num(t),
            num(m.mean),
            num(mean[i]),
            num(m.mean_stderr),
            num(m.variance),
            num(var[i]),
            num(m.variance_stderr),
            num(z_mean),
            num(z_var),
        ]);
    }
    dir.table("ou_moments.csv", table)?;
    ctx.checks.push(Check::at_most("ou_moments_max_z", worst, 4.0));
    Ok(())
}

fn sweep_outputs(ctx: &mut Ctx, dir: &mut ArtifactDir, scfg: &SweepConfig, report: &SweepReport) -> Result<()> {
    let mut header = vec![
        "alpha".to_string(),
        "path_id".into(),
        "sup_gap_to_next_alpha".into(),
        "bound_violations".into(),
    ];
    header.extend(scfg.levels.iter().map(|n| format!("tau_{n}")));
    let mut table = Table::new(&header);
    for r in &report.rows {
        let mut row = vec![num(r.alpha), r.path_id.to_string(), opt(r.sup_gap_to_next_alpha), r.bound_violations.to_string()];
        row.extend(r.taus.iter().map(|&t| num(t)));
        table.row(&row);
    }
    dir.table("sweep.csv", table)?;

    let mut gaps = Table::new(["set_id", "functional_id", "alpha_index", "gap"]);
    for (j, m) in report.gap_matrices.iter().enumerate() {
        for e in &m.entries {
            gaps.row([e.set_id.to_string(), e.functional_id.to_string(), j.to_string(), num(e.gap)]);
        }
    }
    dir.table("gaps.csv", gaps)?;

    let mut seq = Table::new(["alpha", "next_alpha", "weak_gap", "max_sup_gap"]);
    for (j, a) in report.per_alpha.iter().enumerate() {
        if let Some(g) = a.weak_gap_to_next {
            seq.row([num(a.alpha), num(scfg.alphas[j + 1]), num(g), opt(a.max_sup_gap_to_next)]);
        }
    }
    seq.row([
        "candidate".to_string(),
        num(*scfg.alphas.last().expect("alphas")),
        num(report.candidate_weak_gap),
        num(report.candidate_sup_gap),
    ]);
    dir.table("gap_sequence.csv", seq)?;

    for a in &report.per_alpha {
        let b = &a.bounds;
        ctx.checks.push(Check::at_most(
            format!("z_bound[alpha={}]", a.alpha),
            (b.z_half_violations + b.z_full_violations) as f64,
            0.0,
        ));
        ctx.checks.push(Check::at_most(
            format!("x_bound[alpha={}]", a.alpha),
            (b.x_violations + b.gronwall_violations) as f64,
            0.0,
        ));
        ctx.checks.push(Check::at_most(
            format!("stopping_certified[alpha={}]", a.alpha),
            a.stopping_violations as f64,
            0.0,
        ));
    }
    ctx.checks.push(Check::at_most("cesaro_candidate_gap_ratio", report.candidate_gap_ratio, 2.0));
    ctx.checks.push(Check::at_most("limsup_violations", report.limsup.violations as f64, 0.0));
    let growth = report
        .gap_sequence
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .fold(0.0, f64::max);
    ctx.checks.push(Check::at_most("gap_sequence_max_ratio", growth, 1.0).diagnostic());
    if let Some(g) = report.subsequence_gap {
        let combined: f64 = report.gap_sequence.iter().sum();
        ctx.checks.push(Check::at_most("subsequence_candidate_gap", g, combined).diagnostic());
    }
    (ctx.log)(&format!(
        "sweep: gaps {:?}, candidate ratio {}",
        report.gap_sequence, report.candidate_gap_ratio
    ));
    Ok(())
}

fn phi_outputs(ctx: &mut Ctx, dir: &mut ArtifactDir, scfg: &SweepConfig, extras: &[PathExtras]) -> Result<()> {
    let cfg = ctx.cfg;
    let mut table = Table::new([
        "phi",
        "path_id",
        "alpha",
        "nodes",
        "violations",
        "violations_sharp",
        "violations_corrected",
        "overflow_nodes",
        "max_ratio",
        "max_ratio_sharp",
        "max_ratio_corrected",
    ]);
    let mut totals = vec![PhiBoundReport::default(); cfg.phi.kinds.len()];
    for (pi, phi) in cfg.phi.kinds.iter().enumerate() {
        for (path_id, e) in extras.iter().enumerate() {
            for (j, a) in e.per_alpha.iter().enumerate() {
                let r = &a.phi[pi];
                totals[pi].merge(r);
                table.row([
                    phi.label(),
                    path_id.to_string(),
                    num(scfg.alphas[j]),
                    r.nodes.to_string(),
                    r.violations.to_string(),
                    r.violations_sharp.to_string(),
                    r.violations_corrected.to_string(),
                    r.overflow_nodes.to_string(),
                    num(r.max_ratio),
                    num(r.max_ratio_sharp),
                    num(r.max_ratio_corrected),
                ]);
            }
        }
    }
    dir.table("phi.csv", table)?;
    for (phi, t) in cfg.phi.kinds.iter().zip(&totals) {
        let label = phi.label();
        ctx.checks.push(Check::at_most(format!("phi_bound[{label}]"), t.violations_corrected as f64, 0.0));
        ctx.checks
            .push(Check::at_most(format!("phi_bound_stated[{label}]"), t.violations as f64, 0.0).diagnostic());
        ctx.checks
            .push(Check::at_most(format!("phi_bound_sharp[{label}]"), t.violations_sharp as f64, 0.0).diagnostic());
        ctx.checks
            .push(Check::at_most(format!("phi_overflow_nodes[{}]", phi.label()), t.overflow_nodes as f64, 0.0).diagnostic());
    }

    let beta = ctx.res.model.beta();
    let mut consts = Table::new([
        "phi",
        "c",
        "beta",
        "b",
        "constant",
        "u0",
        "argmax",
        "extended_bracket",
        "closed_form",
        "closed_form_kind",
    ]);
    for phi in &cfg.phi.kinds {
        for &b in &cfg.phi.b_values {
            for &c in &cfg.phi.c_values {
                let cc = c_constant(phi, c, beta, b)?;
                let name = format!("lemma_constant[{},c={c},b={b}]", phi.label());
                let (cf, kind) = match cc.closed_form {
                    Some((v, k)) => (Some(v), Some(k)),
                    None => (None, None),
                };
                consts.row([
                    phi.label(),
                    num(c),
                    num(beta),
                    num(b),
                    num(cc.c),
                    num(cc.u0),
                    num(cc.argmax),
                    cc.extended_bracket.to_string(),
                    opt(cf),
                    match kind {
                        Some(ClosedFormKind::Exact) => "exact".into(),
                        Some(ClosedFormKind::UpperBound) => "upper_bound".into(),
                        None => String::new(),
                    },
                ]);
                match (cf, kind) {
                    (Some(v), Some(ClosedFormKind::Exact)) => {
                        let rel = (v - cc.c).abs() / v.abs().max(1e-300);
                        ctx.checks.push(Check::at_most(name, rel, 1e-6));
                    }
                    (Some(v), Some(ClosedFormKind::UpperBound)) => {
                        let rel = (cc.c - v) / v.abs().max(1e-300);
                        ctx.checks.push(Check::at_most(name, rel, 1e-9));
                    }
                    _ => {}
                }
            }
        }
    }
    dir.table("constants.csv", consts)?;

    let mut k = Table::new(["path_id", "phi", "t", "k_phi", "k_phi_beta_a"]);
    for e in extras {
        for r in &e.k_rows {
            k.row(r);
        }
    }
    dir.table("k_functions.csv", k)?;
    Ok(())
}

struct Tails {
    raw: TailFunction,
    upper: TailFunction,
    ln_grid: Vec<f64>,
}

fn bounded(bound: &BoundFn) -> bool {
    matches!(bound, BoundFn::Zero | BoundFn::Constant { .. })
}

fn girsanov_outputs(
    ctx: &mut Ctx,
    dir: &mut ArtifactDir,
    scfg: &SweepConfig,
    paths: &[PathSweep],
    extras: &[PathExtras],
) -> Result<Tails> {
    let (cfg, res) = (ctx.cfg, ctx.res);
    let model = &res.model;
    let levels = &scfg.levels;
    let mut header: Vec<String> = ["path_id", "alpha", "zeta_t", "log_rho", "log_rho_tilde"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(levels.iter().map(|n| format!("tau_{n}")));
    header.extend(levels.iter().map(|n| format!("stopped_log_rho_{n}")));
    let mut table = Table::new(&header);
    for (j, &alpha) in scfg.alphas.iter().enumerate() {
        for (p, e) in paths.iter().zip(extras) {
            let a = &e.per_alpha[j];
            let mut row = vec![
                p.path_id.to_string(),
                num(alpha),
                num(a.log_rho),
                num(a.log_rho),
                num(a.log_rho_tilde),
            ];
            row.extend(p.stopping.iter().map(|r| num(r.tau)));
            row.extend(a.stopped_log_rho.iter().map(|&v| num(v)));
            table.row(&row);
        }
    }
    dir.table("densities.csv", table)?;

    let gate_martingale = bounded(&res.bound);
    for (j, &alpha) in scfg.alphas.iter().enumerate() {
        let logs: Vec<f64> = extras.iter().map(|e| e.per_alpha[j].log_rho).collect();
        let m = martingale_check(&logs);
        let c = Check {
            name: format!("martingale[alpha={alpha}]"),
            gating: gate_martingale,
            passed: m.passed,
            value: (m.mean - 1.0).abs(),
            bound: 4.0 * m.stderr,
            margin: 4.0 * m.stderr - (m.mean - 1.0).abs(),
        };
        ctx.checks.push(c);
        let tildes: Vec<f64> = extras.iter().map(|e| e.per_alpha[j].log_rho_tilde).collect();
        for (li, &n) in levels.iter().enumerate() {
            let stopped: Vec<f64> = extras.iter().map(|e| e.per_alpha[j].stopped_log_rho[li]).collect();
            let s = supermartingale_check(&stopped);
            ctx.checks.push(Check::at_most(
                format!("stopped_supermartingale[alpha={alpha},n={n}]"),
                s.mean,
                1.0 + 4.0 * s.stderr,
            ));
            let taus: Vec<StoppingRecord> = paths.iter().map(|p| p.stopping[li]).collect();
            let r = stopped_moment_bound(&tildes, &taus, res.bound.eval(n as f64), model.sigma_inv_norm(), model.horizon())?;
            let allowed = r.log_bound + (4.0 * r.relative_stderr).ln_1p();
            ctx.checks.push(Check::at_most(
                format!("stopped_l2[alpha={alpha},n={n}]"),
                r.log_estimate,
                allowed,
            ));
        }
    }
    if cfg.drift.spec == DriftSpec::Zero {
        let nonzero = extras
            .iter()
            .flat_map(|e| &e.per_alpha)
            .filter(|a| a.log_rho != 0.0 || a.log_rho_tilde != 0.0)
            .count();
        ctx.checks.push(Check::at_most("zero_drift_unit_density", nonzero as f64, 0.0));
    }

    let maxima: Vec<f64> = paths.iter().map(|p| p.threshold_max).collect();
    let g = &cfg.girsanov;
    let raw = TailFunction::new(res.bound, model.sigma_inv_norm(), model.horizon(), maxima, g.n_max)?;
    let upper = raw.clone().with_upper_confidence(g.confidence_z);
    let mut ln_grid = match g.y_grid.ln_y_min {
        Some(lo) => log_spaced(lo, g.y_grid.ln_y_max, g.y_grid.points),
        None => raw.default_grid(g.y_grid.ln_y_max, g.y_grid.points),
    };
    let lo = ln_grid[0];
    let start = raw.admissible_ln_y();
    for bp in raw.ln_breakpoints() {
        let after = bp + 1e-9 * bp.abs().max(1.0);
        if after > lo && after > start && after < g.y_grid.ln_y_max {
            ln_grid.push(after);
        }
    }
    ln_grid.sort_by(f64::total_cmp);
    ln_grid.dedup();
    let rows = raw.table(&ln_grid)?;
    let upper_rows = upper.table(&ln_grid)?;
    let mut t = Table::new([
        "ln_y",
        "n_of_y",
        "truncated",
        "hits",
        "freq",
        "wilson_upper",
        "p",
        "p_rearranged",
        "p_upper",
        "p_upper_rearranged",
        "p_chebyshev",
    ]);
    for (r, u) in rows.iter().zip(&upper_rows) {
        t.row([
            num(r.ln_y),
            r.n_of_y.to_string(),
            r.truncated.to_string(),
            r.hits.to_string(),
            num(r.freq),
            num(r.wilson_upper),
            num(r.p),
            num(r.p_rearranged),
            num(r.p_upper),
            num(u.p_rearranged),
            num(r.p_chebyshev),
        ]);
    }
    dir.table("tail.csv", t)?;
    Ok(Tails { raw, upper, ln_grid })
}

fn psi_table(psi: &PsiSpec, tails: &Tails) -> Result<Table> {
    let mut t = Table::new(["y", "p", "n_of_y", "psi", "psi_prime", "ln_y", "ln_psi"]);
    for &l in &tails.ln_grid {
        let (n, _) = tails.raw.level(l)?;
        let lp = psi.ln_psi(l);
        t.row([
            num(l.exp()),
            num(tails.raw.p_ln(l)),
            n.to_string(),
            num(lp.exp()),
            num(psi.psi_prime(l)),
            num(l),
            num(lp),
        ]);
    }
    Ok(t)
}

fn psi_outputs(
    ctx: &mut Ctx,
    dir: &mut ArtifactDir,
    scfg: &SweepConfig,
    paths: &[PathSweep],
    extras: &[PathExtras],
    tails: Tails,
) -> Result<()> {
    let (cfg, res) = (ctx.cfg, ctx.res);
    let g = &cfg.girsanov;
    let upper: Arc<dyn TailProbability> = Arc::new(tails.upper.clone());
    let closed = psi_closed_form(g.psi.delta.unwrap_or(0.5))?;
    let envelope = build_psi_envelope(upper.clone());
    let mollified = build_psi_mollified(upper.clone(), g.mollifier_delta)?;
    let knot_table: Vec<(f64, f64)> = tails
        .upper
        .table(&tails.ln_grid)?
        .iter()
        .map(|r| (r.ln_y, r.p_rearranged))
        .collect();
    let bump = build_psi_bump(&knot_table, g.max_knots)?;

    let named = [
        ("closed_form", &closed),
        ("envelope", &envelope),
        ("mollified", &mollified),
        ("bump", &bump),
    ];
    // carry the Stieltjes grid well past the last jump of the empirical tail
    let last_jump = tails.raw.ln_breakpoints().into_iter().fold(0.0, f64::max);
    let igrid = IntegralGrid {
        ln_y_max: IntegralGrid::default().ln_y_max.max(4.0 * last_jump),
        ..IntegralGrid::default()
    };
    for (name, psi) in named {
        dir.table(&format!("psi_{name}.csv"), psi_table(psi, &tails)?)?;
        let r = check_psi_integral(psi, &tails.raw, igrid);
        let c = match r.bound {
            Some(b) => Check::at_most(format!("psi_integral[{name}]"), r.ln_total.exp(), b),
            // only finiteness is claimed; the value is ln of the integral
            None => Check {
                name: format!("psi_integral_ln[{name}]"),
                gating: true,
                passed: r.passed,
                value: r.ln_total,
                bound: f64::INFINITY,
                margin: f64::INFINITY,
            },
        };
        ctx.checks.push(c);
    }
    let inv: Arc<dyn TailProbability> = Arc::new(InverseTail);
    let r = check_psi_integral(&build_psi_envelope(inv), &InverseTail, IntegralGrid::default());
    ctx.checks.push(Check::at_most(
        "envelope_identity_inverse_tail",
        (r.integral + r.remainder - 1.0).abs(),
        1e-3,
    ));

    let norms: Vec<Vec<f64>> = (0..scfg.sample_nodes(&res.grid).len())
        .map(|j| paths.iter().map(|p| p.w0_norms[j]).collect())
        .collect();
    let ou = OuTail::new(norms)?;
    let s_max = paths.iter().flat_map(|p| &p.w0_norms).copied().fold(0.0, f64::max);
    let s_grid: Vec<f64> = (0..=200).map(|i| s_max * i as f64 / 200.0).collect();
    let mut p0 = Table::new(["s", "p0"]);
    for r in p0_tail(&ou, &s_grid) {
        p0.row([num(r.s), num(r.p0)]);
    }
    dir.table("p0.csv", p0)?;

    let selected = match g.psi.kind {
        PsiKind::Identity => PsiSpec::Identity,
        PsiKind::ClosedForm => closed.clone(),
        PsiKind::Envelope => envelope.clone(),
        PsiKind::Mollified => mollified.clone(),
        PsiKind::Bump => bump.clone(),
    };
    if let Some(fit) = fit_chain(&ou, &res.bound, &tails.raw, &tails.ln_grid, &|l| selected.ln_psi(l)) {
        ctx.checks.push(Check::at_most("chain_fit_violations", fit.violations as f64, 0.0).diagnostic());
    }

    let mut table = Table::new([
        "psi",
        "alpha",
        "route1",
        "route1_stderr",
        "route2",
        "route2_stderr",
        "combined_stderr",
        "agree",
    ]);
    let all = [
        ("identity", PsiSpec::Identity),
        ("closed_form", closed),
        ("envelope", envelope),
        ("mollified", mollified),
        ("bump", bump),
    ];
    let mut selected_means = Vec::new();
    for (j, &alpha) in scfg.alphas.iter().enumerate() {
        let even: Vec<f64> = extras.iter().step_by(2).map(|e| e.per_alpha[j].log_rho).collect();
        let odd: Vec<f64> = extras.iter().skip(1).step_by(2).map(|e| e.per_alpha[j].log_rho_tilde).collect();
        for (name, psi) in &all {
            let r: EntropyReport = entropy_statistic(&even, &odd, psi)?;
            table.row([
                name.to_string(),
                num(alpha),
                num(r.route1.mean),
                num(r.route1.stderr),
                num(r.route2.mean),
                num(r.route2.stderr),
                num(r.combined_stderr),
                r.agree.to_string(),
            ]);
            let diff = (r.route1.mean - r.route2.mean).abs();
            // the identity is outside the admissible class and only gates when selected
            ctx.checks.push(Check {
                name: format!("entropy_routes[{name},alpha={alpha}]"),
                gating: !matches!(psi, PsiSpec::Identity) || g.psi.kind == PsiKind::Identity,
                passed: r.agree,
                value: diff,
                bound: 4.0 * r.combined_stderr,
                margin: 4.0 * r.combined_stderr - diff,
            });
        }
        let r = entropy_statistic(&even, &odd, &selected)?;
        selected_means.push(r.route1.mean);
    }
    dir.table("entropy.csv", table)?;
    let ratio = stability_ratio(&selected_means);
    ctx.checks
        .push(Check::at_most(format!("entropy_alpha_stability[{}]", selected.label()), ratio, 3.0));
    (ctx.log)(&format!("psi: {} route-1 means {:?}", selected.label(), selected_means));
    Ok(())
}

/// Stages whose output files are all present in `dir`.
pub fn present_stages(dir: &Path) -> Vec<Stage> {
    Stage::ALL
        .into_iter()
        .filter(|s| s.outputs().iter().all(|f| dir.join(f).exists()))
        .collect()
}

pub fn missing_files(dir: &Path, upto: Stage) -> Vec<String> {
    Stage::ALL
        .into_iter()
        .filter(|s| *s <= upto)
        .flat_map(|s| s.outputs().iter())
        .chain(["results.csv"].iter())
        .filter(|f| !dir.join(f).exists())
        .map(|f| f.to_string())
        .collect()
}
