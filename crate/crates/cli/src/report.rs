use std::fmt::Write as _;
use std::path::Path;

use crate::output::{Check, RunManifest, RunStatus, MANIFEST};
use crate::pipeline::{missing_files, present_stages, Stage};

/// Check groups shown in the summary matrix, matched by name prefix.
const GROUPS: &[(&str, &[&str])] = &[
    ("OU moments", &["ou_moments"]),
    ("a priori bounds |Z|, |X|", &["z_bound", "x_bound", "stopping_certified"]),
    ("phi estimates", &["phi_bound", "lemma_constant"]),
    ("Girsanov martingale", &["martingale", "zero_drift_unit_density"]),
    ("stopped L2 bound", &["stopped_l2", "stopped_supermartingale"]),
    ("Psi integrals", &["psi_integral", "envelope_identity"]),
    ("entropy statistic", &["entropy_routes", "entropy_alpha_stability"]),
    ("pseudo-weak limit", &["cesaro", "limsup", "gap_sequence", "subsequence"]),
];

fn in_group(check: &Check, prefixes: &[&str]) -> bool {
    prefixes.iter().any(|p| check.name.starts_with(p))
}

pub struct Summary {
    pub text: String,
    pub passed: bool,
}

/// One-page summary of an artifact directory.
pub fn summarize(dir: &Path) -> Summary {
    let mut text = String::new();
    let manifest = match RunManifest::load(dir) {
        Ok(m) => m,
        Err(e) => {
            let _ = writeln!(text, "no readable {MANIFEST} in {}: {e:#}", dir.display());
            let present = present_stages(dir);
            let _ = writeln!(
                text,
                "stages with complete outputs: {}",
                present.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
            );
            for f in missing_files(dir, Stage::Psi) {
                let _ = writeln!(text, "missing: {f}");
            }
            return Summary { text, passed: false };
        }
    };

    let _ = writeln!(text, "monou run, version {}", manifest.version);
    let _ = writeln!(
        text,
        "drift {}, d = {}, {} paths, seed {}, {:.1} s",
        manifest.config.drift.spec.label(),
        manifest.config.model.dim,
        manifest.config.mc.n_paths,
        manifest.config.mc.master_seed,
        manifest.wall_clock_seconds
    );
    let status = match manifest.status {
        RunStatus::Complete => "complete",
        RunStatus::Failed => "FAILED",
    };
    let _ = writeln!(text, "status: {status} (requested stage {})", manifest.requested_stage.name());
    if let Some(e) = &manifest.error {
        let _ = writeln!(text, "error: {e}");
    }
    for s in Stage::ALL.into_iter().filter(|s| *s <= manifest.requested_stage) {
        if !manifest.completed_stages.contains(&s) {
            let _ = writeln!(text, "incomplete stage: {}", s.name());
        }
    }

    let mut missing = missing_files(dir, manifest.last_completed_stage().unwrap_or(Stage::Simulate));
    if manifest.completed_stages.is_empty() {
        missing.clear();
    }
    for name in manifest.files.keys() {
        if !dir.join(name).exists() && !missing.contains(name) {
            missing.push(name.clone());
        }
    }
    for f in &missing {
        let _ = writeln!(text, "missing file: {f}");
    }

    let _ = writeln!(text);
    let _ = writeln!(text, "{:<28} {:>6} {:>8} {:>14}", "check group", "status", "passed", "min margin");
    for (label, prefixes) in GROUPS {
        let gated: Vec<&Check> = manifest
            .checks
            .iter()
            .filter(|c| c.gating && in_group(c, prefixes))
            .collect();
        if gated.is_empty() {
            continue;
        }
        let ok = gated.iter().filter(|c| c.passed).count();
        let margin = gated.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
        let _ = writeln!(
            text,
            "{:<28} {:>6} {:>8} {:>14.6e}",
            label,
            if ok == gated.len() { "PASS" } else { "FAIL" },
            format!("{ok}/{}", gated.len()),
            margin
        );
    }

    let failed: Vec<&Check> = manifest.checks.iter().filter(|c| c.failed_gate()).collect();
    if !failed.is_empty() {
        let _ = writeln!(text);
        let _ = writeln!(text, "failed checks:");
        for c in failed {
            let _ = writeln!(text, "  {}: value {} bound {}", c.name, c.value, c.bound);
        }
    }
    let diag: Vec<&Check> = manifest.checks.iter().filter(|c| !c.gating).collect();
    if !diag.is_empty() {
        let _ = writeln!(text);
        let _ = writeln!(text, "diagnostics (not gating):");
        for c in diag {
            let _ = writeln!(
                text,
                "  {:<48} {} value {} bound {}",
                c.name,
                if c.passed { "ok  " } else { "over" },
                c.value,
                c.bound
            );
        }
    }
    let passed = manifest.all_passed() && missing.is_empty();
    Summary { text, passed }
}
