use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::pipeline::Stage;

pub const MANIFEST: &str = "manifest.json";

/// Shortest round-trip formatting, so reruns produce identical bytes.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// A CSV table built in memory and written in one piece.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {}", tmp.display()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The output directory and the digests of everything written to it.
pub struct ArtifactDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn table(&mut self, name: &str, table: Table) -> Result<()> {
        self.write(name, &table.into_bytes())
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Diagnostics are reported but do not affect the exit status.
    pub gating: bool,
    pub passed: bool,
    #[serde(with = "lossless_f64")]
    pub value: f64,
    #[serde(with = "lossless_f64")]
    pub bound: f64,
    /// `bound - value`; non-negative when the check passes.
    #[serde(with = "lossless_f64")]
    pub margin: f64,
}

impl Check {
    /// Passes when `value <= bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            gating: true,
            passed: value <= bound,
            value,
            bound,
            margin: bound - value,
        }
    }

    pub fn diagnostic(mut self) -> Self {
        self.gating = false;
        self
    }

    pub fn failed_gate(&self) -> bool {
        self.gating && !self.passed
    }
}

pub fn checks_table(checks: &[Check]) -> Table {
    let mut t = Table::new(["check", "gating", "passed", "value", "bound", "margin"]);
    for c in checks {
        t.row([
            c.name.clone(),
            c.gating.to_string(),
            c.passed.to_string(),
            num(c.value),
            num(c.bound),
            num(c.margin),
        ]);
    }
    t
}

/// JSON has no infinities; non-finite values travel as the strings `inf`, `-inf`, `NaN`.
mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub status: RunStatus,
    pub requested_stage: Stage,
    pub completed_stages: Vec<Stage>,
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn last_completed_stage(&self) -> Option<Stage> {
        self.completed_stages.last().copied()
    }

    pub fn all_passed(&self) -> bool {
        self.status == RunStatus::Complete && !self.checks.iter().any(Check::failed_gate)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
