//! Radial compressions `psi(h) = (h/|h|) psi0(|h|)`, pseudo-weak gaps on the
//! empirical product grid `[0, T] x {paths}`, and Cesaro-mean limit candidates.
//!
//! A field is a flat `n_nodes * dim` slice per path. Gaps are linear in
//! `psi(field)`, so each path is reduced to its test integrals once and gaps
//! come from differences of the summed integrals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StateVector;
use crate::ou::PathGrid;

/// Entries of a Cesaro mean are pulled back to this radius before inverting.
const CLAMP_RADIUS: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi0 {
    /// `r / (1 + r)`.
    #[default]
    Compress,
    Identity,
}

impl Psi0 {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            Self::Compress => r / (1.0 + r),
            Self::Identity => r,
        }
    }

    pub fn inverse(self, s: f64) -> f64 {
        match self {
            Self::Compress => s / (1.0 - s),
            Self::Identity => s,
        }
    }

    pub fn sup(self) -> f64 {
        match self {
            Self::Compress => 1.0,
            Self::Identity => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PsiMap {
    pub psi0: Psi0,
}

impl PsiMap {
    pub fn new(psi0: Psi0) -> Self {
        Self { psi0 }
    }

    fn scale(r: f64, target: f64) -> f64 {
        if r == 0.0 {
            0.0
        } else {
            target / r
        }
    }

    pub fn apply_into(&self, h: &[f64], out: &mut [f64]) {
        let r = crate::model::norm(h);
        let s = Self::scale(r, self.psi0.eval(r));
        for (o, v) in out.iter_mut().zip(h) {
            *o = s * v;
        }
    }

    pub fn apply(&self, h: &[f64]) -> StateVector {
        let mut out = vec![0.0; h.len()];
        self.apply_into(h, &mut out);
        out.into()
    }

    pub fn invert_into(&self, h: &[f64], out: &mut [f64]) -> Result<()> {
        let r = crate::model::norm(h);
        let radius = self.psi0.sup();
        if r >= radius {
            return Err(Error::OutsideBall { norm: r, radius });
        }
        let s = Self::scale(r, self.psi0.inverse(r));
        for (o, v) in out.iter_mut().zip(h) {
            *o = s * v;
        }
        Ok(())
    }

    pub fn invert(&self, h: &[f64]) -> Result<StateVector> {
        let mut out = vec![0.0; h.len()];
        self.invert_into(h, &mut out)?;
        Ok(out.into())
    }

    /// `psi` applied node by node to a flat field.
    pub fn apply_field(&self, field: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; field.len()];
        for (h, o) in field.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
            self.apply_into(h, o);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSet {
    All,
    Even,
    Odd,
}

impl PathSet {
    pub const ALL: [PathSet; 3] = [PathSet::All, PathSet::Even, PathSet::Odd];

    pub fn contains(self, path_id: usize) -> bool {
        match self {
            Self::All => true,
            Self::Even => path_id % 2 == 0,
            Self::Odd => path_id % 2 == 1,
        }
    }
}

/// Test sets `window x path-set` and functionals `cos(i pi t / T) e_j`.
/// Windows are dyadic: `[0, T]`, its halves, its quarters, and so on for
/// `levels` levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub levels: usize,
    pub time_modes: usize,
    pub space_modes: usize,
}

impl Default for TestFamily {
    fn default() -> Self {
        Self {
            levels: 3,
            time_modes: 8,
            space_modes: 8,
        }
    }
}

impl TestFamily {
    pub fn n_windows(&self) -> usize {
        (1 << self.levels) - 1
    }

    pub fn n_functionals(&self, dim: usize) -> usize {
        self.time_modes * self.space_modes.min(dim)
    }

    pub fn n_tests(&self, dim: usize) -> usize {
        self.n_windows() * self.n_functionals(dim)
    }

    pub fn windows(&self, horizon: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.n_windows());
        for level in 0..self.levels {
            let parts = 1usize << level;
            let w = horizon / parts as f64;
            for i in 0..parts {
                out.push((i as f64 * w, (i + 1) as f64 * w));
            }
        }
        out
    }

    /// `int_window <field(t), g_i(t) e_j> dt` for every window and functional,
    /// window-major. Each trapezoid segment goes to the finest window that
    /// holds its midpoint; coarser windows are sums of finer ones.
    pub fn integrate(&self, grid: &PathGrid, field: &[f64], dim: usize) -> Vec<f64> {
        let nf = self.n_functionals(dim);
        let js = self.space_modes.min(dim);
        let finest = 1usize << (self.levels - 1);
        let horizon = grid.horizon();
        let mut fine = vec![0.0; finest * nf];
        let mut values = vec![0.0; nf];
        let mut prev = vec![0.0; nf];
        let node_values = |k: usize, buf: &mut [f64]| {
            let t = grid.time(k);
            let h = &field[k * dim..(k + 1) * dim];
            for i in 0..self.time_modes {
                let g = (i as f64 * std::f64::consts::PI * t / horizon).cos();
                for j in 0..js {
                    buf[i * js + j] = g * h[j];
                }
            }
        };
        node_values(0, &mut prev);
        for k in 0..grid.n_steps() {
            node_values(k + 1, &mut values);
            let (t0, t1) = (grid.time(k), grid.time(k + 1));
            let mid = 0.5 * (t0 + t1);
            let w = ((mid / horizon * finest as f64) as usize).min(finest - 1);
            let half = 0.5 * (t1 - t0);
            let slot = &mut fine[w * nf..(w + 1) * nf];
            for f in 0..nf {
                slot[f] += half * (prev[f] + values[f]);
            }
            std::mem::swap(&mut prev, &mut values);
        }
        let mut out = vec![0.0; self.n_windows() * nf];
        let mut offset = 0;
        for level in 0..self.levels {
            let parts = 1usize << level;
            let span = finest / parts;
            for i in 0..parts {
                for q in i * span..(i + 1) * span {
                    for f in 0..nf {
                        out[(offset + i) * nf + f] += fine[q * nf + f];
                    }
                }
            }
            offset += parts;
        }
        out
    }
}

/// Test integrals of one field summed over each path set, weighted `1/n_paths`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSums {
    n_tests: usize,
    sums: Vec<f64>,
    n_paths: usize,
}

impl FieldSums {
    pub fn new(n_tests: usize) -> Self {
        Self {
            n_tests,
            sums: vec![0.0; PathSet::ALL.len() * n_tests],
            n_paths: 0,
        }
    }

    /// Paths must be added in a fixed order for bit-stable sums.
    pub fn add(&mut self, path_id: usize, integrals: &[f64]) {
        debug_assert_eq!(integrals.len(), self.n_tests);
        for (s, set) in PathSet::ALL.iter().enumerate() {
            if set.contains(path_id) {
                for (acc, v) in self.sums[s * self.n_tests..(s + 1) * self.n_tests].iter_mut().zip(integrals) {
                    *acc += v;
                }
            }
        }
        self.n_paths += 1;
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn value(&self, set: usize, test: usize) -> f64 {
        self.sums[set * self.n_tests + test] / self.n_paths as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEntry {
    pub set_id: usize,
    pub functional_id: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapMatrix {
    pub entries: Vec<GapEntry>,
    pub max: f64,
}

/// `|int_A <psi(F_n) - psi(F), h> dmu|` over the family; sets are numbered
/// `path_set * n_windows + window`.
pub fn weak_gap(a: &FieldSums, b: &FieldSums, family: &TestFamily, dim: usize) -> Result<GapMatrix> {
    if a.n_tests != b.n_tests || a.n_paths != b.n_paths {
        return Err(Error::GridMismatch("field sums over different families or ensembles".into()));
    }
    let nf = family.n_functionals(dim);
    let mut entries = Vec::with_capacity(a.sums.len());
    let mut max = 0.0f64;
    for s in 0..PathSet::ALL.len() {
        for t in 0..a.n_tests {
            let gap = (a.value(s, t) - b.value(s, t)).abs();
            max = max.max(gap);
            entries.push(GapEntry {
                set_id: s * family.n_windows() + t / nf,
                functional_id: t % nf,
                gap,
            });
        }
    }
    Ok(GapMatrix { entries, max })
}

/// In-memory ensemble of fields, for synthetic checks and small runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: PathGrid,
    pub dim: usize,
    /// One flat `n_nodes * dim` vector per path.
    pub paths: Vec<Vec<f64>>,
}

impl Field {
    pub fn sums(&self, map: &PsiMap, family: &TestFamily) -> FieldSums {
        let mut sums = FieldSums::new(family.n_tests(self.dim));
        for (i, p) in self.paths.iter().enumerate() {
            sums.add(i, &family.integrate(&self.grid, &map.apply_field(p, self.dim), self.dim));
        }
        sums
    }

    /// `max |F - G|` over nodes and paths.
    pub fn sup_gap(&self, other: &Field) -> f64 {
        self.paths
            .iter()
            .zip(&other.paths)
            .flat_map(|(a, b)| {
                a.chunks_exact(self.dim)
                    .zip(b.chunks_exact(self.dim))
                    .map(|(x, y)| crate::model::dist(x, y))
            })
            .fold(0.0, f64::max)
    }
}

/// Gaps of each `F_n` against `F`.
pub fn weak_gaps(fields: &[Field], target: &Field, map: &PsiMap, family: &TestFamily) -> Result<Vec<GapMatrix>> {
    let base = target.sums(map, family);
    fields
        .iter()
        .map(|f| weak_gap(&f.sums(map, family), &base, family, target.dim))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CesaroCandidate {
    pub field: Vec<f64>,
    pub clamped: usize,
    pub entries: usize,
}

/// `psi^{-1}` of the node-wise mean of `psi(F_k)`.
pub fn cesaro_limit(fields: &[&[f64]], dim: usize, map: &PsiMap) -> Result<CesaroCandidate> {
    if fields.len() < 2 {
        return Err(Error::InvalidArgument("a Cesaro mean needs at least two fields".into()));
    }
    let len = fields[0].len();
    if fields.iter().any(|f| f.len() != len) || len % dim != 0 {
        return Err(Error::GridMismatch("fields of different shapes".into()));
    }
    let m = fields.len() as f64;
    let radius = map.psi0.sup() * CLAMP_RADIUS;
    let mut out = vec![0.0; len];
    let mut mean = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    let mut clamped = 0;
    let entries = len / dim;
    for node in 0..entries {
        let range = node * dim..(node + 1) * dim;
        mean.iter_mut().for_each(|v| *v = 0.0);
        for f in fields {
            map.apply_into(&f[range.clone()], &mut buf);
            for (a, b) in mean.iter_mut().zip(&buf) {
                *a += b / m;
            }
        }
        let r = crate::model::norm(&mean);
        if r >= radius {
            clamped += 1;
            mean.iter_mut().for_each(|v| *v *= radius / r);
        }
        map.invert_into(&mean, &mut out[range])?;
    }
    if clamped == entries {
        return Err(Error::CesaroDiverged);
    }
    Ok(CesaroCandidate { field: out, clamped, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimsupReport {
    pub nodes: usize,
    pub violations: usize,
    pub first_violation: Option<usize>,
    pub tail_length: usize,
}

impl LimsupReport {
    pub fn merge(&mut self, other: &LimsupReport) {
        if self.first_violation.is_none() {
            self.first_violation = other.first_violation.map(|v| v + self.nodes);
        }
        self.nodes += other.nodes;
        self.violations += other.violations;
    }
}

/// `|F| <= max_n |F_n| + 1e-9 (1 + max)` at every node, the max over the
/// supplied tail standing in for the limsup.
pub fn limsup_check(tail: &[&[f64]], candidate: &[f64], dim: usize) -> LimsupReport {
    let nodes = candidate.len() / dim;
    let mut violations = 0;
    let mut first = None;
    for node in 0..nodes {
        let range = node * dim..(node + 1) * dim;
        let bound = tail
            .iter()
            .map(|f| crate::model::norm(&f[range.clone()]))
            .fold(0.0, f64::max);
        if crate::model::norm(&candidate[range]) > bound + 1e-9 * (1.0 + bound) {
            violations += 1;
            first.get_or_insert(node);
        }
    }
    LimsupReport {
        nodes,
        violations,
        first_violation: first,
        tail_length: tail.len(),
    }
}

/// `F_n(t) = c sign(sin(2 pi n t / T)) e_1` on every path.
pub fn oscillating_field(grid: &PathGrid, dim: usize, n_paths: usize, c: f64, n: u32) -> Field {
    let horizon = grid.horizon();
    let mut flat = vec![0.0; grid.n_nodes() * dim];
    for k in 0..grid.n_nodes() {
        let s = (2.0 * std::f64::consts::PI * n as f64 * grid.time(k) / horizon).sin();
        flat[k * dim] = if s.abs() < 1e-12 { 0.0 } else { c * s.signum() };
    }
    Field {
        grid: *grid,
        dim,
        paths: vec![flat; n_paths],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn psi_examples() {
        let map = PsiMap::default();
        assert_eq!(map.apply(&[0.0, 0.0]).into_inner(), vec![0.0, 0.0]);
        let v = map.apply(&[3.0, 4.0]);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(map.invert(&[0.6, 0.8]), Err(Error::OutsideBall { .. })));
        let id = PsiMap::new(Psi0::Identity);
        assert_eq!(id.invert(&[5.0, 1.0]).unwrap().into_inner(), vec![5.0, 1.0]);
    }

    #[test]
    fn round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let map = PsiMap::default();
        for _ in 0..1000 {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let h: Vec<f64> = (0..4).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let back = map.invert(&map.apply(&h)).unwrap();
            let err = crate::model::dist(&back, &h);
            assert!(err <= 1e-12 * (1.0 + crate::model::norm(&h)), "{err}");
        }
    }

    #[test]
    fn windows_and_weights() {
        let fam = TestFamily::default();
        let w = fam.windows(2.0);
        assert_eq!(w.len(), 7);
        assert_eq!(w[3], (0.0, 0.5));
        // constant unit field in coordinate 0: the i = 0 functional measures window length
        let grid = PathGrid::new(2.0, 64).unwrap();
        let field: Vec<f64> = (0..grid.n_nodes()).flat_map(|_| [1.0, 0.0]).collect();
        let ints = fam.integrate(&grid, &field, 2);
        let nf = fam.n_functionals(2);
        for (i, (a, b)) in w.iter().enumerate() {
            assert!((ints[i * nf] - (b - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn family_separates_distinct_fields() {
        let grid = PathGrid::new(1.0, 128).unwrap();
        let fam = TestFamily::default();
        let map = PsiMap::default();
        let base = Field { grid, dim: 2, paths: vec![vec![0.0; grid.n_nodes() * 2]; 4] };
        let mut other = base.clone();
        other.paths[3][2 * 40 + 1] = 0.5;
        let g = weak_gap(&other.sums(&map, &fam), &base.sums(&map, &fam), &fam, 2).unwrap();
        assert!(g.max > 0.0);
        let same = weak_gap(&base.sums(&map, &fam), &base.sums(&map, &fam), &fam, 2).unwrap();
        assert_eq!(same.max, 0.0);
    }

    #[test]
    fn cesaro_examples() {
        let map = PsiMap::default();
        let h = vec![1.0, -2.0, 0.5, 3.0];
        let c = cesaro_limit(&[&h, &h, &h], 2, &map).unwrap();
        assert!(crate::model::dist(&c.field, &h) < 1e-12);
        let neg: Vec<f64> = h.iter().map(|v| -v).collect();
        let c = cesaro_limit(&[&h, &neg], 2, &map).unwrap();
        assert!(c.field.iter().all(|v| v.abs() < 1e-15));
        assert!(cesaro_limit(&[&h], 2, &map).is_err());
        let huge = vec![1e16, 0.0];
        assert_eq!(cesaro_limit(&[&huge, &huge], 2, &map), Err(Error::CesaroDiverged));
    }

    #[test]
    fn limsup_flags_planted_defect() {
        let a = vec![1.0, 0.0, 0.0, 2.0, 3.0, 0.0];
        let b = vec![0.5, 0.0, 0.0, 1.0, 1.0, 1.0];
        let rep = limsup_check(&[&a, &b], &a, 2);
        assert_eq!(rep.violations, 0);
        let mut bad = a.clone();
        bad[3] = 2.5;
        let rep = limsup_check(&[&a, &b], &bad, 2);
        assert_eq!((rep.violations, rep.first_violation), (1, Some(1)));
    }
}
