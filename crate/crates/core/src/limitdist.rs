//! The Gaussian limit of the centered test process and its simulated
//! quantiles.
//!
//! Under the null, `V̂/κ̂` converges to a zero-mean Gaussian process with
//! covariance `γ(s,t|D,h) = 2{g²(s,t) − h(s)m(t) − h(t)m(s) + D m(s)m(t)}`,
//! where `D` and `h` depend only on the weights.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::{g, m};
use crate::error::{Error, Result};
use crate::estimators::{separable_sums, SchemeKind, WeightScheme};
use crate::rng;
use crate::teststat::{Functional, TestSpec};

pub const DEFAULT_GRID: usize = 1000;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 20_240_501;
const TABLE_VERSION: u32 = 1;
const PATH_BLOCK: usize = 250;

/// Significance levels stored in every table.
pub const ALPHA_LEVELS: [f64; 16] = [
    0.001, 0.005, 0.01, 0.025, 0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.75, 0.9,
];

/// Closed-form `(D, h)` for the standard schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DhClosed {
    Ols,
    Wls,
    PointTau(f64),
}

/// Limit constants for a standard scheme; custom weights have none.
pub fn dh_closed(kind: &SchemeKind) -> Result<DhClosed> {
    match *kind {
        SchemeKind::Ols => Ok(DhClosed::Ols),
        SchemeKind::Wls => Ok(DhClosed::Wls),
        SchemeKind::PointTau(tau) => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Parameter(format!("tau = {tau} must lie in (0, 1)")));
            }
            Ok(DhClosed::PointTau(tau))
        }
        SchemeKind::Custom(_) => Err(Error::Unsupported(
            "custom weights have no closed-form limit constants; use the finite-T kernel".into(),
        )),
    }
}

fn xlogx2(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x * x.ln()
    }
}

impl DhClosed {
    pub fn d(&self) -> f64 {
        match self {
            DhClosed::Ols => 13.0 / 28.0,
            DhClosed::Wls => PI * PI / 3.0 - 3.0,
            DhClosed::PointTau(_) => 1.0,
        }
    }

    pub fn h(&self, s: f64) -> f64 {
        match *self {
            DhClosed::Ols => {
                let ms = m(s);
                1.5 * ms * ms * (1.0 + 2.0 * ms)
            }
            DhClosed::Wls => -(xlogx2(s) + xlogx2(1.0 - s) + m(s)),
            DhClosed::PointTau(tau) => {
                let gs = g(s, tau);
                gs * gs / m(tau)
            }
        }
    }
}

/// Finite-sample `D_T(w)` and `h_T(k/T; w)` for `k = 1..T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DhFinite {
    pub d: f64,
    pub h: Vec<f64>,
}

/// `D_T = β₂⁻² (w∘m)ᵀ C (w∘m)` and `h_T = β₂⁻¹ C (w∘m)` with
/// `C_kl = g²(k/T, l/T)`. `C` is never formed: `g²` splits into a product
/// of one-sided factors, so `C v` is a pair of running sums.
pub fn dh_finite(w: &WeightScheme) -> DhFinite {
    let n = w.grid.len();
    let v: Vec<f64> = w.w_vec.iter().zip(&w.grid.m_vec).map(|(a, b)| a * b).collect();
    let mut cv = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    separable_sums(&w.grid, &v, 2, &mut cv, &mut scratch);
    let quad: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
    DhFinite {
        d: quad / (w.beta2 * w.beta2),
        h: cv.iter().map(|x| x / w.beta2).collect(),
    }
}

/// `γ(s,t|D,h)` given `h(s)` and `h(t)`.
pub fn gamma(s: f64, t: f64, d: f64, hs: f64, ht: f64) -> f64 {
    let gst = g(s, t);
    2.0 * (gst * gst - hs * m(t) - ht * m(s) + d * m(s) * m(t))
}

/// The limit covariance on a grid, with a lower-triangular square root.
#[derive(Debug, Clone)]
pub struct LimitKernel {
    pub grid: Vec<f64>,
    /// Quadrature weight of one grid point.
    pub spacing: f64,
    pub d: f64,
    pub h: Vec<f64>,
    /// Row-major `G×G`.
    pub gamma: Vec<f64>,
    /// Diagonal jitter that was needed for the factorization.
    pub jitter: f64,
    chol: DMatrix<f64>,
}

const PIVOT_ZERO: f64 = 1e-12;
const PIVOT_NEGATIVE: f64 = 1e-9;
const JITTER_START: f64 = 1e-10;
const JITTER_RETRIES: usize = 3;

/// Lower Cholesky factor of a positive semidefinite matrix. Pivots within
/// rounding of zero get a zero column; a clearly negative pivot fails.
fn semidefinite_cholesky(a: &[f64], n: usize, jitter: f64, scale: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let dot: f64 = l[j * n..j * n + j].iter().map(|x| x * x).sum();
        let d = a[j * n + j] + jitter - dot;
        if d <= PIVOT_ZERO * scale {
            if d < -PIVOT_NEGATIVE * scale {
                return None;
            }
            continue;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let (top, bottom) = l.split_at_mut(i * n);
            let lj = &top[j * n..j * n + j];
            let dot: f64 = bottom[..j].iter().zip(lj).map(|(x, y)| x * y).sum();
            bottom[j] = (a[i * n + j] - dot) / ljj;
        }
    }
    Some(l)
}

/// Semidefinite factorization of a symmetric matrix, escalating the
/// diagonal jitter when a pivot is clearly negative.
fn factor(gam: &[f64], n: usize) -> Result<(DMatrix<f64>, f64)> {
    let scale = (0..n).fold(0.0f64, |acc, i| acc.max(gam[i * n + i]));
    if !(scale > 0.0) {
        return Err(Error::KernelNotPsd {
            min_eigenvalue: min_eigenvalue(gam, n),
        });
    }
    let mut jitter = 0.0;
    let mut l = semidefinite_cholesky(gam, n, 0.0, scale);
    let mut attempt = 0;
    while l.is_none() && attempt <= JITTER_RETRIES {
        jitter = JITTER_START * scale * 10f64.powi(attempt as i32);
        log::debug!("limit kernel: retrying factorization with jitter {jitter:e}");
        l = semidefinite_cholesky(gam, n, jitter, scale);
        attempt += 1;
    }
    match l {
        Some(l) => Ok((DMatrix::from_row_slice(n, n, &l), jitter)),
        None => Err(Error::KernelNotPsd {
            min_eigenvalue: min_eigenvalue(gam, n),
        }),
    }
}

fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    let mat = DMatrix::from_row_slice(n, n, a);
    nalgebra::SymmetricEigen::new(mat)
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

impl LimitKernel {
    /// Kernel on `grid` with quadrature weight `spacing`, given `D` and `h`
    /// evaluated on the grid.
    pub fn new(grid: Vec<f64>, spacing: f64, d: f64, h: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if n == 0 || h.len() != n {
            return Err(Error::Dimension(format!(
                "kernel grid has {n} points but h has {}",
                h.len()
            )));
        }
        let mut gam = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = gamma(grid[i], grid[j], d, h[i], h[j]);
                gam[i * n + j] = v;
                gam[j * n + i] = v;
            }
        }
        let (chol, jitter) = factor(&gam, n)?;
        Ok(Self {
            grid,
            spacing,
            d,
            h,
            gamma: gam,
            jitter,
            chol,
        })
    }

    /// Closed-form kernel on `s_j = j/(G+1)`, `j = 1..G`.
    pub fn closed(kind: &SchemeKind, points: usize) -> Result<Self> {
        let dh = dh_closed(kind)?;
        if points == 0 {
            return Err(Error::Parameter("grid must have at least one point".into()));
        }
        let step = 1.0 / (points + 1) as f64;
        let grid: Vec<f64> = (1..=points).map(|j| j as f64 * step).collect();
        let h = grid.iter().map(|&s| dh.h(s)).collect();
        Self::new(grid, step, dh.d(), h)
    }

    /// Finite-T kernel on `k/T`, `k = 1..T-1`.
    pub fn finite(w: &WeightScheme) -> Result<Self> {
        let dh = dh_finite(w);
        let t = w.n_time();
        let grid = (1..t).map(|k| k as f64 / t as f64).collect();
        Self::new(grid, 1.0 / t as f64, dh.d, dh.h)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.len() + j]
    }

    /// Draw `n_paths` paths and map each through `f`. Paths come in fixed
    /// blocks with one random stream per block, so the result depends only
    /// on `seed`.
    pub fn simulate_with<R, F>(&self, n_paths: usize, seed: u64, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&[f64]) -> R + Sync,
    {
        let n = self.len();
        let blocks = n_paths.div_ceil(PATH_BLOCK);
        let per_block: Vec<Vec<R>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let width = PATH_BLOCK.min(n_paths - b * PATH_BLOCK);
                let mut rng = rng::stream(seed, b as u64);
                let e = DMatrix::<f64>::from_fn(n, width, |_, _| StandardNormal.sample(&mut rng));
                let paths = &self.chol * e;
                paths.column_iter().map(|c| f(c.as_slice())).collect()
            })
            .collect();
        per_block.into_iter().flatten().collect()
    }

    /// `n_paths` draws of the sup and of the integral functional, from the
    /// same paths.
    pub fn simulate_functionals(&self, n_paths: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let spacing = self.spacing;
        self.simulate_with(n_paths, seed, |p| {
            let sup = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let int = spacing * p.iter().map(|v| v * v).sum::<f64>();
            (sup, int)
        })
        .into_iter()
        .unzip()
    }
}

/// `n_paths` draws of the chosen functional of the limit process.
pub fn simulate_sup_distribution(k: &LimitKernel, functional: Functional, n_paths: usize, seed: u64) -> Vec<f64> {
    let (sup, int) = k.simulate_functionals(n_paths, seed);
    match functional {
        Functional::Sup => sup,
        Functional::Integral => int,
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Grid a table was simulated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "size", rename_all = "lowercase")]
pub enum GridSpec {
    /// Closed-form kernel on `G` interior points.
    Points(usize),
    /// Finite-sample kernel on `k/T`.
    Sample(usize),
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Points(g) => write!(f, "G={g}"),
            GridSpec::Sample(t) => write!(f, "T={t}"),
        }
    }
}

/// Simulation size for asymptotic critical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CritSettings {
    pub grid: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for CritSettings {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            n_paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
        }
    }
}

/// Identity of a critical-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct CritKey {
    pub scheme: SchemeKind,
    pub functional: Functional,
    pub grid: GridSpec,
    pub n_paths: usize,
    pub seed: u64,
}

impl CritKey {
    /// Key for a test at sample size `n_time`: the closed-form kernel for
    /// standard schemes, the finite-T kernel for custom weights.
    pub fn for_test(spec: &TestSpec, n_time: usize, settings: CritSettings) -> Result<Self> {
        let grid = match spec.scheme {
            SchemeKind::Custom(_) => GridSpec::Sample(n_time),
            _ => GridSpec::Points(settings.grid),
        };
        Ok(Self {
            scheme: spec.scheme.clone(),
            functional: spec.functional,
            grid,
            n_paths: settings.n_paths,
            seed: settings.seed,
        })
    }

    fn kind_tag(&self) -> String {
        match &self.scheme {
            SchemeKind::Ols => "ols".into(),
            SchemeKind::Wls => "wls".into(),
            SchemeKind::PointTau(_) => "tau".into(),
            SchemeKind::Custom(w) => {
                let bits: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
                format!("custom-{:016x}", rng::derive(0, &bits))
            }
        }
    }

    fn tau(&self) -> Option<f64> {
        match self.scheme {
            SchemeKind::PointTau(t) => Some(t),
            _ => None,
        }
    }

    fn file_name(&self) -> String {
        let tau = self.tau().map(|t| format!("-{t}")).unwrap_or_default();
        let grid = match self.grid {
            GridSpec::Points(g) => format!("G{g}"),
            GridSpec::Sample(t) => format!("T{t}"),
        };
        format!(
            "crit-v{TABLE_VERSION}-{}{tau}-{}-{grid}-n{}-s{}.json",
            self.kind_tag(),
            self.functional,
            self.n_paths,
            self.seed
        )
    }

    fn matches(&self, t: &CritTable) -> bool {
        t.version == TABLE_VERSION
            && t.kind == self.kind_tag()
            && t.tau == self.tau()
            && t.functional == self.functional
            && t.grid == self.grid
            && t.n_paths == self.n_paths
            && t.seed == self.seed
    }

    fn kernel(&self) -> Result<LimitKernel> {
        match self.grid {
            GridSpec::Points(g) => LimitKernel::closed(&self.scheme, g),
            GridSpec::Sample(t) => LimitKernel::finite(&crate::estimators::make_weights(self.scheme.clone(), t)?),
        }
    }
}

impl fmt::Display for CritKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scheme {}, functional {}, grid {}, {} paths, seed {}",
            self.scheme, self.functional, self.grid, self.n_paths, self.seed
        )
    }
}

/// Upper quantiles of a simulated limit functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritTable {
    pub version: u32,
    pub kind: String,
    pub tau: Option<f64>,
    pub functional: Functional,
    pub grid: GridSpec,
    pub n_paths: usize,
    pub seed: u64,
    /// `α ↦` the `(1 − α)` quantile.
    pub quantiles: BTreeMap<String, f64>,
}

impl CritTable {
    fn from_sample(key: &CritKey, mut sample: Vec<f64>) -> Self {
        sample.sort_by(f64::total_cmp);
        let quantiles = ALPHA_LEVELS
            .iter()
            .map(|&a| (format!("{a}"), quantile_sorted(&sample, 1.0 - a)))
            .collect();
        Self {
            version: TABLE_VERSION,
            kind: key.kind_tag(),
            tau: key.tau(),
            functional: key.functional,
            grid: key.grid,
            n_paths: key.n_paths,
            seed: key.seed,
            quantiles,
        }
    }

    /// Levels and values sorted by increasing `α`.
    pub fn levels(&self) -> Result<Vec<(f64, f64)>> {
        let mut out = self
            .quantiles
            .iter()
            .map(|(k, v)| {
                k.parse::<f64>()
                    .map(|a| (a, *v))
                    .map_err(|_| Error::Parameter(format!("bad level '{k}' in critical-value table")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(out)
    }
}

/// Simulate both functionals for `key`'s kernel.
pub fn build_tables(key: &CritKey) -> Result<(CritTable, CritTable)> {
    let kernel = key.kernel()?;
    let (sup, int) = kernel.simulate_functionals(key.n_paths, key.seed);
    let sup_key = CritKey {
        functional: Functional::Sup,
        ..key.clone()
    };
    let int_key = CritKey {
        functional: Functional::Integral,
        ..key.clone()
    };
    Ok((CritTable::from_sample(&sup_key, sup), CritTable::from_sample(&int_key, int)))
}

/// The `(1 − α)` quantile, interpolated linearly in `α` between stored levels.
pub fn critical_value(table: &CritTable, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let levels = table.levels()?;
    for w in levels.windows(2) {
        let ((a0, q0), (a1, q1)) = (w[0], w[1]);
        if (alpha - a0).abs() < 1e-12 {
            return Ok(q0);
        }
        if alpha > a0 && alpha < a1 {
            return Ok(q0 + (alpha - a0) / (a1 - a0) * (q1 - q0));
        }
    }
    match levels.last() {
        Some(&(a, q)) if (alpha - a).abs() < 1e-12 => Ok(q),
        _ => Err(Error::MissingTable(format!(
            "alpha = {alpha} (stored levels span {} .. {})",
            levels.first().map_or(f64::NAN, |l| l.0),
            levels.last().map_or(f64::NAN, |l| l.0)
        ))),
    }
}

/// Critical-value tables held in memory and optionally cached on disk.
#[derive(Debug, Default)]
pub struct CritStore {
    dir: Option<PathBuf>,
    build_missing: bool,
    tables: Mutex<HashMap<String, CritTable>>,
}

impl CritStore {
    /// Memory-only store that simulates tables on demand.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            build_missing: true,
            tables: Mutex::default(),
        }
    }

    /// Store backed by JSON files in `dir`; missing tables are simulated
    /// and written there.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            build_missing: true,
            tables: Mutex::default(),
        }
    }

    /// Never simulate: a missing table is an error.
    pub fn read_only(mut self) -> Self {
        self.build_missing = false;
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn insert(&self, table: CritTable) {
        let key = format!(
            "crit-v{}-{}{}-{}-{}-n{}-s{}",
            table.version,
            table.kind,
            table.tau.map(|t| format!("-{t}")).unwrap_or_default(),
            table.functional,
            table.grid,
            table.n_paths,
            table.seed
        );
        self.tables.lock().expect("table cache poisoned").insert(key, table);
    }

    fn lookup(&self, key: &CritKey) -> Option<CritTable> {
        let tables = self.tables.lock().expect("table cache poisoned");
        tables.values().find(|t| key.matches(t)).cloned()
    }

    fn load(&self, key: &CritKey) -> Result<Option<CritTable>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(key.file_name());
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let table: CritTable = serde_json::from_str(&text)?;
        if !key.matches(&table) {
            log::warn!("ignoring cached table {} with mismatched contents", path.display());
            return Ok(None);
        }
        Ok(Some(table))
    }

    fn save(&self, key: &CritKey, table: &CritTable) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let path = dir.join(key.file_name());
        write_atomic(&path, &serde_json::to_string_pretty(table)?)
    }

    /// The table for `key`: from memory, then disk, then by simulation
    /// (unless the store is read-only).
    pub fn fetch(&self, key: &CritKey) -> Result<CritTable> {
        if let Some(t) = self.lookup(key) {
            return Ok(t);
        }
        if let Some(t) = self.load(key)? {
            self.insert(t.clone());
            return Ok(t);
        }
        if !self.build_missing {
            return Err(Error::MissingTable(key.to_string()));
        }
        log::info!("simulating critical values for {key}");
        let (sup, int) = build_tables(key)?;
        for t in [&sup, &int] {
            let k = CritKey {
                functional: t.functional,
                ..key.clone()
            };
            self.save(&k, t)?;
            self.insert(t.clone());
        }
        Ok(match key.functional {
            Functional::Sup => sup,
            Functional::Integral => int,
        })
    }
}

/// Write `contents` to a temporary sibling and rename it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}
