//! Monte Carlo rejection-rate experiments.
//!
//! An [`ExperimentConfig`] describes a grid of error models × `N` × `T`,
//! one or more designs (no change, changes in a fraction of panels), a list
//! of tests and a calibration method. Every replicate is seeded from
//! `(base seed, model, N, T, r)` alone, so any cell can be rerun on its own
//! and the output does not depend on thread scheduling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_pvalues, BootstrapConfig};
use crate::cusum::CusumMatrix;
use crate::dgp::{self, DeltaLaw, ErrorModel, FactorDynamics, FactorSpec, LoadingRule};
use crate::error::{Error, Result};
use crate::limitdist::{critical_value, write_atomic, CritKey, CritSettings, CritStore};
use crate::panel::MIN_TIME;
use crate::rng;
use crate::teststat::{PreparedTest, TestSpec};

pub const SCHEMA_VERSION: u32 = 1;
/// Work units (replicates × N × T × (B + 1) × designs) above which a
/// warning is logged.
pub const DEFAULT_WORK_WARNING: f64 = 5e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Asymptotic,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FactorRule {
    /// No common factor.
    #[default]
    None,
    /// One i.i.d. factor with loadings `N^{-1/2}`.
    Weak,
    /// One i.i.d. factor with loadings `N^{-1/8}`.
    Strong,
}

impl FactorRule {
    fn spec(self, n_panels: usize) -> Option<FactorSpec> {
        let loadings = match self {
            FactorRule::None => return None,
            FactorRule::Weak => LoadingRule::weak(n_panels),
            FactorRule::Strong => LoadingRule::strong(n_panels),
        };
        Some(FactorSpec {
            n_factors: 1,
            loadings,
            dynamics: FactorDynamics::Iid,
        })
    }
}

/// One side of a table: how the break sizes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub label: String,
    #[serde(default)]
    pub delta_law: DeltaLaw,
    #[serde(default)]
    pub change_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSettings {
    pub replications: usize,
    #[serde(default)]
    pub bootstrap_reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Parameter(format!("unknown scale '{other}' (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub title: String,
    pub error_models: Vec<ErrorModel>,
    pub n_list: Vec<usize>,
    pub t_list: Vec<usize>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub designs: Vec<Design>,
    #[serde(default)]
    pub factors: FactorRule,
    pub tests: Vec<TestSpec>,
    pub calibration: CalibrationMethod,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Desk-scale sizes.
    pub desk: ScaleSettings,
    /// Larger sizes selected with [`Scale::Paper`].
    pub paper: ScaleSettings,
    pub base_seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub crit: CritSettings,
    #[serde(default)]
    pub p_max: Option<usize>,
    #[serde(default)]
    pub hac_bandwidth: Option<usize>,
    #[serde(default = "default_work_warning")]
    pub work_warning: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_theta() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.05
}
fn default_burn_in() -> usize {
    dgp::DEFAULT_BURN_IN
}
fn default_work_warning() -> f64 {
    DEFAULT_WORK_WARNING
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn scale(&self, scale: Scale) -> ScaleSettings {
        match scale {
            Scale::Desk => self.desk,
            Scale::Paper => self.paper,
        }
    }

    pub fn validate(&self, scale: Scale) -> Result<()> {
        let s = self.scale(scale);
        if s.replications < 1 {
            return Err(Error::Parameter("replications must be at least 1".into()));
        }
        if self.calibration == CalibrationMethod::Bootstrap && s.bootstrap_reps < 1 {
            return Err(Error::Parameter("bootstrap calibration needs bootstrap_reps >= 1".into()));
        }
        if self.error_models.is_empty() || self.n_list.is_empty() || self.t_list.is_empty() {
            return Err(Error::Parameter("error_models, n_list and t_list must be non-empty".into()));
        }
        if self.designs.is_empty() || self.tests.is_empty() {
            return Err(Error::Parameter("designs and tests must be non-empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        for m in &self.error_models {
            m.validate()?;
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < 1) {
            return Err(Error::Parameter(format!("N = {n} is too small")));
        }
        if let Some(&t) = self.t_list.iter().find(|&&t| t < MIN_TIME) {
            return Err(Error::Parameter(format!("T = {t} is below the minimum {MIN_TIME}")));
        }
        for &t in &self.t_list {
            crate::panel::BreakSpec::new(self.theta, t, Vec::new())?;
            for test in &self.tests {
                PreparedTest::new(test.clone(), t)?;
            }
        }
        Ok(())
    }

    /// `Σ R × N × T × (B + 1) × designs` over all cells.
    pub fn work(&self, scale: Scale) -> f64 {
        let s = self.scale(scale);
        let boot = match self.calibration {
            CalibrationMethod::Asymptotic => 1.0,
            CalibrationMethod::Bootstrap => (s.bootstrap_reps + 1) as f64,
        };
        let nt: f64 = self
            .n_list
            .iter()
            .flat_map(|&n| self.t_list.iter().map(move |&t| (n * t) as f64))
            .sum();
        self.error_models.len() as f64 * nt * s.replications as f64 * boot * self.designs.len() as f64
    }
}

/// Rejection frequency of one test in one design at one `(model, N, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    pub n: usize,
    pub t: usize,
    pub design: String,
    pub test: String,
    pub rejections: usize,
    pub replications: usize,
    pub percent: f64,
    /// `100 √(p̂(1 − p̂)/R)`.
    pub se: f64,
    /// Wall time of the `(model, N, T)` block, which computes all designs
    /// and tests together.
    pub wall_time_s: f64,
}

impl Cell {
    fn new(model: &str, n: usize, t: usize, design: &str, test: &str, rejections: usize, reps: usize, wall: f64) -> Self {
        let p = rejections as f64 / reps as f64;
        Self {
            model: model.to_string(),
            n,
            t,
            design: design.to_string(),
            test: test.to_string(),
            rejections,
            replications: reps,
            percent: 100.0 * p,
            se: 100.0 * (p * (1.0 - p) / reps as f64).sqrt(),
            wall_time_s: wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionTable {
    pub schema_version: u32,
    pub name: String,
    pub title: String,
    pub alpha: f64,
    pub calibration: CalibrationMethod,
    pub replications: usize,
    pub bootstrap_reps: usize,
    pub base_seed: u64,
    pub models: Vec<String>,
    pub designs: Vec<String>,
    pub tests: Vec<String>,
    pub cells: Vec<Cell>,
}

impl RejectionTable {
    pub fn cell(&self, model: &str, n: usize, t: usize, design: &str, test: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.n == n && c.t == t && c.design == design && c.test == test)
    }
}

/// Seed of replicate `r` in the `(model, N, T)` block.
pub fn replicate_seed(base: u64, model: &ErrorModel, n: usize, t: usize, r: usize) -> u64 {
    rng::derive(base, &[rng::label(&model.label()), n as u64, t as u64, r as u64])
}

enum Decider {
    Asymptotic(Vec<f64>),
    Bootstrap(BootstrapConfig),
}

/// Rejections of every `(design, test)` pair in one replicate.
fn run_replicate(
    cfg: &ExperimentConfig,
    model: &ErrorModel,
    n: usize,
    t: usize,
    seed: u64,
    tests: &[PreparedTest],
    decider: &Decider,
) -> Result<Vec<bool>> {
    let errors = dgp::gen_errors(*model, n, t, cfg.burn_in, rng::derive(seed, &[0]))?;
    let base = match cfg.factors.spec(n) {
        Some(fs) => dgp::add_factors(&errors, &fs, rng::derive(seed, &[1]))?.panel,
        None => errors,
    };
    let mut out = Vec::with_capacity(cfg.designs.len() * tests.len());
    for (d, design) in cfg.designs.iter().enumerate() {
        let brk = dgp::draw_break(design.delta_law, design.change_fraction, cfg.theta, n, t, rng::derive(seed, &[2]))?;
        let panel = if brk.is_null() { base.clone() } else { dgp::inject_break(&base, &brk)? };
        match decider {
            Decider::Asymptotic(cvs) => {
                let c = CusumMatrix::from_panel(&panel);
                for (test, cv) in tests.iter().zip(cvs) {
                    out.push(test.evaluate(&c)?.normalized > *cv);
                }
            }
            Decider::Bootstrap(bc) => {
                let bc = BootstrapConfig {
                    seed: rng::derive(seed, &[3, d as u64]),
                    ..bc.clone()
                };
                let run = bootstrap_pvalues(&panel, tests, &bc)?;
                out.extend(run.p_values.iter().map(|&p| p < cfg.alpha));
            }
        }
    }
    Ok(out)
}

/// Run every cell of the experiment.
pub fn run_experiment(cfg: &ExperimentConfig, scale: Scale, store: &CritStore) -> Result<RejectionTable> {
    cfg.validate(scale)?;
    let sizes = cfg.scale(scale);
    let work = cfg.work(scale);
    if work > cfg.work_warning {
        log::warn!(
            "experiment '{}' needs about {work:.2e} work units (threshold {:.2e}); expect a long run",
            cfg.name,
            cfg.work_warning
        );
    }
    let labels: Vec<String> = cfg.tests.iter().map(TestSpec::label).collect();
    let mut cells = Vec::new();
    for model in &cfg.error_models {
        for &n in &cfg.n_list {
            for &t in &cfg.t_list {
                let started = Instant::now();
                let tests = cfg
                    .tests
                    .iter()
                    .map(|s| PreparedTest::new(s.clone(), t))
                    .collect::<Result<Vec<_>>>()?;
                let decider = match cfg.calibration {
                    CalibrationMethod::Asymptotic => Decider::Asymptotic(
                        cfg.tests
                            .iter()
                            .map(|s| {
                                let key = CritKey::for_test(s, t, cfg.crit)?;
                                critical_value(&store.fetch(&key)?, cfg.alpha)
                            })
                            .collect::<Result<Vec<_>>>()?,
                    ),
                    CalibrationMethod::Bootstrap => Decider::Bootstrap(BootstrapConfig {
                        reps: sizes.bootstrap_reps,
                        seed: 0,
                        p_max: cfg.p_max,
                        hac_bandwidth: cfg.hac_bandwidth,
                    }),
                };
                let decisions: Vec<Vec<bool>> = (0..sizes.replications)
                    .into_par_iter()
                    .map(|r| {
                        let seed = replicate_seed(cfg.base_seed, model, n, t, r);
                        run_replicate(cfg, model, n, t, seed, &tests, &decider).map_err(|e| Error::Replicate {
                            replicate: r,
                            seed,
                            source: Box::new(e),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let wall = started.elapsed().as_secs_f64();
                let label = model.label();
                for (d, design) in cfg.designs.iter().enumerate() {
                    for (j, test) in labels.iter().enumerate() {
                        let idx = d * labels.len() + j;
                        let rejections = decisions.iter().filter(|row| row[idx]).count();
                        cells.push(Cell::new(&label, n, t, &design.label, test, rejections, sizes.replications, wall));
                    }
                }
                log::info!("{} {label} N={n} T={t}: {wall:.1}s", cfg.name);
            }
        }
    }
    Ok(RejectionTable {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        title: cfg.title.clone(),
        alpha: cfg.alpha,
        calibration: cfg.calibration,
        replications: sizes.replications,
        bootstrap_reps: match cfg.calibration {
            CalibrationMethod::Asymptotic => 0,
            CalibrationMethod::Bootstrap => sizes.bootstrap_reps,
        },
        base_seed: cfg.base_seed,
        models: cfg.error_models.iter().map(ErrorModel::label).collect(),
        designs: cfg.designs.iter().map(|d| d.label.clone()).collect(),
        tests: labels,
        cells,
    })
}

/// Plain-text table: model blocks × `N`/`T` rows × one column per test,
/// with one group of columns per design.
pub fn render_text(table: &RejectionTable) -> String {
    const W: usize = 9;
    let mut out = String::new();
    if !table.title.is_empty() {
        let _ = writeln!(out, "{}", table.title);
    }
    let _ = writeln!(
        out,
        "alpha = {}, {} calibration, R = {}{}",
        table.alpha,
        match table.calibration {
            CalibrationMethod::Asymptotic => "asymptotic",
            CalibrationMethod::Bootstrap => "bootstrap",
        },
        table.replications,
        if table.bootstrap_reps > 0 {
            format!(", B = {}", table.bootstrap_reps)
        } else {
            String::new()
        }
    );
    let lead = format!("{:<8}{:>5}{:>5}", "Model", "N", "T");
    let group_width = W * table.tests.len();
    let mut header1 = " ".repeat(lead.len());
    let mut header2 = lead.clone();
    for d in &table.designs {
        let _ = write!(header1, " | {:<group_width$}", d);
        header2.push_str(" | ");
        for t in &table.tests {
            let _ = write!(header2, "{t:>W$}");
        }
    }
    let rule = "-".repeat(header2.chars().count());
    let _ = writeln!(out, "{}", header1.trim_end());
    let _ = writeln!(out, "{header2}");
    let _ = writeln!(out, "{rule}");

    let mut ns: Vec<usize> = Vec::new();
    let mut ts: Vec<usize> = Vec::new();
    for c in &table.cells {
        if !ns.contains(&c.n) {
            ns.push(c.n);
        }
        if !ts.contains(&c.t) {
            ts.push(c.t);
        }
    }
    for (mi, model) in table.models.iter().enumerate() {
        if mi > 0 {
            let _ = writeln!(out, "{rule}");
        }
        let mut first_row = true;
        for (ni, &n) in ns.iter().enumerate() {
            if ni > 0 {
                let _ = writeln!(out, "{:<8}{}", "", "-".repeat(rule.len() - 8));
            }
            for (ti, &t) in ts.iter().enumerate() {
                let m = if first_row { model.as_str() } else { "" };
                let nn = if ti == 0 { n.to_string() } else { String::new() };
                let _ = write!(out, "{m:<8}{nn:>5}{t:>5}");
                for d in &table.designs {
                    out.push_str(" | ");
                    for test in &table.tests {
                        match table.cell(model, n, t, d, test) {
                            Some(c) => {
                                let _ = write!(out, "{:>W$.1}", c.percent);
                            }
                            None => {
                                let _ = write!(out, "{:>W$}", "-");
                            }
                        }
                    }
                }
                out.push('\n');
                first_row = false;
            }
        }
    }
    out
}

/// One header line plus one line per cell.
pub fn render_csv(table: &RejectionTable) -> String {
    let mut out = String::from("model,n,t,design,test,rejections,replications,percent,se,wall_time_s\n");
    let quote = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    for c in &table.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            quote(&c.model),
            c.n,
            c.t,
            quote(&c.design),
            quote(&c.test),
            c.rejections,
            c.replications,
            c.percent,
            c.se,
            c.wall_time_s
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(OutputFormat::Text),
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Parameter(format!("unknown output format '{other}'"))),
        }
    }
}

/// Write `<dir>/<name>.{txt,json,csv}` for the requested formats.
pub fn emit_outputs(table: &RejectionTable, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();
    for f in formats {
        let (ext, body) = match f {
            OutputFormat::Text => ("txt", render_text(table)),
            OutputFormat::Json => ("json", serde_json::to_string_pretty(table)?),
            OutputFormat::Csv => ("csv", render_csv(table)),
        };
        let path = dir.join(format!("{}.{ext}", table.name));
        write_atomic(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}
