//! Seeded synthetic panels: stationary AR(1)/ARMA(2,1) errors, mean breaks
//! and common factors.
//!
//! Panel `i` always draws from its own stream `rng::stream(seed, i)`, so the
//! output depends only on the seed and the parameters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{BreakSpec, PanelMatrix};
use crate::rng;

pub const DEFAULT_BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ErrorModel {
    /// `e_t = ρ e_{t-1} + ε_t`
    Ar1 { rho: f64 },
    /// `e_t = 0.2 e_{t-1} − 0.3 e_{t-2} + ε_t + 0.2 ε_{t-1}`
    Arma21,
}

impl ErrorModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorModel::Ar1 { rho } if !(rho.abs() < 1.0) => Err(Error::Parameter(format!(
                "AR(1) coefficient {rho} is not stationary (|rho| must be < 1)"
            ))),
            _ => Ok(()),
        }
    }

    /// Long-run variance `(Σψ_j)²` for unit-variance innovations.
    pub fn long_run_variance(&self) -> f64 {
        match *self {
            ErrorModel::Ar1 { rho } => 1.0 / ((1.0 - rho) * (1.0 - rho)),
            ErrorModel::Arma21 => {
                let r = (1.0 + 0.2) / (1.0 - 0.2 + 0.3);
                r * r
            }
        }
    }

    /// Short name used in tables: `AR(0)`, `AR(0.3)`, `ARMA`.
    pub fn label(&self) -> String {
        match *self {
            ErrorModel::Ar1 { rho } => format!("AR({rho})"),
            ErrorModel::Arma21 => "ARMA".to_string(),
        }
    }

    fn fill<R: Rng>(&self, rng: &mut R, burn_in: usize, out: &mut [f64]) {
        let mut draw = || -> f64 { StandardNormal.sample(rng) };
        match *self {
            ErrorModel::Ar1 { rho } => {
                let mut e = 0.0;
                for _ in 0..burn_in {
                    e = rho * e + draw();
                }
                for o in out.iter_mut() {
                    e = rho * e + draw();
                    *o = e;
                }
            }
            ErrorModel::Arma21 => {
                let (mut e1, mut e2, mut eps1) = (0.0, 0.0, 0.0);
                let mut step = || {
                    let eps = draw();
                    let e = 0.2 * e1 - 0.3 * e2 + eps + 0.2 * eps1;
                    e2 = e1;
                    e1 = e;
                    eps1 = eps;
                    e
                };
                for _ in 0..burn_in {
                    step();
                }
                for o in out.iter_mut() {
                    *o = step();
                }
            }
        }
    }
}

/// `N` independent stationary error series of length `T`.
pub fn gen_errors(
    model: ErrorModel,
    n_panels: usize,
    n_time: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PanelMatrix> {
    model.validate()?;
    let mut values = vec![0.0; n_panels * n_time];
    for (i, row) in values.chunks_exact_mut(n_time.max(1)).enumerate() {
        let mut rng = rng::stream(seed, i as u64);
        model.fill(&mut rng, burn_in, row);
    }
    PanelMatrix::from_row_major(n_panels, n_time, values)
}

/// `out[i,t] = in[i,t] + δ_i·1(t > t₀)`.
pub fn inject_break(p: &PanelMatrix, spec: &BreakSpec) -> Result<PanelMatrix> {
    if spec.deltas.len() != p.n_panels() {
        return Err(Error::Dimension(format!(
            "{} deltas for {} panels",
            spec.deltas.len(),
            p.n_panels()
        )));
    }
    let t0 = spec.change_time;
    if t0 < 1 || t0 >= p.n_time() {
        return Err(Error::Parameter(format!(
            "change time {t0} outside 1..={}",
            p.n_time() - 1
        )));
    }
    let n_time = p.n_time();
    let mut values = p.as_slice().to_vec();
    for (row, &d) in values.chunks_exact_mut(n_time).zip(&spec.deltas) {
        if d != 0.0 {
            row[t0..].iter_mut().for_each(|v| *v += d);
        }
    }
    PanelMatrix::from_row_major(p.n_panels(), n_time, values)
}

/// Law of the break sizes in simulated designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DeltaLaw {
    #[default]
    None,
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
}

/// Break sizes for a simulated design: the first `⌈fraction·N⌉` panels
/// receive a draw from `law`, the rest stay at zero.
pub fn draw_break(
    law: DeltaLaw,
    fraction: f64,
    theta: f64,
    n_panels: usize,
    n_time: usize,
    seed: u64,
) -> Result<BreakSpec> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("change fraction {fraction} outside [0, 1]")));
    }
    let n_changed = (fraction * n_panels as f64).ceil() as usize;
    let mut rng = rng::stream(seed, 0);
    let deltas = (0..n_panels)
        .map(|i| {
            if i >= n_changed {
                return 0.0;
            }
            match law {
                DeltaLaw::None => 0.0,
                DeltaLaw::Constant { value } => value,
                DeltaLaw::Uniform { low, high } => Uniform::new_inclusive(low, high).sample(&mut rng),
            }
        })
        .collect();
    BreakSpec::new(theta, n_time, deltas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadingRule {
    /// Every loading coordinate equals `value`.
    UniformScalar { value: f64 },
    /// Explicit `N × p` matrix, one row per panel.
    Explicit { rows: Vec<Vec<f64>> },
}

impl LoadingRule {
    /// `λ_i = N^{-1/2}`: cross-sectional dependence vanishes.
    pub fn weak(n_panels: usize) -> Self {
        LoadingRule::UniformScalar {
            value: (n_panels as f64).powf(-0.5),
        }
    }

    /// `λ_i = N^{-1/8}`: cross-sectional dependence dominates.
    pub fn strong(n_panels: usize) -> Self {
        LoadingRule::UniformScalar {
            value: (n_panels as f64).powf(-0.125),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FactorDynamics {
    /// i.i.d. standard normal vectors.
    #[default]
    Iid,
    /// Each coordinate an AR(1) with unit stationary variance.
    Ar { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub n_factors: usize,
    pub loadings: LoadingRule,
    #[serde(default)]
    pub dynamics: FactorDynamics,
}

/// Result of [`add_factors`]: the new panel plus the realized factor
/// structure and its dependence diagnostics.
#[derive(Debug, Clone)]
pub struct FactorDraw {
    pub panel: PanelMatrix,
    /// `T × p`, row-major.
    pub factors: Vec<f64>,
    /// `N × p`, row-major.
    pub loadings: Vec<f64>,
    /// `λ̄_N = N^{-1/2} Σ‖λ_i‖²`
    pub lambda_bar: f64,
    /// `Q̂ = (Σ‖λ_i‖²)^{-1} Σ λ_i λ_iᵀ`, `p × p` row-major (empty when p = 0
    /// or all loadings vanish).
    pub q_hat: Vec<f64>,
}

/// `λ̄_N` and `Q̂` of an `N × p` loading matrix.
pub fn loading_diagnostics(loadings: &[f64], n_panels: usize, p: usize) -> (f64, Vec<f64>) {
    if p == 0 {
        return (0.0, Vec::new());
    }
    let total: f64 = loadings.iter().map(|l| l * l).sum();
    let lambda_bar = total / (n_panels as f64).sqrt();
    if total == 0.0 {
        return (0.0, Vec::new());
    }
    let mut q = vec![0.0; p * p];
    for row in loadings.chunks_exact(p) {
        for a in 0..p {
            for b in 0..p {
                q[a * p + b] += row[a] * row[b];
            }
        }
    }
    q.iter_mut().for_each(|v| *v /= total);
    (lambda_bar, q)
}

/// `Y_{i,t} + λ_iᵀ f_t`.
pub fn add_factors(p: &PanelMatrix, fs: &FactorSpec, seed: u64) -> Result<FactorDraw> {
    let (n, t, k) = (p.n_panels(), p.n_time(), fs.n_factors);
    let loadings: Vec<f64> = match &fs.loadings {
        LoadingRule::UniformScalar { value } => vec![*value; n * k],
        LoadingRule::Explicit { rows } => {
            if rows.len() != n || rows.iter().any(|r| r.len() != k) {
                return Err(Error::Dimension(format!(
                    "loading matrix must be {n} x {k} to match the panel and factor count"
                )));
            }
            rows.concat()
        }
    };
    if let Some(bad) = loadings.iter().position(|l| !l.is_finite()) {
        return Err(Error::Parameter(format!("non-finite loading at position {bad}")));
    }
    if k == 0 {
        return Ok(FactorDraw {
            panel: p.clone(),
            factors: Vec::new(),
            loadings,
            lambda_bar: 0.0,
            q_hat: Vec::new(),
        });
    }

    let mut factors = vec![0.0; t * k];
    let mut rng = rng::stream(seed, 0);
    match fs.dynamics {
        FactorDynamics::Iid => {
            factors
                .iter_mut()
                .for_each(|f| *f = StandardNormal.sample(&mut rng));
        }
        FactorDynamics::Ar { rho } => {
            if !(rho.abs() < 1.0) {
                return Err(Error::Parameter(format!("factor AR coefficient {rho} not stationary")));
            }
            let innov_sd = (1.0 - rho * rho).sqrt();
            for j in 0..k {
                let mut f: f64 = StandardNormal.sample(&mut rng);
                for s in 0..t {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    f = rho * f + innov_sd * e;
                    factors[s * k + j] = f;
                }
            }
        }
    }

    let mut values = p.as_slice().to_vec();
    for i in 0..n {
        let lam = &loadings[i * k..(i + 1) * k];
        for s in 0..t {
            let f = &factors[s * k..(s + 1) * k];
            values[i * t + s] += lam.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let (lambda_bar, q_hat) = loading_diagnostics(&loadings, n, k);
    Ok(FactorDraw {
        panel: PanelMatrix::from_row_major(n, t, values)?,
        factors,
        loadings,
        lambda_bar,
        q_hat,
    })
}
