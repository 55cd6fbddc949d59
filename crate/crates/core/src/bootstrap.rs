//! Factor-model wild bootstrap for cross-sectionally dependent panels.
//!
//! The centered panel is split into common factors (principal components,
//! factor count chosen by the Bai–Ng `IC_p2` criterion) and idiosyncratic
//! residuals. Each replicate redraws the factors from a Gaussian with their
//! long-run covariance, multiplies the residuals by serially correlated
//! Gaussian multipliers and recomputes the normalized statistic.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cusum::CusumMatrix;
use crate::dgp::loading_diagnostics;
use crate::error::{Error, Result};
use crate::panel::PanelMatrix;
use crate::rng::{self, StreamRng};
use crate::teststat::{PreparedTest, TestSpec};

pub const DEFAULT_P_MAX: usize = 8;
pub const DEFAULT_REPS: usize = 500;

/// Relative floor on the residual variance in the information criterion,
/// so that exact low-rank data selects the smallest exact rank.
const RESIDUAL_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of bootstrap replicates `B`.
    pub reps: usize,
    pub seed: u64,
    /// Largest factor count considered; defaults to `min(8, min(N,T) − 1)`.
    #[serde(default)]
    pub p_max: Option<usize>,
    /// Bartlett bandwidth for the factor long-run covariance; defaults to
    /// `⌊T^{1/3}⌋`.
    #[serde(default)]
    pub hac_bandwidth: Option<usize>,
}

impl BootstrapConfig {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            p_max: None,
            hac_bandwidth: None,
        }
    }

    fn resolve_p_max(&self, n: usize, t: usize) -> Result<usize> {
        let cap = n.min(t) - 1;
        match self.p_max {
            None => Ok(DEFAULT_P_MAX.min(cap)),
            Some(p) if p <= cap => Ok(p),
            Some(p) => Err(Error::Parameter(format!(
                "p_max = {p} exceeds min(N, T) - 1 = {cap}"
            ))),
        }
    }
}

/// `⌊T^{1/3}⌋`.
pub fn default_hac_bandwidth(n_time: usize) -> usize {
    let mut b = (n_time as f64).cbrt().floor() as usize;
    // guard against cbrt rounding just below an integer
    while (b + 1).pow(3) <= n_time {
        b += 1;
    }
    b
}

/// Principal-components fit of the centered panel.
#[derive(Debug, Clone)]
pub struct FactorFit {
    pub p_hat: usize,
    /// `N × p̂`, row-major.
    pub loadings: Vec<f64>,
    /// `T × p̂`, row-major, normalized so that `T⁻¹ Σ_t f_t f_tᵀ = I`.
    pub factors: Vec<f64>,
    pub residuals: PanelMatrix,
    /// `IC_p2(k)` for `k = 0..=p_max`.
    pub criterion: Vec<f64>,
}

/// Estimate the factor count and the factors of `Y − Ȳ_i`.
pub fn estimate_factors(p: &PanelMatrix, p_max: usize) -> Result<FactorFit> {
    let (n, t) = (p.n_panels(), p.n_time());
    if p_max + 1 > n.min(t) {
        return Err(Error::Parameter(format!(
            "p_max = {p_max} exceeds min(N, T) - 1 = {}",
            n.min(t) - 1
        )));
    }
    let mut centered = p.as_slice().to_vec();
    for row in centered.chunks_exact_mut(t) {
        let mean = crate::cusum::compensated_sum(row.iter().copied()) / t as f64;
        row.iter_mut().for_each(|y| *y -= mean);
    }
    let eta = DMatrix::from_row_slice(n, t, &centered);
    let small_side_panels = n <= t;
    let gram = if small_side_panels {
        &eta * eta.transpose()
    } else {
        eta.transpose() * &eta
    };
    let eig = SymmetricEigen::try_new(gram, 1e-14, 0)
        .ok_or_else(|| Error::Numerical("eigen-decomposition of the panel Gram matrix did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let nt = (n * t) as f64;
    let total: f64 = centered.iter().map(|v| v * v).sum();
    let penalty = (n + t) as f64 / nt * (n.min(t) as f64).ln();
    let mut criterion = Vec::with_capacity(p_max + 1);
    let mut remaining = total;
    let mut p_hat = 0;
    if total > 0.0 {
        for k in 0..=p_max {
            if k > 0 {
                remaining -= eig.eigenvalues[order[k - 1]].max(0.0);
            }
            let v = remaining.max(RESIDUAL_FLOOR * total) / nt;
            criterion.push(v.ln() + k as f64 * penalty);
        }
        p_hat = (0..=p_max)
            .min_by(|&a, &b| criterion[a].total_cmp(&criterion[b]))
            .unwrap_or(0);
    }

    let root_t = (t as f64).sqrt();
    let mut factors = vec![0.0; t * p_hat];
    for (j, &col) in order.iter().take(p_hat).enumerate() {
        let mu = eig.eigenvalues[col];
        if !(mu > 0.0) {
            return Err(Error::Numerical(format!("factor {j} has a non-positive eigenvalue {mu:e}")));
        }
        let vec = eig.eigenvectors.column(col);
        let v: Vec<f64> = if small_side_panels {
            let scaled = eta.transpose() * vec;
            scaled.iter().map(|x| x / mu.sqrt()).collect()
        } else {
            vec.iter().copied().collect()
        };
        let pivot = v.iter().fold(0.0f64, |a, &x| if x.abs() > a.abs() { x } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for s in 0..t {
            factors[s * p_hat + j] = sign * root_t * v[s];
        }
    }

    let mut loadings = vec![0.0; n * p_hat];
    for i in 0..n {
        let row = &centered[i * t..(i + 1) * t];
        for j in 0..p_hat {
            let dot: f64 = (0..t).map(|s| row[s] * factors[s * p_hat + j]).sum();
            loadings[i * p_hat + j] = dot / t as f64;
        }
    }
    let mut resid = centered;
    if p_hat > 0 {
        for i in 0..n {
            let li = &loadings[i * p_hat..(i + 1) * p_hat];
            for s in 0..t {
                let fs = &factors[s * p_hat..(s + 1) * p_hat];
                resid[i * t + s] -= li.iter().zip(fs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(FactorFit {
        p_hat,
        loadings,
        factors,
        residuals: PanelMatrix::from_row_major(n, t, resid)?,
        criterion,
    })
}

/// `K(s) = min(2 max(0, 1 − |s|), 1)`.
pub fn multiplier_kernel(s: f64) -> f64 {
    (2.0 * (1.0 - s.abs()).max(0.0)).min(1.0)
}

/// Gaussian multiplier sequences with autocovariance close to
/// `K((u − v)/log T)`.
///
/// The Toeplitz matrix of this kernel is not positive semidefinite, so the
/// sequences are drawn by circulant embedding with the negative part of the
/// spectrum removed and the variance rescaled to one. The resulting
/// autocovariance is the nearest valid one in that spectral sense; it is
/// reported by [`MultiplierSpec::autocovariance`].
#[derive(Clone)]
pub struct MultiplierSpec {
    pub n_time: usize,
    pub bandwidth: f64,
    amplitude: Vec<f64>,
    acov: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MultiplierSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiplierSpec")
            .field("n_time", &self.n_time)
            .field("bandwidth", &self.bandwidth)
            .finish_non_exhaustive()
    }
}

impl MultiplierSpec {
    pub fn new(n_time: usize) -> Result<Self> {
        if n_time < 2 {
            return Err(Error::Parameter("multipliers need T >= 2".into()));
        }
        let bandwidth = (n_time as f64).ln();
        let size = 2 * n_time;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        let mut spectrum: Vec<Complex<f64>> = (0..size)
            .map(|j| Complex::new(multiplier_kernel(j.min(size - j) as f64 / bandwidth), 0.0))
            .collect();
        fft.process(&mut spectrum);
        let clipped: Vec<f64> = spectrum.iter().map(|c| c.re.max(0.0)).collect();
        let variance = clipped.iter().sum::<f64>() / size as f64;
        if !(variance > 0.0) {
            return Err(Error::Numerical("multiplier spectrum vanished after clipping".into()));
        }
        let lambda: Vec<f64> = clipped.iter().map(|l| l / variance).collect();
        // autocovariance of the embedded process: inverse transform of λ
        let mut back: Vec<Complex<f64>> = lambda.iter().map(|&l| Complex::new(l, 0.0)).collect();
        fft.process(&mut back);
        let acov = back.iter().take(n_time).map(|c| c.re / size as f64).collect();
        let amplitude = lambda.iter().map(|l| (l / size as f64).sqrt()).collect();
        Ok(Self {
            n_time,
            bandwidth,
            amplitude,
            acov,
            fft,
        })
    }

    /// Autocovariance of the generated sequences at `lag < T`.
    pub fn autocovariance(&self, lag: usize) -> f64 {
        self.acov[lag]
    }

    /// Two independent sequences of length `T`.
    pub fn fill_pair(&self, rng: &mut StreamRng, a: &mut [f64], b: &mut [f64]) {
        let mut buf: Vec<Complex<f64>> = self
            .amplitude
            .iter()
            .map(|&s| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex::new(s * re, s * im)
            })
            .collect();
        self.fft.process(&mut buf);
        for (s, c) in buf.iter().take(self.n_time).enumerate() {
            a[s] = c.re;
            b[s] = c.im;
        }
    }

    /// `N × T` multipliers; panels `2q` and `2q+1` come from stream `q`.
    pub fn draw(&self, n_panels: usize, seed: u64) -> Vec<f64> {
        let t = self.n_time;
        let mut out = vec![0.0; n_panels * t];
        let mut spare = vec![0.0; t];
        for (q, pair) in out.chunks_mut(2 * t).enumerate() {
            let mut rng = rng::stream(seed, q as u64);
            if pair.len() == 2 * t {
                let (a, b) = pair.split_at_mut(t);
                self.fill_pair(&mut rng, a, b);
            } else {
                self.fill_pair(&mut rng, pair, &mut spare);
            }
        }
        out
    }
}

/// `N × T` multiplier matrix for sample size `T`.
pub fn gen_multipliers(n: usize, t: usize, seed: u64) -> Result<PanelMatrix> {
    let spec = MultiplierSpec::new(t)?;
    PanelMatrix::from_row_major(n, t, spec.draw(n, seed))
}

/// Bartlett-weighted long-run covariance of the rows of a `T × p` matrix,
/// symmetrized and projected onto the positive semidefinite cone.
pub fn longrun_cov(f: &[f64], t: usize, p: usize, bandwidth: usize) -> Result<Vec<f64>> {
    if f.len() != t * p {
        return Err(Error::Dimension(format!("factor matrix has {} entries, expected {t} x {p}", f.len())));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut x = f.to_vec();
    for j in 0..p {
        let mean = (0..t).map(|s| x[s * p + j]).sum::<f64>() / t as f64;
        (0..t).for_each(|s| x[s * p + j] -= mean);
    }
    let lags = bandwidth.min(t - 1);
    let mut omega = vec![0.0; p * p];
    for lag in 0..=lags {
        let weight = 1.0 - lag as f64 / (bandwidth as f64 + 1.0);
        for a in 0..p {
            for b in 0..p {
                let gamma: f64 = (lag..t).map(|s| x[s * p + a] * x[(s - lag) * p + b]).sum::<f64>() / t as f64;
                if lag == 0 {
                    omega[a * p + b] += gamma;
                } else {
                    omega[a * p + b] += weight * gamma;
                    omega[b * p + a] += weight * gamma;
                }
            }
        }
    }
    let sym = DMatrix::from_fn(p, p, |a, b| 0.5 * (omega[a * p + b] + omega[b * p + a]));
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let psd = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((0..p * p).map(|k| psd[(k / p, k % p)]).collect())
}

/// Symmetric square root of a PSD matrix.
fn psd_sqrt(a: &[f64], p: usize) -> Vec<f64> {
    if p == 0 {
        return Vec::new();
    }
    let m = DMatrix::from_row_slice(p, p, a);
    let eig = SymmetricEigen::new(m);
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
    (0..p * p).map(|k| s[(k / p, k % p)]).collect()
}

/// Outcome of one bootstrap run over several tests sharing replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub p_hat: usize,
    pub lambda_bar: f64,
    pub p_max: usize,
    pub hac_bandwidth: usize,
    /// Observed normalized statistic per test.
    pub observed: Vec<f64>,
    /// `replicates[test][b]`.
    pub replicates: Vec<Vec<f64>>,
    pub p_values: Vec<f64>,
}

/// `(1 + #{V*_b ≥ V}) / (B + 1)`.
pub fn add_one_pvalue(observed: f64, replicates: &[f64]) -> f64 {
    let exceed = replicates.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (replicates.len() + 1) as f64
}

/// Bootstrap p-values of several tests on the same replicate panels.
pub fn bootstrap_pvalues(p: &PanelMatrix, tests: &[PreparedTest], cfg: &BootstrapConfig) -> Result<BootstrapRun> {
    if cfg.reps < 1 {
        return Err(Error::Parameter("bootstrap needs at least one replicate".into()));
    }
    let (n, t) = (p.n_panels(), p.n_time());
    let p_max = cfg.resolve_p_max(n, t)?;
    let hac_bandwidth = cfg.hac_bandwidth.unwrap_or_else(|| default_hac_bandwidth(t));
    let fit = estimate_factors(p, p_max)?;
    let k = fit.p_hat;
    let omega = longrun_cov(&fit.factors, t, k, hac_bandwidth)?;
    let root = psd_sqrt(&omega, k);
    let multipliers = MultiplierSpec::new(t)?;
    let (lambda_bar, _) = loading_diagnostics(&fit.loadings, n, k);

    let observed_c = CusumMatrix::from_panel(p);
    let observed = tests
        .iter()
        .map(|test| test.evaluate(&observed_c).map(|e| e.normalized))
        .collect::<Result<Vec<_>>>()?;

    let resid = fit.residuals.as_slice();
    let per_rep: Vec<Vec<f64>> = (0..cfg.reps)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>> {
            let seed_b = rng::derive(cfg.seed, &[b as u64]);
            let mut y = multipliers.draw(n, rng::derive(seed_b, &[0]));
            y.iter_mut().zip(resid).for_each(|(xi, e)| *xi *= e);
            if k > 0 {
                let mut frng = rng::stream(rng::derive(seed_b, &[1]), 0);
                let mut fstar = vec![0.0; t * k];
                let mut z = vec![0.0; k];
                for s in 0..t {
                    z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut frng));
                    for a in 0..k {
                        fstar[s * k + a] = (0..k).map(|c| root[a * k + c] * z[c]).sum();
                    }
                }
                for i in 0..n {
                    let li = &fit.loadings[i * k..(i + 1) * k];
                    let row = &mut y[i * t..(i + 1) * t];
                    for (s, v) in row.iter_mut().enumerate() {
                        *v += li.iter().zip(&fstar[s * k..(s + 1) * k]).map(|(a, f)| a * f).sum::<f64>();
                    }
                }
            }
            let ystar = PanelMatrix::from_row_major(n, t, y)?;
            let c = CusumMatrix::from_panel(&ystar);
            tests.iter().map(|test| test.evaluate(&c).map(|e| e.normalized)).collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let replicates: Vec<Vec<f64>> = (0..tests.len())
        .map(|j| per_rep.iter().map(|r| r[j]).collect())
        .collect();
    let p_values = observed
        .iter()
        .zip(&replicates)
        .map(|(&o, r)| add_one_pvalue(o, r))
        .collect();
    Ok(BootstrapRun {
        p_hat: k,
        lambda_bar,
        p_max,
        hac_bandwidth,
        observed,
        replicates,
        p_values,
    })
}

/// Bootstrap p-value and replicate statistics for a single test.
pub fn bootstrap_pvalue(p: &PanelMatrix, test: &TestSpec, cfg: &BootstrapConfig) -> Result<(f64, Vec<f64>)> {
    let prepared = PreparedTest::new(test.clone(), p.n_time())?;
    let mut run = bootstrap_pvalues(p, std::slice::from_ref(&prepared), cfg)?;
    Ok((run.p_values[0], run.replicates.remove(0)))
}
