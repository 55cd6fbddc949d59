//! Weighted-regression estimators of the mean long-run variance and of the
//! mean squared long-run variance.
//!
//! Under the null the cross-sectional mean of `Z²(k/T)` is close to
//! `σ̄² m_T(k/T)`, so `σ̄²` is the slope of a single-regressor weighted fit
//! of `z̄` on `m_T`. The same trick applied to `Z⁴` against `m_T²` gives
//! `3κ̄²`. All fits are closed-form O(T) dot products.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cusum::{CusumMatrix, GridFn};
use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

/// Which regression weights to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemeKind {
    /// Unit weights.
    Ols,
    /// `w_k = m_T(k/T)^{-2}`.
    Wls,
    /// All weight on `k = ⌊τT⌋`.
    PointTau(f64),
    /// Caller-supplied weight vector.
    Custom(Vec<f64>),
}

impl SchemeKind {
    /// Short tag used in table headers: `ols`, `wls`, `0.1`, `custom`.
    pub fn tag(&self) -> String {
        match self {
            SchemeKind::Ols => "ols".into(),
            SchemeKind::Wls => "wls".into(),
            SchemeKind::PointTau(t) => format!("{t}"),
            SchemeKind::Custom(_) => "custom".into(),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Ols => write!(f, "ols"),
            SchemeKind::Wls => write!(f, "wls"),
            SchemeKind::PointTau(t) => write!(f, "tau:{t}"),
            SchemeKind::Custom(w) => {
                write!(f, "custom:")?;
                for (i, v) in w.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "ols" => return Ok(SchemeKind::Ols),
            "wls" => return Ok(SchemeKind::Wls),
            _ => {}
        }
        if let Some(v) = s.strip_prefix("tau:") {
            let tau: f64 = v
                .parse()
                .map_err(|_| Error::Parameter(format!("bad tau value '{v}'")))?;
            return Ok(SchemeKind::PointTau(tau));
        }
        if let Some(v) = s.strip_prefix("custom:") {
            let w: std::result::Result<Vec<f64>, _> = v.split(';').map(|x| x.trim().parse()).collect();
            return w
                .map(SchemeKind::Custom)
                .map_err(|_| Error::Parameter(format!("bad custom weights '{v}'")));
        }
        Err(Error::Parameter(format!(
            "unknown weight scheme '{s}' (expected ols, wls, tau:<v> or custom:<w1;w2;...>)"
        )))
    }
}

impl TryFrom<String> for SchemeKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SchemeKind> for String {
    fn from(k: SchemeKind) -> String {
        k.to_string()
    }
}

/// A weight vector on the grid `k = 1..T-1` together with the regression
/// quantities derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    pub kind: SchemeKind,
    pub grid: GridFn,
    pub w_vec: Vec<f64>,
    /// `β₂ = mᵀWm`
    pub beta2: f64,
    /// `η_T = mᵀw / mᵀWm`
    pub eta: f64,
    /// `η̈_T = m̈ᵀw / m̈ᵀWm̈` with `m̈ = m²`.
    pub eta_ddot: f64,
    /// `m̈ᵀWm̈`
    beta4: f64,
}

/// Build the weight vector for `kind` at sample size `n_time`.
pub fn make_weights(kind: SchemeKind, n_time: usize) -> Result<WeightScheme> {
    let grid = GridFn::new(n_time)?;
    let w_vec = match &kind {
        SchemeKind::Ols => vec![1.0; grid.len()],
        SchemeKind::Wls => grid.m_vec.iter().map(|m| 1.0 / (m * m)).collect(),
        SchemeKind::PointTau(tau) => {
            let k = tau_index(*tau, n_time)?;
            let mut w = vec![0.0; grid.len()];
            w[k - 1] = 1.0;
            w
        }
        SchemeKind::Custom(w) => {
            if w.len() != grid.len() {
                return Err(Error::Dimension(format!(
                    "custom weights have length {}, expected T-1 = {}",
                    w.len(),
                    grid.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Parameter("custom weights must be finite and nonnegative".into()));
            }
            w.clone()
        }
    };
    WeightScheme::from_parts(kind, grid, w_vec)
}

/// `⌊τT⌋`, checked to lie in `1..T-1`.
pub fn tau_index(tau: f64, n_time: usize) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Parameter(format!("tau = {tau} must lie in (0, 1)")));
    }
    let k = (tau * n_time as f64).floor() as usize;
    if k < 1 || k >= n_time {
        return Err(Error::Parameter(format!(
            "tau = {tau} is too close to the boundary for T = {n_time} (floor(tau*T) = {k})"
        )));
    }
    Ok(k)
}

impl WeightScheme {
    fn from_parts(kind: SchemeKind, grid: GridFn, w_vec: Vec<f64>) -> Result<Self> {
        let (mut beta2, mut mw, mut beta4, mut m2w) = (0.0, 0.0, 0.0, 0.0);
        for (&w, &m) in w_vec.iter().zip(&grid.m_vec) {
            let m2 = m * m;
            mw += m * w;
            beta2 += w * m2;
            m2w += m2 * w;
            beta4 += w * m2 * m2;
        }
        if !(beta2 > 0.0) {
            return Err(Error::Parameter("weights are identically zero".into()));
        }
        Ok(Self {
            kind,
            grid,
            w_vec,
            beta2,
            eta: mw / beta2,
            eta_ddot: m2w / beta4,
            beta4,
        })
    }

    pub fn n_time(&self) -> usize {
        self.grid.n_time
    }

    /// Indices (0-based grid offsets) with nonzero weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.w_vec.iter().copied().enumerate().filter(|(_, w)| *w != 0.0)
    }

    /// Slope of the weighted fit of `z̄` on `m_T`.
    pub fn sigma2_from(&self, zbar: &[f64]) -> f64 {
        let num: f64 = self
            .support()
            .map(|(k, w)| w * self.grid.m_vec[k] * zbar[k])
            .sum();
        num / self.beta2
    }

    /// One third of the slope of the weighted fit of `z̈` on `m_T²`.
    pub fn kappa2_from(&self, zddot: &[f64]) -> f64 {
        let num: f64 = self
            .support()
            .map(|(k, w)| {
                let m = self.grid.m_vec[k];
                w * m * m * zddot[k]
            })
            .sum();
        num / (3.0 * self.beta4)
    }
}

fn check_dims(p: &PanelMatrix, w: &WeightScheme) -> Result<()> {
    if p.n_time() != w.n_time() {
        return Err(Error::Dimension(format!(
            "panel has T = {} but the weights were built for T = {}",
            p.n_time(),
            w.n_time()
        )));
    }
    Ok(())
}

/// `σ̂²_{N,T}(w)`.
pub fn sigma_hat(p: &PanelMatrix, w: &WeightScheme) -> Result<f64> {
    check_dims(p, w)?;
    Ok(w.sigma2_from(&CusumMatrix::from_panel(p).squares_mean()))
}

/// `κ̂²_{N,T}(w)`.
pub fn kappa_hat(p: &PanelMatrix, w: &WeightScheme) -> Result<f64> {
    check_dims(p, w)?;
    Ok(w.kappa2_from(&CusumMatrix::from_panel(p).fourth_mean()))
}

fn split_index(n_time: usize, u: f64) -> Result<usize> {
    let k = (u * n_time as f64).floor();
    if !(u > 0.0 && u < 1.0) || k < 1.0 || k >= n_time as f64 {
        return Err(Error::Parameter(format!(
            "u = {u} gives split floor(uT) = {k}, outside 1..={}",
            n_time - 1
        )));
    }
    Ok(k as usize)
}

/// Mean after `⌊Tu⌋` minus mean up to `⌊Tu⌋` for panel `i` (0-based).
pub fn delta_hat(p: &PanelMatrix, i: usize, u: f64) -> Result<f64> {
    if i >= p.n_panels() {
        return Err(Error::Parameter(format!("panel index {i} out of range")));
    }
    let k = split_index(p.n_time(), u)?;
    Ok(delta_at(p.row(i), k))
}

fn delta_at(row: &[f64], k: usize) -> f64 {
    let (before, after) = row.split_at(k);
    let mb = crate::cusum::compensated_sum(before.iter().copied()) / before.len() as f64;
    let ma = crate::cusum::compensated_sum(after.iter().copied()) / after.len() as f64;
    ma - mb
}

/// Relative size below which `Σ w m̌²` is treated as zero.
const DEGENERATE_REL: f64 = 1e-12;

/// `m̌_k(u) = m_T(k/T) − g²(k/T, u)/m_T(u)` on the grid, with `u = j/T`.
fn m_check(grid: &GridFn, j: usize) -> impl Iterator<Item = f64> + '_ {
    let mj = grid.m_at(j);
    (1..grid.n_time).map(move |k| {
        if k == j {
            0.0
        } else {
            let gk = grid.g_at(k, j);
            grid.m_at(k) - gk * gk / mj
        }
    })
}

/// Change-adjusted estimator `σ̌²_{N,T}(u)` computed from its definition:
/// remove the estimated step at `⌊Tu⌋` from every panel, rebuild the
/// CUSUM paths and regress their mean square on `m̌`. Unit weights give
/// the plain least-squares form; any other scheme inserts its weights in
/// both quadratic forms.
pub fn check_sigma(p: &PanelMatrix, u: f64, w: &WeightScheme) -> Result<f64> {
    check_dims(p, w)?;
    let n_time = p.n_time();
    let j = split_index(n_time, u)?;
    let mut adjusted = p.as_slice().to_vec();
    for row in adjusted.chunks_exact_mut(n_time) {
        let d = delta_at(row, j);
        row[j..].iter_mut().for_each(|y| *y -= d);
    }
    let adj = PanelMatrix::from_row_major(p.n_panels(), n_time, adjusted)?;
    let zcheck = CusumMatrix::from_panel(&adj).squares_mean();
    let (mut num, mut den) = (0.0, 0.0);
    for ((mc, &wk), &z) in m_check(&w.grid, j).zip(&w.w_vec).zip(&zcheck) {
        num += wk * mc * z;
        den += wk * mc * mc;
    }
    if den <= DEGENERATE_REL * w.beta2 {
        return Err(Error::Degenerate(format!(
            "regressor m-check vanishes on the weight support at u = {u}"
        )));
    }
    Ok(num / den)
}

/// Precomputed, data-independent parts of the change-adjusted estimator for
/// every split `u = j/T`, `j = 1..T-1`.
///
/// Removing the estimated step at `j` turns the CUSUM path into
/// `Ž(k) = Z(k) − Z(j)·g(k,j)/m(j)`, so the whole sweep only needs the
/// original paths. `g(k,j)` factors into a function of `k` times a
/// function of `j` on each side of `j`, which turns every sum over `k` into
/// prefix/suffix sums; the sweep costs O(NT) instead of O(NT²).
#[derive(Debug, Clone)]
pub struct CheckDesign {
    scheme: WeightScheme,
    /// `Σ_k w m̌_k(j)²`
    den: Vec<f64>,
    /// `Σ_k w m̌_k(j) g(k,j)²`
    e: Vec<f64>,
    valid: Vec<bool>,
    /// `Σ_k w_k m_k z̄_k` factor pieces
    wm: Vec<f64>,
}

/// For all `j`, `Σ_k x_k g(k,j)^p` via prefix and suffix sums.
pub(crate) fn separable_sums(grid: &GridFn, x: &[f64], p: i32, out: &mut [f64], scratch: &mut [f64]) {
    let n = x.len();
    let t = grid.n_time as f64;
    // suffix part: Σ_{k>j} x_k (1-s_k)^p
    let mut acc = 0.0;
    for idx in (0..n).rev() {
        scratch[idx] = acc;
        let s = (idx + 1) as f64 / t;
        acc += x[idx] * (1.0 - s).powi(p);
    }
    let mut left = 0.0;
    for idx in 0..n {
        let s = (idx + 1) as f64 / t;
        left += x[idx] * s.powi(p);
        out[idx] = (1.0 - s).powi(p) * left + s.powi(p) * scratch[idx];
    }
}

impl CheckDesign {
    pub fn new(scheme: &WeightScheme) -> Self {
        let grid = &scheme.grid;
        let n = grid.len();
        let mut den = vec![0.0; n];
        let mut e = vec![0.0; n];
        let support: Vec<(usize, f64)> = scheme.support().collect();
        for j in 1..=n {
            let mj = grid.m_at(j);
            let (mut d, mut ee) = (0.0, 0.0);
            for &(idx, w) in &support {
                let k = idx + 1;
                if k == j {
                    continue;
                }
                let gk = grid.g_at(k, j);
                let g2 = gk * gk;
                let mc = grid.m_at(k) - g2 / mj;
                d += w * mc * mc;
                ee += w * mc * g2;
            }
            den[j - 1] = d;
            e[j - 1] = ee;
        }
        let valid = den.iter().map(|&d| d > DEGENERATE_REL * scheme.beta2).collect();
        let wm = scheme
            .w_vec
            .iter()
            .zip(&grid.m_vec)
            .map(|(w, m)| w * m)
            .collect();
        Self {
            scheme: scheme.clone(),
            den,
            e,
            valid,
            wm,
        }
    }

    pub fn scheme(&self) -> &WeightScheme {
        &self.scheme
    }

    /// Whether the estimator is defined at split `j` (1-based).
    pub fn is_valid(&self, j: usize) -> bool {
        self.valid[j - 1]
    }

    /// `σ̌²(j/T)` for every split `j = 1..T-1`; `None` where the regressor
    /// vanishes on the weight support.
    pub fn sweep(&self, cusums: &CusumMatrix, zbar: &[f64]) -> Vec<Option<f64>> {
        let grid = &self.scheme.grid;
        let w = &self.scheme.w_vec;
        let n = grid.len();
        assert_eq!(cusums.n_time, grid.n_time, "CUSUM grid does not match the design");

        // A(j) = Σ w m z̄ − Q₂(j; w z̄)/m_j
        let wz: Vec<f64> = w.iter().zip(zbar).map(|(a, b)| a * b).collect();
        let total_wmz: f64 = self.wm.iter().zip(zbar).map(|(a, b)| a * b).sum();
        let mut q2 = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        separable_sums(grid, &wz, 2, &mut q2, &mut scratch);

        // cross(j) = N⁻¹ Σ_i Z_ij c_ij,  c_ij = Q₁(j; w m Z_i) − Q₃(j; w Z_i)/m_j
        let mut cross = vec![0.0; n];
        let mut x1 = vec![0.0; n];
        let mut x3 = vec![0.0; n];
        let mut q1 = vec![0.0; n];
        let mut q3 = vec![0.0; n];
        for path in cusums.paths() {
            for idx in 0..n {
                x1[idx] = self.wm[idx] * path[idx];
                x3[idx] = w[idx] * path[idx];
            }
            separable_sums(grid, &x1, 1, &mut q1, &mut scratch);
            separable_sums(grid, &x3, 3, &mut q3, &mut scratch);
            for idx in 0..n {
                let mj = grid.m_vec[idx];
                cross[idx] += path[idx] * (q1[idx] - q3[idx] / mj);
            }
        }
        let nf = cusums.n_panels as f64;

        (0..n)
            .map(|idx| {
                if !self.valid[idx] {
                    return None;
                }
                let mj = grid.m_vec[idx];
                let a = total_wmz - q2[idx] / mj;
                let num = a - 2.0 / mj * cross[idx] / nf + zbar[idx] / (mj * mj) * self.e[idx];
                Some(num / self.den[idx])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, ErrorModel};
    use approx::assert_relative_eq;

    fn hand_panel() -> PanelMatrix {
        PanelMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap()
    }

    #[test]
    fn point_tau_weights() {
        let w = make_weights(SchemeKind::PointTau(0.5), 10).unwrap();
        let ones: Vec<usize> = w.support().map(|(k, _)| k + 1).collect();
        assert_eq!(ones, vec![5]);
        assert!(make_weights(SchemeKind::PointTau(0.05), 10).is_err());
        assert!(make_weights(SchemeKind::PointTau(0.0), 10).is_err());
        assert!(make_weights(SchemeKind::PointTau(1.0), 10).is_err());
    }

    #[test]
    fn ols_eta_two_ways() {
        for t in [3usize, 10, 257, 5000] {
            let w = make_weights(SchemeKind::Ols, t).unwrap();
            let m = &w.grid.m_vec;
            let direct = m.iter().sum::<f64>() / m.iter().map(|v| v * v).sum::<f64>();
            assert_relative_eq!(w.eta, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn wls_eta_grows_like_two_log_t() {
        let t = 10_000;
        let w = make_weights(SchemeKind::Wls, t).unwrap();
        let ratio = w.eta / (2.0 * (t as f64).ln());
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn custom_weights_validated() {
        assert!(make_weights(SchemeKind::Custom(vec![1.0, 2.0]), 4).is_err());
        assert!(make_weights(SchemeKind::Custom(vec![1.0, -2.0, 0.0]), 4).is_err());
        assert!(make_weights(SchemeKind::Custom(vec![0.0; 3]), 4).is_err());
        let w = make_weights(SchemeKind::Custom(vec![0.0, 2.0, 0.0]), 4).unwrap();
        assert_eq!(w.beta2, 2.0 / 16.0);
    }

    #[test]
    fn scheme_strings_round_trip() {
        for s in ["ols", "wls", "tau:0.1", "custom:1;0;2"] {
            let k: SchemeKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("foo".parse::<SchemeKind>().is_err());
        assert!("tau:x".parse::<SchemeKind>().is_err());
    }

    #[test]
    fn constant_panels_give_zero() {
        let p = PanelMatrix::from_rows(&[vec![2.0; 6], vec![-1.0; 6]]).unwrap();
        for kind in [SchemeKind::Ols, SchemeKind::Wls, SchemeKind::PointTau(0.5)] {
            let w = make_weights(kind, 6).unwrap();
            assert_eq!(sigma_hat(&p, &w).unwrap(), 0.0);
            assert_eq!(kappa_hat(&p, &w).unwrap(), 0.0);
        }
        let ols = make_weights(SchemeKind::Ols, 6).unwrap();
        assert!(check_sigma(&p, 0.5, &ols).unwrap().abs() < 1e-30);
        assert_eq!(delta_hat(&p, 0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn point_tau_matches_single_point_formula() {
        // N = 1, T = 4, τ = 1/2: Z(1/2)² / m_T(1/2) = 1 / 0.25 = 4
        let w = make_weights(SchemeKind::PointTau(0.5), 4).unwrap();
        assert_eq!(sigma_hat(&hand_panel(), &w).unwrap(), 4.0);

        let p = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.3 }, 17, 53, 50, 99).unwrap();
        for tau in [0.1, 0.37, 0.5, 0.9] {
            let w = make_weights(SchemeKind::PointTau(tau), 53).unwrap();
            let k = tau_index(tau, 53).unwrap();
            let c = CusumMatrix::from_panel(&p);
            let direct = c.paths().map(|z| z[k - 1] * z[k - 1]).sum::<f64>()
                / 17.0
                / crate::cusum::m(k as f64 / 53.0);
            assert_relative_eq!(sigma_hat(&p, &w).unwrap(), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn kappa_scales_with_fourth_power() {
        let p = dgp::gen_errors(ErrorModel::Arma21, 5, 40, 50, 1).unwrap();
        let w = make_weights(SchemeKind::Wls, 40).unwrap();
        let base = kappa_hat(&p, &w).unwrap();
        let scaled = kappa_hat(&p.map(|v| 1.7 * v).unwrap(), &w).unwrap();
        assert_relative_eq!(scaled, 1.7f64.powi(4) * base, max_relative = 1e-10);
    }

    #[test]
    fn delta_hat_examples() {
        let step = PanelMatrix::from_rows(&[vec![0.0, 0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(delta_hat(&step, 0, 0.5).unwrap(), 1.0);
        let big = PanelMatrix::from_rows(&[(1..=10).map(|t| if t > 6 { 2.5 } else { -1.0 }).collect()]).unwrap();
        assert_eq!(delta_hat(&big, 0, 0.6).unwrap(), 3.5);
        assert!(delta_hat(&step, 0, 0.1).is_err());
        assert!(delta_hat(&step, 0, 1.0).is_err());
        assert!(delta_hat(&step, 3, 0.5).is_err());
    }

    #[test]
    fn check_sigma_removes_known_step_exactly() {
        // pure step, no noise: removing the step at the true split leaves constants
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (1..=20).map(|t| if t > 8 { i as f64 } else { 0.0 }).collect())
            .collect();
        let p = PanelMatrix::from_rows(&rows).unwrap();
        let w = make_weights(SchemeKind::Ols, 20).unwrap();
        assert!(check_sigma(&p, 0.4, &w).unwrap().abs() < 1e-28);
        assert!(sigma_hat(&p, &w).unwrap() > 0.1);
    }

    #[test]
    fn sweep_matches_definition() {
        let p = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.3 }, 7, 31, 50, 5).unwrap();
        let p = p.shift_panels(&[0.0, 1.0, -3.0, 0.5, 2.0, 0.0, 1.0]).unwrap();
        let c = CusumMatrix::from_panel(&p);
        let zbar = c.squares_mean();
        for kind in [
            SchemeKind::Ols,
            SchemeKind::Wls,
            SchemeKind::PointTau(0.1),
            SchemeKind::PointTau(0.5),
            SchemeKind::Custom((1..31).map(|k| (k % 4) as f64).collect()),
        ] {
            let w = make_weights(kind.clone(), 31).unwrap();
            let design = CheckDesign::new(&w);
            let fast = design.sweep(&c, &zbar);
            for j in 1..31 {
                let u = j as f64 / 31.0 + 1e-9;
                match (fast[j - 1], check_sigma(&p, u, &w)) {
                    (Some(a), Ok(b)) => assert_relative_eq!(a, b, max_relative = 1e-8, epsilon = 1e-12),
                    (None, Err(Error::Degenerate(_))) => {}
                    (a, b) => panic!("{kind}: j = {j}: sweep {a:?} vs direct {b:?}"),
                }
            }
        }
    }

    #[test]
    fn point_tau_check_degenerate_at_tau() {
        let w = make_weights(SchemeKind::PointTau(0.5), 20).unwrap();
        let d = CheckDesign::new(&w);
        assert!(!d.is_valid(10));
        assert!(d.is_valid(9) && d.is_valid(11));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn panel_strategy() -> impl Strategy<Value = (PanelMatrix, Vec<f64>, f64)> {
            (1usize..5, 4usize..24).prop_flat_map(|(n, t)| {
                (
                    proptest::collection::vec(-3.0f64..3.0, n * t),
                    proptest::collection::vec(-50.0f64..50.0, n),
                    0.2f64..4.0,
                )
                    .prop_map(move |(v, shift, c)| (PanelMatrix::from_row_major(n, t, v).unwrap(), shift, c))
            })
        }

        proptest! {
            #[test]
            fn location_and_scale((p, shift, c) in panel_strategy()) {
                let t = p.n_time();
                let shifted = p.shift_panels(&shift).unwrap();
                let scaled = p.map(|v| c * v).unwrap();
                for kind in [SchemeKind::Ols, SchemeKind::Wls, SchemeKind::PointTau(0.5)] {
                    let w = make_weights(kind, t).unwrap();
                    let s = sigma_hat(&p, &w).unwrap();
                    let k = kappa_hat(&p, &w).unwrap();
                    prop_assert!(s >= 0.0 && k >= 0.0);
                    let tol = |a: f64| 1e-9 * (1.0 + a.abs());
                    prop_assert!((sigma_hat(&shifted, &w).unwrap() - s).abs() < tol(s) * 1e3);
                    prop_assert!((kappa_hat(&shifted, &w).unwrap() - k).abs() < tol(k) * 1e3);
                    prop_assert!((sigma_hat(&scaled, &w).unwrap() - c * c * s).abs() < tol(c * c * s));
                    prop_assert!((kappa_hat(&scaled, &w).unwrap() - c.powi(4) * k).abs() < tol(c.powi(4) * k));
                }
                let ols = make_weights(SchemeKind::Ols, t).unwrap();
                let u = 0.5;
                let base = check_sigma(&p, u, &ols).unwrap();
                prop_assert!(base >= -1e-12);
                let sh = check_sigma(&shifted, u, &ols).unwrap();
                prop_assert!((sh - base).abs() < 1e-6 * (1.0 + base));
                let sc = check_sigma(&scaled, u, &ols).unwrap();
                prop_assert!((sc - c * c * base).abs() < 1e-9 * (1.0 + c * c * base));
            }
        }
    }
}
