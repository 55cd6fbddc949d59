//! Grid functions and per-panel CUSUM processes.
//!
//! Every process lives on the grid `s = k/T`, `k = 1..T-1`; vectors indexed
//! by grid position store entry `k` at offset `k - 1`.

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Neumaier::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `g(s,t) = (s∧t)(1 − s∨t)`, the Brownian bridge covariance.
#[inline]
pub fn g(s: f64, t: f64) -> f64 {
    s.min(t) * (1.0 - s.max(t))
}

/// `m(s) = s(1 − s)`.
#[inline]
pub fn m(s: f64) -> f64 {
    s * (1.0 - s)
}

/// `g_T(s,u) = g(⌊Ts⌋/T, ⌊Tu⌋/T)`.
pub fn g_t(n_time: usize, s: f64, u: f64) -> f64 {
    let t = n_time as f64;
    g((t * s).floor() / t, (t * u).floor() / t)
}

/// `m_T(k/T) = (k/T)(1 − k/T)` for `k = 1..T-1`.
pub fn m_grid(n_time: usize) -> Vec<f64> {
    let t = n_time as f64;
    (1..n_time).map(|k| m(k as f64 / t)).collect()
}

/// Grid quantities shared by all statistics at a fixed `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    pub n_time: usize,
    pub m_vec: Vec<f64>,
}

impl GridFn {
    pub fn new(n_time: usize) -> Result<Self> {
        if n_time < crate::panel::MIN_TIME {
            return Err(Error::Dimension(format!("T = {n_time} is below the minimum of 3")));
        }
        Ok(Self {
            n_time,
            m_vec: m_grid(n_time),
        })
    }

    /// Grid point `k/T`.
    #[inline]
    pub fn s(&self, k: usize) -> f64 {
        k as f64 / self.n_time as f64
    }

    /// `m_T(k/T)`, 1-based `k`.
    #[inline]
    pub fn m_at(&self, k: usize) -> f64 {
        self.m_vec[k - 1]
    }

    /// `g(k/T, l/T)`, 1-based grid indices.
    #[inline]
    pub fn g_at(&self, k: usize, l: usize) -> f64 {
        g(self.s(k), self.s(l))
    }

    pub fn len(&self) -> usize {
        self.m_vec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_vec.is_empty()
    }
}

/// CUSUM path `Z_{i,T}(k/T)` of a single panel, `k = 1..T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumPath {
    pub values: Vec<f64>,
}

fn cusum_into(row: &[f64], out: &mut [f64]) {
    let n_time = row.len();
    let mean = compensated_sum(row.iter().copied()) / n_time as f64;
    let scale = 1.0 / (n_time as f64).sqrt();
    let mut acc = Neumaier::default();
    for (o, &y) in out.iter_mut().zip(row) {
        acc.add(y - mean);
        *o = acc.value() * scale;
    }
}

/// CUSUM of panel `i` (0-based).
pub fn cusum(p: &PanelMatrix, i: usize) -> Result<CusumPath> {
    if i >= p.n_panels() {
        return Err(Error::Parameter(format!(
            "panel index {i} out of range for N = {}",
            p.n_panels()
        )));
    }
    let mut values = vec![0.0; p.n_time() - 1];
    cusum_into(p.row(i), &mut values);
    Ok(CusumPath { values })
}

/// CUSUM paths of every panel, row-major `N × (T-1)`.
#[derive(Debug, Clone)]
pub struct CusumMatrix {
    pub n_panels: usize,
    pub n_time: usize,
    pub values: Vec<f64>,
}

impl CusumMatrix {
    pub fn from_panel(p: &PanelMatrix) -> Self {
        let width = p.n_time() - 1;
        let mut values = vec![0.0; p.n_panels() * width];
        for (row, out) in p.rows().zip(values.chunks_exact_mut(width)) {
            cusum_into(row, out);
        }
        Self {
            n_panels: p.n_panels(),
            n_time: p.n_time(),
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.n_time - 1
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width())
    }

    /// Cross-sectional mean of `Z^power` at each grid point.
    pub fn mean_power(&self, power: i32) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        for path in self.paths() {
            for (o, &z) in out.iter_mut().zip(path) {
                *o += z.powi(power);
            }
        }
        let n = self.n_panels as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// `z̄[k] = N⁻¹ Σ_i Z²_{i,T}(k/T)`.
    pub fn squares_mean(&self) -> Vec<f64> {
        self.mean_power(2)
    }

    /// `N⁻¹ Σ_i Z⁴_{i,T}(k/T)`.
    pub fn fourth_mean(&self) -> Vec<f64> {
        self.mean_power(4)
    }
}

/// `z̄[k] = N⁻¹ Σ_i Z²_{i,T}(k/T)` for `k = 1..T-1`.
pub fn cusum_squares_mean(p: &PanelMatrix) -> Vec<f64> {
    CusumMatrix::from_panel(p).squares_mean()
}
