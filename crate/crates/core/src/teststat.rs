//! Centered test processes, their sup/integral functionals and complete
//! test decisions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, BootstrapConfig};
use crate::cusum::CusumMatrix;
use crate::error::{Error, Result};
use crate::estimators::{make_weights, CheckDesign, SchemeKind, WeightScheme};
use crate::limitdist::{critical_value, CritKey, CritSettings, CritStore};
use crate::panel::PanelMatrix;

/// `κ̂²` below this is treated as zero.
pub const KAPPA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Functional {
    Sup,
    Integral,
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Functional::Sup => "sup",
            Functional::Integral => "integral",
        })
    }
}

impl FromStr for Functional {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sup" => Ok(Functional::Sup),
            "integral" => Ok(Functional::Integral),
            other => Err(Error::Parameter(format!(
                "unknown functional '{other}' (expected sup or integral)"
            ))),
        }
    }
}

/// Which variance estimate is plugged into the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// `σ̂²(w)` from the full sample.
    Hat,
    /// `σ̌²(u)`, re-estimated after removing a step at each split `u`.
    Check,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Hat => "hat",
            Estimator::Check => "check",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hat" => Ok(Estimator::Hat),
            "check" => Ok(Estimator::Check),
            other => Err(Error::Parameter(format!(
                "unknown estimator '{other}' (expected hat or check)"
            ))),
        }
    }
}

/// A test: weight scheme × estimator × functional. Serialized in its
/// string form, e.g. `"check:tau:0.1/integral"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TestSpec {
    pub scheme: SchemeKind,
    pub estimator: Estimator,
    pub functional: Functional,
}

impl TryFrom<String> for TestSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestSpec> for String {
    fn from(t: TestSpec) -> String {
        t.to_string()
    }
}

impl TestSpec {
    pub fn new(scheme: SchemeKind, estimator: Estimator, functional: Functional) -> Self {
        Self {
            scheme,
            estimator,
            functional,
        }
    }

    /// Column label such as `Vhat_ols`, `Vchk_0.1` or `Vhat_wls/int`.
    pub fn label(&self) -> String {
        let base = match self.estimator {
            Estimator::Hat => "Vhat",
            Estimator::Check => "Vchk",
        };
        let suffix = match self.functional {
            Functional::Sup => "",
            Functional::Integral => "/int",
        };
        format!("{base}_{}{suffix}", self.scheme.tag())
    }
}

/// `hat:ols`, `check:tau:0.1`, optionally followed by `/integral`.
impl FromStr for TestSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (body, functional) = match s.split_once('/') {
            Some((b, f)) => (b, f.parse()?),
            None => (s, Functional::Sup),
        };
        let (est, scheme) = body
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("test '{s}' must look like hat:ols or check:tau:0.1")))?;
        Ok(Self::new(scheme.parse()?, est.parse()?, functional))
    }
}

impl fmt::Display for TestSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.estimator, self.scheme)?;
        if self.functional == Functional::Integral {
            write!(f, "/integral")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessKind {
    Plain,
    ChangeAdjusted,
}

/// Values of a test process on the grid `k/T`, `k = 1..T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestProcess {
    pub kind: ProcessKind,
    pub n_time: usize,
    pub values: Vec<f64>,
    /// The plugged-in variance: one value for a plain process, one per split
    /// for a change-adjusted one (`None` where the split is degenerate and
    /// the process value is set to zero).
    pub sigma2_used: Vec<Option<f64>>,
}

/// `V(k/T; σ²) = √N (z̄_k − σ² m_T(k/T))`.
pub fn v_process(p: &PanelMatrix, sigma2: f64) -> Result<TestProcess> {
    if !(sigma2 >= 0.0) {
        return Err(Error::Parameter(format!("sigma2 = {sigma2} must be nonnegative")));
    }
    let c = CusumMatrix::from_panel(p);
    let grid = crate::cusum::GridFn::new(p.n_time())?;
    Ok(plain_process(&c.squares_mean(), &grid.m_vec, p.n_panels(), sigma2))
}

fn plain_process(zbar: &[f64], m_vec: &[f64], n_panels: usize, sigma2: f64) -> TestProcess {
    let root_n = (n_panels as f64).sqrt();
    TestProcess {
        kind: ProcessKind::Plain,
        n_time: m_vec.len() + 1,
        values: zbar.iter().zip(m_vec).map(|(z, m)| root_n * (z - sigma2 * m)).collect(),
        sigma2_used: vec![Some(sigma2)],
    }
}

fn check_process(zbar: &[f64], design: &CheckDesign, c: &CusumMatrix) -> TestProcess {
    let root_n = (c.n_panels as f64).sqrt();
    let m_vec = &design.scheme().grid.m_vec;
    let sig = design.sweep(c, zbar);
    let values = sig
        .iter()
        .zip(zbar.iter().zip(m_vec))
        .map(|(s, (z, m))| s.map_or(0.0, |s| root_n * (z - s * m)))
        .collect();
    TestProcess {
        kind: ProcessKind::ChangeAdjusted,
        n_time: c.n_time,
        values,
        sigma2_used: sig,
    }
}

/// `V̌(u) = V(u; σ̌²(u))` on the split grid `u = k/T`.
pub fn check_v_statistic(p: &PanelMatrix, w: &WeightScheme) -> Result<TestProcess> {
    if p.n_time() != w.n_time() {
        return Err(Error::Dimension(format!(
            "panel has T = {} but the weights were built for T = {}",
            p.n_time(),
            w.n_time()
        )));
    }
    let c = CusumMatrix::from_panel(p);
    Ok(check_process(&c.squares_mean(), &CheckDesign::new(w), &c))
}

/// `max_k |V(k/T)|`.
pub fn sup_stat(tp: &TestProcess) -> f64 {
    tp.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `T⁻¹ Σ_k V(k/T)²`.
pub fn integral_stat(tp: &TestProcess) -> f64 {
    tp.values.iter().map(|v| v * v).sum::<f64>() / tp.n_time as f64
}

impl TestProcess {
    pub fn functional(&self, f: Functional) -> f64 {
        match f {
            Functional::Sup => sup_stat(self),
            Functional::Integral => integral_stat(self),
        }
    }

    /// Split `k/T` where `|V|` is largest.
    pub fn argmax_u(&self) -> f64 {
        let mut best = (0, f64::NEG_INFINITY);
        for (idx, v) in self.values.iter().enumerate() {
            if v.abs() > best.1 {
                best = (idx, v.abs());
            }
        }
        (best.0 + 1) as f64 / self.n_time as f64
    }
}

/// Statistic of one test on one panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Unnormalized functional of the process.
    pub statistic: f64,
    pub kappa2: f64,
    /// Statistic divided by `κ̂` (sup) or `κ̂²` (integral).
    pub normalized: f64,
    /// `σ̂²(w)` for plain processes.
    pub sigma2_hat: Option<f64>,
    pub argmax_u: f64,
}

/// A test specification bound to a sample size, with weights and the
/// change-adjusted design precomputed.
#[derive(Debug, Clone)]
pub struct PreparedTest {
    pub spec: TestSpec,
    weights: WeightScheme,
    design: Option<CheckDesign>,
}

impl PreparedTest {
    pub fn new(spec: TestSpec, n_time: usize) -> Result<Self> {
        let weights = make_weights(spec.scheme.clone(), n_time)?;
        let design = match spec.estimator {
            Estimator::Hat => None,
            Estimator::Check => Some(CheckDesign::new(&weights)),
        };
        Ok(Self {
            spec,
            weights,
            design,
        })
    }

    pub fn weights(&self) -> &WeightScheme {
        &self.weights
    }

    fn check_grid(&self, c: &CusumMatrix) -> Result<()> {
        if c.n_time != self.weights.n_time() {
            return Err(Error::Dimension(format!(
                "panel has T = {} but the test was prepared for T = {}",
                c.n_time,
                self.weights.n_time()
            )));
        }
        Ok(())
    }

    pub fn process_from(&self, c: &CusumMatrix, zbar: &[f64]) -> Result<TestProcess> {
        self.check_grid(c)?;
        Ok(match &self.design {
            None => plain_process(
                zbar,
                &self.weights.grid.m_vec,
                c.n_panels,
                self.weights.sigma2_from(zbar),
            ),
            Some(d) => check_process(zbar, d, c),
        })
    }

    /// Unnormalized statistic.
    pub fn statistic(&self, c: &CusumMatrix) -> Result<f64> {
        let zbar = c.squares_mean();
        Ok(self.process_from(c, &zbar)?.functional(self.spec.functional))
    }

    pub fn evaluate(&self, c: &CusumMatrix) -> Result<Evaluation> {
        let zbar = c.squares_mean();
        let tp = self.process_from(c, &zbar)?;
        let statistic = tp.functional(self.spec.functional);
        let kappa2 = self.weights.kappa2_from(&c.fourth_mean());
        let normalized = normalize(statistic, kappa2, self.spec.functional)?;
        Ok(Evaluation {
            statistic,
            kappa2,
            normalized,
            sigma2_hat: match tp.kind {
                ProcessKind::Plain => tp.sigma2_used[0],
                ProcessKind::ChangeAdjusted => None,
            },
            argmax_u: tp.argmax_u(),
        })
    }
}

fn normalize(statistic: f64, kappa2: f64, functional: Functional) -> Result<f64> {
    if kappa2 < KAPPA2_FLOOR {
        if statistic <= KAPPA2_FLOOR {
            return Ok(0.0);
        }
        return Err(Error::Degenerate(format!(
            "kappa-hat squared = {kappa2:e} is numerically zero while the statistic is {statistic}"
        )));
    }
    Ok(match functional {
        Functional::Sup => statistic / kappa2.sqrt(),
        Functional::Integral => statistic / kappa2,
    })
}

/// How to turn a statistic into a decision.
#[derive(Debug, Clone, Copy)]
pub enum Calibration<'a> {
    /// Compare the normalized statistic with a simulated quantile of the
    /// Gaussian limit.
    Asymptotic {
        store: &'a CritStore,
        settings: CritSettings,
    },
    /// Factor-model wild bootstrap p-value.
    Bootstrap(&'a BootstrapConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum CalibrationInfo {
    Asymptotic {
        grid: String,
        n_paths: usize,
        seed: u64,
    },
    Bootstrap {
        reps: usize,
        seed: u64,
        p_max: usize,
        hac_bandwidth: usize,
        p_hat: usize,
        lambda_bar: f64,
    },
}

/// Everything reported about one test on one panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: String,
    pub scheme: String,
    pub estimator: Estimator,
    pub functional: Functional,
    pub n_panels: usize,
    pub n_time: usize,
    pub statistic: f64,
    pub kappa2: f64,
    pub kappa: f64,
    pub normalized: f64,
    pub sigma2_hat: Option<f64>,
    pub argmax_u: f64,
    pub eta: f64,
    pub alpha: f64,
    pub critical_value: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: bool,
    pub calibration: CalibrationInfo,
}

/// Run one test on a panel.
pub fn run_test(p: &PanelMatrix, spec: &TestSpec, calibration: Calibration<'_>, alpha: f64) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let prepared = PreparedTest::new(spec.clone(), p.n_time())?;
    let c = CusumMatrix::from_panel(p);
    let ev = prepared.evaluate(&c)?;
    let (critical_value, p_value, reject, info) = match calibration {
        Calibration::Asymptotic { store, settings } => {
            let key = CritKey::for_test(spec, p.n_time(), settings)?;
            let table = store.fetch(&key)?;
            let cv = critical_value(&table, alpha)?;
            let info = CalibrationInfo::Asymptotic {
                grid: key.grid.to_string(),
                n_paths: key.n_paths,
                seed: key.seed,
            };
            (Some(cv), None, ev.normalized > cv, info)
        }
        Calibration::Bootstrap(cfg) => {
            let run = bootstrap::bootstrap_pvalues(p, std::slice::from_ref(&prepared), cfg)?;
            let pv = run.p_values[0];
            let info = CalibrationInfo::Bootstrap {
                reps: cfg.reps,
                seed: cfg.seed,
                p_max: run.p_max,
                hac_bandwidth: run.hac_bandwidth,
                p_hat: run.p_hat,
                lambda_bar: run.lambda_bar,
            };
            (None, Some(pv), pv < alpha, info)
        }
    };
    Ok(TestOutcome {
        test: spec.label(),
        scheme: spec.scheme.to_string(),
        estimator: spec.estimator,
        functional: spec.functional,
        n_panels: p.n_panels(),
        n_time: p.n_time(),
        statistic: ev.statistic,
        kappa2: ev.kappa2,
        kappa: ev.kappa2.max(0.0).sqrt(),
        normalized: ev.normalized,
        sigma2_hat: ev.sigma2_hat,
        argmax_u: ev.argmax_u,
        eta: prepared.weights.eta,
        alpha,
        critical_value,
        p_value,
        reject,
        calibration: info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, ErrorModel};
    use crate::estimators::sigma_hat;
    use approx::assert_relative_eq;

    fn hand() -> PanelMatrix {
        PanelMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap()
    }

    #[test]
    fn hand_process_and_functionals() {
        let tp = v_process(&hand(), 1.0).unwrap();
        assert_eq!(tp.values, vec![0.375, 0.75, 0.375]);
        assert_eq!(sup_stat(&tp), 0.75);
        assert_relative_eq!(integral_stat(&tp), (0.140625 + 0.5625 + 0.140625) / 4.0, max_relative = 1e-15);
        let flipped = TestProcess {
            values: tp.values.iter().map(|v| -v).collect(),
            ..tp.clone()
        };
        assert_eq!(sup_stat(&flipped), sup_stat(&tp));
        assert_eq!(integral_stat(&flipped), integral_stat(&tp));
        assert_eq!(tp.argmax_u(), 0.5);
    }

    #[test]
    fn zero_sigma_gives_scaled_zbar() {
        let p = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.0 }, 9, 12, 10, 4).unwrap();
        let tp = v_process(&p, 0.0).unwrap();
        let zbar = CusumMatrix::from_panel(&p).squares_mean();
        for (v, z) in tp.values.iter().zip(&zbar) {
            assert_eq!(*v, 3.0 * z);
        }
        assert!(v_process(&p, -1.0).is_err());
    }

    #[test]
    fn constant_panels() {
        let p = PanelMatrix::from_rows(&[vec![5.0; 20], vec![1.0; 20], vec![0.0; 20], vec![2.0; 20]]).unwrap();
        let tp = v_process(&p, 0.7).unwrap();
        let m = crate::cusum::m_grid(20);
        for (v, mk) in tp.values.iter().zip(&m) {
            assert_eq!(*v, -2.0 * 0.7 * mk);
        }
        for spec in ["hat:ols", "hat:wls", "hat:tau:0.5", "check:ols", "check:tau:0.1/integral"] {
            let t: TestSpec = spec.parse().unwrap();
            let prep = PreparedTest::new(t, 20).unwrap();
            let ev = prep.evaluate(&CusumMatrix::from_panel(&p)).unwrap();
            assert!(ev.statistic.abs() < 1e-24, "{spec}");
            assert_eq!(ev.normalized, 0.0);
        }
        let w = make_weights(SchemeKind::Ols, 20).unwrap();
        assert!(sup_stat(&check_v_statistic(&p, &w).unwrap()) < 1e-12);
    }

    #[test]
    fn wls_normal_equation() {
        let p = dgp::gen_errors(ErrorModel::Arma21, 30, 80, 50, 8).unwrap();
        for kind in [SchemeKind::Ols, SchemeKind::Wls, SchemeKind::PointTau(0.3)] {
            let w = make_weights(kind, 80).unwrap();
            let s = sigma_hat(&p, &w).unwrap();
            let zbar = CusumMatrix::from_panel(&p).squares_mean();
            let (mut resid, mut scale) = (0.0, 0.0);
            for ((wk, mk), z) in w.w_vec.iter().zip(&w.grid.m_vec).zip(&zbar) {
                resid += wk * mk * (z - s * mk);
                scale += (wk * mk * z).abs();
            }
            assert!(resid.abs() <= 1e-10 * scale, "{resid} vs {scale}");
        }
    }

    #[test]
    fn spec_strings() {
        let t: TestSpec = "check:tau:0.1/integral".parse().unwrap();
        assert_eq!(t.estimator, Estimator::Check);
        assert_eq!(t.scheme, SchemeKind::PointTau(0.1));
        assert_eq!(t.functional, Functional::Integral);
        assert_eq!(t.to_string(), "check:tau:0.1/integral");
        assert_eq!(t.label(), "Vchk_0.1/int");
        assert!("ols".parse::<TestSpec>().is_err());
        let j: TestSpec = serde_json::from_str(r#""hat:wls""#).unwrap();
        assert_eq!(j.functional, Functional::Sup);
        assert_eq!(serde_json::to_string(&t).unwrap(), r#""check:tau:0.1/integral""#);
    }

    #[test]
    fn degenerate_kappa_with_nonzero_statistic() {
        // every panel's CUSUM vanishes at the midpoint but not elsewhere
        let p = PanelMatrix::from_rows(&[vec![1.0, -1.0, 1.0, -1.0], vec![2.0, -2.0, 2.0, -2.0]]).unwrap();
        let prep = PreparedTest::new("hat:tau:0.5".parse().unwrap(), 4).unwrap();
        assert!(matches!(
            prep.evaluate(&CusumMatrix::from_panel(&p)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn bad_alpha() {
        let store = CritStore::in_memory();
        let cal = Calibration::Asymptotic {
            store: &store,
            settings: CritSettings::default(),
        };
        assert!(run_test(&hand(), &"hat:ols".parse().unwrap(), cal, 1.5).is_err());
    }

    #[test]
    fn missing_table_is_named() {
        let store = CritStore::in_memory().read_only();
        let cal = Calibration::Asymptotic {
            store: &store,
            settings: CritSettings::default(),
        };
        let err = run_test(&hand(), &"hat:wls".parse().unwrap(), cal, 0.05).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::MissingTable(_)));
        assert!(msg.contains("wls") && msg.contains("1000"), "{msg}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn invariances(
                n in 2usize..5,
                t in 6usize..20,
                seed in any::<u64>(),
                shift in -20.0f64..20.0,
                c in 0.3f64..3.0,
            ) {
                let p = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.2 }, n, t, 5, seed).unwrap();
                let shifts: Vec<f64> = (0..n).map(|i| shift * (i as f64 - 1.0)).collect();
                let shifted = p.shift_panels(&shifts).unwrap();
                let scaled = p.map(|v| c * v).unwrap();
                let cm = CusumMatrix::from_panel(&p);
                let cs = CusumMatrix::from_panel(&shifted);
                let cc = CusumMatrix::from_panel(&scaled);
                for spec in ["hat:ols", "hat:wls", "hat:tau:0.5", "check:ols", "check:wls/integral"] {
                    let prep = PreparedTest::new(spec.parse().unwrap(), t).unwrap();
                    let base = prep.evaluate(&cm).unwrap();
                    let sh = prep.evaluate(&cs).unwrap();
                    let sc = prep.evaluate(&cc).unwrap();
                    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
                    prop_assert!(close(base.statistic, sh.statistic, 1e-7), "{spec} location");
                    let power = if spec.ends_with("integral") { 4 } else { 2 };
                    prop_assert!(close(sc.statistic, c.powi(power) * base.statistic, 1e-9), "{spec} scale");
                    prop_assert!(close(sc.normalized, base.normalized, 1e-8), "{spec} normalized");
                }
            }
        }
    }
}
