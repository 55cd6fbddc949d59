//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use panelbreak::bootstrap::{bootstrap_pvalues, BootstrapConfig};
use panelbreak::cusum::{CusumMatrix, GridFn};
use panelbreak::dgp::{self, DeltaLaw, ErrorModel};
use panelbreak::estimators::{make_weights, sigma_hat, CheckDesign, SchemeKind};
use panelbreak::harness::{run_experiment, ExperimentConfig, RejectionTable, Scale};
use panelbreak::limitdist::{dh_closed, dh_finite, gamma, CritStore, LimitKernel};
use panelbreak::rng;
use panelbreak::teststat::{v_process, PreparedTest, TestSpec};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn crit_store() -> CritStore {
    CritStore::with_dir(PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("crit-tables"))
}

fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&workspace().join("configs").join(format!("{name}.json"))).expect("config")
}

fn pct(table: &RejectionTable, model: &str, n: usize, t: usize, design: &str, test: &str) -> (f64, f64) {
    let c = table
        .cell(model, n, t, design, test)
        .unwrap_or_else(|| panic!("missing cell {model} {n} {t} {design} {test}"));
    (c.percent, c.se)
}

/// Percent and binomial SE at an arbitrary reference rate.
fn se_at(p_percent: f64, reps: usize) -> f64 {
    let p = p_percent / 100.0;
    100.0 * (p * (1.0 - p) / reps as f64).sqrt()
}

fn table1() -> RejectionTable {
    let cfg = load_config("table1");
    run_experiment(&cfg, Scale::Desk, &crit_store()).expect("table 1 run")
}

fn criterion_1(t1: &RejectionTable) -> Verdict {
    let null = &t1.designs[0];
    let targets = [("Vhat_ols", 4.1), ("Vhat_wls", 2.9), ("Vhat_0.1", 6.3), ("Vhat_0.5", 6.0)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (test, target) in targets {
        let (p, _) = pct(t1, "AR(0)", 200, 200, null, test);
        ok &= (p - target).abs() <= 2.0;
        parts.push(format!("{test} {p:.1} (target {target})"));
    }
    verdict(ok, parts.join(", "))
}

fn criterion_2(t1: &RejectionTable) -> Verdict {
    let alt = &t1.designs[1];
    let targets = [("Vhat_ols", 95.0, 99.3), ("Vhat_wls", 97.0, 100.0), ("Vhat_0.1", 97.0, 100.0)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (test, floor, target) in targets {
        let (p, _) = pct(t1, "AR(0)", 200, 200, alt, test);
        ok &= p >= floor;
        parts.push(format!("{test} {p:.1} >= {floor} (target {target})"));
    }
    verdict(ok, parts.join(", "))
}

fn criterion_3(t1: &RejectionTable) -> Verdict {
    let alt = &t1.designs[1];
    let mut bad = Vec::new();
    let mut cells = 0;
    for model in &t1.models {
        for n in [50, 100, 200] {
            for t in [50, 100, 200] {
                cells += 1;
                let get = |test| pct(t1, model, n, t, alt, test);
                let (ols, se_o) = get("Vhat_ols");
                let (wls, se_w) = get("Vhat_wls");
                if wls < ols - 2.0 * (se_o * se_o + se_w * se_w).sqrt() {
                    bad.push(format!("{model} {n}/{t}: wls {wls:.1} < ols {ols:.1}"));
                }
                let (half, se_h) = get("Vhat_0.5");
                for other in ["Vhat_ols", "Vhat_wls", "Vhat_0.1"] {
                    let (v, se_v) = get(other);
                    if half > v + 2.0 * (se_h * se_h + se_v * se_v).sqrt() {
                        bad.push(format!("{model} {n}/{t}: 0.5 {half:.1} > {other} {v:.1}"));
                    }
                }
            }
        }
    }
    if bad.is_empty() {
        verdict(true, format!("wls >= ols and 0.5 weakest in all {cells} H_A cells (2 MC SE)"))
    } else {
        verdict(false, bad.join("; "))
    }
}

fn criterion_4() -> Verdict {
    let t = 2000;
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, tol) in [(SchemeKind::Ols, 0.01), (SchemeKind::Wls, 0.02)] {
        let w = make_weights(kind.clone(), t).unwrap();
        let fin = dh_finite(&w);
        let closed = dh_closed(&kind).unwrap();
        let dd = (fin.d - closed.d()).abs();
        ok &= dd <= tol;
        parts.push(format!("|D_T - D|_{kind} = {dd:.2e}"));
    }
    let w = make_weights(SchemeKind::Ols, t).unwrap();
    let fin = dh_finite(&w);
    let closed = dh_closed(&SchemeKind::Ols).unwrap();
    let hmax = fin
        .h
        .iter()
        .enumerate()
        .map(|(k, h)| (h - closed.h((k + 1) as f64 / t as f64)).abs())
        .fold(0.0f64, f64::max);
    ok &= hmax <= 5.0 / t as f64;
    parts.push(format!("max|h_T - h|_ols = {hmax:.2e} (<= 5/T = {:.1e})", 5.0 / t as f64));
    verdict(ok, parts.join(", "))
}

fn criterion_5() -> Verdict {
    let (n, t, reps) = (500, 500, 2000);
    let w = make_weights(SchemeKind::Ols, t).unwrap();
    let grid_idx: Vec<usize> = (1..=9).map(|j| j * t / 10).collect();
    let samples: Vec<Vec<f64>> = (0..reps)
        .map(|r| {
            let p = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.0 }, n, t, 0, rng::derive(505, &[r as u64])).unwrap();
            let s = sigma_hat(&p, &w).unwrap();
            let v = v_process(&p, s).unwrap();
            grid_idx.iter().map(|&k| v.values[k - 1]).collect()
        })
        .collect();
    let closed = dh_closed(&SchemeKind::Ols).unwrap();
    let k = grid_idx.len();
    let mean: Vec<f64> = (0..k).map(|a| samples.iter().map(|x| x[a]).sum::<f64>() / reps as f64).collect();
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for a in 0..k {
        for b in a..k {
            let prods: Vec<f64> = samples.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).collect();
            let cov = prods.iter().sum::<f64>() / (reps - 1) as f64;
            let var = prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            let (s, u) = (grid_idx[a] as f64 / t as f64, grid_idx[b] as f64 / t as f64);
            let target = gamma(s, u, closed.d(), closed.h(s), closed.h(u));
            let z = (cov - target).abs() / se;
            worst = worst.max(z);
            if z > 3.0 {
                fails += 1;
            }
        }
    }
    verdict(
        fails == 0,
        format!("45 covariances on s = 0.1..0.9, worst |emp - gamma| = {worst:.2} MC SE, {fails} beyond 3 SE"),
    )
}

fn criterion_6() -> Verdict {
    let reps = 500;
    let mut parts = Vec::new();
    let mut ok = true;

    let (n, t) = (200, 200);
    let w = make_weights(SchemeKind::Ols, t).unwrap();
    let (mut s_sum, mut k_sum) = (0.0, 0.0);
    for r in 0..reps {
        let p = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.0 }, n, t, 0, rng::derive(606, &[r as u64])).unwrap();
        let c = CusumMatrix::from_panel(&p);
        s_sum += w.sigma2_from(&c.squares_mean());
        k_sum += w.kappa2_from(&c.fourth_mean());
    }
    let (s_mean, k_mean) = (s_sum / reps as f64, k_sum / reps as f64);
    ok &= (0.97..=1.03).contains(&s_mean) && (0.9..=1.1).contains(&k_mean);
    parts.push(format!("mean sigma2 {s_mean:.4}, mean kappa2 {k_mean:.4}"));

    let (n, t) = (100, 100);
    let w = make_weights(SchemeKind::Ols, t).unwrap();
    let design = CheckDesign::new(&w);
    let mut acc = vec![0.0; t - 1];
    for r in 0..reps {
        let p = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.0 }, n, t, 0, rng::derive(607, &[r as u64])).unwrap();
        let c = CusumMatrix::from_panel(&p);
        for (a, s) in acc.iter_mut().zip(design.sweep(&c, &c.squares_mean())) {
            *a += s.expect("OLS split is never degenerate") / reps as f64;
        }
    }
    let bias = acc.iter().map(|a| (a - 1.0).abs()).fold(0.0f64, f64::max);
    ok &= bias <= 0.1;
    parts.push(format!("max_u |mean check-sigma2 - 1| {bias:.4}"));

    let (n, t) = (200, 200);
    let w = make_weights(SchemeKind::Ols, t).unwrap();
    let mut above = 0;
    for r in 0..reps {
        let seed = rng::derive(608, &[r as u64]);
        let e = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.0 }, n, t, 0, seed).unwrap();
        let brk = dgp::draw_break(DeltaLaw::Constant { value: 1.0 }, 0.5, 0.5, n, t, seed).unwrap();
        let p = dgp::inject_break(&e, &brk).unwrap();
        if sigma_hat(&p, &w).unwrap() > 1.0 {
            above += 1;
        }
    }
    let freq = above as f64 / reps as f64;
    ok &= freq >= 0.95;
    parts.push(format!("P(sigma2 > 1 | delta = 1 in 50%) {freq:.3}"));
    verdict(ok, parts.join(", "))
}

/// Rejection rates of `tests` in one bootstrap cell.
fn bootstrap_cell(
    factor_loading: f64,
    delta: DeltaLaw,
    fraction: f64,
    (n, t): (usize, usize),
    tests: &[&str],
    reps: usize,
    b: usize,
    base: u64,
) -> Vec<f64> {
    let prepared: Vec<PreparedTest> = tests
        .iter()
        .map(|s| PreparedTest::new(s.parse::<TestSpec>().unwrap(), t).unwrap())
        .collect();
    let mut rejections = vec![0usize; tests.len()];
    let fs = dgp::FactorSpec {
        n_factors: 1,
        loadings: dgp::LoadingRule::UniformScalar { value: factor_loading },
        dynamics: dgp::FactorDynamics::Iid,
    };
    for r in 0..reps {
        let seed = rng::derive(base, &[r as u64]);
        let e = dgp::gen_errors(ErrorModel::Ar1 { rho: 0.0 }, n, t, dgp::DEFAULT_BURN_IN, rng::derive(seed, &[0])).unwrap();
        let y = dgp::add_factors(&e, &fs, rng::derive(seed, &[1])).unwrap().panel;
        let brk = dgp::draw_break(delta, fraction, 0.5, n, t, rng::derive(seed, &[2])).unwrap();
        let y = if brk.is_null() { y } else { dgp::inject_break(&y, &brk).unwrap() };
        let cfg = BootstrapConfig::new(b, rng::derive(seed, &[3]));
        let run = bootstrap_pvalues(&y, &prepared, &cfg).unwrap();
        for (j, pv) in run.p_values.iter().enumerate() {
            if *pv < 0.05 {
                rejections[j] += 1;
            }
        }
    }
    rejections.iter().map(|&c| 100.0 * c as f64 / reps as f64).collect()
}

fn criterion_7() -> Verdict {
    let (n, t) = (200, 200);
    let rates = bootstrap_cell(
        (n as f64).powf(-0.5),
        DeltaLaw::None,
        0.0,
        (n, t),
        &["hat:ols", "check:ols"],
        500,
        200,
        707,
    );
    let ok = (rates[0] - 7.1).abs() <= 3.0 && (rates[1] - 6.0).abs() <= 3.0;
    verdict(
        ok,
        format!("Vhat_ols {:.1} (target 7.1 +/- 3), Vchk_ols {:.1} (target 6.0 +/- 3)", rates[0], rates[1]),
    )
}

fn criterion_8() -> Verdict {
    let (n, t) = (100, 100);
    let reps = 500;
    let tests = ["hat:ols", "check:ols", "hat:wls", "check:wls", "hat:tau:0.1", "check:tau:0.1"];
    let rates = bootstrap_cell(
        (n as f64).powf(-0.5),
        DeltaLaw::Uniform { low: -0.4, high: 0.4 },
        0.5,
        (n, t),
        &tests,
        reps,
        200,
        808,
    );
    let gap = |h: f64, c: f64| {
        let se = (se_at(h, reps).powi(2) + se_at(c, reps).powi(2)).sqrt();
        (c - h) > 2.0 * se
    };
    let ok = gap(rates[0], rates[1]) && gap(rates[2], rates[3]);
    verdict(
        ok,
        format!(
            "ols {:.1} -> {:.1} (target 24.0 -> 67.5), wls {:.1} -> {:.1} (target 59.1 -> 79.4), 0.1 {:.1} -> {:.1} (target 48.5 -> 56.3, reported only)",
            rates[0], rates[1], rates[2], rates[3], rates[4], rates[5]
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    let (n, t) = (30, 120);
    let p = dgp::gen_errors(ErrorModel::Arma21, n, t, 50, 909).unwrap();
    let c = CusumMatrix::from_panel(&p);
    let zbar = c.squares_mean();

    // normal equations of the weighted fit
    let mut worst = 0.0f64;
    for kind in [SchemeKind::Ols, SchemeKind::Wls, SchemeKind::PointTau(0.1)] {
        let w = make_weights(kind, t).unwrap();
        let s = w.sigma2_from(&zbar);
        let (mut r, mut scale) = (0.0, 0.0);
        for ((wk, mk), z) in w.w_vec.iter().zip(&w.grid.m_vec).zip(&zbar) {
            r += wk * mk * (z - s * mk);
            scale += (wk * mk * z).abs();
        }
        worst = worst.max(r.abs() / scale);
    }
    ok &= worst <= 1e-10;
    parts.push(format!("normal equations {worst:.1e}"));

    // CUSUM endpoint: full sum of deviations vanishes
    let end = p
        .rows()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / t as f64;
            row.iter().map(|y| y - mean).sum::<f64>().abs()
        })
        .fold(0.0f64, f64::max);
    ok &= end < 1e-10;
    parts.push(format!("CUSUM endpoint {end:.1e}"));

    // point weight equals the single-point formula
    let mut point_err = 0.0f64;
    for tau in [0.1, 0.5, 0.77] {
        let w = make_weights(SchemeKind::PointTau(tau), t).unwrap();
        let k = (tau * t as f64).floor() as usize;
        let direct = c.paths().map(|z| z[k - 1] * z[k - 1]).sum::<f64>() / n as f64 / GridFn::new(t).unwrap().m_at(k);
        point_err = point_err.max((sigma_hat(&p, &w).unwrap() - direct).abs() / direct);
    }
    ok &= point_err <= 1e-12;
    parts.push(format!("point-weight identity {point_err:.1e}"));

    // invariances of every statistic
    let shifts: Vec<f64> = (0..n).map(|i| 10.0 * (i as f64).sin()).collect();
    let shifted = CusumMatrix::from_panel(&p.shift_panels(&shifts).unwrap());
    let scaled = CusumMatrix::from_panel(&p.map(|v| 2.5 * v).unwrap());
    let mut inv = 0.0f64;
    for spec in ["hat:ols", "hat:wls", "hat:tau:0.1", "hat:tau:0.5", "check:ols", "check:wls", "check:tau:0.1", "hat:wls/integral"] {
        let prep = PreparedTest::new(spec.parse().unwrap(), t).unwrap();
        let base = prep.evaluate(&c).unwrap();
        let sh = prep.evaluate(&shifted).unwrap();
        let sc = prep.evaluate(&scaled).unwrap();
        inv = inv.max((sh.statistic - base.statistic).abs() / base.statistic);
        inv = inv.max((sc.normalized - base.normalized).abs() / base.normalized);
    }
    ok &= inv <= 1e-8;
    parts.push(format!("location/scale invariance {inv:.1e}"));

    // paths of the point-weight limit are pinned at tau
    let kernel = LimitKernel::closed(&SchemeKind::PointTau(0.5), 999).unwrap();
    let idx = 499;
    let pin = kernel
        .simulate_with(2000, 9, |path| path[idx].abs())
        .into_iter()
        .fold(0.0f64, f64::max);
    ok &= pin < 1e-6 && kernel.grid[idx] == 0.5;
    parts.push(format!("max |path(tau)| {pin:.1e}"));

    verdict(ok, parts.join(", "))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let t1 = table1();
    let t1_time = started.elapsed().as_secs_f64();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("1 Table 1 size", Box::new(|| criterion_1(&t1))),
        ("2 Table 1 power", Box::new(|| criterion_2(&t1))),
        ("3 power ordering", Box::new(|| criterion_3(&t1))),
        ("4 kernel constants", Box::new(criterion_4)),
        ("5 covariance kernel", Box::new(criterion_5)),
        ("6 estimator consistency", Box::new(criterion_6)),
        ("7 bootstrap calibration", Box::new(criterion_7)),
        ("8 check-estimator power", Box::new(criterion_8)),
        ("9 structural identities", Box::new(criterion_9)),
    ];
    println!("acceptance: Table 1 desk run took {t1_time:.1}s");
    let mut all = true;
    for (name, run) in &criteria {
        let t0 = Instant::now();
        let v = run();
        all &= v.pass;
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
