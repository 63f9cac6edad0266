//! Acceptance gate. Prints one `criterion N: PASS|FAIL ...` line per
//! criterion and fails if any criterion fails.

use std::time::{Duration, Instant};

use lilkit::coupling::{coupled_decay, estimate_b_constants, CoupledState, Coupling, CouplingSpec, DiagnosticsConfig};
use lilkit::ergodicity::{
    ergodic_decay, fm_distance, fm_distance_bruteforce, fm_two_sample_test, invariant_estimate, DecayConfig, FmProblem,
};
use lilkit::gene_model::{certify, drift_constants, CheckConfig, DriftConfig};
use lilkit::kernel::{par_map_streams, simulate, Ar1Kernel, IidKernel, NoiseDist};
use lilkit::lil::{
    center_g, chi_identity_checks, k_distance_values, martingale_series, rhat_trend, run_lil, CenteredG, ChiApprox,
    ChiConfig, LilConfig, Seminorm, StrassenResult, TailParams, TrendConfig,
};
use lilkit::space::rho_c;
use lilkit::stats::{self, rel_diff, Estimate};
use lilkit::{EmpiricalMeasure, GeneModel, MetricSpec, Point, Result, RngStream, TestFunction};
use rand::Rng;
use serde::Serialize;

const SEED: u64 = 20240611;

struct Outcome {
    pass: bool,
    detail: String,
    artifact: String,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable artifact")
}

fn within_time(start: Instant, limit_s: u64, pass: bool, detail: String, artifact: String) -> Outcome {
    let el = start.elapsed();
    let ok = el < Duration::from_secs(limit_s);
    Outcome {
        pass: pass && ok,
        detail: format!("{detail}; {:.1}s (limit {limit_s}s)", el.as_secs_f64()),
        artifact,
    }
}

fn iid_chi(k: &IidKernel) -> Result<ChiApprox<'_>> {
    let c = center_g(&TestFunction::coordinate(0), k.measure(), 0.95)?;
    let tail = TailParams::new(1.0, 0.0, Seminorm::Lipschitz, Point::scalar(0.0, 1), MetricSpec::default())?;
    ChiApprox::build(k, &c, tail, k.measure().atoms(), &ChiConfig::default(), &RngStream::new(SEED))
}

fn criterion_1() -> Result<Outcome> {
    let t0 = Instant::now();
    let k = IidKernel::rademacher();
    let chi = iid_chi(&k)?;
    let mut chi_ok = chi.mean.value == 0.0;
    for y in [-1.0, 1.0, 0.3] {
        chi_ok &= chi.eval(&Point::scalar(y, 1))?.value == y;
    }
    let traj = simulate(&k, &Point::scalar(1.0, 1), 10_000, &RngStream::new(SEED).fork("c1-traj"))?;
    let series = martingale_series(&traj, &chi)?;
    let mut partial = 0.0;
    let mut m_gap = 0.0f64;
    for n in 1..traj.len() {
        partial += traj[n].y0();
        m_gap = m_gap.max((series.m[n] - partial).abs());
    }
    let long_cfg = LilConfig { n: 1_000_000, n_traj: 200, diagnostics: false, ..Default::default() };
    let long = run_lil(&chi, k.measure(), k.measure(), &long_cfg, &RngStream::new(SEED).fork("c1-long"))?;
    let short_cfg = LilConfig { n: 10_000, n_traj: 200, k_traj: 4, ..Default::default() };
    let short = run_lil(&chi, k.measure(), k.measure(), &short_cfg, &RngStream::new(SEED).fork("c1-short"))?;
    let sf = long.sigma2_by_formula.sigma2.value;
    let sa = long.sigma2_by_average.value;
    let h = short.hn2_over_n.last().expect("h curve").value;
    let pass = chi_ok
        && m_gap <= 1e-9
        && (0.98..=1.02).contains(&sf)
        && (0.98..=1.02).contains(&sa)
        && (0.97..=1.03).contains(&h);
    let detail = format!(
        "chi=gbar {chi_ok}, max|M_n - sum phi_i| {m_gap:.1e}, sigma2 formula {sf:.4} average {sa:.4}, h_n^2/n at 1e4 {h:.4}"
    );
    Ok(within_time(t0, 120, pass, detail, json(&(&series.m[..100], &long, &short))))
}

fn criterion_2() -> Result<Outcome> {
    let t0 = Instant::now();
    let root = RngStream::new(SEED).fork("c2");
    let k = Ar1Kernel::new(0.5, NoiseDist::Normal { sd: 1.0 })?;
    let mu = invariant_estimate(&k, &Point::scalar(0.0, 1), 1000, 200_000, 1, &root.fork("invariant"))?;
    let x2: Vec<f64> = mu.atoms().iter().map(|p| p.y0() * p.y0()).collect();
    let m2 = stats::mean(&x2);
    let m2_se = stats::batch_means_stderr(&x2, 20);
    let var_ok = (m2 - 4.0 / 3.0).abs() <= 3.0 * m2_se;

    let grid: Vec<usize> = (0..=10).collect();
    let fit = ergodic_decay(
        &k,
        &Point::scalar(0.0, 1),
        &Point::scalar(1.0, 1),
        &grid,
        1000,
        &root.fork("decay"),
        &DecayConfig::default(),
    )?;
    let q_ok = fit.q.lo > 0.4 && fit.q.hi < 0.6;

    let centered = CenteredG { gbar: TestFunction::coordinate(0), mean: Estimate::exact(0.0) };
    let tail = TailParams::new(1.0, 0.5, Seminorm::Lipschitz, Point::scalar(0.0, 1), MetricSpec::default())?;
    let chi = ChiApprox::build(&k, &centered, tail, mu.atoms(), &ChiConfig::default(), &root.fork("chi"))?;
    let xs = mu.resample_stratified(10, &mut root.fork("chi-states").rng())?;
    let mut worst = 0.0f64;
    let mut checks = Vec::new();
    for (j, x) in xs.atoms().iter().enumerate() {
        let v = chi.eval_direct(x, 20_000, &root.fork("chi-eval").substream(j as u64))?;
        let gap = (v.value - 2.0 * x.y0()).abs();
        let tol = 3.0 * v.stderr + v.tail_bound;
        worst = worst.max(gap / tol);
        checks.push((x.y0(), v));
    }
    let chi_ok = worst <= 1.0;
    let detail = format!(
        "E x^2 {m2:.4} +- {m2_se:.4} (4/3), q {:.4} [{:.4}, {:.4}], chi=2x worst gap/tol {worst:.3} (N={})",
        fit.q.value, fit.q.lo, fit.q.hi, chi.truncation
    );
    Ok(within_time(t0, 120, var_ok && q_ok && chi_ok, detail, json(&(m2, m2_se, &fit, &checks))))
}

fn criterion_3() -> Result<Outcome> {
    let t0 = Instant::now();
    let m = GeneModel::reference();
    let report = certify(&m, &CheckConfig::default(), &DriftConfig::default(), &RngStream::new(SEED).fork("c3"))?;
    let drift = report.drift.as_ref().expect("drift constants");
    let a_ok = drift.a.value <= 0.25 + (drift.a.hi - drift.a.value);
    let b_ok = drift.b.contains(0.05);
    let a_star = m.a_star_analytic();
    let balance = m.balance_lhs();
    let lil = m.lil_condition_lhs();
    let failing: Vec<&str> = report.entries.iter().filter(|e| !e.pass).map(|e| e.name.as_str()).collect();
    let pass = report.all_pass && a_ok && b_ok && a_star == Some(0.0625) && balance == -0.5 && lil == -2.75;
    let detail = format!(
        "{} entries, failing {:?}, a {:.4} [{:.4}, {:.4}], b {:.4} [{:.4}, {:.4}], a* {:?}, balance {balance}, lil {lil}",
        report.entries.len(),
        failing,
        drift.a.value,
        drift.a.lo,
        drift.a.hi,
        drift.b.value,
        drift.b.lo,
        drift.b.hi,
        a_star
    );
    Ok(within_time(t0, 300, pass, detail, json(&report)))
}

fn criterion_4() -> Result<Outcome> {
    let t0 = Instant::now();
    let root = RngStream::new(SEED).fork("c4");
    let m = GeneModel::reference();
    let drift = drift_constants(&m, &DriftConfig::default(), &root.fork("drift"))?;
    let spec = CouplingSpec { gamma: 0.9, ..Default::default() };
    let c = Coupling::new(m.clone(), spec, Some(&drift))?;

    let (x, y) = (Point::scalar(1.0, 1), Point::scalar(2.0, 1));
    let start = CoupledState::new(x.clone(), y.clone());
    let steps = 100_000;
    let coupled = par_map_streams(steps, &root.fork("marginal-coupled"), |_, rng| c.step(&start, rng))?;
    let first: Vec<Point> = coupled.iter().map(|s| s.first.clone()).collect();
    let second: Vec<Point> = coupled.iter().map(|s| s.second.clone()).collect();
    let direct_x = par_map_streams(steps, &root.fork("marginal-x"), |_, rng| m.sample_post_jump(&x, rng))?;
    let direct_y = par_map_streams(steps, &root.fork("marginal-y"), |_, rng| m.sample_post_jump(&y, rng))?;
    let metric = m.metric();
    let tx = fm_two_sample_test(&first, &direct_x, metric, 2000, 20, 3.0, &root.fork("fm-x"))?;
    let ty = fm_two_sample_test(&second, &direct_y, metric, 2000, 20, 3.0, &root.fork("fm-y"))?;
    let marginal_ok = tx.pass && ty.pass;

    let cfg = DiagnosticsConfig { horizon: 1000, n_traj: 2000, ..Default::default() };
    let diag = estimate_b_constants(&c, &[(x.clone(), y.clone())], &cfg, Some(&drift), &root.fork("b-constants"))?;
    let p = &diag.pairs[0];
    let (ratio_ok, ratio_txt) = match (p.contraction_ratio, p.quadrature_ratio) {
        (Some(r), Some(q)) => (r.value <= q + (r.hi - r.value), format!("{:.4} vs quadrature {q:.4}", r.value)),
        _ => (false, "unavailable".into()),
    };
    let (moment_ok, moment_txt) = match (p.gamma_moment_half, p.gamma_moment) {
        (Some(h), Some(f)) => (rel_diff(h.value, f.value) <= 0.05, format!("{:.4} -> {:.4}", h.value, f.value)),
        _ => (false, "unavailable".into()),
    };

    let g = TestFunction::clamped_coordinate(0, f64::NEG_INFINITY, 1.0)?;
    let grid: Vec<usize> = (0..=20).collect();
    let decay = coupled_decay(
        &c,
        &g,
        (&Point::scalar(0.0, 1), &Point::scalar(4.0, 1)),
        &grid,
        1000,
        &root.fork("coupled-decay"),
        &DecayConfig::default(),
    )?;
    let v0 = decay.fit.points[0].value;
    let v20 = decay.fit.points[20].value;
    let decay_ok = v20 < 0.05 * v0;
    let pass = marginal_ok && ratio_ok && moment_ok && decay_ok;
    let detail = format!(
        "marginals d_FM {:.4}/{:.4} vs null {:.4}/{:.4}, Q ratio {ratio_txt}, E gamma^-rho {moment_txt}, decay {v0:.4} -> {v20:.2e}",
        tx.statistic.value, ty.statistic.value, tx.null.value, ty.null.value
    );
    Ok(within_time(t0, 600, pass, detail, json(&(&tx, &ty, &diag, &decay))))
}

fn random_measure(rng: &mut impl Rng, atoms: usize) -> EmpiricalMeasure {
    let pts: Vec<Point> =
        (0..atoms).map(|_| Point::scalar(rng.random_range(0.0..3.0), rng.random_range(1..=2u32))).collect();
    let w: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
    EmpiricalMeasure::normalized(pts, w).expect("valid measure")
}

fn criterion_5() -> Result<Outcome> {
    let t0 = Instant::now();
    let metric = MetricSpec::default();
    let mut rng = RngStream::new(SEED).fork("c5").rng();
    let mut brute_gap = 0.0f64;
    let mut values = Vec::new();
    for _ in 0..100 {
        let n1 = rng.random_range(1..=3usize);
        let n2 = rng.random_range(1..=4 - n1);
        let a = random_measure(&mut rng, n1);
        let b = random_measure(&mut rng, n2);
        let p = FmProblem::new(&a, &b, metric);
        let (lp, bf) = (fm_distance(&p)?, fm_distance_bruteforce(&p)?);
        brute_gap = brute_gap.max((lp - bf).abs());
        values.push(lp);
    }
    let mut axiom_gap = 0.0f64;
    for _ in 0..100 {
        let ms: Vec<EmpiricalMeasure> = (0..3).map(|_| random_measure(&mut rng, 5)).collect();
        let d = |i: usize, j: usize| fm_distance(&FmProblem::new(&ms[i], &ms[j], metric));
        let (ab, ba, bc, ac, aa) = (d(0, 1)?, d(1, 0)?, d(1, 2)?, d(0, 2)?, d(0, 0)?);
        axiom_gap = axiom_gap.max((ab - ba).abs()).max(aa.abs()).max(ac - ab - bc).max(-ab);
        values.push(ab);
    }
    let mut dirac_gap = 0.0f64;
    let mut pairs = vec![(Point::scalar(0.0, 1), Point::scalar(3.0, 1)), (Point::scalar(0.0, 1), Point::scalar(0.5, 1))];
    for _ in 0..50 {
        pairs.push((
            Point::scalar(rng.random_range(0.0..3.0), rng.random_range(1..=2u32)),
            Point::scalar(rng.random_range(0.0..3.0), rng.random_range(1..=2u32)),
        ));
    }
    for (p, q) in &pairs {
        let (a, b) = (EmpiricalMeasure::dirac(p.clone()), EmpiricalMeasure::dirac(q.clone()));
        let want = rho_c(p, q, &metric)?.min(2.0);
        dirac_gap = dirac_gap.max((fm_distance(&FmProblem::new(&a, &b, metric))? - want).abs());
    }
    let fixed = (
        fm_distance(&FmProblem::new(
            &EmpiricalMeasure::dirac(pairs[0].0.clone()),
            &EmpiricalMeasure::dirac(pairs[0].1.clone()),
            metric,
        ))?,
        fm_distance(&FmProblem::new(
            &EmpiricalMeasure::dirac(pairs[1].0.clone()),
            &EmpiricalMeasure::dirac(pairs[1].1.clone()),
            metric,
        ))?,
    );
    let pass = brute_gap <= 1e-9 && axiom_gap <= 1e-9 && dirac_gap == 0.0 && fixed == (2.0, 0.5);
    let detail = format!(
        "LP vs brute force {brute_gap:.1e}, axioms {axiom_gap:.1e}, two-Dirac gap {dirac_gap:.1e}, fixed pairs {fixed:?}"
    );
    Ok(within_time(t0, 60, pass, detail, json(&values)))
}

/// Minimal energy in the box `values +- d` by coordinate descent.
fn box_energy(t: &[f64], v: &[f64], d: f64) -> f64 {
    let g = t.len() - 1;
    let mut f: Vec<f64> = v.to_vec();
    f[0] = 0.0;
    let energy = |f: &[f64]| (1..=g).map(|j| (f[j] - f[j - 1]).powi(2) / (t[j] - t[j - 1])).sum::<f64>();
    let mut prev = f64::INFINITY;
    for _ in 0..200_000 {
        for j in 1..=g {
            let wa = 1.0 / (t[j] - t[j - 1]);
            let target = if j < g {
                let wb = 1.0 / (t[j + 1] - t[j]);
                (wa * f[j - 1] + wb * f[j + 1]) / (wa + wb)
            } else {
                f[j - 1]
            };
            f[j] = target.clamp(v[j] - d, v[j] + d);
        }
        let e = energy(&f);
        if prev - e <= 1e-16 {
            return e;
        }
        prev = e;
    }
    prev
}

fn brute_k_distance(t: &[f64], v: &[f64]) -> f64 {
    let (mut lo, mut hi) = (v[0].abs(), v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if box_energy(t, v, mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn criterion_6() -> Result<Outcome> {
    let t0 = Instant::now();
    let g = 256;
    let t: Vec<f64> = (0..=g).map(|j| j as f64 / g as f64).collect();
    let zero = k_distance_values(&t, &vec![0.0; g + 1], 1e-7)?;
    let id = k_distance_values(&t, &t, 1e-7)?;
    let two: Vec<f64> = t.iter().map(|s| 2.0 * s).collect();
    let double = k_distance_values(&t, &two, 1e-7)?;
    let mut rng = RngStream::new(SEED).fork("c6").rng();
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for _ in 0..20 {
        let pts = rng.random_range(4..=10usize);
        let mut tc: Vec<f64> = (1..pts).map(|_| rng.random_range(0.0..1.0)).collect();
        tc.push(0.0);
        tc.push(1.0);
        tc.sort_by(f64::total_cmp);
        tc.dedup();
        let mut v = vec![0.0];
        for _ in 1..tc.len() {
            let last = *v.last().unwrap();
            v.push(last + rng.random_range(-1.0..1.0));
        }
        let fast = k_distance_values(&tc, &v, 1e-7)?;
        let slow = brute_k_distance(&tc, &v);
        worst = worst.max((fast - slow).abs());
        rows.push((fast, slow));
    }
    let pass = zero == 0.0 && id <= 1e-7 && (double - 1.0).abs() <= 1e-6 && worst <= 1e-3;
    let detail = format!("k(0) {zero}, k(t) {id:.1e}, k(2t) {double:.8}, worst gap vs coordinate descent {worst:.1e}");
    Ok(within_time(t0, 60, pass, detail, json(&(zero, id, double, rows))))
}

struct GeneRun {
    seconds: f64,
    result: StrassenResult,
    identity: Vec<lilkit::lil::IdentityCheck>,
    chi_n: usize,
}

fn gene_run() -> Result<GeneRun> {
    let t0 = Instant::now();
    let root = RngStream::new(SEED).fork("gene");
    let m = GeneModel::reference();
    let mu = invariant_estimate(&m, &m.reference_state(), 1000, 20_000, 5, &root.fork("invariant"))?;
    let (x, y) = (Point::scalar(0.0, 1), Point::scalar(4.0, 2));
    let grid: Vec<usize> = (0..=8).collect();
    let fit = ergodic_decay(&m, &x, &y, &grid, 1000, &root.fork("decay"), &DecayConfig::default())?;
    let v = m.lyapunov();
    let tail = TailParams::from_decay(
        &fit,
        v.eval(&x) + v.eval(&y),
        mu.integrate(|p| v.eval(p)),
        m.reference_state(),
        m.metric(),
    )?;
    let g = TestFunction::clamped_coordinate(0, 0.0, 1.0)?;
    let centered = center_g(&g, &mu, 0.95)?;
    let chi = ChiApprox::build(&m, &centered, tail, mu.atoms(), &ChiConfig::default(), &root.fork("chi"))?;
    let cfg = LilConfig { n: 100_000, n_traj: 200, k_traj: 4, ..Default::default() };
    let result = run_lil(&chi, &mu, &mu, &cfg, &root.fork("lil"))?;
    let states = mu.resample_stratified(10, &mut root.fork("identity-states").rng())?;
    let identity = chi_identity_checks(&chi, states.atoms(), 20_000, 3.0, 0.95, &root.fork("identity"))?;
    Ok(GeneRun { seconds: t0.elapsed().as_secs_f64(), result, identity, chi_n: chi.truncation })
}

fn criterion_7(gene: &GeneRun) -> Result<Outcome> {
    let t0 = Instant::now() - Duration::from_secs_f64(gene.seconds);
    let r = &gene.result;
    let reg = r.martingale.as_ref().expect("regression");
    let id_ok = gene.identity.iter().all(|c| c.identity_pass);
    let var_ok = gene.identity.iter().all(|c| c.variance_pass);
    let pass = reg.pass && id_ok && var_ok && r.sigma2_agree;
    let detail = format!(
        "regression intercept {:.2e} slope {:.2e} pass {}, U chi identity {id_ok}, E Z1^2 identity {var_ok}, sigma2 formula {:.5} [{:.5}, {:.5}] average {:.5} [{:.5}, {:.5}] (N={})",
        reg.intercept.value,
        reg.slope.value,
        reg.pass,
        r.sigma2_by_formula.sigma2.value,
        r.sigma2_by_formula.sigma2.lo,
        r.sigma2_by_formula.sigma2.hi,
        r.sigma2_by_average.value,
        r.sigma2_by_average.lo,
        r.sigma2_by_average.hi,
        gene.chi_n
    );
    Ok(within_time(t0, 600, pass, detail, json(&(reg, &gene.identity, &r.sigma2_by_formula, &r.sigma2_by_average))))
}

fn criterion_8() -> Result<Outcome> {
    let t0 = Instant::now();
    let k = IidKernel::rademacher();
    let cfg = TrendConfig { n_max: 10_000_000, n_min: 1000, n_traj: 20, ..Default::default() };
    let res = rhat_trend(&k, &TestFunction::coordinate(0), 1.0, &Point::scalar(1.0, 1), &cfg, &RngStream::new(SEED).fork("c8"))?;
    let inside = res
        .trajectories
        .iter()
        .filter(|tr| {
            let hi = *tr.running_max.last().unwrap();
            let lo = *tr.running_min.last().unwrap();
            (0.5..=1.2).contains(&hi) && (-1.2..=-0.5).contains(&lo)
        })
        .count();
    let frac = inside as f64 / res.trajectories.len() as f64;
    let kd = &res.k_distance_median;
    let (k_first, k_last) = (kd[0], *kd.last().unwrap());
    let pass = frac >= 0.9 && k_last < k_first;
    let detail = format!(
        "band fraction {frac:.2} (need 0.90), median k_distance n={} {k_first:.4} -> n={} {k_last:.4}",
        res.grid[0],
        res.grid.last().unwrap()
    );
    Ok(within_time(t0, 900, pass, detail, json(&res)))
}

fn criterion_9(gene: &GeneRun) -> Result<Outcome> {
    let t0 = Instant::now() - Duration::from_secs_f64(gene.seconds);
    let k = IidKernel::rademacher();
    let chi = iid_chi(&k)?;
    let cfg = LilConfig { n: 4096, n_traj: 200, k_traj: 2, ..Default::default() };
    let iid = run_lil(&chi, k.measure(), k.measure(), &cfg, &RngStream::new(SEED).fork("c9"))?;
    let flat_n = iid.series_lil1.flat_at;
    let flat_ok = flat_n.is_some_and(|n| n <= 1000);
    let r = &gene.result;
    let s2 = r.sigma2_by_formula.sigma2.value;
    let h = r.hn2_over_n.last().expect("h curve");
    let h_ok = rel_diff(h.value, s2) <= 0.1;
    let ratio = r.sum_z2_ratio.last().expect("ratio curve");
    let ratio_ok = (ratio.median - 1.0).abs() <= 0.1 && ratio.within_10pct >= 0.95;
    let pass = flat_ok && h_ok && ratio_ok;
    let detail = format!(
        "lil1 flat at n={flat_n:?}, gene h_n^2/n {:.5} vs sigma2 {s2:.5} at n={}, sum Z^2/h_n^2 median {:.4} within 10% {:.3}",
        h.value, h.n, ratio.median, ratio.within_10pct
    );
    Ok(within_time(t0, 600, pass, detail, json(&(&iid.series_lil1, &iid.series_lil2, &r.hn2_over_n, &r.sum_z2_ratio))))
}

fn all_criteria(live: bool) -> Vec<Outcome> {
    let fail = |e: lilkit::Error| Outcome { pass: false, detail: format!("error: {e}"), artifact: String::new() };
    let mut out: Vec<Outcome> = Vec::new();
    let mut push = |o: Outcome| {
        if live {
            let i = out.len() + 1;
            println!("criterion {i}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        out.push(o);
    };
    push(criterion_1().unwrap_or_else(fail));
    push(criterion_2().unwrap_or_else(fail));
    push(criterion_3().unwrap_or_else(fail));
    push(criterion_4().unwrap_or_else(fail));
    push(criterion_5().unwrap_or_else(fail));
    push(criterion_6().unwrap_or_else(fail));
    let gene = gene_run();
    match &gene {
        Ok(g) => push(criterion_7(g).unwrap_or_else(fail)),
        Err(e) => push(fail(lilkit::Error::Input(e.to_string()))),
    }
    push(criterion_8().unwrap_or_else(fail));
    match &gene {
        Ok(g) => push(criterion_9(g).unwrap_or_else(fail)),
        Err(e) => push(fail(lilkit::Error::Input(e.to_string()))),
    }
    out
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool").install(f)
}

#[test]
fn acceptance() {
    let base = in_pool(1, || all_criteria(true));
    let mut all = base.iter().all(|o| o.pass);
    let mut mismatches = Vec::new();
    for workers in [4, 8] {
        let other = in_pool(workers, || all_criteria(false));
        for (i, (a, b)) in base.iter().zip(&other).enumerate() {
            if a.artifact.is_empty() || a.artifact != b.artifact {
                mismatches.push(format!("{}@{workers}", i + 1));
            }
        }
    }
    let det = mismatches.is_empty();
    println!(
        "criterion 10: {} artifacts of criteria 1-9 byte-identical across 1, 4, 8 workers; mismatches {:?}",
        if det { "PASS" } else { "FAIL" },
        mismatches
    );
    all &= det;
    assert!(all, "acceptance criteria failed");
}
