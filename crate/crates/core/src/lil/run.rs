//! Ensemble runs: `h_n^2`, both variance estimators, the paths and the
//! appendix diagnostics; and a streaming runner for long single paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::kernel::{EmpiricalMeasure, Kernel};
use crate::rng::RngStream;
use crate::space::{Point, TestFunction};
use crate::stats::{self, Estimate, NeumaierSum};

use super::chi::{ChiApprox, ChiSummary};
use super::martingale::{martingale_regression, sigma2_estimate, walk_martingale, MartingaleRegression, Sigma2Estimate, Sigma2Method};
use super::paths::{
    dyadic_grid, eta_path, eta_tilde_path, lil_norm, needed_indices, r_path, running_extremes, EtaSign, Hn2Curve,
    LilPath, DEFAULT_PATH_POINTS,
};
use super::strassen::k_distance;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlatnessConfig {
    /// Largest admissible ratio of consecutive dyadic increments.
    pub ratio: f64,
    /// Number of consecutive doublings the ratio must hold for.
    pub run: usize,
    /// Largest admissible increment relative to the partial sum.
    pub rel_increment: f64,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        Self { ratio: 0.75, run: 3, rel_increment: 1e-2 }
    }
}

/// First grid index where the last `run` increment ratios are at most
/// `ratio` and the latest increment is at most `rel_increment` of the sum.
pub fn detect_flatness(partial: &[f64], cfg: &FlatnessConfig) -> Option<usize> {
    if partial.iter().all(|v| *v == 0.0) {
        return (!partial.is_empty()).then_some(0);
    }
    let inc: Vec<f64> = partial.windows(2).map(|w| w[1] - w[0]).collect();
    for j in cfg.run..inc.len() {
        let ok_ratio = (j + 1 - cfg.run..=j).all(|i| {
            let (a, b) = (inc[i - 1], inc[i]);
            if b == 0.0 {
                true
            } else {
                a > 0.0 && b >= 0.0 && b <= cfg.ratio * a
            }
        });
        let p = partial[j + 1];
        if ok_ratio && inc[j].abs() <= cfg.rel_increment * p.abs() {
            return Some(j + 1);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LilConfig {
    pub n: usize,
    pub n_traj: usize,
    /// Trajectories per parallel batch; results are reduced in trajectory
    /// order, so the batch size (not the worker count) fixes the output.
    pub batch: usize,
    pub level: f64,
    pub z: f64,
    pub path_points: usize,
    pub eta_tilde_sign: EtaSign,
    pub m_grid: Vec<f64>,
    pub upsilon: f64,
    pub vartheta: f64,
    pub sigma2_atoms: usize,
    pub sigma2_inner: usize,
    /// Second pass for paths and the appendix diagnostics.
    pub diagnostics: bool,
    pub rhat_n_min: usize,
    pub k_n_min: usize,
    /// Trajectories whose paths are projected onto `K`.
    pub k_traj: usize,
    pub k_tol: f64,
    pub regression_pairs: usize,
    pub flatness: FlatnessConfig,
}

impl Default for LilConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            n_traj: 200,
            batch: 8,
            level: 0.95,
            z: 3.0,
            path_points: DEFAULT_PATH_POINTS,
            eta_tilde_sign: EtaSign::Plus,
            m_grid: vec![0.25, 1.0, 4.0, 16.0],
            upsilon: 1.0,
            vartheta: 1.0,
            sigma2_atoms: 200,
            sigma2_inner: 1000,
            diagnostics: true,
            rhat_n_min: 1024,
            k_n_min: 1024,
            k_traj: 20,
            k_tol: 1e-5,
            regression_pairs: 500,
            flatness: FlatnessConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CurvePoint {
    fn from_samples(n: usize, xs: &[f64], scale: f64, level: f64) -> Self {
        let e = Estimate::from_samples(xs, level);
        Self { n, value: e.value * scale, stderr: e.stderr * scale, lo: e.lo * scale, hi: e.hi * scale }
    }
}

/// Spread of the per-trajectory ratio `(1/h_n^2) sum_{l<=n} Z_l^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    /// Fraction of trajectories within 10% of 1.
    pub within_10pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPartialSums {
    pub name: String,
    pub points: Vec<CurvePoint>,
    /// First `n` from which the partial sums are flat.
    pub flat_at: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CesaroEntry {
    pub m: f64,
    pub average: Estimate,
    pub invariant: Estimate,
    pub agree: bool,
}

/// Medians over the projected trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KDistancePoint {
    pub n: usize,
    pub r: f64,
    pub eta: f64,
    pub eta_tilde: f64,
    pub sup_eta_tilde_minus_r: f64,
    pub trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrassenResult {
    pub n: usize,
    pub n_traj: usize,
    pub centering: Estimate,
    pub chi: ChiSummary,
    pub sigma2_by_formula: Sigma2Estimate,
    pub sigma2_by_average: Estimate,
    pub sigma2_agree: bool,
    pub degenerate: bool,
    pub sigma_used: f64,
    pub hn2_over_n: Vec<CurvePoint>,
    pub hn2_direct_over_n: Vec<CurvePoint>,
    pub hn2_monotone_from: Option<usize>,
    pub sum_z2_ratio: Vec<RatioPoint>,
    pub series_lil1: SeriesPartialSums,
    pub series_lil2: SeriesPartialSums,
    pub cesaro: Vec<CesaroEntry>,
    pub rhat_grid: Vec<usize>,
    /// `rhat[r][j]` for trajectory `r` at `rhat_grid[j]`.
    pub rhat: Vec<Vec<f64>>,
    pub rhat_running_max: Vec<f64>,
    pub rhat_running_min: Vec<f64>,
    /// Shift of `rhat_n` that the centering interval allows, per grid point.
    pub rhat_bias_band: Vec<f64>,
    pub k_distance_curve: Vec<KDistancePoint>,
    /// Median over the projected trajectories of the `r_n` distance at `n`.
    pub k_distance: Option<f64>,
    pub martingale: Option<MartingaleRegression>,
    /// `r_n, eta_n, eta~_n` of trajectory 0.
    pub paths: Vec<LilPath>,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

struct PassOne {
    z2: Vec<f64>,
    m2: Vec<f64>,
    avg_z2: f64,
    cum_at: Vec<f64>,
    m2_at: Vec<f64>,
}

#[derive(Default)]
struct PassTwo {
    ratio: Vec<f64>,
    lil1: Vec<f64>,
    lil2: Vec<f64>,
    cesaro: Vec<f64>,
    rhat: Vec<f64>,
    f: Vec<f64>,
    z: Vec<f64>,
    kd: Vec<[f64; 4]>,
    paths: Vec<LilPath>,
}

/// Runs `batch`-sized groups of trajectories in parallel and hands the
/// results to `reduce` in trajectory order.
fn batched<T: Send>(
    n_traj: usize,
    batch: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
    mut reduce: impl FnMut(usize, T),
) -> Result<()> {
    let b = batch.max(1);
    let mut r0 = 0;
    while r0 < n_traj {
        let r1 = (r0 + b).min(n_traj);
        let out: Vec<T> = (r0..r1).into_par_iter().map(&f).collect::<Result<_>>()?;
        for (i, t) in out.into_iter().enumerate() {
            reduce(r0 + i, t);
        }
        r0 = r1;
    }
    Ok(())
}

/// The full ensemble analysis of `g` under the chain started from `start_law`.
pub fn run_lil(
    chi: &ChiApprox,
    mu_star: &EmpiricalMeasure,
    start_law: &EmpiricalMeasure,
    cfg: &LilConfig,
    stream: &RngStream,
) -> Result<StrassenResult> {
    let n = cfg.n;
    let t = cfg.n_traj;
    if n < 3 || t < 2 {
        return input("run_lil needs n >= 3 and at least two trajectories");
    }
    if cfg.m_grid.iter().any(|m| !(*m > 0.0)) {
        return input("m_grid entries must be positive");
    }
    let gbar = chi.gbar();
    let formula = sigma2_estimate(
        chi,
        mu_star,
        Sigma2Method::Formula { atoms: cfg.sigma2_atoms, inner: cfg.sigma2_inner },
        &cfg.m_grid,
        cfg.level,
        &stream.fork("sigma2"),
    )?;
    let starts = start_law.resample_stratified(t, &mut stream.fork("lil-starts").rng())?;
    let traj_stream = stream.fork("lil-trajectories");
    let diag_grid = dyadic_grid(1, n);

    let mut sum_z2 = vec![0.0; n + 1];
    let mut sum_m2 = vec![0.0; n + 1];
    let mut avg_z2 = Vec::with_capacity(t);
    let mut cum_at: Vec<Vec<f64>> = Vec::with_capacity(t);
    let mut m2_at: Vec<Vec<f64>> = Vec::with_capacity(t);
    batched(
        t,
        cfg.batch,
        |r| {
            let mut rng = traj_stream.substream(r as u64).rng();
            let mut out = PassOne {
                z2: Vec::with_capacity(n + 1),
                m2: Vec::with_capacity(n + 1),
                avg_z2: 0.0,
                cum_at: Vec::with_capacity(diag_grid.len()),
                m2_at: Vec::with_capacity(diag_grid.len()),
            };
            let mut cum = 0.0;
            let mut gi = 0;
            walk_martingale(chi, &starts.atoms()[r], n, &mut rng, |_, st| {
                let z2 = st.z * st.z;
                cum += z2;
                out.z2.push(z2);
                out.m2.push(st.m * st.m);
                if gi < diag_grid.len() && diag_grid[gi] == st.k {
                    out.cum_at.push(cum);
                    out.m2_at.push(st.m * st.m);
                    gi += 1;
                }
            })?;
            out.avg_z2 = cum / n as f64;
            Ok(out)
        },
        |_, p| {
            for (a, b) in sum_z2.iter_mut().zip(&p.z2) {
                *a += b;
            }
            for (a, b) in sum_m2.iter_mut().zip(&p.m2) {
                *a += b;
            }
            avg_z2.push(p.avg_z2);
            cum_at.push(p.cum_at);
            m2_at.push(p.m2_at);
        },
    )?;
    let tf = t as f64;
    let mut h2v = Vec::with_capacity(n + 1);
    let mut acc = NeumaierSum::new();
    for (l, s) in sum_z2.iter().enumerate() {
        if l > 0 {
            acc.add(s / tf);
        }
        h2v.push(acc.value());
    }
    drop(sum_z2);
    let h2 = Hn2Curve::new(h2v);
    let hn2_over_n: Vec<CurvePoint> = diag_grid
        .iter()
        .enumerate()
        .map(|(g, &nn)| {
            let xs: Vec<f64> = cum_at.iter().map(|c| c[g]).collect();
            let mut p = CurvePoint::from_samples(nn, &xs, 1.0 / nn as f64, cfg.level);
            p.value = h2.values[nn] / nn as f64;
            p
        })
        .collect();
    let hn2_direct_over_n: Vec<CurvePoint> = diag_grid
        .iter()
        .enumerate()
        .map(|(g, &nn)| {
            let xs: Vec<f64> = m2_at.iter().map(|c| c[g]).collect();
            let mut p = CurvePoint::from_samples(nn, &xs, 1.0 / nn as f64, cfg.level);
            p.value = sum_m2[nn] / tf / nn as f64;
            p
        })
        .collect();
    drop(sum_m2);
    let average = Estimate::from_samples(&avg_z2, cfg.level);
    let sigma2_agree = formula.sigma2.overlaps(&average);
    let degenerate = formula.degenerate || (!gbar.is_zero() && average.lo <= 0.0);
    let sigma_used = if formula.sigma2.value > 0.0 { formula.sigma2.value.sqrt() } else { average.value.max(0.0).sqrt() };

    let mut result = StrassenResult {
        n,
        n_traj: t,
        centering: chi.mean,
        chi: chi.summary(),
        sigma2_by_formula: formula.clone(),
        sigma2_by_average: average,
        sigma2_agree,
        degenerate,
        sigma_used,
        hn2_over_n,
        hn2_direct_over_n,
        hn2_monotone_from: h2.monotone_from,
        sum_z2_ratio: Vec::new(),
        series_lil1: SeriesPartialSums { name: "lil1".into(), points: Vec::new(), flat_at: None },
        series_lil2: SeriesPartialSums { name: "lil2".into(), points: Vec::new(), flat_at: None },
        cesaro: Vec::new(),
        rhat_grid: Vec::new(),
        rhat: Vec::new(),
        rhat_running_max: Vec::new(),
        rhat_running_min: Vec::new(),
        rhat_bias_band: Vec::new(),
        k_distance_curve: Vec::new(),
        k_distance: None,
        martingale: None,
        paths: Vec::new(),
    };
    if !cfg.diagnostics || gbar.is_zero() || degenerate || !(sigma_used > 0.0) {
        return Ok(result);
    }

    let rhat_grid = dyadic_grid(cfg.rhat_n_min.min(n), n);
    let k_grid = dyadic_grid(cfg.k_n_min.min(n), n);
    let thin = (n / cfg.regression_pairs.max(1)).max(1);
    let spread = {
        let v: Vec<f64> = mu_star.atoms().iter().map(|p| gbar.eval(p)).collect();
        let s = stats::variance(&v).sqrt();
        if s > 0.0 { s } else { 1.0 }
    };
    let h = &h2.values;
    let mut ratios: Vec<Vec<f64>> = vec![Vec::with_capacity(t); diag_grid.len()];
    let mut lil1: Vec<Vec<f64>> = vec![Vec::with_capacity(t); diag_grid.len()];
    let mut lil2: Vec<Vec<f64>> = vec![Vec::with_capacity(t); diag_grid.len()];
    let mut ces: Vec<Vec<f64>> = vec![Vec::with_capacity(t); cfg.m_grid.len()];
    let mut reg_f = Vec::new();
    let mut reg_z = Vec::new();
    let mut kd_all: Vec<Vec<[f64; 4]>> = Vec::new();
    batched(
        t,
        cfg.batch,
        |r| {
            let mut rng = traj_stream.substream(r as u64).rng();
            let mut s = Vec::with_capacity(n + 1);
            let mut m = Vec::with_capacity(n + 1);
            let mut out = PassTwo { cesaro: vec![0.0; cfg.m_grid.len()], ..Default::default() };
            let (mut cum, mut l1, mut l2) = (0.0, 0.0, 0.0);
            let mut gi = 0;
            let mut prev_f = 0.0;
            walk_martingale(chi, &starts.atoms()[r], n, &mut rng, |_, st| {
                s.push(st.s);
                m.push(st.m);
                let l = st.k;
                if l > 0 {
                    let z2 = st.z * st.z;
                    cum += z2;
                    if h[l] > 0.0 {
                        let hl = h[l].sqrt();
                        if st.z.abs() < cfg.upsilon * hl {
                            l1 += z2 * z2 / (h[l] * h[l]);
                        }
                        if st.z.abs() >= cfg.vartheta * hl {
                            l2 += st.z.abs() / hl;
                        }
                    }
                    for (c, mm) in out.cesaro.iter_mut().zip(&cfg.m_grid) {
                        *c += z2.min(*mm);
                    }
                    if (l - 1) % thin == 0 {
                        out.f.push(prev_f);
                        out.z.push(st.z);
                    }
                }
                prev_f = (st.g / spread).tanh();
                if gi < diag_grid.len() && diag_grid[gi] == l {
                    out.ratio.push(if h[l] > 0.0 { cum / h[l] } else { f64::NAN });
                    out.lil1.push(l1);
                    out.lil2.push(l2);
                    gi += 1;
                }
            })?;
            for c in out.cesaro.iter_mut() {
                *c /= n as f64;
            }
            out.rhat = rhat_grid.iter().map(|&nn| lil_norm(nn, sigma_used).map_or(0.0, |d| s[nn] / d)).collect();
            if r < cfg.k_traj {
                for &nn in &k_grid {
                    let rp = r_path(nn, sigma_used, cfg.path_points, |k| s[k])?;
                    let ep = eta_path(nn, sigma_used, cfg.path_points, &h2, |k| m[k])?;
                    let tp = eta_tilde_path(nn, sigma_used, cfg.path_points, cfg.eta_tilde_sign, |k| m[k])?;
                    let sup = rp.values.iter().zip(&tp.values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                    out.kd.push([
                        k_distance(&rp, cfg.k_tol)?,
                        k_distance(&ep, cfg.k_tol)?,
                        k_distance(&tp, cfg.k_tol)?,
                        sup,
                    ]);
                    if r == 0 && nn == n {
                        out.paths = vec![rp, ep, tp];
                    }
                }
            }
            Ok(out)
        },
        |r, p| {
            for (g, v) in p.ratio.iter().enumerate() {
                ratios[g].push(*v);
                lil1[g].push(p.lil1[g]);
                lil2[g].push(p.lil2[g]);
            }
            for (i, c) in p.cesaro.iter().enumerate() {
                ces[i].push(*c);
            }
            reg_f.extend_from_slice(&p.f);
            reg_z.extend_from_slice(&p.z);
            if !p.kd.is_empty() {
                kd_all.push(p.kd);
            }
            if r == 0 {
                result.paths = p.paths;
            }
            result.rhat.push(p.rhat);
        },
    )?;

    result.sum_z2_ratio = diag_grid
        .iter()
        .enumerate()
        .map(|(g, &nn)| {
            let mut v: Vec<f64> = ratios[g].iter().copied().filter(|x| x.is_finite()).collect();
            if v.is_empty() {
                return RatioPoint { n: nn, mean: f64::NAN, median: f64::NAN, q05: f64::NAN, q95: f64::NAN, within_10pct: 0.0 };
            }
            let mean = stats::mean(&v);
            let med = median(&mut v);
            let within = v.iter().filter(|x| (*x - 1.0).abs() <= 0.1).count() as f64 / v.len() as f64;
            RatioPoint { n: nn, mean, median: med, q05: quantile(&v, 0.05), q95: quantile(&v, 0.95), within_10pct: within }
        })
        .collect();
    let partial = |name: &str, data: &[Vec<f64>]| {
        let points: Vec<CurvePoint> = diag_grid
            .iter()
            .enumerate()
            .map(|(g, &nn)| CurvePoint::from_samples(nn, &data[g], 1.0, cfg.level))
            .collect();
        let means: Vec<f64> = points.iter().map(|p| p.value).collect();
        let flat_at = detect_flatness(&means, &cfg.flatness).map(|j| diag_grid[j]);
        SeriesPartialSums { name: name.into(), points, flat_at }
    };
    result.series_lil1 = partial("lil1", &lil1);
    result.series_lil2 = partial("lil2", &lil2);
    result.cesaro = cfg
        .m_grid
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let average = Estimate::from_samples(&ces[i], cfg.level);
            let invariant = formula.truncated[i].1;
            CesaroEntry { m: *m, average, invariant, agree: average.overlaps(&invariant) }
        })
        .collect();
    let (mx, mn): (Vec<f64>, Vec<f64>) = result
        .rhat
        .iter()
        .map(|v| {
            let (hi, lo) = running_extremes(v);
            (*hi.last().unwrap_or(&f64::NAN), *lo.last().unwrap_or(&f64::NAN))
        })
        .unzip();
    result.rhat_running_max = mx;
    result.rhat_running_min = mn;
    let zc = stats::z_two_sided(cfg.level);
    result.rhat_bias_band = rhat_grid
        .iter()
        .map(|&nn| lil_norm(nn, sigma_used).map_or(0.0, |d| zc * chi.mean.stderr * nn as f64 / d))
        .collect();
    result.rhat_grid = rhat_grid;
    result.k_distance_curve = k_grid
        .iter()
        .enumerate()
        .map(|(g, &nn)| {
            let col = |i: usize| {
                let mut v: Vec<f64> = kd_all.iter().map(|kd| kd[g][i]).collect();
                median(&mut v)
            };
            KDistancePoint {
                n: nn,
                r: col(0),
                eta: col(1),
                eta_tilde: col(2),
                sup_eta_tilde_minus_r: col(3),
                trajectories: kd_all.len(),
            }
        })
        .collect();
    result.k_distance = result.k_distance_curve.last().map(|p| p.r);
    let bias_sup = chi.tail_tol.max(0.0) + 2.0 * cfg.z * chi.max_table_stderr();
    result.martingale = Some(martingale_regression(&reg_f, &reg_z, bias_sup, cfg.z, cfg.level)?);
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendConfig {
    pub n_max: usize,
    pub n_min: usize,
    pub n_traj: usize,
    pub path_points: usize,
    pub k_tol: f64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self { n_max: 10_000_000, n_min: 1024, n_traj: 20, path_points: DEFAULT_PATH_POINTS, k_tol: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendTrajectory {
    pub rhat: Vec<f64>,
    pub running_max: Vec<f64>,
    pub running_min: Vec<f64>,
    pub k_distance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub grid: Vec<usize>,
    pub sigma: f64,
    pub trajectories: Vec<TrendTrajectory>,
    pub k_distance_median: Vec<f64>,
}

/// `rhat_n` and the distance of `r_n` to `K` on a dyadic grid up to
/// `n_max`, streaming each trajectory without storing it. Only the partial
/// sums at the grid positions of the paths are kept.
pub fn rhat_trend(
    k: &dyn Kernel,
    gbar: &TestFunction,
    sigma: f64,
    start: &Point,
    cfg: &TrendConfig,
    stream: &RngStream,
) -> Result<TrendResult> {
    if !(sigma > 0.0) {
        return input(format!("rhat_trend needs sigma > 0, got {sigma}"));
    }
    if cfg.n_max < 3 || cfg.n_traj < 1 {
        return input("rhat_trend needs n_max >= 3 and at least one trajectory");
    }
    let grid = dyadic_grid(cfg.n_min.min(cfg.n_max), cfg.n_max);
    let mut want: Vec<usize> = grid.iter().flat_map(|&nn| needed_indices(nn, cfg.path_points)).collect();
    want.sort_unstable();
    want.dedup();
    let trajectories: Vec<TrendTrajectory> = {
        let f = |r: usize| -> Result<TrendTrajectory> {
            let mut rng = stream.substream(r as u64).rng();
            let mut rec = Vec::with_capacity(want.len());
            let mut ptr = 0;
            let mut x = start.clone();
            let mut sum = 0.0;
            for kk in 0..=cfg.n_max {
                if kk > 0 {
                    x = k.step(&x, &mut rng)?;
                }
                if ptr < want.len() && want[ptr] == kk {
                    rec.push(sum);
                    ptr += 1;
                }
                sum += gbar.eval(&x);
            }
            let at = |i: usize| rec[want.binary_search(&i).expect("recorded index")];
            let rhat: Vec<f64> = grid.iter().map(|&nn| lil_norm(nn, sigma).map_or(0.0, |d| at(nn) / d)).collect();
            let (running_max, running_min) = running_extremes(&rhat);
            let k_distance = grid
                .iter()
                .map(|&nn| k_distance(&r_path(nn, sigma, cfg.path_points, at)?, cfg.k_tol))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrendTrajectory { rhat, running_max, running_min, k_distance })
        };
        (0..cfg.n_traj).into_par_iter().map(f).collect::<Result<_>>()?
    };
    let k_distance_median = (0..grid.len())
        .map(|g| {
            let mut v: Vec<f64> = trajectories.iter().map(|tr| tr.k_distance[g]).collect();
            median(&mut v)
        })
        .collect();
    Ok(TrendResult { grid, sigma, trajectories, k_distance_median })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::IidKernel;
    use crate::lil::chi::{center_g, ChiConfig, Seminorm, TailParams};
    use crate::space::MetricSpec;

    #[test]
    fn flatness_of_inverse_squares() {
        let grid = dyadic_grid(1, 1 << 14);
        let partial: Vec<f64> = grid.iter().map(|&n| (2..=n).map(|k| 1.0 / (k * k) as f64).sum()).collect();
        let j = detect_flatness(&partial, &FlatnessConfig::default()).unwrap();
        assert!(grid[j] <= 1000, "flat at {}", grid[j]);
        let harmonic: Vec<f64> = grid.iter().map(|&n| (1..=n).map(|k| 1.0 / k as f64).sum()).collect();
        assert_eq!(detect_flatness(&harmonic, &FlatnessConfig::default()), None);
        assert_eq!(detect_flatness(&[0.0, 0.0, 0.0], &FlatnessConfig::default()), Some(0));
    }

    #[test]
    fn iid_small_run() {
        let k = IidKernel::rademacher();
        let c = center_g(&TestFunction::coordinate(0), k.measure(), 0.95).unwrap();
        let tail = TailParams::new(1.0, 0.01, Seminorm::Lipschitz, Point::scalar(0.0, 1), MetricSpec::default()).unwrap();
        let chi = ChiApprox::build(&k, &c, tail, k.measure().atoms(), &ChiConfig::default(), &RngStream::new(0)).unwrap();
        let cfg = LilConfig { n: 4096, n_traj: 16, k_traj: 2, rhat_n_min: 64, k_n_min: 1024, ..Default::default() };
        let start = EmpiricalMeasure::dirac(Point::scalar(1.0, 1));
        let res = run_lil(&chi, k.measure(), &start, &cfg, &RngStream::new(11)).unwrap();
        assert_eq!(res.sigma2_by_average.value, 1.0);
        for p in &res.hn2_over_n {
            assert_eq!(p.value, 1.0);
        }
        for p in &res.sum_z2_ratio {
            assert_eq!(p.median, 1.0);
        }
        assert_eq!(res.paths.len(), 3);
        assert!(res.series_lil1.flat_at.unwrap() <= 1000);
        assert!(res.martingale.as_ref().unwrap().pairs > 0);
        let r = &res.paths[0];
        assert_eq!(*r.values.last().unwrap(), res.rhat[0].last().copied().unwrap());
    }
}
