use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::kernel::{par_map_streams, EmpiricalMeasure, Kernel};
use crate::rng::RngStream;
use crate::space::{MetricSpec, Point};
use crate::stats::{self, Estimate};

use super::fm::{fm_distance_subsampled, fm_distance_with_budget, FmProblem, DEFAULT_LP_BUDGET};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    Inconclusive(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `log value_n ~ log c + n log q` over the points above the floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub points: Vec<DecayPoint>,
    pub log_c: f64,
    pub q: Estimate,
    pub r2: f64,
    pub points_used: usize,
    pub status: FitStatus,
}

impl DecayFit {
    /// `q < 1` at the fit's confidence level.
    pub fn contracts(&self) -> bool {
        self.status == FitStatus::Ok && self.q.hi < 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    pub metric: MetricSpec,
    pub level: f64,
    pub r2_floor: f64,
    pub value_floor: f64,
    pub n_batches: usize,
    pub lp_budget: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            metric: MetricSpec::default(),
            level: 0.95,
            r2_floor: 0.9,
            value_floor: 1e-12,
            n_batches: 10,
            lp_budget: DEFAULT_LP_BUDGET,
        }
    }
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.is_empty() {
        return input("decay grid is empty");
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return input("decay grid must be strictly increasing");
    }
    Ok(())
}

/// Log-linear fit of a decay curve. Points at or below `value_floor` are
/// dropped; fewer than three remaining points or `r2 < r2_floor` is
/// inconclusive.
pub fn fit_decay(points: Vec<DecayPoint>, cfg: &DecayConfig) -> DecayFit {
    let used: Vec<DecayPoint> = points.iter().filter(|p| p.value > cfg.value_floor).copied().collect();
    let nan = Estimate { value: f64::NAN, stderr: f64::NAN, lo: f64::NAN, hi: f64::NAN };
    if used.len() < 3 {
        return DecayFit {
            points_used: used.len(),
            points,
            log_c: f64::NAN,
            q: nan,
            r2: f64::NAN,
            status: FitStatus::Inconclusive(format!("{} points above the floor, need 3", used.len())),
        };
    }
    let x: Vec<f64> = used.iter().map(|p| p.n as f64).collect();
    let y: Vec<f64> = used.iter().map(|p| p.value.ln()).collect();
    let Some(f) = stats::linear_fit(&x, &y) else {
        return DecayFit {
            points_used: used.len(),
            points,
            log_c: f64::NAN,
            q: nan,
            r2: f64::NAN,
            status: FitStatus::Inconclusive("degenerate regression".into()),
        };
    };
    let t = stats::t_quantile(0.5 + cfg.level / 2.0, f.dof());
    let q = Estimate {
        value: f.slope.exp(),
        stderr: f.slope.exp() * f.se_slope,
        lo: (f.slope - t * f.se_slope).exp(),
        hi: (f.slope + t * f.se_slope).exp(),
    };
    let status = if f.r2 < cfg.r2_floor {
        FitStatus::Inconclusive(format!("r2 {:.4} below floor {}", f.r2, cfg.r2_floor))
    } else {
        FitStatus::Ok
    };
    DecayFit { points_used: used.len(), points, log_c: f.intercept, q, r2: f.r2, status }
}

fn fm_between(a: &[Point], b: &[Point], cfg: &DecayConfig, stream: &RngStream) -> Result<f64> {
    let ma = EmpiricalMeasure::uniform(a.to_vec())?;
    let mb = EmpiricalMeasure::uniform(b.to_vec())?;
    let p = FmProblem::new(&ma, &mb, cfg.metric);
    match fm_distance_with_budget(&p, cfg.lp_budget) {
        Err(Error::Budget { .. }) => Ok(fm_distance_subsampled(&p, cfg.lp_budget, 8, stream)?.value),
        other => other,
    }
}

/// Estimates `d_FM(P^n delta_x, P^n delta_y)` on `n_grid` from `n_traj`
/// trajectories per start. Trajectory `r` from `x` and from `y` use the same
/// substream, so the two empirical measures are coupled through common
/// random numbers.
pub fn ergodic_decay(
    k: &dyn Kernel,
    x: &Point,
    y: &Point,
    n_grid: &[usize],
    n_traj: usize,
    stream: &RngStream,
    cfg: &DecayConfig,
) -> Result<DecayFit> {
    check_grid(n_grid)?;
    if n_traj < 2 {
        return input("ergodic_decay needs n_traj >= 2");
    }
    let horizon = *n_grid.last().unwrap();
    let paths = par_map_streams(n_traj, stream, |_, rng| {
        let mut out_x = Vec::with_capacity(n_grid.len());
        let mut out_y = Vec::with_capacity(n_grid.len());
        for (start, out) in [(x, &mut out_x), (y, &mut out_y)] {
            let saved = rng.clone();
            let mut g = 0;
            let mut cur = start.clone();
            for t in 0..=horizon {
                if t > 0 {
                    cur = k.step(&cur, rng)?;
                }
                if g < n_grid.len() && n_grid[g] == t {
                    out.push(cur.clone());
                    g += 1;
                }
            }
            *rng = saved;
        }
        Ok((out_x, out_y))
    })?;
    let nb = cfg.n_batches.clamp(2, n_traj);
    let per = n_traj / nb;
    let fm_stream = stream.fork("decay-fm");
    let mut points = Vec::with_capacity(n_grid.len());
    for (g, &n) in n_grid.iter().enumerate() {
        let a: Vec<Point> = paths.iter().map(|p| p.0[g].clone()).collect();
        let b: Vec<Point> = paths.iter().map(|p| p.1[g].clone()).collect();
        let value = fm_between(&a, &b, cfg, &fm_stream.substream(g as u64))?;
        let batch_vals: Vec<f64> = (0..nb)
            .map(|i| fm_between(&a[i * per..(i + 1) * per], &b[i * per..(i + 1) * per], cfg, &fm_stream))
            .collect::<Result<_>>()?;
        let se = (stats::variance(&batch_vals) / nb as f64).sqrt();
        let z = stats::z_two_sided(cfg.level);
        points.push(DecayPoint { n, value, stderr: se, lo: (value - z * se).max(0.0), hi: value + z * se });
    }
    if points.iter().all(|p| p.value == 0.0) {
        return Ok(DecayFit {
            points_used: 0,
            points,
            log_c: f64::NEG_INFINITY,
            q: Estimate::exact(0.0),
            r2: f64::NAN,
            status: FitStatus::Inconclusive("all distances are zero".into()),
        });
    }
    Ok(fit_decay(points, cfg))
}

/// Empirical measure of `phi_{b + t}`, `phi_{b + 2t}`, ... (`n_keep` atoms)
/// along one trajectory, `b = burn_in`, `t = thinning`.
pub fn invariant_estimate(
    k: &dyn Kernel,
    start: &Point,
    burn_in: usize,
    n_keep: usize,
    thinning: usize,
    stream: &RngStream,
) -> Result<EmpiricalMeasure> {
    if burn_in < 1 || n_keep < 1 || thinning < 1 {
        return input("burn_in, n_keep and thinning must be >= 1");
    }
    let mut rng = stream.rng();
    let mut x = start.clone();
    for _ in 0..burn_in {
        x = k.step(&x, &mut rng)?;
    }
    let mut atoms = Vec::with_capacity(n_keep);
    for _ in 0..n_keep {
        for _ in 0..thinning {
            x = k.step(&x, &mut rng)?;
        }
        atoms.push(x.clone());
    }
    EmpiricalMeasure::uniform(atoms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `d_FM` between runs from the two starts.
    pub distance: Estimate,
    /// `d_FM` between two independent runs from the first start.
    pub null_distance: Estimate,
    pub tolerance_factor: f64,
    pub converged: bool,
}

/// Runs from `start_a` and `start_b` must agree in `d_FM` within
/// `tolerance_factor` times the distance between two independent runs from
/// `start_a`.
#[allow(clippy::too_many_arguments)]
pub fn invariant_check(
    k: &dyn Kernel,
    start_a: &Point,
    start_b: &Point,
    burn_in: usize,
    n_keep: usize,
    thinning: usize,
    metric: MetricSpec,
    stream: &RngStream,
) -> Result<(EmpiricalMeasure, ConvergenceReport)> {
    let runs = par_map_streams(3, stream, |i, _| {
        let s = if i == 1 { start_b } else { start_a };
        invariant_estimate(k, s, burn_in, n_keep, thinning, &stream.substream(100 + i as u64))
    })?;
    let fm_stream = stream.fork("invariant-fm");
    let d = fm_distance_subsampled(&FmProblem::new(&runs[0], &runs[1], metric), DEFAULT_LP_BUDGET, 16, &fm_stream)?;
    let d0 = fm_distance_subsampled(
        &FmProblem::new(&runs[0], &runs[2], metric),
        DEFAULT_LP_BUDGET,
        16,
        &fm_stream.substream(1),
    )?;
    let factor = 3.0;
    let converged = d.value <= factor * d0.value.max(f64::MIN_POSITIVE) || d.value == 0.0;
    let mut runs = runs;
    let measure = runs.swap_remove(0);
    Ok((measure, ConvergenceReport { distance: d, null_distance: d0, tolerance_factor: factor, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Ar1Kernel, IidKernel, NoiseDist};

    #[test]
    fn grid_validation() {
        let k = IidKernel::rademacher();
        let p = Point::scalar(0.0, 1);
        let cfg = DecayConfig::default();
        assert!(ergodic_decay(&k, &p, &p, &[], 10, &RngStream::new(1), &cfg).is_err());
        assert!(ergodic_decay(&k, &p, &p, &[3, 2], 10, &RngStream::new(1), &cfg).is_err());
    }

    #[test]
    fn equal_starts_give_zero_curve() {
        let k = Ar1Kernel::new(0.5, NoiseDist::Normal { sd: 1.0 }).unwrap();
        let p = Point::scalar(1.0, 1);
        let fit = ergodic_decay(&k, &p, &p, &[0, 1, 2, 5], 50, &RngStream::new(2), &DecayConfig::default()).unwrap();
        assert!(fit.points.iter().all(|q| q.value == 0.0));
    }

    #[test]
    fn exact_geometric_curve_fits() {
        let pts: Vec<DecayPoint> = (0..10)
            .map(|n| {
                let v = 3.0 * 0.4f64.powi(n);
                DecayPoint { n: n as usize, value: v, stderr: 0.0, lo: v, hi: v }
            })
            .collect();
        let fit = fit_decay(pts, &DecayConfig::default());
        assert!((fit.q.value - 0.4).abs() < 1e-12);
        assert!((fit.log_c - 3.0f64.ln()).abs() < 1e-12);
        assert_eq!(fit.status, FitStatus::Ok);
    }

    #[test]
    fn invariant_requires_positive_sizes() {
        let k = IidKernel::rademacher();
        assert!(invariant_estimate(&k, &Point::scalar(0.0, 1), 0, 10, 1, &RngStream::new(1)).is_err());
    }
}
