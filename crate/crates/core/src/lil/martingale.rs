//! The martingale `M_n`, its increments `Z_n`, the variance `sigma^2` and
//! the identities tying them to `chi`.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::kernel::{par_map_streams, EmpiricalMeasure};
use crate::rng::{RngStream, StreamRng};
use crate::space::Point;
use crate::stats::{self, Estimate};

use super::chi::ChiApprox;

/// `M_0 = 0, ..., M_n`, `Z_1, ..., Z_n` (`z[k - 1] = Z_k`) and the partial
/// sums `S_k = sum_{i<k} gbar(phi_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSeries {
    pub trajectory: Vec<Point>,
    pub m: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    /// Tail bound of `chi` at each `phi_k`.
    pub tail: Vec<f64>,
}

impl MartingaleSeries {
    pub fn n(&self) -> usize {
        self.m.len() - 1
    }
}

/// One step of a streamed series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesStep {
    pub k: usize,
    pub g: f64,
    pub s: f64,
    pub m: f64,
    pub z: f64,
}

/// `M_n = chi(phi_n) - chi(phi_0) + sum_{i<n} gbar(phi_i)`, with `Z_k`
/// taken as the difference of consecutive `M`.
pub fn martingale_series(traj: &[Point], chi: &ChiApprox) -> Result<MartingaleSeries> {
    if traj.is_empty() {
        return input("martingale series needs a nonempty trajectory");
    }
    let n = traj.len() - 1;
    let mut m = Vec::with_capacity(n + 1);
    let mut z = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n + 1);
    let mut tail = Vec::with_capacity(n + 1);
    let c0 = chi.eval(&traj[0])?;
    let mut sum = 0.0;
    for (k, x) in traj.iter().enumerate() {
        let c = if k == 0 { c0 } else { chi.eval(x)? };
        let mk = if k == 0 { 0.0 } else { c.value - c0.value + sum };
        if k > 0 {
            z.push(mk - m[k - 1]);
        }
        m.push(mk);
        s.push(sum);
        tail.push(c.tail_bound);
        sum += chi.gbar().eval(x);
    }
    Ok(MartingaleSeries { trajectory: traj.to_vec(), m, z, s, tail })
}

/// Streams the series along a fresh trajectory of length `n` from `start`,
/// calling `visit(phi_k, step_k)` for `k = 0..=n`.
pub fn walk_martingale(
    chi: &ChiApprox,
    start: &Point,
    n: usize,
    rng: &mut StreamRng,
    mut visit: impl FnMut(&Point, &SeriesStep),
) -> Result<()> {
    let k = chi.kernel();
    let gbar = chi.gbar();
    let c0 = chi.eval(start)?.value;
    let mut x = start.clone();
    let mut sum = 0.0;
    let mut prev_m = 0.0;
    for t in 0..=n {
        if t > 0 {
            x = k.step(&x, rng)?;
        }
        let m = if t == 0 { 0.0 } else { chi.eval(&x)?.value - c0 + sum };
        let z = if t == 0 { 0.0 } else { m - prev_m };
        let g = gbar.eval(&x);
        visit(&x, &SeriesStep { k: t, g, s: sum, m, z });
        prev_m = m;
        sum += g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sigma2Method {
    /// `int (U chi^2 - (U chi)^2) d mu*` over `atoms` atoms of the invariant
    /// estimate with `inner` one-step samples each.
    Formula { atoms: usize, inner: usize },
    /// Mean over `n_traj` trajectories of `(1/n) sum Z_l^2`, started from the
    /// invariant estimate.
    Average { n_traj: usize, n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub method: Sigma2Method,
    pub sigma2: Estimate,
    /// `E_{mu*}(Z_1^2 /\ m)` for each requested truncation (formula only).
    pub truncated: Vec<(f64, Estimate)>,
    /// Confidence interval reaches 0 while `gbar` is not constant.
    pub degenerate: bool,
}

/// `count` equally weighted atoms representing `mu`. Small measures are
/// expanded rather than used as they are, so weights are respected and
/// the outer standard error has `count` units.
fn stratified_atoms(mu: &EmpiricalMeasure, count: usize, stream: &RngStream) -> Result<Vec<Point>> {
    let w0 = mu.weights()[0];
    if mu.len() == count && mu.weights().iter().all(|w| *w == w0) {
        return Ok(mu.atoms().to_vec());
    }
    Ok(mu.resample_stratified(count, &mut stream.rng())?.atoms().to_vec())
}

/// `sigma^2(gbar)` by either route.
pub fn sigma2_estimate(
    chi: &ChiApprox,
    mu_star: &EmpiricalMeasure,
    method: Sigma2Method,
    m_grid: &[f64],
    level: f64,
    stream: &RngStream,
) -> Result<Sigma2Estimate> {
    let gbar = chi.gbar();
    let finish = |sigma2: Estimate, truncated| Sigma2Estimate {
        method,
        degenerate: !gbar.is_zero() && sigma2.lo <= 0.0,
        sigma2,
        truncated,
    };
    if gbar.is_zero() {
        let t = m_grid.iter().map(|m| (*m, Estimate::exact(0.0))).collect();
        return Ok(Sigma2Estimate { method, sigma2: Estimate::exact(0.0), truncated: t, degenerate: false });
    }
    match method {
        Sigma2Method::Formula { atoms, inner } => {
            if atoms < 2 || inner < 2 {
                return input("formula estimator needs at least two atoms and two inner samples");
            }
            let pts = stratified_atoms(mu_star, atoms, &stream.fork("sigma2-atoms"))?;
            let k = chi.kernel();
            let per = par_map_streams(pts.len(), &stream.fork("sigma2-formula"), |j, rng| {
                let x = &pts[j];
                let shift = chi.eval(x)?.value - gbar.eval(x);
                let mut w = Vec::with_capacity(inner);
                for _ in 0..inner {
                    w.push(chi.eval(&k.step(x, rng)?)?.value);
                }
                let var = stats::variance(&w);
                let trunc: Vec<f64> = m_grid
                    .iter()
                    .map(|m| stats::mean(&w.iter().map(|v| (v - shift).powi(2).min(*m)).collect::<Vec<_>>()))
                    .collect();
                Ok((var, trunc))
            })?;
            let vars: Vec<f64> = per.iter().map(|p| p.0).collect();
            let truncated = m_grid
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let v: Vec<f64> = per.iter().map(|p| p.1[i]).collect();
                    (*m, Estimate::from_samples(&v, level))
                })
                .collect();
            Ok(finish(Estimate::from_samples(&vars, level), truncated))
        }
        Sigma2Method::Average { n_traj, n } => {
            if n_traj < 2 || n < 1 {
                return input("average estimator needs n_traj >= 2 and n >= 1");
            }
            let starts = mu_star.resample_stratified(n_traj, &mut stream.fork("sigma2-starts").rng())?;
            let avgs = par_map_streams(n_traj, &stream.fork("sigma2-average"), |r, rng| {
                let mut acc = 0.0;
                walk_martingale(chi, &starts.atoms()[r], n, rng, |_, st| acc += st.z * st.z)?;
                Ok(acc / n as f64)
            })?;
            Ok(finish(Estimate::from_samples(&avgs, level), Vec::new()))
        }
    }
}

/// `U chi = chi - gbar` and `E_x Z_1^2 = U chi^2 - (U chi)^2` at one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub x: Point,
    pub chi: f64,
    pub gbar: f64,
    pub u_chi: Estimate,
    pub identity_gap: f64,
    pub identity_tol: f64,
    pub identity_pass: bool,
    pub ez1_sq: Estimate,
    pub var_u_chi: Estimate,
    pub variance_gap: f64,
    pub variance_tol: f64,
    pub variance_pass: bool,
}

/// Both identities at each state; `U chi` and the variance come from one
/// set of `samples` one-step draws, `E_x Z_1^2` from an independent set.
/// Tolerances are `z` standard errors plus tail and interpolation bounds.
pub fn chi_identity_checks(
    chi: &ChiApprox,
    states: &[Point],
    samples: usize,
    z: f64,
    level: f64,
    stream: &RngStream,
) -> Result<Vec<IdentityCheck>> {
    if samples < 2 {
        return input("identity checks need at least two samples");
    }
    let k = chi.kernel();
    let gbar = chi.gbar();
    par_map_streams(states.len(), stream, |j, _| {
        let x = &states[j];
        let cx = chi.eval(x)?;
        let gx = gbar.eval(x);
        let draw = |s: &RngStream| -> Result<(Vec<f64>, f64, f64, f64)> {
            let mut rng = s.rng();
            let mut w = Vec::with_capacity(samples);
            let (mut se, mut tail, mut interp) = (0.0f64, 0.0, 0.0);
            for _ in 0..samples {
                let c = chi.eval(&k.step(x, &mut rng)?)?;
                w.push(c.value);
                se = se.max(c.stderr);
                tail += c.tail_bound;
                interp += c.interp_bound;
            }
            Ok((w, se, tail / samples as f64, interp / samples as f64))
        };
        let sub = stream.substream(j as u64);
        let (w, se1, tail1, interp1) = draw(&sub.fork("u-chi"))?;
        let (w2, _, _, _) = draw(&sub.fork("z-square"))?;
        let u = Estimate::from_samples(&w, level);
        let gap = (u.value - (cx.value - gx)).abs();
        let tol = z * (u.stderr + cx.stderr + se1) + cx.tail_bound + cx.interp_bound + tail1 + interp1;
        let shift = cx.value - gx;
        let sq: Vec<f64> = w2.iter().map(|v| (v - shift).powi(2)).collect();
        let ez = Estimate::from_samples(&sq, level);
        let dev: Vec<f64> = w.iter().map(|v| (v - u.value).powi(2)).collect();
        let nn = samples as f64;
        let var_val = stats::mean(&dev) * nn / (nn - 1.0);
        let (_, var_se) = stats::mean_stderr(&dev);
        let var = Estimate::normal(var_val, var_se, level);
        let vgap = (ez.value - var.value).abs();
        let vtol = z * ez.stderr.hypot(var.stderr) + tol * tol;
        Ok(IdentityCheck {
            x: x.clone(),
            chi: cx.value,
            gbar: gx,
            u_chi: u,
            identity_gap: gap,
            identity_tol: tol,
            identity_pass: gap <= tol,
            ez1_sq: ez,
            var_u_chi: var,
            variance_gap: vgap,
            variance_tol: vtol,
            variance_pass: vgap <= vtol,
        })
    })
}

/// OLS of `Z_{k+1}` on a bounded `f(phi_k)` with heteroscedasticity-robust
/// standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRegression {
    pub pairs: usize,
    pub intercept: Estimate,
    pub slope: Estimate,
    /// Largest shift of intercept and slope that an approximation error of
    /// `chi` up to `bias_sup` can produce.
    pub intercept_bias: f64,
    pub slope_bias: f64,
    pub z: f64,
    pub pass: bool,
}

pub fn martingale_regression(f: &[f64], zs: &[f64], bias_sup: f64, z: f64, level: f64) -> Result<MartingaleRegression> {
    let n = f.len();
    if n < 3 || zs.len() != n {
        return input("regression needs at least three matched pairs");
    }
    let nf = n as f64;
    let fm = stats::mean(f);
    let zm = stats::mean(zs);
    let sff = stats::sum(f.iter().map(|a| (a - fm) * (a - fm)));
    if !(sff > 0.0) {
        return input("regressor is constant");
    }
    let sfz = stats::sum(f.iter().zip(zs).map(|(a, b)| (a - fm) * (b - zm)));
    let slope = sfz / sff;
    let intercept = zm - slope * fm;
    // sandwich (X'X)^-1 X' diag(e^2) X (X'X)^-1 written out for two columns
    let (mut a00, mut a01, mut a11) = (0.0, 0.0, 0.0);
    for (x, y) in f.iter().zip(zs) {
        let e = y - intercept - slope * x;
        let e2 = e * e;
        a00 += e2;
        a01 += e2 * x;
        a11 += e2 * x * x;
    }
    let sx = stats::sum(f.iter().copied());
    let sxx = stats::sum(f.iter().map(|x| x * x));
    let det = nf * sxx - sx * sx;
    let (i00, i01, i11) = (sxx / det, -sx / det, nf / det);
    let v00 = i00 * (i00 * a00 + i01 * a01) + i01 * (i00 * a01 + i01 * a11);
    let v11 = i01 * (i01 * a00 + i11 * a01) + i11 * (i01 * a01 + i11 * a11);
    let se_i = v00.max(0.0).sqrt();
    let se_s = v11.max(0.0).sqrt();
    let mad = stats::mean(&f.iter().map(|a| (a - fm).abs()).collect::<Vec<_>>());
    let slope_bias = bias_sup * mad / (sff / nf);
    let intercept_bias = bias_sup + fm.abs() * slope_bias;
    let pass = intercept.abs() <= z * se_i + intercept_bias && slope.abs() <= z * se_s + slope_bias;
    Ok(MartingaleRegression {
        pairs: n,
        intercept: Estimate::normal(intercept, se_i, level),
        slope: Estimate::normal(slope, se_s, level),
        intercept_bias,
        slope_bias,
        z,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{simulate, IidKernel};
    use crate::lil::chi::{center_g, ChiConfig, Seminorm, TailParams};
    use crate::space::{MetricSpec, TestFunction};

    fn iid_chi(k: &IidKernel, g: &TestFunction) -> ChiApprox<'static> {
        let k: &'static IidKernel = Box::leak(Box::new(k.clone()));
        let c = center_g(g, k.measure(), 0.95).unwrap();
        let tail = TailParams::new(1.0, 0.01, Seminorm::Lipschitz, Point::scalar(0.0, 1), MetricSpec::default()).unwrap();
        ChiApprox::build(k, &c, tail, k.measure().atoms(), &ChiConfig::default(), &RngStream::new(0)).unwrap()
    }

    #[test]
    fn iid_martingale_is_partial_sum() {
        let k = IidKernel::rademacher();
        let chi = iid_chi(&k, &TestFunction::coordinate(0));
        assert!(chi.is_exact());
        let traj = simulate(&k, &Point::scalar(1.0, 1), 500, &RngStream::new(5)).unwrap();
        let ser = martingale_series(&traj, &chi).unwrap();
        let mut acc = 0.0;
        assert_eq!(ser.m[0], 0.0);
        for k in 1..=500 {
            acc += traj[k].y0();
            assert_eq!(ser.m[k], acc);
            assert_eq!(ser.z[k - 1], traj[k].y0());
            assert_eq!(ser.z[k - 1], ser.m[k] - ser.m[k - 1]);
        }
    }

    #[test]
    fn zero_function_gives_zero_series() {
        let k = IidKernel::rademacher();
        let chi = iid_chi(&k, &TestFunction::constant(2.0));
        let traj = simulate(&k, &Point::scalar(1.0, 1), 50, &RngStream::new(5)).unwrap();
        let ser = martingale_series(&traj, &chi).unwrap();
        assert!(ser.m.iter().all(|v| *v == 0.0));
        let s2 = sigma2_estimate(&chi, k.measure(), Sigma2Method::Formula { atoms: 2, inner: 10 }, &[1.0], 0.95, &RngStream::new(1))
            .unwrap();
        assert_eq!(s2.sigma2.value, 0.0);
        assert!(!s2.degenerate);
    }

    #[test]
    fn streamed_matches_stored() {
        let k = IidKernel::rademacher();
        let chi = iid_chi(&k, &TestFunction::coordinate(0));
        let s = RngStream::new(9);
        let traj = simulate(&k, &Point::scalar(-1.0, 1), 100, &s).unwrap();
        let ser = martingale_series(&traj, &chi).unwrap();
        let mut ms = Vec::new();
        walk_martingale(&chi, &Point::scalar(-1.0, 1), 100, &mut s.rng(), |_, st| ms.push(st.m)).unwrap();
        assert_eq!(ms, ser.m);
    }

    #[test]
    fn iid_sigma2_both_routes() {
        let k = IidKernel::rademacher();
        let chi = iid_chi(&k, &TestFunction::coordinate(0));
        let f = sigma2_estimate(&chi, k.measure(), Sigma2Method::Formula { atoms: 2, inner: 4000 }, &[0.5, 4.0], 0.95, &RngStream::new(2))
            .unwrap();
        let a = sigma2_estimate(&chi, k.measure(), Sigma2Method::Average { n_traj: 20, n: 2000 }, &[], 0.95, &RngStream::new(3))
            .unwrap();
        assert!((f.sigma2.value - 1.0).abs() < 0.05);
        assert_eq!(a.sigma2.value, 1.0);
        assert_eq!(f.truncated[1].1.value, 1.0);
        assert_eq!(f.truncated[0].1.value, 0.5);
    }

    #[test]
    fn formula_uses_requested_atom_count() {
        // two-atom law: the outer standard error must come from 50 units
        let k = IidKernel::rademacher();
        let chi = iid_chi(&k, &TestFunction::coordinate(0));
        let f = sigma2_estimate(&chi, k.measure(), Sigma2Method::Formula { atoms: 50, inner: 1000 }, &[], 0.95, &RngStream::new(4))
            .unwrap();
        // sd of a 1000-sample variance of +-1 draws is about sqrt(2)/1000
        let se = 2f64.sqrt() / 1000.0 / 50f64.sqrt();
        assert!(f.sigma2.stderr > 0.5 * se && f.sigma2.stderr < 2.0 * se, "{}", f.sigma2.stderr);
        assert!((f.sigma2.value - 1.0).abs() < 4.0 * se);
    }

    #[test]
    fn regression_detects_dependence() {
        let f: Vec<f64> = (0..2000).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let noise: Vec<f64> = (0..2000).map(|i| if (i * 7919) % 13 < 6 { 1.0 } else { -1.0 }).collect();
        let good: Vec<f64> = noise.clone();
        let bad: Vec<f64> = f.iter().zip(&noise).map(|(a, e)| 0.5 * a + e).collect();
        assert!(!martingale_regression(&f, &bad, 0.0, 3.0, 0.95).unwrap().pass);
        let r = martingale_regression(&f, &good, 0.0, 3.0, 0.95).unwrap();
        assert!(r.slope.stderr > 0.0);
    }
}
