//! Markovian coupling `C = Q + R` of the gene model.
//!
//! On `F` (equal modes) both components share the holding time, the
//! disturbance and, on the `Q` branch, the jump parameter and the new mode.
//! The `Q` branch fires with the overlap density `min(p(z1,.), p(z2,.))`
//! times `min(pi_ij(y1'), pi_ij(y2'))`; otherwise the second component is
//! drawn from its residual law by rejection, so each component moves
//! exactly by the model kernel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ergodicity::{fit_decay, DecayConfig, DecayFit, DecayPoint};
use crate::error::{input, Error, Result};
use crate::gene_model::{DriftConstants, GeneModel, NoiseFamily};
use crate::kernel::par_map_streams;
use crate::quadrature::gauss_legendre;
use crate::rng::{RngStream, StreamRng};
use crate::space::{Coords, Point, TestFunction};
use crate::stats::{self, Estimate};

/// Pairs on which the shared construction is used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FSet {
    #[default]
    EqualModes,
    /// Equal modes and `||y1 - y2|| <= radius`.
    EqualModesWithin { radius: f64 },
}

/// Where the jump parameters of the two components may coincide.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapRegion {
    /// All of `Theta`: the maximal coupling of `p(z1,.)` and `p(z2,.)`.
    #[default]
    Full,
    /// Only `Theta(z1, z2)`, where `w_theta` contracts by `L_w`.
    ContractionSet,
}

fn default_gamma() -> f64 {
    0.9
}
fn default_delta() -> f64 {
    0.5
}
fn default_one() -> f64 {
    1.0
}
fn default_attempts() -> usize {
    100_000
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(default)]
    pub f_set: FSet,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// `Gamma`; `None` means `4 b / (1 - a)` from the drift constants.
    #[serde(default)]
    pub gamma_threshold: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta_target: f64,
    #[serde(default = "default_one")]
    pub beta: f64,
    #[serde(default = "default_one")]
    pub c_beta: f64,
    #[serde(default)]
    pub overlap: OverlapRegion,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        Self {
            f_set: FSet::default(),
            gamma: default_gamma(),
            gamma_threshold: None,
            delta_target: default_delta(),
            beta: 1.0,
            c_beta: 1.0,
            overlap: OverlapRegion::default(),
            max_attempts: default_attempts(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Start,
    Q,
    R,
    /// Pair outside `F`: independent steps.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub first: Point,
    pub second: Point,
    pub last_branch: Branch,
}

impl CoupledState {
    pub fn new(first: Point, second: Point) -> Self {
        Self { first, second, last_branch: Branch::Start }
    }
}

/// A coupling of a validated model with a resolved threshold `Gamma`.
#[derive(Clone, Debug)]
pub struct Coupling {
    model: GeneModel,
    spec: CouplingSpec,
    threshold: f64,
}

impl Coupling {
    /// `drift` supplies `Gamma` when the spec leaves it unset.
    pub fn new(model: GeneModel, spec: CouplingSpec, drift: Option<&DriftConstants>) -> Result<Self> {
        if !(spec.gamma > 0.0 && spec.gamma < 1.0) {
            return input(format!("gamma must lie in (0, 1), got {}", spec.gamma));
        }
        if !(spec.delta_target > 0.0) || !(spec.beta > 0.0) || !(spec.c_beta >= 0.0) {
            return input("delta_target and beta must be positive, c_beta nonnegative");
        }
        if spec.max_attempts == 0 {
            return input("max_attempts must be >= 1");
        }
        if let FSet::EqualModesWithin { radius } = spec.f_set {
            if !(radius > 0.0) {
                return input("F radius must be positive");
            }
        }
        let threshold = match (spec.gamma_threshold, drift) {
            (Some(t), _) => t,
            (None, Some(d)) => d.gamma_threshold(),
            (None, None) => return input("Gamma is unset and no drift constants were given"),
        };
        if !(threshold > 0.0) || !threshold.is_finite() {
            return input(format!("Gamma must be positive, got {threshold}"));
        }
        Ok(Self { model, spec, threshold })
    }

    pub fn model(&self) -> &GeneModel {
        &self.model
    }

    pub fn spec(&self) -> &CouplingSpec {
        &self.spec
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn in_f(&self, x: &Point, y: &Point) -> bool {
        x.mode == y.mode
            && match self.spec.f_set {
                FSet::EqualModes => true,
                FSet::EqualModesWithin { radius } => self.model.norm().of_diff(&x.y, &y.y) <= radius,
            }
    }

    pub fn rho(&self, x: &Point, y: &Point) -> f64 {
        self.model.metric().dist(x, y)
    }

    /// `V(x) + V(y) < Gamma` with the pair in `F`.
    pub fn hit(&self, x: &Point, y: &Point) -> bool {
        let v = self.model.lyapunov();
        self.in_f(x, y) && v.eval(x) + v.eval(y) < self.threshold
    }

    fn overlap_density(&self, z1: &[f64], z2: &[f64], theta: f64) -> f64 {
        if self.spec.overlap == OverlapRegion::ContractionSet {
            let (a, b) = self.model.contraction_interval(z1, z2);
            if theta < a || theta > b {
                return 0.0;
            }
        }
        self.model.density(z1, theta).min(self.model.density(z2, theta))
    }

    /// Joint acceptance weight of the `Q` branch at `(theta, j)` relative to
    /// the first component's law.
    #[allow(clippy::too_many_arguments)]
    fn q_weight(&self, mode: u32, z1: &[f64], z2: &[f64], y1: &[f64], y2: &[f64], theta: f64, j: u32) -> f64 {
        let p1 = self.model.density(z1, theta);
        let pi1 = self.model.switching_probs(mode, y1)[(j - 1) as usize];
        if p1 <= 0.0 || pi1 <= 0.0 {
            return 0.0;
        }
        let pi2 = self.model.switching_probs(mode, y2)[(j - 1) as usize];
        (self.overlap_density(z1, z2, theta) / p1).min(1.0) * (pi1.min(pi2) / pi1)
    }

    /// One step of the coupled chain.
    pub fn step(&self, s: &CoupledState, rng: &mut StreamRng) -> Result<CoupledState> {
        let m = &self.model;
        if !self.in_f(&s.first, &s.second) {
            let first = m.sample_post_jump(&s.first, rng)?;
            let second = m.sample_post_jump(&s.second, rng)?;
            return Ok(CoupledState { first, second, last_branch: Branch::Independent });
        }
        let mode = s.first.mode;
        let t = m.draw_holding_time(rng);
        let z1 = m.flow(mode, t, &s.first.y);
        let z2 = m.flow(mode, t, &s.second.y);
        let h = m.sample_noise(rng);
        let land = |theta: f64, z: &[f64]| -> Coords {
            let mut y = m.jump(theta, z);
            y.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
            y
        };
        let theta = m.sample_theta(&z1, rng)?;
        let y1 = land(theta, &z1);
        let j = m.sample_mode(mode, &y1, rng);
        let y2 = land(theta, &z2);
        let w = self.q_weight(mode, &z1, &z2, &y1, &y2, theta, j);
        if !(-1e-12..=1.0 + 1e-9).contains(&w) {
            return Err(Error::Construction(format!("overlap weight {w} outside [0, 1]")));
        }
        let first = Point { y: y1, mode: j };
        if rng.random::<f64>() < w {
            return Ok(CoupledState { first, second: Point { y: y2, mode: j }, last_branch: Branch::Q });
        }
        // residual law of the second component
        for _ in 0..self.spec.max_attempts {
            let th2 = m.sample_theta(&z2, rng)?;
            let y2 = land(th2, &z2);
            let j2 = m.sample_mode(mode, &y2, rng);
            // the overlap weight relative to the second component's law
            let p2 = m.density(&z2, th2);
            let pi2 = m.switching_probs(mode, &y2)[(j2 - 1) as usize];
            let y1c = land(th2, &z1);
            let pi1 = m.switching_probs(mode, &y1c)[(j2 - 1) as usize];
            let overlap = if p2 > 0.0 && pi2 > 0.0 {
                (self.overlap_density(&z1, &z2, th2) / p2).min(1.0) * (pi1.min(pi2) / pi2)
            } else {
                0.0
            };
            if rng.random::<f64>() >= overlap {
                return Ok(CoupledState { first, second: Point { y: y2, mode: j2 }, last_branch: Branch::R });
            }
        }
        Err(Error::Sampling(format!("residual sampler exceeded {} attempts", self.spec.max_attempts)))
    }

    /// `Q`-branch probability and mean `rho(next) / rho(current)` given `Q`,
    /// by quadrature over holding time, disturbance and jump parameter. Only
    /// one-dimensional models with uniform or no noise.
    pub fn q_branch_oracle(&self, y1: &[f64], y2: &[f64], mode: u32, nodes: usize) -> Result<QOracle> {
        let m = &self.model;
        let s = m.spec();
        if s.dim != 1 {
            return input("the quadrature oracle supports one-dimensional models");
        }
        let dist = m.norm().of_diff(y1, y2);
        let (hx, hw): (Vec<f64>, Vec<f64>) = match s.noise {
            NoiseFamily::None => (vec![0.0], vec![1.0]),
            _ if s.epsilon == 0.0 => (vec![0.0], vec![1.0]),
            NoiseFamily::UniformPositive => gl_on(nodes, 0.0, s.epsilon, 1.0 / s.epsilon),
            NoiseFamily::UniformBall => gl_on(nodes, -s.epsilon, s.epsilon, 0.5 / s.epsilon),
        };
        let (ux, uw) = gl_on(nodes, 0.0, 1.0, 1.0);
        let (lo, hi) = m.theta_interval();
        let mut mass = stats::NeumaierSum::new();
        let mut ratio = stats::NeumaierSum::new();
        for (u, wu) in ux.iter().zip(&uw) {
            let t = -u.ln() / s.lambda;
            let z1 = m.flow(mode, t, y1);
            let z2 = m.flow(mode, t, y2);
            let (a, b) = match self.spec.overlap {
                OverlapRegion::Full => (lo, hi),
                OverlapRegion::ContractionSet => m.contraction_interval(&z1, &z2),
            };
            if a >= b {
                continue;
            }
            let (tx, tw) = gl_on(nodes, a, b, 1.0);
            for (hv, wh) in hx.iter().zip(&hw) {
                for (th, wt) in tx.iter().zip(&tw) {
                    let mut w1 = m.jump(*th, &z1);
                    let mut w2 = m.jump(*th, &z2);
                    w1[0] += hv;
                    w2[0] += hv;
                    let pj1 = m.switching_probs(mode, &w1);
                    let pj2 = m.switching_probs(mode, &w2);
                    let share: f64 = pj1.iter().zip(&pj2).map(|(p, q)| p.min(*q)).sum();
                    let dens = self.overlap_density(&z1, &z2, *th) * share;
                    let wgt = wu * wh * wt * dens;
                    mass.add(wgt);
                    if dist > 0.0 {
                        ratio.add(wgt * m.norm().of_diff(&w1, &w2) / dist);
                    }
                }
            }
        }
        let q_mass = mass.value();
        if !(-1e-12..=1.0 + 1e-9).contains(&q_mass) {
            return Err(Error::Construction(format!("overlap mass {q_mass} outside [0, 1]")));
        }
        let conditional_ratio = if q_mass > 0.0 { ratio.value() / q_mass } else { f64::NAN };
        Ok(QOracle { q_mass, conditional_ratio })
    }
}

fn gl_on(n: usize, a: f64, b: f64, density: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h * density).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QOracle {
    pub q_mass: f64,
    pub conditional_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum PairStatus {
    Ok,
    Inconclusive(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub x: Point,
    pub y: Point,
    pub rho_start: f64,
    pub in_f: bool,
    /// Frequency of the `Q` branch in one step.
    pub q_frequency: Estimate,
    /// Mean `rho(next) / rho(start)` over `Q`-branch steps.
    pub contraction_ratio: Option<Estimate>,
    /// Quadrature value of the same, when available.
    pub quadrature_ratio: Option<f64>,
    pub quadrature_q_mass: Option<f64>,
    /// `Q`-branch landings outside `F`; must be zero.
    pub q_outside_f: usize,
    /// Frequency of a `Q` step landing within `delta_target * rho(start)`.
    pub u_frequency: Estimate,
    /// Observed `1 - Q(x, y, X^2)` against `c_beta rho^beta`.
    pub q_mass_deficit: Estimate,
    pub deficit_bound: f64,
    pub rho_samples: Vec<usize>,
    pub censored: usize,
    /// `E gamma^{-rho}` over trajectories that hit by the half horizon.
    pub gamma_moment_half: Option<Estimate>,
    /// Same over the full horizon.
    pub gamma_moment: Option<Estimate>,
    pub hit_rate: f64,
    /// `V(x) + V(y) < 4 b / (1 - a)`.
    pub start_in_b5_set: bool,
    pub status: PairStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingDiagnostics {
    pub pairs: Vec<PairDiagnostics>,
    pub gamma: f64,
    pub gamma_threshold: f64,
    pub horizon: usize,
    pub n_traj: usize,
    pub hit_floor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub horizon: usize,
    pub n_traj: usize,
    pub hit_floor: f64,
    pub level: f64,
    pub quad_nodes: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { horizon: 1000, n_traj: 1000, hit_floor: 0.99, level: 0.95, quad_nodes: 24 }
    }
}

fn frequency(hits: usize, n: usize, level: f64) -> Estimate {
    let p = hits as f64 / n as f64;
    Estimate::normal(p, (p * (1.0 - p) / n as f64).sqrt(), level)
}

/// Measures the coupling quantities from each start pair: one-step
/// statistics of the two branches, and the coupling time
/// `rho = inf{n >= 1 : pair in F, V1 + V2 < Gamma}` up to `2 * horizon`.
pub fn estimate_b_constants(
    c: &Coupling,
    start_pairs: &[(Point, Point)],
    cfg: &DiagnosticsConfig,
    drift: Option<&DriftConstants>,
    stream: &RngStream,
) -> Result<CouplingDiagnostics> {
    if cfg.n_traj < 100 {
        return input("coupling diagnostics need n_traj >= 100");
    }
    if cfg.horizon == 0 {
        return input("horizon must be >= 1");
    }
    let v = c.model.lyapunov();
    let b5_threshold = drift.map(|d| d.gamma_threshold()).unwrap_or(c.threshold);
    let mut pairs = Vec::with_capacity(start_pairs.len());
    for (k, (x, y)) in start_pairs.iter().enumerate() {
        let ps = stream.substream(k as u64);
        let rho0 = c.rho(x, y);
        let in_f = c.in_f(x, y);
        let start = CoupledState::new(x.clone(), y.clone());
        let one = par_map_streams(cfg.n_traj, &ps.fork("one-step"), |_, rng| {
            let s = c.step(&start, rng)?;
            Ok((s.last_branch, c.rho(&s.first, &s.second), c.in_f(&s.first, &s.second)))
        })?;
        let q_steps: Vec<&(Branch, f64, bool)> = one.iter().filter(|s| s.0 == Branch::Q).collect();
        let n_q = q_steps.len();
        let contraction_ratio = (rho0 > 0.0 && n_q >= 2).then(|| {
            let r: Vec<f64> = q_steps.iter().map(|s| s.1 / rho0).collect();
            Estimate::from_samples(&r, cfg.level)
        });
        let q_outside_f = q_steps.iter().filter(|s| !s.2).count();
        let in_u = q_steps.iter().filter(|s| s.1 <= c.spec.delta_target * rho0).count();
        let (quadrature_ratio, quadrature_q_mass) = if in_f && c.model.dim() == 1 {
            let o = c.q_branch_oracle(&x.y, &y.y, x.mode, cfg.quad_nodes)?;
            (Some(o.conditional_ratio).filter(|r| r.is_finite()), Some(o.q_mass))
        } else {
            (None, None)
        };
        let horizon2 = 2 * cfg.horizon;
        let rho_raw = par_map_streams(cfg.n_traj, &ps.fork("rho"), |_, rng| {
            let mut s = start.clone();
            for n in 1..=horizon2 {
                s = c.step(&s, rng)?;
                if c.hit(&s.first, &s.second) {
                    return Ok(Some(n));
                }
            }
            Ok(None)
        })?;
        let rho_samples: Vec<usize> = rho_raw.iter().flatten().copied().collect();
        let censored = rho_raw.len() - rho_samples.len();
        let moment = |limit: usize| {
            let vals: Vec<f64> =
                rho_samples.iter().filter(|&&r| r <= limit).map(|&r| c.spec.gamma.powi(-(r as i32))).collect();
            (vals.len() >= 2).then(|| Estimate::from_samples(&vals, cfg.level))
        };
        let hit_rate = rho_samples.len() as f64 / cfg.n_traj as f64;
        let status = if hit_rate < cfg.hit_floor {
            PairStatus::Inconclusive(format!("hit rate {hit_rate:.4} below floor {} within {horizon2} steps", cfg.hit_floor))
        } else {
            PairStatus::Ok
        };
        pairs.push(PairDiagnostics {
            x: x.clone(),
            y: y.clone(),
            rho_start: rho0,
            in_f,
            q_frequency: frequency(n_q, cfg.n_traj, cfg.level),
            contraction_ratio,
            quadrature_ratio,
            quadrature_q_mass,
            q_outside_f,
            u_frequency: frequency(in_u, cfg.n_traj, cfg.level),
            q_mass_deficit: frequency(cfg.n_traj - n_q, cfg.n_traj, cfg.level),
            deficit_bound: c.spec.c_beta * rho0.powf(c.spec.beta),
            gamma_moment_half: moment(cfg.horizon),
            gamma_moment: moment(horizon2),
            hit_rate,
            start_in_b5_set: v.eval(x) + v.eval(y) < b5_threshold,
            rho_samples,
            censored,
            status,
        });
    }
    Ok(CouplingDiagnostics {
        pairs,
        gamma: c.spec.gamma,
        gamma_threshold: c.threshold,
        horizon: cfg.horizon,
        n_traj: cfg.n_traj,
        hit_floor: cfg.hit_floor,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledDecay {
    pub fit: DecayFit,
    /// Grid indices where the curve rises by more than three combined
    /// standard errors.
    pub increases: Vec<usize>,
}

/// `E |g(phi1_n) - g(phi2_n)|` along the coupled chain, with a log-linear fit.
pub fn coupled_decay(
    c: &Coupling,
    g: &TestFunction,
    start: (&Point, &Point),
    n_grid: &[usize],
    n_traj: usize,
    stream: &RngStream,
    cfg: &DecayConfig,
) -> Result<CoupledDecay> {
    if n_traj < 100 {
        return input("coupled_decay needs n_traj >= 100");
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return input("decay grid must be nonempty and strictly increasing");
    }
    let horizon = *n_grid.last().unwrap();
    let rows = par_map_streams(n_traj, stream, |_, rng| {
        let mut s = CoupledState::new(start.0.clone(), start.1.clone());
        let mut out = Vec::with_capacity(n_grid.len());
        let mut gi = 0;
        for t in 0..=horizon {
            if t > 0 {
                s = c.step(&s, rng)?;
            }
            if gi < n_grid.len() && n_grid[gi] == t {
                out.push((g.eval(&s.first) - g.eval(&s.second)).abs());
                gi += 1;
            }
        }
        Ok(out)
    })?;
    let z = stats::z_two_sided(cfg.level);
    let points: Vec<DecayPoint> = n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let (m, se) = stats::mean_stderr(&col);
            DecayPoint { n, value: m, stderr: se, lo: (m - z * se).max(0.0), hi: m + z * se }
        })
        .collect();
    let increases = points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].value > w[0].value + 3.0 * w[0].stderr.hypot(w[1].stderr))
        .map(|(k, _)| k + 1)
        .collect();
    let fit = if points.iter().all(|p| p.value == 0.0) {
        DecayFit {
            points_used: 0,
            points,
            log_c: f64::NEG_INFINITY,
            q: Estimate::exact(0.0),
            r2: f64::NAN,
            status: crate::ergodicity::FitStatus::Inconclusive("all distances are zero".into()),
        }
    } else {
        fit_decay(points, cfg)
    };
    Ok(CoupledDecay { fit, increases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn reference(overlap: OverlapRegion) -> Coupling {
        let spec = CouplingSpec { overlap, gamma_threshold: Some(4.0 * 0.05 / 0.75), ..Default::default() };
        Coupling::new(GeneModel::reference(), spec, None).unwrap()
    }

    #[test]
    fn diagonal_stays_diagonal() {
        let c = reference(OverlapRegion::ContractionSet);
        let mut rng = RngStream::new(1).rng();
        let mut s = CoupledState::new(Point::scalar(2.0, 1), Point::scalar(2.0, 1));
        for _ in 0..1000 {
            s = c.step(&s, &mut rng).unwrap();
            assert_eq!(s.first, s.second);
            assert_eq!(s.last_branch, Branch::Q);
        }
    }

    #[test]
    fn oracle_values() {
        let c = reference(OverlapRegion::Full);
        for (mode, rate) in [(1, 1.0), (2, 2.0)] {
            let o = c.q_branch_oracle(&[1.0], &[2.0], mode, 24).unwrap();
            assert_abs_diff_eq!(o.q_mass, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(o.conditional_ratio, 0.5 / (1.0 + rate), epsilon = 1e-10);
        }
        let c = reference(OverlapRegion::ContractionSet);
        let o = c.q_branch_oracle(&[1.0], &[2.0], 1, 24).unwrap();
        assert_abs_diff_eq!(o.q_mass, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(o.conditional_ratio, 0.125, epsilon = 1e-10);
    }

    #[test]
    fn threshold_required() {
        assert!(Coupling::new(GeneModel::reference(), CouplingSpec::default(), None).is_err());
        let bad = CouplingSpec { gamma: 1.0, gamma_threshold: Some(1.0), ..Default::default() };
        assert!(Coupling::new(GeneModel::reference(), bad, None).is_err());
    }

    #[test]
    fn residual_branch_preserves_second_marginal() {
        // contraction-set overlap: half the steps take the residual branch
        let c = reference(OverlapRegion::ContractionSet);
        let m = GeneModel::reference();
        let x = Point::scalar(1.0, 1);
        let y = Point::scalar(3.0, 1);
        let n = 40_000;
        let stream = RngStream::new(5);
        let coupled = par_map_streams(n, &stream, |_, rng| {
            c.step(&CoupledState::new(x.clone(), y.clone()), rng).map(|s| s.second.y0())
        })
        .unwrap();
        let direct = par_map_streams(n, &stream.fork("direct"), |_, rng| m.sample_post_jump(&y, rng).map(|p| p.y0()))
            .unwrap();
        let (a, sa) = stats::mean_stderr(&coupled);
        let (b, sb) = stats::mean_stderr(&direct);
        assert!((a - b).abs() < 4.0 * sa.hypot(sb), "{a} vs {b}");
        // exact: E y' = 3 E[theta] E[e^{-t}] + eps/2
        assert!((a - (0.75 + 0.05)).abs() < 4.0 * sa);
    }

    #[test]
    fn different_modes_step_independently() {
        let c = reference(OverlapRegion::Full);
        let mut rng = RngStream::new(3).rng();
        let s = c.step(&CoupledState::new(Point::scalar(1.0, 1), Point::scalar(1.0, 2)), &mut rng).unwrap();
        assert_eq!(s.last_branch, Branch::Independent);
    }
}
