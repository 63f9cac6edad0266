//! Post-jump chain of a switching random dynamical system: between Poisson
//! jump times the state follows one of N semiflows, and at a jump it is
//! mapped by a randomly chosen `w_theta`, disturbed by bounded noise, and the
//! flow index is switched.

mod conditions;

pub use conditions::{
    certify, check_condition, drift_constants, CheckConfig, Condition, ConditionEntry, ConditionReport, DriftConfig,
    DriftConstants, ModeDrift,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{input, Error, Result};
use crate::kernel::{Kernel, KernelDescriptor};
use crate::rng::StreamRng;
use crate::space::{Coords, LyapunovSpec, MetricSpec, Norm, Point};

/// `S_i(t, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Semiflow {
    /// `y e^{-rate t}`
    Decay { rate: f64 },
    /// `target + (y - target) e^{-rate t}`
    Relax { rate: f64, target: Vec<f64> },
}

/// `w_theta(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpFamily {
    /// `theta y`
    Scale,
    /// `0`
    Zero,
    /// `theta y + offset`
    Affine { offset: Vec<f64> },
}

/// Density `p(y, theta)` with respect to Lebesgue measure on `[lo, hi]`.
/// Writing `u = 2 (theta - lo) / (hi - lo) - 1` and
/// `s(y) = strength tanh(||y - y_ref|| / scale)`:
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaDensity {
    Uniform,
    /// `(1 + s(y) u) / (hi - lo)`, sampled by inverting the CDF.
    StateTilt { strength: f64, scale: f64 },
    /// `(1 + s(y) cos(pi u)) / (hi - lo)`, sampled by rejection.
    Cosine { strength: f64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSpec {
    pub lo: f64,
    pub hi: f64,
    pub density: ThetaDensity,
}

/// `pi_ij(y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Switching {
    Constant { matrix: Vec<Vec<f64>> },
    /// Two modes; `pi_i2(y) = floor + (1 - 2 floor) / (1 + exp(-slope (||y - y_ref|| - center)))`.
    Logistic { floor: f64, slope: f64, center: f64 },
}

/// Law of the jump disturbance, scaled to radius `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    None,
    /// Independent `U[0, eps / sqrt(d)]` coordinates.
    UniformPositive,
    /// Uniform on the ball of radius `eps`.
    UniformBall,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSet {
    #[default]
    NonNegative,
    Unbounded,
}

/// `script_l(y) = c0 + c1 ||y||`, the bound map in the flow condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundMap {
    pub c0: f64,
    pub c1: f64,
}

/// Constants the model declares; the checkers test them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredConstants {
    pub l: f64,
    pub alpha: f64,
    pub bound_map: BoundMap,
    pub l_w: f64,
    pub l_w_star: f64,
    pub l_pi: f64,
    pub l_p: f64,
    pub delta_pi: f64,
    pub delta_p: f64,
    /// Declared finite bound for the (2+r)-moment integral at the reference point.
    pub a1_star_bound: f64,
}

fn default_max_attempts() -> usize {
    10_000
}

fn default_reference_mode() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneModelSpec {
    pub lambda: f64,
    pub dim: usize,
    pub semiflows: Vec<Semiflow>,
    pub jump: JumpFamily,
    pub theta: ThetaSpec,
    pub switching: Switching,
    pub noise: NoiseFamily,
    pub epsilon: f64,
    pub epsilon_star: f64,
    pub moment_order: f64,
    #[serde(default)]
    pub state_set: StateSet,
    pub reference_point: Vec<f64>,
    #[serde(default = "default_reference_mode")]
    pub reference_mode: u32,
    #[serde(default)]
    pub metric: MetricSpec,
    pub declared: DeclaredConstants,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

/// The canonical desk-scale instance: `Y = [0, inf)`, two decaying flows with
/// rates 1 and 2, `w_theta(y) = theta y` with `theta ~ U[0, 1]`, fair
/// switching, `U[0, eps]` noise with `eps = 0.1`, `lambda = 1`, `r = 1`.
pub fn reference_instance() -> GeneModelSpec {
    GeneModelSpec {
        lambda: 1.0,
        dim: 1,
        semiflows: vec![Semiflow::Decay { rate: 1.0 }, Semiflow::Decay { rate: 2.0 }],
        jump: JumpFamily::Scale,
        theta: ThetaSpec { lo: 0.0, hi: 1.0, density: ThetaDensity::Uniform },
        switching: Switching::Constant { matrix: vec![vec![0.5, 0.5], vec![0.5, 0.5]] },
        noise: NoiseFamily::UniformPositive,
        epsilon: 0.1,
        epsilon_star: 0.2,
        moment_order: 1.0,
        state_set: StateSet::NonNegative,
        reference_point: vec![0.0],
        reference_mode: 1,
        metric: MetricSpec::default(),
        declared: DeclaredConstants {
            l: 1.0,
            alpha: -1.0,
            bound_map: BoundMap { c0: 0.0, c1: 1.0 },
            l_w: 0.5,
            l_w_star: 0.25,
            l_pi: 0.0,
            l_p: 0.0,
            delta_pi: 1.0,
            delta_p: 0.5,
            a1_star_bound: 1.0,
        },
        max_attempts: default_max_attempts(),
    }
}

pub type Probs = SmallVec<[f64; 4]>;

/// A validated model; implements [`Kernel`] as the post-jump transition.
#[derive(Clone, Debug)]
pub struct GeneModel {
    spec: GeneModelSpec,
    lyapunov: LyapunovSpec,
}

impl GeneModel {
    pub fn new(spec: GeneModelSpec) -> Result<Self> {
        validate(&spec)?;
        let lyapunov = LyapunovSpec::new(Point::new(&spec.reference_point, spec.reference_mode), spec.metric.norm);
        Ok(Self { spec, lyapunov })
    }

    pub fn reference() -> Self {
        Self::new(reference_instance()).expect("reference instance is valid")
    }

    pub fn spec(&self) -> &GeneModelSpec {
        &self.spec
    }

    pub fn modes(&self) -> u32 {
        self.spec.semiflows.len() as u32
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn norm(&self) -> Norm {
        self.spec.metric.norm
    }

    pub fn metric(&self) -> MetricSpec {
        self.spec.metric
    }

    pub fn lyapunov(&self) -> &LyapunovSpec {
        &self.lyapunov
    }

    pub fn reference_state(&self) -> Point {
        self.lyapunov.reference.clone()
    }

    fn dist_ref(&self, y: &[f64]) -> f64 {
        self.spec.metric.norm.of_diff(y, &self.spec.reference_point)
    }

    /// `S_mode(t, y)`, mode 1-based.
    pub fn flow(&self, mode: u32, t: f64, y: &[f64]) -> Coords {
        match &self.spec.semiflows[(mode - 1) as usize] {
            Semiflow::Decay { rate } => {
                let f = (-rate * t).exp();
                y.iter().map(|v| v * f).collect()
            }
            Semiflow::Relax { rate, target } => {
                let f = (-rate * t).exp();
                y.iter().zip(target).map(|(v, c)| c + (v - c) * f).collect()
            }
        }
    }

    /// `w_theta(y)`.
    pub fn jump(&self, theta: f64, y: &[f64]) -> Coords {
        match &self.spec.jump {
            JumpFamily::Scale => y.iter().map(|v| theta * v).collect(),
            JumpFamily::Zero => y.iter().map(|_| 0.0).collect(),
            JumpFamily::Affine { offset } => y.iter().zip(offset).map(|(v, o)| theta * v + o).collect(),
        }
    }

    fn tilt(&self, y: &[f64], strength: f64, scale: f64) -> f64 {
        strength * (self.dist_ref(y) / scale).tanh()
    }

    fn u_of(&self, theta: f64) -> f64 {
        let ThetaSpec { lo, hi, .. } = self.spec.theta;
        2.0 * (theta - lo) / (hi - lo) - 1.0
    }

    /// `p(y, theta)`; zero outside `[lo, hi]`.
    pub fn density(&self, y: &[f64], theta: f64) -> f64 {
        let ThetaSpec { lo, hi, ref density } = self.spec.theta;
        if theta < lo || theta > hi {
            return 0.0;
        }
        let base = 1.0 / (hi - lo);
        match *density {
            ThetaDensity::Uniform => base,
            ThetaDensity::StateTilt { strength, scale } => base * (1.0 + self.tilt(y, strength, scale) * self.u_of(theta)),
            ThetaDensity::Cosine { strength, scale } => {
                base * (1.0 + self.tilt(y, strength, scale) * (std::f64::consts::PI * self.u_of(theta)).cos())
            }
        }
    }

    pub fn theta_interval(&self) -> (f64, f64) {
        (self.spec.theta.lo, self.spec.theta.hi)
    }

    /// Draws `theta ~ p(z, .)`.
    pub fn sample_theta(&self, z: &[f64], rng: &mut StreamRng) -> Result<f64> {
        let ThetaSpec { lo, hi, ref density } = self.spec.theta;
        let width = hi - lo;
        match *density {
            ThetaDensity::Uniform => Ok(lo + width * rng.random::<f64>()),
            ThetaDensity::StateTilt { strength, scale } => {
                let c = self.tilt(z, strength, scale);
                let uu: f64 = rng.random();
                // CDF in u on [-1, 1]: (u + 1)/2 + c (u^2 - 1)/4
                let u = if c.abs() < 1e-12 {
                    2.0 * uu - 1.0
                } else {
                    let k = 0.5 - c / 4.0 - uu;
                    let disc = (0.25 - c * k).max(0.0);
                    -2.0 * k / (0.5 + disc.sqrt())
                };
                Ok(lo + width * 0.5 * (u.clamp(-1.0, 1.0) + 1.0))
            }
            ThetaDensity::Cosine { strength, scale } => {
                let c = self.tilt(z, strength, scale);
                let envelope = 1.0 + c.abs();
                for _ in 0..self.spec.max_attempts {
                    let u = 2.0 * rng.random::<f64>() - 1.0;
                    let acc: f64 = rng.random();
                    if acc * envelope <= 1.0 + c * (std::f64::consts::PI * u).cos() {
                        return Ok(lo + width * 0.5 * (u + 1.0));
                    }
                }
                Err(Error::Sampling(format!("theta rejection sampler exceeded {} attempts", self.spec.max_attempts)))
            }
        }
    }

    /// Row `pi_{mode, .}(y)`.
    pub fn switching_probs(&self, mode: u32, y: &[f64]) -> Probs {
        match &self.spec.switching {
            Switching::Constant { matrix } => Probs::from_slice(&matrix[(mode - 1) as usize]),
            Switching::Logistic { floor, slope, center } => {
                let s = 1.0 / (1.0 + (-slope * (self.dist_ref(y) - center)).exp());
                let p2 = floor + (1.0 - 2.0 * floor) * s;
                Probs::from_slice(&[1.0 - p2, p2])
            }
        }
    }

    fn pick_mode(probs: &[f64], u: f64) -> u32 {
        let mut acc = 0.0;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j as u32 + 1;
            }
        }
        // rounding: last mode with positive probability
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1) as u32 + 1
    }

    /// Draws a mode from `pi_{mode, .}(y)`.
    pub fn sample_mode(&self, mode: u32, y: &[f64], rng: &mut StreamRng) -> u32 {
        let u: f64 = rng.random();
        Self::pick_mode(&self.switching_probs(mode, y), u)
    }

    /// Draws `h` from the noise law at radius `eps`.
    pub fn sample_noise_at(&self, eps: f64, rng: &mut StreamRng) -> Coords {
        let d = self.spec.dim;
        match self.spec.noise {
            NoiseFamily::None => Coords::from_elem(0.0, d),
            NoiseFamily::UniformPositive => {
                let s = eps / (d as f64).sqrt();
                (0..d).map(|_| s * rng.random::<f64>()).collect()
            }
            NoiseFamily::UniformBall => {
                if d == 1 {
                    return Coords::from_elem(eps * (2.0 * rng.random::<f64>() - 1.0), 1);
                }
                let mut g: Coords = (0..d)
                    .map(|_| {
                        let u1: f64 = 1.0 - rng.random::<f64>();
                        let u2: f64 = rng.random();
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let radius = eps * rng.random::<f64>().powf(1.0 / d as f64);
                g.iter_mut().for_each(|v| *v *= radius / norm);
                g
            }
        }
    }

    pub fn sample_noise(&self, rng: &mut StreamRng) -> Coords {
        self.sample_noise_at(self.spec.epsilon, rng)
    }

    /// Mean of `h`, used by the analytic drift oracle.
    pub fn noise_mean_norm(&self) -> Option<f64> {
        match (self.spec.noise, self.spec.dim) {
            (NoiseFamily::None, _) => Some(0.0),
            (NoiseFamily::UniformPositive, 1) => Some(self.spec.epsilon / 2.0),
            _ => None,
        }
    }

    pub fn in_state_set(&self, y: &[f64]) -> bool {
        match self.spec.state_set {
            StateSet::NonNegative => y.iter().all(|v| *v >= 0.0),
            StateSet::Unbounded => y.iter().all(|v| v.is_finite()),
        }
    }

    pub fn draw_holding_time(&self, rng: &mut StreamRng) -> f64 {
        let u: f64 = rng.random();
        -(1.0 - u).ln() / self.spec.lambda
    }

    /// One post-jump transition: holding time, flow, jump map, disturbance,
    /// then the new flow index.
    pub fn sample_post_jump(&self, state: &Point, rng: &mut StreamRng) -> Result<Point> {
        if state.dim() != self.spec.dim {
            return Err(Error::DimensionMismatch { left: state.dim(), right: self.spec.dim });
        }
        if state.mode == 0 || state.mode > self.modes() {
            return input(format!("mode {} outside 1..={}", state.mode, self.modes()));
        }
        let t = self.draw_holding_time(rng);
        let z = self.flow(state.mode, t, &state.y);
        let theta = self.sample_theta(&z, rng)?;
        let h = self.sample_noise(rng);
        let mut y = self.jump(theta, &z);
        y.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
        let j = self.sample_mode(state.mode, &y, rng);
        Ok(Point { y, mode: j })
    }

    /// Closed-form `a*` of the (2+r)-moment drift, when `lambda > (2+r) alpha`.
    pub fn a_star_analytic(&self) -> Option<f64> {
        let s = &self.spec;
        let q = 2.0 + s.moment_order;
        let den = s.lambda - q * s.declared.alpha;
        (den > 0.0).then(|| s.lambda * s.declared.l_w_star * s.declared.l.powf(q) / den)
    }

    /// `L L_w + alpha / lambda`; must be below one.
    pub fn balance_lhs(&self) -> f64 {
        let d = &self.spec.declared;
        d.l * d.l_w + d.alpha / self.spec.lambda
    }

    /// `L^{2+r} L_w* + (2+r) alpha / lambda`; must be below one.
    pub fn lil_condition_lhs(&self) -> f64 {
        let d = &self.spec.declared;
        let q = 2.0 + self.spec.moment_order;
        d.l.powf(q) * d.l_w_star + q * d.alpha / self.spec.lambda
    }

    /// `Theta(y1, y2)`: parameters where `w_theta` contracts by `L_w`, as an
    /// interval (possibly empty, `lo > hi`).
    pub fn contraction_interval(&self, y1: &[f64], y2: &[f64]) -> (f64, f64) {
        let (lo, hi) = self.theta_interval();
        if y1 == y2 {
            return (lo, hi);
        }
        match self.spec.jump {
            JumpFamily::Zero => (lo, hi),
            JumpFamily::Scale | JumpFamily::Affine { .. } => {
                let lw = self.spec.declared.l_w;
                (lo.max(-lw), hi.min(lw))
            }
        }
    }
}

impl Kernel for GeneModel {
    fn step(&self, x: &Point, rng: &mut StreamRng) -> Result<Point> {
        self.sample_post_jump(x, rng)
    }

    fn descriptor(&self) -> KernelDescriptor {
        let s = &self.spec;
        KernelDescriptor {
            label: "gene".into(),
            params: vec![
                ("lambda".into(), s.lambda),
                ("modes".into(), s.semiflows.len() as f64),
                ("epsilon".into(), s.epsilon),
                ("epsilon_star".into(), s.epsilon_star),
                ("r".into(), s.moment_order),
                ("mode_weight".into(), s.metric.mode_weight),
            ],
        }
    }
}

fn validate(s: &GeneModelSpec) -> Result<()> {
    if !(s.lambda > 0.0) || !s.lambda.is_finite() {
        return input(format!("lambda must be positive, got {}", s.lambda));
    }
    if s.dim == 0 {
        return input("dimension must be >= 1");
    }
    let n = s.semiflows.len();
    if n == 0 {
        return input("at least one semiflow is required");
    }
    if s.reference_point.len() != s.dim {
        return input("reference_point has the wrong dimension");
    }
    if s.reference_mode == 0 || s.reference_mode as usize > n {
        return input("reference_mode out of range");
    }
    for f in &s.semiflows {
        match f {
            Semiflow::Decay { rate } if !rate.is_finite() || *rate < 0.0 => {
                return input(format!("decay rate must be >= 0, got {rate}"))
            }
            Semiflow::Relax { rate, target } => {
                if !rate.is_finite() || *rate < 0.0 {
                    return input(format!("relax rate must be >= 0, got {rate}"));
                }
                if target.len() != s.dim {
                    return input("relax target has the wrong dimension");
                }
                if s.state_set == StateSet::NonNegative && target.iter().any(|v| *v < 0.0) {
                    return input("relax target must lie in the state set");
                }
            }
            _ => {}
        }
    }
    if let JumpFamily::Affine { offset } = &s.jump {
        if offset.len() != s.dim {
            return input("affine offset has the wrong dimension");
        }
    }
    let ThetaSpec { lo, hi, ref density } = s.theta;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return input(format!("theta interval [{lo}, {hi}] is empty or unbounded"));
    }
    match *density {
        ThetaDensity::Uniform => {}
        ThetaDensity::StateTilt { strength, scale } | ThetaDensity::Cosine { strength, scale } => {
            if !(strength.abs() < 1.0) || !(scale > 0.0) {
                return input("density needs |strength| < 1 and scale > 0");
            }
        }
    }
    match &s.switching {
        Switching::Constant { matrix } => {
            if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                return input(format!("switching matrix must be {n}x{n}"));
            }
            for (i, row) in matrix.iter().enumerate() {
                if row.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
                    return input(format!("switching row {} has entries outside [0, 1]", i + 1));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return input(format!("switching row {} sums to {total}", i + 1));
                }
            }
        }
        Switching::Logistic { floor, slope, center } => {
            if n != 2 {
                return input("logistic switching needs exactly two modes");
            }
            if !(*floor >= 0.0 && *floor <= 0.5) || !slope.is_finite() || !center.is_finite() {
                return input("logistic switching needs floor in [0, 1/2] and finite slope/center");
            }
        }
    }
    if !(s.epsilon >= 0.0) || !(s.epsilon <= s.epsilon_star) {
        return input(format!("need 0 <= epsilon <= epsilon_star, got {} and {}", s.epsilon, s.epsilon_star));
    }
    if !(s.moment_order > 0.0 && s.moment_order < 2.0) {
        return input(format!("moment order r must lie in (0, 2), got {}", s.moment_order));
    }
    s.metric.validate()?;
    let d = &s.declared;
    for (name, v) in [
        ("l", d.l),
        ("l_w", d.l_w),
        ("l_w_star", d.l_w_star),
        ("l_pi", d.l_pi),
        ("l_p", d.l_p),
        ("delta_pi", d.delta_pi),
        ("delta_p", d.delta_p),
        ("a1_star_bound", d.a1_star_bound),
        ("bound_map.c0", d.bound_map.c0),
        ("bound_map.c1", d.bound_map.c1),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return input(format!("declared constant {name} must be finite and >= 0, got {v}"));
        }
    }
    if !d.alpha.is_finite() {
        return input("declared alpha must be finite");
    }
    if s.max_attempts == 0 {
        return input("max_attempts must be >= 1");
    }
    let m = GeneModel { spec: s.clone(), lyapunov: LyapunovSpec::origin(s.dim, s.metric.norm) };
    if !m.in_state_set(&s.reference_point) {
        return input("reference point lies outside the state set");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_constants() {
        let m = GeneModel::reference();
        assert_eq!(m.balance_lhs(), -0.5);
        assert_eq!(m.lil_condition_lhs(), -2.75);
        assert_eq!(m.a_star_analytic(), Some(0.0625));
    }

    #[test]
    fn fixed_point_collapse() {
        let m = GeneModel::reference();
        let mut rng = RngStream::new(11).rng();
        let mut modes = [0usize; 2];
        for _ in 0..20_000 {
            let p = m.sample_post_jump(&Point::scalar(0.0, 1), &mut rng).unwrap();
            assert!(p.y0() >= 0.0 && p.y0() <= 0.1);
            modes[(p.mode - 1) as usize] += 1;
        }
        let frac = modes[0] as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt());
    }

    #[test]
    fn zero_jump_forgets_state() {
        let mut spec = reference_instance();
        spec.jump = JumpFamily::Zero;
        let m = GeneModel::new(spec).unwrap();
        let s = RngStream::new(5);
        let a = m.sample_post_jump(&Point::scalar(50.0, 2), &mut s.rng()).unwrap();
        let b = m.sample_post_jump(&Point::scalar(0.0, 2), &mut s.rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_mean_without_noise() {
        let mut spec = reference_instance();
        spec.epsilon = 0.0;
        let m = GeneModel::new(spec).unwrap();
        for (mode, rate) in [(1u32, 1.0), (2, 2.0)] {
            let y = 3.0;
            let s = RngStream::new(7 + mode as u64);
            let mut rng = s.rng();
            let xs: Vec<f64> =
                (0..200_000).map(|_| m.sample_post_jump(&Point::scalar(y, mode), &mut rng).unwrap().y0()).collect();
            let (mean, se) = stats::mean_stderr(&xs);
            let exact = y * 0.5 * (1.0 / (1.0 + rate));
            assert!((mean - exact).abs() < 3.0 * se, "mode {mode}: {mean} vs {exact} (se {se})");
        }
    }

    #[test]
    fn tilt_density_normalized_and_sampled() {
        let mut spec = reference_instance();
        spec.theta.density = ThetaDensity::StateTilt { strength: 0.8, scale: 1.0 };
        let m = GeneModel::new(spec).unwrap();
        let z = [2.0];
        let rule = crate::quadrature::Rule::new(16, 0.0, 1.0);
        assert_abs_diff_eq!(rule.integrate(|t| m.density(&z, t)), 1.0, epsilon = 1e-12);
        let mean_exact = rule.integrate(|t| t * m.density(&z, t));
        let mut rng = RngStream::new(3).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| m.sample_theta(&z, &mut rng).unwrap()).collect();
        let (mean, se) = stats::mean_stderr(&xs);
        assert!((mean - mean_exact).abs() < 4.0 * se);
    }

    #[test]
    fn cosine_density_sampled_by_rejection() {
        let mut spec = reference_instance();
        spec.theta.density = ThetaDensity::Cosine { strength: 0.9, scale: 0.5 };
        let m = GeneModel::new(spec).unwrap();
        let z = [3.0];
        let rule = crate::quadrature::Rule::new(32, 0.0, 1.0);
        assert_abs_diff_eq!(rule.integrate(|t| m.density(&z, t)), 1.0, epsilon = 1e-12);
        let m2 = rule.integrate(|t| t * t * m.density(&z, t));
        let mut rng = RngStream::new(4).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| m.sample_theta(&z, &mut rng).unwrap().powi(2)).collect();
        let (mean, se) = stats::mean_stderr(&xs);
        assert!((mean - m2).abs() < 4.0 * se);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = reference_instance();
        s.switching = Switching::Constant { matrix: vec![vec![0.5, 0.6], vec![0.5, 0.5]] };
        assert!(GeneModel::new(s).is_err());
        let mut s = reference_instance();
        s.epsilon = 0.3;
        assert!(GeneModel::new(s).is_err());
        let mut s = reference_instance();
        s.lambda = 0.0;
        assert!(GeneModel::new(s).is_err());
        let mut s = reference_instance();
        s.moment_order = 2.0;
        assert!(GeneModel::new(s).is_err());
    }

    #[test]
    fn spec_round_trips_through_serde() {
        let s = reference_instance();
        let j = serde_json::to_string(&s).unwrap();
        let back: GeneModelSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(s, back);
    }
}
