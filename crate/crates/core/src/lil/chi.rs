//! Centering and the corrector `chi(gbar) = sum_i U^i gbar` with a certified
//! geometric tail.

use serde::{Deserialize, Serialize};

use crate::ergodicity::DecayFit;
use crate::error::{input, Error, Result};
use crate::kernel::{par_map_streams, EmpiricalMeasure, Kernel};
use crate::rng::{RngStream, StreamRng};
use crate::space::{bl_norm, MetricSpec, Point, TestFunction};
use crate::stats::{self, Estimate, NeumaierSum};

/// `gbar = g - <g, mu>` with the centering estimate.
#[derive(Clone, Debug)]
pub struct CenteredG {
    pub gbar: TestFunction,
    pub mean: Estimate,
}

/// Centers `g` against `mu`; the confidence interval uses batch means over
/// the atoms in their stored order (they usually come from one trajectory).
pub fn center_g(g: &TestFunction, mu: &EmpiricalMeasure, level: f64) -> Result<CenteredG> {
    if mu.is_empty() {
        return input("cannot center against an empty measure");
    }
    if let Some(c) = g.as_constant() {
        return Ok(CenteredG { gbar: TestFunction::zero(), mean: Estimate::exact(c) });
    }
    let mean = mu.integrate(|p| g.eval(p));
    let vals: Vec<f64> = mu.atoms().iter().map(|p| g.eval(p)).collect();
    let se = if vals.len() >= 40 { stats::batch_means_stderr(&vals, 20) } else { 0.0 };
    Ok(CenteredG { gbar: g.shifted(mean), mean: Estimate::normal(mean, se, level) })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seminorm {
    /// `||g||_BL`, the norm the decay of `d_FM` controls.
    #[default]
    BoundedLipschitz,
    /// `|g|_Lip` alone, for Wasserstein-type contraction of unbounded `g`.
    Lipschitz,
}

/// `|U^i gbar(x)| <= c~ ||gbar|| q^i (1 + rho(x, x_ref))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub c_tilde: f64,
    pub q: f64,
    pub seminorm: Seminorm,
    pub reference: Point,
    pub metric: MetricSpec,
}

impl TailParams {
    pub fn new(c_tilde: f64, q: f64, seminorm: Seminorm, reference: Point, metric: MetricSpec) -> Result<Self> {
        if !(c_tilde >= 0.0) || !c_tilde.is_finite() {
            return input(format!("c~ must be finite and >= 0, got {c_tilde}"));
        }
        if !(0.0..1.0).contains(&q) {
            return input(format!("q must lie in [0, 1), got {q}"));
        }
        Ok(Self { c_tilde, q, seminorm, reference, metric })
    }

    /// From a decay fit of `d_FM(P^n delta_x, P^n delta_y) <= c q^n (1 + V(x) + V(y))`:
    /// `c = exp(log c) / (1 + v_start_sum)`, `c~ = c (1 + <V, mu*>)`, and `q`
    /// is the upper confidence limit.
    pub fn from_decay(
        fit: &DecayFit,
        v_start_sum: f64,
        v_invariant_mean: f64,
        reference: Point,
        metric: MetricSpec,
    ) -> Result<Self> {
        if !fit.contracts() {
            return Err(Error::Certification(format!(
                "decay fit does not certify q < 1 (q upper {}, status {:?})",
                fit.q.hi, fit.status
            )));
        }
        let c = fit.log_c.exp() / (1.0 + v_start_sum);
        Self::new(c * (1.0 + v_invariant_mean), fit.q.hi, Seminorm::BoundedLipschitz, reference, metric)
    }

    pub fn norm_of(&self, g: &TestFunction) -> f64 {
        match self.seminorm {
            Seminorm::BoundedLipschitz => bl_norm(g),
            Seminorm::Lipschitz => g.lip_bound(),
        }
    }

    /// Bound on `sum_{i > n} |U^i gbar(x)|`.
    pub fn bound(&self, gbar: &TestFunction, x: &Point, n: usize) -> f64 {
        if gbar.is_zero() {
            return 0.0;
        }
        let norm = self.norm_of(gbar);
        if !norm.is_finite() {
            return f64::INFINITY;
        }
        let w = 1.0 + self.metric.dist(x, &self.reference);
        self.c_tilde * norm * self.q.powi(n as i32 + 1) / (1.0 - self.q) * w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiValue {
    pub value: f64,
    pub stderr: f64,
    pub tail_bound: f64,
    /// Linear-interpolation error estimate when the value comes from a table.
    pub interp_bound: f64,
}

impl ChiValue {
    fn exact(value: f64, tail_bound: f64) -> Self {
        Self { value, stderr: 0.0, tail_bound, interp_bound: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChiConfig {
    /// Fixed truncation; chosen from the tail bound when unset.
    pub truncation: Option<usize>,
    pub max_truncation: usize,
    /// Absolute tail tolerance; `1e-3` times the spread of `gbar` under the
    /// hint measure when unset.
    pub tail_tol: Option<f64>,
    pub inner_samples: usize,
    pub table_points: usize,
    /// Largest `N` evaluated by exact recursion on kernels that integrate
    /// exactly.
    pub exact_depth: usize,
}

impl Default for ChiConfig {
    fn default() -> Self {
        Self {
            truncation: None,
            max_truncation: 400,
            tail_tol: None,
            inner_samples: 4000,
            table_points: 129,
            exact_depth: 4,
        }
    }
}

/// Nested Monte-Carlo `sum_{i=0}^{n} U^i gbar(x)`: average of
/// `sum_i gbar(phi_i)` over `samples` trajectories from `x`. Trajectory `r`
/// uses substream `r`, so evaluations at different `x` share randomness.
pub fn chi_mc(
    k: &dyn Kernel,
    gbar: &TestFunction,
    x: &Point,
    n: usize,
    samples: usize,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return input("chi evaluation needs at least two inner samples");
    }
    let g0 = gbar.eval(x);
    if n == 0 {
        return Ok((g0, 0.0));
    }
    let mut vals = Vec::with_capacity(samples);
    for r in 0..samples {
        let mut rng = stream.substream(r as u64).rng();
        vals.push(g0 + path_sum(k, gbar, x, n, &mut rng)?);
    }
    Ok(stats::mean_stderr(&vals))
}

fn path_sum(k: &dyn Kernel, gbar: &TestFunction, x: &Point, n: usize, rng: &mut StreamRng) -> Result<f64> {
    let mut acc = NeumaierSum::new();
    let mut y = x.clone();
    for _ in 0..n {
        y = k.step(&y, rng)?;
        acc.add(gbar.eval(&y));
    }
    Ok(acc.value())
}

/// `sum_{i=0}^{n} U^i gbar(x)` by exact recursion; `None` if the kernel does
/// not integrate exactly.
fn chi_exact(k: &dyn Kernel, gbar: &TestFunction, x: &Point, n: usize) -> Option<f64> {
    fn power(k: &dyn Kernel, gbar: &TestFunction, x: &Point, i: usize) -> Option<f64> {
        if i == 0 {
            return Some(gbar.eval(x));
        }
        let v = k.expectation_exact(&|y: &Point| power(k, gbar, y, i - 1).unwrap_or(f64::NAN), x)?;
        (!v.is_nan()).then_some(v)
    }
    k.expectation_exact(&|_| 0.0, x)?;
    let mut acc = NeumaierSum::new();
    for i in 0..=n {
        acc.add(power(k, gbar, x, i)?);
    }
    Some(acc.value())
}

const EXACT_DEPTH_LIMIT: usize = 6;

/// The `chi_eval` operation: truncated corrector at `x` with Monte-Carlo
/// error and the tail bound at `n`.
pub fn chi_eval(
    k: &dyn Kernel,
    gbar: &TestFunction,
    x: &Point,
    n: usize,
    inner_samples: usize,
    tail: &TailParams,
    stream: &RngStream,
) -> Result<ChiValue> {
    if gbar.is_zero() {
        return Ok(ChiValue::exact(0.0, 0.0));
    }
    let tb = tail.bound(gbar, x, n);
    if n <= EXACT_DEPTH_LIMIT {
        if let Some(v) = chi_exact(k, gbar, x, n) {
            return Ok(ChiValue::exact(v, tb));
        }
    }
    let (value, stderr) = chi_mc(k, gbar, x, n, inner_samples, stream)?;
    Ok(ChiValue { value, stderr, tail_bound: tb, interp_bound: 0.0 })
}

/// Smallest `N <= max_n` whose tail bound at every hint point is below `tol`.
pub fn choose_truncation(
    tail: &TailParams,
    gbar: &TestFunction,
    hint: &[Point],
    tol: f64,
    max_n: usize,
) -> Result<usize> {
    if gbar.is_zero() {
        return Ok(0);
    }
    let worst = hint.iter().max_by(|a, b| {
        tail.metric.dist(a, &tail.reference).total_cmp(&tail.metric.dist(b, &tail.reference))
    });
    let x = worst.cloned().unwrap_or_else(|| tail.reference.clone());
    for n in 0..=max_n {
        if tail.bound(gbar, &x, n) <= tol {
            return Ok(n);
        }
    }
    Err(Error::Truncation { tail: tail.bound(gbar, &x, max_n), tol, n: max_n })
}

#[derive(Clone, Debug)]
struct ModeTable {
    mode: u32,
    lo: f64,
    step: f64,
    values: Vec<f64>,
    stderr: Vec<f64>,
    curvature: Vec<f64>,
}

impl ModeTable {
    fn eval(&self, y: f64) -> (f64, f64, f64) {
        let m = self.values.len();
        let pos = (y - self.lo) / self.step;
        let j = if pos.is_nan() { 0 } else { (pos.floor().max(0.0) as usize).min(m - 2) };
        let w = pos - j as f64;
        let v = self.values[j] + w * (self.values[j + 1] - self.values[j]);
        let se = self.stderr[j].max(self.stderr[j + 1]);
        let inside = (0.0..=1.0).contains(&w);
        let c = self.curvature[j].max(self.curvature[j + 1]);
        let interp = if inside { c / 8.0 } else { c / 8.0 * (1.0 + w.abs()).powi(2) };
        (v, se, interp)
    }
}

#[derive(Clone, Debug)]
enum Repr {
    Zero,
    Exact,
    Table(Vec<ModeTable>),
    Direct,
}

/// A corrector ready for repeated evaluation along trajectories.
///
/// One-dimensional states use a per-mode table on an equispaced grid covering
/// the hint points, filled with common random numbers and read by linear
/// interpolation. Higher dimensions evaluate by Monte-Carlo at each call with
/// a fixed stream. Kernels that integrate exactly skip both.
#[derive(Clone)]
pub struct ChiApprox<'k> {
    kernel: &'k dyn Kernel,
    gbar: TestFunction,
    pub mean: Estimate,
    pub truncation: usize,
    pub inner_samples: usize,
    pub tail: TailParams,
    pub tail_tol: f64,
    repr: Repr,
    stream: RngStream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSummary {
    pub truncation: usize,
    pub inner_samples: usize,
    pub c_tilde: f64,
    pub q: f64,
    pub tail_tol: f64,
    pub representation: String,
    pub table_points: usize,
    pub max_table_stderr: f64,
}

impl std::fmt::Debug for ChiApprox<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChiApprox")
            .field("kernel", &self.kernel.descriptor())
            .field("gbar", &self.gbar)
            .field("truncation", &self.truncation)
            .field("repr", &self.repr)
            .finish()
    }
}

impl<'k> ChiApprox<'k> {
    pub fn build(
        kernel: &'k dyn Kernel,
        centered: &CenteredG,
        tail: TailParams,
        hint: &[Point],
        cfg: &ChiConfig,
        stream: &RngStream,
    ) -> Result<Self> {
        let gbar = centered.gbar.clone();
        let mut out = Self {
            kernel,
            gbar: gbar.clone(),
            mean: centered.mean,
            truncation: 0,
            inner_samples: cfg.inner_samples,
            tail,
            tail_tol: 0.0,
            repr: Repr::Zero,
            stream: stream.fork("chi"),
        };
        if gbar.is_zero() {
            return Ok(out);
        }
        if hint.is_empty() {
            return input("chi needs hint points covering the trajectories");
        }
        let tol = match cfg.tail_tol {
            Some(t) if t > 0.0 => t,
            Some(t) => return input(format!("tail tolerance must be positive, got {t}")),
            None => {
                let vals: Vec<f64> = hint.iter().map(|p| gbar.eval(p)).collect();
                let spread = stats::variance(&vals).sqrt();
                let scale = if spread > 0.0 { spread } else { vals.iter().fold(0.0f64, |m, v| m.max(v.abs())) };
                1e-3 * scale.max(f64::MIN_POSITIVE)
            }
        };
        out.tail_tol = tol;
        out.truncation = match cfg.truncation {
            Some(n) => n,
            None => choose_truncation(&out.tail, &gbar, hint, tol, cfg.max_truncation)?,
        };
        let n = out.truncation;
        if n <= cfg.exact_depth && chi_exact(kernel, &gbar, &hint[0], 0).is_some() {
            out.repr = Repr::Exact;
            return Ok(out);
        }
        if hint[0].dim() != 1 {
            out.repr = Repr::Direct;
            return Ok(out);
        }
        let mut modes: Vec<u32> = hint.iter().map(|p| p.mode).collect();
        modes.sort_unstable();
        modes.dedup();
        let pts = cfg.table_points.max(3);
        let mut tables = Vec::with_capacity(modes.len());
        for &mode in &modes {
            let ys: Vec<f64> = hint.iter().filter(|p| p.mode == mode).map(|p| p.y0()).collect();
            let (mut lo, mut hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(*y), b.max(*y)));
            let pad = 0.1 * (hi - lo).max(1e-3);
            lo = if lo >= 0.0 { (lo - pad).max(0.0) } else { lo - pad };
            hi += pad;
            let step = (hi - lo) / (pts - 1) as f64;
            let s = &out.stream;
            let g = &gbar;
            let evals = par_map_streams(pts, s, |j, _| {
                let x = Point::scalar(lo + j as f64 * step, mode);
                chi_mc(kernel, g, &x, n, cfg.inner_samples, s)
            })?;
            let values: Vec<f64> = evals.iter().map(|e| e.0).collect();
            let stderr: Vec<f64> = evals.iter().map(|e| e.1).collect();
            let mut curvature = vec![0.0; pts];
            for j in 1..pts - 1 {
                curvature[j] = (values[j - 1] - 2.0 * values[j] + values[j + 1]).abs();
            }
            curvature[0] = curvature[1];
            curvature[pts - 1] = curvature[pts - 2];
            tables.push(ModeTable { mode, lo, step, values, stderr, curvature });
        }
        out.repr = Repr::Table(tables);
        Ok(out)
    }

    pub fn gbar(&self) -> &TestFunction {
        &self.gbar
    }

    pub fn kernel(&self) -> &'k dyn Kernel {
        self.kernel
    }

    pub fn eval(&self, x: &Point) -> Result<ChiValue> {
        match &self.repr {
            Repr::Zero => Ok(ChiValue::exact(0.0, 0.0)),
            Repr::Exact => {
                let v = chi_exact(self.kernel, &self.gbar, x, self.truncation)
                    .ok_or_else(|| Error::Input("kernel stopped integrating exactly".into()))?;
                Ok(ChiValue::exact(v, self.tail.bound(&self.gbar, x, self.truncation)))
            }
            Repr::Table(tables) => {
                let t = tables.iter().find(|t| t.mode == x.mode).ok_or_else(|| {
                    Error::Input(format!("mode {} was not seen when the chi table was built", x.mode))
                })?;
                let (value, stderr, interp_bound) = t.eval(x.y0());
                Ok(ChiValue { value, stderr, tail_bound: self.tail.bound(&self.gbar, x, self.truncation), interp_bound })
            }
            Repr::Direct => self.eval_direct(x, self.inner_samples, &self.stream),
        }
    }

    /// Direct Monte-Carlo evaluation, bypassing any table.
    pub fn eval_direct(&self, x: &Point, samples: usize, stream: &RngStream) -> Result<ChiValue> {
        chi_eval(self.kernel, &self.gbar, x, self.truncation, samples, &self.tail, stream)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.repr, Repr::Zero | Repr::Exact)
    }

    pub fn max_table_stderr(&self) -> f64 {
        match &self.repr {
            Repr::Table(t) => t.iter().flat_map(|m| m.stderr.iter()).fold(0.0f64, |a, b| a.max(*b)),
            _ => 0.0,
        }
    }

    pub fn summary(&self) -> ChiSummary {
        let (representation, table_points) = match &self.repr {
            Repr::Zero => ("zero", 0),
            Repr::Exact => ("exact", 0),
            Repr::Table(t) => ("table", t.first().map_or(0, |m| m.values.len())),
            Repr::Direct => ("direct", 0),
        };
        ChiSummary {
            truncation: self.truncation,
            inner_samples: self.inner_samples,
            c_tilde: self.tail.c_tilde,
            q: self.tail.q,
            tail_tol: self.tail_tol,
            representation: representation.into(),
            table_points,
            max_table_stderr: self.max_table_stderr(),
        }
    }
}
