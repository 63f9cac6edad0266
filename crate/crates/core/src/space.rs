//! State space X = Y x I, the metric rho_c, Lyapunov functions and
//! bounded-Lipschitz test functions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{input, Error, Result};

pub type Coords = SmallVec<[f64; 2]>;

/// A state `(y, mode)`; modes are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub y: Coords,
    pub mode: u32,
}

impl Point {
    pub fn new(y: &[f64], mode: u32) -> Self {
        Self { y: Coords::from_slice(y), mode }
    }

    pub fn scalar(y: f64, mode: u32) -> Self {
        let mut c = Coords::new();
        c.push(y);
        Self { y: c, mode }
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// First coordinate; most reference models are one-dimensional.
    pub fn y0(&self) -> f64 {
        self.y[0]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    Euclidean,
    Max,
}

impl Norm {
    #[inline]
    pub fn of_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        if a.len() == 1 {
            return (a[0] - b[0]).abs();
        }
        match self {
            Norm::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Norm::Max => a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs())),
        }
    }

    pub fn of(&self, a: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => a.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Max => a.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
        }
    }
}

/// The coupled metric `||y1 - y2|| + mode_weight * [i != j]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    #[serde(default = "default_mode_weight")]
    pub mode_weight: f64,
    #[serde(default)]
    pub norm: Norm,
}

fn default_mode_weight() -> f64 {
    1.0
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self { mode_weight: 1.0, norm: Norm::Euclidean }
    }
}

impl MetricSpec {
    pub fn new(mode_weight: f64, norm: Norm) -> Result<Self> {
        let m = Self { mode_weight, norm };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mode_weight >= 0.0) || !self.mode_weight.is_finite() {
            return input(format!("mode_weight must be finite and >= 0, got {}", self.mode_weight));
        }
        Ok(())
    }

    /// Distance without the dimension check.
    #[inline]
    pub fn dist(&self, p: &Point, q: &Point) -> f64 {
        let d = self.norm.of_diff(&p.y, &q.y);
        if p.mode != q.mode {
            d + self.mode_weight
        } else {
            d
        }
    }
}

pub fn rho_c(p: &Point, q: &Point, m: &MetricSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { left: p.dim(), right: q.dim() });
    }
    Ok(m.dist(p, q))
}

type Evaluator = dyn Fn(&Point) -> f64 + Send + Sync;

/// A real function on X with declared Lipschitz and sup bounds.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    eval: Arc<Evaluator>,
    lip_bound: f64,
    sup_bound: f64,
    constant: Option<f64>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("lip_bound", &self.lip_bound)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl TestFunction {
    pub fn new(
        label: impl Into<String>,
        lip_bound: f64,
        sup_bound: f64,
        f: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lip_bound >= 0.0) || !(sup_bound >= 0.0) {
            return input(format!("declared bounds must be >= 0, got lip={lip_bound}, sup={sup_bound}"));
        }
        Ok(Self { label: label.into(), eval: Arc::new(f), lip_bound, sup_bound, constant: None })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            label: format!("const({c})"),
            eval: Arc::new(move |_| c),
            lip_bound: 0.0,
            sup_bound: c.abs(),
            constant: Some(c),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `g(y, i) = y[idx]`; unbounded.
    pub fn coordinate(idx: usize) -> Self {
        Self {
            label: format!("y{idx}"),
            eval: Arc::new(move |p| p.y[idx]),
            lip_bound: 1.0,
            sup_bound: f64::INFINITY,
            constant: None,
        }
    }

    /// `g(y, i) = clamp(y[idx], lo, hi)`.
    pub fn clamped_coordinate(idx: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return input(format!("clamp bounds out of order: {lo} > {hi}"));
        }
        Self::new(format!("clamp(y{idx},{lo},{hi})"), 1.0, lo.abs().max(hi.abs()), move |p| {
            p.y[idx].clamp(lo, hi)
        })
    }

    /// `g(y, i) = [i == mode]`. Lipschitz in rho_c only when mode_weight > 0.
    pub fn mode_indicator(mode: u32, metric: &MetricSpec) -> Self {
        let lip = if metric.mode_weight > 0.0 { 1.0 / metric.mode_weight } else { f64::INFINITY };
        Self {
            label: format!("mode=={mode}"),
            eval: Arc::new(move |p| if p.mode == mode { 1.0 } else { 0.0 }),
            lip_bound: lip,
            sup_bound: 1.0,
            constant: None,
        }
    }

    #[inline]
    pub fn eval(&self, p: &Point) -> f64 {
        (self.eval)(p)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lip_bound(&self) -> f64 {
        self.lip_bound
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    pub fn is_zero(&self) -> bool {
        self.constant == Some(0.0)
    }

    /// `g - c`.
    pub fn shifted(&self, c: f64) -> Self {
        let label = format!("{}-({})", self.label, c);
        if let Some(k) = self.constant {
            let mut out = Self::constant(k - c);
            out.label = label;
            return out;
        }
        let inner = self.eval.clone();
        Self {
            label,
            eval: Arc::new(move |p| inner(p) - c),
            lip_bound: self.lip_bound,
            sup_bound: self.sup_bound + c.abs(),
            constant: None,
        }
    }

    /// `s * g`.
    pub fn scaled(&self, s: f64) -> Self {
        if let Some(k) = self.constant {
            return Self::constant(k * s);
        }
        let inner = self.eval.clone();
        Self {
            label: format!("{}*{}", s, self.label),
            eval: Arc::new(move |p| s * inner(p)),
            lip_bound: self.lip_bound * s.abs(),
            sup_bound: self.sup_bound * s.abs(),
            constant: None,
        }
    }

    /// Checks the declared bounds on every pair of the given points.
    pub fn certify(&self, points: &[Point], metric: &MetricSpec) -> BoundCheck {
        let vals: Vec<f64> = points.iter().map(|p| self.eval(p)).collect();
        let mut chk = BoundCheck { pairs: 0, max_lip_ratio: 0.0, max_abs: 0.0, violations: 0 };
        let tol = 1e-12;
        for (i, p) in points.iter().enumerate() {
            chk.max_abs = chk.max_abs.max(vals[i].abs());
            if vals[i].abs() > self.sup_bound * (1.0 + tol) + tol {
                chk.violations += 1;
            }
            for (j, q) in points.iter().enumerate().skip(i + 1) {
                let d = metric.dist(p, q);
                let diff = (vals[i] - vals[j]).abs();
                chk.pairs += 1;
                if d > 0.0 {
                    chk.max_lip_ratio = chk.max_lip_ratio.max(diff / d);
                }
                if diff > self.lip_bound * d * (1.0 + tol) + tol {
                    chk.violations += 1;
                }
            }
        }
        chk
    }
}

/// `max(|g|_Lip, ||g||_inf)`.
pub fn bl_norm(f: &TestFunction) -> f64 {
    f.lip_bound.max(f.sup_bound)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub pairs: usize,
    pub max_lip_ratio: f64,
    pub max_abs: f64,
    pub violations: usize,
}

/// `V(y, i) = ||y - y_ref||`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub reference: Point,
    pub norm: Norm,
}

impl LyapunovSpec {
    pub fn new(reference: Point, norm: Norm) -> Self {
        Self { reference, norm }
    }

    /// `V(y, i) = ||y||` in dimension `d`, reference mode 1.
    pub fn origin(d: usize, norm: Norm) -> Self {
        Self { reference: Point::new(&vec![0.0; d], 1), norm }
    }

    #[inline]
    pub fn eval(&self, p: &Point) -> f64 {
        self.norm.of_diff(&p.y, &self.reference.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rho_examples() {
        let m1 = MetricSpec::default();
        let m2 = MetricSpec::new(2.0, Norm::Euclidean).unwrap();
        let p = Point::scalar(0.0, 1);
        assert_eq!(rho_c(&p, &p, &m1).unwrap(), 0.0);
        assert_eq!(rho_c(&p, &Point::scalar(3.0, 1), &m1).unwrap(), 3.0);
        assert_eq!(rho_c(&p, &Point::scalar(3.0, 2), &m2).unwrap(), 5.0);
    }

    #[test]
    fn rho_dimension_mismatch() {
        let m = MetricSpec::default();
        let r = rho_c(&Point::scalar(0.0, 1), &Point::new(&[0.0, 1.0], 1), &m);
        assert!(matches!(r, Err(Error::DimensionMismatch { left: 1, right: 2 })));
    }

    #[test]
    fn negative_mode_weight_rejected() {
        assert!(MetricSpec::new(-1.0, Norm::Max).is_err());
    }

    #[test]
    fn bl_norm_examples() {
        let f = TestFunction::new("a", 0.5, 2.0, |_| 0.0).unwrap();
        assert_eq!(bl_norm(&f), 2.0);
        assert_eq!(bl_norm(&TestFunction::zero()), 0.0);
        let g = TestFunction::new("b", 3.0, 1.0, |_| 0.0).unwrap();
        assert_eq!(bl_norm(&g), 3.0);
        assert!(TestFunction::new("c", -1.0, 1.0, |_| 0.0).is_err());
        assert!(TestFunction::new("d", 1.0, -1.0, |_| 0.0).is_err());
    }

    #[test]
    fn max_norm() {
        let m = MetricSpec::new(0.0, Norm::Max).unwrap();
        assert_eq!(m.dist(&Point::new(&[0.0, 0.0], 1), &Point::new(&[1.0, -3.0], 2)), 3.0);
    }

    fn point2() -> impl Strategy<Value = Point> {
        (prop::collection::vec(-10.0..10.0f64, 2), 1u32..=3).prop_map(|(y, m)| Point::new(&y, m))
    }

    fn metric() -> impl Strategy<Value = MetricSpec> {
        (0.0..5.0f64, prop::bool::ANY).prop_map(|(w, e)| MetricSpec {
            mode_weight: w,
            norm: if e { Norm::Euclidean } else { Norm::Max },
        })
    }

    proptest! {
        #[test]
        fn triangle_inequality(p in point2(), q in point2(), r in point2(), m in metric()) {
            let pq = m.dist(&p, &q);
            let qr = m.dist(&q, &r);
            let pr = m.dist(&p, &r);
            prop_assert!(pr <= pq + qr + 1e-12);
        }

        #[test]
        fn symmetric_and_zero_on_diagonal(p in point2(), q in point2(), m in metric()) {
            prop_assert_eq!(m.dist(&p, &q), m.dist(&q, &p));
            prop_assert_eq!(m.dist(&p, &p), 0.0);
        }

        #[test]
        fn lyapunov_below_metric(p in point2(), m in metric()) {
            let v = LyapunovSpec::new(Point::new(&[0.0, 0.0], 1), m.norm);
            let d = m.dist(&p, &v.reference);
            prop_assert!(v.eval(&p) <= d + 1e-12);
            if p.mode == 1 {
                prop_assert!((v.eval(&p) - d).abs() < 1e-12);
            }
        }

        #[test]
        fn declared_bounds_hold(pts in prop::collection::vec(point2(), 2..20), m in metric()) {
            let g = TestFunction::clamped_coordinate(0, -1.0, 1.0).unwrap();
            prop_assert_eq!(g.certify(&pts, &m).violations, 0);
            if m.mode_weight > 0.0 {
                let h = TestFunction::mode_indicator(2, &m);
                prop_assert_eq!(h.certify(&pts, &m).violations, 0);
            }
        }
    }
}
