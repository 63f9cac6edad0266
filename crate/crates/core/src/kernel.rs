//! Markov kernels, trajectories, pushforwards of empirical measures and the
//! Monte-Carlo dual operator.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::rng::{RngStream, StreamRng};
use crate::space::{Point, TestFunction};
use crate::stats::{self, NeumaierSum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDescriptor {
    pub label: String,
    pub params: Vec<(String, f64)>,
}

/// A transition law `Pi(x, .)` given by a sampler.
pub trait Kernel: Send + Sync {
    fn step(&self, x: &Point, rng: &mut StreamRng) -> Result<Point>;
    fn descriptor(&self) -> KernelDescriptor;

    /// `E f(phi_1)` from `x` when the kernel can integrate exactly.
    fn expectation_exact(&self, _f: &dyn Fn(&Point) -> f64, _x: &Point) -> Option<f64> {
        None
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn step(&self, x: &Point, rng: &mut StreamRng) -> Result<Point> {
        (**self).step(x, rng)
    }
    fn descriptor(&self) -> KernelDescriptor {
        (**self).descriptor()
    }
    fn expectation_exact(&self, f: &dyn Fn(&Point) -> f64, x: &Point) -> Option<f64> {
        (**self).expectation_exact(f, x)
    }
}

impl<K: Kernel + ?Sized> Kernel for Box<K> {
    fn step(&self, x: &Point, rng: &mut StreamRng) -> Result<Point> {
        (**self).step(x, rng)
    }
    fn descriptor(&self) -> KernelDescriptor {
        (**self).descriptor()
    }
    fn expectation_exact(&self, f: &dyn Fn(&Point) -> f64, x: &Point) -> Option<f64> {
        (**self).expectation_exact(f, x)
    }
}

/// Weighted atoms summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<Point>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return input("empirical measure needs at least one atom");
        }
        if atoms.len() != weights.len() {
            return input(format!("{} atoms but {} weights", atoms.len(), weights.len()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return input("weights must be finite and nonnegative");
        }
        let d = atoms[0].dim();
        if atoms.iter().any(|a| a.dim() != d) {
            return input("atoms have mixed dimensions");
        }
        let total = stats::sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return input(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self { atoms, weights })
    }

    /// Rescales arbitrary nonnegative weights to total mass one.
    pub fn normalized(atoms: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let total = stats::sum(weights.iter().copied());
        if !(total > 0.0) {
            return input("total weight must be positive");
        }
        let w = weights.iter().map(|x| x / total).collect();
        Self::new(atoms, w)
    }

    pub fn uniform(atoms: Vec<Point>) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return input("empirical measure needs at least one atom");
        }
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn dirac(p: Point) -> Self {
        Self { atoms: vec![p], weights: vec![1.0] }
    }

    pub fn atoms(&self) -> &[Point] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    /// `<f, mu>`.
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        let mut s = NeumaierSum::new();
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            s.add(w * f(a));
        }
        s.value()
    }

    /// Mean and standard error of `f` under the measure, treating the atoms as
    /// an equally weighted iid sample when the weights are uniform.
    pub fn mean_stderr(&self, f: impl Fn(&Point) -> f64) -> (f64, f64) {
        let m = self.integrate(&f);
        let var = self.integrate(|p| (f(p) - m).powi(2));
        let n_eff = 1.0 / stats::sum(self.weights.iter().map(|w| w * w));
        (m, (var / (n_eff - 1.0).max(1.0)).sqrt())
    }

    /// Merges atoms that are bit-identical.
    pub fn compacted(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.atoms.len()).collect();
        let key = |p: &Point| (p.mode, p.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        idx.sort_by(|&a, &b| key(&self.atoms[a]).cmp(&key(&self.atoms[b])));
        let mut atoms: Vec<Point> = Vec::new();
        let mut weights: Vec<NeumaierSum> = Vec::new();
        for i in idx {
            let p = &self.atoms[i];
            if atoms.last().is_some_and(|q| q == p) {
                weights.last_mut().unwrap().add(self.weights[i]);
            } else {
                atoms.push(p.clone());
                let mut s = NeumaierSum::new();
                s.add(self.weights[i]);
                weights.push(s);
            }
        }
        Self { atoms, weights: weights.iter().map(|s| s.value()).collect() }
    }

    /// Systematic (stratified) resampling down to `m` equally weighted atoms.
    pub fn resample_stratified(&self, m: usize, rng: &mut StreamRng) -> Result<Self> {
        if m == 0 {
            return input("resample size must be positive");
        }
        let u0: f64 = rng.random::<f64>() / m as f64;
        let mut out = Vec::with_capacity(m);
        let mut cum = self.weights[0];
        let mut j = 0;
        for k in 0..m {
            let u = u0 + k as f64 / m as f64;
            while u > cum && j + 1 < self.atoms.len() {
                j += 1;
                cum += self.weights[j];
            }
            out.push(self.atoms[j].clone());
        }
        Self::uniform(out)
    }

    /// Renormalizes after floating-point drift.
    pub(crate) fn from_parts_unchecked(atoms: Vec<Point>, weights: Vec<f64>) -> Self {
        Self { atoms, weights }
    }
}

/// Runs `f(i, rng_i)` for `i in 0..n` in parallel on substreams of `stream`
/// and returns the results in index order.
pub fn par_map_streams<T, F>(n: usize, stream: &RngStream, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut StreamRng) -> Result<T> + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.substream(i as u64).rng();
            f(i, &mut rng)
        })
        .collect()
}

pub fn simulate_rng(k: &dyn Kernel, start: &Point, n: usize, rng: &mut StreamRng) -> Result<Vec<Point>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(start.clone());
    for t in 0..n {
        let next = k.step(&out[t], rng)?;
        out.push(next);
    }
    Ok(out)
}

/// Trajectory `phi_0 = start, ..., phi_n`.
pub fn simulate(k: &dyn Kernel, start: &Point, n: usize, stream: &RngStream) -> Result<Vec<Point>> {
    simulate_rng(k, start, n, &mut stream.rng())
}

/// Walks a trajectory without storing it, calling `visit(t, phi_t)` for
/// `t = 0..=n`.
pub fn walk(
    k: &dyn Kernel,
    start: &Point,
    n: usize,
    rng: &mut StreamRng,
    mut visit: impl FnMut(usize, &Point),
) -> Result<Point> {
    let mut x = start.clone();
    visit(0, &x);
    for t in 1..=n {
        x = k.step(&x, rng)?;
        visit(t, &x);
    }
    Ok(x)
}

pub const DEFAULT_ATOM_BUDGET: usize = 100_000;

/// Empirical `P^n mu`: `fanout` independent `n`-step trajectories from each
/// atom. Trajectory `r` of atom `j` uses substream `j * fanout + r`, so two
/// pushes with the same stream share randomness atom by atom.
pub fn n_step_push(
    k: &dyn Kernel,
    mu: &EmpiricalMeasure,
    n: usize,
    fanout: usize,
    stream: &RngStream,
    atom_budget: usize,
) -> Result<EmpiricalMeasure> {
    if mu.is_empty() {
        return input("cannot push an empty measure");
    }
    if fanout == 0 {
        return input("fanout must be >= 1");
    }
    if n == 0 {
        return Ok(mu.clone());
    }
    let total = mu.len() * fanout;
    let ends = par_map_streams(total, stream, |idx, rng| {
        let start = &mu.atoms[idx / fanout];
        let mut x = start.clone();
        for _ in 0..n {
            x = k.step(&x, rng)?;
        }
        Ok(x)
    })?;
    let weights: Vec<f64> = (0..total).map(|idx| mu.weights[idx / fanout] / fanout as f64).collect();
    let out = EmpiricalMeasure::from_parts_unchecked(ends, weights);
    if total > atom_budget {
        let mut rng = stream.fork("resample").rng();
        out.resample_stratified(atom_budget, &mut rng)
    } else {
        Ok(out)
    }
}

/// Monte-Carlo `U^power f(x)` with its standard error.
pub fn dual_apply(
    k: &dyn Kernel,
    f: &TestFunction,
    x: &Point,
    power: usize,
    n_samples: usize,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    if power == 0 {
        return Ok((f.eval(x), 0.0));
    }
    if let Some(c) = f.as_constant() {
        return Ok((c, 0.0));
    }
    if n_samples < 2 {
        return input("dual_apply needs n_samples >= 2");
    }
    let vals = par_map_streams(n_samples, stream, |_, rng| {
        let mut y = x.clone();
        for _ in 0..power {
            y = k.step(&y, rng)?;
        }
        Ok(f.eval(&y))
    })?;
    Ok(stats::mean_stderr(&vals))
}

/// `Pi(x, .) = nu` for every `x`.
#[derive(Clone, Debug)]
pub struct IidKernel {
    nu: EmpiricalMeasure,
    cumulative: Vec<f64>,
}

impl IidKernel {
    pub fn new(nu: EmpiricalMeasure) -> Result<Self> {
        if nu.is_empty() {
            return input("iid kernel needs a nonempty measure");
        }
        let mut acc = NeumaierSum::new();
        let cumulative = nu
            .weights
            .iter()
            .map(|w| {
                acc.add(*w);
                acc.value()
            })
            .collect();
        Ok(Self { nu, cumulative })
    }

    /// The fair-sign kernel on `{-1, +1}` (mode 1).
    pub fn rademacher() -> Self {
        let nu = EmpiricalMeasure::uniform(vec![Point::scalar(-1.0, 1), Point::scalar(1.0, 1)]).expect("two atoms");
        Self::new(nu).expect("nonempty")
    }

    pub fn measure(&self) -> &EmpiricalMeasure {
        &self.nu
    }
}

impl Kernel for IidKernel {
    fn step(&self, _x: &Point, rng: &mut StreamRng) -> Result<Point> {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let j = self.cumulative.partition_point(|c| *c <= u).min(self.nu.len() - 1);
        Ok(self.nu.atoms[j].clone())
    }

    fn descriptor(&self) -> KernelDescriptor {
        KernelDescriptor { label: "iid".into(), params: vec![("atoms".into(), self.nu.len() as f64)] }
    }

    fn expectation_exact(&self, f: &dyn Fn(&Point) -> f64, _x: &Point) -> Option<f64> {
        Some(self.nu.integrate(f))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseDist {
    Normal { sd: f64 },
    Uniform { half_width: f64 },
}

impl NoiseDist {
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseDist::Normal { sd } => sd * sd,
            NoiseDist::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }
}

/// `x' = kappa x + noise` in dimension one; the mode is carried unchanged.
#[derive(Clone, Debug)]
pub struct Ar1Kernel {
    kappa: f64,
    noise: NoiseDist,
    normal: Option<Normal<f64>>,
}

impl Ar1Kernel {
    pub fn new(kappa: f64, noise: NoiseDist) -> Result<Self> {
        if !(kappa.abs() < 1.0) {
            return input(format!("AR(1) needs |kappa| < 1, got {kappa}"));
        }
        let normal = match noise {
            NoiseDist::Normal { sd } => {
                if !(sd > 0.0) || !sd.is_finite() {
                    return input(format!("noise sd must be positive, got {sd}"));
                }
                Some(Normal::new(0.0, sd).map_err(|e| crate::Error::Input(e.to_string()))?)
            }
            NoiseDist::Uniform { half_width } => {
                if !(half_width > 0.0) || !half_width.is_finite() {
                    return input(format!("noise half width must be positive, got {half_width}"));
                }
                None
            }
        };
        Ok(Self { kappa, noise, normal })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn noise(&self) -> NoiseDist {
        self.noise
    }

    /// Variance of the stationary law, `Var(noise) / (1 - kappa^2)`.
    pub fn stationary_variance(&self) -> f64 {
        self.noise.variance() / (1.0 - self.kappa * self.kappa)
    }
}

impl Kernel for Ar1Kernel {
    fn step(&self, x: &Point, rng: &mut StreamRng) -> Result<Point> {
        if x.dim() != 1 {
            return input(format!("AR(1) kernel is one-dimensional, got dimension {}", x.dim()));
        }
        let e = match (self.noise, &self.normal) {
            (_, Some(n)) => n.sample(rng),
            (NoiseDist::Uniform { half_width }, None) => half_width * (2.0 * rng.random::<f64>() - 1.0),
            _ => unreachable!(),
        };
        Ok(Point::scalar(self.kappa * x.y0() + e, x.mode))
    }

    fn descriptor(&self) -> KernelDescriptor {
        let (kind, scale) = match self.noise {
            NoiseDist::Normal { sd } => (0.0, sd),
            NoiseDist::Uniform { half_width } => (1.0, half_width),
        };
        KernelDescriptor {
            label: "ar1".into(),
            params: vec![("kappa".into(), self.kappa), ("noise_uniform".into(), kind), ("noise_scale".into(), scale)],
        }
    }
}
