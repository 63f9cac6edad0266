//! Gauss-Legendre quadrature.

/// Nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// A rule mapped to `[a, b]`.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        let (x, w) = gauss_legendre(n);
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        Self { nodes: x.iter().map(|t| c + h * t).collect(), weights: w.iter().map(|v| v * h).collect() }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        crate::stats::sum(self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)))
    }
}

/// `int_a^b f` with `n` nodes on each of `panels` equal subintervals.
pub fn integrate_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let h = (b - a) / panels as f64;
    let mut s = crate::stats::NeumaierSum::new();
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (t, wt) in x.iter().zip(&w) {
            s.add(0.5 * h * wt * f(lo + 0.5 * h * (t + 1.0)));
        }
    }
    s.value()
}
