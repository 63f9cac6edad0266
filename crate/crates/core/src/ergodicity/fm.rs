//! Fortet-Mourier distance between empirical measures.
//!
//! On a finite support the supremum over `|f| <= 1`, `|f|_Lip <= 1` equals the
//! optimal transport cost for `min(rho, 2)`: any `f` that is 1-Lipschitz for
//! the truncated metric has range of width at most 2 and can be shifted into
//! `[-1, 1]` without changing `<f, mu1 - mu2>`.

use crate::error::{input, Error, Result};
use crate::kernel::{par_map_streams, EmpiricalMeasure};
use crate::rng::RngStream;
use crate::space::{MetricSpec, Point};
use crate::stats::{self, Estimate};

use super::transport;

pub const DEFAULT_LP_BUDGET: usize = 2000;

#[derive(Clone, Copy, Debug)]
pub struct FmProblem<'a> {
    pub mu1: &'a EmpiricalMeasure,
    pub mu2: &'a EmpiricalMeasure,
    pub metric: MetricSpec,
}

impl<'a> FmProblem<'a> {
    pub fn new(mu1: &'a EmpiricalMeasure, mu2: &'a EmpiricalMeasure, metric: MetricSpec) -> Self {
        Self { mu1, mu2, metric }
    }
}

fn sort_key(p: &Point) -> (u32, f64) {
    (p.mode, p.y.first().copied().unwrap_or(0.0))
}

fn sorted(mu: &EmpiricalMeasure) -> (Vec<&Point>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..mu.len()).collect();
    idx.sort_by(|&a, &b| sort_key(&mu.atoms()[a]).partial_cmp(&sort_key(&mu.atoms()[b])).unwrap_or(std::cmp::Ordering::Equal));
    (idx.iter().map(|&i| &mu.atoms()[i]).collect(), idx.iter().map(|&i| mu.weights()[i]).collect())
}

fn transport_value(p: &FmProblem, budget: usize, cap: Option<f64>) -> Result<f64> {
    p.metric.validate()?;
    if p.mu1.dim() != p.mu2.dim() {
        return Err(Error::DimensionMismatch { left: p.mu1.dim(), right: p.mu2.dim() });
    }
    let a = p.mu1.compacted();
    let b = p.mu2.compacted();
    if a == b {
        return Ok(0.0);
    }
    let atoms = a.len() + b.len();
    if atoms > budget {
        return Err(Error::Budget { atoms, budget });
    }
    let (xa, wa) = sorted(&a);
    let (xb, wb) = sorted(&b);
    let mut cost = Vec::with_capacity(xa.len() * xb.len());
    for pa in &xa {
        for pb in &xb {
            let d = p.metric.dist(pa, pb);
            cost.push(match cap {
                Some(c) => d.min(c),
                None => d,
            });
        }
    }
    let sol = transport::solve(&cost, &wa, &wb)?;
    if (sol.value - sol.dual_value).abs() > 1e-9 * sol.value.abs().max(1.0) {
        return Err(Error::Solver(format!("duality gap {} vs {}", sol.value, sol.dual_value)));
    }
    Ok(sol.value.max(0.0))
}

/// Exact `d_FM(mu1, mu2)` with the default LP budget.
pub fn fm_distance(p: &FmProblem) -> Result<f64> {
    fm_distance_with_budget(p, DEFAULT_LP_BUDGET)
}

pub fn fm_distance_with_budget(p: &FmProblem, budget: usize) -> Result<f64> {
    transport_value(p, budget, Some(2.0))
}

/// Transport value for the untruncated metric: the supremum over
/// 1-Lipschitz functions without the sup constraint.
pub fn lipschitz_transport(p: &FmProblem, budget: usize) -> Result<f64> {
    transport_value(p, budget, None)
}

/// `d_FM` for measures too large for the LP: the mean over `n_boot`
/// stratified resamples of each measure to `budget / 2` atoms, with the
/// spread of the resampled values as standard error.
pub fn fm_distance_subsampled(p: &FmProblem, budget: usize, n_boot: usize, stream: &RngStream) -> Result<Estimate> {
    let a = p.mu1.compacted();
    let b = p.mu2.compacted();
    if a.len() + b.len() <= budget {
        let v = fm_distance_with_budget(&FmProblem::new(&a, &b, p.metric), budget)?;
        return Ok(Estimate::exact(v));
    }
    if n_boot < 2 {
        return input("subsampled d_FM needs n_boot >= 2");
    }
    let half = budget / 2;
    let vals = par_map_streams(n_boot, stream, |_, rng| {
        let ra = if a.len() > half { a.resample_stratified(half, rng)? } else { a.clone() };
        let rb = if b.len() > half { b.resample_stratified(half, rng)? } else { b.clone() };
        fm_distance_with_budget(&FmProblem::new(&ra, &rb, p.metric), budget)
    })?;
    Ok(Estimate::from_samples(&vals, 0.95))
}

/// Two-sample comparison of empirical laws by `d_FM`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TwoSampleFm {
    /// Mean `d_FM` between subsamples of the two samples.
    pub statistic: Estimate,
    /// Same with both subsamples drawn from a random split of the pooled sample.
    pub null: Estimate,
    pub z: f64,
    pub pass: bool,
}

fn take(mu: &[Point], idx: &[usize]) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::uniform(idx.iter().map(|&i| mu[i].clone()).collect())
}

/// Compares `a` and `b` through `n_rep` pairs of subsamples of size
/// `budget / 2` each. Passes when the statistic does not exceed the
/// permutation null by more than `z` combined standard errors.
pub fn fm_two_sample_test(
    a: &[Point],
    b: &[Point],
    metric: MetricSpec,
    budget: usize,
    n_rep: usize,
    z: f64,
    stream: &RngStream,
) -> Result<TwoSampleFm> {
    use rand::seq::index::sample;
    if a.is_empty() || b.is_empty() {
        return input("two-sample test needs nonempty samples");
    }
    if n_rep < 2 {
        return input("two-sample test needs n_rep >= 2");
    }
    let half = (budget / 2).min(a.len()).min(b.len());
    let pooled: Vec<Point> = a.iter().chain(b).cloned().collect();
    let vals = par_map_streams(n_rep, stream, |_, rng| {
        let sa = take(a, &sample(rng, a.len(), half).into_vec())?;
        let sb = take(b, &sample(rng, b.len(), half).into_vec())?;
        let stat = fm_distance_with_budget(&FmProblem::new(&sa, &sb, metric), budget)?;
        let idx = sample(rng, pooled.len(), 2 * half).into_vec();
        let pa = take(&pooled, &idx[..half])?;
        let pb = take(&pooled, &idx[half..])?;
        let null = fm_distance_with_budget(&FmProblem::new(&pa, &pb, metric), budget)?;
        Ok((stat, null))
    })?;
    let stat: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let null: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let statistic = Estimate::from_samples(&stat, 0.95);
    let null = Estimate::from_samples(&null, 0.95);
    let pass = statistic.value <= null.value + z * statistic.stderr.hypot(null.stderr);
    Ok(TwoSampleFm { statistic, null, z, pass })
}

fn union_support(p: &FmProblem) -> (Vec<Point>, Vec<f64>) {
    let mut pts: Vec<Point> = Vec::new();
    let mut coef: Vec<f64> = Vec::new();
    for (mu, sign) in [(p.mu1, 1.0), (p.mu2, -1.0)] {
        for (a, w) in mu.atoms().iter().zip(mu.weights()) {
            match pts.iter().position(|q| q == a) {
                Some(k) => coef[k] += sign * w,
                None => {
                    pts.push(a.clone());
                    coef.push(sign * w);
                }
            }
        }
    }
    (pts, coef)
}

/// Solves `A x = b` for square `A` (row-major); `None` when singular.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    for col in 0..k {
        let piv = (col..k).max_by(|&r, &s| a[r * k + col].abs().total_cmp(&a[s * k + col].abs()))?;
        if a[piv * k + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for c in 0..k {
                a.swap(piv * k + c, col * k + c);
            }
            b.swap(piv, col);
        }
        for r in 0..k {
            if r != col {
                let f = a[r * k + col] / a[col * k + col];
                if f != 0.0 {
                    for c in col..k {
                        a[r * k + c] -= f * a[col * k + c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..k).map(|i| b[i] / a[i * k + i]).collect())
}

/// Vertex enumeration of the LP over `f` on the union support, for at most
/// four combined atoms.
pub fn fm_distance_bruteforce(p: &FmProblem) -> Result<f64> {
    if p.mu1.dim() != p.mu2.dim() {
        return Err(Error::DimensionMismatch { left: p.mu1.dim(), right: p.mu2.dim() });
    }
    let (pts, coef) = union_support(p);
    let k = pts.len();
    if k > 4 {
        return input(format!("brute force supports at most 4 atoms, got {k}"));
    }
    // constraints row . f <= rhs
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for z in 0..k {
        let mut e = vec![0.0; k];
        e[z] = 1.0;
        rows.push((e.clone(), 1.0));
        e[z] = -1.0;
        rows.push((e, 1.0));
    }
    for z in 0..k {
        for w in 0..k {
            if z != w {
                let mut e = vec![0.0; k];
                e[z] = 1.0;
                e[w] = -1.0;
                rows.push((e, p.metric.dist(&pts[z], &pts[w])));
            }
        }
    }
    let nr = rows.len();
    let mut best = f64::NEG_INFINITY;
    let mut pick = vec![0usize; k];
    // iterate over k-subsets of constraint indices
    fn next_combo(c: &mut [usize], n: usize) -> bool {
        let k = c.len();
        for i in (0..k).rev() {
            if c[i] < n - k + i {
                c[i] += 1;
                for j in i + 1..k {
                    c[j] = c[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    for (i, v) in pick.iter_mut().enumerate() {
        *v = i;
    }
    loop {
        let a: Vec<f64> = pick.iter().flat_map(|&r| rows[r].0.iter().copied()).collect();
        let b: Vec<f64> = pick.iter().map(|&r| rows[r].1).collect();
        if let Some(f) = solve_dense(a, b, k) {
            let feasible = rows.iter().all(|(row, rhs)| row.iter().zip(&f).map(|(x, y)| x * y).sum::<f64>() <= rhs + 1e-9);
            if feasible {
                best = best.max(stats::sum(coef.iter().zip(&f).map(|(c, x)| c * x)));
            }
        }
        if !next_combo(&mut pick, nr) {
            break;
        }
    }
    if !best.is_finite() {
        return Err(Error::Solver("no feasible vertex found".into()));
    }
    Ok(best.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dirac(y: f64, mode: u32) -> EmpiricalMeasure {
        EmpiricalMeasure::dirac(Point::scalar(y, mode))
    }

    #[test]
    fn two_dirac_values() {
        let m = MetricSpec::default();
        let (a, b, c) = (dirac(0.0, 1), dirac(3.0, 1), dirac(0.5, 1));
        assert_eq!(fm_distance(&FmProblem::new(&a, &a, m)).unwrap(), 0.0);
        assert_abs_diff_eq!(fm_distance(&FmProblem::new(&a, &b, m)).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fm_distance(&FmProblem::new(&a, &c, m)).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(fm_distance_bruteforce(&FmProblem::new(&a, &b, m)).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fm_distance_bruteforce(&FmProblem::new(&a, &c, m)).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(fm_distance_bruteforce(&FmProblem::new(&a, &a, m)).unwrap(), 0.0);
    }

    #[test]
    fn mode_weight_enters_cost() {
        let m = MetricSpec::new(0.25, crate::space::Norm::Euclidean).unwrap();
        let (a, b) = (dirac(0.0, 1), dirac(0.5, 2));
        assert_abs_diff_eq!(fm_distance(&FmProblem::new(&a, &b, m)).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn budget_enforced() {
        let atoms: Vec<Point> = (0..20).map(|i| Point::scalar(i as f64, 1)).collect();
        let mu = EmpiricalMeasure::uniform(atoms).unwrap();
        let nu = dirac(0.5, 1);
        let r = fm_distance_with_budget(&FmProblem::new(&mu, &nu, MetricSpec::default()), 10);
        assert!(matches!(r, Err(Error::Budget { atoms: 21, budget: 10 })));
    }

    #[test]
    fn bruteforce_rejects_large_supports() {
        let atoms: Vec<Point> = (0..5).map(|i| Point::scalar(i as f64, 1)).collect();
        let mu = EmpiricalMeasure::uniform(atoms).unwrap();
        let r = fm_distance_bruteforce(&FmProblem::new(&mu, &mu, MetricSpec::default()));
        assert!(r.is_err());
    }

    #[test]
    fn two_sample_test_separates_laws() {
        let s = RngStream::new(8);
        let same_a: Vec<Point> = (0..3000).map(|i| Point::scalar(((i * 7919) % 3000) as f64 / 3000.0, 1)).collect();
        let same_b: Vec<Point> = (0..3000).map(|i| Point::scalar(((i * 104_729) % 3000) as f64 / 3000.0, 1)).collect();
        let r = fm_two_sample_test(&same_a, &same_b, MetricSpec::default(), 400, 10, 3.0, &s).unwrap();
        assert!(r.pass, "{r:?}");
        let shifted: Vec<Point> = same_b.iter().map(|p| Point::scalar(p.y0() + 0.2, 1)).collect();
        let r = fm_two_sample_test(&same_a, &shifted, MetricSpec::default(), 400, 10, 3.0, &s).unwrap();
        assert!(!r.pass, "{r:?}");
    }

    #[test]
    fn sorted_shift_matches_closed_form() {
        // equal-weight samples and their shift by s < 2: value is s
        let atoms: Vec<Point> = (0..200).map(|i| Point::scalar((i as f64 * 0.37).sin() * 3.0, 1)).collect();
        let shifted: Vec<Point> = atoms.iter().map(|p| Point::scalar(p.y0() + 0.3, 1)).collect();
        let a = EmpiricalMeasure::uniform(atoms).unwrap();
        let b = EmpiricalMeasure::uniform(shifted).unwrap();
        let lip = lipschitz_transport(&FmProblem::new(&a, &b, MetricSpec::default()), 2000).unwrap();
        assert_abs_diff_eq!(lip, 0.3, epsilon = 1e-12);
        let fm = fm_distance(&FmProblem::new(&a, &b, MetricSpec::default())).unwrap();
        assert!(fm <= lip + 1e-12);
    }
}
