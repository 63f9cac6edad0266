//! The functional paths `r_n`, `eta_n`, `eta~_n` on a shared t-grid.

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

pub const DEFAULT_PATH_POINTS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    R,
    Eta,
    EtaTilde,
}

impl PathKind {
    pub fn name(&self) -> &'static str {
        match self {
            PathKind::R => "r",
            PathKind::Eta => "eta",
            PathKind::EtaTilde => "eta_tilde",
        }
    }
}

/// Sign of the `Z_{k+1}` term in `eta~_n`. `Plus` interpolates `M` linearly,
/// like `r_n` does for the partial sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSign {
    #[default]
    Plus,
    Minus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LilPath {
    pub kind: PathKind,
    pub n: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma_used: f64,
}

/// Grid position `n t_j = n j / G` split into `(k, frac)` exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPos {
    pub k: usize,
    pub frac: f64,
}

/// `G = min(n, max_points)` intervals, `t_j = j / G`.
pub fn grid_size(n: usize, max_points: usize) -> usize {
    n.min(max_points).max(1)
}

pub fn path_grid(n: usize, max_points: usize) -> Vec<f64> {
    let g = grid_size(n, max_points);
    (0..=g).map(|j| j as f64 / g as f64).collect()
}

pub fn grid_positions(n: usize, max_points: usize) -> Vec<GridPos> {
    let g = grid_size(n, max_points) as u128;
    (0..=g)
        .map(|j| {
            let num = n as u128 * j;
            GridPos { k: (num / g) as usize, frac: (num % g) as f64 / g as f64 }
        })
        .collect()
}

/// Indices `k` (and `k + 1` where the fraction is nonzero) read by the
/// `r_n` / `eta~_n` grid at length `n`.
pub fn needed_indices(n: usize, max_points: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for p in grid_positions(n, max_points) {
        out.push(p.k);
        if p.frac > 0.0 {
            out.push(p.k + 1);
        }
    }
    out.dedup();
    out
}

/// `sigma sqrt(2 n ln ln n)`, or `None` when `n <= e`.
pub fn lil_norm(n: usize, sigma: f64) -> Option<f64> {
    let nf = n as f64;
    if nf <= std::f64::consts::E {
        None
    } else {
        Some(sigma * (2.0 * nf * nf.ln().ln()).sqrt())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Path(format!("sigma must be positive and finite, got {sigma}")));
    }
    Ok(())
}

fn zero_path(kind: PathKind, n: usize, max_points: usize, sigma: f64) -> LilPath {
    let grid = path_grid(n, max_points);
    let values = vec![0.0; grid.len()];
    LilPath { kind, n, grid, values, sigma_used: sigma }
}

/// `r_n` from a lookup of the partial sums `S_k = sum_{i<k} gbar(phi_i)`.
pub fn r_path(n: usize, sigma: f64, max_points: usize, s_at: impl Fn(usize) -> f64) -> Result<LilPath> {
    check_sigma(sigma)?;
    let Some(norm) = lil_norm(n, sigma) else {
        return Ok(zero_path(PathKind::R, n, max_points, sigma));
    };
    let values = grid_positions(n, max_points)
        .iter()
        .map(|p| {
            let base = s_at(p.k);
            if p.frac > 0.0 {
                (base + p.frac * (s_at(p.k + 1) - base)) / norm
            } else {
                base / norm
            }
        })
        .collect();
    Ok(LilPath { kind: PathKind::R, n, grid: path_grid(n, max_points), values, sigma_used: sigma })
}

/// `eta~_n` from a lookup of `M_k`; `Z_{k+1} = M_{k+1} - M_k`.
pub fn eta_tilde_path(
    n: usize,
    sigma: f64,
    max_points: usize,
    sign: EtaSign,
    m_at: impl Fn(usize) -> f64,
) -> Result<LilPath> {
    check_sigma(sigma)?;
    let Some(norm) = lil_norm(n, sigma) else {
        return Ok(zero_path(PathKind::EtaTilde, n, max_points, sigma));
    };
    let s = match sign {
        EtaSign::Plus => 1.0,
        EtaSign::Minus => -1.0,
    };
    let values = grid_positions(n, max_points)
        .iter()
        .map(|p| {
            let base = m_at(p.k);
            if p.frac > 0.0 {
                (base + s * p.frac * (m_at(p.k + 1) - base)) / norm
            } else {
                base / norm
            }
        })
        .collect();
    Ok(LilPath { kind: PathKind::EtaTilde, n, grid: path_grid(n, max_points), values, sigma_used: sigma })
}

/// Curve `h_0^2 = 0, h_1^2, ..., h_n^2` with the start of its strictly
/// increasing tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hn2Curve {
    pub values: Vec<f64>,
    pub monotone_from: Option<usize>,
}

impl Hn2Curve {
    pub fn new(values: Vec<f64>) -> Self {
        let monotone_from = monotone_tail_start(&values);
        Self { values, monotone_from }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Smallest `N` such that `values[N..]` is strictly increasing.
pub fn monotone_tail_start(values: &[f64]) -> Option<usize> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mut start = n - 1;
    while start > 0 && values[start - 1] < values[start] {
        start -= 1;
    }
    if start == n - 1 {
        None
    } else {
        Some(start)
    }
}

/// Largest `k` in `0..n` with `h_k^2 <= target` (the curve is nondecreasing).
fn bracket(h2: &[f64], n: usize, target: f64) -> usize {
    let k = h2[..=n].partition_point(|v| *v <= target);
    k.saturating_sub(1).min(n)
}

/// Indices of `M` read by the `eta_n` grid.
pub fn eta_needed_indices(n: usize, max_points: usize, h2: &Hn2Curve) -> Vec<usize> {
    let g = grid_size(n, max_points);
    let mut out = Vec::new();
    for j in 0..=g {
        let target = h2.values[n] * j as f64 / g as f64;
        let k = if j == g { n } else { bracket(&h2.values, n, target) };
        out.push(k);
        if k < n {
            out.push(k + 1);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `eta_n`: interpolation of `M` in the `h^2` time scale. The curve must be
/// nondecreasing up to `n` and strictly increasing on a tail ending at `n`.
pub fn eta_path(
    n: usize,
    sigma: f64,
    max_points: usize,
    h2: &Hn2Curve,
    m_at: impl Fn(usize) -> f64,
) -> Result<LilPath> {
    check_sigma(sigma)?;
    if h2.values.len() <= n {
        return input(format!("h_n^2 curve has {} entries, need {}", h2.values.len(), n + 1));
    }
    let Some(norm) = lil_norm(n, sigma) else {
        return Ok(zero_path(PathKind::Eta, n, max_points, sigma));
    };
    let v = &h2.values[..=n];
    if v.windows(2).any(|w| w[1] < w[0]) || v[0] != 0.0 {
        return Err(Error::Path("h_n^2 curve must start at 0 and be nondecreasing".into()));
    }
    match monotone_tail_start(v) {
        Some(_) => {}
        None => return Err(Error::Path(format!("h_n^2 curve is not strictly increasing at n = {n}"))),
    }
    let g = grid_size(n, max_points);
    let grid = path_grid(n, max_points);
    let values = (0..=g)
        .map(|j| {
            if j == g {
                return m_at(n) / norm;
            }
            let target = v[n] * j as f64 / g as f64;
            let k = bracket(v, n, target);
            if k >= n {
                return m_at(n) / norm;
            }
            let gap = v[k + 1] - v[k];
            let mk = m_at(k);
            if gap > 0.0 {
                (mk + (target - v[k]) / gap * (m_at(k + 1) - mk)) / norm
            } else {
                mk / norm
            }
        })
        .collect();
    Ok(LilPath { kind: PathKind::Eta, n, grid, values, sigma_used: sigma })
}

/// `r_n, eta_n, eta~_n` from in-memory arrays `s[k] = S_k`, `m[k] = M_k`.
pub fn build_paths(
    s: &[f64],
    m: &[f64],
    sigma: f64,
    h2: &Hn2Curve,
    max_points: usize,
    sign: EtaSign,
) -> Result<[LilPath; 3]> {
    if s.is_empty() || s.len() != m.len() {
        return input("partial sums and martingale must have equal nonzero length");
    }
    let n = s.len() - 1;
    Ok([
        r_path(n, sigma, max_points, |k| s[k])?,
        eta_path(n, sigma, max_points, h2, |k| m[k])?,
        eta_tilde_path(n, sigma, max_points, sign, |k| m[k])?,
    ])
}

/// Powers of two from `n_min` up to `n_max`, plus `n_max` itself.
pub fn dyadic_grid(n_min: usize, n_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = n_min.max(1).next_power_of_two();
    while p < n_max {
        out.push(p);
        p *= 2;
    }
    out.push(n_max);
    out
}

/// Running maximum and minimum.
pub fn running_extremes(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    values
        .iter()
        .map(|v| {
            hi = hi.max(*v);
            lo = lo.min(*v);
            (hi, lo)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_n_is_zero() {
        let p = r_path(2, 1.0, 16, |k| k as f64).unwrap();
        assert!(p.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn r_endpoint_is_rhat() {
        let s: Vec<f64> = (0..=100).map(|k| (k as f64).sin()).collect();
        let p = r_path(100, 1.5, 4096, |k| s[k]).unwrap();
        let want = s[100] / lil_norm(100, 1.5).unwrap();
        assert_eq!(*p.values.last().unwrap(), want);
        assert_eq!(p.values[0], 0.0 / lil_norm(100, 1.5).unwrap());
    }

    #[test]
    fn coarse_grid_positions_are_exact() {
        let pos = grid_positions(10_000_000, 4096);
        assert_eq!(pos.len(), 4097);
        assert_eq!(pos[4096].k, 10_000_000);
        assert_eq!(pos[4096].frac, 0.0);
        let pos = grid_positions(1 << 20, 4096);
        assert!(pos.iter().all(|p| p.frac == 0.0));
    }

    #[test]
    fn eta_tilde_signs() {
        let m: Vec<f64> = (0..=8).map(|k| (k * k) as f64).collect();
        let plus = eta_tilde_path(8, 1.0, 4, EtaSign::Plus, |k| m[k]).unwrap();
        let minus = eta_tilde_path(8, 1.0, 4, EtaSign::Minus, |k| m[k]).unwrap();
        let norm = lil_norm(8, 1.0).unwrap();
        // t = 1/4 is nt = 2 exactly, so both agree; grid of 4 points only hits integers
        assert_eq!(plus.values[1], 4.0 / norm);
        assert_eq!(minus.values[1], 4.0 / norm);
        let plus = eta_tilde_path(8, 1.0, 3, EtaSign::Plus, |k| m[k]).unwrap();
        let minus = eta_tilde_path(8, 1.0, 3, EtaSign::Minus, |k| m[k]).unwrap();
        // t = 1/3: nt = 8/3, k = 2, frac = 2/3, Z_3 = 5
        assert!((plus.values[1] - (4.0 + 2.0 / 3.0 * 5.0) / norm).abs() < 1e-12);
        assert!((minus.values[1] - (4.0 - 2.0 / 3.0 * 5.0) / norm).abs() < 1e-12);
    }

    #[test]
    fn eta_matches_eta_tilde_for_linear_h2() {
        let n = 64;
        let h2 = Hn2Curve::new((0..=n).map(|k| k as f64).collect());
        let m: Vec<f64> = (0..=n).map(|k| ((k as f64) * 0.7).cos()).collect();
        let a = eta_path(n, 1.0, 4096, &h2, |k| m[k]).unwrap();
        let b = eta_tilde_path(n, 1.0, 4096, EtaSign::Plus, |k| m[k]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_monotone_h2_rejected() {
        let h2 = Hn2Curve::new(vec![0.0, 1.0, 2.0, 3.0, 3.0]);
        assert!(h2.monotone_from.is_none());
        let r = eta_path(4, 1.0, 16, &h2, |k| k as f64);
        assert!(matches!(r, Err(Error::Path(_))));
        let h2 = Hn2Curve::new(vec![0.0, 1.0, 0.5, 3.0, 4.0]);
        assert!(matches!(eta_path(4, 1.0, 16, &h2, |k| k as f64), Err(Error::Path(_))));
    }

    #[test]
    fn dyadic() {
        assert_eq!(dyadic_grid(1000, 5000), vec![1024, 2048, 4096, 5000]);
        assert_eq!(dyadic_grid(1, 8), vec![1, 2, 4, 8]);
    }

    proptest! {
        #[test]
        fn running_max_nondecreasing(v in prop::collection::vec(-10.0f64..10.0, 1..200)) {
            let (hi, lo) = running_extremes(&v);
            prop_assert!(hi.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(lo.windows(2).all(|w| w[1] <= w[0]));
            for (i, x) in v.iter().enumerate() {
                prop_assert!(hi[i] >= *x && lo[i] <= *x);
            }
        }
    }
}
