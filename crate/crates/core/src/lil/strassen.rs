//! Sup-norm distance from a piecewise-linear path to the Strassen set
//! `K = { f : f(0) = 0, int_0^1 f'^2 <= 1 }`.

use crate::error::{input, Result};

use super::paths::LilPath;

const ENERGY_SLACK: f64 = 1e-12;

fn slope(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1 - a.1) / (b.0 - a.0)
}

fn advance(apex: &mut (f64, f64), to: (f64, f64), energy: &mut f64) {
    let dy = to.1 - apex.1;
    *energy += dy * dy / (to.0 - apex.0);
    *apex = to;
}

/// Energy `sum (dy)^2 / dt` of the shortest path from `(t_0, 0)` to
/// `(t_G, end)` staying in `[lower_j, upper_j]` at the interior grid points.
/// With piecewise-linear walls this is also the minimal-energy path.
fn taut_energy(t: &[f64], lower: &[f64], upper: &[f64], end: f64) -> f64 {
    let g = t.len() - 1;
    let mut apex = (t[0], 0.0);
    let mut energy = 0.0;
    let mut upper_chain: Vec<(f64, f64)> = Vec::new();
    let mut lower_chain: Vec<(f64, f64)> = Vec::new();
    let mut uh = 0usize;
    let mut lh = 0usize;
    for j in 1..=g {
        let (lo, hi) = if j == g { (end, end) } else { (lower[j], upper[j]) };
        let up = (t[j], hi);
        loop {
            if lh < lower_chain.len() && slope(apex, up) < slope(apex, lower_chain[lh]) {
                let p = lower_chain[lh];
                advance(&mut apex, p, &mut energy);
                lh += 1;
                upper_chain.clear();
                uh = 0;
                continue;
            }
            break;
        }
        while upper_chain.len() > uh {
            let last = upper_chain[upper_chain.len() - 1];
            let prev = if upper_chain.len() - 1 > uh { upper_chain[upper_chain.len() - 2] } else { apex };
            if slope(prev, up) <= slope(prev, last) {
                upper_chain.pop();
            } else {
                break;
            }
        }
        upper_chain.push(up);
        let low = (t[j], lo);
        loop {
            if uh < upper_chain.len() && upper_chain[uh].0 < low.0 && slope(apex, low) > slope(apex, upper_chain[uh]) {
                let p = upper_chain[uh];
                advance(&mut apex, p, &mut energy);
                uh += 1;
                lower_chain.clear();
                lh = 0;
                continue;
            }
            break;
        }
        while lower_chain.len() > lh {
            let last = lower_chain[lower_chain.len() - 1];
            let prev = if lower_chain.len() - 1 > lh { lower_chain[lower_chain.len() - 2] } else { apex };
            if slope(prev, low) >= slope(prev, last) {
                lower_chain.pop();
            } else {
                break;
            }
        }
        lower_chain.push(low);
    }
    let endp = (t[g], end);
    if apex.0 < endp.0 {
        advance(&mut apex, endp, &mut energy);
    }
    energy
}

/// Minimal energy over paths in the tube `values +- d` anchored at 0, the
/// free end optimised by golden-section search (the energy is convex in it).
pub fn min_energy(t: &[f64], values: &[f64], d: f64) -> f64 {
    let lower: Vec<f64> = values.iter().map(|v| v - d).collect();
    let upper: Vec<f64> = values.iter().map(|v| v + d).collect();
    let g = t.len() - 1;
    let (mut a, mut b) = (lower[g], upper[g]);
    if b - a <= 0.0 {
        return taut_energy(t, &lower, &upper, a);
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let mut fc = taut_energy(t, &lower, &upper, c);
    let mut fe = taut_energy(t, &lower, &upper, e);
    let mut best = fc.min(fe);
    for _ in 0..200 {
        if b - a <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = taut_energy(t, &lower, &upper, c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = taut_energy(t, &lower, &upper, e);
        }
        best = best.min(fc).min(fe);
    }
    best
}

fn feasible(t: &[f64], values: &[f64], d: f64) -> bool {
    values[0].abs() <= d && min_energy(t, values, d) <= 1.0 + ENERGY_SLACK
}

/// Distance on raw grid/values; see [`k_distance`].
pub fn k_distance_values(t: &[f64], values: &[f64], tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return input(format!("k_distance tolerance must be positive, got {tol}"));
    }
    if t.len() < 2 || t.len() != values.len() {
        return input("k_distance needs at least two grid points and matching values");
    }
    if t[0] != 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
        return input("k_distance grid must start at 0 and increase strictly");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return input("k_distance path has non-finite values");
    }
    let mut lo = values[0].abs();
    if feasible(t, values, lo) {
        return Ok(lo);
    }
    let mut hi = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(t, values, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Sup-norm distance to `K` by bisection on `d`; returns the feasible end of
/// the final bracket (width at most `tol`).
pub fn k_distance(path: &LilPath, tol: f64) -> Result<f64> {
    k_distance_values(&path.grid, &path.values, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(g: usize) -> Vec<f64> {
        (0..=g).map(|j| j as f64 / g as f64).collect()
    }

    #[test]
    fn reference_paths() {
        let t = grid(64);
        let zero = vec![0.0; 65];
        assert_eq!(k_distance_values(&t, &zero, 1e-7).unwrap(), 0.0);
        let id: Vec<f64> = t.clone();
        assert!(k_distance_values(&t, &id, 1e-7).unwrap() <= 1e-7);
        let two: Vec<f64> = t.iter().map(|s| 2.0 * s).collect();
        assert!((k_distance_values(&t, &two, 1e-7).unwrap() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn straight_energy() {
        let t = grid(10);
        let v: Vec<f64> = t.iter().map(|s| 3.0 * s).collect();
        let lower: Vec<f64> = v.clone();
        assert!((taut_energy(&t, &lower, &v, 3.0) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn energy_respects_ceiling() {
        // corridor forces the path through (0.5, 0)
        let t = vec![0.0, 0.5, 1.0];
        let e = taut_energy(&t, &[0.0, -5.0, 0.0], &[0.0, 0.0, 0.0], 2.0);
        assert!((e - 8.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        assert!(k_distance_values(&[0.0, 1.0], &[0.0, 1.0], 0.0).is_err());
        assert!(k_distance_values(&[0.0], &[0.0], 1e-3).is_err());
        assert!(k_distance_values(&[0.1, 1.0], &[0.0, 1.0], 1e-3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn one_lipschitz(vals in prop::collection::vec(-2.0f64..2.0, 16), bump in prop::collection::vec(-0.3f64..0.3, 16)) {
            let t = grid(16);
            let mut a = vec![0.0];
            a.extend(vals.iter().copied());
            let mut b = vec![0.0];
            b.extend(vals.iter().zip(&bump).map(|(v, e)| v + e));
            let sup = bump.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            let tol = 1e-7;
            let da = k_distance_values(&t, &a, tol).unwrap();
            let db = k_distance_values(&t, &b, tol).unwrap();
            prop_assert!(da >= 0.0 && db >= 0.0);
            prop_assert!((da - db).abs() <= sup + 2.0 * tol + 1e-9);
        }
    }
}
