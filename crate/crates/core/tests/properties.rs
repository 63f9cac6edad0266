use lilkit::ergodicity::{fm_distance, lipschitz_transport, FmProblem};
use lilkit::kernel::{par_map_streams, simulate, Ar1Kernel, NoiseDist};
use lilkit::lil::k_distance_values;
use lilkit::space::{rho_c, MetricSpec, Norm};
use lilkit::{EmpiricalMeasure, Point, RngStream};
use proptest::prelude::*;
use rand::Rng;

fn point(dim: usize) -> impl Strategy<Value = Point> {
    (prop::collection::vec(-3.0..3.0f64, dim), 1u32..4).prop_map(|(y, m)| Point::new(&y, m))
}

fn metric() -> impl Strategy<Value = MetricSpec> {
    (0.0..3.0f64, prop_oneof![Just(Norm::Euclidean), Just(Norm::Max)]).prop_map(|(w, n)| MetricSpec::new(w, n).unwrap())
}

fn measure(dim: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((point(dim), 0.05..1.0f64), 1..6).prop_map(|v| {
        let (a, w): (Vec<Point>, Vec<f64>) = v.into_iter().unzip();
        EmpiricalMeasure::normalized(a, w).unwrap()
    })
}

fn line(g: usize) -> Vec<f64> {
    (0..=g).map(|j| j as f64 / g as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rho_c_is_a_metric(dim in 1usize..4, seed in 0u64..u64::MAX, m in metric()) {
        let mut r = RngStream::new(seed).rng();
        let mut p = || {
            let y: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
            Point::new(&y, r.random_range(1..4))
        };
        let (a, b, c) = (p(), p(), p());
        let d = |x: &Point, y: &Point| rho_c(x, y, &m).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        if a.mode != b.mode {
            prop_assert!(d(&a, &b) >= m.mode_weight);
        }
    }

    #[test]
    fn fm_bounds(mu in measure(1), nu in measure(1), m in metric()) {
        let d = fm_distance(&FmProblem::new(&mu, &nu, m)).unwrap();
        let back = fm_distance(&FmProblem::new(&nu, &mu, m)).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
        prop_assert!((d - back).abs() < 1e-12);
        prop_assert_eq!(fm_distance(&FmProblem::new(&mu, &mu, m)).unwrap(), 0.0);
        prop_assert!(d <= lipschitz_transport(&FmProblem::new(&mu, &nu, m), 2000).unwrap() + 1e-12);
        // clamp(y, -1, 1) is admissible, so its integral gap is a lower bound
        let f = |e: &EmpiricalMeasure| e.atoms().iter().zip(e.weights()).map(|(p, w)| w * p.y0().clamp(-1.0, 1.0)).sum::<f64>();
        prop_assert!((f(&mu) - f(&nu)).abs() <= d + 1e-12);
    }

    #[test]
    fn fm_of_diracs_is_truncated_distance(a in point(2), b in point(2), m in metric()) {
        let d = fm_distance(&FmProblem::new(&EmpiricalMeasure::dirac(a.clone()), &EmpiricalMeasure::dirac(b.clone()), m)).unwrap();
        prop_assert!((d - m.dist(&a, &b).min(2.0)).abs() < 1e-12);
    }

    #[test]
    fn k_distance_of_lines(c in 0.0..4.0f64, g in 2usize..200) {
        let t = line(g);
        let v: Vec<f64> = t.iter().map(|s| c * s).collect();
        let k = k_distance_values(&t, &v, 1e-9).unwrap();
        prop_assert!((k - (c - 1.0).max(0.0)).abs() < 1e-6, "c {} k {}", c, k);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assert!((k_distance_values(&t, &neg, 1e-9).unwrap() - k).abs() < 1e-8);
    }

    #[test]
    fn k_distance_bounds(vals in prop::collection::vec(-2.0..2.0f64, 2..40)) {
        let g = vals.len();
        let t = line(g);
        let mut v = vec![0.0];
        v.extend(vals);
        let k = k_distance_values(&t, &v, 1e-9).unwrap();
        let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(k <= sup + 1e-9);
        // any element of K satisfies |h(t)| <= sqrt(t)
        let lower = t.iter().zip(&v).fold(0.0f64, |m, (s, x)| m.max(x.abs() - s.sqrt()));
        prop_assert!(k >= lower - 1e-9);
    }
}

#[test]
fn parallel_map_is_independent_of_pool_size() {
    let s = RngStream::new(99);
    let run = |w: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .unwrap()
            .install(|| par_map_streams(257, &s, |i, rng| Ok((i, rng.random::<u64>(), rng.random::<f64>()))).unwrap())
    };
    let base = run(1);
    assert!(base.iter().enumerate().all(|(i, v)| v.0 == i));
    assert_eq!(base, run(3));
    assert_eq!(base, run(8));
}

#[test]
fn simulation_is_reproducible() {
    let k = Ar1Kernel::new(0.5, NoiseDist::Normal { sd: 1.0 }).unwrap();
    let x = Point::scalar(2.0, 1);
    let a = simulate(&k, &x, 1000, &RngStream::new(4)).unwrap();
    let b = simulate(&k, &x, 1000, &RngStream::new(4)).unwrap();
    let c = simulate(&k, &x, 1000, &RngStream::new(5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 1001);
    assert_eq!(a[0], x);
}
