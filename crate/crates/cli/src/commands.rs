use anyhow::Context;
use lilkit::coupling::{coupled_decay, estimate_b_constants, Coupling, PairStatus};
use lilkit::ergodicity::{ergodic_decay, invariant_check, invariant_estimate, FitStatus};
use lilkit::gene_model::{certify, drift_constants};
use lilkit::kernel::{simulate, Ar1Kernel, IidKernel};
use lilkit::lil::{
    center_g, chi_identity_checks, rhat_trend, run_lil, ChiApprox, IdentityCheck, Seminorm, StrassenResult, TailParams,
    TrendResult,
};
use lilkit::space::LyapunovSpec;
use lilkit::{EmpiricalMeasure, GeneModel, Kernel, MetricSpec, Point, RngStream, TestFunction};
use serde::Serialize;

use crate::config::{ExperimentConfig, GConfig, ModelConfig, TailConfig};
use crate::output::{Cell, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Inconclusive,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
}

#[derive(Default)]
pub struct Checks(pub Vec<Check>);

impl Checks {
    fn add(&mut self, name: impl Into<String>, status: Status) {
        self.0.push(Check { name: name.into(), status });
    }

    fn pass_if(&mut self, name: impl Into<String>, ok: bool) {
        self.add(name, if ok { Status::Pass } else { Status::Fail });
    }

    pub fn overall(&self) -> Status {
        self.0.iter().map(|c| c.status).max().unwrap_or(Status::Pass)
    }
}

enum Model {
    Gene(GeneModel),
    Iid(IidKernel),
    Ar1(Ar1Kernel),
}

impl Model {
    fn build(cfg: &ModelConfig) -> anyhow::Result<Self> {
        Ok(match cfg {
            ModelConfig::GeneReference => Model::Gene(GeneModel::reference()),
            ModelConfig::Gene { spec } => Model::Gene(GeneModel::new((**spec).clone())?),
            ModelConfig::Rademacher => Model::Iid(IidKernel::rademacher()),
            ModelConfig::Iid { atoms, weights } => {
                let pts: Vec<Point> = atoms.iter().map(|a| Point::scalar(*a, 1)).collect();
                let w = weights.clone().unwrap_or_else(|| vec![1.0; pts.len()]);
                Model::Iid(IidKernel::new(EmpiricalMeasure::normalized(pts, w)?)?)
            }
            ModelConfig::Ar1 { kappa, noise } => Model::Ar1(Ar1Kernel::new(*kappa, *noise)?),
        })
    }

    fn kernel(&self) -> &dyn Kernel {
        match self {
            Model::Gene(m) => m,
            Model::Iid(k) => k,
            Model::Ar1(k) => k,
        }
    }

    fn gene(&self) -> anyhow::Result<&GeneModel> {
        match self {
            Model::Gene(m) => Ok(m),
            _ => Err(lilkit::Error::Input("this subcommand needs a gene model".into()).into()),
        }
    }

    fn metric(&self) -> MetricSpec {
        match self {
            Model::Gene(m) => m.metric(),
            _ => MetricSpec::default(),
        }
    }

    fn lyapunov(&self) -> LyapunovSpec {
        match self {
            Model::Gene(m) => m.lyapunov().clone(),
            _ => LyapunovSpec::origin(1, self.metric().norm),
        }
    }

    fn start(&self) -> Point {
        match self {
            Model::Gene(m) => m.reference_state(),
            Model::Iid(k) => k.measure().atoms()[0].clone(),
            Model::Ar1(_) => Point::scalar(0.0, 1),
        }
    }

    fn pair(&self) -> (Point, Point) {
        match self {
            Model::Gene(_) => (Point::scalar(0.0, 1), Point::scalar(4.0, 2)),
            _ => (Point::scalar(0.0, 1), Point::scalar(1.0, 1)),
        }
    }

    fn default_g(&self) -> GConfig {
        match self {
            Model::Gene(_) => GConfig::Clamped { index: 0, lo: 0.0, hi: 1.0 },
            _ => GConfig::Coordinate { index: 0 },
        }
    }

    fn invariant(&self, cfg: &ExperimentConfig, stream: &RngStream) -> anyhow::Result<EmpiricalMeasure> {
        if let Model::Iid(k) = self {
            return Ok(k.measure().clone());
        }
        let r = &cfg.run;
        Ok(invariant_estimate(self.kernel(), &self.start(), r.burn_in, r.invariant_atoms, r.thinning, stream)?)
    }
}

fn test_function(g: &GConfig) -> anyhow::Result<TestFunction> {
    Ok(match g {
        GConfig::Coordinate { index } => TestFunction::coordinate(*index),
        GConfig::Clamped { index, lo, hi } => TestFunction::clamped_coordinate(*index, *lo, *hi)?,
        GConfig::Constant { value } => TestFunction::constant(*value),
    })
}

fn coords(p: &Point) -> String {
    p.y.iter().map(|v| crate::output::fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

pub fn check_conditions(cfg: &ExperimentConfig, w: &mut Writer) -> anyhow::Result<Checks> {
    let model = Model::build(&cfg.model)?;
    let m = model.gene()?;
    let t = &cfg.task.check_conditions;
    let report = certify(m, &t.check, &t.drift, &RngStream::new(cfg.run.seed).fork("check-conditions"))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        report: &'a lilkit::gene_model::ConditionReport,
        a_star_analytic: Option<f64>,
        balance_lhs: f64,
        lil_condition_lhs: f64,
    }
    w.json(
        "conditions.json",
        &Summary {
            report: &report,
            a_star_analytic: m.a_star_analytic(),
            balance_lhs: m.balance_lhs(),
            lil_condition_lhs: m.lil_condition_lhs(),
        },
    )?;
    let rows = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.name.as_str().into(),
                format!("{:?}", e.kind).to_lowercase().as_str().into(),
                e.estimate.into(),
                e.stderr.into(),
                e.ci_lo.into(),
                e.ci_hi.into(),
                e.declared.into(),
                e.margin.into(),
                e.pass.into(),
                e.samples.into(),
            ]
        })
        .collect();
    w.csv(
        "conditions.csv",
        &["name", "kind", "estimate", "stderr", "ci_lo", "ci_hi", "declared", "margin", "pass", "samples"],
        rows,
    )?;
    if let Some(d) = &report.drift {
        let rows = [("a", d.a), ("b", d.b), ("a_star", d.a_star), ("b_star", d.b_star)]
            .iter()
            .map(|(n, e)| vec![(*n).into(), e.value.into(), e.stderr.into(), e.lo.into(), e.hi.into()])
            .collect();
        w.csv("drift.csv", &["constant", "estimate", "stderr", "ci_lo", "ci_hi"], rows)?;
    }
    let mut checks = Checks::default();
    for e in &report.entries {
        checks.pass_if(e.name.clone(), e.pass);
    }
    checks.pass_if("all_pass", report.all_pass);
    Ok(checks)
}

pub fn coupling(cfg: &ExperimentConfig, w: &mut Writer) -> anyhow::Result<Checks> {
    let model = Model::build(&cfg.model)?;
    let m = model.gene()?;
    let t = &cfg.task.coupling;
    let root = RngStream::new(cfg.run.seed).fork("coupling");
    let drift = drift_constants(m, &t.drift, &root.fork("drift"))?;
    let c = Coupling::new(m.clone(), t.spec, Some(&drift))?;
    let diag = estimate_b_constants(&c, &t.start_pairs, &t.diagnostics, Some(&drift), &root.fork("diagnostics"))?;
    let g = test_function(&t.decay_g)?;
    let (a, b) = &t.decay_start;
    let decay = coupled_decay(&c, &g, (a, b), &t.decay_grid, t.decay_trajectories, &root.fork("decay"), &t.decay)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        drift: &'a lilkit::gene_model::DriftConstants,
        threshold: f64,
        diagnostics: &'a lilkit::coupling::CouplingDiagnostics,
        decay: &'a lilkit::coupling::CoupledDecay,
    }
    w.json("coupling.json", &Summary { drift: &drift, threshold: c.threshold(), diagnostics: &diag, decay: &decay })?;
    let opt = |e: Option<lilkit::stats::Estimate>| e.map_or(f64::NAN, |e| e.value);
    let rows = diag
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            vec![
                i.into(),
                coords(&p.x).as_str().into(),
                p.x.mode.into(),
                coords(&p.y).as_str().into(),
                p.y.mode.into(),
                p.rho_start.into(),
                p.in_f.into(),
                p.q_frequency.value.into(),
                opt(p.contraction_ratio).into(),
                p.contraction_ratio.map_or(f64::NAN, |e| e.lo).into(),
                p.contraction_ratio.map_or(f64::NAN, |e| e.hi).into(),
                p.quadrature_ratio.unwrap_or(f64::NAN).into(),
                opt(p.gamma_moment_half).into(),
                opt(p.gamma_moment).into(),
                p.hit_rate.into(),
                p.censored.into(),
                matches!(p.status, PairStatus::Ok).into(),
            ]
        })
        .collect();
    w.csv(
        "coupling_pairs.csv",
        &[
            "pair",
            "x",
            "x_mode",
            "y",
            "y_mode",
            "rho_start",
            "in_f",
            "q_frequency",
            "contraction_ratio",
            "contraction_ci_lo",
            "contraction_ci_hi",
            "quadrature_ratio",
            "gamma_moment_half",
            "gamma_moment",
            "hit_rate",
            "censored",
            "ok",
        ],
        rows,
    )?;
    let rows = diag
        .pairs
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.rho_samples.iter().map(move |r| vec![i.into(), (*r).into()]))
        .collect();
    w.csv("coupling_rho.csv", &["pair", "rho"], rows)?;
    let fit = &decay.fit;
    let rows = fit
        .points
        .iter()
        .map(|p| vec![p.n.into(), p.value.into(), p.stderr.into(), p.lo.into(), p.hi.into()])
        .collect();
    w.csv("coupling_decay.csv", &["n", "estimate", "stderr", "ci_lo", "ci_hi"], rows)?;

    let mut checks = Checks::default();
    for (i, p) in diag.pairs.iter().enumerate() {
        checks.pass_if(format!("pair{i}_q_inside_f"), p.q_outside_f == 0);
        if let (Some(r), Some(q)) = (p.contraction_ratio, p.quadrature_ratio) {
            checks.pass_if(format!("pair{i}_contraction"), r.value <= q + (r.hi - r.value));
        }
        let s = match p.status {
            PairStatus::Ok => Status::Pass,
            PairStatus::Inconclusive(_) => Status::Inconclusive,
        };
        checks.add(format!("pair{i}_coupling_time"), s);
    }
    checks.pass_if("decay_monotone", decay.increases.is_empty());
    checks.add(
        "decay_rate",
        match (&fit.status, fit.contracts()) {
            (_, true) => Status::Pass,
            (FitStatus::Inconclusive(_), _) => Status::Inconclusive,
            _ => Status::Fail,
        },
    );
    Ok(checks)
}

pub fn ergodicity(cfg: &ExperimentConfig, w: &mut Writer) -> anyhow::Result<Checks> {
    let model = Model::build(&cfg.model)?;
    let t = &cfg.task.ergodicity;
    let root = RngStream::new(cfg.run.seed).fork("ergodicity");
    let (dx, dy) = model.pair();
    let x = t.x.clone().unwrap_or(dx);
    let y = t.y.clone().unwrap_or(dy);
    let mut decay_cfg = t.decay;
    if cfg.model.is_gene() {
        decay_cfg.metric = model.metric();
    }
    let n_traj = cfg.run.trajectories.unwrap_or(1000);
    let fit = ergodic_decay(model.kernel(), &x, &y, &t.grid, n_traj, &root.fork("decay"), &decay_cfg)?;
    let invariant = if t.check_invariant {
        let r = &cfg.run;
        let (mu, report) = invariant_check(
            model.kernel(),
            &x,
            &y,
            r.burn_in,
            r.invariant_atoms,
            r.thinning,
            decay_cfg.metric,
            &root.fork("invariant"),
        )?;
        let v = model.lyapunov();
        let (first_moment, _) = mu.mean_stderr(|p| p.y0());
        let (second_moment, _) = mu.mean_stderr(|p| p.y0() * p.y0());
        Some((report, first_moment, second_moment, mu.integrate(|p| v.eval(p))))
    } else {
        None
    };

    #[derive(Serialize)]
    struct Invariant<'a> {
        check: &'a lilkit::ergodicity::ConvergenceReport,
        mean_y0: f64,
        second_moment_y0: f64,
        lyapunov_mean: f64,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        x: &'a Point,
        y: &'a Point,
        n_traj: usize,
        fit: &'a lilkit::ergodicity::DecayFit,
        invariant: Option<Invariant<'a>>,
    }
    w.json(
        "ergodicity.json",
        &Summary {
            x: &x,
            y: &y,
            n_traj,
            fit: &fit,
            invariant: invariant.as_ref().map(|(c, m1, m2, v)| Invariant {
                check: c,
                mean_y0: *m1,
                second_moment_y0: *m2,
                lyapunov_mean: *v,
            }),
        },
    )?;
    let rows = fit
        .points
        .iter()
        .map(|p| {
            let fitted = (fit.log_c + p.n as f64 * fit.q.value.ln()).exp();
            vec![p.n.into(), p.value.into(), p.stderr.into(), p.lo.into(), p.hi.into(), fitted.into()]
        })
        .collect();
    w.csv("decay.csv", &["n", "estimate", "stderr", "ci_lo", "ci_hi", "fitted"], rows)?;

    let mut checks = Checks::default();
    checks.add(
        "decay_rate",
        match (&fit.status, fit.contracts()) {
            (_, true) => Status::Pass,
            (FitStatus::Inconclusive(_), _) => Status::Inconclusive,
            _ => Status::Fail,
        },
    );
    if let Some((c, ..)) = &invariant {
        checks.pass_if("invariant_converged", c.converged);
    }
    Ok(checks)
}

fn tail_params(
    model: &Model,
    tail: &TailConfig,
    mu: &EmpiricalMeasure,
    decay: &lilkit::ergodicity::DecayConfig,
    stream: &RngStream,
) -> anyhow::Result<TailParams> {
    let reference = model.start();
    Ok(match tail {
        TailConfig::Fixed { c_tilde, q, seminorm, reference: r } => {
            TailParams::new(*c_tilde, *q, *seminorm, r.clone().unwrap_or(reference), model.metric())?
        }
        TailConfig::Decay { x, y, grid, trajectories } => {
            let mut dc = *decay;
            dc.metric = model.metric();
            let fit = ergodic_decay(model.kernel(), x, y, grid, *trajectories, stream, &dc)?;
            let v = model.lyapunov();
            TailParams::from_decay(&fit, v.eval(x) + v.eval(y), mu.integrate(|p| v.eval(p)), reference, model.metric())?
        }
    })
}

fn default_tail(model: &Model) -> TailConfig {
    match model {
        Model::Gene(_) => {
            let (x, y) = model.pair();
            TailConfig::Decay { x, y, grid: (0..=8).collect(), trajectories: 1000 }
        }
        Model::Iid(_) => TailConfig::Fixed { c_tilde: 1.0, q: 0.0, seminorm: Seminorm::Lipschitz, reference: None },
        Model::Ar1(k) => {
            TailConfig::Fixed { c_tilde: 1.0, q: k.kappa().abs(), seminorm: Seminorm::Lipschitz, reference: None }
        }
    }
}

pub fn lil(cfg: &ExperimentConfig, w: &mut Writer) -> anyhow::Result<Checks> {
    let model = Model::build(&cfg.model)?;
    let t = &cfg.task.lil;
    let root = RngStream::new(cfg.run.seed).fork("lil");
    let mu = model.invariant(cfg, &root.fork("invariant"))?;
    let g = test_function(&t.g.clone().unwrap_or_else(|| model.default_g()))?;
    let tail_cfg = t.tail.clone().unwrap_or_else(|| default_tail(&model));
    let tail = tail_params(&model, &tail_cfg, &mu, &cfg.task.ergodicity.decay, &root.fork("tail"))?;
    let mut lc = t.config.clone();
    lc.n = cfg.run.n.unwrap_or(lc.n);
    lc.n_traj = cfg.run.trajectories.unwrap_or(lc.n_traj);
    let centered = center_g(&g, &mu, lc.level)?;
    let chi = ChiApprox::build(model.kernel(), &centered, tail, mu.atoms(), &t.chi, &root.fork("chi"))?;
    let res = run_lil(&chi, &mu, &mu, &lc, &root.fork("run")).context("lil ensemble")?;
    let identity = if t.identity_states > 0 {
        let states = mu.resample_stratified(t.identity_states, &mut root.fork("identity-states").rng())?;
        chi_identity_checks(&chi, states.atoms(), t.identity_samples, lc.z, lc.level, &root.fork("identity"))?
    } else {
        Vec::new()
    };
    let trend = match &t.trend {
        Some(tc) if res.sigma_used > 0.0 => {
            Some(rhat_trend(model.kernel(), chi.gbar(), res.sigma_used, &model.start(), tc, &root.fork("trend"))?)
        }
        _ => None,
    };
    write_lil(w, &res, &identity, trend.as_ref())?;

    let mut checks = Checks::default();
    checks.pass_if("sigma2_agree", res.sigma2_agree);
    checks.pass_if("nondegenerate_variance", !res.degenerate || chi.gbar().is_zero());
    if let Some(r) = &res.martingale {
        checks.pass_if("martingale_regression", r.pass);
    }
    if !identity.is_empty() {
        checks.pass_if("u_chi_identity", identity.iter().all(|c| c.identity_pass));
        checks.pass_if("z_square_identity", identity.iter().all(|c| c.variance_pass));
    }
    if lc.diagnostics && !chi.gbar().is_zero() {
        checks.add("hn2_monotone_tail", if res.hn2_monotone_from.is_some() { Status::Pass } else { Status::Inconclusive });
    }
    Ok(checks)
}

fn curve_rows(c: &[lilkit::lil::CurvePoint]) -> Vec<Vec<Cell>> {
    c.iter().map(|p| vec![p.n.into(), p.value.into(), p.stderr.into(), p.lo.into(), p.hi.into()]).collect()
}

const CURVE: [&str; 5] = ["n", "estimate", "stderr", "ci_lo", "ci_hi"];

fn write_lil(
    w: &mut Writer,
    res: &StrassenResult,
    identity: &[IdentityCheck],
    trend: Option<&TrendResult>,
) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        result: &'a StrassenResult,
        identity: &'a [IdentityCheck],
        trend: Option<&'a TrendResult>,
    }
    w.json("lil.json", &Summary { result: res, identity, trend })?;
    w.csv("hn2.csv", &CURVE, curve_rows(&res.hn2_over_n))?;
    w.csv("hn2_direct.csv", &CURVE, curve_rows(&res.hn2_direct_over_n))?;
    let rows = res
        .sum_z2_ratio
        .iter()
        .map(|p| vec![p.n.into(), p.mean.into(), p.median.into(), p.q05.into(), p.q95.into(), p.within_10pct.into()])
        .collect();
    w.csv("sum_z2_ratio.csv", &["n", "mean", "median", "q05", "q95", "within_10pct"], rows)?;
    let rows = [&res.series_lil1, &res.series_lil2]
        .iter()
        .flat_map(|s| {
            s.points.iter().enumerate().map(move |(j, p)| {
                vec![
                    s.name.as_str().into(),
                    p.n.into(),
                    p.value.into(),
                    p.stderr.into(),
                    p.lo.into(),
                    p.hi.into(),
                    (s.flat_at == Some(j)).into(),
                ]
            })
        })
        .collect();
    w.csv("series.csv", &["series", "n", "estimate", "stderr", "ci_lo", "ci_hi", "flat_from"], rows)?;
    let rows = res
        .cesaro
        .iter()
        .map(|c| {
            vec![
                c.m.into(),
                c.average.value.into(),
                c.average.lo.into(),
                c.average.hi.into(),
                c.invariant.value.into(),
                c.invariant.lo.into(),
                c.invariant.hi.into(),
                c.agree.into(),
            ]
        })
        .collect();
    w.csv(
        "cesaro.csv",
        &["m", "average", "average_ci_lo", "average_ci_hi", "invariant", "invariant_ci_lo", "invariant_ci_hi", "agree"],
        rows,
    )?;
    let rows = res
        .rhat_grid
        .iter()
        .enumerate()
        .map(|(j, n)| {
            vec![
                (*n).into(),
                res.rhat_running_max[j].into(),
                res.rhat_running_min[j].into(),
                res.rhat_bias_band[j].into(),
            ]
        })
        .collect();
    w.csv("rhat.csv", &["n", "running_max", "running_min", "bias_band"], rows)?;
    let rows = res
        .rhat
        .iter()
        .enumerate()
        .flat_map(|(r, vals)| vals.iter().zip(&res.rhat_grid).map(move |(v, n)| vec![r.into(), (*n).into(), (*v).into()]))
        .collect();
    w.csv("rhat_trajectories.csv", &["trajectory", "n", "rhat"], rows)?;
    let rows = res
        .k_distance_curve
        .iter()
        .map(|p| {
            vec![
                p.n.into(),
                p.r.into(),
                p.eta.into(),
                p.eta_tilde.into(),
                p.sup_eta_tilde_minus_r.into(),
                p.trajectories.into(),
            ]
        })
        .collect();
    w.csv("k_distance.csv", &["n", "r", "eta", "eta_tilde", "sup_eta_tilde_minus_r", "trajectories"], rows)?;
    let rows = res
        .paths
        .iter()
        .flat_map(|p| p.grid.iter().zip(&p.values).map(move |(t, v)| vec![p.kind.name().into(), (*t).into(), (*v).into()]))
        .collect();
    w.csv("paths.csv", &["path", "t", "value"], rows)?;
    if !identity.is_empty() {
        let rows = identity
            .iter()
            .map(|c| {
                vec![
                    coords(&c.x).as_str().into(),
                    c.x.mode.into(),
                    c.chi.into(),
                    c.gbar.into(),
                    c.u_chi.value.into(),
                    c.identity_gap.into(),
                    c.identity_tol.into(),
                    c.identity_pass.into(),
                    c.ez1_sq.value.into(),
                    c.var_u_chi.value.into(),
                    c.variance_gap.into(),
                    c.variance_tol.into(),
                    c.variance_pass.into(),
                ]
            })
            .collect();
        w.csv(
            "identity.csv",
            &[
                "y",
                "mode",
                "chi",
                "gbar",
                "u_chi",
                "identity_gap",
                "identity_tol",
                "identity_pass",
                "ez1_sq",
                "var_u_chi",
                "variance_gap",
                "variance_tol",
                "variance_pass",
            ],
            rows,
        )?;
    }
    if let Some(tr) = trend {
        let rows = tr
            .trajectories
            .iter()
            .enumerate()
            .flat_map(|(r, traj)| {
                tr.grid.iter().enumerate().map(move |(j, n)| {
                    vec![
                        r.into(),
                        (*n).into(),
                        traj.rhat[j].into(),
                        traj.running_max[j].into(),
                        traj.running_min[j].into(),
                        traj.k_distance[j].into(),
                    ]
                })
            })
            .collect();
        w.csv("trend.csv", &["trajectory", "n", "rhat", "running_max", "running_min", "k_distance"], rows)?;
        let rows = tr.grid.iter().zip(&tr.k_distance_median).map(|(n, k)| vec![(*n).into(), (*k).into()]).collect();
        w.csv("trend_median.csv", &["n", "k_distance_median"], rows)?;
    }
    Ok(())
}

pub fn simulate_cmd(cfg: &ExperimentConfig, w: &mut Writer) -> anyhow::Result<Checks> {
    let model = Model::build(&cfg.model)?;
    let start = cfg.task.simulate.start.clone().unwrap_or_else(|| model.start());
    let n = cfg.run.n.unwrap_or(10_000);
    let traj = simulate(model.kernel(), &start, n, &RngStream::new(cfg.run.seed).fork("simulate"))?;
    let dim = start.dim();
    let mut header = vec!["k".to_string(), "mode".to_string()];
    header.extend((0..dim).map(|i| format!("y{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = traj
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut row: Vec<Cell> = vec![k.into(), p.mode.into()];
            row.extend(p.y.iter().map(|v| Cell::F(*v)));
            row
        })
        .collect();
    w.csv("trajectory.csv", &header, rows)?;

    #[derive(Serialize)]
    struct Summary {
        n: usize,
        start: Point,
        mean: Vec<f64>,
        mode_frequencies: Vec<(u32, f64)>,
    }
    let len = traj.len() as f64;
    let mean = (0..dim).map(|i| lilkit::stats::sum(traj.iter().map(|p| p.y[i])) / len).collect();
    let mut modes: Vec<u32> = traj.iter().map(|p| p.mode).collect();
    modes.sort_unstable();
    let mut mode_frequencies: Vec<(u32, f64)> = Vec::new();
    for m in modes {
        match mode_frequencies.last_mut() {
            Some((k, c)) if *k == m => *c += 1.0,
            _ => mode_frequencies.push((m, 1.0)),
        }
    }
    for (_, c) in &mut mode_frequencies {
        *c /= len;
    }
    w.json("simulate.json", &Summary { n, start, mean, mode_frequencies })?;
    Ok(Checks::default())
}
