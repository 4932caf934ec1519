use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::*;
use super::{fmt_float as f, RunContext, Verb};
use crate::error::{invalid, Result};
use crate::evi::{default_observers, error_budget, evi_report, convergence_study, Curve, Observer, ObserverJson};
use crate::geometry::{
    check_cauchy_schwarz_type, check_kappa_concavity, check_lac, check_transfer_estimates, q_p, reparam_beta,
    reparam_r, MetricSpaceProbe,
};
use crate::hk::{hk_distance_squared, hk_exact_small, shk_from_hk2, HkOptions, Metric};
use crate::measures::measure_like;
use crate::mm::{check_density_bounds_hk, check_density_bounds_shk, run_mm, MmTrajectory};
use crate::pde::mm_pde_sweep;

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Pass,
    AssertionFailed(String),
    SolverFailed(String),
}

/// Report files in write order, plus the verdict.
#[derive(Debug, Clone)]
pub struct VerbOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub status: Status,
}

fn json_bytes(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn read_config<T: DeserializeOwned>(ctx: &RunContext) -> Result<T> {
    let Some(path) = &ctx.config else {
        return invalid("this verb needs --config");
    };
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn read_config_or<T: DeserializeOwned>(ctx: &RunContext, fallback: impl FnOnce() -> Result<T>) -> Result<T> {
    match ctx.config {
        Some(_) => read_config(ctx),
        None => fallback(),
    }
}

fn unconverged(traj: &MmTrajectory) -> Option<String> {
    traj.records.iter().find(|r| !r.converged).map(|r| {
        format!("τ = {}: step {} not converged (gap {:.3e}, stationarity {:.3e})", traj.tau, r.k, r.gap, r.stationarity)
    })
}

/// Dispatches a verb; returns its reports and the effective config.
pub fn run_verb(ctx: &RunContext, verb: &Verb) -> Result<(VerbOutput, Value)> {
    match verb {
        Verb::Distance => distance(ctx),
        Verb::MmRun => mm_run(ctx),
        Verb::EviCheck { trajectory, observers, lambda, kappa } => {
            evi_check(ctx, trajectory.clone(), observers.clone(), *lambda, *kappa)
        }
        Verb::PdeCompare => pde_compare(ctx),
        Verb::GeometryProbe { space, check, samples } => geometry_probe(ctx, *space, *check, *samples),
        Verb::AppendixCheck { p, grid } => appendix_check(ctx, p, *grid),
        Verb::ConvergenceStudy => convergence(ctx),
        Verb::Validate => invalid("validate is handled before dispatch"),
    }
}

fn distance(ctx: &RunContext) -> Result<(VerbOutput, Value)> {
    let cfg: DistanceConfig = read_config(ctx)?;
    let base = ctx.config_dir();
    let (mu0, mu1) = (cfg.mu0.load(&base)?, cfg.mu1.load(&base)?);
    mu0.ensure_same_domain(&mu1)?;
    if cfg.metric == Metric::Shk {
        for (k, m) in [&mu0, &mu1].iter().enumerate() {
            if (m.mass() - 1.0).abs() >= 1e-8 {
                return invalid(format!("SHK needs probability measures; mass of mu{k} is {}", m.mass()));
            }
        }
    }
    let (hk2, lower, converged) = match cfg.solver {
        SolverChoice::Barrier => {
            let r = hk_distance_squared(&mu0, &mu1, &HkOptions::barrier())?;
            (r.value, r.lower_bound, r.converged)
        }
        SolverChoice::Scaling => {
            let r = hk_distance_squared(&mu0, &mu1, &HkOptions::default())?;
            (r.value, r.lower_bound, r.converged)
        }
        SolverChoice::Exact => {
            let r = hk_exact_small(&mu0, &mu1)?;
            (r.value, r.value - r.gap, true)
        }
    };
    let dist = match cfg.metric {
        Metric::Hk => hk2.max(0.0).sqrt(),
        Metric::Shk => shk_from_hk2(hk2),
    };
    let report = json!({
        "metric": cfg.metric,
        "solver": cfg.solver,
        "hk2": hk2,
        "hk2_lower_bound": lower,
        "distance": dist,
        "squared": dist * dist,
        "mass0": mu0.mass(),
        "mass1": mu1.mass(),
        "converged": converged,
    });
    let status = if converged { Status::Pass } else { Status::SolverFailed("distance solver did not converge".into()) };
    let out = VerbOutput { files: vec![("distance.json".into(), json_bytes(&report)?)], status };
    Ok((out, serde_json::to_value(&cfg)?))
}

fn mm_run(ctx: &RunContext) -> Result<(VerbOutput, Value)> {
    let mut cfg: MmRunConfig = read_config(ctx)?;
    if let Some(s) = ctx.seed {
        cfg.mm.seed = s;
    }
    cfg.bounds.slack *= ctx.tol_scale;
    let mu0 = cfg.initial.load(&ctx.config_dir())?;
    let entropy = entropy_of(&cfg.entropy)?;
    let traj = run_mm(&mu0, &entropy, &cfg.mm)?;
    let bounds = match cfg.mm.metric {
        Metric::Hk => check_density_bounds_hk(&traj, &entropy, &cfg.bounds),
        Metric::Shk => check_density_bounds_shk(&traj, cfg.bounds.slack),
    };
    let run = RunFile { entropy: cfg.entropy.clone(), trajectory: traj.to_json_value() };
    let status = if let Some(m) = unconverged(&traj) {
        Status::SolverFailed(m)
    } else if !bounds.all_pass() {
        let failed: Vec<&str> = bounds.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Status::AssertionFailed(format!("density bounds violated: {}", failed.join(", ")))
    } else {
        Status::Pass
    };
    let files = vec![
        ("run.json".into(), json_bytes(&run)?),
        ("steps.csv".into(), traj.to_csv().into_bytes()),
        ("bounds.json".into(), json_bytes(&bounds)?),
    ];
    Ok((VerbOutput { files, status }, serde_json::to_value(&cfg)?))
}

fn evi_check(
    ctx: &RunContext,
    trajectory: Option<PathBuf>,
    observers: Option<PathBuf>,
    lambda: Option<f64>,
    kappa: Option<f64>,
) -> Result<(VerbOutput, Value)> {
    let mut cfg: EviCheckConfig = read_config_or(ctx, || Ok(EviCheckConfig::default()))?;
    let base = ctx.config_dir();
    let traj_path = match (&trajectory, &cfg.trajectory) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => base.join(p),
        (None, None) => return invalid("evi-check needs a trajectory (--trajectory or config)"),
    };
    let obs_path = match (&observers, &cfg.observers) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(p)) => Some(base.join(p)),
        (None, None) => None,
    };
    cfg.trajectory = Some(traj_path.display().to_string());
    cfg.observers = obs_path.as_ref().map(|p| p.display().to_string());
    if lambda.is_some() {
        cfg.lambda = lambda;
    }
    if let Some(k) = kappa {
        cfg.kappa = k;
    }

    let run: RunFile = serde_json::from_str(&std::fs::read_to_string(&traj_path)?)?;
    let entropy = entropy_of(&run.entropy)?;
    let traj = MmTrajectory::from_json_value(run.trajectory)?;
    let lam = cfg.lambda.unwrap_or_else(|| entropy.lambda());
    let mu0 = &traj.measures[0];
    let obs: Vec<Observer> = match &obs_path {
        Some(p) => {
            let list: Vec<ObserverJson> = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            list.into_iter()
                .map(|o| Ok(Observer { id: o.id, measure: measure_like(mu0, o.density)? }))
                .collect::<Result<_>>()?
        }
        None => default_observers(mu0, traj.metric)?,
    };
    let report = evi_report(&Curve::from_trajectory(&traj), &obs, lam, &entropy, traj.metric)?;
    let budget = error_budget(&traj, cfg.kappa, lam)?;
    let ts = ctx.tol_scale;
    let budget_ok = budget.weighted_l1 <= budget.bound * (1.0 + 1e-9 * ts) + 1e-12 * ts;

    let mut budget_csv = String::from("k,t,delta,delta_zero,cumulative\n");
    for (k, d) in budget.delta.iter().enumerate() {
        budget_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            k,
            f(k as f64 * traj.tau),
            f(*d),
            f(budget.delta_zero[k]),
            f(budget.cumulative[k + 1])
        ));
    }
    let summary = json!({
        "metric": traj.metric,
        "tau": traj.tau,
        "steps": traj.records.len(),
        "lambda": lam,
        "lambda_star": report.lambda_star,
        "kappa": cfg.kappa,
        "observers": report.observers,
        "quadrature": report.quadrature,
        "worst_residual_lambda_star": report.worst_lambda_star,
        "worst_residual_lambda": report.worst_lambda,
        "budget": {
            "slope0": budget.slope0,
            "weighted_l1": budget.weighted_l1,
            "weighted_l1_zero": budget.weighted_l1_zero,
            "bound": budget.bound,
            "pass": budget_ok,
        },
    });
    let status = if budget_ok {
        Status::Pass
    } else {
        Status::AssertionFailed(format!("error budget {} exceeds bound {}", budget.weighted_l1, budget.bound))
    };
    let files = vec![
        ("residuals.csv".into(), report.to_csv().into_bytes()),
        ("budget.csv".into(), budget_csv.into_bytes()),
        ("summary.json".into(), json_bytes(&summary)?),
    ];
    Ok((VerbOutput { files, status }, serde_json::to_value(&cfg)?))
}

fn pde_compare(ctx: &RunContext) -> Result<(VerbOutput, Value)> {
    let mut cfg: PdeCompareConfig = read_config(ctx)?;
    if let Some(s) = ctx.seed {
        cfg.mm.seed = s;
    }
    let mu0 = cfg.initial.load(&ctx.config_dir())?;
    let entropy = entropy_of(&cfg.entropy)?;
    let rep = mm_pde_sweep(&mu0, &entropy, cfg.metric, &cfg.taus, &cfg.pde, &cfg.mm)?;
    let mut csv = String::from("tau,L1_gap,runtime\n");
    for r in &rep.rows {
        csv.push_str(&format!("{},{},{}\n", f(r.tau), f(r.l1_gap), f(r.runtime)));
    }
    // Runtimes stay out of the verdict so it is reproducible.
    let verdict = json!({
        "metric": rep.metric,
        "t_end": rep.t_end,
        "taus": rep.rows.iter().map(|r| r.tau).collect::<Vec<_>>(),
        "l1_gaps": rep.rows.iter().map(|r| r.l1_gap).collect::<Vec<_>>(),
        "monotone": rep.monotone,
    });
    let status = if rep.monotone {
        Status::Pass
    } else {
        let gaps: Vec<String> = rep.rows.iter().map(|r| format!("{:.4e}", r.l1_gap)).collect();
        Status::AssertionFailed(format!("L1 gaps are not decreasing in τ: [{}]", gaps.join(", ")))
    };
    let files = vec![("sweep.csv".into(), csv.into_bytes()), ("verdict.json".into(), json_bytes(&verdict)?)];
    Ok((VerbOutput { files, status }, serde_json::to_value(&cfg)?))
}

fn random_point(space: ProbeSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match space {
        ProbeSpace::Euclid => vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        ProbeSpace::Cone => vec![rng.gen_range(0.0..PI), rng.gen_range(0.1..2.0)],
        // Positions within π/2 of each other keep every pair on a one-Dirac geodesic.
        ProbeSpace::Hk2 => vec![rng.gen_range(0.0..1.5), rng.gen_range(0.1..2.0)],
    }
}

/// Worst residual of one sampled configuration and the constant-speed residual of its geodesics.
struct ProbeSample {
    residual: f64,
    speed: f64,
    points: Vec<Vec<f64>>,
}

fn speed_residual(probe: &MetricSpaceProbe, g: &crate::geometry::Geodesic) -> f64 {
    let ts: Vec<f64> = (0..=16).map(|i| i as f64 / 16.0).collect();
    g.sample(&ts).constant_speed_residual(probe)
}

fn geometry_probe(
    ctx: &RunContext,
    space: Option<ProbeSpace>,
    check: Option<ProbeCheck>,
    samples: Option<usize>,
) -> Result<(VerbOutput, Value)> {
    let mut cfg: GeometryProbeConfig = read_config_or(ctx, || match (space, check) {
        (Some(space), Some(check)) => Ok(GeometryProbeConfig { space, check, samples: samples.unwrap_or(500) }),
        _ => invalid("geometry-probe needs --space and --check, or a config"),
    })?;
    if let Some(s) = space {
        cfg.space = s;
    }
    if let Some(c) = check {
        cfg.check = c;
    }
    if let Some(n) = samples {
        cfg.samples = n;
    }
    if cfg.samples == 0 {
        return invalid("need at least one sample");
    }
    let ts = ctx.tol_scale;
    let seed = ctx.seed();
    let report = if cfg.check == ProbeCheck::Appendix {
        let acfg = AppendixCheckConfig::default();
        let (value, ok, msg) = appendix_report(&acfg.p, acfg.grid, ts)?;
        json!({ "space": cfg.space, "check": cfg.check, "appendix": value, "pass": ok, "message": msg })
    } else {
        let probe = match cfg.space {
            ProbeSpace::Euclid => MetricSpaceProbe::euclid(2),
            ProbeSpace::Cone => MetricSpaceProbe::cone(PI)?,
            ProbeSpace::Hk2 => MetricSpaceProbe::hk2(),
        };
        let arity = if cfg.check == ProbeCheck::Kappa { 3 } else { 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tuples: Vec<Vec<Vec<f64>>> =
            (0..cfg.samples).map(|_| (0..arity).map(|_| random_point(cfg.space, &mut rng)).collect()).collect();
        let lac_tol = 1e-6 * ts;
        let results = tuples
            .into_par_iter()
            .map(|pts| -> Result<ProbeSample> {
                let x = &pts[0];
                let (residual, speed) = match cfg.check {
                    ProbeCheck::Lac => {
                        let g: Vec<_> = pts[1..].iter().map(|y| probe.geodesic(x, y)).collect::<Result<_>>()?;
                        let rep = check_lac(&g[0], &g[1], &g[2], lac_tol)?;
                        (rep.sum - 2.0 * PI, g.iter().map(|g| speed_residual(&probe, g)).fold(0.0, f64::max))
                    }
                    ProbeCheck::Cs => {
                        let r = check_cauchy_schwarz_type(&probe, x, &pts[1], &pts[2], &pts[3])?;
                        let sp = pts[1..]
                            .iter()
                            .map(|y| Ok(speed_residual(&probe, &probe.geodesic(x, y)?)))
                            .collect::<Result<Vec<f64>>>()?
                            .into_iter()
                            .fold(0.0, f64::max);
                        // Stored negated so that larger is worse for every check.
                        (-r, sp)
                    }
                    ProbeCheck::Kappa => {
                        let g = probe.geodesic(x, &pts[1])?;
                        let o = &pts[2];
                        let d = g.length();
                        let rep = check_kappa_concavity(|t| 0.5 * probe.distance(&g.at(t), o).powi(2), d * d, 64);
                        (rep.worst_violation, speed_residual(&probe, &g))
                    }
                    ProbeCheck::Appendix => unreachable!("handled above"),
                };
                Ok(ProbeSample { residual, speed, points: pts })
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut worst, mut at) = (f64::NEG_INFINITY, 0usize);
        for (k, r) in results.iter().enumerate() {
            if r.residual > worst {
                worst = r.residual;
                at = k;
            }
        }
        let speed = results.iter().map(|r| r.speed).fold(0.0, f64::max);
        let tol = match (cfg.check, cfg.space) {
            (ProbeCheck::Lac, _) => lac_tol,
            (ProbeCheck::Cs, ProbeSpace::Euclid) => 1e-9 * ts,
            (ProbeCheck::Cs, _) => 1e-6 * ts,
            _ => 1e-8 * ts,
        };
        let pass = worst <= tol && speed <= 1e-8 * ts;
        let (meaning, reported) = match cfg.check {
            ProbeCheck::Lac => ("sum of the three upper angles minus 2π (must be ≤ tolerance)", worst),
            ProbeCheck::Cs => ("smallest Cauchy–Schwarz-type residual (must be ≥ −tolerance)", -worst),
            _ => ("κ-concavity violation of ½d²(·, o) with κ_eff = d²(x, y) (must be ≤ tolerance)", worst),
        };
        json!({
            "space": cfg.space,
            "check": cfg.check,
            "samples": cfg.samples,
            "seed": seed,
            "worst_residual": reported,
            "residual_meaning": meaning,
            "tolerance": tol,
            "worst_at_sample": at,
            "worst_points": results[at].points,
            "worst_constant_speed_residual": speed,
            "pass": pass,
        })
    };
    let pass = report["pass"].as_bool().unwrap_or(false);
    let status = if pass {
        Status::Pass
    } else {
        Status::AssertionFailed(format!("geometry probe {:?}/{:?} failed; see report.json", cfg.space, cfg.check))
    };
    let out = VerbOutput { files: vec![("report.json".into(), json_bytes(&report)?)], status };
    Ok((out, serde_json::to_value(&cfg)?))
}

/// Transfer estimates for each `p`; returns the report, whether all hold, and the first violation.
fn appendix_report(ps: &[f64], grid: usize, ts: f64) -> Result<(Value, bool, Option<String>)> {
    let tol = 1e-9 * ts;
    let mut identities = true;
    for d in [0.3, 1.0, 2.0, 3.1] {
        identities &= reparam_beta(0.0, d)? == 0.0 && reparam_beta(1.0, d)? == 1.0;
        identities &= (reparam_beta(0.5, d)? - 0.5).abs() <= 1e-15;
        identities &= (q_p(1.0, 1.0, d)? - 1.0).abs() <= 1e-14;
        identities &= reparam_r(0.0, d)? == 1.0 && reparam_r(1.0, d)? == 1.0;
        identities &= (reparam_r(0.3, d)? - reparam_r(0.7, d)?).abs() <= 1e-15;
        identities &= (reparam_r(0.5, d)? - (0.5 * d).cos()).abs() <= 1e-14;
    }
    let mut rows = Vec::new();
    let mut msg = None;
    for &p in ps {
        let rep = check_transfer_estimates(p, grid)?;
        let holds = rep.min_q >= 1.0 - tol && rep.min_first >= -tol && rep.min_second >= -tol;
        if !holds && msg.is_none() {
            let (t, d, q) = rep.witness.unwrap_or((rep.argmin_q.0, rep.argmin_q.1, rep.min_q));
            msg = Some(format!("p = {p}: Q_p(t = {t:.6}, δ = {d:.6}) = {q:.9} < 1"));
        }
        rows.push(json!({ "report": rep, "holds": holds }));
    }
    if !identities && msg.is_none() {
        msg = Some("reparametrization identities failed".into());
    }
    let ok = msg.is_none();
    Ok((json!({ "grid": grid, "tolerance": tol, "identities_ok": identities, "results": rows }), ok, msg))
}

fn appendix_check(ctx: &RunContext, p: &[f64], grid: Option<usize>) -> Result<(VerbOutput, Value)> {
    let mut cfg: AppendixCheckConfig = read_config_or(ctx, || Ok(AppendixCheckConfig::default()))?;
    if !p.is_empty() {
        cfg.p = p.to_vec();
    }
    if let Some(g) = grid {
        cfg.grid = g;
    }
    if cfg.p.is_empty() {
        return invalid("no exponents p given");
    }
    let (value, ok, msg) = appendix_report(&cfg.p, cfg.grid, ctx.tol_scale)?;
    let status = match msg {
        None if ok => Status::Pass,
        m => Status::AssertionFailed(m.unwrap_or_default()),
    };
    let out = VerbOutput { files: vec![("appendix.json".into(), json_bytes(&value)?)], status };
    Ok((out, serde_json::to_value(&cfg)?))
}

fn convergence(ctx: &RunContext) -> Result<(VerbOutput, Value)> {
    let mut cfg: ConvergenceStudyConfig = read_config(ctx)?;
    if let Some(s) = ctx.seed {
        cfg.mm.seed = s;
    }
    let mu0 = cfg.initial.load(&ctx.config_dir())?;
    let entropy = entropy_of(&cfg.entropy)?;
    let table = convergence_study(&mu0, &entropy, cfg.metric, &cfg.taus, cfg.t_end, &cfg.mm)?;
    let observers = default_observers(&mu0, cfg.metric)?;
    let evi = table
        .trajectories
        .par_iter()
        .map(|t| {
            Ok(evi_report(&Curve::from_trajectory(t), &observers, entropy.lambda(), &entropy, cfg.metric)?
                .worst_lambda_star)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut csv = String::from("tau,sup_gap,evi_worst_residual\n");
    for (k, tau) in cfg.taus.iter().enumerate() {
        let gap = table.rows.get(k).map(|r| f(r.sup_gap)).unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", f(*tau), gap, f(evi[k])));
    }
    let summary = json!({ "table": table, "evi_worst_residual": evi });
    let status = if table.monotone {
        Status::Pass
    } else {
        Status::AssertionFailed("sup gaps are not decreasing in τ".into())
    };
    let files = vec![
        ("convergence.csv".into(), csv.into_bytes()),
        ("ratios.csv".into(), table.to_csv().into_bytes()),
        ("convergence.json".into(), json_bytes(&summary)?),
    ];
    Ok((VerbOutput { files, status }, serde_json::to_value(&cfg)?))
}
