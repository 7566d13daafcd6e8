//! The four subcommands. Each writes its artifacts under an output directory
//! and returns a summary that is also written as JSON.

use crate::config::{EstimateConfig, ObservationSource, RunConfig};
use crate::{CliError, Setup};
use etd_core::forward::{integrate, Mode};
use etd_core::inverse::{lbfgs_bounded, LbfgsOptions, LbfgsStatus, Objective};
use etd_core::linalg::norm_real;
use etd_core::observation::ObservationSet;
use etd_core::problem::check_problem;
use etd_core::sh::io::{write_field, write_ppm};
use etd_core::sh::{generate_observations, ShProblem};
use etd_core::study::{order_study, StudySetup};
use etd_core::tableau::{make_tableau, Scheme};
use etd_core::verify::{adjoint_identity_gap, DirectionCheck, GradientCase};
use etd_core::C64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes a field as float64 binary plus sidecar, and a grayscale pixmap.
fn write_field_set(dir: &Path, name: &str, data: &[f64], p: &ShProblem, time: Option<f64>) -> Result<(), CliError> {
    let (nx, ny) = (p.cfg.nx, p.cfg.ny);
    write_field(&dir.join(name), name, data, nx, ny, time)?;
    write_ppm(&dir.join(format!("{name}.ppm")), data, nx, ny)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub step: usize,
    pub time: f64,
    pub file: Option<String>,
    pub min: f64,
    pub max: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub scheme: Scheme,
    pub mode: Mode,
    pub steps: usize,
    pub t_final: f64,
    pub snapshots: Vec<SnapshotInfo>,
    /// Largest imaginary part of any real-space snapshot.
    pub imag_residue: f64,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateSummary, CliError> {
    let setup = Setup::build(cfg)?;
    fs::create_dir_all(out)?;
    let tab = make_tableau(cfg.scheme);
    let trace = integrate(setup.problem(), &tab, &setup.y0, &setup.params, &setup.grid, cfg.mode, &cfg.phi)?;
    let k_max = trace.num_steps();
    let mut steps = Vec::new();
    if let Some(every) = cfg.simulate.snapshot_every {
        let mut j = 0usize;
        while j as f64 * every <= setup.t_final * (1.0 + 1e-12) {
            steps.push(setup.grid.index_of(j as f64 * every)?);
            j += 1;
        }
    }
    if steps.last() != Some(&k_max) {
        steps.push(k_max);
    }
    let mut snapshots = Vec::new();
    let mut imag_residue = 0.0f64;
    match setup.sh() {
        Some(p) => {
            let fields = out.join("fields");
            fs::create_dir_all(&fields)?;
            let n = p.cfg.len();
            write_field_set(out, "r", &setup.params[..n], p, None)?;
            write_field_set(out, "g", &setup.params[n..], p, None)?;
            for &k in &steps {
                let u = p.field(&trace.states[k]);
                imag_residue = imag_residue.max(p.imag_residue(&trace.states[k]));
                let name = format!("u_{k:06}");
                let t = trace.grid.times[k];
                write_field(&fields.join(&name), "u", &u, p.cfg.nx, p.cfg.ny, Some(t))?;
                snapshots.push(snapshot_info(k, t, Some(format!("fields/{name}.bin")), &u));
            }
            write_ppm(&out.join("final.ppm"), &p.field(trace.final_state()), p.cfg.nx, p.cfg.ny)?;
        }
        None => {
            let mut w = csv::Writer::from_path(out.join("states.csv"))?;
            let n = setup.y0.len();
            let mut header = vec!["step".to_string(), "time".to_string()];
            header.extend((0..n).map(|i| format!("y{i}")));
            w.write_record(&header)?;
            for (k, y) in trace.states.iter().enumerate() {
                let mut row = vec![k.to_string(), trace.grid.times[k].to_string()];
                row.extend(y.iter().map(|v| v.re.to_string()));
                w.write_record(&row)?;
                imag_residue = imag_residue.max(y.iter().map(|v| v.im.abs()).fold(0.0, f64::max));
            }
            w.flush()?;
            for &k in &steps {
                let re: Vec<f64> = trace.states[k].iter().map(|v| v.re).collect();
                snapshots.push(snapshot_info(k, trace.grid.times[k], None, &re));
            }
        }
    }
    let summary = SimulateSummary { scheme: cfg.scheme, mode: cfg.mode, steps: k_max, t_final: setup.t_final, snapshots, imag_residue };
    write_json(&out.join("trace.json"), &summary)?;
    Ok(summary)
}

fn snapshot_info(step: usize, time: f64, file: Option<String>, u: &[f64]) -> SnapshotInfo {
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    SnapshotInfo { step, time, file, min, max, l2: norm_real(u) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlaggedLevel {
    pub seed: u64,
    pub scheme: String,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub mode: Mode,
    pub t_final: f64,
    pub taus: Vec<f64>,
    pub reference_scheme: Scheme,
    pub reference_tau: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<etd_core::study::OrderRow>,
    pub diverged: Vec<FlaggedLevel>,
}

/// Writes `order_study.csv` (scheme, quantity, pair, p), the raw errors in
/// `order_errors.csv` and a JSON summary.
pub fn order_study_cmd(cfg: &RunConfig, out: &Path) -> Result<OrderSummary, CliError> {
    let setup = Setup::build(cfg)?;
    fs::create_dir_all(out)?;
    let os = &cfg.order_study;
    let study = StudySetup {
        schemes: os.schemes.clone(),
        taus: os.taus.clone(),
        t_final: setup.t_final,
        obs_every: os.obs_every,
        mode: cfg.mode,
        phi: cfg.phi.clone(),
    };
    let seeds: Vec<u64> = (0..os.seeds as u64).map(|i| cfg.seed + i).collect();
    let initial: Vec<_> = seeds.iter().map(|&s| setup.seeded_state(s)).collect();
    let res = order_study(setup.problem(), &initial, &setup.params, &study)?;

    let mut w = csv::Writer::from_path(out.join("order_study.csv"))?;
    for row in &res.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("order_errors.csv"))?;
    w.write_record(["seed", "scheme", "tau", "quantity", "error"])?;
    for (si, per_seed) in res.errors.iter().enumerate() {
        for (ki, scheme) in os.schemes.iter().enumerate() {
            for (ti, tau) in res.taus.iter().enumerate() {
                for (qi, q) in etd_core::study::Quantity::ALL.iter().enumerate() {
                    let e = per_seed[ki][ti][qi];
                    w.write_record([seeds[si].to_string(), scheme.name().into(), tau.to_string(), q.name().into(), e.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    let diverged: Vec<FlaggedLevel> =
        res.flagged.iter().map(|(i, scheme, tau)| FlaggedLevel { seed: seeds[*i], scheme: scheme.clone(), tau: *tau }).collect();
    for d in &diverged {
        eprintln!("warning: {} diverged at tau {} (seed {})", d.scheme, d.tau, d.seed);
    }
    let summary = OrderSummary {
        mode: cfg.mode,
        t_final: setup.t_final,
        reference_tau: res.taus.last().copied().unwrap_or(f64::NAN) / 2.0,
        taus: res.taus,
        reference_scheme: Scheme::Krogstad,
        seeds,
        rows: res.rows,
        diverged,
    };
    write_json(&out.join("order_study.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckItem {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
    pub gradient_directions: Vec<DirectionCheck>,
    pub passed: bool,
}

pub const TABLEAU_POINTS: [f64; 4] = [0.0, -0.5, -3.0, -20.0];

/// Problem callbacks, tableau identities, dot-product tests for every scheme
/// and a gradient check for the configured scheme.
pub fn check(cfg: &RunConfig, out: &Path) -> Result<CheckReport, CliError> {
    let setup = Setup::build(cfg)?;
    fs::create_dir_all(out)?;
    let ck = &cfg.check;
    let problem = setup.problem();
    let mut items = Vec::new();

    for e in check_problem(problem, ck.samples, cfg.seed).entries {
        items.push(CheckItem::new(format!("problem/{}", e.name), e.max_discrepancy, e.tolerance));
    }

    for scheme in Scheme::ALL {
        let mut tab = make_tableau(scheme);
        let mut name = format!("tableau/{scheme}");
        if ck.corrupt_tableau && scheme == cfg.scheme {
            tab.b[0][0].weight += 1e-3;
            name.push_str(" (corrupted)");
        }
        let mut worst = 0.0f64;
        for z in TABLEAU_POINTS {
            worst = worst.max(tab.consistency_error(C64::new(z, 0.0), &cfg.phi)?);
        }
        items.push(CheckItem::new(name, worst, ck.tableau_tol));
    }

    for (i, scheme) in Scheme::ALL.into_iter().enumerate() {
        let trace = integrate(problem, &make_tableau(scheme), &setup.y0, &setup.params, &setup.grid, cfg.mode, &cfg.phi)?;
        let gap = adjoint_identity_gap(&trace, problem, ck.pairs, cfg.seed + i as u64)?;
        items.push(CheckItem::new(format!("adjoint/{scheme}"), gap, ck.adjoint_tol));
    }

    let tab = make_tableau(cfg.scheme);
    let truth = integrate(problem, &tab, &setup.y0, &setup.params, &setup.grid, cfg.mode, &cfg.phi)?;
    let observations = exact_observations(&setup, &truth, ck.obs_every)?;
    let case = GradientCase {
        problem,
        tableau: &tab,
        mode: cfg.mode,
        phi: &cfg.phi,
        y0: &setup.y0,
        grid: &setup.grid,
        observations: &observations,
    };
    let dirs = case.check(&gradient_point(&setup), ck.directions, &ck.eps, cfg.seed)?;
    let best = dirs.iter().map(DirectionCheck::best).fold(0.0, f64::max);
    items.push(CheckItem::new("gradient/fd_relative_error", best, ck.gradient_tol));
    if ck.eps.len() >= 2 {
        let worst = dirs.iter().map(|d| (d.observed_order() - 2.0).abs()).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
        items.push(CheckItem::new("gradient/fd_order_deviation_from_2", worst, 0.5));
    }

    let passed = items.iter().all(|i| i.passed);
    let report = CheckReport { items, gradient_directions: dirs, passed };
    write_json(&out.join("check_report.json"), &report)?;
    Ok(report)
}

/// Noise-free observations of a reference trajectory at `every, 2·every, …`.
pub fn exact_observations(setup: &Setup, trace: &etd_core::forward::ForwardTrace, every: f64) -> Result<ObservationSet, CliError> {
    let mut times = Vec::new();
    let mut data = Vec::new();
    let mut j = 1;
    while j as f64 * every <= setup.t_final * (1.0 + 1e-12) {
        let k = setup.grid.index_of(j as f64 * every)?;
        times.push(setup.grid.times[k]);
        data.push(setup.problem().observe(&trace.states[k]));
        j += 1;
    }
    Ok(ObservationSet::new(times, data, 0.0)?)
}

/// A point away from the truth: halfway to `(r, g) = (1, 0)` for
/// Swift-Hohenberg, a uniform shift for the toy.
pub fn gradient_point(setup: &Setup) -> Vec<f64> {
    match setup.sh() {
        Some(p) => {
            let n = p.cfg.len();
            setup.params.iter().enumerate().map(|(i, v)| 0.5 * v + if i < n { 0.5 } else { 0.0 }).collect()
        }
        None => setup.params.iter().map(|v| v + 0.2).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub initial: f64,
    #[serde(rename = "final")]
    pub last: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub status: LbfgsStatus,
    pub iterations: usize,
    pub observations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub initial_misfit: f64,
    pub final_misfit: f64,
    /// `1 − final/initial` misfit.
    pub misfit_reduction: f64,
    /// Relative L2 errors per model segment, when a truth is known.
    pub relative_error: Option<std::collections::BTreeMap<String, ErrorPair>>,
}

pub fn estimate(cfg: &RunConfig, out: &Path) -> Result<EstimateSummary, CliError> {
    let est: &EstimateConfig =
        cfg.estimate.as_ref().ok_or_else(|| CliError::Config("estimate needs an \"estimate\" section".into()))?;
    let setup = Setup::build(cfg)?;
    let Some(p) = setup.sh() else {
        return Err(CliError::Config("estimate needs the swift_hohenberg model".into()));
    };
    fs::create_dir_all(out)?;
    let tab = make_tableau(cfg.scheme);
    let (observations, truth) = match &est.observations {
        ObservationSource::Generate { every, until, noise_frac, noise_seed } => {
            let trace = integrate(p, &tab, &setup.y0, &setup.params, &setup.grid, cfg.mode, &cfg.phi)?;
            let until = until.unwrap_or(setup.t_final);
            let obs = generate_observations(&trace, p, *every, until, *noise_frac, noise_seed.unwrap_or(cfg.seed + 1))?;
            write_json(&out.join("observations.json"), &obs)?;
            (obs, Some(setup.params.clone()))
        }
        ObservationSource::File { path } => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            let raw: ObservationSet = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            let obs = ObservationSet::new(raw.times, raw.data, raw.noise_frac)?;
            (obs, est.truth.map(|t| t.values(&p.cfg)))
        }
    };
    if observations.is_empty() {
        eprintln!("warning: the observation set is empty; the misfit is identically zero");
    }
    let m0 = est.initial_guess.values(&p.cfg);
    let objective = Objective {
        problem: p,
        tableau: &tab,
        mode: cfg.mode,
        phi: &cfg.phi,
        y0: &setup.y0,
        grid: &setup.grid,
        observations: &observations,
        beta: est.objective.beta,
        huber_eps: est.objective.huber_eps,
        field_shape: Some((p.cfg.nx, p.cfg.ny)),
    };
    let (lo, hi) = est.objective.box_for(p)?;
    let opts = LbfgsOptions { memory: est.objective.lbfgs_memory, max_iters: est.objective.max_iters, ..Default::default() };
    let mut f = |m: &[f64]| objective.eval(m);
    let res = lbfgs_bounded(&mut f, &m0, &lo, &hi, &opts)?;

    let mut w = csv::Writer::from_path(out.join("iterates.csv"))?;
    for rec in &res.log {
        w.serialize(rec)?;
    }
    w.flush()?;
    let n = p.cfg.len();
    for (seg, range) in [("r", 0..n), ("g", n..2 * n)] {
        write_field_set(out, &format!("{seg}_recovered"), &res.m[range.clone()], p, None)?;
        write_field_set(out, &format!("{seg}_initial"), &m0[range.clone()], p, None)?;
        if let Some(t) = &truth {
            write_field_set(out, &format!("{seg}_true"), &t[range], p, None)?;
        }
    }
    let relative_error = truth.as_ref().map(|t| {
        [("r", 0..n), ("g", n..2 * n)]
            .into_iter()
            .map(|(seg, range)| {
                let pair = ErrorPair { initial: rel_l2(&m0[range.clone()], &t[range.clone()]), last: rel_l2(&res.m[range.clone()], &t[range]) };
                (seg.to_string(), pair)
            })
            .collect()
    });
    let first = res.log.first().expect("log holds iteration 0");
    let last = res.log.last().expect("log holds iteration 0");
    let summary = EstimateSummary {
        status: res.status,
        iterations: last.iter,
        observations: observations.len(),
        initial_objective: first.objective,
        final_objective: last.objective,
        initial_misfit: first.misfit,
        final_misfit: last.misfit,
        misfit_reduction: if first.misfit > 0.0 { 1.0 - last.misfit / first.misfit } else { 0.0 },
        relative_error,
    };
    write_json(&out.join("estimate_summary.json"), &summary)?;
    Ok(summary)
}

/// `‖a − b‖ / ‖b‖`
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm_real(&d) / norm_real(b).max(1e-300)
}
