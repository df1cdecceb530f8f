use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use log::{info, warn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Engine, InitialState, ScenarioConfig};
use super::validate::ensure_valid;
use crate::error::{Error, Result};
use crate::fock::{build_operators, evolve_density, evolve_density_canonical, trace_distance, DensityMatrix, EvolveOptions};
use crate::fokker_planck::{max_stable_dt, FpSolver};
use crate::gaussian::{
    canonical_to_physical, evolve_moments, moment_rel_error, propagator_series, Frame, GaussianState,
};
use crate::model::{lindblad_margin, NoiseCorrelations, OscillatorParams};
use crate::schedule::{CoefficientSchedule, TimeGrid};
use crate::stochastic::{ensemble_average_density, ensemble_covariances, EnsembleMoments, EnsembleSpec, QuantumOptions};
use crate::wigner::{wigner_transform, GridSpec, WignerGrid};

pub const SUMMARY_SCHEMA: &str = "qbm-summary/1";

const MOMENT_COLUMNS: [&str; 6] = ["t", "mean_x", "mean_p", "sxx", "sxp", "spp"];
const SE_COLUMNS: [&str; 5] = ["se_mean_x", "se_mean_p", "se_sxx", "se_sxp", "se_spp"];

/// One acceptance check from the configured tolerances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value <= limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value >= limit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EngineSummary {
    pub engine: Engine,
    /// `[⟨x⟩, ⟨p⟩, σ_xx, σ_xp, σ_pp]` at the final time.
    pub final_moments: [f64; 5],
    pub runtime_s: f64,
    /// Engine-specific scalars, e.g. the largest deviation from the
    /// Gaussian moments.
    pub metrics: BTreeMap<String, f64>,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EngineError {
    pub engine: Engine,
    pub message: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub schema: String,
    pub name: String,
    pub t_final: f64,
    pub steps: usize,
    pub margin_min: f64,
    pub margin_max: f64,
    pub diagnostics: Vec<String>,
    pub engines: Vec<EngineSummary>,
    /// Largest disagreement of each engine with its reference, keyed like
    /// the tolerances.
    pub discrepancies: BTreeMap<String, f64>,
    /// Smallest eigenvalue of ρ over the Fock run.
    pub min_eigenvalue: Option<f64>,
    pub checks: Vec<Check>,
    pub errors: Vec<EngineError>,
    pub ok: bool,
}

/// Rows of one engine's output table.
struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(extra: &[&'static str]) -> Self {
        Self {
            columns: MOMENT_COLUMNS.iter().chain(extra).copied().collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, m: [f64; 5], extra: &[f64]) {
        let mut row = vec![t];
        row.extend(m);
        row.extend_from_slice(extra);
        self.rows.push(row);
    }

    fn render(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

struct EngineRun {
    table: Table,
    final_moments: [f64; 5],
    metrics: BTreeMap<String, f64>,
    checks: Vec<Check>,
    fock_final: Option<(DensityMatrix, usize)>,
    fp_final: Option<WignerGrid>,
}

impl EngineRun {
    fn new(table: Table) -> Self {
        let final_moments = table
            .rows
            .last()
            .map(|r| [r[1], r[2], r[3], r[4], r[5]])
            .unwrap_or([f64::NAN; 5]);
        Self {
            table,
            final_moments,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            fock_final: None,
            fp_final: None,
        }
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), v);
    }
}

/// Everything the engines share.
struct Setup<'a> {
    cfg: &'a ScenarioConfig,
    osc: OscillatorParams,
    cs: CoefficientSchedule,
    grid: TimeGrid,
    state0: GaussianState,
    reference: Vec<(f64, GaussianState)>,
}

impl Setup<'_> {
    fn rel_error(&self, k: usize, m: &[f64; 5]) -> f64 {
        moment_rel_error(&self.reference[k].1.moments(), m, &self.osc)
    }

    fn noise(&self) -> Result<NoiseCorrelations> {
        NoiseCorrelations::matching(&self.cs)
    }

    fn initial_density(&self, dim: usize) -> Result<DensityMatrix> {
        match self.cfg.initial {
            InitialState::Fock { n } => DensityMatrix::fock(dim, n),
            InitialState::Coherent { alpha } => Ok(DensityMatrix::coherent(dim, Complex64::new(alpha[0], alpha[1]))),
            InitialState::Thermal { n_bar } => Ok(DensityMatrix::thermal(dim, n_bar)),
            InitialState::Squeezed { r, phi } => Ok(DensityMatrix::squeezed(dim, r, phi)),
            InitialState::Gaussian { .. } => DensityMatrix::gaussian(&self.osc, &self.state0, dim),
        }
    }
}

/// Runs a scenario, writing one CSV per engine and `summary.json` to
/// `out_dir` (or the configured directory).
///
/// Engine failures are recorded in the summary rather than returned; only an
/// invalid configuration or an I/O failure is an `Err`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<Summary> {
    let validation = ensure_valid(cfg)?;
    let cfg = &cfg.resolved();
    let out_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out_dir)?;
    // sequential and parallel runs share one header
    let header = {
        let mut recorded = cfg.clone();
        recorded.engines.parallel = false;
        recorded.to_toml()
    };

    let osc = cfg.oscillator()?;
    let cs = cfg.schedule(&osc)?;
    let grid = cfg.time_grid(&osc)?;
    let state0 = cfg.initial.moments(&osc)?;
    let reference = evolve_moments(&state0, &osc, &cs, &grid)?;
    let setup = Setup {
        cfg,
        osc,
        cs,
        grid,
        state0,
        reference,
    };

    let engines = validation.engines(cfg);
    info!("running {} engines: {:?}", engines.len(), engines);
    let run_one = |e: &Engine| {
        let start = Instant::now();
        let r = run_engine(*e, &setup).map_err(|err| {
            let stamp = humantime::format_rfc3339_millis(SystemTime::now()).to_string();
            (err.in_engine(e.name()), stamp)
        });
        let dt = start.elapsed().as_secs_f64();
        info!("{e} finished in {dt:.3} s");
        (*e, r, dt)
    };
    let results: Vec<_> = if cfg.engines.parallel {
        engines.par_iter().map(run_one).collect()
    } else {
        engines.iter().map(run_one).collect()
    };

    let margins: Vec<f64> = setup
        .reference
        .iter()
        .map(|(t, _)| lindblad_margin(&setup.cs, *t, &setup.osc))
        .collect();
    let mut summary = Summary {
        schema: SUMMARY_SCHEMA.into(),
        name: cfg.name.clone(),
        t_final: setup.grid.time(setup.grid.steps()),
        steps: setup.grid.steps(),
        margin_min: margins.iter().copied().fold(f64::INFINITY, f64::min),
        margin_max: margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        diagnostics: validation.diagnostics.iter().map(|d| d.to_string()).collect(),
        engines: Vec::new(),
        discrepancies: BTreeMap::new(),
        min_eigenvalue: None,
        checks: Vec::new(),
        errors: Vec::new(),
        ok: true,
    };
    let mut fock_final = None;
    let mut fp_final = None;
    for (engine, r, runtime_s) in results {
        match r {
            Ok(run) => {
                let path = out_dir.join(format!("{engine}.csv"));
                std::fs::write(&path, run.table.render(&header))?;
                summary.checks.extend(run.checks);
                for (k, v) in &run.metrics {
                    if let Some(key) = discrepancy_key(engine, k) {
                        summary.discrepancies.insert(key, *v);
                    }
                }
                if engine == Engine::Fock {
                    summary.min_eigenvalue = run.metrics.get("min_eigenvalue").copied();
                }
                fock_final = fock_final.or(run.fock_final);
                fp_final = fp_final.or(run.fp_final);
                summary.engines.push(EngineSummary {
                    engine,
                    final_moments: run.final_moments,
                    runtime_s,
                    metrics: run.metrics,
                    files: vec![path],
                });
            }
            Err((e, timestamp)) => {
                warn!("{e}");
                summary.errors.push(EngineError {
                    engine,
                    message: e.to_string(),
                    timestamp,
                });
            }
        }
    }
    if cfg.output.wigner_snapshots {
        write_snapshots(&setup, &out_dir, fock_final, fp_final, &mut summary)?;
    }
    summary.ok = summary.errors.is_empty() && summary.checks.iter().all(|c| c.passed);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    Ok(summary)
}

fn discrepancy_key(engine: Engine, metric: &str) -> Option<String> {
    let name = match (engine, metric) {
        (Engine::FokkerPlanck, "max_rel_error_vs_gaussian") => "fp_vs_gaussian",
        (Engine::FokkerPlanck, "max_abs_wigner_vs_fock") => "fp_wigner_vs_fock",
        (Engine::Fock, "max_rel_error_vs_gaussian") => "fock_vs_gaussian",
        (Engine::Stochastic, "max_z_vs_gaussian") => "stochastic_z",
        (Engine::Quantum, "max_z_vs_gaussian") => "quantum_z",
        (Engine::Quantum, "max_trace_distance") => "quantum_trace_distance",
        (Engine::Propagator, "max_frames_error") => "propagator_frames",
        _ => return None,
    };
    Some(name.into())
}

fn write_snapshots(
    setup: &Setup,
    out_dir: &Path,
    fock_final: Option<(DensityMatrix, usize)>,
    fp_final: Option<WignerGrid>,
    summary: &mut Summary,
) -> Result<()> {
    let Some(w_fp) = fp_final else {
        return Ok(());
    };
    let path = out_dir.join("fokker_planck_final.bin");
    w_fp.write_binary(&path)?;
    push_file(summary, Engine::FokkerPlanck, path);
    if let Some((rho, n_max)) = fock_final {
        let ops = build_operators(&setup.osc, n_max)?;
        let w_fock = wigner_transform(&rho, &ops, &w_fp.spec)?;
        let path = out_dir.join("fock_wigner_final.bin");
        w_fock.write_binary(&path)?;
        push_file(summary, Engine::Fock, path);
        let diff = w_fp
            .values
            .iter()
            .zip(&w_fock.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if let Some(s) = summary.engines.iter_mut().find(|s| s.engine == Engine::FokkerPlanck) {
            s.metrics.insert("max_abs_wigner_vs_fock".into(), diff);
        }
        summary.discrepancies.insert("fp_wigner_vs_fock".into(), diff);
    }
    Ok(())
}

fn push_file(summary: &mut Summary, engine: Engine, path: PathBuf) {
    if let Some(s) = summary.engines.iter_mut().find(|s| s.engine == engine) {
        s.files.push(path);
    }
}

fn run_engine(engine: Engine, s: &Setup) -> Result<EngineRun> {
    match engine {
        Engine::Gaussian => run_gaussian(s),
        Engine::Fock => run_fock(s),
        Engine::FokkerPlanck => run_fokker_planck(s),
        Engine::Stochastic => run_stochastic(s),
        Engine::Quantum => run_quantum(s),
        Engine::Propagator => run_propagator(s),
    }
}

fn run_gaussian(s: &Setup) -> Result<EngineRun> {
    let mut table = Table::new(&["det_m", "margin"]);
    for (t, g) in &s.reference {
        table.push(*t, g.moments(), &[g.det(), lindblad_margin(&s.cs, *t, &s.osc)]);
    }
    let mut run = EngineRun::new(table);
    let min_det = s.reference.iter().map(|(_, g)| g.det()).fold(f64::INFINITY, f64::min);
    run.metric("min_det_over_hbar2_4", min_det / (0.25 * s.osc.hbar * s.osc.hbar));
    if let (Some((_, first)), Some((t, last))) = (s.reference.first(), s.reference.last()) {
        if *t > 0.0 {
            run.metric("det_m_decay_rate", (first.det() / last.det()).ln() / t);
        }
    }
    Ok(run)
}

fn run_fock(s: &Setup) -> Result<EngineRun> {
    let n_max = s.cfg.integrator.n_max;
    let ops = build_operators(&s.osc, n_max)?;
    let rho0 = s.initial_density(ops.dim())?;
    let opts = EvolveOptions {
        leakage_threshold: s.cfg.integrator.leakage_threshold,
        track_min_eig: true,
        keep_states: false,
    };
    let ev = evolve_density(&rho0, &ops, &s.cs, &s.grid, &opts)?;
    let mut table = Table::new(&["purity", "min_eig", "leakage", "trace"]);
    let mut dev: f64 = 0.0;
    for (k, (t, o)) in ev.times.iter().zip(&ev.observables).enumerate() {
        let m = o.moments();
        dev = dev.max(s.rel_error(k, &m));
        table.push(*t, m, &[o.purity, o.min_eig, o.leakage, o.trace]);
    }
    let min_eig = ev.observables.iter().map(|o| o.min_eig).fold(f64::INFINITY, f64::min);
    let mut run = EngineRun::new(table);
    run.metric("max_rel_error_vs_gaussian", dev);
    run.metric("min_eigenvalue", min_eig);
    run.metric("max_leakage", ev.max_leakage);
    run.metric("max_trace_drift", ev.max_trace_drift);
    let tol = &s.cfg.tolerances;
    if let Some(l) = tol.fock_vs_gaussian {
        run.checks.push(Check::at_most("fock_vs_gaussian", dev, l));
    }
    if let Some(l) = tol.min_eigenvalue {
        run.checks.push(Check::at_least("min_eigenvalue", min_eig, l));
    }
    run.fock_final = Some((ev.final_state, n_max));
    Ok(run)
}

/// The box covering the reference trajectory's mean ± k·σ at all times.
fn fp_window(s: &Setup) -> GridSpec {
    let k = s.cfg.integrator.grid_sigmas;
    let [nx, np] = s.cfg.integrator.grid;
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut pr = xr;
    for (_, g) in &s.reference {
        let (sx, sp) = (g.cov[(0, 0)].sqrt(), g.cov[(1, 1)].sqrt());
        xr = (xr.0.min(g.mean[0] - k * sx), xr.1.max(g.mean[0] + k * sx));
        pr = (pr.0.min(g.mean[1] - k * sp), pr.1.max(g.mean[1] + k * sp));
    }
    GridSpec::spanning(nx, np, xr, pr)
}

fn fp_initial(s: &Setup, spec: GridSpec) -> Result<WignerGrid> {
    match s.cfg.initial {
        InitialState::Fock { n } if n > 0 => {
            let ops = build_operators(&s.osc, n + 8)?;
            wigner_transform(&DensityMatrix::fock(ops.dim(), n)?, &ops, &spec)
        }
        _ => WignerGrid::from_gaussian(spec, &s.state0),
    }
}

fn run_fokker_planck(s: &Setup) -> Result<EngineRun> {
    let spec = fp_window(s);
    let mut w = fp_initial(s, spec)?;
    let mut solver = FpSolver::new(spec, s.osc)?;
    let h = s.grid.step();
    let mut table = Table::new(&["det_m", "mass"]);
    let record = |table: &mut Table, t: f64, w: &WignerGrid| {
        let g = w.moments();
        let m = g.moments();
        table.push(t, m, &[m[2] * m[4] - m[3] * m[3], g.mass]);
    };
    record(&mut table, 0.0, &w);
    let mass0 = w.moments().mass;
    let mut substeps = 0usize;
    for k in 0..s.grid.steps() {
        let t0 = s.grid.time(k);
        let limit = [t0, t0 + 0.5 * h, t0 + h]
            .iter()
            .map(|&t| max_stable_dt(&spec, &s.osc, &s.cs, t))
            .fold(f64::INFINITY, f64::min);
        let n = ((h / limit).ceil() as usize).max(1);
        let dt = h / n as f64;
        for j in 0..n {
            solver.step(&mut w, &s.cs, t0 + j as f64 * dt, dt)?;
        }
        substeps += n;
        if s.grid.is_output(k + 1) {
            record(&mut table, s.grid.time(k + 1), &w);
        }
    }
    let mut dev: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for (k, r) in table.rows.iter().enumerate() {
        dev = dev.max(s.rel_error(k, &[r[1], r[2], r[3], r[4], r[5]]));
        drift = drift.max((r[7] - mass0).abs());
    }
    let mut run = EngineRun::new(table);
    run.metric("max_rel_error_vs_gaussian", dev);
    run.metric("max_mass_drift", drift);
    run.metric("substeps", substeps as f64);
    run.metric("dx", spec.dx);
    run.metric("dp", spec.dp);
    let tol = &s.cfg.tolerances;
    if let Some(l) = tol.fp_vs_gaussian {
        run.checks.push(Check::at_most("fp_vs_gaussian", dev, l));
    }
    if let Some(l) = tol.fp_mass_drift {
        run.checks.push(Check::at_most("fp_mass_drift", drift, l));
    }
    run.fp_final = Some(w);
    Ok(run)
}

/// Largest |ensemble − reference| in units of the jackknife error.
fn max_z(s: &Setup, ens: &[EnsembleMoments]) -> f64 {
    let scale = crate::gaussian::moment_scales(&s.osc);
    let mut z: f64 = 0.0;
    for (k, e) in ens.iter().enumerate() {
        let r = s.reference[k].1.moments();
        for i in 0..5 {
            let d = (e.moments[i] - r[i]).abs();
            // exact agreement (t = 0 of a pure state) has a zero error bar
            let floor = 1e-12 * scale[i];
            z = z.max(if d <= floor { 0.0 } else { d / e.se[i].max(floor) });
        }
    }
    z
}

fn ensemble_table(ens: &[EnsembleMoments], extra_name: Option<&'static str>, extra: &[f64]) -> Table {
    let mut cols: Vec<&'static str> = SE_COLUMNS.to_vec();
    cols.extend(extra_name);
    let mut table = Table::new(&cols);
    for (k, e) in ens.iter().enumerate() {
        let mut x = e.se.to_vec();
        x.extend(extra.get(k));
        table.push(e.t, e.moments, &x);
    }
    table
}

fn run_stochastic(s: &Setup) -> Result<EngineRun> {
    let nc = s.noise()?;
    let spec = EnsembleSpec {
        n_traj: s.cfg.integrator.n_traj,
        seed: s.cfg.integrator.seed,
        initial: s.state0,
    };
    let ens = ensemble_covariances(&spec, &s.osc, &nc, &s.grid)?;
    let z = max_z(s, &ens);
    let mut run = EngineRun::new(ensemble_table(&ens, None, &[]));
    run.metric("max_z_vs_gaussian", z);
    if let Some(l) = s.cfg.tolerances.stochastic_z {
        run.checks.push(Check::at_most("stochastic_z", z, l));
    }
    Ok(run)
}

fn run_quantum(s: &Setup) -> Result<EngineRun> {
    let nc = s.noise()?;
    let ops = build_operators(&s.osc, s.cfg.integrator.n_max)?;
    let rho0 = s.initial_density(ops.dim())?;
    let thr = s.cfg.integrator.leakage_threshold;
    let ens = ensemble_average_density(
        &rho0,
        &ops,
        &nc,
        s.cfg.integrator.n_traj,
        &s.grid,
        s.cfg.integrator.seed,
        &QuantumOptions {
            leakage_threshold: s.cfg.integrator.trajectory_leakage_threshold,
        },
    )?;
    let exact = evolve_density_canonical(
        &rho0,
        &ops,
        &nc,
        &s.grid,
        &EvolveOptions {
            leakage_threshold: thr,
            track_min_eig: false,
            keep_states: true,
        },
    )?;
    let td = ens
        .states
        .iter()
        .zip(&exact.states)
        .map(|(a, b)| trace_distance(a, b))
        .collect::<Result<Vec<f64>>>()?;
    let max_td = td.iter().copied().fold(0.0, f64::max);
    let z = max_z(s, &ens.moments);
    let mut run = EngineRun::new(ensemble_table(&ens.moments, Some("trace_distance"), &td));
    run.metric("max_trace_distance", max_td);
    run.metric("max_z_vs_gaussian", z);
    run.metric("max_leakage", ens.max_leakage);
    if let Some(l) = s.cfg.tolerances.quantum_trace_distance {
        run.checks.push(Check::at_most("quantum_trace_distance", max_td, l));
    }
    Ok(run)
}

fn run_propagator(s: &Setup) -> Result<EngineRun> {
    let phys = propagator_series(&s.osc, &s.cs, Frame::Physical, &s.grid)?;
    let canon = propagator_series(&s.osc, &s.cs, Frame::Canonical, &s.grid)?;
    let mut table = Table::new(&["frames_error", "reference_error"]);
    let (mut frames, mut refd): (f64, f64) = (0.0, 0.0);
    for (k, ((t, rp), (_, rc))) in phys.iter().zip(&canon).enumerate() {
        let a = rp.apply(&s.state0);
        let c = rc.apply(&s.state0);
        let b = canonical_to_physical(c.mean, c.cov, s.cs.gamma(*t));
        let e = moment_rel_error(&a.moments(), &b.moments(), &s.osc);
        let r = s.rel_error(k, &a.moments());
        frames = frames.max(e);
        refd = refd.max(r);
        table.push(*t, a.moments(), &[e, r]);
    }
    let mut run = EngineRun::new(table);
    run.metric("max_frames_error", frames);
    run.metric("max_rel_error_vs_gaussian", refd);
    if let Some(l) = s.cfg.tolerances.propagator_frames {
        run.checks.push(Check::at_most("propagator_frames", frames, l));
    }
    Ok(run)
}

/// Parses a comma-separated engine list such as `gaussian,fock`.
pub fn parse_engines(list: &str) -> Result<Vec<Engine>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

