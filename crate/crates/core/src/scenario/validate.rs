use std::fmt;

use serde::Serialize;

use super::config::{Engine, InitialState, ScenarioConfig, SCHEMA};
use crate::error::Result;
use crate::model::{lindblad_margin, NoiseCorrelations};
use crate::schedule::CoefficientSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Diagnostics for a configuration and the engines that were switched off
/// because their input cannot be sampled.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Validation {
    pub diagnostics: Vec<Diagnostic>,
    pub disabled: Vec<Engine>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        !self.diagnostics.iter().any(|d| d.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }

    /// Requested engines minus the disabled ones, sorted and deduplicated.
    pub fn engines(&self, cfg: &ScenarioConfig) -> Vec<Engine> {
        let mut run = cfg.engines.run.clone();
        run.sort();
        run.dedup();
        run.retain(|e| !self.disabled.contains(e));
        run
    }

    fn error(&mut self, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        });
    }

    fn warn(&mut self, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        });
    }
}

const SAMPLES: usize = 64;

fn sample_times(t_final: f64) -> impl Iterator<Item = f64> {
    (0..=SAMPLES).map(move |k| t_final * k as f64 / SAMPLES as f64)
}

/// Checks a configuration without running it.
pub fn validate_config(cfg: &ScenarioConfig) -> Validation {
    let mut v = Validation::default();
    if cfg.schema != SCHEMA {
        v.error(format!("unsupported schema `{}` (expected `{SCHEMA}`)", cfg.schema));
    }
    let osc = match cfg.oscillator() {
        Ok(o) => o,
        Err(e) => {
            v.error(format!("oscillator: {e}"));
            return v;
        }
    };
    let cs = match cfg.schedule(&osc) {
        Ok(cs) => cs,
        Err(e) => {
            v.error(format!("coefficients: {e}"));
            return v;
        }
    };
    let t_final = cfg.t_final(&osc);
    if let Err(e) = cfg.time_grid(&osc) {
        v.error(format!("integrator: {e}"));
        return v;
    }
    if let Err(e) = cs.validate_on(0.0, t_final, SAMPLES) {
        v.error(format!("coefficients: {e}"));
    }
    if let Err(e) = cfg.initial.moments(&osc) {
        v.error(format!("initial: {e}"));
    }

    let margin = sample_times(t_final)
        .map(|t| lindblad_margin(&cs, t, &osc))
        .fold(f64::INFINITY, f64::min);
    if margin < 0.0 {
        v.warn(format!(
            "positivity not guaranteed: D_x D_p - D_z^2 - hbar^2 lambda^2 / 4 reaches {margin:e}"
        ));
    }

    let engines = v.engines(cfg);
    if engines.is_empty() {
        v.warn("no engines selected");
    }
    let uses = |e: Engine| engines.contains(&e);
    if uses(Engine::Fock) || uses(Engine::Quantum) {
        check_truncation(cfg, &mut v);
    }
    if uses(Engine::FokkerPlanck) {
        let [nx, np] = cfg.integrator.grid;
        if nx < 8 || np < 8 {
            v.error(format!("integrator.grid must be at least 8 x 8, got {nx} x {np}"));
        }
        if !(cfg.integrator.grid_sigmas > 0.0) {
            v.error("integrator.grid_sigmas must be positive");
        }
    }
    if uses(Engine::Propagator) && !translation_invariant(&cs, t_final) {
        v.error("propagator engine compares reference frames and needs translation-invariant damping lambda = mu");
    }
    if uses(Engine::Stochastic) || uses(Engine::Quantum) {
        check_noise(cfg, &cs, t_final, &mut v);
    }
    v
}

fn translation_invariant(cs: &CoefficientSchedule, t_final: f64) -> bool {
    sample_times(t_final).all(|t| cs.is_translation_invariant_at(t))
}

fn check_truncation(cfg: &ScenarioConfig, v: &mut Validation) {
    let n_max = cfg.integrator.n_max;
    if n_max < 2 {
        v.error(format!("integrator.n_max must be at least 2, got {n_max}"));
    }
    if let InitialState::Fock { n } = cfg.initial {
        if n + 2 >= n_max {
            v.error(format!("initial number state {n} does not fit below n_max = {n_max}"));
        }
    }
}

fn check_noise(cfg: &ScenarioConfig, cs: &CoefficientSchedule, t_final: f64, v: &mut Validation) {
    let stochastic = [Engine::Stochastic, Engine::Quantum];
    if !translation_invariant(cs, t_final) {
        v.error("stochastic and quantum engines are driven by two forces and need lambda = mu");
        return;
    }
    if cfg.integrator.n_traj < 100 {
        v.error(format!(
            "integrator.n_traj must be at least 100, got {}",
            cfg.integrator.n_traj
        ));
    }
    let nc = match NoiseCorrelations::matching(cs) {
        Ok(nc) => nc,
        Err(e) => {
            v.error(e.to_string());
            return;
        }
    };
    let unsamplable: Vec<f64> = sample_times(t_final)
        .filter(|&t| nc.check_samplable(t).is_err())
        .collect();
    if let Some(&t) = unsamplable.first() {
        v.warn(format!(
            "force noise has no real covariance (A B - C^2 = {:e} at t = {t}); stochastic and quantum engines disabled",
            nc.determinant(t)
        ));
        for e in stochastic {
            if !v.disabled.contains(&e) {
                v.disabled.push(e);
            }
        }
        return;
    }
    let degenerate = sample_times(t_final).any(|t| {
        let (a, b) = (nc.a.at(t), nc.b.at(t));
        nc.determinant(t).abs() <= 1e-12 * (a * b).abs().max(1e-300)
    });
    if degenerate {
        v.warn("force noise covariance is singular; increments are drawn from a single normal");
    }
}

/// [`validate_config`] as a `Result`, failing on the first error.
pub fn ensure_valid(cfg: &ScenarioConfig) -> Result<Validation> {
    let v = validate_config(cfg);
    if let Some(d) = v.errors().next() {
        return Err(crate::Error::Config(d.message.clone()));
    }
    Ok(v)
}
