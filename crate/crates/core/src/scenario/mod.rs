//! TOML scenarios that run several engines on one problem and compare them.
//!
//! ```toml
//! name = "coherent"
//! [thermal]
//! occupation = 1.0
//! [coefficients]
//! source = "preset"
//! name = "optical_sme"
//! lambda = 0.1
//! [initial]
//! kind = "coherent"
//! alpha = [1.0, 0.5]
//! [engines]
//! run = ["gaussian", "fock", "fokker_planck"]
//! [integrator]
//! periods = 2.0
//! ```

mod config;
mod run;
mod validate;

pub use config::{
    load_config, parse_config, CoefficientConfig, Engine, EngineConfig, InitialState, IntegratorConfig,
    OscillatorConfig, OutputConfig, ScenarioConfig, ScheduleSpec, ThermalConfig, Tolerances, SCHEMA,
};
pub use run::{parse_engines, run_scenario, Check, EngineError, EngineSummary, Summary, SUMMARY_SCHEMA};
pub use validate::{validate_config, Diagnostic, Severity, Validation};
