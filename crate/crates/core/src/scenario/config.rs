use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::model::{preset, OscillatorParams, Preset, ThermalSpec};
use crate::schedule::{CoefficientSchedule, Schedule, TimeGrid};

pub const SCHEMA: &str = "qbm-scenario/1";

/// A scenario document. Every field has a default, so an empty document is
/// a valid (if dull) scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub schema: String,
    pub name: String,
    pub output_dir: PathBuf,
    pub oscillator: OscillatorConfig,
    pub thermal: ThermalConfig,
    pub coefficients: CoefficientConfig,
    pub initial: InitialState,
    pub engines: EngineConfig,
    pub integrator: IntegratorConfig,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA.into(),
            name: "scenario".into(),
            output_dir: PathBuf::from("qbm-out"),
            oscillator: OscillatorConfig::default(),
            thermal: ThermalConfig::default(),
            coefficients: CoefficientConfig::default(),
            initial: InitialState::default(),
            engines: EngineConfig::default(),
            integrator: IntegratorConfig::default(),
            tolerances: Tolerances::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscillatorConfig {
    pub mass: f64,
    pub omega0: f64,
    pub hbar: f64,
}

impl Default for OscillatorConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            omega0: 1.0,
            hbar: 1.0,
        }
    }
}

/// Bath temperature. `occupation`, when given, overrides `temperature`
/// (with k_B = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalConfig {
    pub temperature: f64,
    pub boltzmann: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupation: Option<f64>,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            boltzmann: 1.0,
            occupation: None,
        }
    }
}

/// A constant or a `[[t, value], ...]` table with linear interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Constant(f64),
    Table(Vec<[f64; 2]>),
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Constant(0.0)
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<Schedule> {
        match self {
            ScheduleSpec::Constant(v) => Ok(Schedule::Constant(*v)),
            ScheduleSpec::Table(k) => Schedule::table(k.iter().map(|&[t, v]| (t, v)).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientConfig {
    /// A named family; `dx`, `dp`, `dz` are read only by `dekker_custom`.
    Preset {
        name: String,
        lambda: f64,
        #[serde(default)]
        dx: ScheduleSpec,
        #[serde(default)]
        dp: ScheduleSpec,
        #[serde(default)]
        dz: ScheduleSpec,
    },
    Explicit {
        lambda: ScheduleSpec,
        #[serde(default)]
        mu: ScheduleSpec,
        #[serde(default)]
        dx: ScheduleSpec,
        #[serde(default)]
        dp: ScheduleSpec,
        #[serde(default)]
        dz: ScheduleSpec,
    },
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        CoefficientConfig::Preset {
            name: "optical_sme".into(),
            lambda: 0.1,
            dx: ScheduleSpec::default(),
            dp: ScheduleSpec::default(),
            dz: ScheduleSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Coherent {
        /// [Re α, Im α]
        alpha: [f64; 2],
    },
    Thermal {
        n_bar: f64,
    },
    Squeezed {
        r: f64,
        #[serde(default)]
        phi: f64,
    },
    Fock {
        n: usize,
    },
    /// Explicit moments: mean = [⟨x⟩, ⟨p⟩], cov = [σ_xx, σ_xp, σ_pp].
    Gaussian {
        mean: [f64; 2],
        cov: [f64; 3],
    },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Coherent { alpha: [1.0, 0.0] }
    }
}

impl InitialState {
    /// Mean and covariance of the initial state. For a number state these are
    /// its exact first and second moments.
    pub fn moments(&self, osc: &OscillatorParams) -> Result<GaussianState> {
        Ok(match *self {
            InitialState::Coherent { alpha } => GaussianState::coherent(osc, Complex64::new(alpha[0], alpha[1])),
            InitialState::Thermal { n_bar } => {
                if !(n_bar >= 0.0) {
                    return Err(Error::InvalidParameter(format!("n_bar must be >= 0, got {n_bar}")));
                }
                GaussianState::thermal(osc, n_bar)
            }
            InitialState::Squeezed { r, phi } => GaussianState::squeezed(osc, r, phi),
            InitialState::Fock { n } => GaussianState::thermal(osc, n as f64),
            InitialState::Gaussian { mean, cov } => GaussianState::new(
                nalgebra::Vector2::new(mean[0], mean[1]),
                nalgebra::Matrix2::new(cov[0], cov[1], cov[1], cov[2]),
            )?,
        })
    }

    /// Whether the Wigner function is the Gaussian with [`Self::moments`].
    pub fn is_gaussian(&self) -> bool {
        !matches!(self, InitialState::Fock { n } if *n > 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Gaussian,
    Fock,
    FokkerPlanck,
    Stochastic,
    Quantum,
    Propagator,
}

impl Engine {
    pub const ALL: [Engine; 6] = [
        Engine::Gaussian,
        Engine::Fock,
        Engine::FokkerPlanck,
        Engine::Stochastic,
        Engine::Quantum,
        Engine::Propagator,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Gaussian => "gaussian",
            Engine::Fock => "fock",
            Engine::FokkerPlanck => "fokker_planck",
            Engine::Stochastic => "stochastic",
            Engine::Quantum => "quantum",
            Engine::Propagator => "propagator",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp" => Ok(Engine::FokkerPlanck),
            _ => Engine::ALL
                .into_iter()
                .find(|e| e.name() == s)
                .ok_or_else(|| Error::Config(format!("unknown engine `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub run: Vec<Engine>,
    /// Run the engines concurrently; outputs are identical either way.
    pub parallel: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            run: vec![Engine::Gaussian, Engine::Fock],
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    /// Final time; takes precedence over `periods`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    /// Final time in oscillator periods.
    pub periods: f64,
    /// Step size; one two-hundredth of a period when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub output_every: usize,
    pub n_max: usize,
    /// Fokker–Planck grid nodes [nx, np].
    pub grid: [usize; 2],
    /// Half-width of the Fokker–Planck window in standard deviations around
    /// the moment trajectory.
    pub grid_sigmas: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Largest population of the two top number states in the Fock engine.
    pub leakage_threshold: f64,
    /// The same bound applied to every quantum trajectory.
    pub trajectory_leakage_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            t_final: None,
            periods: 1.0,
            dt: None,
            output_every: 10,
            n_max: 60,
            grid: [256, 256],
            grid_sigmas: 8.0,
            n_traj: 2000,
            seed: 1,
            leakage_threshold: 1e-8,
            trajectory_leakage_threshold: 1e-6,
        }
    }
}

/// Acceptance limits; a missing entry is not checked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest moment relative error of the Fock engine against the Gaussian engine.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fock_vs_gaussian: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fp_vs_gaussian: Option<f64>,
    /// Largest |stochastic − gaussian| in units of the jackknife error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stochastic_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantum_trace_distance: Option<f64>,
    /// Lower bound on the smallest eigenvalue of ρ over the Fock run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_eigenvalue: Option<f64>,
    /// Largest |mass − mass₀| of the Fokker–Planck grid per period.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fp_mass_drift: Option<f64>,
    /// Largest moment relative error between the canonical- and
    /// physical-frame propagators.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propagator_frames: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write the final Fokker–Planck grid and the Wigner function of the
    /// final Fock state on the same grid.
    pub wigner_snapshots: bool,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}

impl ScenarioConfig {
    pub fn oscillator(&self) -> Result<OscillatorParams> {
        let o = self.oscillator;
        OscillatorParams::new(o.mass, o.omega0, o.hbar)
    }

    pub fn thermal_spec(&self, osc: &OscillatorParams) -> Result<ThermalSpec> {
        match self.thermal.occupation {
            Some(n) => ThermalSpec::from_occupation(osc, n),
            None => ThermalSpec::new(self.thermal.temperature, self.thermal.boltzmann),
        }
    }

    pub fn schedule(&self, osc: &OscillatorParams) -> Result<CoefficientSchedule> {
        match &self.coefficients {
            CoefficientConfig::Preset {
                name,
                lambda,
                dx,
                dp,
                dz,
            } => {
                let kind = match name.parse::<Preset>()? {
                    Preset::DekkerCustom { .. } => Preset::dekker(dx.build()?, dp.build()?, dz.build()?),
                    k => k,
                };
                preset(&kind, osc, &self.thermal_spec(osc)?, *lambda)
            }
            CoefficientConfig::Explicit {
                lambda,
                mu,
                dx,
                dp,
                dz,
            } => Ok(CoefficientSchedule {
                lambda: lambda.build()?,
                mu: mu.build()?,
                dx: dx.build()?,
                dp: dp.build()?,
                dz: dz.build()?,
            }),
        }
    }

    pub fn t_final(&self, osc: &OscillatorParams) -> f64 {
        self.integrator
            .t_final
            .unwrap_or(self.integrator.periods * osc.period())
    }

    pub fn dt(&self, osc: &OscillatorParams) -> f64 {
        self.integrator.dt.unwrap_or(osc.period() / 200.0)
    }

    pub fn time_grid(&self, osc: &OscillatorParams) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.t_final(osc), self.dt(osc))?.with_output_every(self.integrator.output_every))
    }

    /// The configuration with derived defaults written out: `t_final` and
    /// `dt` are set and the engine list is sorted and deduplicated.
    pub fn resolved(&self) -> ScenarioConfig {
        let mut c = self.clone();
        if let Ok(osc) = self.oscillator() {
            c.integrator.t_final = Some(self.t_final(&osc));
            c.integrator.dt = Some(self.dt(&osc));
        }
        c.engines.run.sort();
        c.engines.run.dedup();
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_uses_defaults() {
        assert_eq!(parse_config("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ScenarioConfig::default();
        c.coefficients = CoefficientConfig::Explicit {
            lambda: ScheduleSpec::Table(vec![[0.0, 0.1], [5.0, 0.2]]),
            mu: ScheduleSpec::Constant(0.1),
            dx: ScheduleSpec::Constant(0.01),
            dp: ScheduleSpec::Constant(0.02),
            dz: ScheduleSpec::Constant(0.0),
        };
        c.initial = InitialState::Gaussian {
            mean: [0.1, 0.2],
            cov: [0.5, 0.0, 0.5],
        };
        c.tolerances.fock_vs_gaussian = Some(1e-5);
        let text = c.resolved().to_toml();
        assert_eq!(parse_config(&text).unwrap(), c.resolved());
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = parse_config("[integrator]\ndt = \"fast\"\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_config("[oscilator]\nmass = 1\n").unwrap_err().to_string();
        assert!(err.contains("oscilator"), "{err}");
    }

    #[test]
    fn preset_document() {
        let c = parse_config(
            r#"
            [thermal]
            occupation = 1.0
            [coefficients]
            source = "preset"
            name = "optical_sme"
            lambda = 0.1
            [initial]
            kind = "coherent"
            alpha = [1.0, 0.5]
            [engines]
            run = ["gaussian", "fokker_planck"]
            "#,
        )
        .unwrap();
        let osc = c.oscillator().unwrap();
        let cs = c.schedule(&osc).unwrap();
        assert!((cs.at(0.0).dp - 0.15).abs() < 1e-12);
        assert_eq!(c.engines.run, vec![Engine::Gaussian, Engine::FokkerPlanck]);
        assert_eq!("fp".parse::<Engine>().unwrap(), Engine::FokkerPlanck);
    }
}
