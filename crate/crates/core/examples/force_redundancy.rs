//! A force F(t) and a momentum shift G(t) that move the classical oscillator
//! identically, but give different quantum ensembles when they are noise.

use qbm::gaussian::GaussianState;
use qbm::stochastic::{forced_path, g_only_representation, noise_redundancy, EnsembleSpec};
use qbm::{OscillatorParams, Schedule, TimeGrid};

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let rate = Schedule::constant(0.2);
    let force = Schedule::func(|t| 0.3 * (1.7 * t).sin());
    let t_final = 2.0 * osc.period();
    let grid = TimeGrid::new(t_final, osc.period() / 400.0)?.with_output_every(200);

    let g = g_only_representation(&force, &rate, 0.0, t_final, 4000)?;
    let zero = Schedule::constant(0.0);
    let by_f = forced_path(1.0, 0.0, &osc, &rate, &force, &zero, &grid)?;
    let by_g = forced_path(1.0, 0.0, &osc, &rate, &zero, &g, &grid)?;
    for ((t, a), b) in by_f.t.iter().zip(&by_f.x).zip(&by_g.x) {
        println!("t {t:6.3}  x with F {a:+.8}  x with G {b:+.8}");
    }

    let spec = EnsembleSpec {
        n_traj: 4000,
        seed: 9,
        initial: GaussianState::vacuum(&osc),
    };
    let run = noise_redundancy(&spec, &osc, 0.05, 0.2, &grid)?;
    let (f, g) = (run.f_only.last().expect("output"), run.g_only.last().expect("output"));
    println!("as noise: spp {:.4} ± {:.4} (F) vs {:.4} ± {:.4} (G)", f.moments[4], f.se[4], g.moments[4], g.se[4]);
    Ok(())
}
