//! Averaging random unitary evolutions reproduces the master equation. The
//! trace distance to the exact density matrix falls as the ensemble grows,
//! down to the floor set by the time step.

use num_complex::Complex64;
use qbm::fock::{build_operators, evolve_density_canonical, trace_distance, DensityMatrix, EvolveOptions};
use qbm::stochastic::{ensemble_average_density, QuantumOptions};
use qbm::{NoiseCorrelations, OscillatorParams, TimeGrid};

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let n_max = 40;
    let ops = build_operators(&osc, n_max)?;
    let nc = NoiseCorrelations::constant(0.07, 0.07, 0.0, 0.02);
    let rho0 = DensityMatrix::coherent(n_max, Complex64::new(0.5, 0.25));
    let grid = TimeGrid::new(osc.period(), osc.period() / 800.0)?.with_output_every(800);
    let opts = EvolveOptions {
        track_min_eig: false,
        keep_states: true,
        ..EvolveOptions::default()
    };
    let exact = evolve_density_canonical(&rho0, &ops, &nc, &grid, &opts)?;
    let target = exact.states.last().expect("final state");

    for n_traj in [250, 1000, 4000] {
        let ens = ensemble_average_density(&rho0, &ops, &nc, n_traj, &grid, 3, &QuantumOptions::default())?;
        let d = trace_distance(ens.states.last().expect("final state"), target)?;
        let m = ens.moments.last().expect("final moments");
        println!(
            "{n_traj:5} trajectories: trace distance {d:.4}  <x> {:.4} ± {:.4}  leakage {:.1e}",
            m.moments[0], m.se[0], ens.max_leakage
        );
    }
    Ok(())
}
