//! Classical phase-space trajectories driven by two correlated white-noise
//! forces; the ensemble covariance follows the moment equations.

use qbm::gaussian::{evolve_moments, GaussianState};
use qbm::stochastic::{ensemble_covariances, EnsembleSpec};
use qbm::{NoiseCorrelations, OscillatorParams, TimeGrid};

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let nc = NoiseCorrelations::constant(0.05, 0.02, 0.01, 0.2);
    let grid = TimeGrid::new(2.0 * osc.period(), osc.period() / 200.0)?.with_output_every(50);
    let spec = EnsembleSpec {
        n_traj: 20_000,
        seed: 42,
        initial: GaussianState::vacuum(&osc),
    };
    let ens = ensemble_covariances(&spec, &osc, &nc, &grid)?;
    let exact = evolve_moments(&spec.initial, &osc, &nc.to_schedule(), &grid)?;
    println!("{:>7} {:>10} {:>10} {:>8} {:>10} {:>10} {:>8}", "t", "sxx", "exact", "z", "spp", "exact", "z");
    for (m, (t, e)) in ens.iter().zip(&exact) {
        let z = |k: usize, v: f64| (m.moments[k] - v) / m.se[k].max(1e-300);
        println!(
            "{t:7.3} {:10.6} {:10.6} {:8.2} {:10.6} {:10.6} {:8.2}",
            m.moments[2],
            e.cov[(0, 0)],
            z(2, e.cov[(0, 0)]),
            m.moments[4],
            e.cov[(1, 1)],
            z(4, e.cov[(1, 1)])
        );
    }
    Ok(())
}
