//! Phase-space Fokker–Planck evolution of a coherent state, compared with the
//! moment equations.

use num_complex::Complex64;
use qbm::fokker_planck::{fp_evolve, max_stable_dt, GridSpec, WignerGrid};
use qbm::gaussian::{evolve_moments, GaussianState};
use qbm::{preset, OscillatorParams, Preset, ThermalSpec, TimeGrid};

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let th = ThermalSpec::from_occupation(&osc, 1.0)?;
    let cs = preset(&Preset::OpticalSme, &osc, &th, 0.1)?;
    let s0 = GaussianState::coherent(&osc, Complex64::new(1.5, 0.0));
    let spec = GridSpec::centered(192, 192, 8.0, 8.0);
    let w0 = WignerGrid::from_gaussian(spec, &s0)?;

    let period = osc.period();
    let per_period = (period / max_stable_dt(&spec, &osc, &cs, 0.0)).ceil() as usize;
    let grid = TimeGrid::new(2.0 * period, period / per_period as f64)?.with_output_every(per_period / 4);
    println!("{} steps of {:.4e}", grid.steps(), grid.dt);

    let fp = fp_evolve(&w0, &osc, &cs, &grid)?;
    let exact = evolve_moments(&s0, &osc, &cs, &grid)?;
    println!("{:>7} {:>11} {:>11} {:>11} {:>11}", "t", "<x> grid", "<x> exact", "sxx grid", "sxx exact");
    for (g, (t, e)) in fp.moments.iter().zip(&exact) {
        println!("{t:7.3} {:11.7} {:11.7} {:11.7} {:11.7}", g.mean_x, e.mean[0], g.sxx, e.cov[(0, 0)]);
    }
    println!("mass drift {:.2e}", fp.final_grid.mass() - w0.mass());
    Ok(())
}
