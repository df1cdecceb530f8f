//! Mean and covariance of a squeezed state under the optical master equation,
//! with the stationary covariance and the propagator of the same problem.

use nalgebra::Vector2;
use qbm::gaussian::{
    diffusion_matrix, drift_matrix, evolve_moments, propagator, steady_state_covariance, Frame, GaussianState,
};
use qbm::{preset, OscillatorParams, Preset, ThermalSpec, TimeGrid};

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let th = ThermalSpec::from_occupation(&osc, 0.5)?;
    let cs = preset(&Preset::OpticalSme, &osc, &th, 0.1)?;
    let s0 = GaussianState::squeezed(&osc, 0.5, 0.0).displaced(Vector2::new(1.0, 0.0));
    let grid = TimeGrid::new(5.0 * osc.period(), osc.period() / 200.0)?.with_output_every(100);

    println!("{:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "t", "<x>", "<p>", "sxx", "sxp", "spp", "det");
    for (t, s) in evolve_moments(&s0, &osc, &cs, &grid)? {
        let m = s.moments();
        println!(
            "{t:8.3} {:10.6} {:10.6} {:10.6} {:10.6} {:10.6} {:10.6}",
            m[0], m[1], m[2], m[3], m[4], s.det()
        );
    }

    let m_inf = steady_state_covariance(&drift_matrix(&osc, &cs, 0.0), &diffusion_matrix(&cs, 0.0))?;
    println!("stationary covariance: sxx {:.6} sxp {:.6} spp {:.6}", m_inf[(0, 0)], m_inf[(0, 1)], m_inf[(1, 1)]);

    let prop = propagator(&osc, &cs, Frame::Physical, &grid)?;
    let end = prop.apply(&s0);
    println!("propagator at t = {:.3}: <x> {:.6} sxx {:.6}", grid.t_final, end.mean[0], end.cov[(0, 0)]);
    Ok(())
}
