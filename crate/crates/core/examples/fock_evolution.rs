//! Number-basis evolution of a squeezed state under two master equations:
//! the optical one stays positive, Caldeira–Leggett at low temperature does not.

use qbm::fock::{build_operators, evolve_density, DensityMatrix, EvolveOptions};
use qbm::{lindblad_margin, preset, OscillatorParams, Preset, ThermalSpec, TimeGrid};

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let n_max = 80;
    let ops = build_operators(&osc, n_max)?;
    let rho0 = DensityMatrix::squeezed(n_max, 1.0, 0.0);
    let th = ThermalSpec::new(0.1, 1.0)?;
    let grid = TimeGrid::new(osc.period(), osc.period() / 800.0)?.with_output_every(80);

    for kind in [Preset::OpticalSme, Preset::CaldeiraLeggett] {
        let cs = preset(&kind, &osc, &th, 0.2)?;
        println!("{} (margin {:.4e})", kind.name(), lindblad_margin(&cs, 0.0, &osc));
        let ev = evolve_density(&rho0, &ops, &cs, &grid, &EvolveOptions::default())?;
        for (t, o) in ev.times.iter().zip(&ev.observables) {
            println!("  t {t:6.3}  sxx {:9.6}  spp {:9.6}  purity {:8.6}  min eig {:+.3e}", o.sxx, o.spp, o.purity, o.min_eig);
        }
        println!("  max trace drift per step {:.2e}, leakage {:.2e}", ev.max_trace_drift, ev.max_leakage);
    }
    Ok(())
}
