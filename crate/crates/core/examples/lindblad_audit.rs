//! Which coefficient families admit a Lindblad form, and the operators
//! when they do.

use qbm::fock::lindblad_decompose;
use qbm::{lindblad_margin, preset, OscillatorParams, Preset, ThermalSpec};

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let lambda = 0.1;
    for kt in [0.0, 0.5, 5.0] {
        let th = ThermalSpec::new(kt, 1.0)?;
        println!("k_B T = {kt}");
        for kind in [
            Preset::OpticalSme,
            Preset::Agarwal,
            Preset::CaldeiraLeggett,
            Preset::dekker(0.05, 0.1, 0.02),
        ] {
            let cs = preset(&kind, &osc, &th, lambda)?;
            let margin = lindblad_margin(&cs, 0.0, &osc);
            match lindblad_decompose(&cs, 0.0, &osc) {
                Ok(set) => {
                    print!("  {:<17} margin {margin:+.4e}  operators", kind.name());
                    for (a, b) in &set.pairs {
                        print!("  ({:.4}{:+.4}i) x + ({:.4}{:+.4}i) p", a.re, a.im, b.re, b.im);
                    }
                    println!();
                }
                Err(e) => println!("  {:<17} margin {margin:+.4e}  {e}", kind.name()),
            }
        }
    }
    Ok(())
}
