//! Wigner function of the first excited number state, negative at the origin.
//! Pass a path to also write the grid as CSV.

use std::path::PathBuf;

use qbm::fock::{build_operators, DensityMatrix};
use qbm::wigner::{wigner_transform, GridSpec};
use qbm::OscillatorParams;

fn main() -> qbm::Result<()> {
    let osc = OscillatorParams::units();
    let n_max = 30;
    let ops = build_operators(&osc, n_max)?;
    let spec = GridSpec::centered(129, 129, 6.0, 6.0);
    let w = wigner_transform(&DensityMatrix::fock(n_max, 1)?, &ops, &spec)?;

    let (ic, jc) = (64, 64);
    println!("W(0, 0) = {:.6} (exact {:.6})", w.at(ic, jc), -1.0 / std::f64::consts::PI);
    println!("mass    = {:.10}", w.mass());
    let m = w.moments();
    println!("sxx {:.6} spp {:.6}", m.sxx, m.spp);

    if let Some(path) = std::env::args().nth(1).map(PathBuf::from) {
        w.write_csv(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
