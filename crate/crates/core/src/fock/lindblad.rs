use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;

use super::{c64, OperatorSet, QuadraticGenerator};
use crate::error::{Error, Result};
use crate::model::{lindblad_margin, OscillatorParams};
use crate::schedule::CoefficientSchedule;

/// Lindblad operators Φⱼ = αⱼ x + βⱼ p.
#[derive(Clone, Debug, PartialEq)]
pub struct LindbladSet {
    pub pairs: Vec<(Complex64, Complex64)>,
}

impl LindbladSet {
    /// (Σ|αⱼ|², Σ|βⱼ|², Σαⱼ*βⱼ).
    pub fn sums(&self) -> (f64, f64, Complex64) {
        self.pairs.iter().fold((0.0, 0.0, c64(0.0, 0.0)), |(a, b, c), (al, be)| {
            (a + al.norm_sqr(), b + be.norm_sqr(), c + al.conj() * be)
        })
    }

    pub fn operators(&self, ops: &OperatorSet) -> Vec<DMatrix<Complex64>> {
        self.pairs
            .iter()
            .map(|&(al, be)| &ops.x * al + &ops.p * be)
            .collect()
    }

    /// Σⱼ (2ΦⱼρΦⱼ† − Φⱼ†Φⱼρ − ρΦⱼ†Φⱼ).
    pub fn dissipator(&self, rho: &DMatrix<Complex64>, ops: &OperatorSet) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(rho.nrows(), rho.ncols());
        for phi in self.operators(ops) {
            let pd = phi.adjoint();
            let pp = &pd * &phi;
            out += (&phi * rho * &pd) * c64(2.0, 0.0) - &pp * rho - rho * &pp;
        }
        out
    }
}

/// Factorizes the dissipator of the master equation at time `t` into at most
/// two Lindblad operators.
///
/// The coefficient matrix [[D_p, s], [s*, D_x]]/ħ², s = −D_z − iħλ/2, is
/// diagonalized and each eigenpair (e, u) gives (α, β) = √e·u. Both pairs are
/// returned, largest first; the second has zero norm when the matrix has rank one.
pub fn lindblad_decompose(
    cs: &CoefficientSchedule,
    t: f64,
    osc: &OscillatorParams,
) -> Result<LindbladSet> {
    let c = cs.at(t);
    let margin = lindblad_margin(cs, t, osc);
    let scale = (c.dp * c.dx)
        .abs()
        .max(c.dz * c.dz)
        .max((0.5 * osc.hbar * c.lambda).powi(2));
    if c.dx < 0.0 || c.dp < 0.0 || margin < -1e-12 * scale {
        return Err(Error::NotLindbladReducible {
            t,
            margin,
            dx: c.dx,
            dp: c.dp,
        });
    }
    let g = QuadraticGenerator::physical(&c);
    let [[a, b], [_, d]] = g.coefficient_matrix(osc.hbar);
    let m = Matrix2::new(a, b, b.conj(), d);
    let eig = m.symmetric_eigen();
    let mut pairs: Vec<(f64, (Complex64, Complex64))> = (0..2)
        .map(|k| {
            let e = eig.eigenvalues[k].max(0.0).sqrt();
            let u = eig.eigenvectors.column(k);
            (e, (u[0] * e, u[1] * e))
        })
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(LindbladSet {
        pairs: pairs.into_iter().map(|(_, p)| p).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_operators, max_abs};
    use crate::model::{preset, Preset, ThermalSpec};

    #[test]
    fn optical_zero_temperature_is_rank_one_and_proportional_to_a() {
        let osc = OscillatorParams::units();
        let cs = preset(&Preset::OpticalSme, &osc, &ThermalSpec::zero(), 0.3).unwrap();
        let set = lindblad_decompose(&cs, 0.0, &osc).unwrap();
        assert_eq!(set.pairs.len(), 2);
        let (a2, b2) = set.pairs[1];
        assert!(a2.norm() < 1e-8 && b2.norm() < 1e-8);
        // a ∝ x + i p in these units
        let (al, be) = set.pairs[0];
        assert!((be / al - c64(0.0, 1.0)).norm() < 1e-12);
        let ops = build_operators(&osc, 6).unwrap();
        let phi = &set.operators(&ops)[0];
        let ratio = phi[(0, 1)] / ops.a[(0, 1)];
        assert!(max_abs(&(phi - &ops.a * ratio)) < 1e-12);
        assert!((ratio.norm_sqr() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn undamped_diagonal_case() {
        let osc = OscillatorParams::units();
        let cs = CoefficientSchedule::constant(0.0, 0.0, 0.5, 2.0, 0.0);
        let set = lindblad_decompose(&cs, 0.0, &osc).unwrap();
        for &(al, be) in &set.pairs {
            // each operator is a pure x or a pure p
            assert!(al.norm() < 1e-15 || be.norm() < 1e-15);
        }
        let (sa, sb, sab) = set.sums();
        assert!((sa - 2.0).abs() < 1e-14 && (sb - 0.5).abs() < 1e-14 && sab.norm() < 1e-15);
    }

    #[test]
    fn agarwal_is_rejected_with_margin() {
        let osc = OscillatorParams::units();
        let th = ThermalSpec::new(1.0, 1.0).unwrap();
        let cs = preset(&Preset::Agarwal, &osc, &th, 0.2).unwrap();
        match lindblad_decompose(&cs, 0.0, &osc) {
            Err(Error::NotLindbladReducible { margin, .. }) => assert_eq!(margin, -(0.5f64 * 0.2).powi(2)),
            other => panic!("{other:?}"),
        }
    }
}
