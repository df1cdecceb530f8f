//! Truncated Fock-basis density matrices and the bilinear master equation.

mod banded;
mod generator;
mod lindblad;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::model::OscillatorParams;

pub use banded::Banded;
pub use generator::{
    evolve_density, evolve_density_canonical, evolve_with, liouvillian_apply, DensityEvolution,
    EvolveOptions, QuadraticGenerator,
};
pub use lindblad::{lindblad_decompose, LindbladSet};

pub(crate) fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Largest entry modulus.
pub fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Ladder and quadrature operators on the first `dim` number states.
///
/// Quadratic operators (`x2`, `p2`, `xp`, ...) are matrix products of the
/// truncated factors, so they differ from the infinite-dimensional ones only
/// in the last row and column.
#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub osc: OscillatorParams,
    pub a: DMatrix<Complex64>,
    pub adag: DMatrix<Complex64>,
    pub x: DMatrix<Complex64>,
    pub p: DMatrix<Complex64>,
    /// ħω₀(a†a + ½).
    pub h0: DMatrix<Complex64>,
    /// ½{x, p}; the Hamiltonian correction is μ·hmu.
    pub hmu: DMatrix<Complex64>,
    /// p²/2m.
    pub kinetic: DMatrix<Complex64>,
    /// mω₀²x²/2.
    pub potential: DMatrix<Complex64>,
    pub(crate) band: BandedOps,
}

#[derive(Clone, Debug)]
pub(crate) struct BandedOps {
    pub x: Banded,
    pub p: Banded,
    pub x2: Banded,
    pub p2: Banded,
    pub xp: Banded,
    pub px: Banded,
    pub h0: Banded,
}

pub fn build_operators(osc: &OscillatorParams, n_max: usize) -> Result<OperatorSet> {
    if n_max < 2 {
        return Err(Error::InvalidParameter(format!(
            "Fock truncation must be at least 2, got {n_max}"
        )));
    }
    let n = n_max;
    let a = DMatrix::from_fn(n, n, |i, j| {
        if j == i + 1 {
            c64((j as f64).sqrt(), 0.0)
        } else {
            c64(0.0, 0.0)
        }
    });
    let adag = a.adjoint();
    let sx = osc.x_vacuum_variance().sqrt();
    let sp = osc.p_vacuum_variance().sqrt();
    let x = (&a + &adag) * c64(sx, 0.0);
    let p = (&adag - &a) * c64(0.0, sp);
    let h0 = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            c64(osc.hbar * osc.omega0 * (i as f64 + 0.5), 0.0)
        } else {
            c64(0.0, 0.0)
        }
    });
    let x2 = &x * &x;
    let p2 = &p * &p;
    let xp = &x * &p;
    let px = &p * &x;
    let hmu = (&xp + &px) * c64(0.5, 0.0);
    let kinetic = &p2 * c64(0.5 / osc.mass, 0.0);
    let potential = &x2 * c64(0.5 * osc.mass * osc.omega0 * osc.omega0, 0.0);
    let band = BandedOps {
        x: Banded::from_dense(&x),
        p: Banded::from_dense(&p),
        x2: Banded::from_dense(&x2),
        p2: Banded::from_dense(&p2),
        xp: Banded::from_dense(&xp),
        px: Banded::from_dense(&px),
        h0: Banded::from_dense(&h0),
    };
    Ok(OperatorSet {
        osc: *osc,
        a,
        adag,
        x,
        p,
        h0,
        hmu,
        kinetic,
        potential,
        band,
    })
}

impl OperatorSet {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// State vector of the coherent state |α⟩, renormalized after truncation.
pub fn coherent_vector(dim: usize, alpha: Complex64) -> DVector<Complex64> {
    let mut v = DVector::zeros(dim);
    v[0] = c64((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 1..dim {
        v[n] = v[n - 1] * alpha / (n as f64).sqrt();
    }
    normalized(v)
}

/// State vector of S(ξ)|0⟩, ξ = r e^{iφ}, renormalized after truncation.
pub fn squeezed_vector(dim: usize, r: f64, phi: f64) -> DVector<Complex64> {
    let mut v = DVector::zeros(dim);
    v[0] = c64(1.0 / r.cosh().sqrt(), 0.0);
    let q = -Complex64::from_polar(r.tanh(), phi);
    let mut n = 0;
    while 2 * n + 2 < dim {
        let k = (2 * n + 1) as f64 / (2 * n + 2) as f64;
        v[2 * n + 2] = v[2 * n] * q * k.sqrt();
        n += 1;
    }
    normalized(v)
}

pub fn fock_vector(dim: usize, n: usize) -> DVector<Complex64> {
    let mut v = DVector::zeros(dim);
    v[n] = c64(1.0, 0.0);
    v
}

fn normalized(v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.norm();
    v / c64(norm, 0.0)
}

/// exp(K) for anti-Hermitian K via the eigenvectors of the Hermitian iK.
fn expm_anti_hermitian(k: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = (k * c64(0.0, 1.0)).symmetric_eigen();
    let q = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        q.ncols(),
        eig.eigenvalues.iter().map(|&e| Complex64::from_polar(1.0, -e)),
    ));
    q * phases * q.adjoint()
}

/// Hermitian, unit-trace matrix in the number basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub data: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Checks shape, Hermiticity (1e−10) and unit trace (1e−8).
    pub fn new(data: DMatrix<Complex64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                got: data.ncols(),
            });
        }
        let rho = Self { data };
        let herm = rho.hermiticity_residual();
        if herm > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "density matrix not Hermitian (residual {herm:e})"
            )));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace is {tr}, expected 1"
            )));
        }
        Ok(rho)
    }

    pub fn from_pure(psi: &DVector<Complex64>) -> Self {
        Self {
            data: psi * psi.adjoint(),
        }
    }

    pub fn fock(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::InvalidParameter(format!(
                "number state {n} outside truncation {dim}"
            )));
        }
        Ok(Self::from_pure(&fock_vector(dim, n)))
    }

    pub fn coherent(dim: usize, alpha: Complex64) -> Self {
        Self::from_pure(&coherent_vector(dim, alpha))
    }

    pub fn squeezed(dim: usize, r: f64, phi: f64) -> Self {
        Self::from_pure(&squeezed_vector(dim, r, phi))
    }

    /// Geometric number distribution with mean `n_bar`, renormalized after truncation.
    pub fn thermal(dim: usize, n_bar: f64) -> Self {
        let q = n_bar / (n_bar + 1.0);
        let pops: Vec<f64> = (0..dim).map(|n| q.powi(n as i32)).collect();
        let z: f64 = pops.iter().sum();
        Self {
            data: DMatrix::from_fn(dim, dim, |i, j| {
                if i == j {
                    c64(pops[i] / z, 0.0)
                } else {
                    c64(0.0, 0.0)
                }
            }),
        }
    }

    /// The Gaussian state with the given moments, D(α)S(ξ)ρ_th S(ξ)†D(α)†,
    /// built in an enlarged basis and truncated to `dim`.
    pub fn gaussian(osc: &OscillatorParams, state: &GaussianState, dim: usize) -> Result<Self> {
        let sx = osc.x_vacuum_variance().sqrt();
        let sp = osc.p_vacuum_variance().sqrt();
        let (n11, n12, n22) = (
            state.cov[(0, 0)] / (sx * sx),
            state.cov[(0, 1)] / (sx * sp),
            state.cov[(1, 1)] / (sp * sp),
        );
        let nu = (n11 * n22 - n12 * n12).max(0.0).sqrt();
        if !(nu >= 1.0 - 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "covariance violates the uncertainty relation (symplectic eigenvalue {nu} < 1)"
            )));
        }
        let ch = 0.5 * (n11 + n22) / nu;
        let r = 0.5 * ch.max(1.0).acosh();
        let phi = (-n12 / nu).atan2(0.5 * (n22 - n11) / nu);
        let n_bar = 0.5 * (nu - 1.0).max(0.0);
        let alpha = c64(state.mean[0] / (2.0 * sx), state.mean[1] / (2.0 * sp));

        let big = 2 * dim + 20;
        let a = DMatrix::from_fn(big, big, |i, j| {
            if j == i + 1 {
                c64((j as f64).sqrt(), 0.0)
            } else {
                c64(0.0, 0.0)
            }
        });
        let ad = a.adjoint();
        let xi = Complex64::from_polar(r, phi);
        let squeeze = (&a * &a * xi.conj() - &ad * &ad * xi) * c64(0.5, 0.0);
        let shift = &ad * alpha - &a * alpha.conj();
        let s = expm_anti_hermitian(&squeeze);
        let d = expm_anti_hermitian(&shift);
        let u = d * s;
        let th = Self::thermal(big, n_bar).data;
        let full = &u * th * u.adjoint();
        let mut rho = Self {
            data: full.view((0, 0), (dim, dim)).clone_owned(),
        };
        rho.hermitize();
        rho.renormalize();
        Ok(rho)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            data: DMatrix::identity(dim, dim) * c64(1.0 / dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace().re
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// max |ρ − ρ†| over entries.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.dim();
        let mut r: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                r = r.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        r
    }

    pub fn hermitize(&mut self) {
        let n = self.dim();
        for j in 0..n {
            for i in 0..=j {
                let v = 0.5 * (self.data[(i, j)] + self.data[(j, i)].conj());
                self.data[(i, j)] = v;
                self.data[(j, i)] = v.conj();
            }
        }
    }

    pub fn renormalize(&mut self) {
        let tr = self.trace();
        self.data /= c64(tr, 0.0);
    }

    /// Population of the two highest number states.
    pub fn leakage(&self) -> f64 {
        let n = self.dim();
        (n.saturating_sub(2)..n).map(|k| self.data[(k, k)].re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.data.clone().symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Re Tr(ρ A).
    pub fn expect(&self, op: &DMatrix<Complex64>) -> f64 {
        let n = self.dim();
        let mut s = c64(0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                s += self.data[(i, j)] * op[(j, i)];
            }
        }
        s.re
    }
}

/// ½ Σ|eigenvalues of (a − b)|.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut d = &a.data - &b.data;
    // the difference of two Hermitian matrices is Hermitian; remove rounding
    let n = d.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (d[(i, j)] + d[(j, i)].conj());
            d[(i, j)] = v;
            d[(j, i)] = v.conj();
        }
        d[(j, j)].im = 0.0;
    }
    Ok(0.5 * d.symmetric_eigenvalues().iter().map(|e| e.abs()).sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observables {
    pub mean_x: f64,
    pub mean_p: f64,
    pub sxx: f64,
    pub sxp: f64,
    pub spp: f64,
    pub purity: f64,
    pub trace: f64,
    pub min_eig: f64,
    pub leakage: f64,
}

impl Observables {
    /// `[⟨x⟩, ⟨p⟩, σ_xx, σ_xp, σ_pp]`.
    pub fn moments(&self) -> [f64; 5] {
        [self.mean_x, self.mean_p, self.sxx, self.sxp, self.spp]
    }
}

/// Moments are normalized by the trace, so they are meaningful even for a
/// matrix whose trace drifted.
pub fn observables(rho: &DensityMatrix, ops: &OperatorSet) -> Result<Observables> {
    let mut obs = moments_only(rho, ops)?;
    obs.min_eig = rho.min_eigenvalue();
    Ok(obs)
}

/// [`observables`] without the eigenvalue solve (`min_eig` is NaN).
pub fn moments_only(rho: &DensityMatrix, ops: &OperatorSet) -> Result<Observables> {
    if rho.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: rho.dim(),
        });
    }
    let tr = rho.trace();
    let e = |op: &DMatrix<Complex64>| rho.expect(op) / tr;
    let mx = e(&ops.x);
    let mp = e(&ops.p);
    let x2 = e(&(&ops.x * &ops.x));
    let p2 = e(&(&ops.p * &ops.p));
    let sym = e(&ops.hmu);
    Ok(Observables {
        mean_x: mx,
        mean_p: mp,
        sxx: x2 - mx * mx,
        sxp: sym - mx * mp,
        spp: p2 - mp * mp,
        purity: rho.purity() / (tr * tr),
        trace: tr,
        min_eig: f64::NAN,
        leakage: rho.leakage() / tr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units() -> OscillatorParams {
        OscillatorParams::units()
    }

    #[test]
    fn gaussian_density_matrix_reproduces_moments() {
        let osc = OscillatorParams::new(1.3, 0.8, 0.9).unwrap();
        let ops = build_operators(&osc, 50).unwrap();
        let squeezed = GaussianState::squeezed(&osc, 0.4, 0.7);
        let states = [
            GaussianState::coherent(&osc, c64(0.7, -0.4)),
            GaussianState::thermal(&osc, 0.8),
            squeezed.displaced(nalgebra::Vector2::new(0.3, 0.2)),
            GaussianState::new(
                nalgebra::Vector2::new(-0.2, 0.1),
                squeezed.cov * 1.5,
            )
            .unwrap(),
        ];
        for s in states {
            let rho = DensityMatrix::gaussian(&osc, &s, 50).unwrap();
            let m = moments_only(&rho, &ops).unwrap().moments();
            for (a, b) in m.iter().zip(s.moments()) {
                assert!((a - b).abs() < 1e-9, "{m:?} vs {:?}", s.moments());
            }
        }
        let coherent = DensityMatrix::gaussian(&osc, &GaussianState::coherent(&osc, c64(0.5, 0.5)), 30).unwrap();
        assert!(max_abs(&(coherent.data - DensityMatrix::coherent(30, c64(0.5, 0.5)).data)) < 1e-12);
        let sq = DensityMatrix::gaussian(&osc, &GaussianState::squeezed(&osc, 0.6, 1.1), 40).unwrap();
        assert!(max_abs(&(sq.data - DensityMatrix::squeezed(40, 0.6, 1.1).data)) < 1e-10);
        let bad = GaussianState::new(nalgebra::Vector2::zeros(), nalgebra::Matrix2::identity() * 0.1).unwrap();
        assert!(DensityMatrix::gaussian(&OscillatorParams::units(), &bad, 10).is_err());
    }

    #[test]
    fn two_level_ladder() {
        let ops = build_operators(&units(), 2).unwrap();
        assert_eq!(ops.a[(0, 1)], c64(1.0, 0.0));
        assert_eq!(ops.a[(0, 0)], c64(0.0, 0.0));
        assert_eq!(ops.a[(1, 0)], c64(0.0, 0.0));
        assert!(build_operators(&units(), 1).is_err());
    }

    #[test]
    fn operator_identities() {
        let osc = OscillatorParams::new(1.7, 0.6, 0.8).unwrap();
        let ops = build_operators(&osc, 12).unwrap();
        let n = ops.dim();
        let comm = &ops.x * &ops.p - &ops.p * &ops.x;
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let want = if i == j { c64(0.0, osc.hbar) } else { c64(0.0, 0.0) };
                assert!((comm[(i, j)] - want).norm() < 1e-13);
            }
        }
        assert!(max_abs(&(&ops.x - ops.x.adjoint())) < 1e-15);
        assert!(max_abs(&(&ops.p - ops.p.adjoint())) < 1e-15);
        // a = (2ħω₀m)^{-1/2}(mω₀x + ip)
        let k = (2.0 * osc.hbar * osc.omega0 * osc.mass).sqrt().recip();
        let a = (&ops.x * c64(osc.mass * osc.omega0, 0.0) + &ops.p * c64(0.0, 1.0)) * c64(k, 0.0);
        assert!(max_abs(&(a - &ops.a)) < 1e-14);
        // H₀ = T + V away from the truncation corner
        let h = &ops.kinetic + &ops.potential;
        for i in 0..n - 1 {
            assert!((h[(i, i)] - ops.h0[(i, i)]).norm() < 1e-13);
        }
        let rho = DensityMatrix::fock(n, 0).unwrap();
        assert!((rho.expect(&(&ops.x * &ops.x)) - osc.x_vacuum_variance()).abs() < 1e-15);
    }

    #[test]
    fn ground_and_mixed_observables() {
        let osc = units();
        let ops = build_operators(&osc, 8).unwrap();
        let o = observables(&DensityMatrix::fock(8, 0).unwrap(), &ops).unwrap();
        assert!(o.mean_x.abs() < 1e-15 && o.mean_p.abs() < 1e-15);
        assert!((o.sxx - 0.5).abs() < 1e-14);
        assert!((o.purity - 1.0).abs() < 1e-14);
        assert!(o.min_eig.abs() < 1e-14);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((mixed.purity() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn thermal_variance() {
        let osc = units();
        let ops = build_operators(&osc, 60).unwrap();
        let o = observables(&DensityMatrix::thermal(60, 1.0), &ops).unwrap();
        assert!((o.sxx - 1.5).abs() < 1e-6, "{}", o.sxx);
        assert!((o.spp - 1.5).abs() < 1e-6);
    }

    #[test]
    fn coherent_and_squeezed_match_gaussian_moments() {
        use crate::gaussian::GaussianState;
        let osc = OscillatorParams::new(2.0, 0.5, 0.7).unwrap();
        let ops = build_operators(&osc, 80).unwrap();
        let alpha = c64(1.0, 0.5);
        let o = observables(&DensityMatrix::coherent(80, alpha), &ops).unwrap();
        let g = GaussianState::coherent(&osc, alpha).moments();
        for (a, b) in o.moments().iter().zip(&g) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let o = observables(&DensityMatrix::squeezed(80, 0.8, 0.9), &ops).unwrap();
        let g = GaussianState::squeezed(&osc, 0.8, 0.9).moments();
        for (a, b) in o.moments().iter().zip(&g) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn trace_distance_basics() {
        let a = DensityMatrix::fock(4, 0).unwrap();
        let b = DensityMatrix::fock(4, 1).unwrap();
        assert!((trace_distance(&a, &b).unwrap() - 1.0).abs() < 1e-14);
        assert!(trace_distance(&a, &a).unwrap() < 1e-15);
        let c = DensityMatrix::fock(3, 0).unwrap();
        assert!(trace_distance(&a, &c).is_err());
    }
}
