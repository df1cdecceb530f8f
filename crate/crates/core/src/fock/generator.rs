use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{c64, moments_only, Banded, DensityMatrix, Observables, OperatorSet};
use crate::error::{Error, Result};
use crate::model::NoiseCorrelations;
use crate::schedule::{CoefficientSchedule, Coefficients, TimeGrid};

/// Generator of the bilinear master equation
///
/// dρ/dt = −(i/ħ)[H, ρ] + (iλ/2ħ)([p,{x,ρ}] − [x,{p,ρ}])
///         − (D_xx/ħ²)[x,[x,ρ]] − (D_pp/ħ²)[p,[p,ρ]] + (D_z/ħ²)([x,[p,ρ]] + [p,[x,ρ]])
///
/// with H = h0·H₀ + kinetic·p²/2m + potential·mω₀²x²/2 + anti·{x,p}.
/// `dxx` multiplies the position double commutator (it is the momentum
/// diffusion D_p) and `dpp` the momentum one (D_x).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadraticGenerator {
    pub h0: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub anti: f64,
    pub friction: f64,
    pub dxx: f64,
    pub dpp: f64,
    pub dz: f64,
}

impl QuadraticGenerator {
    /// H = H₀ + (μ/2){x,p} with the given dissipative coefficients.
    pub fn physical(c: &Coefficients) -> Self {
        Self {
            h0: 1.0,
            anti: 0.5 * c.mu,
            friction: c.lambda,
            dxx: c.dp,
            dpp: c.dx,
            dz: c.dz,
            ..Self::default()
        }
    }

    /// Averaged generator of the two-force random unitary in the canonical
    /// frame: H = e^{−Γ}p²/2m + e^{Γ}mω₀²x²/2, D_xx = A e^{2Γ}, D_pp = B,
    /// D_z = −C e^{Γ}.
    pub fn canonical(nc: &NoiseCorrelations, t: f64) -> Self {
        let e = nc.gamma(t).exp();
        Self {
            kinetic: 1.0 / e,
            potential: e,
            dxx: nc.a.at(t) * e * e,
            dpp: nc.b.at(t),
            dz: -nc.c.at(t) * e,
            ..Self::default()
        }
    }

    /// Only the Hamiltonian part.
    pub fn hamiltonian_part(&self) -> Self {
        Self {
            friction: 0.0,
            dxx: 0.0,
            dpp: 0.0,
            dz: 0.0,
            ..*self
        }
    }

    /// Only the non-Hamiltonian part.
    pub fn dissipative_part(&self) -> Self {
        Self {
            h0: 0.0,
            kinetic: 0.0,
            potential: 0.0,
            anti: 0.0,
            ..*self
        }
    }

    pub fn hamiltonian(&self, ops: &OperatorSet) -> DMatrix<Complex64> {
        let r = |v: f64| c64(v, 0.0);
        &ops.h0 * r(self.h0)
            + &ops.kinetic * r(self.kinetic)
            + &ops.potential * r(self.potential)
            + &ops.hmu * r(2.0 * self.anti)
    }

    fn banded_hamiltonian(&self, ops: &OperatorSet) -> Banded {
        let osc = &ops.osc;
        let b = &ops.band;
        let mut h = Banded::zeros(ops.dim());
        h.axpy(c64(self.h0, 0.0), &b.h0);
        h.axpy(c64(self.kinetic / (2.0 * osc.mass), 0.0), &b.p2);
        h.axpy(c64(self.potential * 0.5 * osc.mass * osc.omega0 * osc.omega0, 0.0), &b.x2);
        h.axpy(c64(self.anti, 0.0), &b.xp);
        h.axpy(c64(self.anti, 0.0), &b.px);
        h
    }

    /// Coefficient matrix of the dissipator over (x, p):
    /// [[D_xx, −D_z − iħλ/2], [−D_z + iħλ/2, D_pp]] / ħ².
    pub fn coefficient_matrix(&self, hbar: f64) -> [[Complex64; 2]; 2] {
        let h2 = hbar * hbar;
        let s = c64(-self.dz, -0.5 * hbar * self.friction) / h2;
        [[c64(self.dxx / h2, 0.0), s], [s.conj(), c64(self.dpp / h2, 0.0)]]
    }

    pub(crate) fn prepare(&self, ops: &OperatorSet) -> Prepared {
        let hbar = ops.osc.hbar;
        let b = &ops.band;
        let [[cxx, cxp], [cpx, cpp]] = self.coefficient_matrix(hbar);
        // dρ/dt = Kρ + ρK† + 2(xρQx + pρQp) with K = −(i/ħ)H − J,
        // J = Σ c_uv v·u
        let mut k = Banded::zeros(ops.dim());
        k.axpy(c64(0.0, -1.0 / hbar), &self.banded_hamiltonian(ops));
        k.axpy(-cxx, &b.x2);
        k.axpy(-cpp, &b.p2);
        k.axpy(-cxp, &b.px);
        k.axpy(-cpx, &b.xp);
        let mut qx = Banded::zeros(ops.dim());
        qx.axpy(cxx, &b.x);
        qx.axpy(cxp, &b.p);
        let mut qp = Banded::zeros(ops.dim());
        qp.axpy(cpx, &b.x);
        qp.axpy(cpp, &b.p);
        let kd = k.adjoint();
        let dissipative = [cxx, cxp, cpx, cpp].iter().any(|c| c.norm() > 0.0);
        Prepared {
            k,
            kd,
            qx,
            qp,
            dissipative,
        }
    }

    /// dρ/dt for this generator.
    pub fn apply(&self, rho: &DMatrix<Complex64>, ops: &OperatorSet) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(rho.nrows(), rho.ncols());
        let mut tmp = DMatrix::zeros(rho.nrows(), rho.ncols());
        self.prepare(ops).apply(rho, ops, &mut out, &mut tmp);
        out
    }
}

pub(crate) struct Prepared {
    k: Banded,
    kd: Banded,
    qx: Banded,
    qp: Banded,
    dissipative: bool,
}

impl Prepared {
    fn apply(
        &self,
        rho: &DMatrix<Complex64>,
        ops: &OperatorSet,
        out: &mut DMatrix<Complex64>,
        tmp: &mut DMatrix<Complex64>,
    ) {
        let one = c64(1.0, 0.0);
        out.fill(c64(0.0, 0.0));
        self.k.mul_left_acc(one, rho, out);
        self.kd.mul_right_acc(one, rho, out);
        if self.dissipative {
            for (u, q) in [(&ops.band.x, &self.qx), (&ops.band.p, &self.qp)] {
                tmp.fill(c64(0.0, 0.0));
                u.mul_left_acc(c64(2.0, 0.0), rho, tmp);
                q.mul_right_acc(one, tmp, out);
            }
        }
    }
}

fn add_scaled(dst: &mut DMatrix<Complex64>, c: Complex64, src: &DMatrix<Complex64>) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += c * s;
    }
}

/// dρ/dt of the master equation with coefficients `cs` at time `t`.
pub fn liouvillian_apply(
    rho: &DensityMatrix,
    ops: &OperatorSet,
    cs: &CoefficientSchedule,
    t: f64,
) -> Result<DMatrix<Complex64>> {
    if rho.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: rho.dim(),
        });
    }
    Ok(QuadraticGenerator::physical(&cs.at(t)).apply(&rho.data, ops))
}

const PURITY_BLOWUP: f64 = 4.0;

#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    /// Largest tolerated population of the two highest number states.
    pub leakage_threshold: f64,
    /// Solve for the smallest eigenvalue at every output time.
    pub track_min_eig: bool,
    /// Keep the density matrix at every output time.
    pub keep_states: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            leakage_threshold: 1e-8,
            track_min_eig: true,
            keep_states: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensityEvolution {
    pub times: Vec<f64>,
    pub observables: Vec<Observables>,
    /// Populated when [`EvolveOptions::keep_states`] is set.
    pub states: Vec<DensityMatrix>,
    pub final_state: DensityMatrix,
    /// Largest |Tr ρ − 1| produced by a single step, before renormalization.
    pub max_trace_drift: f64,
    /// Largest ‖ρ − ρ†‖_max produced by a single step, before symmetrization.
    pub max_hermiticity_residual: f64,
    pub max_leakage: f64,
}

/// Fixed-step RK4 with generator `gen_at(t)`; each step is re-Hermitized and
/// renormalized.
pub fn evolve_with<G>(
    rho0: &DensityMatrix,
    ops: &OperatorSet,
    grid: &TimeGrid,
    opts: &EvolveOptions,
    gen_at: G,
) -> Result<DensityEvolution>
where
    G: Fn(f64) -> QuadraticGenerator,
{
    grid.validate()?;
    if rho0.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: rho0.dim(),
        });
    }
    let n = ops.dim();
    let h = grid.step();
    let mut rho = rho0.clone();
    let mut ev = DensityEvolution {
        times: Vec::new(),
        observables: Vec::new(),
        states: Vec::new(),
        final_state: rho0.clone(),
        max_trace_drift: 0.0,
        max_hermiticity_residual: 0.0,
        max_leakage: rho0.leakage(),
    };
    let record = |rho: &DensityMatrix, t: f64, ev: &mut DensityEvolution| -> Result<()> {
        let mut obs = moments_only(rho, ops)?;
        if opts.track_min_eig {
            obs.min_eig = rho.min_eigenvalue();
        }
        ev.times.push(t);
        ev.observables.push(obs);
        if opts.keep_states {
            ev.states.push(rho.clone());
        }
        Ok(())
    };
    record(&rho, 0.0, &mut ev)?;

    let mut k1 = DMatrix::zeros(n, n);
    let mut k2 = DMatrix::zeros(n, n);
    let mut k3 = DMatrix::zeros(n, n);
    let mut k4 = DMatrix::zeros(n, n);
    let mut tmp = DMatrix::zeros(n, n);
    let mut stage = DMatrix::zeros(n, n);
    for step in 0..grid.steps() {
        let t = grid.time(step);
        let g0 = gen_at(t).prepare(ops);
        let g1 = gen_at(t + 0.5 * h).prepare(ops);
        let g2 = gen_at(t + h).prepare(ops);
        g0.apply(&rho.data, ops, &mut k1, &mut tmp);
        stage.copy_from(&rho.data);
        add_scaled(&mut stage, c64(0.5 * h, 0.0), &k1);
        g1.apply(&stage, ops, &mut k2, &mut tmp);
        stage.copy_from(&rho.data);
        add_scaled(&mut stage, c64(0.5 * h, 0.0), &k2);
        g1.apply(&stage, ops, &mut k3, &mut tmp);
        stage.copy_from(&rho.data);
        add_scaled(&mut stage, c64(h, 0.0), &k3);
        g2.apply(&stage, ops, &mut k4, &mut tmp);
        let w = c64(h / 6.0, 0.0);
        add_scaled(&mut rho.data, w, &k1);
        add_scaled(&mut rho.data, w * 2.0, &k2);
        add_scaled(&mut rho.data, w * 2.0, &k3);
        add_scaled(&mut rho.data, w, &k4);

        let t_next = grid.time(step + 1);
        let tr = rho.trace();
        if !tr.is_finite() || rho.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::IntegrationDiverged { step: step + 1, t: t_next });
        }
        ev.max_trace_drift = ev.max_trace_drift.max((tr - 1.0).abs());
        ev.max_hermiticity_residual = ev.max_hermiticity_residual.max(rho.hermiticity_residual());
        rho.hermitize();
        rho.renormalize();
        // generators without a Lindblad form legitimately push the purity a
        // little above 1; an unstable step grows it without bound
        if rho.purity() > PURITY_BLOWUP {
            return Err(Error::IntegrationDiverged { step: step + 1, t: t_next });
        }
        let leak = rho.leakage();
        ev.max_leakage = ev.max_leakage.max(leak);
        if leak > opts.leakage_threshold {
            return Err(Error::TruncationInsufficient {
                t: t_next,
                leakage: leak,
                threshold: opts.leakage_threshold,
            });
        }
        if grid.is_output(step + 1) {
            record(&rho, t_next, &mut ev)?;
        }
    }
    ev.final_state = rho;
    Ok(ev)
}

/// Evolves ρ under the physical-frame master equation with coefficients `cs`.
pub fn evolve_density(
    rho0: &DensityMatrix,
    ops: &OperatorSet,
    cs: &CoefficientSchedule,
    grid: &TimeGrid,
    opts: &EvolveOptions,
) -> Result<DensityEvolution> {
    evolve_with(rho0, ops, grid, opts, |t| QuadraticGenerator::physical(&cs.at(t)))
}

/// Evolves the canonical-frame ρ under the averaged two-force generator.
pub fn evolve_density_canonical(
    rho0: &DensityMatrix,
    ops: &OperatorSet,
    nc: &NoiseCorrelations,
    grid: &TimeGrid,
    opts: &EvolveOptions,
) -> Result<DensityEvolution> {
    evolve_with(rho0, ops, grid, opts, |t| QuadraticGenerator::canonical(nc, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_operators, max_abs};
    use crate::model::{preset, OscillatorParams, Preset, ThermalSpec};

    fn comm(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a * b - b * a
    }

    fn anti(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a * b + b * a
    }

    /// Term-by-term dense evaluation of the master equation.
    fn literal(g: &QuadraticGenerator, rho: &DMatrix<Complex64>, ops: &OperatorSet) -> DMatrix<Complex64> {
        let hb = ops.osc.hbar;
        let (x, p) = (&ops.x, &ops.p);
        let i = c64(0.0, 1.0);
        let h = g.hamiltonian(ops);
        comm(&h, rho) * (-i / hb)
            + comm(p, &anti(x, rho)) * (i * g.friction / (2.0 * hb))
            - comm(x, &anti(p, rho)) * (i * g.friction / (2.0 * hb))
            - comm(x, &comm(x, rho)) * c64(g.dxx / (hb * hb), 0.0)
            - comm(p, &comm(p, rho)) * c64(g.dpp / (hb * hb), 0.0)
            + comm(x, &comm(p, rho)) * c64(g.dz / (hb * hb), 0.0)
            + comm(p, &comm(x, rho)) * c64(g.dz / (hb * hb), 0.0)
    }

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let m = DMatrix::from_fn(n, n, |_, _| c64(next(), next()));
        (&m + m.adjoint()) * c64(0.5, 0.0)
    }

    #[test]
    fn fast_apply_matches_literal_terms() {
        let osc = OscillatorParams::new(1.3, 0.8, 0.7).unwrap();
        let ops = build_operators(&osc, 9).unwrap();
        let g = QuadraticGenerator {
            h0: 0.9,
            kinetic: 0.4,
            potential: 1.7,
            anti: -0.3,
            friction: 0.25,
            dxx: 0.6,
            dpp: 0.35,
            dz: -0.2,
        };
        let rho = random_hermitian(9, 11);
        let err = max_abs(&(g.apply(&rho, &ops) - literal(&g, &rho, &ops)));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn ground_state_is_stationary_without_coupling() {
        let ops = build_operators(&OscillatorParams::units(), 6).unwrap();
        let rho = DensityMatrix::fock(6, 0).unwrap();
        let d = liouvillian_apply(&rho, &ops, &CoefficientSchedule::zero(), 0.0).unwrap();
        assert_eq!(max_abs(&d), 0.0);
    }

    #[test]
    fn number_decay_rate() {
        let osc = OscillatorParams::units();
        let ops = build_operators(&osc, 10).unwrap();
        let l = 0.3;
        let cs = preset(&Preset::OpticalSme, &osc, &ThermalSpec::zero(), l).unwrap();
        let rho = DensityMatrix::fock(10, 1).unwrap();
        let d = liouvillian_apply(&rho, &ops, &cs, 0.0).unwrap();
        let num = &ops.adag * &ops.a;
        let rate: Complex64 = (&d * &num).trace();
        assert!((rate.re + 2.0 * l).abs() < 1e-13, "{rate}");
    }

    #[test]
    fn trace_preserved_for_random_states() {
        let osc = OscillatorParams::units();
        let ops = build_operators(&osc, 12).unwrap();
        let cs = CoefficientSchedule::constant(0.4, -0.2, 0.3, 0.5, 0.1);
        for seed in 0..5 {
            let rho = DensityMatrix { data: random_hermitian(12, seed) };
            let d = liouvillian_apply(&rho, &ops, &cs, 0.0).unwrap();
            assert!(d.trace().norm() < 1e-13);
        }
    }

    #[test]
    fn unitary_limit_keeps_purity_and_rotates() {
        let osc = OscillatorParams::units();
        let ops = build_operators(&osc, 30).unwrap();
        let alpha = c64(0.8, 0.0);
        let rho0 = DensityMatrix::coherent(30, alpha);
        let grid = TimeGrid::new(2.0, 0.005).unwrap().with_output_every(100);
        let ev = evolve_density(&rho0, &ops, &CoefficientSchedule::zero(), &grid, &EvolveOptions::default()).unwrap();
        for (t, o) in ev.times.iter().zip(&ev.observables) {
            assert!((o.purity - 1.0).abs() < 1e-10);
            let x = 2f64.sqrt() * 0.8 * t.cos();
            assert!((o.mean_x - x).abs() < 1e-8, "t = {t}");
        }
        assert!(ev.max_trace_drift < 1e-12);
    }

    #[test]
    fn leakage_is_reported() {
        let osc = OscillatorParams::units();
        let ops = build_operators(&osc, 8).unwrap();
        let cs = CoefficientSchedule::constant(0.0, 0.0, 1.0, 1.0, 0.0);
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let err = evolve_density(&DensityMatrix::fock(8, 0).unwrap(), &ops, &cs, &grid, &EvolveOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::TruncationInsufficient { .. }));
    }
}
