//! First and second moments, Gaussian propagators and the canonical frame.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::OscillatorParams;
use crate::schedule::{CoefficientSchedule, TimeGrid};

/// Mean ⟨q⟩ = (⟨x⟩, ⟨p⟩) and symmetric covariance M.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GaussianState {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self> {
        let asym = (cov[(0, 1)] - cov[(1, 0)]).abs();
        if asym > 1e-12 * cov.abs().max() {
            return Err(Error::InvalidParameter(format!(
                "covariance not symmetric (|M12 - M21| = {asym:e})"
            )));
        }
        if cov[(0, 0)] < 0.0 || cov[(1, 1)] < 0.0 {
            return Err(Error::InvalidParameter("negative variance".into()));
        }
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite moment".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn from_moments(m: [f64; 5]) -> Self {
        Self {
            mean: Vector2::new(m[0], m[1]),
            cov: Matrix2::new(m[2], m[3], m[3], m[4]),
        }
    }

    /// `[⟨x⟩, ⟨p⟩, σ_xx, σ_xp, σ_pp]`.
    pub fn moments(&self) -> [f64; 5] {
        [
            self.mean[0],
            self.mean[1],
            self.cov[(0, 0)],
            self.cov[(0, 1)],
            self.cov[(1, 1)],
        ]
    }

    pub fn vacuum(osc: &OscillatorParams) -> Self {
        Self::thermal(osc, 0.0)
    }

    /// Thermal state with mean occupation `n_bar`.
    pub fn thermal(osc: &OscillatorParams, n_bar: f64) -> Self {
        let k = 2.0 * n_bar + 1.0;
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::new(
                k * osc.x_vacuum_variance(),
                0.0,
                0.0,
                k * osc.p_vacuum_variance(),
            ),
        }
    }

    /// Coherent state |α⟩: ⟨x⟩ = √(2ħ/mω₀) Re α, ⟨p⟩ = √(2mħω₀) Im α.
    pub fn coherent(osc: &OscillatorParams, alpha: Complex64) -> Self {
        let mut s = Self::vacuum(osc);
        s.mean = coherent_mean(osc, alpha);
        s
    }

    /// Squeezed vacuum S(ξ)|0⟩ with ξ = r e^{iφ} and S(ξ) = exp[(ξ* a² − ξ a†²)/2].
    ///
    /// For φ = 0 the position variance is reduced by e^{−2r}.
    pub fn squeezed(osc: &OscillatorParams, r: f64, phi: f64) -> Self {
        let (ch, sh) = ((2.0 * r).cosh(), (2.0 * r).sinh());
        let lx = osc.hbar / (osc.mass * osc.omega0);
        let lp = osc.hbar * osc.mass * osc.omega0;
        let sxx = 0.5 * lx * (ch - sh * phi.cos());
        let spp = 0.5 * lp * (ch + sh * phi.cos());
        let sxp = -0.5 * osc.hbar * sh * phi.sin();
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::new(sxx, sxp, sxp, spp),
        }
    }

    pub fn displaced(mut self, mean: Vector2<f64>) -> Self {
        self.mean = mean;
        self
    }

    pub fn det(&self) -> f64 {
        self.cov.determinant()
    }
}

pub fn coherent_mean(osc: &OscillatorParams, alpha: Complex64) -> Vector2<f64> {
    Vector2::new(
        (2.0 * osc.hbar / (osc.mass * osc.omega0)).sqrt() * alpha.re,
        (2.0 * osc.mass * osc.hbar * osc.omega0).sqrt() * alpha.im,
    )
}

/// Vacuum-scale floors `[√σx, √σp, σx, ħ/2, σp]` used by [`moment_rel_error`].
pub fn moment_scales(osc: &OscillatorParams) -> [f64; 5] {
    let sx = osc.x_vacuum_variance();
    let sp = osc.p_vacuum_variance();
    [sx.sqrt(), sp.sqrt(), sx, 0.5 * osc.hbar, sp]
}

/// Largest componentwise relative error, each measured against
/// `max(|reference|, vacuum scale)`.
pub fn moment_rel_error(reference: &[f64; 5], other: &[f64; 5], osc: &OscillatorParams) -> f64 {
    let scale = moment_scales(osc);
    (0..5)
        .map(|k| (other[k] - reference[k]).abs() / reference[k].abs().max(scale[k]))
        .fold(0.0, f64::max)
}

/// A = [[μ−λ, 1/m], [−mω₀², −(μ+λ)]].
pub fn drift_matrix(osc: &OscillatorParams, cs: &CoefficientSchedule, t: f64) -> Matrix2<f64> {
    let c = cs.at(t);
    Matrix2::new(
        c.mu - c.lambda,
        1.0 / osc.mass,
        -osc.mass * osc.omega0 * osc.omega0,
        -(c.mu + c.lambda),
    )
}

/// D = [[D_x, D_z], [D_z, D_p]].
pub fn diffusion_matrix(cs: &CoefficientSchedule, t: f64) -> Matrix2<f64> {
    let c = cs.at(t);
    Matrix2::new(c.dx, c.dz, c.dz, c.dp)
}

fn symmetrize(m: &mut Matrix2<f64>) {
    let s = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    m[(0, 1)] = s;
    m[(1, 0)] = s;
}

/// Classical RK4 on (q, M) with time-dependent A(t), D(t) supplied by `coeffs`.
fn rk4_moments<F>(
    state0: &GaussianState,
    grid: &TimeGrid,
    coeffs: F,
) -> Result<Vec<(f64, GaussianState)>>
where
    F: Fn(f64) -> (Matrix2<f64>, Matrix2<f64>),
{
    grid.validate()?;
    let rhs = |a: &Matrix2<f64>, d: &Matrix2<f64>, q: &Vector2<f64>, m: &Matrix2<f64>| {
        (a * q, a * m + m * a.transpose() + 2.0 * d)
    };
    let h = grid.step();
    let mut q = state0.mean;
    let mut m = state0.cov;
    symmetrize(&mut m);
    let mut out = vec![(0.0, GaussianState { mean: q, cov: m })];
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let (a0, d0) = coeffs(t);
        let (a1, d1) = coeffs(t + 0.5 * h);
        let (a2, d2) = coeffs(t + h);
        let (k1q, k1m) = rhs(&a0, &d0, &q, &m);
        let (k2q, k2m) = rhs(&a1, &d1, &(q + 0.5 * h * k1q), &(m + 0.5 * h * k1m));
        let (k3q, k3m) = rhs(&a1, &d1, &(q + 0.5 * h * k2q), &(m + 0.5 * h * k2m));
        let (k4q, k4m) = rhs(&a2, &d2, &(q + h * k3q), &(m + h * k3m));
        q += h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        m += h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        symmetrize(&mut m);
        if !q.iter().chain(m.iter()).all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged {
                step: k + 1,
                t: grid.time(k + 1),
            });
        }
        if grid.is_output(k + 1) {
            out.push((grid.time(k + 1), GaussianState { mean: q, cov: m }));
        }
    }
    Ok(out)
}

/// Integrates d⟨q⟩/dt = A⟨q⟩ and dM/dt = AM + MAᵀ + 2D, returning the
/// states at the grid's output times.
pub fn evolve_moments(
    state0: &GaussianState,
    osc: &OscillatorParams,
    cs: &CoefficientSchedule,
    grid: &TimeGrid,
) -> Result<Vec<(f64, GaussianState)>> {
    rk4_moments(state0, grid, |t| {
        (drift_matrix(osc, cs, t), diffusion_matrix(cs, t))
    })
}

/// Unique solution of A·M + M·Aᵀ + 2D = 0 for Hurwitz A.
pub fn steady_state_covariance(a: &Matrix2<f64>, d: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let trace = a.trace();
    let det = a.determinant();
    if !(trace < 0.0 && det > 0.0) {
        return Err(Error::NoSteadyState { trace, det });
    }
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let lhs = Matrix3::new(
        2.0 * a11, 2.0 * a12, 0.0,
        a21, a11 + a22, a12,
        0.0, 2.0 * a21, 2.0 * a22,
    );
    let d12 = 0.5 * (d[(0, 1)] + d[(1, 0)]);
    let rhs = -2.0 * Vector3::new(d[(0, 0)], d12, d[(1, 1)]);
    let s = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::NoSteadyState { trace, det })?;
    Ok(Matrix2::new(s[0], s[1], s[1], s[2]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Physical,
    /// Coordinates (x, P) with P = e^{Γ_t} p; requires μ = λ.
    Canonical,
}

/// Moments at time t are `(R q₀, R M₀ Rᵀ + N)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Propagator {
    pub r: Matrix2<f64>,
    pub n: Matrix2<f64>,
    pub frame: Frame,
}

impl Propagator {
    pub fn identity(frame: Frame) -> Self {
        Self {
            r: Matrix2::identity(),
            n: Matrix2::zeros(),
            frame,
        }
    }

    pub fn apply(&self, state0: &GaussianState) -> GaussianState {
        let mut cov = self.r * state0.cov * self.r.transpose() + self.n;
        symmetrize(&mut cov);
        GaussianState {
            mean: self.r * state0.mean,
            cov,
        }
    }
}

/// Drift and diffusion of the canonical frame (x, P):
/// A^P = [[0, e^{−Γ}/m], [−mω₀²e^{Γ}, 0]], D^P = [[D_x, D_z e^{Γ}], [D_z e^{Γ}, D_p e^{2Γ}]].
pub fn canonical_matrices(
    osc: &OscillatorParams,
    cs: &CoefficientSchedule,
    t: f64,
) -> (Matrix2<f64>, Matrix2<f64>) {
    let c = cs.at(t);
    let e = cs.gamma(t).exp();
    let a = Matrix2::new(
        0.0,
        1.0 / (osc.mass * e),
        -osc.mass * osc.omega0 * osc.omega0 * e,
        0.0,
    );
    let d = Matrix2::new(c.dx, c.dz * e, c.dz * e, c.dp * e * e);
    (a, d)
}

fn check_canonical(cs: &CoefficientSchedule, grid: &TimeGrid) -> Result<()> {
    for k in grid.output_steps() {
        let t = grid.time(k);
        if !cs.is_translation_invariant_at(t) {
            let c = cs.at(t);
            return Err(Error::UnsupportedFrame {
                mu: c.mu,
                lambda: c.lambda,
                t,
            });
        }
    }
    Ok(())
}

/// R(t) and N(t) at every output time of `grid`.
pub fn propagator_series(
    osc: &OscillatorParams,
    cs: &CoefficientSchedule,
    frame: Frame,
    grid: &TimeGrid,
) -> Result<Vec<(f64, Propagator)>> {
    grid.validate()?;
    if frame == Frame::Canonical {
        check_canonical(cs, grid)?;
    }
    let coeffs = |t: f64| match frame {
        Frame::Physical => (drift_matrix(osc, cs, t), diffusion_matrix(cs, t)),
        Frame::Canonical => canonical_matrices(osc, cs, t),
    };
    // R is propagated column by column as two zero-diffusion means; N as the
    // covariance of a zero initial state
    let zero_d = |t: f64| (coeffs(t).0, Matrix2::zeros());
    let col = |e: Vector2<f64>| {
        rk4_moments(
            &GaussianState {
                mean: e,
                cov: Matrix2::zeros(),
            },
            grid,
            zero_d,
        )
    };
    let c0 = col(Vector2::new(1.0, 0.0))?;
    let c1 = col(Vector2::new(0.0, 1.0))?;
    let nn = rk4_moments(
        &GaussianState {
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
        },
        grid,
        coeffs,
    )?;
    Ok(c0
        .iter()
        .zip(&c1)
        .zip(&nn)
        .map(|(((t, s0), (_, s1)), (_, sn))| {
            let r = Matrix2::from_columns(&[s0.mean, s1.mean]);
            (*t, Propagator { r, n: sn.cov, frame })
        })
        .collect())
}

/// The propagator at `grid.t_final`.
pub fn propagator(
    osc: &OscillatorParams,
    cs: &CoefficientSchedule,
    frame: Frame,
    grid: &TimeGrid,
) -> Result<Propagator> {
    let g = grid.with_output_every(usize::MAX);
    Ok(propagator_series(osc, cs, frame, &g)?
        .pop()
        .map(|(_, p)| p)
        .unwrap_or(Propagator::identity(frame)))
}

/// Normalized bivariate Gaussian density with the state's mean and covariance.
pub fn gaussian_density(state: &GaussianState, x: f64, p: f64) -> Result<f64> {
    let det = state.det();
    let scale = state.cov[(0, 0)] * state.cov[(1, 1)];
    if !(det > 1e-14 * scale) || !(det > 0.0) {
        return Err(Error::DegenerateCovariance { det });
    }
    let dx = x - state.mean[0];
    let dp = p - state.mean[1];
    let (a, b, c) = (state.cov[(0, 0)], state.cov[(0, 1)], state.cov[(1, 1)]);
    let quad = (c * dx * dx - 2.0 * b * dx * dp + a * dp * dp) / det;
    Ok((-0.5 * quad).exp() / (2.0 * PI * det.sqrt()))
}

/// Maps canonical-frame moments (⟨x⟩, ⟨P⟩; N) to the physical frame:
/// p = P e^{−Γ}, M₁₁ = N₁₁, M₁₂ = e^{−Γ} N₁₂, M₂₂ = e^{−2Γ} N₂₂.
pub fn canonical_to_physical(mean_p: Vector2<f64>, cov_n: Matrix2<f64>, gamma_t: f64) -> GaussianState {
    let s = Matrix2::new(1.0, 0.0, 0.0, (-gamma_t).exp());
    GaussianState {
        mean: s * mean_p,
        cov: s * cov_n * s,
    }
}

/// Inverse of [`canonical_to_physical`].
pub fn physical_to_canonical(state: &GaussianState, gamma_t: f64) -> (Vector2<f64>, Matrix2<f64>) {
    let s = Matrix2::new(1.0, 0.0, 0.0, gamma_t.exp());
    (s * state.mean, s * state.cov * s)
}
