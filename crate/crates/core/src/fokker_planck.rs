//! Explicit grid solver for the phase-space Fokker–Planck equation
//!
//! ∂W/∂t = −∂_x[(p/m + (μ−λ)x)W] + ∂_p[(mω₀²x + (μ+λ)p)W]
//!         + D_x∂²_xW + D_p∂²_pW + 2D_z∂_x∂_pW.
//!
//! The right-hand side is written as the divergence of face fluxes with
//! central averages of the advective flux, so mass is conserved to rounding
//! and the grid moments obey the moment equations exactly in semi-discrete
//! form. The domain walls carry zero flux. Time stepping is classical RK4.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::OscillatorParams;
use crate::schedule::{CoefficientSchedule, Coefficients, TimeGrid};

pub use crate::wigner::{GridMoments, GridSpec, WignerGrid};

/// Quadrature moments and mass of a grid.
pub fn grid_moments(w: &WignerGrid) -> GridMoments {
    w.moments()
}

/// Safety factor applied to the largest step for which the spectral box of
/// the semi-discrete operator lies inside the RK4 stability region.
pub const STABILITY_FACTOR: f64 = 0.95;

/// Box [−re, 0] × [−im, im] enclosing the frozen-coefficient spectrum of the
/// semi-discrete operator with coefficients `c`.
fn spectral_box(spec: &GridSpec, osc: &OscillatorParams, c: &Coefficients) -> (f64, f64) {
    let x_max = spec.x0.abs().max(spec.x(spec.nx - 1).abs());
    let p_max = spec.p0.abs().max(spec.p(spec.np - 1).abs());
    let vx = p_max / osc.mass + (c.mu - c.lambda).abs() * x_max;
    let vp = osc.mass * osc.omega0 * osc.omega0 * x_max + (c.mu + c.lambda).abs() * p_max;
    let im = vx / spec.dx + vp / spec.dp;
    let re = 4.0 * (c.dx.abs() / (spec.dx * spec.dx) + c.dp.abs() / (spec.dp * spec.dp))
        + 2.0 * c.dz.abs() / (spec.dx * spec.dp)
        + (c.mu - c.lambda).abs()
        + (c.mu + c.lambda).abs();
    (re, im)
}

fn rk4_amplification(z: Complex64) -> f64 {
    (1.0 + z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)))).norm()
}

/// Whether the scaled box h·([−re, 0] × [−im, im]) lies in the RK4 region.
/// The amplification factor is analytic, so checking the boundary suffices.
fn box_is_stable(h: f64, re: f64, im: f64) -> bool {
    const N: usize = 256;
    let (a, b) = (h * re, h * im);
    (0..=N).all(|k| {
        let s = k as f64 / N as f64;
        [
            Complex64::new(-a * s, b),
            Complex64::new(-a, b * (2.0 * s - 1.0)),
            Complex64::new(0.0, b * (2.0 * s - 1.0)),
        ]
        .into_iter()
        .all(|z| rk4_amplification(z) <= 1.0 + 1e-12)
    })
}

fn stable_dt(re: f64, im: f64) -> f64 {
    if re <= 0.0 && im <= 0.0 {
        return f64::INFINITY;
    }
    // the region lies within |z| < 3
    let (mut lo, mut hi) = (0.0, 3.0 / re.hypot(im));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if box_is_stable(mid, re, im) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    STABILITY_FACTOR * lo
}

/// Largest step accepted by [`fp_step`] at time `t`.
pub fn max_stable_dt(spec: &GridSpec, osc: &OscillatorParams, cs: &CoefficientSchedule, t: f64) -> f64 {
    let (re, im) = spectral_box(spec, osc, &cs.at(t));
    stable_dt(re, im)
}

/// Reusable buffers for repeated steps on one grid geometry.
///
/// The four RK4 stages are pipelined in a single sweep over rows: stage s
/// works one row behind stage s − 1, so intermediate stage values only live
/// in three-row ring buffers.
pub struct FpSolver {
    spec: GridSpec,
    osc: OscillatorParams,
    xs: Vec<f64>,
    ps: Vec<f64>,
    pm: Vec<f64>,
    sweeps: [Sweep; 4],
    rings: [Vec<f64>; 3],
    scratch: Scratch,
    out: Vec<f64>,
}

/// Per-stage state carried from one row to the next.
struct Sweep {
    ux: Vec<f64>,
    ux_next: Vec<f64>,
    fx: Vec<f64>,
    fx_next: Vec<f64>,
}

struct Scratch {
    up: Vec<f64>,
    // padded by one zero on each side
    fp: Vec<f64>,
    s: Vec<f64>,
    k: Vec<f64>,
}

/// Stage constants derived from the coefficients.
#[derive(Clone, Copy)]
struct Stage {
    kk: f64,
    ax: f64,
    bp: f64,
    cx: f64,
    cp: f64,
    cz: f64,
    idx: f64,
    idp: f64,
}

impl Stage {
    fn new(spec: &GridSpec, osc: &OscillatorParams, c: &Coefficients) -> Self {
        Self {
            kk: osc.mass * osc.omega0 * osc.omega0,
            ax: c.mu - c.lambda,
            bp: c.mu + c.lambda,
            cx: c.dx / spec.dx,
            cp: c.dp / spec.dp,
            // 2D_z times the four-point ∂_pW at an x face
            cz: 2.0 * c.dz / (4.0 * spec.dp),
            idx: 1.0 / spec.dx,
            idp: 1.0 / spec.dp,
        }
    }
}

impl FpSolver {
    pub fn new(spec: GridSpec, osc: OscillatorParams) -> Result<Self> {
        spec.validate()?;
        let (nx, np) = (spec.nx, spec.np);
        let z = |n| vec![0.0; n];
        let sweep = || Sweep {
            ux: z(np),
            ux_next: z(np),
            fx: z(np),
            fx_next: z(np),
        };
        Ok(Self {
            spec,
            osc,
            xs: (0..nx).map(|i| spec.x(i)).collect(),
            ps: (0..np).map(|j| spec.p(j)).collect(),
            pm: (0..np).map(|j| spec.p(j) / osc.mass).collect(),
            sweeps: [sweep(), sweep(), sweep(), sweep()],
            rings: [z(3 * np), z(3 * np), z(3 * np)],
            scratch: Scratch {
                up: z(np),
                fp: z(np + 1),
                s: z(np + 2),
                k: z(np),
            },
            out: z(nx * np),
        })
    }

    /// Advances `w` from `t` to `t + dt` in place.
    pub fn step(&mut self, w: &mut WignerGrid, cs: &CoefficientSchedule, t: f64, dt: f64) -> Result<()> {
        if w.spec != self.spec {
            return Err(Error::DimensionMismatch {
                expected: self.spec.nx * self.spec.np,
                got: w.spec.nx * w.spec.np,
            });
        }
        let c = [cs.at(t), cs.at(t + 0.5 * dt), cs.at(t + dt)];
        let boxes = c.map(|c| spectral_box(&self.spec, &self.osc, &c));
        if !(dt > 0.0) || !boxes.iter().all(|&(re, im)| box_is_stable(dt / STABILITY_FACTOR, re, im)) {
            let suggested = boxes.iter().map(|&(re, im)| stable_dt(re, im)).fold(f64::INFINITY, f64::min);
            return Err(Error::UnstableStep { dt, suggested });
        }
        let stages = [
            Stage::new(&self.spec, &self.osc, &c[0]),
            Stage::new(&self.spec, &self.osc, &c[1]),
            Stage::new(&self.spec, &self.osc, &c[1]),
            Stage::new(&self.spec, &self.osc, &c[2]),
        ];
        self.sweep(&stages, &w.values, dt);
        std::mem::swap(&mut w.values, &mut self.out);
        if !w.values.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { step: 0, t: t + dt });
        }
        Ok(())
    }

    fn sweep(&mut self, stages: &[Stage; 4], w0: &[f64], dt: f64) {
        #[cfg(target_arch = "x86_64")]
        {
            if has_avx512::get() {
                // SAFETY: the required CPU features were detected at runtime
                return unsafe { self.sweep_avx512(stages, w0, dt) };
            }
            if has_avx2::get() {
                // SAFETY: as above
                return unsafe { self.sweep_avx2(stages, w0, dt) };
            }
        }
        self.sweep_impl(stages, w0, dt)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx2,fma")]
    unsafe fn sweep_avx512(&mut self, stages: &[Stage; 4], w0: &[f64], dt: f64) {
        self.sweep_impl(stages, w0, dt)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn sweep_avx2(&mut self, stages: &[Stage; 4], w0: &[f64], dt: f64) {
        self.sweep_impl(stages, w0, dt)
    }

    #[inline(always)]
    fn sweep_impl(&mut self, stages: &[Stage; 4], w0: &[f64], dt: f64) {
        let (nx, np) = (self.spec.nx, self.spec.np);
        let weight = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
        let shift = [0.5 * dt, 0.5 * dt, dt];
        let Self {
            xs,
            ps,
            pm,
            sweeps,
            rings,
            scratch,
            out,
            ..
        } = self;
        for t in 0..nx + 3 {
            for s in 0..4 {
                if t < s || t - s >= nx {
                    continue;
                }
                let i = t - s;
                let (done, todo) = rings.split_at_mut(s);
                let (row, next) = if s == 0 {
                    (&w0[i * np..(i + 1) * np], (i + 1 < nx).then(|| &w0[(i + 1) * np..(i + 2) * np]))
                } else {
                    let r = &done[s - 1];
                    let slot = |m: usize| &r[(m % 3) * np..(m % 3 + 1) * np];
                    (slot(i), (i + 1 < nx).then(|| slot(i + 1)))
                };
                stage_row(&stages[s], xs[i], next.map(|_| xs[i + 1]), ps, pm, row, next, i == 0, &mut sweeps[s], scratch);
                let k = &scratch.k;
                let base = &w0[i * np..(i + 1) * np];
                let o = &mut out[i * np..(i + 1) * np];
                if s == 0 {
                    for ((o, w), kj) in o.iter_mut().zip(base).zip(k) {
                        *o = w + weight[0] * kj;
                    }
                } else {
                    for (o, kj) in o.iter_mut().zip(k) {
                        *o += weight[s] * kj;
                    }
                }
                if s < 3 {
                    let slot = (i % 3) * np;
                    let y = &mut todo[0][slot..slot + np];
                    for ((y, w), kj) in y.iter_mut().zip(base).zip(k) {
                        *y = w + shift[s] * kj;
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
cpufeatures::new!(has_avx512, "avx512f", "avx2", "fma");
#[cfg(target_arch = "x86_64")]
cpufeatures::new!(has_avx2, "avx2", "fma");

/// Writes dW/dt on row i into `sc.k`, given rows i and i + 1 of the stage
/// input. The face flux below row i and v_x·W on row i are carried in `sw`.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn stage_row(
    g: &Stage,
    x: f64,
    x_next: Option<f64>,
    ps: &[f64],
    pm: &[f64],
    row: &[f64],
    next: Option<&[f64]>,
    first: bool,
    sw: &mut Sweep,
    sc: &mut Scratch,
) {
    let np = row.len();
    let Sweep {
        ux,
        ux_next,
        fx,
        fx_next,
    } = sw;
    let Scratch { up, fp, s, k } = sc;
    let vx_row = |x: f64, row: &[f64], out: &mut [f64]| {
        let base = g.ax * x;
        for ((o, p), w) in out.iter_mut().zip(pm).zip(row) {
            *o = (p + base) * w;
        }
    };
    if first {
        fx.fill(0.0);
        vx_row(x, row, ux);
    }
    // flux through the face between rows i and i + 1
    if let (Some(next), Some(xn)) = (next, x_next) {
        vx_row(xn, next, ux_next);
        for (((f, u0), u1), (r0, r1)) in fx_next
            .iter_mut()
            .zip(ux.iter())
            .zip(ux_next.iter())
            .zip(row.iter().zip(next))
        {
            *f = 0.5 * (u0 + u1) - g.cx * (r1 - r0);
        }
        if g.cz != 0.0 {
            for ((sj, r0), r1) in s[1..=np].iter_mut().zip(row).zip(next) {
                *sj = r0 + r1;
            }
            for ((f, up), dn) in fx_next.iter_mut().zip(&s[2..]).zip(&s[..np]) {
                *f -= g.cz * (up - dn);
            }
        }
    } else {
        fx_next.fill(0.0);
    }
    // fluxes along p inside the row
    let ci = -g.kk * x;
    for ((u, p), w) in up.iter_mut().zip(ps).zip(row) {
        *u = (ci - g.bp * p) * w;
    }
    for ((f, (u0, u1)), (r0, r1)) in fp[1..np]
        .iter_mut()
        .zip(up.iter().zip(&up[1..]))
        .zip(row.iter().zip(&row[1..]))
    {
        *f = 0.5 * (u0 + u1) - g.cp * (r1 - r0);
    }
    for (((kj, f0), f1), (g0, g1)) in k
        .iter_mut()
        .zip(fx.iter())
        .zip(fx_next.iter())
        .zip(fp.iter().zip(&fp[1..]))
    {
        *kj = (f0 - f1) * g.idx + (g0 - g1) * g.idp;
    }
    std::mem::swap(fx, fx_next);
    std::mem::swap(ux, ux_next);
}

/// One RK4 step from `t` to `t + dt`.
pub fn fp_step(
    w: &WignerGrid,
    osc: &OscillatorParams,
    cs: &CoefficientSchedule,
    t: f64,
    dt: f64,
) -> Result<WignerGrid> {
    let mut out = w.clone();
    FpSolver::new(w.spec, *osc)?.step(&mut out, cs, t, dt)?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FpEvolution {
    pub times: Vec<f64>,
    pub moments: Vec<GridMoments>,
    pub final_grid: WignerGrid,
}

/// Steps `w0` over `grid`, recording grid moments at the output times.
pub fn fp_evolve(
    w0: &WignerGrid,
    osc: &OscillatorParams,
    cs: &CoefficientSchedule,
    grid: &TimeGrid,
) -> Result<FpEvolution> {
    grid.validate()?;
    let mut solver = FpSolver::new(w0.spec, *osc)?;
    let mut w = w0.clone();
    let mut ev = FpEvolution {
        times: vec![0.0],
        moments: vec![w.moments()],
        final_grid: w0.clone(),
    };
    let h = grid.step();
    for k in 0..grid.steps() {
        let t = grid.time(k);
        solver.step(&mut w, cs, t, h).map_err(|e| match e {
            Error::IntegrationDiverged { t, .. } => Error::IntegrationDiverged { step: k + 1, t },
            e => e,
        })?;
        if grid.is_output(k + 1) {
            ev.times.push(grid.time(k + 1));
            ev.moments.push(w.moments());
        }
    }
    ev.final_grid = w;
    Ok(ev)
}
