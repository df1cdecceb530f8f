use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{jackknife, trajectory_rng, EnsembleMoments, Estimator, ForceIncrements, IncrementFactor, Sums, BLOCK};
use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::model::{NoiseCorrelations, OscillatorParams};
use crate::schedule::{Schedule, TimeGrid};

/// exp(M) for a real 2×2 matrix, in closed form.
pub fn expm2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let s = 0.5 * m.trace();
    let n = m - Matrix2::identity() * s;
    // n² = δ²·I because n is traceless
    let d2 = -n.determinant();
    let (c, k) = if d2.abs() < 1e-8 {
        (1.0 + d2 / 2.0 + d2 * d2 / 24.0, 1.0 + d2 / 6.0 + d2 * d2 / 120.0)
    } else if d2 > 0.0 {
        let d = d2.sqrt();
        (d.cosh(), d.sinh() / d)
    } else {
        let d = (-d2).sqrt();
        (d.cos(), d.sin() / d)
    };
    (Matrix2::identity() * c + n * k) * s.exp()
}

fn drift(osc: &OscillatorParams, gamma_rate: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0 / osc.mass, -osc.mass * osc.omega0 * osc.omega0, -gamma_rate)
}

/// Half flows around the kick of the step `[t, t + dt]`.
fn half_flows(osc: &OscillatorParams, nc: &NoiseCorrelations, t: f64, dt: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    let h = 0.5 * dt;
    (
        expm2(&(drift(osc, nc.gamma_rate.at(t + 0.25 * dt)) * h)),
        expm2(&(drift(osc, nc.gamma_rate.at(t + 0.75 * dt)) * h)),
    )
}

fn kick(v: Vector2<f64>, osc: &OscillatorParams, inc: &ForceIncrements) -> Vector2<f64> {
    Vector2::new(v[0] - inc.dg / osc.mass, v[1] + inc.df)
}

/// One step of ẋ = p/m − G/m, ṗ = −mω₀²x + F − Γ̇p.
///
/// The deterministic part is integrated exactly over two half steps with the
/// noise kick (x −= ΔG/m, p += ΔF) in between.
pub fn classical_step(
    x: f64,
    p: f64,
    osc: &OscillatorParams,
    nc: &NoiseCorrelations,
    t: f64,
    dt: f64,
    inc: &ForceIncrements,
) -> (f64, f64) {
    let (a, b) = half_flows(osc, nc, t, dt);
    let v = b * kick(a * Vector2::new(x, p), osc, inc);
    (v[0], v[1])
}

/// Per-step flows and noise factors shared by all trajectories.
#[derive(Clone, Debug)]
pub struct ClassicalPlan {
    pub grid: TimeGrid,
    steps: Vec<(Matrix2<f64>, Matrix2<f64>, IncrementFactor)>,
}

impl ClassicalPlan {
    pub fn new(osc: &OscillatorParams, nc: &NoiseCorrelations, grid: &TimeGrid) -> Result<Self> {
        grid.validate()?;
        let h = grid.step();
        let steps = (0..grid.steps())
            .map(|k| {
                let t = grid.time(k);
                let (a, b) = half_flows(osc, nc, t, h);
                Ok((a, b, IncrementFactor::new(nc, osc, t + 0.5 * h, h)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { grid: *grid, steps })
    }
}

/// Ensemble size, seed and initial phase-space distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub seed: u64,
    pub initial: GaussianState,
}

impl EnsembleSpec {
    fn validate(&self) -> Result<()> {
        if self.n_traj < 100 {
            return Err(Error::InvalidParameter(format!(
                "ensembles need at least 100 trajectories, got {}",
                self.n_traj
            )));
        }
        Ok(())
    }

    fn sample_initial(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vector2<f64> {
        let m = &self.initial.cov;
        let l11 = m[(0, 0)].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { m[(0, 1)] / l11 } else { 0.0 };
        let l22 = (m[(1, 1)] - l21 * l21).max(0.0).sqrt();
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        self.initial.mean + Vector2::new(l11 * z1, l21 * z1 + l22 * z2)
    }

    fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        (0..self.n_traj.div_ceil(BLOCK))
            .map(|b| b * BLOCK..((b + 1) * BLOCK).min(self.n_traj))
            .collect()
    }
}

fn collect_series(grid: &TimeGrid, per_block: &[Vec<Sums>], est: Estimator) -> Vec<EnsembleMoments> {
    grid.output_steps()
        .iter()
        .enumerate()
        .map(|(o, &k)| {
            let blocks: Vec<Sums> = per_block.iter().map(|b| b[o]).collect();
            jackknife(grid.time(k), &blocks, est)
        })
        .collect()
}

/// Sample means and covariances of (x, p) at the output times of `grid`.
pub fn ensemble_covariances(
    spec: &EnsembleSpec,
    osc: &OscillatorParams,
    nc: &NoiseCorrelations,
    grid: &TimeGrid,
) -> Result<Vec<EnsembleMoments>> {
    spec.validate()?;
    let plan = ClassicalPlan::new(osc, nc, grid)?;
    let outputs = grid.output_steps();
    let per_block: Vec<Vec<Sums>> = spec
        .blocks()
        .into_par_iter()
        .map(|range| {
            let mut sums = vec![Sums::default(); outputs.len()];
            for idx in range {
                let mut rng = trajectory_rng(spec.seed, idx as u64);
                let mut v = spec.sample_initial(&mut rng);
                let mut o = 0;
                let mut record = |k: usize, v: &Vector2<f64>, o: &mut usize| {
                    if *o < outputs.len() && outputs[*o] == k {
                        sums[*o].add([v[0], v[1], v[0] * v[0], v[0] * v[1], v[1] * v[1]]);
                        *o += 1;
                    }
                };
                record(0, &v, &mut o);
                for (k, (a, b, f)) in plan.steps.iter().enumerate() {
                    let inc = f.sample(&mut rng);
                    v = b * kick(a * v, osc, &inc);
                    record(k + 1, &v, &mut o);
                }
            }
            sums
        })
        .collect();
    Ok(collect_series(grid, &per_block, Estimator::Sample))
}

/// 𝓕 = F − Γ̇G − Ġ, the only combination of the two forces that enters the
/// classical equation of motion for x.
pub fn equivalent_force_reduction(f: &Schedule, g: &Schedule, gamma_rate: &Schedule) -> Schedule {
    let (f, g, r) = (f.clone(), g.clone(), gamma_rate.clone());
    Schedule::func(move |t| f.at(t) - r.at(t) * g.at(t) - g.derivative(t))
}

/// The force G that reproduces 𝓕 on its own:
/// G_t = Ke^{−Γ_t} − e^{−Γ_t}∫₀ᵗ e^{Γ_τ}𝓕(τ)dτ,
/// tabulated as a Hermite schedule on `n` intervals of `[0, t_final]`.
pub fn g_only_representation(
    force: &Schedule,
    gamma_rate: &Schedule,
    k: f64,
    t_final: f64,
    n: usize,
) -> Result<Schedule> {
    if !(t_final > 0.0) || n == 0 {
        return Err(Error::InvalidParameter("G representation needs t_final > 0 and n ≥ 1".into()));
    }
    let h = t_final / n as f64;
    let gamma = |t: f64| gamma_rate.integral(0.0, t);
    let integrand = |t: f64| gamma(t).exp() * force.at(t);
    let mut integral = 0.0;
    let mut knots = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = i as f64 * h;
        if i > 0 {
            // composite Simpson on the interval [t − h, t]
            const SUB: usize = 8;
            let q = h / SUB as f64;
            let t0 = t - h;
            let mut s = integrand(t0) + integrand(t);
            for j in 1..SUB {
                s += if j % 2 == 1 { 4.0 } else { 2.0 } * integrand(t0 + j as f64 * q);
            }
            integral += s * q / 3.0;
        }
        let e = (-gamma(t)).exp();
        let g = e * (k - integral);
        let dg = -gamma_rate.at(t) * g - force.at(t);
        knots.push((t, g, dg));
    }
    Ok(Schedule::Hermite(knots))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForcedPath {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

/// RK4 solution of ẋ = (p − G)/m, ṗ = −mω₀²x + F − Γ̇p for deterministic forces.
pub fn forced_path(
    x0: f64,
    p0: f64,
    osc: &OscillatorParams,
    gamma_rate: &Schedule,
    f: &Schedule,
    g: &Schedule,
    grid: &TimeGrid,
) -> Result<ForcedPath> {
    grid.validate()?;
    let rhs = |t: f64, v: Vector2<f64>| {
        Vector2::new(
            (v[1] - g.at(t)) / osc.mass,
            -osc.mass * osc.omega0 * osc.omega0 * v[0] + f.at(t) - gamma_rate.at(t) * v[1],
        )
    };
    let h = grid.step();
    let mut v = Vector2::new(x0, p0);
    let mut path = ForcedPath {
        t: vec![0.0],
        x: vec![x0],
        p: vec![p0],
    };
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let k1 = rhs(t, v);
        let k2 = rhs(t + 0.5 * h, v + k1 * (0.5 * h));
        let k3 = rhs(t + 0.5 * h, v + k2 * (0.5 * h));
        let k4 = rhs(t + h, v + k3 * h);
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::IntegrationDiverged { step: k + 1, t: t + h });
        }
        if grid.is_output(k + 1) {
            path.t.push(grid.time(k + 1));
            path.x.push(v[0]);
            path.p.push(v[1]);
        }
    }
    Ok(path)
}

/// Moments of the physical (x, p) when one white-noise realization of 𝓕 is
/// carried by F alone or by G alone.
#[derive(Clone, Debug, PartialEq)]
pub struct RedundancyRun {
    pub f_only: Vec<EnsembleMoments>,
    pub g_only: Vec<EnsembleMoments>,
}

/// Drives both representations with the same increments of a white force 𝓕
/// of intensity `a` (Var d𝓕 = 2a·dt) at constant friction rate `gamma_rate`.
/// In the G-only run dG = −Γ̇G dt − d𝓕 and F = 0.
pub fn noise_redundancy(
    spec: &EnsembleSpec,
    osc: &OscillatorParams,
    a: f64,
    gamma_rate: f64,
    grid: &TimeGrid,
) -> Result<RedundancyRun> {
    spec.validate()?;
    grid.validate()?;
    if !(a >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise intensity must be >= 0, got {a}")));
    }
    let h = grid.step();
    let m = osc.mass;
    let k = m * osc.omega0 * osc.omega0;
    let flow2 = expm2(&(drift(osc, gamma_rate) * (0.5 * h)));
    let flow3 = (Matrix3::new(
        0.0,
        1.0 / m,
        -1.0 / m,
        -k,
        -gamma_rate,
        0.0,
        0.0,
        0.0,
        -gamma_rate,
    ) * (0.5 * h))
        .exp();
    let sigma = (2.0 * a * h).sqrt();
    let outputs = grid.output_steps();
    let per_block: Vec<(Vec<Sums>, Vec<Sums>)> = spec
        .blocks()
        .into_par_iter()
        .map(|range| {
            let mut sf = vec![Sums::default(); outputs.len()];
            let mut sg = vec![Sums::default(); outputs.len()];
            for idx in range {
                let mut rng = trajectory_rng(spec.seed, idx as u64);
                let v0 = spec.sample_initial(&mut rng);
                let mut vf = v0;
                let mut vg = Vector3::new(v0[0], v0[1], 0.0);
                let mut o = 0;
                for step in 0..=grid.steps() {
                    if step > 0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let d = sigma * z;
                        vf = flow2 * (flow2 * vf + Vector2::new(0.0, d));
                        vg = flow3 * (flow3 * vg - Vector3::new(0.0, 0.0, d));
                    }
                    if o < outputs.len() && outputs[o] == step {
                        sf[o].add([vf[0], vf[1], vf[0] * vf[0], vf[0] * vf[1], vf[1] * vf[1]]);
                        sg[o].add([vg[0], vg[1], vg[0] * vg[0], vg[0] * vg[1], vg[1] * vg[1]]);
                        o += 1;
                    }
                }
            }
            (sf, sg)
        })
        .collect();
    let (f, g): (Vec<_>, Vec<_>) = per_block.into_iter().unzip();
    Ok(RedundancyRun {
        f_only: collect_series(grid, &f, Estimator::Sample),
        g_only: collect_series(grid, &g, Estimator::Sample),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::evolve_moments;
    use proptest::prelude::*;

    #[test]
    fn expm2_matches_series() {
        for m in [
            Matrix2::new(0.0, 1.0, -1.0, 0.0),
            Matrix2::new(0.1, 2.0, 0.5, -0.3),
            Matrix2::new(0.0, 1e-9, 0.0, 0.0),
            Matrix2::new(-0.2, 0.7, -3.0, -0.1),
        ] {
            let mut term = Matrix2::identity();
            let mut sum = Matrix2::identity();
            for n in 1..60 {
                term = term * m / n as f64;
                sum += term;
            }
            assert!((expm2(&m) - sum).abs().max() < 1e-13, "{m}");
        }
    }

    #[test]
    fn noiseless_friction_decays_momentum() {
        let osc = OscillatorParams::new(1.0, 1e-8, 1.0).unwrap();
        let lambda = 0.15;
        let nc = NoiseCorrelations::constant(0.0, 0.0, 0.0, 2.0 * lambda);
        let (mut x, mut p) = (0.0, 1.0);
        let dt = 0.01;
        for k in 0..100 {
            (x, p) = classical_step(x, p, &osc, &nc, k as f64 * dt, dt, &ForceIncrements::default());
        }
        assert!((p - (-2.0 * lambda).exp()).abs() < 1e-10);
        assert!(x > 0.0);
    }

    #[test]
    fn noiseless_ensemble_has_zero_spread() {
        let osc = OscillatorParams::units();
        let nc = NoiseCorrelations::constant(0.0, 0.0, 0.0, 0.2);
        let s0 = GaussianState::new(Vector2::new(1.0, 0.0), Matrix2::zeros()).unwrap();
        let spec = EnsembleSpec {
            n_traj: 128,
            seed: 1,
            initial: s0,
        };
        let grid = TimeGrid::new(2.0, 0.01).unwrap().with_output_every(50);
        let out = ensemble_covariances(&spec, &osc, &nc, &grid).unwrap();
        let reference = evolve_moments(&s0, &osc, &nc.to_schedule(), &grid).unwrap();
        for (e, (_, g)) in out.iter().zip(&reference) {
            assert!(e.moments[2].abs() < 1e-12 && e.moments[4].abs() < 1e-12);
            assert!((e.moments[0] - g.mean[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn position_noise_grows_linearly() {
        let osc = OscillatorParams::units();
        let b = 0.5;
        let nc = NoiseCorrelations::constant(0.0, b, 0.0, 0.0);
        let s0 = GaussianState::new(Vector2::zeros(), Matrix2::zeros()).unwrap();
        let spec = EnsembleSpec {
            n_traj: 20_000,
            seed: 2,
            initial: s0,
        };
        let t = 0.05;
        let grid = TimeGrid::new(t, 0.005).unwrap().with_output_every(10);
        let out = ensemble_covariances(&spec, &osc, &nc, &grid).unwrap();
        let last = out.last().unwrap();
        assert!((last.moments[2] - 2.0 * b * t).abs() < 4.0 * last.se[2], "{last:?}");
    }

    #[test]
    fn ensemble_is_deterministic() {
        let osc = OscillatorParams::units();
        let nc = NoiseCorrelations::constant(0.1, 0.05, 0.02, 0.2);
        let spec = EnsembleSpec {
            n_traj: 300,
            seed: 42,
            initial: GaussianState::vacuum(&osc),
        };
        let grid = TimeGrid::new(1.0, 0.01).unwrap().with_output_every(20);
        let a = ensemble_covariances(&spec, &osc, &nc, &grid).unwrap();
        let b = ensemble_covariances(&spec, &osc, &nc, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_representations_agree() {
        let osc = OscillatorParams::units();
        let rate = Schedule::constant(0.2);
        let force = Schedule::func(|t| 0.3 * (1.3 * t).sin());
        let zero = Schedule::constant(0.0);
        let t_final = 2.0 * osc.period();
        let g = g_only_representation(&force, &rate, 0.0, t_final, 4000).unwrap();
        let grid = TimeGrid::new(t_final, 0.005).unwrap();
        let a = forced_path(0.5, 0.0, &osc, &rate, &force, &zero, &grid).unwrap();
        let b = forced_path(0.5, 0.0, &osc, &rate, &zero, &g, &grid).unwrap();
        let err = a.x.iter().zip(&b.x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(err < 1e-7, "{err}");
    }

    proptest! {
        #[test]
        fn reduction_ignores_homogeneous_part(k in -5.0f64..5.0, t in 0.1f64..10.0) {
            let rate = Schedule::constant(0.3);
            let force = Schedule::func(|t| (0.7 * t).cos());
            let zero = Schedule::constant(0.0);
            let g0 = g_only_representation(&force, &rate, 0.0, 12.0, 2400).unwrap();
            let gk = g_only_representation(&force, &rate, k, 12.0, 2400).unwrap();
            let f0 = equivalent_force_reduction(&zero, &g0, &rate).at(t);
            let fk = equivalent_force_reduction(&zero, &gk, &rate).at(t);
            prop_assert!((f0 - fk).abs() < 1e-9);
            prop_assert!((f0 - force.at(t)).abs() < 1e-8);
        }

        #[test]
        fn zero_g_leaves_force(t in 0.0f64..10.0, a in -2.0f64..2.0) {
            let f = Schedule::func(move |t| a * t.sin());
            let r = equivalent_force_reduction(&f, &Schedule::constant(0.0), &Schedule::constant(0.4));
            prop_assert_eq!(r.at(t), f.at(t));
        }
    }
}
