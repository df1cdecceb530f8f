//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance`; pass a substring of a criterion
//! name to run only the matching ones.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qbm::fock::{
    build_operators, evolve_density, evolve_density_canonical, lindblad_decompose, max_abs, trace_distance,
    DensityMatrix, EvolveOptions,
};
use qbm::fokker_planck::{fp_evolve, max_stable_dt};
use qbm::gaussian::{
    canonical_to_physical, evolve_moments, moment_rel_error, propagator_series, Frame, GaussianState,
};
use qbm::stochastic::{
    ensemble_average_density, ensemble_covariances, forced_path, g_only_representation, noise_redundancy,
    EnsembleSpec, QuantumOptions,
};
use qbm::wigner::{wigner_transform, GridSpec, WignerGrid};
use qbm::{preset, CoefficientSchedule, NoiseCorrelations, OscillatorParams, Preset, Schedule, ThermalSpec, TimeGrid};

type Outcome = qbm::Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

const PERIOD: f64 = 2.0 * PI;
const ALPHA: Complex64 = Complex64::new(1.0, 0.5);

fn units() -> OscillatorParams {
    OscillatorParams::units()
}

fn optical(n_bar: f64, lambda: f64) -> qbm::Result<CoefficientSchedule> {
    let osc = units();
    // k_B T chosen so that the Bose occupation equals n_bar
    let th = if n_bar == 0.0 {
        ThermalSpec::new(0.0, 1.0)?
    } else {
        ThermalSpec::new(osc.hbar * osc.omega0 / (1.0 / n_bar + 1.0).ln(), 1.0)?
    };
    preset(&Preset::OpticalSme, &osc, &th, lambda)
}

/// Closed-form moments for μ = 0, constant λ and optical diffusion with
/// occupation n̄, in units m = ħ = ω₀ = 1.
fn optical_oracle(s0: &GaussianState, lambda: f64, n_bar: f64, t: f64) -> [f64; 5] {
    let (c, s) = (t.cos(), t.sin());
    let rot = Matrix2::new(c, s, -s, c);
    let decay = (-lambda * t).exp();
    let mean = rot * s0.mean * decay;
    let ss = Matrix2::identity() * (n_bar + 0.5);
    let cov = rot * s0.cov * rot.transpose() * decay * decay + ss * (1.0 - decay * decay);
    [mean[0], mean[1], cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]]
}

fn cross_engine_moments() -> Outcome {
    let start = Instant::now();
    let osc = units();
    let lambda = 0.1;
    let t_final = 3.0 * PERIOD;
    let s0 = GaussianState::coherent(&osc, ALPHA);
    let grid = TimeGrid::new(t_final, PERIOD / 200.0)?.with_output_every(20);
    let (mut oracle_err, mut fock_err, mut fp_err) = (0.0f64, 0.0f64, 0.0f64);
    for n_bar in [0.0, 1.0] {
        let cs = optical(n_bar, lambda)?;
        let gauss = evolve_moments(&s0, &osc, &cs, &grid)?;
        for (t, g) in &gauss {
            oracle_err = oracle_err.max(moment_rel_error(&optical_oracle(&s0, lambda, n_bar, *t), &g.moments(), &osc));
        }

        let ops = build_operators(&osc, 60)?;
        let rho0 = DensityMatrix::coherent(60, ALPHA);
        let opts = EvolveOptions {
            track_min_eig: false,
            ..EvolveOptions::default()
        };
        let fock = evolve_density(&rho0, &ops, &cs, &grid, &opts)?;
        for ((_, g), obs) in gauss.iter().zip(&fock.observables) {
            fock_err = fock_err.max(moment_rel_error(&g.moments(), &obs.moments(), &osc));
        }

        // window: the orbit radius plus a margin of standard deviations
        let sigma = (n_bar + 0.5f64).sqrt();
        let half = s0.mean.norm() + 6.5 * sigma;
        let spec = GridSpec::centered(512, 512, half, half);
        let w0 = WignerGrid::from_gaussian(spec, &s0)?;
        let per_period = (PERIOD / max_stable_dt(&spec, &osc, &cs, 0.0)).ceil() as usize;
        let fp_grid = TimeGrid::new(t_final, PERIOD / per_period as f64)?.with_output_every(per_period);
        let fp = fp_evolve(&w0, &osc, &cs, &fp_grid)?;
        for (t, m) in fp.times.iter().zip(&fp.moments) {
            let g = gauss
                .iter()
                .find(|(tg, _)| (tg - t).abs() < 1e-9)
                .map(|(_, g)| g.moments())
                .unwrap_or_else(|| optical_oracle(&s0, lambda, n_bar, *t));
            fp_err = fp_err.max(moment_rel_error(&g, &m.moments(), &osc));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = oracle_err < 1e-6 && fock_err < 1e-5 && fp_err < 1e-3 && secs < 60.0;
    Ok((
        ok,
        format!(
            "gaussian vs closed form {oracle_err:.2e} (< 1e-6), fock {fock_err:.2e} (< 1e-5), \
             fokker-planck 512^2 {fp_err:.2e} (< 1e-3), {secs:.1} s (< 60 s)"
        ),
    ))
}

fn stochastic_classical_oracle() -> Outcome {
    let start = Instant::now();
    let osc = units();
    let lambda = 0.1;
    let c = optical(1.0, lambda)?.at(0.0);
    let nc = NoiseCorrelations::constant(c.dp, c.dx, c.dz, 2.0 * lambda);
    let s0 = GaussianState::coherent(&osc, ALPHA);
    let grid = TimeGrid::new(3.0 * PERIOD, PERIOD / 200.0)?.with_output_every(10);
    let spec = EnsembleSpec {
        n_traj: 10_000,
        seed: 2024,
        initial: s0,
    };
    let ens = ensemble_covariances(&spec, &osc, &nc, &grid)?;
    let exact = evolve_moments(&s0, &osc, &nc.to_schedule(), &grid)?;
    let floor = 1e-12;
    let mut z_max = 0.0f64;
    for (e, (_, g)) in ens.iter().zip(&exact) {
        let g = g.moments();
        for k in 0..5 {
            let z = (e.moments[k] - g[k]).abs() / e.se[k].max(floor);
            z_max = z_max.max(z);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        z_max < 4.0 && secs < 60.0,
        format!(
            "{} outputs x 5 moments, max |z| = {z_max:.2} (< 4), {secs:.1} s (< 60 s)",
            ens.len()
        ),
    ))
}

/// Independent 2000-trajectory replicates. The 8000-trajectory figure is the
/// mean trace distance over every average of four distinct replicates.
fn random_unitary_enactment() -> Outcome {
    const REPLICATES: u64 = 12;
    let osc = units();
    let n_max = 40;
    let lambda = 0.01;
    let d = 0.07;
    let nc = NoiseCorrelations::constant(d, d, 0.0, 2.0 * lambda);
    let ops = build_operators(&osc, n_max)?;
    let rho0 = DensityMatrix::coherent(n_max, Complex64::new(0.5, 0.25));
    let grid = TimeGrid::new(PERIOD, PERIOD / 800.0)?.with_output_every(800);
    let exact = evolve_density_canonical(
        &rho0,
        &ops,
        &nc,
        &grid,
        &EvolveOptions {
            track_min_eig: false,
            keep_states: true,
            ..EvolveOptions::default()
        },
    )?;
    let target = exact.states.last().expect("final state");
    let mut reps = Vec::new();
    for r in 0..REPLICATES {
        let ens = ensemble_average_density(&rho0, &ops, &nc, 2000, &grid, 1000 + r, &QuantumOptions::default())?;
        reps.push(ens.states.last().expect("final state").data.clone());
    }
    let td = |m: DMatrix<Complex64>| trace_distance(&DensityMatrix { data: m }, target);
    let mut small = Vec::new();
    for m in &reps {
        small.push(td(m.clone())?);
    }
    let mut large = Vec::new();
    let n = reps.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let sum = &reps[i] + &reps[j] + &reps[k] + &reps[l];
                    large.push(td(sum * Complex64::new(0.25, 0.0))?);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let worst = small.iter().copied().fold(0.0, f64::max);
    let ratio = mean(&small) / mean(&large);
    Ok((
        worst <= 0.05 && (1.6..=2.6).contains(&ratio),
        format!(
            "trace distance at 2000: mean {:.4}, worst {worst:.4} (<= 0.05); at 8000: mean {:.4}; ratio {ratio:.2} (in [1.6, 2.6])",
            mean(&small),
            mean(&large)
        ),
    ))
}

fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Non-Hamiltonian terms of the bilinear master equation written out as
/// commutators of the truncated x and p matrices.
#[allow(clippy::too_many_arguments)]
fn dissipative_terms(
    rho: &DMatrix<Complex64>,
    x: &DMatrix<Complex64>,
    p: &DMatrix<Complex64>,
    lambda: f64,
    dx: f64,
    dp: f64,
    dz: f64,
    hbar: f64,
) -> DMatrix<Complex64> {
    let comm = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>| a * b - b * a;
    let anti = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>| a * b + b * a;
    let re = |v: f64| Complex64::new(v, 0.0);
    let friction = (comm(p, &anti(x, rho)) - comm(x, &anti(p, rho))) * Complex64::new(0.0, lambda / (2.0 * hbar));
    let h2 = hbar * hbar;
    friction - comm(x, &comm(x, rho)) * re(dp / h2) - comm(p, &comm(p, rho)) * re(dx / h2)
        + (comm(x, &comm(p, rho)) + comm(p, &comm(x, rho))) * re(dz / h2)
}

fn lindblad_decomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let osc = OscillatorParams::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.5..2.0))?;
        let lambda = rng.random_range(0.0..0.5);
        let mu = rng.random_range(0.0..0.5);
        let dx = rng.random_range(0.05..1.0);
        let dz = rng.random_range(-0.5..0.5);
        let extra = rng.random_range(0.0..0.3);
        let dp = (dz * dz + (0.5 * osc.hbar * lambda).powi(2) + extra) / dx;
        let cs = CoefficientSchedule::constant(lambda, mu, dx, dp, dz);
        let ops = build_operators(&osc, 12)?;
        let set = lindblad_decompose(&cs, 0.0, &osc)?;
        for _ in 0..3 {
            let rho = random_hermitian(12, &mut rng);
            let expected = dissipative_terms(&rho, &ops.x, &ops.p, lambda, dx, dp, dz, osc.hbar);
            let got = set.dissipator(&rho, &ops);
            worst = worst.max(max_abs(&(got - expected)));
        }
    }
    let osc = units();
    let th = ThermalSpec::new(1.0, 1.0)?;
    let lambda = 0.2;
    let expected_margin = -(0.5 * osc.hbar * lambda).powi(2);
    let mut rejected = Vec::new();
    for kind in [Preset::Agarwal, Preset::CaldeiraLeggett] {
        let cs = preset(&kind, &osc, &th, lambda)?;
        match lindblad_decompose(&cs, 0.0, &osc) {
            Err(qbm::Error::NotLindbladReducible { margin, .. }) if margin == expected_margin => {
                rejected.push(format!("{} margin {margin:e}", kind.name()))
            }
            other => {
                return Ok((false, format!("{} not rejected as expected: {other:?}", kind.name())));
            }
        }
    }
    Ok((
        worst < 1e-10,
        format!("50 sets, max entry error {worst:.2e} (< 1e-10); rejected {}", rejected.join(", ")),
    ))
}

fn positivity_dichotomy() -> Outcome {
    let osc = units();
    let opts = EvolveOptions::default();
    let mut worst_optical = f64::INFINITY;
    for n_bar in [0.0, 1.0] {
        let cs = optical(n_bar, 0.1)?;
        // pure states keep exact zero eigenvalues, so the step must hold the
        // fourth-order error on them below the threshold
        let grid = TimeGrid::new(3.0 * PERIOD, PERIOD / 3200.0)?.with_output_every(80);
        for (n_max, rho0) in [
            (60, DensityMatrix::coherent(60, ALPHA)),
            (60, DensityMatrix::fock(60, 1)?),
            (80, DensityMatrix::squeezed(80, 1.0, 0.0)),
        ] {
            let ops = build_operators(&osc, n_max)?;
            let ev = evolve_density(&rho0, &ops, &cs, &grid, &opts)?;
            let m = ev.observables.iter().map(|o| o.min_eig).fold(f64::INFINITY, f64::min);
            worst_optical = worst_optical.min(m);
        }
    }

    let th = ThermalSpec::new(0.1 * osc.hbar * osc.omega0, 1.0)?;
    let cs = preset(&Preset::CaldeiraLeggett, &osc, &th, 0.2)?;
    let grid = TimeGrid::new(PERIOD, PERIOD / 800.0)?.with_output_every(4);
    let ops = build_operators(&osc, 80)?;
    let ev = evolve_density(&DensityMatrix::squeezed(80, 1.0, 0.0), &ops, &cs, &grid, &opts)?;
    let cl_min = ev.observables.iter().map(|o| o.min_eig).fold(f64::INFINITY, f64::min);
    let first = ev
        .times
        .iter()
        .zip(&ev.observables)
        .find(|(&t, o)| t < PERIOD && o.min_eig < -1e-4)
        .map(|(&t, _)| t);
    Ok((
        worst_optical >= -1e-10 && first.is_some(),
        format!(
            "optical_sme min eigenvalue {worst_optical:.2e} (>= -1e-10); caldeira_leggett min {cl_min:.2e}, \
             first below -1e-4 at t = {} (< {PERIOD:.3})",
            first.map_or("never".to_string(), |t| format!("{t:.3}"))
        ),
    ))
}

fn frame_equivalence() -> Outcome {
    let osc = units();
    let lambda = 0.1;
    let cs = preset(&Preset::dekker(0.05, 0.1, 0.02), &osc, &ThermalSpec::new(0.0, 1.0)?, lambda)?;
    let s0 = GaussianState::squeezed(&osc, 0.5, 0.3).displaced(Vector2::new(1.0, -0.5));
    let grid = TimeGrid::new(2.0 * PERIOD, PERIOD / 1000.0)?.with_output_every(50);
    let phys = propagator_series(&osc, &cs, Frame::Physical, &grid)?;
    let canon = propagator_series(&osc, &cs, Frame::Canonical, &grid)?;
    let mut frames = 0.0f64;
    for ((t, rp), (_, rc)) in phys.iter().zip(&canon) {
        let a = rp.apply(&s0);
        let c = rc.apply(&s0);
        let b = canonical_to_physical(c.mean, c.cov, 2.0 * lambda * t);
        frames = frames.max(moment_rel_error(&a.moments(), &b.moments(), &osc));
    }

    let free = CoefficientSchedule::constant(lambda, lambda, 0.0, 0.0, 0.0);
    let det_grid = TimeGrid::new(2.0 * PERIOD, PERIOD / 1000.0)?.with_output_every(50);
    let mut det_err = 0.0f64;
    for (t, s) in evolve_moments(&s0, &osc, &free, &det_grid)? {
        let law = s0.det() * (-4.0 * lambda * t).exp();
        det_err = det_err.max((s.det() - law).abs() / law);
    }
    Ok((
        frames < 1e-8 && det_err < 1e-6,
        format!("frames rel err {frames:.2e} (< 1e-8), determinant law rel err {det_err:.2e} (< 1e-6)"),
    ))
}

fn force_redundancy() -> Outcome {
    let osc = units();
    let rate = 0.2;
    let gamma_rate = Schedule::constant(rate);
    let t_final = 5.0 * PERIOD;
    let force = Schedule::func(|t| 0.3 * (1.7 * t).sin() + 0.2 * (0.6 * t).cos());
    let zero = Schedule::constant(0.0);
    let grid = TimeGrid::new(t_final, PERIOD / 400.0)?;
    let g = g_only_representation(&force, &gamma_rate, 0.0, t_final, 4000)?;
    let f_path = forced_path(1.0, 0.0, &osc, &gamma_rate, &force, &zero, &grid)?;
    let g_path = forced_path(1.0, 0.0, &osc, &gamma_rate, &zero, &g, &grid)?;
    let dx = f_path
        .x
        .iter()
        .zip(&g_path.x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let spec = EnsembleSpec {
        n_traj: 4000,
        seed: 99,
        initial: GaussianState::vacuum(&osc),
    };
    let noise_grid = TimeGrid::new(t_final, PERIOD / 200.0)?.with_output_every(200);
    let run = noise_redundancy(&spec, &osc, 0.05, rate, &noise_grid)?;
    let (f, g) = (run.f_only.last().expect("output"), run.g_only.last().expect("output"));
    let se = (f.se[4].powi(2) + g.se[4].powi(2)).sqrt();
    let sep = (f.moments[4] - g.moments[4]).abs() / se;
    Ok((
        dx < 1e-6 && sep > 5.0,
        format!(
            "deterministic max |dx| {dx:.2e} (< 1e-6); noise sigma_pp {:.4} vs {:.4}, {sep:.1} standard errors (> 5)",
            f.moments[4], g.moments[4]
        ),
    ))
}

fn conservation_suite() -> Outcome {
    let osc = units();
    let cs = optical(1.0, 0.1)?;
    let ops = build_operators(&osc, 60)?;
    let rho0 = DensityMatrix::coherent(60, ALPHA);
    let grid = TimeGrid::new(3.0 * PERIOD, PERIOD / 200.0)?.with_output_every(50);
    let ev = evolve_density(
        &rho0,
        &ops,
        &cs,
        &grid,
        &EvolveOptions {
            track_min_eig: false,
            ..EvolveOptions::default()
        },
    )?;
    let trace_drift = ev.max_trace_drift * grid.steps() as f64;
    let herm = ev.max_hermiticity_residual;

    let spec = GridSpec::centered(256, 256, 9.0, 9.0);
    let w = wigner_transform(&ev.final_state, &ops, &spec)?;
    let norm = (w.mass() - 1.0).abs();

    let s0 = GaussianState::coherent(&osc, ALPHA);
    let half = s0.mean.norm() + 8.0 * 1.5f64.sqrt();
    let fp_spec = GridSpec::centered(256, 256, half, half);
    let w0 = WignerGrid::from_gaussian(fp_spec, &s0)?;
    let n = (PERIOD / max_stable_dt(&fp_spec, &osc, &cs, 0.0)).ceil() as usize;
    let fp = fp_evolve(&w0, &osc, &cs, &TimeGrid::new(PERIOD, PERIOD / n as f64)?.with_output_every(n))?;
    let mass_drift = (fp.final_grid.mass() - w0.mass()).abs();
    Ok((
        trace_drift < 1e-10 && herm < 1e-12 && norm < 1e-6 && mass_drift < 1e-6,
        format!(
            "trace drift {trace_drift:.2e} (< 1e-10), hermiticity {herm:.2e} (< 1e-12), \
             wigner normalization {norm:.2e} (< 1e-6), fokker-planck mass drift {mass_drift:.2e} per period (< 1e-6)"
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("cross_engine_moments", cross_engine_moments),
        ("stochastic_classical_oracle", stochastic_classical_oracle),
        ("random_unitary_enactment", random_unitary_enactment),
        ("lindblad_decomposition", lindblad_decomposition),
        ("positivity_dichotomy", positivity_dichotomy),
        ("frame_equivalence", frame_equivalence),
        ("force_redundancy", force_redundancy),
        ("conservation_suite", conservation_suite),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "{} {name}: {detail} [{:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
