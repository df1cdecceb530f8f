//! Classical and quantum trajectories driven by the two stochastic forces.
//!
//! Each trajectory owns a ChaCha8 stream selected by its index, so an ensemble
//! is a pure function of `(seed, n_traj, grid, schedules)` no matter how the
//! work is scheduled. Block sums are reduced in index order.

mod classical;
mod quantum;

pub use classical::{
    classical_step, ensemble_covariances, equivalent_force_reduction, expm2, forced_path,
    g_only_representation, noise_redundancy, ClassicalPlan, EnsembleSpec, ForcedPath, RedundancyRun,
};
pub use quantum::{
    ensemble_average_density, quantum_kick, QuantumEnsemble, QuantumOptions, QuantumPropagator, QuantumState,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{NoiseCorrelations, OscillatorParams};

/// Trajectories per block for reduction and jackknife resampling.
pub(crate) const BLOCK: usize = 64;

/// Integrated forces over one step: ΔF = ∫F dt and ΔG = ∫G dt.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForceIncrements {
    pub df: f64,
    pub dg: f64,
    pub dt: f64,
}

/// Lower Cholesky factor of the increment covariance
/// [[2A dt, 2mC dt], [2mC dt, 2m²B dt]].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IncrementFactor {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
    pub dt: f64,
}

impl IncrementFactor {
    pub fn new(nc: &NoiseCorrelations, osc: &OscillatorParams, t: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        nc.check_samplable(t)?;
        let m = osc.mass;
        let (a, b, c) = (nc.a.at(t), nc.b.at(t), nc.c.at(t));
        let sff = 2.0 * a * dt;
        let sfg = 2.0 * m * c * dt;
        let sgg = 2.0 * m * m * b * dt;
        let degenerate = a * b - c * c <= 1e-12 * (a * b).abs().max(c * c);
        let (l11, l21, l22) = if sff > 0.0 {
            let l11 = sff.sqrt();
            let l21 = sfg / l11;
            let l22 = if degenerate { 0.0 } else { (sgg - l21 * l21).max(0.0).sqrt() };
            (l11, l21, l22)
        } else {
            (0.0, 0.0, sgg.max(0.0).sqrt())
        };
        Ok(Self { l11, l21, l22, dt })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ForceIncrements {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        ForceIncrements {
            df: self.l11 * z1,
            dg: self.l21 * z1 + self.l22 * z2,
            dt: self.dt,
        }
    }
}

/// Draws one pair of force increments for the step `[t, t + dt]`.
pub fn sample_increments(
    nc: &NoiseCorrelations,
    osc: &OscillatorParams,
    t: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ForceIncrements> {
    Ok(IncrementFactor::new(nc, osc, t, dt)?.sample(rng))
}

/// The random stream of trajectory `index` in the ensemble seeded by `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Ensemble moments at one time with jackknife standard errors, both in the
/// order `[⟨x⟩, ⟨p⟩, σ_xx, σ_xp, σ_pp]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleMoments {
    pub t: f64,
    pub moments: [f64; 5],
    pub se: [f64; 5],
}

/// How second moments are formed from the accumulated sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Estimator {
    /// Samples (x, p): unbiased sample covariance.
    Sample,
    /// Per-trajectory expectations (⟨x⟩, ⟨p⟩, ⟨x²⟩, ⟨xp⟩ₛ, ⟨p²⟩) of a
    /// mixture: covariance of the averaged state.
    Mixture,
}

/// Sums of five per-trajectory quantities over a set of trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Sums {
    pub n: f64,
    pub s: [f64; 5],
}

impl Sums {
    pub fn add(&mut self, v: [f64; 5]) {
        self.n += 1.0;
        for (s, v) in self.s.iter_mut().zip(v) {
            *s += v;
        }
    }

    pub fn merge(&mut self, o: &Sums) {
        self.n += o.n;
        for (s, v) in self.s.iter_mut().zip(o.s) {
            *s += v;
        }
    }

    fn minus(&self, o: &Sums) -> Sums {
        let mut r = *self;
        r.n -= o.n;
        for (s, v) in r.s.iter_mut().zip(o.s) {
            *s -= v;
        }
        r
    }

    pub fn moments(&self, est: Estimator) -> [f64; 5] {
        let n = self.n;
        let (mx, mp) = (self.s[0] / n, self.s[1] / n);
        match est {
            Estimator::Sample => {
                let k = 1.0 / (n - 1.0);
                [
                    mx,
                    mp,
                    k * (self.s[2] - n * mx * mx),
                    k * (self.s[3] - n * mx * mp),
                    k * (self.s[4] - n * mp * mp),
                ]
            }
            Estimator::Mixture => [
                mx,
                mp,
                self.s[2] / n - mx * mx,
                self.s[3] / n - mx * mp,
                self.s[4] / n - mp * mp,
            ],
        }
    }
}

/// Moments of the pooled blocks with delete-one-block jackknife errors.
pub(crate) fn jackknife(t: f64, blocks: &[Sums], est: Estimator) -> EnsembleMoments {
    let mut total = Sums::default();
    for b in blocks {
        total.merge(b);
    }
    let moments = total.moments(est);
    let g = blocks.len();
    let mut se = [0.0; 5];
    if g > 1 {
        let loo: Vec<[f64; 5]> = blocks.iter().map(|b| total.minus(b).moments(est)).collect();
        for k in 0..5 {
            let mean = loo.iter().map(|m| m[k]).sum::<f64>() / g as f64;
            let var = loo.iter().map(|m| (m[k] - mean).powi(2)).sum::<f64>();
            se[k] = ((g as f64 - 1.0) / g as f64 * var).sqrt();
        }
    }
    EnsembleMoments { t, moments, se }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn osc() -> OscillatorParams {
        OscillatorParams::units()
    }

    #[test]
    fn zero_noise_gives_zero_increments() {
        let nc = NoiseCorrelations::constant(0.0, 0.0, 0.0, 0.1);
        let mut rng = trajectory_rng(1, 0);
        for _ in 0..100 {
            let inc = sample_increments(&nc, &osc(), 0.0, 0.01, &mut rng).unwrap();
            assert_eq!((inc.df, inc.dg), (0.0, 0.0));
        }
    }

    #[test]
    fn increment_covariance_matches_intensities() {
        let m = 2.0;
        let osc = OscillatorParams::new(m, 1.0, 1.0).unwrap();
        let (a, b, c, dt) = (0.3, 0.2, 0.1, 0.05);
        let nc = NoiseCorrelations::constant(a, b, c, 0.0);
        let mut rng = trajectory_rng(7, 3);
        let n = 200_000;
        let (mut sff, mut sfg, mut sgg) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let inc = sample_increments(&nc, &osc, 0.0, dt, &mut rng).unwrap();
            sff += inc.df * inc.df;
            sfg += inc.df * inc.dg;
            sgg += inc.dg * inc.dg;
        }
        let n = n as f64;
        let tol = |v: f64| 5.0 * v * (2.0 / n).sqrt();
        assert!((sff / n - 2.0 * a * dt).abs() < tol(2.0 * a * dt));
        assert!((sgg / n - 2.0 * m * m * b * dt).abs() < tol(2.0 * m * m * b * dt));
        assert!((sfg / n - 2.0 * m * c * dt).abs() < tol(2.0 * m * m * b * dt));
    }

    #[test]
    fn independent_when_uncorrelated() {
        let nc = NoiseCorrelations::constant(1.0, 1.0, 0.0, 0.0);
        let mut rng = trajectory_rng(11, 0);
        let n = 100_000;
        let (mut sff, mut sfg, mut sgg) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let inc = sample_increments(&nc, &osc(), 0.0, 1.0, &mut rng).unwrap();
            sff += inc.df * inc.df;
            sfg += inc.df * inc.dg;
            sgg += inc.dg * inc.dg;
        }
        let corr = sfg / (sff * sgg).sqrt();
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "{corr}");
    }

    #[test]
    fn degenerate_covariance_is_rank_one() {
        let m = 1.5;
        let osc = OscillatorParams::new(m, 1.0, 1.0).unwrap();
        let (a, b) = (0.4f64, 0.9);
        let c = -(a * b).sqrt();
        let nc = NoiseCorrelations::constant(a, b, c, 0.0);
        let mut rng = trajectory_rng(5, 0);
        for _ in 0..1000 {
            let inc = sample_increments(&nc, &osc, 0.0, 0.1, &mut rng).unwrap();
            assert!((inc.dg - m * c / a * inc.df).abs() <= 1e-12 * inc.df.abs().max(1e-300));
        }
    }

    #[test]
    fn unsamplable_noise_is_rejected() {
        let nc = NoiseCorrelations::constant(1.0, 1.0, 1.5, 0.0);
        let mut rng = trajectory_rng(0, 0);
        assert!(matches!(
            sample_increments(&nc, &osc(), 0.0, 0.1, &mut rng),
            Err(Error::UnsamplableNoise { .. })
        ));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |s, i| {
            let mut r = trajectory_rng(s, i);
            let z: f64 = StandardNormal.sample(&mut r);
            z
        };
        assert_eq!(draw(3, 4), draw(3, 4));
        assert_ne!(draw(3, 4), draw(3, 5));
        assert_ne!(draw(3, 4), draw(4, 4));
    }

    #[test]
    fn jackknife_of_sample_mean_matches_textbook_error() {
        let mut rng = trajectory_rng(9, 0);
        let blocks: Vec<Sums> = (0..100)
            .map(|_| {
                let mut s = Sums::default();
                for _ in 0..BLOCK {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    let p: f64 = StandardNormal.sample(&mut rng);
                    s.add([x, p, x * x, x * p, p * p]);
                }
                s
            })
            .collect();
        let m = jackknife(0.0, &blocks, Estimator::Sample);
        let n = (100 * BLOCK) as f64;
        assert!((m.se[0] * n.sqrt() - 1.0).abs() < 0.25, "{}", m.se[0]);
        assert!((m.se[2] * (n / 2.0).sqrt() - 1.0).abs() < 0.3, "{}", m.se[2]);
    }
}
