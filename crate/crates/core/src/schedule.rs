//! Time-dependent scalar coefficients.
//!
//! A [`Schedule`] is a total function of time. Tabulated forms are clamped to
//! their end values outside the table range.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone)]
pub enum Schedule {
    Constant(f64),
    /// `(t, value)` knots, strictly increasing in `t`, linear interpolation.
    Table(Vec<(f64, f64)>),
    /// `(t, value, derivative)` knots, cubic Hermite interpolation.
    Hermite(Vec<(f64, f64, f64)>),
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Schedule::Table(k) => f.debug_tuple("Table").field(&k.len()).finish(),
            Schedule::Hermite(k) => f.debug_tuple("Hermite").field(&k.len()).finish(),
            Schedule::Func(_) => f.write_str("Func(..)"),
        }
    }
}

impl From<f64> for Schedule {
    fn from(v: f64) -> Self {
        Schedule::Constant(v)
    }
}

fn locate<T>(knots: &[T], t: f64, time: impl Fn(&T) -> f64) -> usize {
    // index of the segment [k, k+1] containing t; caller guarantees interior t
    let idx = knots.partition_point(|k| time(k) <= t);
    idx.saturating_sub(1).min(knots.len().saturating_sub(2))
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule::Constant(v)
    }

    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidParameter("empty schedule table".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidParameter(
                "schedule table times must be strictly increasing".into(),
            ));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite schedule knot".into()));
        }
        Ok(Schedule::Table(knots))
    }

    pub fn func(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Schedule::Func(Arc::new(f))
    }

    /// The schedule multiplied by a constant factor.
    pub fn scaled(&self, k: f64) -> Schedule {
        match self {
            Schedule::Constant(v) => Schedule::Constant(k * v),
            Schedule::Table(knots) => Schedule::Table(knots.iter().map(|&(t, v)| (t, k * v)).collect()),
            Schedule::Hermite(knots) => {
                Schedule::Hermite(knots.iter().map(|&(t, v, d)| (t, k * v, k * d)).collect())
            }
            Schedule::Func(f) => {
                let f = f.clone();
                Schedule::Func(Arc::new(move |t| k * f(t)))
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Schedule::Constant(_) => true,
            Schedule::Table(k) => k.len() == 1,
            Schedule::Hermite(k) => k.len() == 1,
            Schedule::Func(_) => false,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Table(k) => {
                if k.len() == 1 || t <= k[0].0 {
                    return k[0].1;
                }
                let last = k[k.len() - 1];
                if t >= last.0 {
                    return last.1;
                }
                let i = locate(k, t, |k| k.0);
                let (t0, v0) = k[i];
                let (t1, v1) = k[i + 1];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
            Schedule::Hermite(k) => {
                if k.len() == 1 || t <= k[0].0 {
                    return k[0].1;
                }
                let last = k[k.len() - 1];
                if t >= last.0 {
                    return last.1;
                }
                let i = locate(k, t, |k| k.0);
                hermite_eval(k[i], k[i + 1], t)
            }
            Schedule::Func(f) => f(t),
        }
    }

    /// Time derivative. Tables and closures use a central difference.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(_) => 0.0,
            Schedule::Hermite(k) if k.len() > 1 && t > k[0].0 && t < k[k.len() - 1].0 => {
                let i = locate(k, t, |k| k.0);
                hermite_slope(k[i], k[i + 1], t)
            }
            _ => {
                let h = 1e-5 * t.abs().max(1.0);
                (self.at(t + h) - self.at(t - h)) / (2.0 * h)
            }
        }
    }

    /// `∫_{t0}^{t1} s(τ) dτ`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        if t1 < t0 {
            return -self.integral(t1, t0);
        }
        if t1 == t0 {
            return 0.0;
        }
        match self {
            Schedule::Constant(v) => v * (t1 - t0),
            Schedule::Table(k) => {
                // the interpolant is piecewise linear, so the trapezoid rule on
                // the merged breakpoints is exact
                let mut pts = vec![t0];
                pts.extend(k.iter().map(|k| k.0).filter(|&t| t > t0 && t < t1));
                pts.push(t1);
                pts.windows(2)
                    .map(|w| 0.5 * (w[1] - w[0]) * (self.at(w[0]) + self.at(w[1])))
                    .sum()
            }
            Schedule::Hermite(k) => {
                // Simpson is exact for the cubic pieces
                let mut pts = vec![t0];
                pts.extend(k.iter().map(|k| k.0).filter(|&t| t > t0 && t < t1));
                pts.push(t1);
                pts.windows(2)
                    .map(|w| {
                        let m = 0.5 * (w[0] + w[1]);
                        (w[1] - w[0]) / 6.0 * (self.at(w[0]) + 4.0 * self.at(m) + self.at(w[1]))
                    })
                    .sum()
            }
            Schedule::Func(f) => gauss_legendre(f.as_ref(), t0, t1),
        }
    }
}

fn hermite_eval(k0: (f64, f64, f64), k1: (f64, f64, f64), t: f64) -> f64 {
    let h = k1.0 - k0.0;
    let s = (t - k0.0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * k0.1
        + (s3 - 2.0 * s2 + s) * h * k0.2
        + (-2.0 * s3 + 3.0 * s2) * k1.1
        + (s3 - s2) * h * k1.2
}

fn hermite_slope(k0: (f64, f64, f64), k1: (f64, f64, f64), t: f64) -> f64 {
    let h = k1.0 - k0.0;
    let s = (t - k0.0) / h;
    let s2 = s * s;
    ((6.0 * s2 - 6.0 * s) * k0.1
        + (3.0 * s2 - 4.0 * s + 1.0) * h * k0.2
        + (-6.0 * s2 + 6.0 * s) * k1.1
        + (3.0 * s2 - 2.0 * s) * h * k1.2)
        / h
}

fn gauss_legendre(f: &(dyn Fn(f64) -> f64 + Send + Sync), t0: f64, t1: f64) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let panels = ((t1 - t0) / 0.05).ceil().max(1.0) as usize;
    let h = (t1 - t0) / panels as f64;
    (0..panels)
        .map(|i| {
            let a = t0 + i as f64 * h;
            let mid = a + 0.5 * h;
            NODES
                .iter()
                .zip(WEIGHTS)
                .map(|(x, w)| w * f(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

/// Master-equation coefficients λ, μ, D_x, D_p, D_z as functions of time.
#[derive(Clone, Debug)]
pub struct CoefficientSchedule {
    pub lambda: Schedule,
    pub mu: Schedule,
    pub dx: Schedule,
    pub dp: Schedule,
    pub dz: Schedule,
}

/// Coefficients frozen at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub lambda: f64,
    pub mu: f64,
    pub dx: f64,
    pub dp: f64,
    pub dz: f64,
}

impl CoefficientSchedule {
    pub fn constant(lambda: f64, mu: f64, dx: f64, dp: f64, dz: f64) -> Self {
        Self {
            lambda: lambda.into(),
            mu: mu.into(),
            dx: dx.into(),
            dp: dp.into(),
            dz: dz.into(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn at(&self, t: f64) -> Coefficients {
        Coefficients {
            lambda: self.lambda.at(t),
            mu: self.mu.at(t),
            dx: self.dx.at(t),
            dp: self.dp.at(t),
            dz: self.dz.at(t),
        }
    }

    /// Γ_t = ∫₀ᵗ 2λ(τ) dτ.
    pub fn gamma(&self, t: f64) -> f64 {
        2.0 * self.lambda.integral(0.0, t)
    }

    /// Checks finiteness and D_x, D_p ≥ 0 on `samples + 1` evenly spaced times.
    pub fn validate_on(&self, t0: f64, t1: f64, samples: usize) -> Result<()> {
        let n = samples.max(1);
        for k in 0..=n {
            let t = t0 + (t1 - t0) * k as f64 / n as f64;
            let c = self.at(t);
            if ![c.lambda, c.mu, c.dx, c.dp, c.dz].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite coefficient at t = {t}"
                )));
            }
            if c.dx < 0.0 || c.dp < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "negative diffusion at t = {t}: D_x = {}, D_p = {}",
                    c.dx, c.dp
                )));
            }
        }
        Ok(())
    }

    pub fn is_translation_invariant_at(&self, t: f64) -> bool {
        let c = self.at(t);
        (c.mu - c.lambda).abs() <= 1e-12 * c.lambda.abs().max(c.mu.abs()).max(1e-300)
    }
}

/// Uniform stepping over `[0, t_final]`.
///
/// The number of steps is `ceil(t_final / dt)` and the actual step is
/// `t_final / steps`, so the last sample lands exactly on `t_final`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub dt: f64,
    /// Record every n-th step (the initial and final states are always recorded).
    pub output_every: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, dt: f64) -> Result<Self> {
        let g = Self {
            t_final,
            dt,
            output_every: 1,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_output_every(mut self, n: usize) -> Self {
        self.output_every = n.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t_final must be >= 0, got {}",
                self.t_final
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        if self.t_final == 0.0 {
            0
        } else {
            ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
        }
    }

    pub fn step(&self) -> f64 {
        match self.steps() {
            0 => self.dt,
            n => self.t_final / n as f64,
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps() {
            self.t_final
        } else {
            k as f64 * self.step()
        }
    }

    pub fn is_output(&self, k: usize) -> bool {
        k.is_multiple_of(self.output_every.max(1)) || k == self.steps()
    }

    pub fn output_steps(&self) -> Vec<usize> {
        (0..=self.steps()).filter(|&k| self.is_output(k)).collect()
    }
}
