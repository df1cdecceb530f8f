//! Random-unitary trajectories in the canonical frame.
//!
//! The state is kept in the canonical variables (x, P = e^{Γ}p). Each step
//! applies a half step of H_ef = e^{−Γ}P²/2m + e^{Γ}V, the displacement
//! exp[(i/ħ)(e^{Γ}ΔF·x + (ΔG/m)·P)] and another half step of H_ef. Averaging
//! the projectors over the noise reproduces the canonical-frame master
//! equation with coefficients A·e^{2Γ}, B and −C·e^{Γ}.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{jackknife, trajectory_rng, EnsembleMoments, Estimator, ForceIncrements, IncrementFactor, Sums, BLOCK};
use crate::error::{Error, Result};
use crate::fock::{c64, DensityMatrix, OperatorSet};
use crate::model::NoiseCorrelations;
use crate::schedule::TimeGrid;

#[derive(Clone, Debug, PartialEq)]
pub enum QuantumState {
    Pure(DVector<Complex64>),
    Mixed(DMatrix<Complex64>),
}

impl QuantumState {
    pub fn density(&self) -> DensityMatrix {
        match self {
            QuantumState::Pure(psi) => DensityMatrix::from_pure(psi),
            QuantumState::Mixed(rho) => DensityMatrix { data: rho.clone() },
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        match self {
            QuantumState::Pure(psi) => psi.norm_squared(),
            QuantumState::Mixed(rho) => rho.trace().re,
        }
    }

    /// Population of the two highest number states.
    pub fn leakage(&self) -> f64 {
        match self {
            QuantumState::Pure(psi) => {
                let n = psi.len();
                (n.saturating_sub(2)..n).map(|k| psi[k].norm_sqr()).sum()
            }
            QuantumState::Mixed(rho) => DensityMatrix { data: rho.clone() }.leakage(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantumOptions {
    /// Largest population of the two top number states accepted on any
    /// trajectory at an output time.
    pub leakage_threshold: f64,
}

impl Default for QuantumOptions {
    fn default() -> Self {
        Self {
            leakage_threshold: 1e-6,
        }
    }
}

/// A complex matrix stored as separate real and imaginary parts.
#[derive(Clone, Debug)]
struct SplitMatrix {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl SplitMatrix {
    fn mul(&self, o: &SplitMatrix) -> SplitMatrix {
        SplitMatrix {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    fn to_complex(&self) -> DMatrix<Complex64> {
        self.re.zip_map(&self.im, c64)
    }

    /// (re, im) ← self · (re, im).
    fn apply(&self, re: &mut DMatrix<f64>, im: &mut DMatrix<f64>, buf: &mut (DMatrix<f64>, DMatrix<f64>)) {
        buf.0.gemm(1.0, &self.re, re, 0.0);
        buf.0.gemm(-1.0, &self.im, im, 1.0);
        buf.1.gemm(1.0, &self.re, im, 0.0);
        buf.1.gemm(1.0, &self.im, re, 1.0);
        std::mem::swap(re, &mut buf.0);
        std::mem::swap(im, &mut buf.1);
    }
}

/// Kinetic and potential energy, both real in the number basis.
struct FreeParts {
    kinetic: DMatrix<f64>,
    potential: DMatrix<f64>,
    hbar: f64,
}

impl FreeParts {
    fn new(ops: &OperatorSet) -> Self {
        Self {
            kinetic: ops.kinetic.map(|c| c.re),
            potential: ops.potential.map(|c| c.re),
            hbar: ops.osc.hbar,
        }
    }

    /// exp(−i H_ef h/ħ) at friction integral `gamma`.
    fn unitary(&self, gamma: f64, h: f64) -> SplitMatrix {
        let hef = &self.kinetic * (-gamma).exp() + &self.potential * gamma.exp();
        let eig = hef.symmetric_eigen();
        let q = &eig.eigenvectors;
        let qt = q.transpose();
        let phase = |f: fn(f64) -> f64| {
            let mut m = q.clone();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                col *= f(-eig.eigenvalues[j] * h / self.hbar);
            }
            m * &qt
        };
        SplitMatrix {
            re: phase(f64::cos),
            im: phase(f64::sin),
        }
    }
}

fn free_unitary(ops: &OperatorSet, gamma: f64, h: f64) -> DMatrix<Complex64> {
    FreeParts::new(ops).unitary(gamma, h).to_complex()
}
/// The tridiagonal generator (i/ħ)(αx + βP) as its super-diagonal
/// `ur + i·ui`; the sub-diagonal is minus its conjugate.
struct Displacement {
    ur: Vec<f64>,
    ui: Vec<f64>,
}

/// Scratch vectors for [`Displacement::apply_split`].
#[derive(Clone, Debug, Default)]
struct TaylorBuf {
    term: (Vec<f64>, Vec<f64>),
    next: (Vec<f64>, Vec<f64>),
}

impl TaylorBuf {
    fn resize(&mut self, n: usize) {
        for v in [&mut self.term.0, &mut self.term.1, &mut self.next.0, &mut self.next.1] {
            v.resize(n, 0.0);
        }
    }
}

impl Displacement {
    fn empty() -> Self {
        Self {
            ur: Vec::new(),
            ui: Vec::new(),
        }
    }

    fn new(ops: &OperatorSet, alpha: f64, beta: f64) -> Self {
        let mut d = Self::empty();
        d.set(ops, alpha, beta);
        d
    }

    fn set(&mut self, ops: &OperatorSet, alpha: f64, beta: f64) {
        let i_hbar = c64(0.0, 1.0 / ops.osc.hbar);
        self.ur.clear();
        self.ui.clear();
        for k in 0..ops.dim() - 1 {
            let u = i_hbar * (ops.x[(k, k + 1)] * alpha + ops.p[(k, k + 1)] * beta);
            self.ur.push(u.re);
            self.ui.push(u.im);
        }
    }

    fn norm_bound(&self) -> f64 {
        let sq = self
            .ur
            .iter()
            .zip(&self.ui)
            .map(|(r, i)| r * r + i * i)
            .fold(0.0, f64::max);
        2.0 * sq.sqrt()
    }

    /// out = c·X·v on split real and imaginary parts.
    #[inline(always)]
    fn apply_generator(&self, c: f64, v: (&[f64], &[f64]), out: (&mut [f64], &mut [f64])) {
        let n = v.0.len();
        let (vr, vi) = (&v.0[..n], &v.1[..n]);
        let (or, oi) = (&mut out.0[..n], &mut out.1[..n]);
        let (ur, ui) = (&self.ur[..n - 1], &self.ui[..n - 1]);
        // super-diagonal: u·v[k+1]
        let sup = or[..n - 1]
            .iter_mut()
            .zip(oi[..n - 1].iter_mut())
            .zip(ur.iter().zip(ui))
            .zip(vr[1..].iter().zip(&vi[1..]));
        for (((o_r, o_i), (a, b)), (xr, xi)) in sup {
            *o_r = a * xr - b * xi;
            *o_i = a * xi + b * xr;
        }
        or[n - 1] = 0.0;
        oi[n - 1] = 0.0;
        // sub-diagonal: −conj(u)·v[k−1]
        let sub = or[1..]
            .iter_mut()
            .zip(oi[1..].iter_mut())
            .zip(ur.iter().zip(ui))
            .zip(vr[..n - 1].iter().zip(&vi[..n - 1]));
        for (((o_r, o_i), (a, b)), (xr, xi)) in sub {
            *o_r = c * (*o_r - a * xr - b * xi);
            *o_i = c * (*o_i - a * xi + b * xr);
        }
        or[0] *= c;
        oi[0] *= c;
    }

    /// v ← exp(X)v by Taylor series, split into sub-steps of norm ≤ ½. The
    /// series is cut once the remainder is below 1e-17 relative to v.
    fn apply_split(&self, re: &mut [f64], im: &mut [f64], buf: &mut TaylorBuf) {
        #[cfg(target_arch = "x86_64")]
        {
            if has_avx2::get() {
                // SAFETY: the required CPU features were detected at runtime
                return unsafe { self.apply_split_avx2(re, im, buf) };
            }
        }
        self.apply_split_impl(re, im, buf)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn apply_split_avx2(&self, re: &mut [f64], im: &mut [f64], buf: &mut TaylorBuf) {
        self.apply_split_impl(re, im, buf)
    }

    #[inline(always)]
    fn apply_split_impl(&self, re: &mut [f64], im: &mut [f64], buf: &mut TaylorBuf) {
        let norm = self.norm_bound();
        if norm == 0.0 {
            return;
        }
        buf.resize(re.len());
        let sub = (2.0 * norm).ceil().max(1.0) as usize;
        let scale = 1.0 / sub as f64;
        let nu = norm * scale;
        let TaylorBuf { term, next } = buf;
        for _ in 0..sub {
            term.0.copy_from_slice(re);
            term.1.copy_from_slice(im);
            let v2: f64 = re.iter().chain(im.iter()).map(|x| x * x).sum();
            for k in 1..60 {
                self.apply_generator(scale / k as f64, (&term.0, &term.1), (&mut next.0, &mut next.1));
                let mut t2 = 0.0;
                for (r, t) in re.iter_mut().zip(&next.0) {
                    *r += t;
                    t2 += t * t;
                }
                for (i, t) in im.iter_mut().zip(&next.1) {
                    *i += t;
                    t2 += t * t;
                }
                std::mem::swap(term, next);
                // the remaining terms shrink at least geometrically by nu / (j + 1)
                let q = nu / (k as f64 + 1.0);
                if t2 * (q / (1.0 - q)).powi(2) <= 1e-34 * v2 {
                    break;
                }
            }
        }
    }

    fn apply(&self, v: &mut DVector<Complex64>) {
        let mut re: Vec<f64> = v.iter().map(|c| c.re).collect();
        let mut im: Vec<f64> = v.iter().map(|c| c.im).collect();
        self.apply_split(&mut re, &mut im, &mut TaylorBuf::default());
        for (c, (r, i)) in v.iter_mut().zip(re.into_iter().zip(im)) {
            *c = c64(r, i);
        }
    }

    fn matrix(&self, n: usize) -> DMatrix<Complex64> {
        let mut d = DMatrix::identity(n, n);
        for mut col in d.column_iter_mut() {
            let mut v = col.clone_owned();
            self.apply(&mut v);
            col.copy_from(&v);
        }
        d
    }
}

#[cfg(target_arch = "x86_64")]
cpufeatures::new!(has_avx2, "avx2", "fma");

fn displacement(ops: &OperatorSet, inc: &ForceIncrements, gamma: f64) -> Displacement {
    Displacement::new(ops, gamma.exp() * inc.df, inc.dg / ops.osc.mass)
}

fn apply_unitary(state: &mut QuantumState, u: &DMatrix<Complex64>, buf: &mut DVector<Complex64>) {
    match state {
        QuantumState::Pure(psi) => {
            buf.gemv(c64(1.0, 0.0), u, psi, c64(0.0, 0.0));
            std::mem::swap(psi, buf);
        }
        QuantumState::Mixed(rho) => *rho = u * &*rho * u.adjoint(),
    }
}

fn apply_displacement(state: &mut QuantumState, d: &Displacement) {
    match state {
        QuantumState::Pure(psi) => d.apply(psi),
        QuantumState::Mixed(rho) => {
            let m = d.matrix(rho.nrows());
            *rho = &m * &*rho * m.adjoint();
        }
    }
}

/// One step of length `dt` with the friction integral held at `gamma_t`.
pub fn quantum_kick(
    state: &QuantumState,
    ops: &OperatorSet,
    inc: &ForceIncrements,
    gamma_t: f64,
    dt: f64,
) -> Result<QuantumState> {
    let dim = match state {
        QuantumState::Pure(psi) => psi.len(),
        QuantumState::Mixed(rho) => rho.nrows(),
    };
    if dim != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: dim,
        });
    }
    let u = free_unitary(ops, gamma_t, 0.5 * dt);
    let mut buf = DVector::zeros(dim);
    let mut out = state.clone();
    apply_unitary(&mut out, &u, &mut buf);
    apply_displacement(&mut out, &displacement(ops, inc, gamma_t));
    apply_unitary(&mut out, &u, &mut buf);
    let leak = out.leakage();
    let threshold = QuantumOptions::default().leakage_threshold;
    if leak > threshold {
        return Err(Error::TruncationInsufficient {
            t: dt,
            leakage: leak,
            threshold,
        });
    }
    Ok(out)
}

/// Everything shared by the trajectories of one ensemble: the friction
/// integral at each half step and kick, and the noise factors. Free unitaries
/// are built one step at a time, with adjacent half steps merged when no
/// output falls between them.
pub struct QuantumPropagator {
    grid: TimeGrid,
    free: FreeParts,
    half_gamma: Vec<(f64, f64)>,
    kick_gamma: Vec<f64>,
    factors: Vec<IncrementFactor>,
}

/// The free evolution before kick k and, at output times, after it.
struct StepUnitaries {
    pre: SplitMatrix,
    flush: Option<SplitMatrix>,
}

/// Trajectories advanced together through the same free unitaries.
struct Batch {
    rngs: Vec<ChaCha8Rng>,
    states: BatchStates,
    buf: (DMatrix<f64>, DMatrix<f64>),
    disp: Displacement,
    taylor: TaylorBuf,
}

enum BatchStates {
    /// Column j is trajectory j.
    Pure { re: DMatrix<f64>, im: DMatrix<f64> },
    Mixed(Vec<DMatrix<Complex64>>),
}

impl Batch {
    fn new(state0: &QuantumState, rngs: Vec<ChaCha8Rng>) -> Self {
        let m = rngs.len();
        let (n, states) = match state0 {
            QuantumState::Pure(psi) => (
                psi.len(),
                BatchStates::Pure {
                    re: DMatrix::from_fn(psi.len(), m, |i, _| psi[i].re),
                    im: DMatrix::from_fn(psi.len(), m, |i, _| psi[i].im),
                },
            ),
            QuantumState::Mixed(rho) => (rho.nrows(), BatchStates::Mixed(vec![rho.clone(); m])),
        };
        Self {
            rngs,
            states,
            buf: (DMatrix::zeros(n, m), DMatrix::zeros(n, m)),
            disp: Displacement::empty(),
            taylor: TaylorBuf::default(),
        }
    }

    fn len(&self) -> usize {
        self.rngs.len()
    }

    fn state(&self, j: usize) -> QuantumState {
        match &self.states {
            BatchStates::Pure { re, im } => {
                QuantumState::Pure(DVector::from_fn(re.nrows(), |i, _| c64(re[(i, j)], im[(i, j)])))
            }
            BatchStates::Mixed(rhos) => QuantumState::Mixed(rhos[j].clone()),
        }
    }

    fn free(&mut self, u: &SplitMatrix) {
        match &mut self.states {
            BatchStates::Pure { re, im } => u.apply(re, im, &mut self.buf),
            BatchStates::Mixed(rhos) => {
                let uc = u.to_complex();
                let ua = uc.adjoint();
                for r in rhos {
                    *r = &uc * &*r * &ua;
                }
            }
        }
    }

    fn kick(&mut self, ops: &OperatorSet, factor: &IncrementFactor, gamma: f64) {
        let n = ops.dim();
        for (j, rng) in self.rngs.iter_mut().enumerate() {
            let inc = factor.sample(rng);
            self.disp.set(ops, gamma.exp() * inc.df, inc.dg / ops.osc.mass);
            match &mut self.states {
                BatchStates::Pure { re, im } => {
                    let r = &mut re.as_mut_slice()[j * n..(j + 1) * n];
                    let i = &mut im.as_mut_slice()[j * n..(j + 1) * n];
                    self.disp.apply_split(r, i, &mut self.taylor);
                }
                BatchStates::Mixed(rhos) => {
                    let m = self.disp.matrix(rhos[j].nrows());
                    rhos[j] = &m * &rhos[j] * m.adjoint();
                }
            }
        }
    }

    /// `rho += Σ_j ρ_j`.
    fn accumulate(&self, rho: &mut DMatrix<Complex64>) {
        match &self.states {
            BatchStates::Pure { re, im } => {
                let (rt, it) = (re.transpose(), im.transpose());
                let real = re * &rt + im * &it;
                let imag = im * &rt - re * &it;
                *rho += real.zip_map(&imag, c64);
            }
            BatchStates::Mixed(rhos) => {
                for r in rhos {
                    *rho += r;
                }
            }
        }
    }
}

impl QuantumPropagator {
    pub fn new(ops: &OperatorSet, nc: &NoiseCorrelations, grid: &TimeGrid) -> Result<Self> {
        grid.validate()?;
        let h = grid.step();
        let n = grid.steps();
        let half_gamma = (0..n)
            .map(|k| (nc.gamma(grid.time(k) + 0.25 * h), nc.gamma(grid.time(k) + 0.75 * h)))
            .collect();
        let kick_gamma = (0..n).map(|k| nc.gamma(grid.time(k) + 0.5 * h)).collect();
        let factors = (0..n)
            .map(|k| IncrementFactor::new(nc, &ops.osc, grid.time(k) + 0.5 * h, h))
            .collect::<Result<_>>()?;
        Ok(Self {
            grid: *grid,
            free: FreeParts::new(ops),
            half_gamma,
            kick_gamma,
            factors,
        })
    }

    fn unitaries(&self, k: usize) -> StepUnitaries {
        let h = 0.5 * self.grid.step();
        let first = self.free.unitary(self.half_gamma[k].0, h);
        let pre = if k == 0 || self.grid.is_output(k) {
            first
        } else {
            first.mul(&self.free.unitary(self.half_gamma[k - 1].1, h))
        };
        let flush = self
            .grid
            .is_output(k + 1)
            .then(|| self.free.unitary(self.half_gamma[k].1, h));
        StepUnitaries { pre, flush }
    }

    fn advance(&self, ops: &OperatorSet, batch: &mut Batch, k: usize, u: &StepUnitaries) {
        batch.free(&u.pre);
        batch.kick(ops, &self.factors[k], self.kick_gamma[k]);
        if let Some(f) = &u.flush {
            batch.free(f);
        }
    }

    /// Runs one trajectory, calling `observe(output_index, state)` at every
    /// output time (including t = 0). The free unitaries are rebuilt on every
    /// call; [`ensemble_average_density`] shares them across trajectories.
    pub fn run(
        &self,
        ops: &OperatorSet,
        state0: &QuantumState,
        rng: &mut ChaCha8Rng,
        mut observe: impl FnMut(usize, &QuantumState) -> Result<()>,
    ) -> Result<()> {
        let mut batch = Batch::new(state0, vec![rng.clone()]);
        let mut o = 0;
        observe(o, &batch.state(0))?;
        o += 1;
        for k in 0..self.grid.steps() {
            self.advance(ops, &mut batch, k, &self.unitaries(k));
            if self.grid.is_output(k + 1) {
                observe(o, &batch.state(0))?;
                o += 1;
            }
        }
        *rng = batch.rngs.swap_remove(0);
        Ok(())
    }
}

/// Ensemble-averaged state and moments at the output times.
#[derive(Clone, Debug)]
pub struct QuantumEnsemble {
    pub times: Vec<f64>,
    /// Averaged density matrices in the canonical frame.
    pub states: Vec<DensityMatrix>,
    /// Physical-frame moments of the averaged state, p = e^{−Γ}P.
    pub moments: Vec<EnsembleMoments>,
    pub max_leakage: f64,
}

struct BlockAccum {
    rho: Vec<DMatrix<Complex64>>,
    sums: Vec<Sums>,
    leak: f64,
}

/// ⟨x⟩, ⟨P⟩, ⟨x²⟩, ⟨{x, P}⟩/2, ⟨P²⟩ of a pure state from xψ and Pψ.
fn pure_moments(ops: &OperatorSet, psi: &DVector<Complex64>) -> [f64; 5] {
    let n = psi.len();
    let one = c64(1.0, 0.0);
    let mut xv = vec![c64(0.0, 0.0); n];
    let mut pv = vec![c64(0.0, 0.0); n];
    ops.band.x.mul_vec_acc(one, psi.as_slice(), &mut xv);
    ops.band.p.mul_vec_acc(one, psi.as_slice(), &mut pv);
    let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(a, b)| a.conj() * b).sum::<Complex64>().re;
    let s = psi.as_slice();
    [dot(s, &xv), dot(s, &pv), dot(&xv, &xv), dot(&xv, &pv), dot(&pv, &pv)]
}

/// Averages `n_traj` random-unitary trajectories started from `rho0`.
/// Pure initial states are propagated as vectors, mixed ones as matrices.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_average_density(
    rho0: &DensityMatrix,
    ops: &OperatorSet,
    nc: &NoiseCorrelations,
    n_traj: usize,
    grid: &TimeGrid,
    seed: u64,
    opts: &QuantumOptions,
) -> Result<QuantumEnsemble> {
    if n_traj < 100 {
        return Err(Error::InvalidParameter(format!(
            "ensembles need at least 100 trajectories, got {n_traj}"
        )));
    }
    if rho0.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: rho0.dim(),
        });
    }
    let prop = QuantumPropagator::new(ops, nc, grid)?;
    let state0 = if rho0.purity() > 1.0 - 1e-12 {
        let eig = rho0.data.clone().symmetric_eigen();
        let k = eig.eigenvalues.imax();
        QuantumState::Pure(eig.eigenvectors.column(k).clone_owned())
    } else {
        QuantumState::Mixed(rho0.data.clone())
    };
    let outputs = grid.output_steps();
    let times: Vec<f64> = outputs.iter().map(|&k| grid.time(k)).collect();
    let gammas: Vec<f64> = times.iter().map(|&t| nc.gamma(t)).collect();
    let dim = ops.dim();
    let x2 = &ops.x * &ops.x;
    let p2 = &ops.p * &ops.p;

    let mut blocks: Vec<(Batch, BlockAccum)> = (0..n_traj.div_ceil(BLOCK))
        .map(|b| {
            let rngs = (b * BLOCK..((b + 1) * BLOCK).min(n_traj))
                .map(|i| trajectory_rng(seed, i as u64))
                .collect();
            let acc = BlockAccum {
                rho: vec![DMatrix::zeros(dim, dim); outputs.len()],
                sums: vec![Sums::default(); outputs.len()],
                leak: 0.0,
            };
            (Batch::new(&state0, rngs), acc)
        })
        .collect();

    let observe = |o: usize, batch: &Batch, acc: &mut BlockAccum| -> Result<()> {
        let e = (-gammas[o]).exp();
        for j in 0..batch.len() {
            let state = batch.state(j);
            let leak = state.leakage();
            if leak > opts.leakage_threshold {
                return Err(Error::TruncationInsufficient {
                    t: times[o],
                    leakage: leak,
                    threshold: opts.leakage_threshold,
                });
            }
            acc.leak = acc.leak.max(leak);
            let v = match &state {
                QuantumState::Pure(psi) => pure_moments(ops, psi),
                QuantumState::Mixed(m) => {
                    let d = DensityMatrix { data: m.clone() };
                    [d.expect(&ops.x), d.expect(&ops.p), d.expect(&x2), d.expect(&ops.hmu), d.expect(&p2)]
                }
            };
            acc.sums[o].add([v[0], e * v[1], v[2], e * v[3], e * e * v[4]]);
        }
        batch.accumulate(&mut acc.rho[o]);
        Ok(())
    };

    blocks.par_iter_mut().try_for_each(|(b, a)| observe(0, b, a))?;
    let mut o = 1;
    for k in 0..grid.steps() {
        let u = prop.unitaries(k);
        let out = grid.is_output(k + 1);
        blocks.par_iter_mut().try_for_each(|(b, a)| {
            prop.advance(ops, b, k, &u);
            if out {
                observe(o, b, a)
            } else {
                Ok(())
            }
        })?;
        if out {
            o += 1;
        }
    }

    let mut states = Vec::with_capacity(outputs.len());
    let mut moments = Vec::with_capacity(outputs.len());
    for (o, &t) in times.iter().enumerate() {
        let mut rho = DMatrix::zeros(dim, dim);
        for (_, a) in &blocks {
            rho += &a.rho[o];
        }
        rho /= c64(n_traj as f64, 0.0);
        states.push(DensityMatrix { data: rho });
        let sums: Vec<Sums> = blocks.iter().map(|(_, a)| a.sums[o]).collect();
        moments.push(jackknife(t, &sums, Estimator::Mixture));
    }
    Ok(QuantumEnsemble {
        times,
        states,
        moments,
        max_leakage: blocks.iter().map(|(_, a)| a.leak).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_operators, coherent_vector, fock_vector, max_abs, trace_distance};
    use crate::model::OscillatorParams;
    use crate::stochastic::trajectory_rng;

    fn ops(n: usize) -> OperatorSet {
        build_operators(&OscillatorParams::units(), n).unwrap()
    }

    #[test]
    fn zero_increments_are_free_evolution() {
        let ops = ops(20);
        let psi = QuantumState::Pure(coherent_vector(20, c64(0.8, 0.2)));
        let out = quantum_kick(&psi, &ops, &ForceIncrements::default(), 0.3, 0.1).unwrap();
        let u = free_unitary(&ops, 0.3, 0.1);
        let QuantumState::Pure(psi0) = &psi else { unreachable!() };
        let QuantumState::Pure(v) = &out else { unreachable!() };
        assert!((v - &u * psi0).norm() < 1e-13);
    }

    #[test]
    fn force_kick_shifts_momentum() {
        let ops = ops(40);
        let gamma = 0.4;
        let df = 0.7;
        let inc = ForceIncrements { df, dg: 0.0, dt: 1e-9 };
        let psi = QuantumState::Pure(fock_vector(40, 0));
        let out = quantum_kick(&psi, &ops, &inc, gamma, 1e-9).unwrap().density();
        let big_p = out.expect(&ops.p);
        assert!((big_p - gamma.exp() * df).abs() < 1e-6, "{big_p}");
        // physical momentum e^{−Γ}P picks up ΔF
        assert!(((-gamma).exp() * big_p - df).abs() < 1e-6);
        let x = out.expect(&ops.x);
        assert!(x.abs() < 1e-6);
    }

    #[test]
    fn g_kick_shifts_position_down() {
        let ops = ops(40);
        let inc = ForceIncrements { df: 0.0, dg: 0.5, dt: 1e-9 };
        let psi = QuantumState::Pure(fock_vector(40, 0));
        let out = quantum_kick(&psi, &ops, &inc, 0.0, 1e-9).unwrap().density();
        assert!((out.expect(&ops.x) + 0.5).abs() < 1e-6);
    }

    #[test]
    fn kicks_preserve_norm() {
        let ops = ops(30);
        let nc = NoiseCorrelations::constant(0.05, 0.05, 0.01, 0.0);
        let mut rng = trajectory_rng(3, 0);
        let f = IncrementFactor::new(&nc, &ops.osc, 0.0, 0.01).unwrap();
        let mut s = QuantumState::Pure(fock_vector(30, 1));
        for _ in 0..1000 {
            s = quantum_kick(&s, &ops, &f.sample(&mut rng), 0.0, 0.01).unwrap();
        }
        assert!((s.norm_sqr() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mixed_and_pure_paths_agree() {
        let ops = ops(16);
        let psi = coherent_vector(16, c64(0.5, -0.3));
        let inc = ForceIncrements { df: 0.2, dg: -0.1, dt: 0.05 };
        let a = quantum_kick(&QuantumState::Pure(psi.clone()), &ops, &inc, 0.1, 0.05).unwrap();
        let b = quantum_kick(&QuantumState::Mixed(&psi * psi.adjoint()), &ops, &inc, 0.1, 0.05).unwrap();
        assert!(max_abs(&(a.density().data - b.density().data)) < 1e-13);
    }

    #[test]
    fn noiseless_ensemble_is_unitary() {
        let ops = ops(20);
        let nc = NoiseCorrelations::constant(0.0, 0.0, 0.0, 0.1);
        let rho0 = DensityMatrix::coherent(20, c64(0.6, 0.0));
        let grid = TimeGrid::new(1.0, 0.05).unwrap().with_output_every(5);
        let ens = ensemble_average_density(&rho0, &ops, &nc, 128, &grid, 9, &QuantumOptions::default()).unwrap();
        let QuantumState::Pure(mut psi) = QuantumState::Pure(coherent_vector(20, c64(0.6, 0.0))) else {
            unreachable!()
        };
        let h = grid.step();
        for k in 0..grid.steps() {
            let t = grid.time(k);
            psi = free_unitary(&ops, nc.gamma(t + 0.75 * h), 0.5 * h)
                * (free_unitary(&ops, nc.gamma(t + 0.25 * h), 0.5 * h) * psi);
        }
        let d = trace_distance(ens.states.last().unwrap(), &DensityMatrix::from_pure(&psi)).unwrap();
        assert!(d < 1e-10, "{d}");
        assert!(ens.moments.last().unwrap().se.iter().all(|s| *s < 1e-10));
    }

    #[test]
    fn deterministic_replay() {
        let ops = ops(12);
        let nc = NoiseCorrelations::constant(0.02, 0.02, 0.0, 0.05);
        let rho0 = DensityMatrix::coherent(12, c64(0.3, 0.0));
        let grid = TimeGrid::new(0.5, 0.05).unwrap();
        let o = QuantumOptions::default();
        let a = ensemble_average_density(&rho0, &ops, &nc, 150, &grid, 1, &o).unwrap();
        let b = ensemble_average_density(&rho0, &ops, &nc, 150, &grid, 1, &o).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.moments, b.moments);
    }
}
