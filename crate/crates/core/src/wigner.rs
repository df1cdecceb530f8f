//! Phase-space grids and the Wigner transform of a Fock-basis density matrix.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, OperatorSet};
use crate::gaussian::{gaussian_density, GaussianState};
use crate::model::OscillatorParams;

const MAGIC: &[u8; 8] = b"QBMWIG1\0";

/// Rectangular node lattice x_i = x0 + i·dx, p_j = p0 + j·dp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub np: usize,
    pub x0: f64,
    pub p0: f64,
    pub dx: f64,
    pub dp: f64,
}

impl GridSpec {
    /// `nx × np` nodes spanning [−x_half, x_half] × [−p_half, p_half].
    pub fn centered(nx: usize, np: usize, x_half: f64, p_half: f64) -> Self {
        Self::spanning(nx, np, (-x_half, x_half), (-p_half, p_half))
    }

    pub fn spanning(nx: usize, np: usize, xr: (f64, f64), pr: (f64, f64)) -> Self {
        let dx = (xr.1 - xr.0) / (nx.max(2) - 1) as f64;
        let dp = (pr.1 - pr.0) / (np.max(2) - 1) as f64;
        Self {
            nx,
            np,
            x0: xr.0,
            p0: pr.0,
            dx,
            dp,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p0 + j as f64 * self.dp
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.np < 2 {
            return Err(Error::InvalidParameter("grid needs at least 2 × 2 nodes".into()));
        }
        if !(self.dx > 0.0 && self.dp > 0.0) || !self.x0.is_finite() || !self.p0.is_finite() {
            return Err(Error::InvalidParameter("grid spacings must be positive".into()));
        }
        Ok(())
    }
}

/// Real function of (x, p) on a [`GridSpec`]; `values[i * np + j]` is W(x_i, p_j).
#[derive(Clone, Debug, PartialEq)]
pub struct WignerGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub sxx: f64,
    pub sxp: f64,
    pub spp: f64,
    pub mass: f64,
}

impl GridMoments {
    pub fn moments(&self) -> [f64; 5] {
        [self.mean_x, self.mean_p, self.sxx, self.sxp, self.spp]
    }
}

impl WignerGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.nx * spec.np],
        }
    }

    /// Samples the Gaussian density of `state` at the nodes.
    pub fn from_gaussian(spec: GridSpec, state: &GaussianState) -> Result<Self> {
        spec.validate()?;
        let mut g = Self::zeros(spec);
        for i in 0..spec.nx {
            for j in 0..spec.np {
                g.values[i * spec.np + j] = gaussian_density(state, spec.x(i), spec.p(j))?;
            }
        }
        Ok(g)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.spec.np + j]
    }

    /// Σ W dx dp.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.dx * self.spec.dp
    }

    /// Midpoint-rule moments (each node is the centre of a dx × dp cell).
    pub fn moments(&self) -> GridMoments {
        let s = &self.spec;
        let mut acc = [0.0f64; 6];
        for i in 0..s.nx {
            let x = s.x(i);
            let row = &self.values[i * s.np..(i + 1) * s.np];
            let (mut m0, mut mp, mut mpp) = (0.0, 0.0, 0.0);
            for (j, &w) in row.iter().enumerate() {
                let p = s.p(j);
                m0 += w;
                mp += w * p;
                mpp += w * p * p;
            }
            acc[0] += m0;
            acc[1] += x * m0;
            acc[2] += mp;
            acc[3] += x * x * m0;
            acc[4] += x * mp;
            acc[5] += mpp;
        }
        let cell = s.dx * s.dp;
        let mass = acc[0] * cell;
        let mx = acc[1] / acc[0];
        let mp = acc[2] / acc[0];
        GridMoments {
            mean_x: mx,
            mean_p: mp,
            sxx: acc[3] / acc[0] - mx * mx,
            sxp: acc[4] / acc[0] - mx * mp,
            spp: acc[5] / acc[0] - mp * mp,
            mass,
        }
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        let s = &self.spec;
        w.write_all(&(s.nx as u64).to_le_bytes())?;
        w.write_all(&(s.np as u64).to_le_bytes())?;
        for v in [s.x0, s.p0, s.dx, s.dp] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 56 || &bytes[..8] != MAGIC {
            return Err(Error::Config(format!("{}: not a grid file", path.display())));
        }
        let u = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
        let f = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
        let (nx, np) = (u(8) as usize, u(16) as usize);
        let spec = GridSpec {
            nx,
            np,
            x0: f(24),
            p0: f(32),
            dx: f(40),
            dp: f(48),
        };
        let want = 56 + 8 * nx * np;
        if bytes.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: bytes.len(),
            });
        }
        let values = (0..nx * np).map(|k| f(56 + 8 * k)).collect();
        Ok(Self { spec, values })
    }

    /// Two header lines (`# nx,np,x0,p0,dx,dp` and their values) followed by
    /// one row of `np` values per x node.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let s = &self.spec;
        writeln!(w, "# nx,np,x0,p0,dx,dp")?;
        writeln!(w, "# {},{},{:e},{:e},{:e},{:e}", s.nx, s.np, s.x0, s.p0, s.dx, s.dp)?;
        for i in 0..s.nx {
            let row: Vec<String> = self.values[i * s.np..(i + 1) * s.np]
                .iter()
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("{}: {msg}", path.display()));
        let mut lines = BufReader::new(File::open(path)?).lines();
        lines.next().ok_or_else(|| bad("empty file"))??;
        let head = lines.next().ok_or_else(|| bad("missing header"))??;
        let f: Vec<&str> = head.trim_start_matches('#').trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad("malformed header"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("malformed header"));
        let spec = GridSpec {
            nx: num(f[0])? as usize,
            np: num(f[1])? as usize,
            x0: num(f[2])?,
            p0: num(f[3])?,
            dx: num(f[4])?,
            dp: num(f[5])?,
        };
        let mut values = Vec::with_capacity(spec.nx * spec.np);
        for line in lines {
            for v in line?.split(',') {
                values.push(v.trim().parse::<f64>().map_err(|_| bad("malformed value"))?);
            }
        }
        if values.len() != spec.nx * spec.np {
            return Err(Error::DimensionMismatch {
                expected: spec.nx * spec.np,
                got: values.len(),
            });
        }
        Ok(Self { spec, values })
    }
}

/// Normalized Hermite functions ψ₀..ψ_{n−1} at `x`.
pub fn hermite_functions(osc: &OscillatorParams, x: f64, n: usize, out: &mut [f64]) {
    let k = (osc.mass * osc.omega0 / osc.hbar).sqrt();
    let xi = k * x;
    out[0] = (k * k / PI).powf(0.25) * (-0.5 * xi * xi).exp();
    if n > 1 {
        out[1] = 2f64.sqrt() * xi * out[0];
    }
    for m in 1..n.saturating_sub(1) {
        let mf = m as f64;
        out[m + 1] = (2.0 / (mf + 1.0)).sqrt() * xi * out[m] - (mf / (mf + 1.0)).sqrt() * out[m - 1];
    }
}

/// W(x, p) = (1/πħ) ∫ dy e^{−2ipy/ħ} ⟨x+y|ρ|x−y⟩ on the nodes of `spec`.
///
/// Fails with a grid-resolution error when the node sum deviates from unit
/// mass by more than 1e−6.
pub fn wigner_transform(rho: &DensityMatrix, ops: &OperatorSet, spec: &GridSpec) -> Result<WignerGrid> {
    spec.validate()?;
    if rho.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: rho.dim(),
        });
    }
    let hbar = ops.osc.hbar;
    let n = rho.dim();
    let p_max = spec.p0.abs().max(spec.p(spec.np - 1).abs()).max(1e-300);
    let y_max = 0.5 * (spec.nx - 1) as f64 * spec.dx;
    let dy = spec.dx.min(PI * hbar / (4.0 * p_max));
    let ny = (y_max / dy).ceil() as usize;

    // phase[k][j] = e^{−2i p_j y_k/ħ}
    let phase: Vec<Vec<Complex64>> = (0..=ny)
        .map(|k| {
            let y = k as f64 * dy;
            (0..spec.np)
                .map(|j| Complex64::from_polar(1.0, -2.0 * spec.p(j) * y / hbar))
                .collect()
        })
        .collect();

    let mut grid = WignerGrid::zeros(*spec);
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut rv = vec![Complex64::new(0.0, 0.0); n];
    let mut f = vec![Complex64::new(0.0, 0.0); ny + 1];
    let data = &rho.data;
    for i in 0..spec.nx {
        let x = spec.x(i);
        for (k, fk) in f.iter_mut().enumerate() {
            let y = k as f64 * dy;
            hermite_functions(&ops.osc, x + y, n, &mut u);
            hermite_functions(&ops.osc, x - y, n, &mut v);
            for (r, slot) in rv.iter_mut().enumerate() {
                *slot = (0..n).map(|c| data[(r, c)] * v[c]).sum();
            }
            *fk = u.iter().zip(&rv).map(|(a, b)| b * *a).sum();
        }
        let row = &mut grid.values[i * spec.np..(i + 1) * spec.np];
        for (j, w) in row.iter_mut().enumerate() {
            let mut s = f[0].re;
            for k in 1..=ny {
                s += 2.0 * (phase[k][j] * f[k]).re;
            }
            *w = s * dy / (PI * hbar);
        }
    }
    let mass = grid.mass();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::GridResolution {
            mass,
            expected: 1.0,
            tol: 1e-6,
        });
    }
    Ok(grid)
}
