use nalgebra::DMatrix;
use num_complex::Complex64;

const HALF: usize = 2;
const WIDTH: usize = 2 * HALF + 1;

/// Square matrix with nonzeros only on the five central diagonals.
///
/// `diags[k][i]` holds the entry `(i, i + k − 2)`; slots that fall outside the
/// matrix are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Banded {
    n: usize,
    diags: [Vec<Complex64>; WIDTH],
    active: [bool; WIDTH],
}

impl Banded {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            diags: std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); n]),
            active: [false; WIDTH],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Panics if `m` has entries outside the band.
    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "banded matrix must be square");
        let mut b = Self::zeros(n);
        for j in 0..n {
            for i in 0..n {
                let v = m[(i, j)];
                if v == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let off = j as isize - i as isize;
                assert!(off.unsigned_abs() <= HALF, "entry ({i}, {j}) outside the band");
                b.set(i, j, v);
            }
        }
        b
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (k, d) in self.diags.iter().enumerate() {
            if !self.active[k] {
                continue;
            }
            for (i, &v) in d.iter().enumerate() {
                let j = i as isize + k as isize - HALF as isize;
                if j >= 0 && (j as usize) < self.n {
                    m[(i, j as usize)] = v;
                }
            }
        }
        m
    }

    fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let k = (j as isize - i as isize + HALF as isize) as usize;
        self.diags[k][i] = v;
        self.active[k] = true;
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: Complex64, other: &Banded) {
        assert_eq!(self.n, other.n);
        for k in 0..WIDTH {
            if !other.active[k] {
                continue;
            }
            self.active[k] = true;
            for (a, b) in self.diags[k].iter_mut().zip(&other.diags[k]) {
                *a += c * b;
            }
        }
    }

    pub fn adjoint(&self) -> Banded {
        let mut out = Banded::zeros(self.n);
        for k in 0..WIDTH {
            if !self.active[k] {
                continue;
            }
            let off = k as isize - HALF as isize;
            for i in 0..self.n {
                let j = i as isize + off;
                if j >= 0 && (j as usize) < self.n {
                    out.set(j as usize, i, self.diags[k][i].conj());
                }
            }
        }
        out
    }

    /// `out += c · self · rho`.
    pub fn mul_left_acc(&self, c: Complex64, rho: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        let n = self.n;
        debug_assert_eq!(rho.shape(), (n, n));
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for k in 0..WIDTH {
            if !self.active[k] {
                continue;
            }
            let off = k as isize - HALF as isize;
            let lo = (-off).max(0);
            let hi = n as isize - off.max(0);
            if hi <= lo {
                continue;
            }
            let (lo, hi) = (lo as usize, hi as usize);
            let coef: Vec<Complex64> = self.diags[k][lo..hi].iter().map(|v| c * v).collect();
            for j in 0..n {
                let col = &src[j * n..(j + 1) * n];
                let o = &mut dst[j * n + lo..j * n + hi];
                let s = &col[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for ((o, a), b) in o.iter_mut().zip(&coef).zip(s) {
                    *o += a * b;
                }
            }
        }
    }

    /// `out += c · rho · self`.
    pub fn mul_right_acc(&self, c: Complex64, rho: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        let n = self.n;
        debug_assert_eq!(rho.shape(), (n, n));
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for k in 0..WIDTH {
            if !self.active[k] {
                continue;
            }
            let off = k as isize - HALF as isize;
            // column j of the product picks up column l = j − off of rho
            for j in 0..n {
                let l = j as isize - off;
                if l < 0 || l as usize >= n {
                    continue;
                }
                let l = l as usize;
                let b = c * self.diags[k][l];
                if b == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let (s, o) = (&src[l * n..(l + 1) * n], &mut dst[j * n..(j + 1) * n]);
                for (o, v) in o.iter_mut().zip(s) {
                    *o += b * v;
                }
            }
        }
    }

    /// `out += c · self · v` for a state vector.
    pub fn mul_vec_acc(&self, c: Complex64, v: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        for k in 0..WIDTH {
            if !self.active[k] {
                continue;
            }
            let off = k as isize - HALF as isize;
            let lo = (-off).max(0);
            let hi = n as isize - off.max(0);
            if hi <= lo {
                continue;
            }
            let (lo, hi) = (lo as usize, hi as usize);
            for i in lo..hi {
                out[i] += c * self.diags[k][i] * v[(i as isize + off) as usize];
            }
        }
    }

    /// Largest absolute row sum (the induced ∞-norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                (0..WIDTH)
                    .filter(|&k| self.active[k])
                    .map(|k| self.diags[k][i].norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}
