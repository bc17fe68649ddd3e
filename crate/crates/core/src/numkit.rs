//! Deterministic numerical kernels shared by the rest of the crate.
//!
//! Everything here is a pure function of its inputs. Transforms use the
//! unitary normalisation `1/sqrt(N)` in both directions.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub type C64 = Complex64;

/// Below this magnitude of `sin(pi x / N)` the Dirichlet closed form is 0/0.
const DIRICHLET_SINGULAR_EPS: f64 = 1e-12;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let rhs_row = rhs.row(k);
                let out_row = out.row_mut(r);
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// ULA response; element `n` is `exp(j 2 pi n d/lambda sin(theta))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(Vec<C64>);

impl SteeringVector {
    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `sum_{n=1..N} exp(j 2 pi x (n-1) / N)`, evaluated in closed form.
pub fn dirichlet_kernel(x: f64, n: usize) -> C64 {
    assert!(n >= 1, "kernel length must be at least one");
    let nf = n as f64;
    let phase = C64::from_polar(1.0, PI * x * (nf - 1.0) / nf);
    let denom = (PI * x / nf).sin();
    if denom.abs() < DIRICHLET_SINGULAR_EPS {
        // x = mN: the ratio tends to N (-1)^(m(N-1)), cancelling the phase sign
        let m = (x / nf).round() as i64;
        let sign = if (m * (n as i64 - 1)).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        return phase * (nf * sign);
    }
    phase * ((PI * x).sin() / denom)
}

pub fn steering_vector(theta: f64, n_r: usize, d_over_lambda: f64) -> SteeringVector {
    let spatial = 2.0 * PI * d_over_lambda * theta.sin();
    SteeringVector(
        (0..n_r)
            .map(|n| C64::from_polar(1.0, spatial * n as f64))
            .collect(),
    )
}

/// `[F]_{p,q} = exp(-j 2 pi p q / N) / sqrt(N)`.
pub fn unitary_dft(n: usize) -> ComplexMatrix {
    assert!(n >= 1, "DFT size must be at least one");
    let scale = 1.0 / (n as f64).sqrt();
    ComplexMatrix::from_fn(n, n, |p, q| {
        // reduce p*q first so the phase argument stays small for large N
        let pq = (p * q) % n;
        C64::from_polar(scale, -2.0 * PI * pq as f64 / n as f64)
    })
}

/// Output `(m, n)` is input `((m - r) mod M, (n - c) mod N)`.
pub fn double_circular_shift(x: &ComplexMatrix, r: i64, c: i64) -> ComplexMatrix {
    let (m, n) = (x.rows(), x.cols());
    ComplexMatrix::from_fn(m, n, |row, col| {
        let src_r = wrap_index(row as i64 - r, m);
        let src_c = wrap_index(col as i64 - c, n);
        x[(src_r, src_c)]
    })
}

/// `x mod n` in `[0, n)`.
pub fn wrap_index(x: i64, n: usize) -> usize {
    x.rem_euclid(n as i64) as usize
}

/// The centred wrap `((x + n/2) mod n) - n/2`, landing in `[-n/2, n/2 - 1]`.
pub fn wrap_centered(x: i64, n: usize) -> i64 {
    let half = (n / 2) as i64;
    (x + half).rem_euclid(n as i64) - half
}

/// Cached unitary FFT of one length.
#[derive(Clone)]
pub struct UnitaryFft {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl UnitaryFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place `F x`.
    pub fn forward(&self, buf: &mut [C64]) {
        self.forward.process(buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
    }

    /// In-place `F^H x`.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.inverse.process(buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
    }
}

impl std::fmt::Debug for UnitaryFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryFft").field("len", &self.len()).finish()
    }
}
