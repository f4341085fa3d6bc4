//! Least-squares data backends for coordinate descent.
//!
//! Small `p` uses covariance updates on the Gram matrix `X^T X / n`; wide
//! designs keep the residual vector instead so memory stays `O(np)`.

use nalgebra::DMatrix;

use crate::numerics::{dot, mat_t_vec, mat_vec};

/// Above this many columns the Gram matrix is not formed.
pub const GRAM_MAX_P: usize = 1000;

#[derive(Debug, Clone)]
enum Backend {
    Gram {
        gram: DMatrix<f64>,
        xty: Vec<f64>,
        yty: f64,
    },
    Design {
        x: DMatrix<f64>,
        y: Vec<f64>,
    },
}

/// Data of the smooth part `(1/(2n)) ||y - X beta||^2`.
#[derive(Debug, Clone)]
pub struct CdProblem {
    n: usize,
    p: usize,
    col_sq: Vec<f64>,
    backend: Backend,
}

/// Running state: the gradient `X^T r / n` (Gram backend) or the residual
/// `r` (design backend).
#[derive(Debug, Clone)]
pub struct CdState {
    values: Vec<f64>,
}

impl CdProblem {
    pub fn new(x: &DMatrix<f64>, y: &[f64]) -> Self {
        if x.ncols() <= GRAM_MAX_P {
            Self::gram(x, y)
        } else {
            Self::design(x, y)
        }
    }

    pub fn gram(x: &DMatrix<f64>, y: &[f64]) -> Self {
        let (n, p) = x.shape();
        let nf = n as f64;
        let gram = x.tr_mul(x) / nf;
        let xty: Vec<f64> = mat_t_vec(x, y).into_iter().map(|v| v / nf).collect();
        let yty = dot(y, y) / nf;
        let col_sq = (0..p).map(|j| gram[(j, j)]).collect();
        Self { n, p, col_sq, backend: Backend::Gram { gram, xty, yty } }
    }

    pub fn design(x: &DMatrix<f64>, y: &[f64]) -> Self {
        let (n, p) = x.shape();
        let col_sq = (0..p)
            .map(|j| {
                let c = &x.as_slice()[j * n..(j + 1) * n];
                dot(c, c) / n as f64
            })
            .collect();
        Self { n, p, col_sq, backend: Backend::Design { x: x.clone(), y: y.to_vec() } }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `x_j^T x_j / n`.
    pub fn col_sq(&self, j: usize) -> f64 {
        self.col_sq[j]
    }

    /// `y^T y / n`.
    pub fn yty(&self) -> f64 {
        match &self.backend {
            Backend::Gram { yty, .. } => *yty,
            Backend::Design { y, .. } => dot(y, y) / self.n as f64,
        }
    }

    /// `X^T y / n`.
    pub fn xty(&self) -> Vec<f64> {
        match &self.backend {
            Backend::Gram { xty, .. } => xty.clone(),
            Backend::Design { x, y } => mat_t_vec(x, y).into_iter().map(|v| v / self.n as f64).collect(),
        }
    }

    /// Smallest penalty at which zero is optimal for a weighted L1 penalty:
    /// `max_j |x_j^T y| / (n w_j)`.
    pub fn lambda_max(&self, weights: Option<&[f64]>) -> f64 {
        self.xty()
            .iter()
            .enumerate()
            .map(|(j, c)| match weights {
                Some(w) if w[j] > 0.0 => c.abs() / w[j],
                Some(_) => f64::INFINITY,
                None => c.abs(),
            })
            .fold(0.0_f64, f64::max)
    }

    pub fn state(&self, beta: &[f64]) -> CdState {
        match &self.backend {
            Backend::Gram { gram, xty, .. } => {
                let mut g = xty.clone();
                for (k, b) in beta.iter().enumerate() {
                    if *b != 0.0 {
                        let col = &gram.as_slice()[k * self.p..(k + 1) * self.p];
                        g.iter_mut().zip(col).for_each(|(gj, c)| *gj -= c * b);
                    }
                }
                CdState { values: g }
            }
            Backend::Design { x, y } => {
                let fit = mat_vec(x, beta);
                CdState { values: y.iter().zip(fit).map(|(a, b)| a - b).collect() }
            }
        }
    }

    /// `x_j^T r / n` at the state's iterate.
    #[inline]
    pub fn grad(&self, state: &CdState, j: usize) -> f64 {
        match &self.backend {
            Backend::Gram { .. } => state.values[j],
            Backend::Design { x, .. } => {
                let col = &x.as_slice()[j * self.n..(j + 1) * self.n];
                dot(col, &state.values) / self.n as f64
            }
        }
    }

    /// Accounts for `beta_j += delta`.
    #[inline]
    pub fn apply(&self, state: &mut CdState, j: usize, delta: f64) {
        match &self.backend {
            Backend::Gram { gram, .. } => {
                let col = &gram.as_slice()[j * self.p..(j + 1) * self.p];
                state.values.iter_mut().zip(col).for_each(|(g, c)| *g -= c * delta);
            }
            Backend::Design { x, .. } => {
                let col = &x.as_slice()[j * self.n..(j + 1) * self.n];
                state.values.iter_mut().zip(col).for_each(|(r, c)| *r -= c * delta);
            }
        }
    }

    /// Full gradient `X^T (y - X beta) / n`.
    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let st = self.state(beta);
        (0..self.p).map(|j| self.grad(&st, j)).collect()
    }

    /// `(1/(2n)) ||y - X beta||^2`.
    pub fn half_mse(&self, beta: &[f64]) -> f64 {
        match &self.backend {
            Backend::Gram { gram, xty, yty } => {
                let mut quad = 0.0;
                for (j, bj) in beta.iter().enumerate() {
                    if *bj == 0.0 {
                        continue;
                    }
                    let col = &gram.as_slice()[j * self.p..(j + 1) * self.p];
                    quad += bj * dot(col, beta);
                }
                (0.5 * yty - dot(beta, xty) + 0.5 * quad).max(0.0)
            }
            Backend::Design { .. } => {
                let st = self.state(beta);
                dot(&st.values, &st.values) / (2.0 * self.n as f64)
            }
        }
    }

    /// Sub-problem on the listed columns.
    pub fn restrict(&self, columns: &[usize]) -> CdProblem {
        let k = columns.len();
        let col_sq = columns.iter().map(|&j| self.col_sq[j]).collect();
        let backend = match &self.backend {
            Backend::Gram { gram, xty, yty } => Backend::Gram {
                gram: DMatrix::from_fn(k, k, |a, b| gram[(columns[a], columns[b])]),
                xty: columns.iter().map(|&j| xty[j]).collect(),
                yty: *yty,
            },
            Backend::Design { x, y } => Backend::Design {
                x: DMatrix::from_fn(self.n, k, |i, b| x[(i, columns[b])]),
                y: y.clone(),
            },
        };
        CdProblem { n: self.n, p: k, col_sq, backend }
    }
}
