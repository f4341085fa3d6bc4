//! Dense linear algebra, column standardization, covariance construction and
//! reproducible Gaussian sampling shared by every other module.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A centered `n x p` design. Columns are stored contiguously (column-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
}

impl DesignMatrix {
    /// Wraps an already-centered matrix. Centering is not re-checked here.
    pub fn from_centered(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 1 {
            return Err(Error::DimensionMismatch(format!(
                "design needs n >= 2 and p >= 1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.values.as_slice()[j * n..(j + 1) * n]
    }

    /// Keeps only the listed columns, in the listed order.
    pub fn select_columns(&self, columns: &[usize]) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, columns.len(), |i, k| self.values[(i, columns[k])])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StandardizationMode {
    /// Center only.
    Raw,
    /// Center and divide every column by its standard deviation (divisor n).
    Univariate,
}

impl StandardizationMode {
    pub fn label(self) -> &'static str {
        match self {
            StandardizationMode::Raw => "raw",
            StandardizationMode::Univariate => "univ",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" | "r" => Some(StandardizationMode::Raw),
            "univ" | "univariate" | "us" => Some(StandardizationMode::Univariate),
            _ => None,
        }
    }
}

/// Output of [`center_and_standardize`].
#[derive(Debug, Clone)]
pub struct Standardized {
    pub design: DesignMatrix,
    pub response: Vec<f64>,
    /// Column divisors; all exactly 1.0 under `Raw`.
    pub scales: Vec<f64>,
    pub column_means: Vec<f64>,
    pub response_mean: f64,
    pub mode: StandardizationMode,
}

/// Centers `x` and `y`; under `Univariate` also rescales each column to unit
/// (population) standard deviation.
pub fn center_and_standardize(
    x: &DMatrix<f64>,
    y: &[f64],
    mode: StandardizationMode,
) -> Result<Standardized> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            n
        )));
    }
    if n < 2 || p < 1 {
        return Err(Error::DimensionMismatch(format!(
            "design needs n >= 2 and p >= 1, got {n}x{p}"
        )));
    }
    let mut out = x.clone();
    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col = &mut out.as_mut_slice()[j * n..(j + 1) * n];
        let mean = compensated_mean(col);
        col.iter_mut().for_each(|v| *v -= mean);
        // second pass removes the rounding residue of the first
        let residue = compensated_mean(col);
        col.iter_mut().for_each(|v| *v -= residue);
        means.push(mean + residue);
        let scale = match mode {
            StandardizationMode::Raw => 1.0,
            StandardizationMode::Univariate => {
                let var = compensated_sum(col.iter().map(|v| v * v)) / n as f64;
                let sd = var.sqrt();
                let magnitude = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if !(sd > 0.0) || sd <= 1e-12 * magnitude.max(f64::MIN_POSITIVE) {
                    return Err(Error::ConstantColumn { column: j });
                }
                col.iter_mut().for_each(|v| *v /= sd);
                sd
            }
        };
        scales.push(scale);
    }
    let y_mean = compensated_mean(y);
    let mut response: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let residue = compensated_mean(&response);
    response.iter_mut().for_each(|v| *v -= residue);
    Ok(Standardized {
        design: DesignMatrix::from_centered(out)?,
        response,
        scales,
        column_means: means,
        response_mean: y_mean + residue,
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovarianceBase {
    Identity,
    Toeplitz(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub base: CovarianceBase,
    /// Per-column variances.
    pub scale_diag: Vec<f64>,
}

/// `Sigma[j,k] = sigma_j * sigma_k * rho^|j-k|` (rho = 0 for the identity base).
pub fn build_covariance(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    let p = spec.scale_diag.len();
    if p == 0 {
        return Err(Error::InvalidParameter("empty scale diagonal".into()));
    }
    if let Some(j) = spec.scale_diag.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "scale variance {} at index {j} must be positive",
            spec.scale_diag[j]
        )));
    }
    let rho = match spec.base {
        CovarianceBase::Identity => 0.0,
        CovarianceBase::Toeplitz(rho) => {
            if !(rho.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!("|rho| must be < 1, got {rho}")));
            }
            rho
        }
    };
    let sd: Vec<f64> = spec.scale_diag.iter().map(|v| v.sqrt()).collect();
    let mut sigma = DMatrix::zeros(p, p);
    for j in 0..p {
        sigma[(j, j)] = spec.scale_diag[j];
        for k in (j + 1)..p {
            let base = if rho == 0.0 { 0.0 } else { rho.powi((k - j) as i32) };
            let v = sd[j] * sd[k] * base;
            sigma[(j, k)] = v;
            sigma[(k, j)] = v;
        }
    }
    cholesky(&sigma)?;
    Ok(sigma)
}

/// Lower-triangular Cholesky factor. Fails when a pivot drops below
/// `1e-12 * max diagonal`.
pub fn cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::DimensionMismatch("cholesky needs a square matrix".into()));
    }
    let max_diag = (0..p).map(|i| sigma[(i, i)]).fold(0.0_f64, f64::max);
    let threshold = 1e-12 * max_diag;
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut d = sigma[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > threshold) || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..p {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Seeded, splittable random stream. Equal `(base_seed, stream_id)` pairs give
/// identical sequences; distinct stream ids select disjoint ChaCha streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        Self { base_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.base_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derived stream for a named purpose (fold assignment, permutations, ...).
    pub fn child(&self, tag: u64) -> RngStream {
        RngStream {
            base_seed: splitmix64(self.base_seed ^ splitmix64(tag.wrapping_add(0x5EED))),
            stream_id: self.stream_id,
        }
    }
}

/// Draws `n` iid rows from `N(0, sigma)` as `Z * L^T`.
pub fn mvn_sample(n: usize, sigma: &DMatrix<f64>, stream: &RngStream) -> Result<DMatrix<f64>> {
    let l = cholesky(sigma)?;
    let p = sigma.nrows();
    let mut rng = stream.rng();
    // row-major draw order so the i-th row only depends on the first i rows of draws
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    Ok(z * l.transpose())
}

/// Least squares via Householder QR. Fails on (numerically) rank deficient
/// designs.
pub fn ols_solve(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} entries, design has {n} rows",
            y.len()
        )));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    if n < p {
        return Err(Error::SingularSystem);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
    if max_diag == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * max_diag) {
        return Err(Error::SingularSystem);
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularSystem)?;
    Ok(beta.iter().copied().collect())
}

/// `X * beta` for a dense column-major matrix.
pub fn mat_vec(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut out = vec![0.0; n];
    let data = x.as_slice();
    for (j, b) in beta.iter().enumerate().take(p) {
        if *b != 0.0 {
            let col = &data[j * n..(j + 1) * n];
            out.iter_mut().zip(col).for_each(|(o, c)| *o += c * b);
        }
    }
    out
}

/// `X^T v`.
pub fn mat_t_vec(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let data = x.as_slice();
    (0..p).map(|j| dot(&data[j * n..(j + 1) * n], v)).collect()
}
