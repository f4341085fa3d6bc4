//! Simulation scenarios: coefficient patterns, covariate scales, noise
//! calibration and data generation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{build_covariance, mat_vec, mvn_sample, CovarianceBase, CovarianceSpec, RngStream};

/// Largest share of the response deviance the true model can explain.
pub const DEVIANCE_TARGET: f64 = 0.9;
pub const SCENARIO_P: usize = 100;

/// Relevant-covariate variances shared by the scale-contaminated scenarios.
const RELEVANT_SCALES: [f64; 10] = [0.5, 0.5, 1.0, 1.0, 3.0, 3.0, 10.0, 10.0, 25.0, 25.0];
/// Noisy-covariate variances of the noise-contaminated scenarios.
const NOISY_SCALES: [f64; 12] = [0.5, 0.5, 1.5, 1.5, 3.0, 3.0, 10.0, 10.0, 25.0, 25.0, 50.0, 50.0];

const X_TAG: u64 = 0xA1;
const EPS_TAG: u64 = 0xE5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioName {
    #[serde(rename = "IND")]
    Ind,
    #[serde(rename = "RC.IND")]
    RcInd,
    #[serde(rename = "RNC.IND")]
    RncInd,
    #[serde(rename = "UTOEP-B")]
    UtoepB,
    #[serde(rename = "UTOEP-S")]
    UtoepS,
    #[serde(rename = "RC.TOEP-S")]
    RcToepS,
    #[serde(rename = "RNC.TOEP-S")]
    RncToepS,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 7] = [
        Self::Ind,
        Self::RcInd,
        Self::RncInd,
        Self::UtoepB,
        Self::UtoepS,
        Self::RcToepS,
        Self::RncToepS,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Ind => "IND",
            Self::RcInd => "RC.IND",
            Self::RncInd => "RNC.IND",
            Self::UtoepB => "UTOEP-B",
            Self::UtoepS => "UTOEP-S",
            Self::RcToepS => "RC.TOEP-S",
            Self::RncToepS => "RNC.TOEP-S",
        }
    }

    pub fn is_toeplitz(self) -> bool {
        !matches!(self, Self::Ind | Self::RcInd | Self::RncInd)
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        Self::ALL.into_iter().find(|n| n.label() == t).ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// Declarative description of one simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub n: usize,
    /// Toeplitz correlation; required exactly for the Toeplitz families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(name: ScenarioName, n: usize, rho: Option<f64>, seed: u64) -> Result<Self> {
        let s = Self { name, n, rho, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("n must be >= 2, got {}", self.n)));
        }
        match (self.name.is_toeplitz(), self.rho) {
            (true, Some(r)) if r.abs() < 1.0 => Ok(()),
            (true, Some(r)) => Err(Error::InvalidParameter(format!("rho must satisfy |rho| < 1, got {r}"))),
            (true, None) => Err(Error::InvalidParameter(format!("scenario {} requires rho", self.name))),
            (false, Some(_)) => Err(Error::InvalidParameter(format!("scenario {} takes no rho", self.name))),
            (false, None) => Ok(()),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn truth(&self) -> Result<Truth> {
        self.validate()?;
        let design = beta_and_scales(self.name)?;
        let sigma = build_covariance(&self.covariance()?)?;
        let sigma_eps = sigma_eps_calibrate(&design.beta, &sigma)?;
        Ok(Truth { support: design.support, beta: design.beta, sigma_eps })
    }

    pub fn covariance(&self) -> Result<CovarianceSpec> {
        let design = beta_and_scales(self.name)?;
        let base = if self.name.is_toeplitz() {
            CovarianceBase::Toeplitz(self.rho.ok_or_else(|| Error::InvalidParameter("rho required".into()))?)
        } else {
            CovarianceBase::Identity
        };
        Ok(CovarianceSpec { base, scale_diag: design.scale_diag })
    }

    /// Oracle MSE `sigma_eps^2`.
    pub fn oracle_mse(&self) -> Result<f64> {
        Ok(self.truth()?.sigma_eps.powi(2))
    }
}

/// Coefficients, support (0-based) and per-column variances of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDesign {
    pub beta: Vec<f64>,
    pub support: Vec<usize>,
    pub scale_diag: Vec<f64>,
}

pub fn beta_and_scales(name: ScenarioName) -> Result<ScenarioDesign> {
    let p = SCENARIO_P;
    let mut beta = vec![0.0; p];
    let mut scale = vec![1.0; p];
    let support: Vec<usize> = match name {
        ScenarioName::Ind | ScenarioName::RcInd | ScenarioName::RncInd => (0..10).collect(),
        ScenarioName::UtoepB => (0..15).collect(),
        ScenarioName::UtoepS | ScenarioName::RcToepS | ScenarioName::RncToepS => (1..=10).map(|k| 3 * k - 1).collect(),
    };
    let value = match name {
        ScenarioName::Ind | ScenarioName::RcInd | ScenarioName::RncInd => 1.25,
        _ => 0.5,
    };
    for &j in &support {
        beta[j] = value;
    }
    match name {
        ScenarioName::RcInd | ScenarioName::RncInd => {
            scale[..10].copy_from_slice(&RELEVANT_SCALES);
            if name == ScenarioName::RncInd {
                scale[10..22].copy_from_slice(&NOISY_SCALES);
            }
        }
        ScenarioName::RcToepS | ScenarioName::RncToepS => {
            for (k, &j) in support.iter().enumerate() {
                scale[j] = RELEVANT_SCALES[k];
            }
            if name == ScenarioName::RncToepS {
                // 1-based positions 2, 5, ..., 35: the first slot before each relevant one, then two more.
                for (k, v) in NOISY_SCALES.iter().enumerate() {
                    scale[3 * k + 1] = *v;
                }
            }
        }
        _ => {}
    }
    Ok(ScenarioDesign { beta, support, scale_diag: scale })
}

/// `sigma_eps = sqrt(((1 - T) / T) beta^T Sigma beta)` with `T = DEVIANCE_TARGET`.
pub fn sigma_eps_calibrate(beta: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != beta.len() || sigma.ncols() != beta.len() {
        return Err(Error::DimensionMismatch(format!("beta has {} entries, Sigma is {:?}", beta.len(), sigma.shape())));
    }
    let b = DVector::from_column_slice(beta);
    let signal = b.dot(&(sigma * &b));
    if !(signal > 0.0) {
        return Err(Error::ZeroSignal);
    }
    Ok(((1.0 - DEVIANCE_TARGET) / DEVIANCE_TARGET * signal).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub support: Vec<usize>,
    pub beta: Vec<f64>,
    pub sigma_eps: f64,
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    /// Column-centered design on the original scales.
    pub x: DMatrix<f64>,
    /// Centered response.
    pub y: Vec<f64>,
    pub truth: Truth,
    pub replicate: u64,
    pub stream: RngStream,
}

impl SimulatedDataset {
    /// SHA-256 over the little-endian bytes of `x` (column-major) then `y`.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.x.iter().chain(self.y.iter()) {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `y = X beta + eps`, `X ~ N(0, Sigma)`, `eps ~ N(0, sigma_eps^2)`; both centered afterwards.
pub fn generate(spec: &ScenarioSpec, stream: &RngStream) -> Result<SimulatedDataset> {
    let truth = spec.truth()?;
    let sigma = build_covariance(&spec.covariance()?)?;
    generate_with(spec.n, &sigma, truth, stream)
}

/// Generation with a prebuilt covariance, for replicate loops.
pub fn generate_with(n: usize, sigma: &DMatrix<f64>, truth: Truth, stream: &RngStream) -> Result<SimulatedDataset> {
    let mut x = mvn_sample(n, sigma, &stream.child(X_TAG))?;
    let mut rng = stream.child(EPS_TAG).rng();
    let signal = mat_vec(&x, &truth.beta);
    let mut y: Vec<f64> = signal.iter().map(|s| s + truth.sigma_eps * rng.sample::<f64, _>(StandardNormal)).collect();
    let ym = crate::numerics::compensated_mean(&y);
    y.iter_mut().for_each(|v| *v -= ym);
    for mut c in x.column_iter_mut() {
        let m = crate::numerics::compensated_mean(c.as_slice());
        c.add_scalar_mut(-m);
    }
    Ok(SimulatedDataset { x, y, truth, replicate: stream.stream_id, stream: *stream })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditions {
    /// `n > s ln p`.
    pub consistency: bool,
    /// `min_{j in S} |beta_j| > sqrt(s ln p / n)`.
    pub beta_min: bool,
}

pub fn check_conditions(spec: &ScenarioSpec) -> Result<Conditions> {
    let design = beta_and_scales(spec.name)?;
    let s = design.support.len() as f64;
    let lp = (design.beta.len() as f64).ln();
    let n = spec.n as f64;
    let bmin = design.support.iter().map(|&j| design.beta[j].abs()).fold(f64::INFINITY, f64::min);
    Ok(Conditions { consistency: n > s * lp, beta_min: bmin > (s * lp / n).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: ScenarioName, n: usize, rho: Option<f64>) -> ScenarioSpec {
        ScenarioSpec::new(name, n, rho, 0).unwrap()
    }

    /// Independent quadratic form with Sigma written entry by entry.
    fn oracle_sigma2(name: ScenarioName, rho: f64) -> f64 {
        let d = beta_and_scales(name).unwrap();
        let mut q = 0.0;
        for j in 0..100 {
            for k in 0..100 {
                let r = if name.is_toeplitz() { rho.powi((j as i32 - k as i32).abs()) } else if j == k { 1.0 } else { 0.0 };
                q += d.beta[j] * d.beta[k] * r * (d.scale_diag[j] * d.scale_diag[k]).sqrt();
            }
        }
        q / 9.0
    }

    #[test]
    fn designs_match_the_stated_patterns() {
        let ind = beta_and_scales(ScenarioName::Ind).unwrap();
        assert_eq!(ind.support, (0..10).collect::<Vec<_>>());
        assert!(ind.beta[..10].iter().all(|b| *b == 1.25) && ind.beta[10..].iter().all(|b| *b == 0.0));
        assert!(ind.scale_diag.iter().all(|v| *v == 1.0));

        let u = beta_and_scales(ScenarioName::UtoepS).unwrap();
        assert_eq!(u.support.iter().map(|j| j + 1).collect::<Vec<_>>(), vec![3, 6, 9, 12, 15, 18, 21, 24, 27, 30]);
        assert!(u.support.iter().all(|&j| u.beta[j] == 0.5));

        let r = beta_and_scales(ScenarioName::RncToepS).unwrap();
        let v = |pos1: usize| r.scale_diag[pos1 - 1];
        assert_eq!((v(2), v(5), v(8), v(11), v(20), v(23), v(32), v(35)), (0.5, 0.5, 1.5, 1.5, 10.0, 10.0, 50.0, 50.0));
        assert_eq!((v(3), v(6), v(9), v(30)), (0.5, 0.5, 1.0, 25.0));
        assert_eq!(v(36), 1.0);

        let rc = beta_and_scales(ScenarioName::RcInd).unwrap();
        assert_eq!(rc.scale_diag[..10].iter().sum::<f64>(), 79.0);
        let rnc = beta_and_scales(ScenarioName::RncInd).unwrap();
        assert_eq!(rnc.scale_diag[10..22].iter().sum::<f64>(), 180.0);
        assert_eq!(rnc.scale_diag[22], 1.0);

        assert_eq!(beta_and_scales(ScenarioName::UtoepB).unwrap().support.len(), 15);
    }

    #[test]
    fn calibration_values() {
        let ind = spec(ScenarioName::Ind, 50, None).truth().unwrap();
        assert!((ind.sigma_eps - 1.317616).abs() < 1e-6);
        let rc = spec(ScenarioName::RcInd, 50, None).oracle_mse().unwrap();
        assert!((rc - 0.1 / 0.9 * 1.5625 * 79.0).abs() < 1e-12);
        for (name, rho) in [(ScenarioName::UtoepS, 0.9), (ScenarioName::RcToepS, 0.9), (ScenarioName::UtoepB, 0.9), (ScenarioName::UtoepB, 0.5)] {
            let got = spec(name, 50, Some(rho)).oracle_mse().unwrap();
            assert!((got - oracle_sigma2(name, rho)).abs() < 1e-9, "{name}");
        }
        assert!(matches!(sigma_eps_calibrate(&[0.0; 2], &DMatrix::identity(2, 2)), Err(Error::ZeroSignal)));
    }

    #[test]
    fn names_and_json() {
        assert_eq!("rc.toep-s".parse::<ScenarioName>().unwrap(), ScenarioName::RcToepS);
        let e = "FOO".parse::<ScenarioName>().unwrap_err().to_string();
        assert!(e.contains("RNC.TOEP-S") && e.contains("IND"));
        let s = spec(ScenarioName::RcToepS, 300, Some(0.9));
        let j = s.to_json().unwrap();
        assert!(j.contains("\"RC.TOEP-S\""));
        assert_eq!(ScenarioSpec::from_json(&j).unwrap(), s);
        assert!(ScenarioSpec::new(ScenarioName::UtoepS, 50, None, 0).is_err());
        assert!(ScenarioSpec::new(ScenarioName::Ind, 50, Some(0.5), 0).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_centered() {
        let s = spec(ScenarioName::RcToepS, 40, Some(0.5));
        let a = generate(&s, &RngStream::new(9, 3)).unwrap();
        let b = generate(&s, &RngStream::new(9, 3)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.checksum(), b.checksum());
        let c = generate(&s, &RngStream::new(9, 4)).unwrap();
        assert_ne!(a.checksum(), c.checksum());
        assert!(a.y.iter().sum::<f64>().abs() < 1e-10);
        assert!(a.x.column(5).sum().abs() < 1e-10);
    }

    #[test]
    fn condition_examples() {
        let c = check_conditions(&spec(ScenarioName::Ind, 25, None)).unwrap();
        assert!(!c.consistency);
        let c = check_conditions(&spec(ScenarioName::Ind, 50, None)).unwrap();
        assert!(c.consistency && c.beta_min);
        let c = check_conditions(&spec(ScenarioName::UtoepS, 150, Some(0.5))).unwrap();
        assert!(!c.beta_min);
        let c = check_conditions(&spec(ScenarioName::UtoepS, 300, Some(0.5))).unwrap();
        assert!(c.beta_min);
    }
}
