//! Gaussian mixture density over the joint quality-performance space.
//!
//! Covariances follow the volume/shape/orientation naming used by model-based
//! clustering: the first letter is volume, the second shape, the third
//! orientation, each `E`qual across components, `V`arying, or `I`dentity.
//! The six families whose M-step has a closed form are fitted; the other four
//! tokens are recognised and reported as unsupported.

mod em;
mod select;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf::TrainingSet;
use crate::stats::log_sum_exp;

pub use em::{em_fit, EmOptions};
pub use select::{select_model, FitStatus, SelectionCell, SelectionReport};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parametrization {
    EII,
    VII,
    EEI,
    VEI,
    EVI,
    VVI,
    EEE,
    EEV,
    VEV,
    VVV,
}

impl Parametrization {
    pub const ALL: [Parametrization; 10] = [
        Parametrization::EII,
        Parametrization::VII,
        Parametrization::EEI,
        Parametrization::VEI,
        Parametrization::EVI,
        Parametrization::VVI,
        Parametrization::EEE,
        Parametrization::EEV,
        Parametrization::VEV,
        Parametrization::VVV,
    ];

    pub const SUPPORTED: [Parametrization; 6] = [
        Parametrization::EII,
        Parametrization::VII,
        Parametrization::EEI,
        Parametrization::VVI,
        Parametrization::EEE,
        Parametrization::VVV,
    ];

    pub fn is_supported(self) -> bool {
        Self::SUPPORTED.contains(&self)
    }

    /// One covariance matrix shared by every component.
    pub fn is_shared(self) -> bool {
        matches!(self, Parametrization::EII | Parametrization::EEI | Parametrization::EEE)
    }

    pub fn is_diagonal(self) -> bool {
        matches!(
            self,
            Parametrization::EII | Parametrization::VII | Parametrization::EEI | Parametrization::VVI
        )
    }

    pub fn is_spherical(self) -> bool {
        matches!(self, Parametrization::EII | Parametrization::VII)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parametrization::EII => "EII",
            Parametrization::VII => "VII",
            Parametrization::EEI => "EEI",
            Parametrization::VEI => "VEI",
            Parametrization::EVI => "EVI",
            Parametrization::VVI => "VVI",
            Parametrization::EEE => "EEE",
            Parametrization::EEV => "EEV",
            Parametrization::VEV => "VEV",
            Parametrization::VVV => "VVV",
        }
    }
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim().to_ascii_uppercase();
        Parametrization::ALL
            .into_iter()
            .find(|p| p.as_str() == token)
            .ok_or_else(|| Error::UnknownParametrization(s.to_string()))
    }
}

/// Parses a comma separated token list; unknown tokens are errors, known but
/// unsupported ones are kept so they can be reported.
pub fn parse_parametrizations(list: &str) -> Result<Vec<Parametrization>> {
    list.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Number of free parameters of a `k`-component mixture in `d` dimensions.
pub fn free_param_count(k: usize, d: usize, param: Parametrization) -> Result<usize> {
    if k == 0 || d == 0 {
        return Err(Error::param("k/d", "component count and dimension must be positive"));
    }
    let full = d * (d + 1) / 2;
    let cov = match param {
        Parametrization::EII => 1,
        Parametrization::VII => k,
        Parametrization::EEI => d,
        Parametrization::VVI => k * d,
        Parametrization::EEE => full,
        Parametrization::VVV => k * full,
        other => return Err(Error::UnsupportedParametrization(other.to_string())),
    };
    Ok((k - 1) + k * d + cov)
}

/// A multivariate normal prepared for repeated density evaluation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Gaussian {
    mean: Vec<f64>,
    /// Lower Cholesky factor, row-major.
    chol: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    /// `None` when the covariance is not numerically positive definite.
    pub(crate) fn new(mean: &[f64], cov: &DMatrix<f64>) -> Option<Self> {
        let d = mean.len();
        let chol = cov.clone().cholesky()?;
        let l = chol.l();
        let mut log_det = 0.0;
        let mut flat = vec![0.0; d * d];
        for i in 0..d {
            let dii = l[(i, i)];
            if !(dii > 0.0 && dii.is_finite()) {
                return None;
            }
            log_det += 2.0 * dii.ln();
            for j in 0..=i {
                flat[i * d + j] = l[(i, j)];
            }
        }
        Some(Self {
            mean: mean.to_vec(),
            chol: flat,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub(crate) fn ln_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut buf = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= 16 {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut maha = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[i * d + j] * z[j];
            }
            z[i] = s / self.chol[i * d + i];
            maha += z[i] * z[i];
        }
        self.log_norm - 0.5 * maha
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Number of M-steps performed.
    pub iterations: usize,
    pub log_likelihood: f64,
    pub converged: bool,
    /// Data log-likelihood before every M-step, then at the returned parameters.
    pub trace: Vec<f64>,
    /// Trace positions right after an empty component was re-seeded.
    pub reinitialized_at: Vec<usize>,
    pub restart: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub parametrization: Parametrization,
    pub d_q: usize,
    pub d_r: usize,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub train_log: TrainLog,
    components: Vec<Gaussian>,
}

impl MixtureModel {
    /// Assembles a model; fails when a covariance is not positive definite or
    /// the weights are not a probability vector.
    pub fn new(
        parametrization: Parametrization,
        d_q: usize,
        d_r: usize,
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = d_q + d_r;
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::param("components", "weights, means and covariances must have equal non-zero length"));
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("weights", "mixture weights must form a probability vector"));
        }
        let mut components = Vec::with_capacity(k);
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: m.len(),
                });
            }
            let g = Gaussian::new(m.as_slice(), c)
                .ok_or_else(|| Error::FitFailed("covariance is not positive definite".into()))?;
            components.push(g);
        }
        Ok(Self {
            parametrization,
            d_q,
            d_r,
            weights,
            means,
            covariances,
            train_log: TrainLog::default(),
            components,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.d_q + self.d_r
    }

    /// `ln f(x)` without a dimension check.
    pub(crate) fn ln_density_unchecked(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .enumerate()
            .map(|(k, &w)| w.ln() + self.components[k].ln_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// Total data log-likelihood.
    pub fn log_likelihood(&self, data: &TrainingSet) -> Result<f64> {
        self.check_dims(data.d_q, data.d_r)?;
        Ok(data.rows.iter().map(|x| self.ln_density_unchecked(x)).sum())
    }

    fn check_dims(&self, d_q: usize, d_r: usize) -> Result<()> {
        if d_q + d_r != self.dim() || d_q != self.d_q {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: d_q + d_r,
            });
        }
        Ok(())
    }

    /// Whether the covariances satisfy the constraints of the parametrization.
    pub fn satisfies_structure(&self, tol: f64) -> bool {
        let d = self.dim();
        let first = &self.covariances[0];
        self.covariances.iter().all(|c| {
            let symmetric = (c - c.transpose()).amax() <= tol;
            let off_diag_zero = (0..d).all(|i| (0..d).all(|j| i == j || c[(i, j)].abs() <= tol));
            let spherical = (0..d).all(|i| (c[(i, i)] - c[(0, 0)]).abs() <= tol * c[(0, 0)].abs().max(1.0));
            let shared = (c - first).amax() <= tol;
            symmetric
                && (!self.parametrization.is_diagonal() || off_diag_zero)
                && (!self.parametrization.is_spherical() || spherical)
                && (!self.parametrization.is_shared() || shared)
        })
    }
}

/// `ln Σ_k π_k N(x; μ_k, Σ_k)`.
pub fn log_density(model: &MixtureModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: x.len(),
        });
    }
    Ok(model.ln_density_unchecked(x))
}

/// `2 ln L - n ln N`; larger is better.
pub fn bic(model: &MixtureModel, data: &TrainingSet) -> Result<f64> {
    let ll = model.log_likelihood(data)?;
    let n = free_param_count(model.k(), model.dim(), model.parametrization)?;
    Ok(bic_from_parts(ll, n, data.len()))
}

pub(crate) fn bic_from_parts(log_likelihood: f64, n_params: usize, n_rows: usize) -> f64 {
    2.0 * log_likelihood - n_params as f64 * (n_rows as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mean: &[f64], cov: DMatrix<f64>, param: Parametrization) -> MixtureModel {
        let d = mean.len();
        MixtureModel::new(param, d, 0, vec![1.0], vec![DVector::from_row_slice(mean)], vec![cov]).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(free_param_count(9, 4, Parametrization::VVV).unwrap(), 134);
        assert_eq!(free_param_count(25, 4, Parametrization::VVI).unwrap(), 224);
        assert_eq!(free_param_count(3, 2, Parametrization::EII).unwrap(), 9);
        assert_eq!(free_param_count(2, 3, Parametrization::VII).unwrap(), 1 + 6 + 2);
        assert_eq!(free_param_count(2, 3, Parametrization::EEI).unwrap(), 1 + 6 + 3);
        assert_eq!(free_param_count(2, 3, Parametrization::EEE).unwrap(), 1 + 6 + 6);
        assert!(matches!(
            free_param_count(2, 3, Parametrization::EVI),
            Err(Error::UnsupportedParametrization(_))
        ));
    }

    #[test]
    fn tokens_parse() {
        let all = parse_parametrizations("EII,vvv, VEV").unwrap();
        assert_eq!(all, vec![Parametrization::EII, Parametrization::VVV, Parametrization::VEV]);
        assert!(!Parametrization::VEV.is_supported());
        assert!(matches!(
            "XYZ".parse::<Parametrization>(),
            Err(Error::UnknownParametrization(_))
        ));
        for p in Parametrization::ALL {
            assert_eq!(p.as_str().parse::<Parametrization>().unwrap(), p);
        }
    }

    #[test]
    fn standard_normal_at_origin() {
        let m = single(&[0.0], DMatrix::identity(1, 1), Parametrization::VVV);
        let v = log_density(&m, &[0.0]).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-15);
        assert!(log_density(&m, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn symmetric_pair_at_midpoint() {
        let a = 1.7;
        let m = MixtureModel::new(
            Parametrization::EII,
            1,
            0,
            vec![0.5, 0.5],
            vec![DVector::from_element(1, -a), DVector::from_element(1, a)],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap();
        let one = single(&[0.0], DMatrix::identity(1, 1), Parametrization::EII);
        assert!((log_density(&m, &[0.0]).unwrap() - log_density(&one, &[a]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn diagonal_density_is_product_of_univariates() {
        let var = [0.5, 2.0, 0.1];
        let mean = [0.3, -1.0, 2.0];
        let m = single(&mean, DMatrix::from_diagonal(&DVector::from_row_slice(&var)), Parametrization::VVI);
        let x = [0.1, 0.4, 2.2];
        let product: f64 = (0..3)
            .map(|i| -0.5 * (LN_2PI + var[i].ln()) - 0.5 * (x[i] - mean[i]).powi(2) / var[i])
            .sum();
        assert!((log_density(&m, &x).unwrap() - product).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_models() {
        let bad_cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MixtureModel::new(
            Parametrization::VVV,
            1,
            1,
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![bad_cov]
        )
        .is_err());
        assert!(MixtureModel::new(
            Parametrization::VVV,
            1,
            0,
            vec![0.7],
            vec![DVector::zeros(1)],
            vec![DMatrix::identity(1, 1)]
        )
        .is_err());
    }
}
