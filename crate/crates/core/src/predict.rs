//! Expected performance for an observed quality vector.
//!
//! Every mixture component is split into its quality block and performance
//! block. Conditioning on `q` reweights the components by how well they
//! explain `q` and shifts each performance mean along the cross covariance;
//! the prediction is the weighted sum of the shifted means.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Gaussian, MixtureModel};
use crate::stats::{log_sum_exp, quantile_sorted, substream};

/// Lower clamp applied to reported rates.
pub const REPORT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportFlag {
    Ok,
    LowSupport,
}

impl SupportFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            SupportFlag::Ok => "ok",
            SupportFlag::LowSupport => "low_support",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMixture {
    /// Reweighted component probabilities; zero for skipped components.
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// `ln f(q)`.
    pub log_marginal: f64,
    /// Components whose quality block could not be factorized.
    pub skipped: Vec<usize>,
}

impl ConditionalMixture {
    pub fn marginal(&self) -> f64 {
        self.log_marginal.exp()
    }

    /// `Σ_k ψ_k μ̂_k`.
    pub fn mean(&self) -> Vec<f64> {
        let d_r = self.means[0].len();
        let mut out = vec![0.0; d_r];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m.iter()) {
                *o += w * v;
            }
        }
        out
    }

    /// `ln f(r | q)`. Components with a singular conditional covariance are
    /// left out.
    pub fn ln_density(&self, r: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.covariances))
            .filter(|(w, _)| **w > 0.0)
            .filter_map(|(w, (m, c))| Gaussian::new(m.as_slice(), c).map(|g| w.ln() + g.ln_pdf(r)))
            .collect();
        log_sum_exp(&terms)
    }
}

fn blocks(model: &MixtureModel, k: usize) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (dq, dr) = (model.d_q, model.d_r);
    let mu = &model.means[k];
    let cov = &model.covariances[k];
    (
        mu.rows(0, dq).into_owned(),
        mu.rows(dq, dr).into_owned(),
        cov.view((0, 0), (dq, dq)).into_owned(),
        cov.view((0, dq), (dq, dr)).into_owned(),
        cov.view((dq, dq), (dr, dr)).into_owned(),
    )
}

fn check_q(model: &MixtureModel, q: &[f64]) -> Result<()> {
    if q.len() != model.d_q {
        return Err(Error::DimensionMismatch {
            expected: model.d_q,
            actual: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("q", "quality vector must be finite"));
    }
    Ok(())
}

/// `ln f(q) = ln Σ_k π_k N(q; μ_{k,q}, Σ_{k,q})`.
pub fn log_marginal_q(model: &MixtureModel, q: &[f64]) -> Result<f64> {
    check_q(model, q)?;
    let terms: Vec<f64> = (0..model.k())
        .filter_map(|k| {
            let (mu_q, _, s_q, _, _) = blocks(model, k);
            Gaussian::new(mu_q.as_slice(), &s_q).map(|g| model.weights[k].ln() + g.ln_pdf(q))
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

pub fn marginal_q(model: &MixtureModel, q: &[f64]) -> Result<f64> {
    Ok(log_marginal_q(model, q)?.exp())
}

fn clip_psd(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    m = sym;
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() >= 0.0 {
        return m;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

pub fn condition(model: &MixtureModel, q: &[f64]) -> Result<ConditionalMixture> {
    check_q(model, q)?;
    let qv = DVector::from_row_slice(q);
    let k_total = model.k();
    let mut log_terms = vec![f64::NEG_INFINITY; k_total];
    let mut means = Vec::with_capacity(k_total);
    let mut covariances = Vec::with_capacity(k_total);
    let mut skipped = Vec::new();
    for k in 0..k_total {
        let (mu_q, mu_r, s_q, s_c, s_r) = blocks(model, k);
        let factor = s_q.clone().cholesky();
        match (factor, Gaussian::new(mu_q.as_slice(), &s_q)) {
            (Some(chol), Some(g)) => {
                log_terms[k] = model.weights[k].ln() + g.ln_pdf(q);
                let shift = chol.solve(&(&qv - &mu_q));
                let gain = chol.solve(&s_c);
                means.push(&mu_r + s_c.transpose() * shift);
                covariances.push(clip_psd(&s_r - s_c.transpose() * gain));
            }
            _ => {
                log::warn!("component {k}: quality block is not positive definite; skipped");
                skipped.push(k);
                means.push(mu_r);
                covariances.push(s_r);
            }
        }
    }
    if skipped.len() == k_total {
        return Err(Error::FitFailed("no component has a usable quality block".into()));
    }
    let log_marginal = log_sum_exp(&log_terms);
    let weights = log_terms.iter().map(|t| (t - log_marginal).exp()).collect();
    Ok(ConditionalMixture {
        weights,
        means,
        covariances,
        log_marginal,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub alpha: f64,
    /// Monte-Carlo draws for the interval; zero skips the interval.
    pub n_mc: usize,
    pub seed: u64,
    /// Marginal quality density below which a prediction is flagged.
    pub density_floor: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            n_mc: 10_000,
            seed: 0,
            density_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Conditional expectation as computed.
    pub expected_raw: Vec<f64>,
    /// `expected_raw` clamped to `[REPORT_FLOOR, 1]`.
    pub expected: Vec<f64>,
    /// Equal-tailed Monte-Carlo interval per component, clamped to `[0, 1]`.
    pub interval: Option<Vec<(f64, f64)>>,
    pub support: SupportFlag,
    pub marginal: f64,
}

pub fn predict(model: &MixtureModel, q: &[f64], opts: &PredictOptions) -> Result<Prediction> {
    predict_stream(model, q, opts, 0)
}

/// [`predict`] drawing its Monte-Carlo samples from substream `stream` of the seed.
pub fn predict_stream(model: &MixtureModel, q: &[f64], opts: &PredictOptions, stream: u64) -> Result<Prediction> {
    if opts.n_mc > 0 && !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::param("alpha", format!("{} is outside (0, 1)", opts.alpha)));
    }
    let cond = condition(model, q)?;
    let expected_raw = cond.mean();
    let expected = expected_raw.iter().map(|v| v.clamp(REPORT_FLOOR, 1.0)).collect();
    let marginal = cond.marginal();
    let support = if marginal < opts.density_floor {
        SupportFlag::LowSupport
    } else {
        SupportFlag::Ok
    };
    let interval = (opts.n_mc > 0).then(|| {
        let mut rng = substream(opts.seed, stream);
        mc_interval(&cond, opts.alpha, opts.n_mc, &mut rng)
    });
    Ok(Prediction {
        expected_raw,
        expected,
        interval,
        support,
        marginal,
    })
}

fn mc_interval<R: Rng>(cond: &ConditionalMixture, alpha: f64, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let d = cond.means[0].len();
    let roots: Vec<DMatrix<f64>> = cond
        .covariances
        .iter()
        .map(|c| {
            let eig = SymmetricEigen::new(c.clone());
            let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&s)
        })
        .collect();
    let mut cumulative = Vec::with_capacity(cond.weights.len());
    let mut acc = 0.0;
    for w in &cond.weights {
        acc += w;
        cumulative.push(acc);
    }
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let k = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| cond.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0));
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let r = &cond.means[k] + &roots[k] * z;
        for (j, v) in r.iter().enumerate() {
            draws[j].push(*v);
        }
    }
    draws
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&v, alpha / 2.0).clamp(0.0, 1.0);
            let hi = quantile_sorted(&v, 1.0 - alpha / 2.0).clamp(0.0, 1.0);
            (lo, hi)
        })
        .collect()
}

/// Predictions for many quality vectors; row `i` uses substream `i`.
pub fn predict_batch(model: &MixtureModel, qs: &[Vec<f64>], opts: &PredictOptions) -> Result<Vec<Prediction>> {
    qs.par_iter()
        .enumerate()
        .map(|(i, q)| predict_stream(model, q, opts, i as u64))
        .collect()
}
