//! Synthetic verification data with closed-form quality-conditioned rates.
//!
//! Quality vectors are drawn around a set of condition centers. Given its
//! quality `q`, a match score is `N(μ_m(q), σ_m²)` and a non-match score is
//! `N(μ_n(q), σ_n²)`, so the rates at threshold `t` are
//! `fnmr = Φ((t − μ_m)/σ_m)` and `fmr = 1 − Φ((t − μ_n)/σ_n)`.

use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Label, RecordSet, VerificationRecord};
use crate::error::{Error, Result};
use crate::stats::{normal_cdf, substream};

/// Mean match score as a function of quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchMean {
    /// `peak − depth·(1 − exp(−‖q − frontal‖²/(2·width²))) + tilt·(q − frontal)`
    Radial {
        peak: f64,
        depth: f64,
        width: f64,
        frontal: Vec<f64>,
        tilt: Vec<f64>,
    },
    /// `intercept + slope·q`
    Affine { intercept: f64, slope: Vec<f64> },
}

impl MatchMean {
    pub fn eval(&self, q: &[f64]) -> f64 {
        match self {
            MatchMean::Radial {
                peak,
                depth,
                width,
                frontal,
                tilt,
            } => {
                let r2: f64 = q.iter().zip(frontal).map(|(a, b)| (a - b) * (a - b)).sum();
                let lin: f64 = q.iter().zip(frontal).zip(tilt).map(|((a, f), s)| s * (a - f)).sum();
                peak - depth * (1.0 - (-r2 / (2.0 * width * width)).exp()) + lin
            }
            MatchMean::Affine { intercept, slope } => intercept + q.iter().zip(slope).map(|(a, s)| a * s).sum::<f64>(),
        }
    }

    fn dims(&self) -> Vec<usize> {
        match self {
            MatchMean::Radial { frontal, tilt, .. } => vec![frontal.len(), tilt.len()],
            MatchMean::Affine { slope, .. } => vec![slope.len()],
        }
    }
}

/// `intercept + slope·q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonMatchMean {
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl NonMatchMean {
    pub fn eval(&self, q: &[f64]) -> f64 {
        self.intercept + q.iter().zip(&self.slope).map(|(a, s)| a * s).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub d_q: usize,
    /// Condition centers in quality space; one pool per center.
    pub centers: Vec<Vec<f64>>,
    /// Per-axis standard deviation of quality within a condition.
    pub spread: Vec<f64>,
    pub match_mean: MatchMean,
    pub sigma_m: f64,
    pub nonmatch_mean: NonMatchMean,
    pub sigma_n: f64,
    pub n_match: usize,
    pub n_nonmatch: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Five-by-five grid of conditions. The match mean dips away from the
    /// frontal point and rises toward positive `q1`, so at FMR 0.01 the
    /// condition FNMRs span roughly 0.1 to 0.85 with a left/right asymmetry.
    fn default() -> Self {
        let axis = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let centers = axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect();
        Self {
            d_q: 2,
            centers,
            spread: vec![0.12, 0.12],
            match_mean: MatchMean::Radial {
                peak: 3.6,
                depth: 2.2,
                width: 1.5,
                frontal: vec![0.0, 0.0],
                tilt: vec![0.25, 0.0],
            },
            sigma_m: 1.0,
            nonmatch_mean: NonMatchMean {
                intercept: 0.0,
                slope: vec![0.0, 0.0],
            },
            sigma_n: 1.0,
            n_match: 100,
            n_nonmatch: 500,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.d_q;
        if d == 0 {
            return Err(Error::param("d_q", "must be positive"));
        }
        if self.centers.is_empty() {
            return Err(Error::param("centers", "at least one condition is needed"));
        }
        let dims_ok = self.centers.iter().all(|c| c.len() == d)
            && self.spread.len() == d
            && self.nonmatch_mean.slope.len() == d
            && self.match_mean.dims().iter().all(|&n| n == d);
        if !dims_ok {
            return Err(Error::param("d_q", format!("every vector in the config must have length {d}")));
        }
        if !(self.sigma_m > 0.0 && self.sigma_n > 0.0) {
            return Err(Error::param("sigma", "score spreads must be positive"));
        }
        if self.spread.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::param("spread", "must be finite and non-negative"));
        }
        if let MatchMean::Radial { width, .. } = &self.match_mean {
            if !(*width > 0.0) {
                return Err(Error::param("width", "must be positive"));
            }
        }
        if self.n_match == 0 && self.n_nonmatch == 0 {
            return Err(Error::param("counts", "no records requested"));
        }
        for (i, c) in self.centers.iter().enumerate() {
            for probe in self.support_probes(c) {
                if self.match_mean.eval(&probe) <= self.nonmatch_mean.eval(&probe) {
                    return Err(Error::param(
                        "match_mean",
                        format!("condition {i}: match mean does not exceed non-match mean near {probe:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Center and the corners of its ±3·spread box.
    fn support_probes(&self, center: &[f64]) -> Vec<Vec<f64>> {
        let d = center.len();
        let mut out = vec![center.to_vec()];
        if d <= 10 {
            for mask in 0..(1usize << d) {
                out.push(
                    (0..d)
                        .map(|j| center[j] + if mask >> j & 1 == 1 { 3.0 } else { -3.0 } * self.spread[j])
                        .collect(),
                );
            }
        }
        out
    }

    pub fn n_records(&self) -> usize {
        self.centers.len() * (self.n_match + self.n_nonmatch)
    }
}

pub fn pool_name(condition: usize) -> String {
    format!("c{condition:02}")
}

pub fn generate(cfg: &SynthConfig) -> Result<RecordSet> {
    cfg.validate()?;
    let per_condition: Vec<Vec<VerificationRecord>> = cfg
        .centers
        .par_iter()
        .enumerate()
        .map(|(c, center)| {
            let mut rng = substream(cfg.seed, c as u64);
            let pool = pool_name(c);
            let mut out = Vec::with_capacity(cfg.n_match + cfg.n_nonmatch);
            for (label, n) in [(Label::Match, cfg.n_match), (Label::NonMatch, cfg.n_nonmatch)] {
                for _ in 0..n {
                    let q: Vec<f64> = center
                        .iter()
                        .zip(&cfg.spread)
                        .map(|(m, s)| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + s * z
                        })
                        .collect();
                    let (mu, sigma) = match label {
                        Label::Match => (cfg.match_mean.eval(&q), cfg.sigma_m),
                        Label::NonMatch => (cfg.nonmatch_mean.eval(&q), cfg.sigma_n),
                    };
                    let score = Normal::new(mu, sigma).expect("validated").sample(&mut rng);
                    out.push(VerificationRecord {
                        score,
                        quality: q,
                        label,
                        pool: Some(pool.clone()),
                    });
                }
            }
            out
        })
        .collect();
    RecordSet::new(
        per_condition.into_iter().flatten().collect(),
        cfg.d_q,
        format!("synth(seed={})", cfg.seed),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRates {
    pub fmr: f64,
    pub fnmr: f64,
}

pub fn analytic_performance(cfg: &SynthConfig, q: &[f64], t: f64) -> AnalyticRates {
    let mu_m = cfg.match_mean.eval(q);
    let mu_n = cfg.nonmatch_mean.eval(q);
    AnalyticRates {
        fnmr: normal_cdf((t - mu_m) / cfg.sigma_m),
        fmr: 1.0 - normal_cdf((t - mu_n) / cfg.sigma_n),
    }
}
