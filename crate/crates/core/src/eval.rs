//! Evaluation against ground truth: ROC points, per-pool comparison of true
//! and predicted rates, and error-versus-reject curves.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{pool_indices, Label, RecordSet};
use crate::error::{Error, Result};
use crate::perf::{beta_posterior, count_errors, credible_interval, is_error, OperatingPoint};
use crate::stats::{quantile_sorted, sorted_copy, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

pub fn roc_points(rs: &RecordSet, thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    let matches = rs.scores(Label::Match);
    let non_matches = rs.scores(Label::NonMatch);
    if matches.is_empty() {
        return Err(Error::Empty("match records"));
    }
    if non_matches.is_empty() {
        return Err(Error::Empty("non-match records"));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let fm = count_errors(&non_matches, t, Label::NonMatch);
            let fnm = count_errors(&matches, t, Label::Match);
            RocPoint {
                threshold: t,
                fmr: fm.errors as f64 / fm.total() as f64,
                fnmr: fnm.errors as f64 / fnm.total() as f64,
            }
        })
        .collect())
}

/// Performance measure; its value is the index into a prediction vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Fmr = 0,
    Fnmr = 1,
}

impl Measure {
    pub const BOTH: [Measure; 2] = [Measure::Fmr, Measure::Fnmr];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Fmr => "fmr",
            Measure::Fnmr => "fnmr",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Label of the records whose errors the measure counts.
    pub fn label(self) -> Label {
        match self {
            Measure::Fmr => Label::NonMatch,
            Measure::Fnmr => Label::Match,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub errors: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub pool: String,
    pub measure: Measure,
    /// `None` when the pool has no record of the measure's label.
    pub truth: Option<TrueSummary>,
    pub predicted: PredictedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledComparison {
    pub operating_point: OperatingPoint,
    pub alpha: f64,
    pub rows: Vec<PoolRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledOptions {
    pub alpha: f64,
    pub prior_a: f64,
    pub prior_b: f64,
}

impl Default for PooledOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            prior_a: 1.0,
            prior_b: 1.0,
        }
    }
}

/// True posteriors and prediction spread per pool and measure. `predictions[i]`
/// is `[fmr, fnmr]` for record `i`; every record of a pool contributes to the
/// predicted side of both measures.
pub fn pooled_comparison(
    rs: &RecordSet,
    predictions: &[Vec<f64>],
    op: &OperatingPoint,
    opts: &PooledOptions,
) -> Result<PooledComparison> {
    if predictions.len() != rs.len() {
        return Err(Error::DimensionMismatch {
            expected: rs.len(),
            actual: predictions.len(),
        });
    }
    if let Some(p) = predictions.iter().find(|p| p.len() != 2) {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: p.len(),
        });
    }
    let pools: Vec<(String, Vec<usize>)> = pool_indices(rs)?.into_iter().collect();
    let rows: Vec<Vec<PoolRow>> = pools
        .par_iter()
        .map(|(pool, idx)| {
            Measure::BOTH
                .iter()
                .map(|&measure| pool_row(rs, predictions, op, opts, pool, idx, measure))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(PooledComparison {
        operating_point: *op,
        alpha: opts.alpha,
        rows: rows.into_iter().flatten().collect(),
    })
}

fn pool_row(
    rs: &RecordSet,
    predictions: &[Vec<f64>],
    op: &OperatingPoint,
    opts: &PooledOptions,
    pool: &str,
    idx: &[usize],
    measure: Measure,
) -> Result<PoolRow> {
    let scores: Vec<f64> = idx
        .iter()
        .map(|&i| &rs.records[i])
        .filter(|r| r.label == measure.label())
        .map(|r| r.score)
        .collect();
    let truth = if scores.is_empty() {
        log::warn!("pool {pool}: no {} records, true {} omitted", measure.label().as_str(), measure.as_str());
        None
    } else {
        let c = count_errors(&scores, op.threshold, measure.label());
        let bp = beta_posterior(c.errors, c.successes, opts.prior_a, opts.prior_b)?;
        let (lo, hi) = credible_interval(&bp, opts.alpha)?;
        Some(TrueSummary {
            mean: bp.mean(),
            lo,
            hi,
            errors: c.errors,
            total: c.total(),
        })
    };
    let values: Vec<f64> = idx.iter().map(|&i| predictions[i][measure.index()]).collect();
    let sorted = sorted_copy(&values);
    Ok(PoolRow {
        pool: pool.to_string(),
        measure,
        truth,
        predicted: PredictedSummary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lo: quantile_sorted(&sorted, opts.alpha / 2.0),
            hi: quantile_sorted(&sorted, 1.0 - opts.alpha / 2.0),
            n: values.len(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErcVariant {
    Model,
    Ideal,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErcPoint {
    pub reject_frac: f64,
    pub fnmr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcCurve {
    pub points: Vec<ErcPoint>,
    pub variant: ErcVariant,
}

impl ErcCurve {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["reject_frac", "fnmr"])?;
        for p in &self.points {
            wtr.write_record([p.reject_frac.to_string(), p.fnmr.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

/// Every record up to 10⁴ records, about a thousand points beyond.
pub fn default_stride(n: usize) -> usize {
    if n <= 10_000 {
        1
    } else {
        n.div_ceil(1000)
    }
}

/// Errors among the records left after rejecting each prefix of `order`.
fn suffix_errors(scores: &[f64], order: &[usize], t: f64) -> Vec<usize> {
    let n = order.len();
    let mut errors = vec![0usize; n + 1];
    for k in (0..n).rev() {
        errors[k] = errors[k + 1] + is_error(scores[order[k]], t, Label::Match) as usize;
    }
    errors
}

/// Curve points for prefix sizes `0, stride, 2·stride, …` below `n`, where
/// `errors(k)` is the mean error count left after rejecting `k` records.
fn points(n: usize, stride: usize, errors: impl Fn(usize) -> f64) -> Vec<ErcPoint> {
    (0..n)
        .step_by(stride.max(1))
        .map(|k| ErcPoint {
            reject_frac: k as f64 / n as f64,
            fnmr: errors(k) / (n - k) as f64,
        })
        .collect()
}

/// Rejects match attempts in order of decreasing predicted FNMR. Equal
/// predictions keep their input order.
pub fn erc_curve(match_records: &[(f64, f64)], t: f64, stride: usize) -> Result<ErcCurve> {
    if match_records.is_empty() {
        return Err(Error::Empty("match records"));
    }
    let mut order: Vec<usize> = (0..match_records.len()).collect();
    order.sort_by(|&i, &j| match_records[j].1.total_cmp(&match_records[i].1));
    let scores: Vec<f64> = match_records.iter().map(|r| r.0).collect();
    Ok(ErcCurve {
        points: {
            let errors = suffix_errors(&scores, &order, t);
            points(order.len(), stride, |k| errors[k] as f64)
        },
        variant: ErcVariant::Model,
    })
}

/// Rejects the actual false non-matches first.
pub fn ideal_erc(match_scores: &[f64], t: f64, stride: usize) -> Result<ErcCurve> {
    let oracle: Vec<(f64, f64)> = match_scores
        .iter()
        .map(|&s| (s, if is_error(s, t, Label::Match) { 1.0 } else { 0.0 }))
        .collect();
    let mut curve = erc_curve(&oracle, t, stride)?;
    curve.variant = ErcVariant::Ideal;
    Ok(curve)
}

/// Pointwise mean of the curves obtained by rejecting in `n_perm` random
/// orders, which is the expected curve of a constant predictor when ties are
/// broken at random.
pub fn random_erc(match_scores: &[f64], t: f64, stride: usize, n_perm: usize, seed: u64) -> Result<ErcCurve> {
    if match_scores.is_empty() {
        return Err(Error::Empty("match records"));
    }
    if n_perm == 0 {
        return Err(Error::param("n_perm", "must be positive"));
    }
    let n = match_scores.len();
    let totals = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut substream(seed, p as u64));
            suffix_errors(match_scores, &order, t)
        })
        .reduce(
            || vec![0usize; n + 1],
            |mut acc, e| {
                acc.iter_mut().zip(&e).for_each(|(a, b)| *a += b);
                acc
            },
        );
    // summing integer counts keeps the mean exact wherever all orders agree
    let points = points(n, stride, |k| totals[k] as f64 / n_perm as f64);
    Ok(ErcCurve {
        points,
        variant: ErcVariant::Random,
    })
}
