//! Recognition performance inside a quality region.
//!
//! At a decision threshold `t` a match score below `t` is a false non-match
//! and a non-match score at or above `t` is a false match. Counting those
//! outcomes gives a Binomial experiment whose rate has a Beta posterior under
//! a Beta prior. Drawing quality vectors from the region's diagonal Gaussian
//! and rates from the two posteriors produces the rows the mixture model is
//! trained on.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::data::{Label, RecordSet};
use crate::error::{Error, Result};
use crate::partition::{QualityRegion, RegionGaussian, RegionSkip};
use crate::stats::substream;

pub const DEFAULT_MIN_MATCH: usize = 10;
pub const DEFAULT_MIN_NONMATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub target_fmr: f64,
    /// Fraction of the calibration non-match scores at or above the threshold.
    pub achieved_fmr: f64,
}

/// Smallest observed non-match score whose accept fraction (`score >= t`) does
/// not exceed `target_fmr`. When even the largest score is accepted too often,
/// the threshold is placed just above it.
pub fn threshold_at_fmr(non_match_scores: &[f64], target_fmr: f64) -> Result<OperatingPoint> {
    if non_match_scores.is_empty() {
        return Err(Error::Empty("non-match scores"));
    }
    if !(target_fmr > 0.0 && target_fmr < 1.0) {
        return Err(Error::param("target_fmr", format!("{target_fmr} is outside (0, 1)")));
    }
    let mut sorted = non_match_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        let accepted = (n - i) as f64 / n as f64;
        if accepted <= target_fmr {
            return Ok(OperatingPoint {
                threshold: sorted[i],
                target_fmr,
                achieved_fmr: accepted,
            });
        }
        // jump to the first index of the next distinct value
        let v = sorted[i];
        while i < n && sorted[i] == v {
            i += 1;
        }
    }
    Ok(OperatingPoint {
        threshold: sorted[n - 1].next_up(),
        target_fmr,
        achieved_fmr: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorCounts {
    /// Verification errors (`m`).
    pub errors: u64,
    /// Correct decisions (`l`).
    pub successes: u64,
}

impl ErrorCounts {
    pub fn total(&self) -> u64 {
        self.errors + self.successes
    }
}

pub fn is_error(score: f64, threshold: f64, label: Label) -> bool {
    match label {
        Label::Match => score < threshold,
        Label::NonMatch => score >= threshold,
    }
}

pub fn count_errors(scores: &[f64], threshold: f64, label: Label) -> ErrorCounts {
    let errors = scores.iter().filter(|&&s| is_error(s, threshold, label)).count() as u64;
    ErrorCounts {
        errors,
        successes: scores.len() as u64 - errors,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub a: f64,
    pub b: f64,
}

impl BetaPosterior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::param("a", format!("Beta shape must be positive, got {a}")));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::param("b", format!("Beta shape must be positive, got {b}")));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return f64::NEG_INFINITY;
        }
        let t1 = if self.a == 1.0 { 0.0 } else { (self.a - 1.0) * x.ln() };
        let t2 = if self.b == 1.0 { 0.0 } else { (self.b - 1.0) * (-x).ln_1p() };
        t1 + t2 - ln_beta(self.a, self.b)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Regularized incomplete beta function `I_x(a, b)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            beta_reg(self.a, self.b, x)
        }
    }

    /// Inverse CDF by Newton steps kept inside a shrinking bisection bracket.
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = self.mean().clamp(1e-12, 1.0 - 1e-12);
        for _ in 0..300 {
            let f = self.cdf(x) - p;
            if f == 0.0 {
                return x;
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.pdf(x);
            let mut next = if d > 0.0 && d.is_finite() { x - f / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 4.0 * f64::EPSILON * x.max(f64::MIN_POSITIVE) || hi - lo <= f64::EPSILON * hi {
                return next;
            }
            x = next;
        }
        x
    }

    /// Draw via the ratio `X / (X + Y)` of independent `Gamma(a)` and `Gamma(b)` variates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = Gamma::new(self.a, 1.0).expect("valid shape").sample(rng);
        let y = Gamma::new(self.b, 1.0).expect("valid shape").sample(rng);
        let s = x + y;
        if s > 0.0 {
            x / s
        } else {
            self.mean()
        }
    }
}

/// Conjugate update of a `Beta(a0, b0)` prior with `m` errors and `l` successes.
pub fn beta_posterior(m: u64, l: u64, a0: f64, b0: f64) -> Result<BetaPosterior> {
    if !(a0 > 0.0 && a0.is_finite() && b0 > 0.0 && b0.is_finite()) {
        return Err(Error::param("prior", format!("prior shapes must be positive, got ({a0}, {b0})")));
    }
    BetaPosterior::new(m as f64 + a0, l as f64 + b0)
}

/// Equal-tailed interval holding `1 - alpha` of the posterior mass.
pub fn credible_interval(bp: &BetaPosterior, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("{alpha} is outside (0, 1)")));
    }
    Ok((bp.inverse_cdf(alpha / 2.0), bp.inverse_cdf(1.0 - alpha / 2.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfOptions {
    pub prior_a: f64,
    pub prior_b: f64,
    pub min_match: usize,
    pub min_nonmatch: usize,
}

impl Default for PerfOptions {
    fn default() -> Self {
        Self {
            prior_a: 1.0,
            prior_b: 1.0,
            min_match: DEFAULT_MIN_MATCH,
            min_nonmatch: DEFAULT_MIN_NONMATCH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPerformance {
    pub fnmr: BetaPosterior,
    pub fmr: BetaPosterior,
}

/// FNMR and FMR posteriors from the match and non-match scores of a region.
pub fn region_performance(
    region: &QualityRegion,
    rs: &RecordSet,
    op: &OperatingPoint,
    opts: &PerfOptions,
) -> Result<std::result::Result<RegionPerformance, RegionSkip>> {
    let mut matches = Vec::new();
    let mut non_matches = Vec::new();
    for &i in &region.members {
        let r = &rs.records[i];
        match r.label {
            Label::Match => matches.push(r.score),
            Label::NonMatch => non_matches.push(r.score),
        }
    }
    if matches.len() < opts.min_match {
        return Ok(Err(RegionSkip::TooFewMatch {
            have: matches.len(),
            need: opts.min_match,
        }));
    }
    if non_matches.len() < opts.min_nonmatch {
        return Ok(Err(RegionSkip::TooFewNonMatch {
            have: non_matches.len(),
            need: opts.min_nonmatch,
        }));
    }
    let fnmr = count_errors(&matches, op.threshold, Label::Match);
    let fmr = count_errors(&non_matches, op.threshold, Label::NonMatch);
    Ok(Ok(RegionPerformance {
        fnmr: beta_posterior(fnmr.errors, fnmr.successes, opts.prior_a, opts.prior_b)?,
        fmr: beta_posterior(fmr.errors, fmr.successes, opts.prior_a, opts.prior_b)?,
    }))
}

/// A region that passed every occupancy check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsableRegion {
    pub index: usize,
    pub gaussian: RegionGaussian,
    pub performance: RegionPerformance,
}

/// Rows `[q, fmr, fnmr]` drawn from the region models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<Vec<f64>>,
    pub d_q: usize,
    pub d_r: usize,
}

impl TrainingSet {
    pub fn new(rows: Vec<Vec<f64>>, d_q: usize, d_r: usize) -> Result<Self> {
        for row in &rows {
            if row.len() != d_q + d_r {
                return Err(Error::DimensionMismatch {
                    expected: d_q + d_r,
                    actual: row.len(),
                });
            }
        }
        Ok(Self { rows, d_q, d_r })
    }

    pub fn dim(&self) -> usize {
        self.d_q + self.d_r
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.dim())
    }

    /// Writes `q1..qd,fmr,fnmr`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.d_q).map(|j| format!("q{j}")).collect();
        header.push("fmr".into());
        header.push("fnmr".into());
        wtr.write_record(&header)?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

/// `n_rand` rows per usable region. Region `i` in the slice draws from its own
/// substream of `seed`, so the result does not depend on evaluation order.
pub fn sample_training_set(regions: &[UsableRegion], seed: u64, n_rand: usize) -> Result<TrainingSet> {
    if regions.is_empty() {
        return Err(Error::NoUsableRegions { skipped: 0 });
    }
    if n_rand == 0 {
        return Err(Error::param("n_rand", "must be positive"));
    }
    let d_q = regions[0].gaussian.mean.len();
    let mut rows = Vec::with_capacity(regions.len() * n_rand);
    for (i, region) in regions.iter().enumerate() {
        let mut rng = substream(seed, i as u64);
        let g = &region.gaussian;
        for _ in 0..n_rand {
            let mut row: Vec<f64> = g
                .mean
                .iter()
                .zip(&g.variance)
                .map(|(m, v)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + v.sqrt() * z
                })
                .collect();
            row.push(region.performance.fmr.sample(&mut rng));
            row.push(region.performance.fnmr.sample(&mut rng));
            rows.push(row);
        }
    }
    TrainingSet::new(rows, d_q, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VerificationRecord;

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let op = threshold_at_fmr(&scores, 0.01).unwrap();
        assert_eq!(op.threshold, 100.0);
        assert_eq!(op.achieved_fmr, 0.01);

        let op = threshold_at_fmr(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
        assert_eq!(op.threshold, 3.0);
        assert_eq!(op.achieved_fmr, 0.5);
    }

    #[test]
    fn threshold_with_ties_and_tiny_targets() {
        let op = threshold_at_fmr(&[1.0, 2.0, 2.0, 2.0], 0.5).unwrap();
        // fraction(>= 2) = 0.75 > 0.5, so nothing observed qualifies
        assert!(op.threshold > 2.0);
        assert_eq!(op.achieved_fmr, 0.0);
        assert!(threshold_at_fmr(&[], 0.1).is_err());
        assert!(threshold_at_fmr(&[1.0], 0.0).is_err());
        assert!(threshold_at_fmr(&[1.0], 1.0).is_err());
    }

    #[test]
    fn error_counts() {
        let c = count_errors(&[0.2, 0.6, 0.9], 0.5, Label::Match);
        assert_eq!((c.errors, c.successes), (1, 2));
        let c = count_errors(&[0.2, 0.6, 0.9], 0.1, Label::Match);
        assert_eq!(c.errors, 0);
        let c = count_errors(&[0.2, 0.6, 0.9], 1.0, Label::Match);
        assert_eq!(c.errors, 3);
        let c = count_errors(&[0.2, 0.5, 0.9], 0.5, Label::NonMatch);
        assert_eq!((c.errors, c.successes), (2, 1));
    }

    #[test]
    fn conjugate_examples() {
        let bp = beta_posterior(3, 7, 1.0, 1.0).unwrap();
        assert_eq!((bp.a, bp.b), (4.0, 8.0));
        assert!((bp.mean() - 1.0 / 3.0).abs() < 1e-15);
        let bp = beta_posterior(0, 0, 1.0, 1.0).unwrap();
        assert_eq!((bp.a, bp.b), (1.0, 1.0));
        let bp = beta_posterior(5, 5, 2.0, 2.0).unwrap();
        assert_eq!((bp.a, bp.b), (7.0, 7.0));
        assert_eq!(bp.mean(), 0.5);
        assert!(beta_posterior(1, 1, 0.0, 1.0).is_err());
        assert!(beta_posterior(1, 1, 1.0, -2.0).is_err());
    }

    #[test]
    fn uniform_interval() {
        let (c, d) = credible_interval(&BetaPosterior::new(1.0, 1.0).unwrap(), 0.05).unwrap();
        assert!((c - 0.025).abs() < 1e-12);
        assert!((d - 0.975).abs() < 1e-12);
        assert!(credible_interval(&BetaPosterior::new(1.0, 1.0).unwrap(), 0.0).is_err());
        assert!(credible_interval(&BetaPosterior::new(1.0, 1.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn symmetric_interval() {
        let bp = BetaPosterior::new(7.0, 7.0).unwrap();
        for alpha in [0.01, 0.05, 0.2, 0.5, 0.9] {
            let (c, d) = credible_interval(&bp, alpha).unwrap();
            assert!((c + d - 1.0).abs() < 1e-8, "alpha {alpha}: ({c}, {d})");
        }
    }

    #[test]
    fn extreme_shapes_invert() {
        for (a, b) in [(1.0, 2001.0), (501.0, 1.0), (1000.0, 1000.0), (1.0, 1.0)] {
            let bp = BetaPosterior::new(a, b).unwrap();
            for p in [1e-6, 0.025, 0.5, 0.975, 1.0 - 1e-6] {
                let x = bp.inverse_cdf(p);
                assert!((bp.cdf(x) - p).abs() < 1e-12, "Beta({a},{b}) p={p}");
            }
        }
    }

    fn region_with(match_scores: &[f64], nonmatch_scores: &[f64]) -> (QualityRegion, RecordSet) {
        let mut records = Vec::new();
        for &s in match_scores {
            records.push(VerificationRecord {
                score: s,
                quality: vec![0.0],
                label: Label::Match,
                pool: None,
            });
        }
        for &s in nonmatch_scores {
            records.push(VerificationRecord {
                score: s,
                quality: vec![0.0],
                label: Label::NonMatch,
                pool: None,
            });
        }
        let n = records.len();
        let rs = RecordSet::new(records, 1, "t").unwrap();
        let region = QualityRegion {
            index: 0,
            center: vec![0.0],
            lower: vec![0.0],
            upper: vec![0.0],
            members: (0..n).collect(),
            gaussian: None,
            label: None,
        };
        (region, rs)
    }

    #[test]
    fn region_posteriors() {
        let matches = [0.1, 0.2, 0.6, 0.7, 0.8, 0.9, 0.95, 0.6, 0.7, 0.99];
        let non_matches = vec![0.1; 100];
        let (region, rs) = region_with(&matches, &non_matches);
        let op = OperatingPoint {
            threshold: 0.5,
            target_fmr: 0.01,
            achieved_fmr: 0.01,
        };
        let p = region_performance(&region, &rs, &op, &PerfOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!((p.fnmr.a, p.fnmr.b), (3.0, 9.0));
        assert_eq!((p.fmr.a, p.fmr.b), (1.0, 101.0));
        assert!((p.fmr.mean() - 0.0098).abs() < 1e-4);
    }

    #[test]
    fn sparse_regions_are_skipped() {
        let op = OperatingPoint {
            threshold: 0.5,
            target_fmr: 0.01,
            achieved_fmr: 0.01,
        };
        let (region, rs) = region_with(&[0.9; 9], &[0.1; 100]);
        assert_eq!(
            region_performance(&region, &rs, &op, &PerfOptions::default()).unwrap(),
            Err(RegionSkip::TooFewMatch { have: 9, need: 10 })
        );
        let (region, rs) = region_with(&[0.9; 10], &[0.1; 49]);
        assert_eq!(
            region_performance(&region, &rs, &op, &PerfOptions::default()).unwrap(),
            Err(RegionSkip::TooFewNonMatch { have: 49, need: 50 })
        );
    }

    fn usable(n: usize) -> Vec<UsableRegion> {
        (0..n)
            .map(|i| UsableRegion {
                index: i,
                gaussian: RegionGaussian {
                    mean: vec![i as f64, -(i as f64)],
                    variance: vec![0.1, 0.2],
                },
                performance: RegionPerformance {
                    fnmr: BetaPosterior::new(3.0, 9.0).unwrap(),
                    fmr: BetaPosterior::new(1.0, 101.0).unwrap(),
                },
            })
            .collect()
    }

    #[test]
    fn training_set_shape_and_range() {
        let ts = sample_training_set(&usable(100), 1, 20).unwrap();
        assert_eq!(ts.shape(), (2000, 4));
        let ts = sample_training_set(&usable(25), 1, 20).unwrap();
        assert_eq!(ts.shape(), (500, 4));
        assert!(ts.rows.iter().all(|r| (0.0..=1.0).contains(&r[2]) && (0.0..=1.0).contains(&r[3])));
        assert!(sample_training_set(&[], 1, 20).is_err());
    }

    #[test]
    fn training_set_is_seed_deterministic() {
        let a = sample_training_set(&usable(10), 42, 20).unwrap();
        let b = sample_training_set(&usable(10), 42, 20).unwrap();
        let c = sample_training_set(&usable(10), 43, 20).unwrap();
        let bits = |t: &TrainingSet| -> Vec<u64> { t.rows.iter().flatten().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }
}
