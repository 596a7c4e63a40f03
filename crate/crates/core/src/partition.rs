//! Quality-space partitioning.
//!
//! Each quality axis is cut at quantiles of evenly spaced probabilities. The
//! interior quantiles (probabilities strictly between 0 and 1) form a grid of
//! sampling points, and the region around a sampling point reaches out to the
//! neighbouring quantile on either side of it, so adjacent regions overlap by
//! one quantile interval. Intervals are closed.
//!
//! Alternatively, regions can be taken directly from the ground-truth pool
//! labels of the records (cluster mode).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RecordSet;
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};

/// Regions with fewer quality samples than this are skipped.
pub const MIN_REGION_SAMPLES: usize = 10;

/// Relative variance floor; the absolute floor on an axis is this times the
/// squared data range of that axis.
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisGrid {
    /// All quantile values of the axis, ties merged, non-decreasing.
    pub quantiles: Vec<f64>,
    /// Interior sampling values (ties merged).
    pub interior: Vec<f64>,
    /// Per interior value, the neighbouring quantile below it.
    pub lower: Vec<f64>,
    /// Per interior value, the neighbouring quantile above it.
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_qs: usize,
    pub axes: Vec<AxisGrid>,
}

impl GridSpec {
    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.interior.len()).product()
    }

    /// Per-axis interior indices of every sampling point; the last axis varies
    /// fastest.
    pub fn point_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::with_capacity(self.axes.len())];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..axis.interior.len()).map(move |i| {
                        let mut p = prefix.clone();
                        p.push(i);
                        p
                    })
                })
                .collect();
        }
        out
    }

    pub fn sampling_points(&self) -> Vec<Vec<f64>> {
        self.point_indices()
            .into_iter()
            .map(|idx| idx.iter().zip(&self.axes).map(|(&i, a)| a.interior[i]).collect())
            .collect()
    }
}

/// Mean and diagonal variances of the quality samples in a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRegion {
    pub index: usize,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub members: Vec<usize>,
    /// Set once the region's quality Gaussian has been fitted.
    pub gaussian: Option<RegionGaussian>,
    /// Pool label in cluster mode.
    pub label: Option<String>,
}

impl QualityRegion {
    pub fn contains(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

/// Why a region was left out of training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionSkip {
    TooFewSamples { have: usize, need: usize },
    TooFewMatch { have: usize, need: usize },
    TooFewNonMatch { have: usize, need: usize },
}

impl fmt::Display for RegionSkip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionSkip::TooFewSamples { have, need } => {
                write!(f, "{have} quality samples (need {need})")
            }
            RegionSkip::TooFewMatch { have, need } => write!(f, "{have} match scores (need {need})"),
            RegionSkip::TooFewNonMatch { have, need } => {
                write!(f, "{have} non-match scores (need {need})")
            }
        }
    }
}

fn axis_values(rs: &RecordSet, axis: usize) -> Vec<f64> {
    rs.records.iter().map(|r| r.quality[axis]).collect()
}

fn dedup_sorted(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

pub fn quantile_grid(rs: &RecordSet, n_qs: usize) -> Result<GridSpec> {
    if n_qs < 3 {
        return Err(Error::param("n_qs", format!("need at least 3 quantiles, got {n_qs}")));
    }
    if rs.is_empty() {
        return Err(Error::Empty("record set"));
    }
    let axes = (0..rs.d_q)
        .map(|axis| {
            let sorted = sorted_copy(&axis_values(rs, axis));
            let all: Vec<f64> = (0..n_qs)
                .map(|j| quantile_sorted(&sorted, j as f64 / (n_qs - 1) as f64))
                .collect();
            let quantiles = dedup_sorted(&all);
            let interior = dedup_sorted(&all[1..n_qs - 1]);
            let (lower, upper) = interior
                .iter()
                .map(|v| {
                    let pos = quantiles
                        .iter()
                        .position(|q| q == v)
                        .expect("interior value is a quantile");
                    let lo = if pos > 0 { quantiles[pos - 1] } else { *v };
                    let hi = quantiles.get(pos + 1).copied().unwrap_or(*v);
                    (lo, hi)
                })
                .unzip();
            AxisGrid {
                quantiles,
                interior,
                lower,
                upper,
            }
        })
        .collect();
    Ok(GridSpec { n_qs, axes })
}

fn members_of(rs: &RecordSet, lower: &[f64], upper: &[f64]) -> Vec<usize> {
    rs.records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.quality
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
        })
        .map(|(i, _)| i)
        .collect()
}

/// One region per sampling point, in [`GridSpec::point_indices`] order.
pub fn build_regions(grid: &GridSpec, rs: &RecordSet) -> Vec<QualityRegion> {
    grid.point_indices()
        .into_par_iter()
        .enumerate()
        .map(|(index, idx)| {
            let center: Vec<f64> = idx.iter().zip(&grid.axes).map(|(&i, a)| a.interior[i]).collect();
            let lower: Vec<f64> = idx.iter().zip(&grid.axes).map(|(&i, a)| a.lower[i]).collect();
            let upper: Vec<f64> = idx.iter().zip(&grid.axes).map(|(&i, a)| a.upper[i]).collect();
            let members = members_of(rs, &lower, &upper);
            QualityRegion {
                index,
                center,
                lower,
                upper,
                members,
                gaussian: None,
                label: None,
            }
        })
        .collect()
}

/// One region per pool label; bounds are the bounding box of the members and
/// the center is their mean.
pub fn cluster_regions(rs: &RecordSet) -> Result<Vec<QualityRegion>> {
    let pools = crate::data::pool_indices(rs)?;
    Ok(pools
        .into_iter()
        .enumerate()
        .map(|(index, (label, members))| {
            let d = rs.d_q;
            let mut lower = vec![f64::INFINITY; d];
            let mut upper = vec![f64::NEG_INFINITY; d];
            let mut center = vec![0.0; d];
            for &m in &members {
                for (j, &v) in rs.records[m].quality.iter().enumerate() {
                    lower[j] = lower[j].min(v);
                    upper[j] = upper[j].max(v);
                    center[j] += v;
                }
            }
            center.iter_mut().for_each(|c| *c /= members.len() as f64);
            QualityRegion {
                index,
                center,
                lower,
                upper,
                members,
                gaussian: None,
                label: Some(label),
            }
        })
        .collect())
}

/// Per-axis variance floor for a record set.
pub fn variance_floor(rs: &RecordSet) -> Vec<f64> {
    (0..rs.d_q)
        .map(|axis| {
            let (lo, hi) = rs
                .records
                .iter()
                .map(|r| r.quality[axis])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let range = hi - lo;
            if range > 0.0 {
                VARIANCE_FLOOR_FACTOR * range * range
            } else {
                f64::MIN_POSITIVE.sqrt()
            }
        })
        .collect()
}

/// Sample mean and floored `n - 1` variances of the region members' quality.
pub fn fit_region_gaussian(
    region: &QualityRegion,
    rs: &RecordSet,
    floor: &[f64],
) -> std::result::Result<RegionGaussian, RegionSkip> {
    let n = region.members.len();
    if n < MIN_REGION_SAMPLES {
        return Err(RegionSkip::TooFewSamples {
            have: n,
            need: MIN_REGION_SAMPLES,
        });
    }
    Ok(diagonal_gaussian(
        region.members.iter().map(|&m| rs.records[m].quality.as_slice()),
        floor,
    ))
}

/// Mean and floored `n - 1` per-axis variances of a sample (at least two points).
pub fn diagonal_gaussian<'a>(samples: impl Iterator<Item = &'a [f64]> + Clone, floor: &[f64]) -> RegionGaussian {
    let d = floor.len();
    let mut n = 0usize;
    let mut mean = vec![0.0; d];
    for q in samples.clone() {
        n += 1;
        for (acc, v) in mean.iter_mut().zip(q) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut variance = vec![0.0; d];
    for q in samples {
        for ((acc, v), mu) in variance.iter_mut().zip(q).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let denom = n.saturating_sub(1).max(1) as f64;
    for (v, &f) in variance.iter_mut().zip(floor) {
        *v = (*v / denom).max(f);
    }
    RegionGaussian { mean, variance }
}
