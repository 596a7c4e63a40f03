//! Linear transform from biased quality measurements to an unbiased quality
//! space, learned from samples whose capture condition (camera and flash
//! angle, in degrees) is known.
//!
//! Each training row `a = [q, γ]` is mapped to a target `b` whose coordinates
//! are `scale_j·γ_j + (q_j − mean of q_j within the row's condition)`. The
//! transform `x` minimizes `‖A x − B‖_F`.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{RecordSet, VerificationRecord};
use crate::error::{Error, Result};

/// Scale for the first angle (camera).
pub const DEFAULT_SCALE_A: f64 = 1.0 / 10.0;
/// Scale for the second angle (flash).
pub const DEFAULT_SCALE_B: f64 = 1.0 / 18.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasRow {
    pub q: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMean {
    pub gamma: Vec<f64>,
    pub mean: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasTransform {
    /// `d_in × d_out`, stored row by row.
    #[serde(with = "crate::model_file::matrix_rows")]
    pub x: DMatrix<f64>,
    pub scales: Vec<f64>,
    pub condition_means: Vec<ConditionMean>,
}

impl DebiasTransform {
    pub fn d_in(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.x.ncols()
    }

    /// `a · x`.
    pub fn apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                actual: a.len(),
            });
        }
        Ok((0..self.d_out())
            .map(|j| a.iter().enumerate().map(|(i, v)| v * self.x[(i, j)]).sum())
            .collect())
    }

    pub fn apply_matrix(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                actual: a.ncols(),
            });
        }
        Ok(a * &self.x)
    }
}

fn cmp_gamma(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn check_rows(rows: &[DebiasRow]) -> Result<usize> {
    let first = rows.first().ok_or(Error::Empty("debias rows"))?;
    let d = first.q.len();
    if d == 0 {
        return Err(Error::param("q", "quality rows are empty"));
    }
    for r in rows {
        if r.q.len() != d || r.gamma.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: if r.q.len() != d { r.q.len() } else { r.gamma.len() },
            });
        }
        if r.q.iter().chain(&r.gamma).any(|v| !v.is_finite()) {
            return Err(Error::param("rows", "non-finite quality or angle"));
        }
    }
    Ok(d)
}

/// Per-condition means of `q`, ordered by angle.
pub fn condition_means(rows: &[DebiasRow]) -> Result<Vec<ConditionMean>> {
    let d = check_rows(rows)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| cmp_gamma(&rows[i].gamma, &rows[j].gamma));
    let mut out: Vec<ConditionMean> = Vec::new();
    for i in order {
        let r = &rows[i];
        match out.last_mut() {
            Some(c) if cmp_gamma(&c.gamma, &r.gamma).is_eq() => {
                c.count += 1;
                for (m, v) in c.mean.iter_mut().zip(&r.q) {
                    *m += v;
                }
            }
            _ => out.push(ConditionMean {
                gamma: r.gamma.clone(),
                mean: r.q.clone(),
                count: 1,
            }),
        }
    }
    for c in &mut out {
        if c.count < 2 {
            return Err(Error::SingletonCondition {
                condition: format!("{:?}", c.gamma),
                count: c.count,
            });
        }
        for m in &mut c.mean {
            *m /= c.count as f64;
        }
    }
    debug_assert!(out.iter().all(|c| c.mean.len() == d));
    Ok(out)
}

/// Target matrix `B` (one row per input row) and the condition means used.
pub fn build_targets(rows: &[DebiasRow], scales: &[f64]) -> Result<(DMatrix<f64>, Vec<ConditionMean>)> {
    let d = check_rows(rows)?;
    if scales.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: scales.len(),
        });
    }
    let means = condition_means(rows)?;
    let b = DMatrix::from_fn(rows.len(), d, |i, j| {
        let r = &rows[i];
        let c = means
            .binary_search_by(|c| cmp_gamma(&c.gamma, &r.gamma))
            .expect("every row has a condition");
        scales[j] * r.gamma[j] + (r.q[j] - means[c].mean[j])
    });
    Ok((b, means))
}

/// `A` with rows `[q, γ]`.
pub fn design_matrix(rows: &[DebiasRow]) -> Result<DMatrix<f64>> {
    let d = check_rows(rows)?;
    Ok(DMatrix::from_fn(rows.len(), 2 * d, |i, j| {
        if j < d {
            rows[i].q[j]
        } else {
            rows[i].gamma[j - d]
        }
    }))
}

/// Least-squares solution of `A x ≈ B` through the singular value
/// decomposition. Fails when `A` lacks full column rank.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::Empty("least-squares system"));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::RankDeficient {
            directions: format!("{} rows for {} unknowns", a.nrows(), a.ncols()),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::param("A", "non-finite entries"));
    }
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = s_max * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let v_t = svd.v_t.as_ref().expect("requested");
    let deficient: Vec<String> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= tol || s_max == 0.0)
        .map(|(i, _)| format!("{:.4?}", v_t.row(i).iter().collect::<Vec<_>>()))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient {
            directions: deficient.join("; "),
        });
    }
    svd.solve(b, tol).map_err(|e| Error::FitFailed(e.to_string()))
}

/// Fits `x` from explicit `A` and `B`.
pub fn fit_transform(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DebiasTransform> {
    Ok(DebiasTransform {
        x: solve_least_squares(a, b)?,
        scales: Vec::new(),
        condition_means: Vec::new(),
    })
}

/// Builds `A` and `B` from labelled rows and fits the transform.
pub fn fit_rows(rows: &[DebiasRow], scales: &[f64]) -> Result<DebiasTransform> {
    let (b, means) = build_targets(rows, scales)?;
    let a = design_matrix(rows)?;
    let mut t = fit_transform(&a, &b)?;
    t.scales = scales.to_vec();
    t.condition_means = means;
    Ok(t)
}

/// Transformed quality for rows whose raw quality is `q[i]` and condition
/// angles are `gamma[i]`.
pub fn transform_quality(t: &DebiasTransform, q: &[Vec<f64>], gamma: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if q.len() != gamma.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            actual: gamma.len(),
        });
    }
    q.iter()
        .zip(gamma)
        .map(|(q, g)| {
            let a: Vec<f64> = q.iter().chain(g).copied().collect();
            t.apply(&a)
        })
        .collect()
}

/// Copy of `rs` with every quality vector replaced by its transformed value.
pub fn transform_records(t: &DebiasTransform, rs: &RecordSet, gamma: &[Vec<f64>]) -> Result<RecordSet> {
    let q: Vec<Vec<f64>> = rs.records.iter().map(|r| r.quality.clone()).collect();
    let out = transform_quality(t, &q, gamma)?;
    let records = rs
        .records
        .iter()
        .zip(out)
        .map(|(r, quality)| VerificationRecord { quality, ..r.clone() })
        .collect();
    RecordSet::new(records, t.d_out(), format!("{} (debiased)", rs.provenance))
}
