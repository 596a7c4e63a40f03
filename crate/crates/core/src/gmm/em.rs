use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use super::{Gaussian, MixtureModel, Parametrization, TrainLog};
use crate::error::{Error, Result};
use crate::perf::TrainingSet;
use crate::stats::{log_sum_exp, substream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub seed: u64,
    pub restarts: usize,
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge factor: a covariance whose smallest eigenvalue falls below
    /// `reg * trace / d` gets that amount added to its diagonal.
    pub reg: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            restarts: 5,
            tol: 1e-8,
            max_iter: 500,
            reg: 1e-8,
        }
    }
}

/// Smallest covariance eigenvalue allowed in standardized units.
const COLLAPSE_FLOOR: f64 = 1e-6;

/// Components whose responsibility mass falls below this fraction of the data
/// are re-seeded.
const EMPTY_COMPONENT_FRACTION: f64 = 1e-8;

struct Params {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    gaussians: Vec<Gaussian>,
}

impl Params {
    fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        let gaussians = means
            .iter()
            .zip(&covs)
            .map(|(m, c)| Gaussian::new(m.as_slice(), c))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::FitFailed("covariance is not positive definite".into()))?;
        Ok(Self {
            weights,
            means,
            covs,
            gaussians,
        })
    }
}

/// Fits a `k`-component mixture by expectation-maximization and keeps the
/// restart with the highest final log-likelihood.
pub fn em_fit(data: &TrainingSet, k: usize, param: Parametrization, opts: &EmOptions) -> Result<MixtureModel> {
    if !param.is_supported() {
        return Err(Error::UnsupportedParametrization(param.to_string()));
    }
    if k == 0 {
        return Err(Error::param("k", "need at least one component"));
    }
    if data.len() < k {
        return Err(Error::param("k", format!("{} rows cannot support {k} components", data.len())));
    }
    if opts.restarts == 0 {
        return Err(Error::param("restarts", "need at least one start"));
    }
    let runs: Vec<Result<(Params, TrainLog)>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(opts.seed, r as u64);
            run_single(&data.rows, k, param, opts, &mut rng).map(|(p, mut log)| {
                log.restart = r;
                (p, log)
            })
        })
        .collect();

    let mut best: Option<(Params, TrainLog)> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok((p, log)) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| log.log_likelihood > b.log_likelihood);
                if better {
                    best = Some((p, log));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (p, log) = best.ok_or_else(|| last_err.unwrap_or(Error::FitFailed("no restart succeeded".into())))?;
    debug!(
        "em k={k} {param}: ll={} after {} iterations (restart {})",
        log.log_likelihood, log.iterations, log.restart
    );
    Ok(MixtureModel {
        parametrization: param,
        d_q: data.d_q,
        d_r: data.d_r,
        weights: p.weights,
        means: p.means,
        covariances: p.covs,
        train_log: log,
        components: p.gaussians,
    })
}

fn run_single<R: Rng>(
    rows: &[Vec<f64>],
    k: usize,
    param: Parametrization,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<(Params, TrainLog)> {
    let n = rows.len();
    let var = axis_variance(rows);
    let scale = axis_scale(&var);
    let centers = farthest_point_seeds(rows, k, &scale, rng);
    let mut resp = hard_assignment(rows, &centers, &scale);
    let ridge = Ridge { reg: opts.reg, axis_var: &var };
    let (mut params, _) = m_step(rows, &resp, k, param, &ridge, None)?;

    let mut log = TrainLog::default();
    let mut prev: Option<f64> = None;
    let mut row_ll = vec![0.0; n];
    for _ in 0..opts.max_iter {
        let ll = e_step(rows, &params, &mut resp, &mut row_ll);
        if !ll.is_finite() {
            return Err(Error::FitFailed("log-likelihood is not finite".into()));
        }
        log.trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= opts.tol * ll.abs() {
                log.converged = true;
                break;
            }
        }
        prev = Some(ll);
        let (next, reseeded) = m_step(rows, &resp, k, param, &ridge, Some(&row_ll))?;
        params = next;
        if reseeded {
            // the next trace entry follows a re-seed
            log.reinitialized_at.push(log.trace.len());
            prev = None;
        }
        log.iterations += 1;
    }
    if !log.converged {
        let ll = e_step(rows, &params, &mut resp, &mut row_ll);
        log.trace.push(ll);
    }
    log.log_likelihood = *log.trace.last().expect("trace is never empty");
    Ok((params, log))
}

/// Per-axis population variance.
fn axis_variance(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    // spread at rounding level counts as none
    var.iter()
        .zip(&mean)
        .map(|(s, m)| {
            let v = s / n;
            if v.sqrt() <= 1e-12 * m.abs().max(1.0) {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// Inverse per-axis standard deviations, used to compare rows in
/// standardized units.
fn axis_scale(var: &[f64]) -> Vec<f64> {
    var.iter().map(|s| if *s > 0.0 { 1.0 / s.sqrt() } else { 1.0 }).collect()
}

fn scaled_dist(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scale)
        .map(|((x, y), s)| ((x - y) * s).powi(2))
        .sum()
}

/// Starts from a random row and repeatedly adds the row farthest from the
/// centers chosen so far.
fn farthest_point_seeds<R: Rng>(rows: &[Vec<f64>], k: usize, scale: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..rows.len());
    let mut centers = vec![rows[first].clone()];
    let mut nearest: Vec<f64> = rows.iter().map(|r| scaled_dist(r, &rows[first], scale)).collect();
    while centers.len() < k {
        let (idx, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        centers.push(rows[idx].clone());
        for (nd, r) in nearest.iter_mut().zip(rows) {
            *nd = nd.min(scaled_dist(r, &rows[idx], scale));
        }
    }
    centers
}

fn hard_assignment(rows: &[Vec<f64>], centers: &[Vec<f64>], scale: &[f64]) -> DMatrix<f64> {
    let mut resp = DMatrix::zeros(rows.len(), centers.len());
    for (i, r) in rows.iter().enumerate() {
        let best = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, scaled_dist(r, c, scale)))
            .fold((0, f64::INFINITY), |b, (k, v)| if v < b.1 { (k, v) } else { b })
            .0;
        resp[(i, best)] = 1.0;
    }
    resp
}

/// Fills responsibilities and per-row log densities; returns the total
/// log-likelihood.
fn e_step(rows: &[Vec<f64>], params: &Params, resp: &mut DMatrix<f64>, row_ll: &mut [f64]) -> f64 {
    let k = params.weights.len();
    let ln_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let mut terms = vec![0.0; k];
    let mut total = 0.0;
    for (i, x) in rows.iter().enumerate() {
        for c in 0..k {
            terms[c] = ln_w[c] + params.gaussians[c].ln_pdf(x);
        }
        let lse = log_sum_exp(&terms);
        row_ll[i] = lse;
        total += lse;
        for c in 0..k {
            resp[(i, c)] = (terms[c] - lse).exp();
        }
    }
    total
}

fn m_step(
    rows: &[Vec<f64>],
    resp: &DMatrix<f64>,
    k: usize,
    param: Parametrization,
    ridge: &Ridge,
    row_ll: Option<&[f64]>,
) -> Result<(Params, bool)> {
    let n = rows.len();
    let d = rows[0].len();
    let mut nk: Vec<f64> = (0..k).map(|c| resp.column(c).sum()).collect();
    let mut means = Vec::with_capacity(k);
    for c in 0..k {
        let mut m = DVector::zeros(d);
        if nk[c] > 0.0 {
            for (i, x) in rows.iter().enumerate() {
                let w = resp[(i, c)];
                if w != 0.0 {
                    for j in 0..d {
                        m[j] += w * x[j];
                    }
                }
            }
            m /= nk[c];
        }
        means.push(m);
    }

    let floor_mass = EMPTY_COMPONENT_FRACTION * n as f64;
    let empty: Vec<usize> = (0..k).filter(|&c| nk[c] < floor_mass).collect();
    if !empty.is_empty() {
        let Some(row_ll) = row_ll else {
            // initial hard assignment left a component without rows
            return reseed_from_assignment(rows, resp, k, param, ridge, &empty);
        };
        // lowest-density rows first
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| row_ll[a].total_cmp(&row_ll[b]).then(a.cmp(&b)));
        for (slot, &c) in empty.iter().enumerate() {
            means[c] = DVector::from_row_slice(&rows[order[slot.min(n - 1)]]);
        }
    }

    let scatter = |c: usize| -> DMatrix<f64> {
        let mut w = DMatrix::zeros(d, d);
        let mu = &means[c];
        for (i, x) in rows.iter().enumerate() {
            let r = resp[(i, c)];
            if r == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = x[a] - mu[a];
                for b in 0..=a {
                    w[(a, b)] += r * da * (x[b] - mu[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                w[(b, a)] = w[(a, b)];
            }
        }
        w
    };
    let scatters: Vec<DMatrix<f64>> = (0..k).map(scatter).collect();
    let pooled = || scatters.iter().fold(DMatrix::zeros(d, d), |acc, w| acc + w);
    let diag_only = |m: &DMatrix<f64>| DMatrix::from_diagonal(&m.diagonal());
    let spherical = |m: &DMatrix<f64>| DMatrix::identity(d, d) * (m.trace() / d as f64);

    let mut covs: Vec<DMatrix<f64>> = match param {
        Parametrization::VVV => (0..k).map(|c| &scatters[c] / nk[c]).collect(),
        Parametrization::VVI => (0..k).map(|c| diag_only(&scatters[c]) / nk[c]).collect(),
        Parametrization::VII => (0..k).map(|c| spherical(&scatters[c]) / nk[c]).collect(),
        Parametrization::EEE => vec![pooled() / n as f64; k],
        Parametrization::EEI => vec![diag_only(&pooled()) / n as f64; k],
        Parametrization::EII => vec![spherical(&pooled()) / n as f64; k],
        other => return Err(Error::UnsupportedParametrization(other.to_string())),
    };

    if !empty.is_empty() && !param.is_shared() {
        // re-seeded components borrow the structure-projected data covariance
        let global = {
            let mut m = DVector::zeros(d);
            for x in rows {
                m += DVector::from_row_slice(x);
            }
            m /= n as f64;
            let mut w = DMatrix::zeros(d, d);
            for x in rows {
                let dx = DVector::from_row_slice(x) - &m;
                w += &dx * dx.transpose();
            }
            w / n as f64
        };
        let projected = match param {
            Parametrization::VVI => diag_only(&global),
            Parametrization::VII => spherical(&global),
            _ => global,
        };
        for &c in &empty {
            covs[c] = projected.clone();
        }
    }
    for &c in &empty {
        nk[c] = 1.0;
    }

    if param.is_shared() {
        let shared = ridge.apply(covs[0].clone(), param);
        covs = vec![shared; k];
    } else {
        covs = covs.into_iter().map(|c| ridge.apply(c, param)).collect();
    }

    let total: f64 = nk.iter().sum();
    let weights: Vec<f64> = nk.iter().map(|v| v / total).collect();
    Ok((Params::new(weights, means, covs)?, !empty.is_empty()))
}

/// Hard assignment produced an empty cluster (duplicate seeds): restart the
/// empty components on the rows farthest from their own cluster mean.
fn reseed_from_assignment(
    rows: &[Vec<f64>],
    resp: &DMatrix<f64>,
    k: usize,
    param: Parametrization,
    ridge: &Ridge,
    empty: &[usize],
) -> Result<(Params, bool)> {
    let mut resp = resp.clone();
    let owner = |resp: &DMatrix<f64>, i: usize| (0..k).find(|&j| resp[(i, j)] == 1.0);
    let mut sizes: Vec<usize> = (0..k).map(|c| resp.column(c).iter().filter(|&&v| v == 1.0).count()).collect();
    for &c in empty {
        let candidate = (0..rows.len())
            .rev()
            .find(|&i| owner(&resp, i).is_some_and(|o| sizes[o] > 1));
        let Some(i) = candidate else {
            return Err(Error::FitFailed("not enough distinct rows to seed every component".into()));
        };
        let o = owner(&resp, i).expect("checked above");
        sizes[o] -= 1;
        sizes[c] += 1;
        resp[(i, o)] = 0.0;
        resp[(i, c)] = 1.0;
    }
    let (params, _) = m_step(rows, &resp, k, param, ridge, None)?;
    Ok((params, false))
}

/// Covariance floors applied after every M-step.
struct Ridge<'a> {
    reg: f64,
    /// Data variance per axis.
    axis_var: &'a [f64],
}

impl Ridge<'_> {
    fn smallest(cov: &DMatrix<f64>, param: Parametrization) -> f64 {
        if param.is_diagonal() {
            cov.diagonal().min()
        } else {
            SymmetricEigen::new(cov.clone()).eigenvalues.min()
        }
    }

    fn apply(&self, mut cov: DMatrix<f64>, param: Parametrization) -> DMatrix<f64> {
        let d = cov.nrows();
        let floor = self.reg * cov.trace() / d as f64;
        if Self::smallest(&cov, param) < floor {
            for i in 0..d {
                cov[(i, i)] += floor;
            }
        }
        // A component that collapsed onto a few rows has a (near) zero
        // covariance, which the trace-relative ridge cannot lift. Keep every
        // direction above a small fraction of the data variance instead.
        if self.axis_var.iter().any(|v| !(*v > 0.0)) {
            return cov;
        }
        if param.is_spherical() {
            let floor = COLLAPSE_FLOOR * self.axis_var.iter().sum::<f64>() / d as f64;
            if cov[(0, 0)] < floor {
                for i in 0..d {
                    cov[(i, i)] += floor;
                }
            }
            return cov;
        }
        let sd: Vec<f64> = self.axis_var.iter().map(|v| v.sqrt()).collect();
        let standardized = DMatrix::from_fn(d, d, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
        if Self::smallest(&standardized, param) < COLLAPSE_FLOOR {
            for i in 0..d {
                cov[(i, i)] += COLLAPSE_FLOOR * self.axis_var[i];
            }
        }
        cov
    }
}
