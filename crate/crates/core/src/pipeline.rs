//! Training from labelled records to one mixture per operating point.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Label, RecordSet};
use crate::error::{Error, Result};
use crate::gmm::{select_model, EmOptions, MixtureModel, Parametrization, SelectionReport};
use crate::partition::{build_regions, cluster_regions, fit_region_gaussian, quantile_grid, variance_floor, QualityRegion};
use crate::perf::{region_performance, sample_training_set, threshold_at_fmr, OperatingPoint, PerfOptions, TrainingSet, UsableRegion};
use crate::stats::substream;

/// How quality space is divided into regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Overlapping boxes around interior quantiles of every axis.
    Grid,
    /// One region per pool label.
    Cluster,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid" => Ok(Mode::Grid),
            "cluster" => Ok(Mode::Cluster),
            _ => Err(Error::param("mode", format!("`{s}` is not one of grid, cluster"))),
        }
    }
}

pub const DEFAULT_FMR_TARGETS: [f64; 8] = [0.0001, 0.0003, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub n_qs: usize,
    pub n_rand: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub params: Vec<Parametrization>,
    pub fmr_targets: Vec<f64>,
    pub seed: u64,
    pub perf: PerfOptions,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let em = EmOptions::default();
        Self {
            mode: Mode::Grid,
            n_qs: 12,
            n_rand: 20,
            k_min: 1,
            k_max: 25,
            params: Parametrization::SUPPORTED.to_vec(),
            fmr_targets: DEFAULT_FMR_TARGETS.to_vec(),
            seed: 0,
            perf: PerfOptions::default(),
            restarts: em.restarts,
            tol: em.tol,
            max_iter: em.max_iter,
            reg: em.reg,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rand == 0 {
            return Err(Error::param("nrand", "must be positive"));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::param("kmin", format!("bad component range {}..={}", self.k_min, self.k_max)));
        }
        if self.params.is_empty() {
            return Err(Error::param("params", "no parametrization given"));
        }
        if self.fmr_targets.is_empty() {
            return Err(Error::param("fmr-targets", "no target given"));
        }
        if let Some(t) = self.fmr_targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::param("fmr-targets", format!("{t} is outside (0, 1)")));
        }
        if !(self.perf.prior_a > 0.0 && self.perf.prior_b > 0.0) {
            return Err(Error::param("prior", "prior parameters must be positive"));
        }
        if self.mode == Mode::Grid && self.n_qs < 3 {
            return Err(Error::param("nqs", "need at least 3 quantiles"));
        }
        Ok(())
    }

    fn em_options(&self, seed: u64) -> EmOptions {
        EmOptions {
            seed,
            restarts: self.restarts,
            tol: self.tol,
            max_iter: self.max_iter,
            reg: self.reg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRegion {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub reason: String,
}

/// Diagnostics stored with every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_qs: Option<usize>,
    pub n_rand: usize,
    pub seed: u64,
    pub n_records: usize,
    pub n_regions: usize,
    pub n_usable: usize,
    pub skipped: Vec<SkippedRegion>,
    pub training_shape: [usize; 2],
    pub prior_a: f64,
    pub prior_b: f64,
    pub min_match: usize,
    pub min_nonmatch: usize,
}

/// Regions with their quality Gaussians fitted, before any operating point
/// is chosen.
#[derive(Debug, Clone)]
pub struct Regions {
    pub regions: Vec<QualityRegion>,
    pub skipped: Vec<SkippedRegion>,
}

pub fn prepare_regions(rs: &RecordSet, cfg: &TrainConfig) -> Result<Regions> {
    let mut regions = match cfg.mode {
        Mode::Grid => build_regions(&quantile_grid(rs, cfg.n_qs)?, rs),
        Mode::Cluster => cluster_regions(rs)?,
    };
    let floor = variance_floor(rs);
    let mut skipped = Vec::new();
    for region in &mut regions {
        match fit_region_gaussian(region, rs, &floor) {
            Ok(g) => region.gaussian = Some(g),
            Err(reason) => skipped.push(SkippedRegion {
                index: region.index,
                label: region.label.clone(),
                reason: reason.to_string(),
            }),
        }
    }
    Ok(Regions { regions, skipped })
}

/// Regions that pass the occupancy checks at `op`, plus the extra skips.
pub fn usable_regions(
    rs: &RecordSet,
    regions: &Regions,
    op: &OperatingPoint,
    perf: &PerfOptions,
) -> Result<(Vec<UsableRegion>, Vec<SkippedRegion>)> {
    let mut usable = Vec::new();
    let mut skipped = regions.skipped.clone();
    for region in &regions.regions {
        let Some(gaussian) = &region.gaussian else { continue };
        match region_performance(region, rs, op, perf)? {
            Ok(performance) => usable.push(UsableRegion {
                index: region.index,
                gaussian: gaussian.clone(),
                performance,
            }),
            Err(reason) => skipped.push(SkippedRegion {
                index: region.index,
                label: region.label.clone(),
                reason: reason.to_string(),
            }),
        }
    }
    skipped.sort_by_key(|s| s.index);
    if usable.is_empty() {
        return Err(Error::NoUsableRegions { skipped: skipped.len() });
    }
    Ok((usable, skipped))
}

/// Seeds for the training-set draw and the mixture fit of operating point `j`.
fn point_seeds(seed: u64, j: usize) -> (u64, u64) {
    let mut rng = substream(seed, j as u64);
    (rng.random(), rng.random())
}

#[derive(Debug, Clone)]
pub struct TrainedPoint {
    pub operating_point: OperatingPoint,
    pub training: TrainingSet,
    pub model: MixtureModel,
    pub selection: SelectionReport,
    pub info: TrainingInfo,
}

/// Training set for one operating point.
pub fn training_set_for(
    rs: &RecordSet,
    regions: &Regions,
    op: &OperatingPoint,
    cfg: &TrainConfig,
    sample_seed: u64,
) -> Result<(TrainingSet, TrainingInfo)> {
    let (usable, skipped) = usable_regions(rs, regions, op, &cfg.perf)?;
    let training = sample_training_set(&usable, sample_seed, cfg.n_rand)?;
    let (n, d) = training.shape();
    log::info!("target FMR {}: training matrix {n}x{d} from {} regions", op.target_fmr, usable.len());
    let info = TrainingInfo {
        mode: cfg.mode,
        n_qs: (cfg.mode == Mode::Grid).then_some(cfg.n_qs),
        n_rand: cfg.n_rand,
        seed: cfg.seed,
        n_records: rs.len(),
        n_regions: regions.regions.len(),
        n_usable: usable.len(),
        skipped,
        training_shape: [n, d],
        prior_a: cfg.perf.prior_a,
        prior_b: cfg.perf.prior_b,
        min_match: cfg.perf.min_match,
        min_nonmatch: cfg.perf.min_nonmatch,
    };
    Ok((training, info))
}

/// Thresholds from all non-match scores, then one model per target FMR.
pub fn train(rs: &RecordSet, cfg: &TrainConfig) -> Result<Vec<TrainedPoint>> {
    cfg.validate()?;
    rs.check_trainable()?;
    let regions = prepare_regions(rs, cfg)?;
    let non_match = rs.scores(Label::NonMatch);
    cfg.fmr_targets
        .par_iter()
        .enumerate()
        .map(|(j, &target)| {
            let op = threshold_at_fmr(&non_match, target)?;
            let (sample_seed, em_seed) = point_seeds(cfg.seed, j);
            let (training, info) = training_set_for(rs, &regions, &op, cfg, sample_seed)?;
            let (model, selection) = select_model(&training, (cfg.k_min, cfg.k_max), &cfg.params, &cfg.em_options(em_seed))?;
            log::info!(
                "target FMR {target}: selected K={} {} (BIC {:.3})",
                model.k(),
                model.parametrization,
                selection.chosen_cell().and_then(|c| c.bic).unwrap_or(f64::NAN)
            );
            Ok(TrainedPoint {
                operating_point: op,
                training,
                model,
                selection,
                info,
            })
        })
        .collect()
}
