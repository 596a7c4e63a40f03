use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bic_from_parts, em_fit, free_param_count, EmOptions, MixtureModel, Parametrization};
use crate::error::{Error, Result};
use crate::perf::TrainingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Hit the iteration cap; the fit is still usable.
    MaxIter,
    Failed(String),
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCell {
    pub k: usize,
    pub parametrization: Parametrization,
    /// `None` for failed or unsupported cells, which rank as `-inf`.
    pub bic: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    #[serde(flatten)]
    pub status: FitStatus,
}

impl SelectionCell {
    pub fn bic_value(&self) -> f64 {
        self.bic.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub cells: Vec<SelectionCell>,
    pub chosen_k: usize,
    pub chosen_parametrization: Parametrization,
}

impl SelectionReport {
    pub fn chosen_cell(&self) -> Option<&SelectionCell> {
        self.cells
            .iter()
            .find(|c| c.k == self.chosen_k && c.parametrization == self.chosen_parametrization)
    }
}

/// Fits every `(k, parametrization)` cell and keeps the largest BIC. Ties go
/// to the earlier cell (smaller `k`, then list order).
pub fn select_model(
    data: &TrainingSet,
    k_range: (usize, usize),
    params: &[Parametrization],
    opts: &EmOptions,
) -> Result<(MixtureModel, SelectionReport)> {
    let (k_min, k_max) = k_range;
    if k_min == 0 || k_min > k_max || params.is_empty() {
        return Err(Error::param("grid", format!("empty selection grid k=[{k_min}, {k_max}], {} parametrizations", params.len())));
    }
    let grid: Vec<(usize, Parametrization)> = (k_min..=k_max)
        .flat_map(|k| params.iter().map(move |&p| (k, p)))
        .collect();

    let fits: Vec<(SelectionCell, Option<MixtureModel>)> = grid
        .par_iter()
        .map(|&(k, param)| {
            if !param.is_supported() {
                return (
                    SelectionCell {
                        k,
                        parametrization: param,
                        bic: None,
                        log_likelihood: None,
                        iterations: 0,
                        status: FitStatus::Unsupported,
                    },
                    None,
                );
            }
            match em_fit(data, k, param, opts) {
                Ok(model) => {
                    let n = free_param_count(k, data.dim(), param).expect("supported parametrization");
                    let ll = model.train_log.log_likelihood;
                    let cell = SelectionCell {
                        k,
                        parametrization: param,
                        bic: Some(bic_from_parts(ll, n, data.len())),
                        log_likelihood: Some(ll),
                        iterations: model.train_log.iterations,
                        status: if model.train_log.converged {
                            FitStatus::Converged
                        } else {
                            FitStatus::MaxIter
                        },
                    };
                    (cell, Some(model))
                }
                Err(e) => (
                    SelectionCell {
                        k,
                        parametrization: param,
                        bic: None,
                        log_likelihood: None,
                        iterations: 0,
                        status: FitStatus::Failed(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (cell, model)) in fits.iter().enumerate() {
        if model.is_none() || !cell.bic_value().is_finite() {
            continue;
        }
        if best.is_none_or(|b| cell.bic_value() > fits[b].0.bic_value()) {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::AllFitsFailed)?;
    let mut cells = Vec::with_capacity(fits.len());
    let mut chosen = None;
    for (i, (cell, model)) in fits.into_iter().enumerate() {
        if i == best {
            chosen = model;
        }
        cells.push(cell);
    }
    let model = chosen.expect("best cell has a model");
    let report = SelectionReport {
        cells,
        chosen_k: model.k(),
        chosen_parametrization: model.parametrization,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::bic;
    use crate::stats::substream;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize) -> TrainingSet {
        let mut rng = substream(1, 0);
        let rows = (0..n)
            .map(|i| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![a + if i % 2 == 0 { 6.0 } else { 0.0 }, b]
            })
            .collect();
        TrainingSet::new(rows, 1, 1).unwrap()
    }

    #[test]
    fn singleton_grid_returns_its_fit() {
        let d = data(200);
        let (m, report) = select_model(&d, (1, 1), &[Parametrization::VVV], &EmOptions::default()).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!((m.k(), m.parametrization), (1, Parametrization::VVV));
        assert!((report.cells[0].bic_value() - bic(&m, &d).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn argmax_matches_table_scan() {
        let d = data(300);
        let params = [Parametrization::EII, Parametrization::VVV, Parametrization::VEV];
        let (m, report) = select_model(&d, (1, 4), &params, &EmOptions::default()).unwrap();
        let scan = report
            .cells
            .iter()
            .filter(|c| c.bic.is_some())
            .max_by(|a, b| a.bic_value().total_cmp(&b.bic_value()))
            .unwrap();
        assert_eq!((scan.k, scan.parametrization), (m.k(), m.parametrization));
        assert_eq!(report.chosen_cell().unwrap(), scan);
        assert!(report
            .cells
            .iter()
            .filter(|c| c.parametrization == Parametrization::VEV)
            .all(|c| c.status == FitStatus::Unsupported && c.bic.is_none()));
        assert_eq!(report.cells.len(), 12);
    }

    #[test]
    fn nine_component_vvv_is_a_valid_cell() {
        let d = data(400);
        let (m, report) = select_model(&d, (9, 9), &[Parametrization::VVV], &EmOptions::default()).unwrap();
        assert_eq!((report.chosen_k, report.chosen_parametrization), (9, Parametrization::VVV));
        assert_eq!(m.k(), 9);
        let json = serde_json::to_string(&report).unwrap();
        let back: SelectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn all_failed_is_an_error() {
        let d = TrainingSet::new(vec![vec![1.0, 1.0]; 20], 1, 1).unwrap();
        assert!(matches!(
            select_model(&d, (1, 2), &[Parametrization::VVV], &EmOptions::default()),
            Err(Error::AllFitsFailed)
        ));
        assert!(select_model(&d, (2, 1), &[Parametrization::VVV], &EmOptions::default()).is_err());
        assert!(select_model(&d, (1, 1), &[], &EmOptions::default()).is_err());
    }
}
