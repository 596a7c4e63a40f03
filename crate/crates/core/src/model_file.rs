//! JSON documents written by training: one model per operating point and a
//! manifest listing them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::debias::DebiasTransform;
use crate::error::{Error, Result};
use crate::gmm::{MixtureModel, Parametrization, SelectionReport, TrainLog};
use crate::perf::OperatingPoint;
use crate::pipeline::TrainingInfo;

pub const MODEL_FORMAT: &str = "qualperf-model/1";
pub const MANIFEST_FORMAT: &str = "qualperf-manifest/1";

/// Serde adapter writing a matrix as a list of rows.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDoc {
    pub parametrization: Parametrization,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub train_log: TrainLog,
}

impl MixtureDoc {
    pub fn from_model(m: &MixtureModel) -> Self {
        Self {
            parametrization: m.parametrization,
            weights: m.weights.clone(),
            means: m.means.iter().map(|v| v.iter().copied().collect()).collect(),
            covariances: m.covariances.iter().map(matrix_rows::to_rows).collect(),
            train_log: m.train_log.clone(),
        }
    }

    pub fn to_model(&self, d_q: usize, d_r: usize) -> Result<MixtureModel> {
        let covariances = self
            .covariances
            .iter()
            .map(|c| matrix_rows::from_rows(c).map_err(|e| Error::param("covariances", e)))
            .collect::<Result<Vec<DMatrix<f64>>>>()?;
        let mut m = MixtureModel::new(
            self.parametrization,
            d_q,
            d_r,
            self.weights.clone(),
            self.means.iter().map(|v| DVector::from_row_slice(v)).collect(),
            covariances,
        )?;
        m.train_log = self.train_log.clone();
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub d_q: usize,
    pub d_r: usize,
    /// Names of the performance coordinates, in model order.
    pub measures: Vec<String>,
    pub operating_point: OperatingPoint,
    pub mixture: MixtureDoc,
    pub selection: SelectionReport,
    pub training: TrainingInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debias: Option<DebiasTransform>,
}

impl ModelDocument {
    pub fn new(
        model: &MixtureModel,
        operating_point: OperatingPoint,
        selection: SelectionReport,
        training: TrainingInfo,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            d_q: model.d_q,
            d_r: model.d_r,
            measures: vec!["fmr".into(), "fnmr".into()],
            operating_point,
            mixture: MixtureDoc::from_model(model),
            selection,
            training,
            debias: None,
        }
    }

    pub fn model(&self) -> Result<MixtureModel> {
        self.mixture.to_model(self.d_q, self.d_r)
    }

    fn check(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Format {
                expected: MODEL_FORMAT,
                found: self.format.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub target_fmr: f64,
    pub threshold: f64,
    /// Relative to the manifest's directory.
    pub model: String,
    pub training_data: String,
    pub k: usize,
    pub parametrization: Parametrization,
    pub training_shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub d_q: usize,
    pub models: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(d_q: usize, models: Vec<ManifestEntry>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            d_q,
            models,
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelDocument> {
    let doc: ModelDocument = read_json(path)?;
    doc.check()?;
    Ok(doc)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let m: Manifest = read_json(path)?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::Format {
            expected: MANIFEST_FORMAT,
            found: m.format,
        });
    }
    Ok(m)
}

/// File name used for the model of one operating point, e.g. `model_fmr0.001.json`.
pub fn model_file_name(target_fmr: f64) -> String {
    format!("model_fmr{target_fmr}.json")
}

pub fn training_file_name(target_fmr: f64) -> String {
    format!("training_fmr{target_fmr}.csv")
}
