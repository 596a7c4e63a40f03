//! Quality-conditioned prediction of biometric verification performance.
//!
//! Verification records (similarity score, quality vector, ground truth) are
//! grouped into overlapping regions of quality space. Within each region the
//! false match and false non-match rates at an operating point get Beta
//! posteriors, and samples from those posteriors together with samples of the
//! region's quality form the training set of a Gaussian mixture over the joint
//! quality-performance space. Conditioning that mixture on an observed quality
//! vector yields the expected performance before any comparison is made.
//!
//! Module map:
//!
//! * [`data`]: record schema, dataset files and ground-truth pools
//! * [`partition`]: quantile grid and quality regions
//! * [`perf`]: operating points, Beta posteriors and training-set sampling
//! * [`gmm`]: mixture fitting and BIC model selection
//! * [`predict`]: conditioning on quality and expected performance
//! * [`debias`]: least-squares transform to an unbiased quality space
//! * [`eval`]: pooled comparisons, ROC points and error-versus-reject curves
//! * [`synth`]: synthetic datasets with closed-form performance
//! * [`model_file`]: persisted model documents
//! * [`pipeline`]: end-to-end training

pub mod data;
pub mod debias;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod model_file;
pub mod partition;
pub mod perf;
pub mod pipeline;
pub mod predict;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
