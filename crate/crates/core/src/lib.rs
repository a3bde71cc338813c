//! Land-cover multi-label classification with SAR/optical fusion, evaluation
//! metrics, and a deterministic template-question answerer.

pub mod error;
pub mod experiment;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod questions;
pub mod sarprep;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, ErrorKind, Result};
pub use fusion::{FeatureVector, MlpModel, ProbVector, ThresholdVector, TrainConfig};
pub use metrics::{ClassCounts, MetricReport, VqaAccuracy};
pub use questions::{Answer, QaRecord, QuestionAst, QuestionType};
pub use sarprep::{Raster, SaturationBounds};
pub use taxonomy::{ClassWeights, LabelSet, Nomenclature, NomenclatureKind};
