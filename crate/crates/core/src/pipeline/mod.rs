//! The three experiment protocols over a fold plan: segmentation without a
//! gate, classifier-gated (hybrid) segmentation, and oracle-gated
//! segmentation.

mod report;
mod rle;
mod runner;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, SampleId, UsSample};
use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::models::{label_at, ModelKind, TrainedModel};

pub use report::{render_table2, score_pipeline, Score, Table2, TableCell};
pub use rle::Rle;
pub use runner::{
    ClassificationSummary, ExperimentData, ExperimentReport, ExperimentRunner, FoldResult,
    PipelineResult, SampleResult,
};
pub use trainer::{FixedTrainer, ModelTrainer, NetworkTrainer, SegmenterRole, TrainerConfig};

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $s),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_uppercase().replace('-', "_").as_str() {
                    $($s => Ok($ty::$variant),)+
                    _ => Err(Error::invalid(format!(
                        "unknown {} {s:?}, expected one of {:?}",
                        stringify!($ty),
                        [$($s),+]
                    ))),
                }
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineMode {
    NoClassification,
    Hybrid,
    PerfectClassification,
}

string_enum!(PipelineMode {
    NoClassification => "NO_CLASSIFICATION",
    Hybrid => "HYBRID",
    PerfectClassification => "PERFECT_CLASSIFICATION",
});

impl PipelineMode {
    /// Row label in the results table.
    pub fn row_label(self) -> &'static str {
        match self {
            PipelineMode::NoClassification => "No classification",
            PipelineMode::Hybrid => "Hybrid model",
            PipelineMode::PerfectClassification => "Perfect classification",
        }
    }

    /// Gate used by the protocol.
    pub fn default_gate(self) -> GateSource {
        match self {
            PipelineMode::NoClassification => GateSource::None,
            PipelineMode::Hybrid => GateSource::Cnn,
            PipelineMode::PerfectClassification => GateSource::Oracle,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegmenterKind {
    Unet,
    Mnet,
}

string_enum!(SegmenterKind {
    Unet => "UNET",
    Mnet => "MNET",
});

impl SegmenterKind {
    pub fn model_kind(self) -> ModelKind {
        match self {
            SegmenterKind::Unet => ModelKind::Unet,
            SegmenterKind::Mnet => ModelKind::Mnet,
        }
    }

    pub fn column_label(self) -> &'static str {
        match self {
            SegmenterKind::Unet => "U-net",
            SegmenterKind::Mnet => "M-net",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DataVariant {
    NonFiltered,
    Filtered,
}

string_enum!(DataVariant {
    NonFiltered => "NON_FILTERED",
    Filtered => "FILTERED",
});

impl DataVariant {
    pub fn column_label(self) -> &'static str {
        match self {
            DataVariant::NonFiltered => "Non-filtered",
            DataVariant::Filtered => "Filtered",
        }
    }
}

/// One cell of the results grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExperimentMode {
    pub mode: PipelineMode,
    pub segmenter: SegmenterKind,
    pub data_variant: DataVariant,
}

impl ExperimentMode {
    pub fn new(mode: PipelineMode, segmenter: SegmenterKind, data_variant: DataVariant) -> Self {
        ExperimentMode {
            mode,
            segmenter,
            data_variant,
        }
    }

    /// Every (mode, segmenter, variant) combination in table order.
    pub fn full_grid() -> Vec<ExperimentMode> {
        let mut out = Vec::new();
        for &data_variant in DataVariant::ALL {
            for &mode in PipelineMode::ALL {
                for &segmenter in SegmenterKind::ALL {
                    out.push(ExperimentMode::new(mode, segmenter, data_variant));
                }
            }
        }
        out
    }

    /// File-name friendly key, e.g. `hybrid_unet_filtered`.
    pub fn key(&self) -> String {
        format!("{}_{}_{}", self.mode, self.segmenter, self.data_variant).to_ascii_lowercase()
    }
}

impl fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.mode, self.segmenter, self.data_variant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateSource {
    Cnn,
    Oracle,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub sample_id: SampleId,
    pub predicted: Label,
    pub probability: f64,
    pub source: GateSource,
}

/// Image-level BP probability.
pub trait Classifier: Send + Sync {
    fn probability(&self, image: &Image) -> Result<f64>;
}

/// Binary mask prediction for a sample at segmenter resolution. The whole
/// sample is passed so that test doubles can look at the annotation.
pub trait Segmenter: Send + Sync {
    fn segment(&self, sample: &UsSample) -> Result<Mask>;
}

impl Classifier for TrainedModel {
    fn probability(&self, image: &Image) -> Result<f64> {
        self.predict_class(image).map(|(p, _)| p)
    }
}

impl Segmenter for TrainedModel {
    fn segment(&self, sample: &UsSample) -> Result<Mask> {
        self.predict_mask(sample.image())
    }
}

/// Returns the annotation unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthSegmenter;

impl Segmenter for GroundTruthSegmenter {
    fn segment(&self, sample: &UsSample) -> Result<Mask> {
        Ok(sample.mask().clone())
    }
}

/// Always predicts an empty mask.
#[derive(Clone, Copy, Debug, Default)]
pub struct EmptySegmenter;

impl Segmenter for EmptySegmenter {
    fn segment(&self, sample: &UsSample) -> Result<Mask> {
        let (r, c) = sample.dims();
        Ok(Mask::new(r, c))
    }
}

/// Classifier returning a fixed probability.
#[derive(Clone, Copy, Debug)]
pub struct ConstantClassifier(pub f64);

impl Classifier for ConstantClassifier {
    fn probability(&self, _: &Image) -> Result<f64> {
        Ok(self.0)
    }
}

/// What the gate sees of one test sample.
#[derive(Clone, Copy, Debug)]
pub struct GateInput<'a> {
    pub id: SampleId,
    /// Classifier-resolution image.
    pub image: &'a Image,
    pub truth: Label,
}

pub enum Gate<'a> {
    Cnn(&'a dyn Classifier),
    Oracle,
    None,
}

impl Gate<'_> {
    pub fn source(&self) -> GateSource {
        match self {
            Gate::Cnn(_) => GateSource::Cnn,
            Gate::Oracle => GateSource::Oracle,
            Gate::None => GateSource::None,
        }
    }
}

/// One decision per input, in input order.
pub fn gate(source: &Gate<'_>, items: &[GateInput<'_>]) -> Result<Vec<GateDecision>> {
    items
        .iter()
        .map(|it| {
            let (predicted, probability) = match source {
                Gate::Cnn(c) => {
                    let p = c.probability(it.image)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::invalid(format!(
                            "classifier probability {p} outside [0, 1]"
                        )));
                    }
                    (label_at(p), p)
                }
                Gate::Oracle => (it.truth, if it.truth.is_bp() { 1.0 } else { 0.0 }),
                Gate::None => (Label::Bp, 1.0),
            };
            Ok(GateDecision {
                sample_id: it.id,
                predicted,
                probability,
                source: source.source(),
            })
        })
        .collect()
}
