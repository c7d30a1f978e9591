//! Ultrasound samples, dataset indexes and the data preparation steps that
//! feed the experiments: loading, preprocessing, fold planning, affine
//! augmentation and synthetic data generation.

mod augment;
mod folds;
mod io;
mod preprocess;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

pub use augment::{apply_affine, augment_training_set, AffineParams, AugmentConfig};
pub use folds::{make_folds, Fold, FoldPlan, FoldStrategy};
pub use io::{load_dataset, read_manifest, write_dataset, write_manifest, ManifestRow};
pub use preprocess::{
    preprocess, resize_bilinear, resize_nearest, standardize, Prepared, PreprocessSpec,
};
pub use synth::{plant_contradictions, synth_generate, PlantedPair, SynthConfig};

/// Binary image class: the frame shows an annotated brachial plexus or not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "BP")]
    Bp,
    #[serde(rename = "NO_BP")]
    NoBp,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bp => "BP",
            Label::NoBp => "NO_BP",
        }
    }

    pub fn is_bp(self) -> bool {
        self == Label::Bp
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BP" => Ok(Label::Bp),
            "NO_BP" => Ok(Label::NoBp),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// BP iff any pixel of the mask is set.
pub fn derive_label(mask: &Mask) -> Result<Label> {
    mask.check_binary()?;
    Ok(if mask.as_slice().contains(&1) {
        Label::Bp
    } else {
        Label::NoBp
    })
}

/// `(subject, image index)`, both 1-based as in the public dataset file names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId {
    pub subject: u32,
    pub index: u32,
}

impl SampleId {
    pub fn new(subject: u32, index: u32) -> Self {
        SampleId { subject, index }
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.subject, self.index)
    }
}

/// One ultrasound frame with its annotation.
///
/// Construction enforces that image and mask share dimensions, that the mask
/// is binary, and that the label agrees with the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct UsSample {
    id: SampleId,
    image: Image,
    mask: Mask,
    label: Label,
}

impl UsSample {
    pub fn new(id: SampleId, image: Image, mask: Mask) -> Result<Self> {
        if id.subject == 0 || id.index == 0 {
            return Err(Error::invalid(format!("sample id {id} must be 1-based")));
        }
        crate::grid::check_same_dims(&image, &mask)?;
        let label = derive_label(&mask)?;
        Ok(UsSample {
            id,
            image,
            mask,
            label,
        })
    }

    pub fn id(&self) -> SampleId {
        self.id
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Real,
    Synthetic,
}

/// Per-class image counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub bp: usize,
    pub no_bp: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.bp + self.no_bp
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Bp => self.bp,
            Label::NoBp => self.no_bp,
        }
    }

    fn add(&mut self, label: Label) {
        match label {
            Label::Bp => self.bp += 1,
            Label::NoBp => self.no_bp += 1,
        }
    }

    pub fn of<'a>(labels: impl IntoIterator<Item = &'a UsSample>) -> Self {
        let mut counts = ClassCounts::default();
        for s in labels {
            counts.add(s.label());
        }
        counts
    }
}

/// An immutable, ordered collection of samples with unique ids.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    samples: Vec<Arc<UsSample>>,
    source: Source,
    class_counts: ClassCounts,
}

impl DatasetIndex {
    pub fn new(samples: Vec<Arc<UsSample>>, source: Source) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id()) {
                return Err(Error::DuplicateSample(s.id().to_string()));
            }
        }
        let class_counts = ClassCounts::of(samples.iter().map(|s| s.as_ref()));
        Ok(DatasetIndex {
            samples,
            source,
            class_counts,
        })
    }

    pub fn from_samples(samples: Vec<UsSample>, source: Source) -> Result<Self> {
        Self::new(samples.into_iter().map(Arc::new).collect(), source)
    }

    pub fn samples(&self) -> &[Arc<UsSample>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn class_counts(&self) -> ClassCounts {
        self.class_counts
    }

    pub fn get(&self, i: usize) -> &UsSample {
        &self.samples[i]
    }

    pub fn position(&self, id: SampleId) -> Option<usize> {
        self.samples.iter().position(|s| s.id() == id)
    }

    /// Keeps the samples whose position satisfies `keep`, preserving order.
    pub fn retain(&self, mut keep: impl FnMut(&UsSample) -> bool) -> DatasetIndex {
        let samples: Vec<_> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        let class_counts = ClassCounts::of(samples.iter().map(|s| s.as_ref()));
        DatasetIndex {
            samples,
            source: self.source,
            class_counts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn label_from_mask() {
        assert_eq!(derive_label(&Mask::new(4, 4)).unwrap(), Label::NoBp);

        let mut m = Mask::new(420, 580);
        m.set(211, 17, 1);
        assert_eq!(derive_label(&m).unwrap(), Label::Bp);

        let m = Grid::from_fn(4, 4, |r, c| u8::from(r * 4 + c < 3));
        assert_eq!(m.count_ones(), 3);
        assert_eq!(derive_label(&m).unwrap(), Label::Bp);
    }

    #[test]
    fn non_binary_mask_is_rejected() {
        let m = Grid::from_vec(1, 3, vec![0u8, 255, 1]).unwrap();
        assert!(matches!(
            derive_label(&m),
            Err(Error::NonBinaryMask { col: 1, .. })
        ));
    }

    #[test]
    fn sample_rejects_mismatched_dims() {
        let err = UsSample::new(SampleId::new(1, 1), Image::new(4, 4), Mask::new(4, 5));
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn index_rejects_duplicate_ids() {
        let s = UsSample::new(SampleId::new(1, 1), Image::new(2, 2), Mask::new(2, 2)).unwrap();
        let err = DatasetIndex::from_samples(vec![s.clone(), s], Source::Synthetic);
        assert!(matches!(err, Err(Error::DuplicateSample(_))));
    }

    #[test]
    fn class_counts_sum_to_len() {
        let mut samples = Vec::new();
        for i in 0..6u32 {
            let mut m = Mask::new(3, 3);
            if i % 3 != 0 {
                m.set(1, 1, 1);
            }
            samples.push(UsSample::new(SampleId::new(1, i + 1), Image::new(3, 3), m).unwrap());
        }
        let idx = DatasetIndex::from_samples(samples, Source::Synthetic).unwrap();
        assert_eq!(idx.class_counts(), ClassCounts { bp: 4, no_bp: 2 });
        assert_eq!(idx.class_counts().total(), idx.len());
    }
}
