//! The BP/no-BP classifier CNN and the U-net and M-net segmenters: model
//! specs, training with early stopping, inference and checkpoints.

mod arch;
mod checkpoint;
mod train;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};
use crate::nn::{Graph, LossKind, Mode, ParamStore, Tensor};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_as, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{train, EpochRecord, History};

pub(crate) use arch::Arch;

/// Probability threshold; a value exactly at the threshold is positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Largest supported pooling depth.
pub const MAX_DEPTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelKind {
    Classifier,
    Unet,
    Mnet,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Classifier => "CLASSIFIER",
            ModelKind::Unet => "UNET",
            ModelKind::Mnet => "MNET",
        }
    }

    pub fn is_segmenter(self) -> bool {
        self != ModelKind::Classifier
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// `(rows, cols)` of the single-channel input.
    pub input_size: (usize, usize),
    pub base_channels: usize,
    /// Number of 2x2 poolings.
    pub depth: usize,
    /// M-net side outputs averaged into the prediction; ignored otherwise.
    pub deep_supervision: bool,
}

impl ModelSpec {
    /// 4 conv-pool blocks, 32 to 256 channels, on 128x128 input.
    pub fn classifier() -> Self {
        ModelSpec {
            kind: ModelKind::Classifier,
            input_size: (128, 128),
            base_channels: 32,
            depth: 4,
            deep_supervision: false,
        }
    }

    /// Depth-4 U-net with 32 base channels on 96x96 input.
    pub fn unet() -> Self {
        ModelSpec {
            kind: ModelKind::Unet,
            input_size: (96, 96),
            base_channels: 32,
            depth: 4,
            deep_supervision: false,
        }
    }

    /// [`ModelSpec::unet`] with input pyramid and deep supervision.
    pub fn mnet() -> Self {
        ModelSpec {
            kind: ModelKind::Mnet,
            deep_supervision: true,
            ..ModelSpec::unet()
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Classifier => Self::classifier(),
            ModelKind::Unet => Self::unet(),
            ModelKind::Mnet => Self::mnet(),
        }
    }

    pub fn with_input(mut self, rows: usize, cols: usize) -> Self {
        self.input_size = (rows, cols);
        self
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.input_size;
        if self.base_channels == 0 {
            return Err(Error::invalid("base_channels must be positive"));
        }
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(Error::invalid(format!(
                "depth must be in 1..={MAX_DEPTH}, got {}",
                self.depth
            )));
        }
        let f = 1usize << self.depth;
        if r == 0 || c == 0 || r % f != 0 || c % f != 0 {
            return Err(Error::invalid(format!(
                "input {r}x{c} is not divisible by 2^{} = {f}",
                self.depth
            )));
        }
        if self.base_channels.checked_shl(self.depth as u32).is_none() {
            return Err(Error::invalid("channel count overflows"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Non-improving epochs tolerated before stopping; 0 stops at the first.
    pub early_stop_patience: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl TrainConfig {
    /// BCE for the classifier, soft dice for the segmenters.
    pub fn for_kind(kind: ModelKind) -> Self {
        TrainConfig {
            max_epochs: 50,
            batch_size: 8,
            learning_rate: 1e-3,
            early_stop_patience: 10,
            loss: if kind.is_segmenter() {
                LossKind::SoftDice
            } else {
                LossKind::Bce
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("max_epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::invalid("early_stop_patience exceeds max_epochs"));
        }
        Ok(())
    }
}

/// A network and its weights.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    arch: Arch,
    params: ParamStore<f32>,
}

/// Build a freshly initialised network; weights are drawn from `seed`.
pub fn build_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let arch = Arch::build(&spec, &mut params, &mut rng);
    Ok(Model { spec, arch, params })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        if image.dims() != self.spec.input_size {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_size,
                actual: image.dims(),
            });
        }
        if let Some(v) = image.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pixel value {v}")));
        }
        Ok(())
    }

    /// Output probabilities for a batch: one value per image for the
    /// classifier, one per pixel for the segmenters.
    pub fn predict_proba(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        for im in images {
            self.check_input(im)?;
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.logits(images);
        Ok(logits
            .chunks(logits.len() / images.len())
            .map(|c| c.iter().map(|&z| sigmoid(z as f64)).collect())
            .collect())
    }

    fn logits(&self, images: &[&Image]) -> Vec<f32> {
        let x = batch_tensor(images);
        let mut g = Graph::new(&self.params, Mode::Eval);
        let xi = g.input(x);
        let out = self.arch.forward(&mut g, xi);
        g.value(out.main).data.clone()
    }

    pub fn predict_class(&self, image: &Image) -> Result<(f64, Label)> {
        self.require(false)?;
        let p = self.predict_proba(&[image])?[0][0];
        Ok((p, label_at(p)))
    }

    pub fn predict_mask(&self, image: &Image) -> Result<Mask> {
        self.require(true)?;
        let p = self.predict_proba(&[image])?.pop().expect("one image");
        let (r, c) = self.spec.input_size;
        Ok(Grid::from_vec(
            r,
            c,
            p.into_iter()
                .map(|v| (v >= DECISION_THRESHOLD) as u8)
                .collect(),
        )
        .expect("dims match spec"))
    }

    fn require(&self, segmenter: bool) -> Result<()> {
        if self.kind().is_segmenter() != segmenter {
            return Err(Error::invalid(format!(
                "{} model cannot {}",
                self.kind(),
                if segmenter {
                    "predict masks"
                } else {
                    "predict classes"
                }
            )));
        }
        Ok(())
    }
}

/// A model after training together with its per-epoch history.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    model: Model,
    history: History,
}

impl TrainedModel {
    /// Wrap a model with an empty history, e.g. an untrained baseline.
    pub fn untrained(model: Model) -> Self {
        TrainedModel {
            model,
            history: History::default(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.model.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.model.spec.kind
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn predict_class(&self, image: &Image) -> Result<(f64, Label)> {
        self.model.predict_class(image)
    }

    pub fn predict_mask(&self, image: &Image) -> Result<Mask> {
        self.model.predict_mask(image)
    }

    pub fn predict_proba(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.model.predict_proba(images)
    }
}

/// Hard label for a classifier probability.
pub fn label_at(p: f64) -> Label {
    if p >= DECISION_THRESHOLD {
        Label::Bp
    } else {
        Label::NoBp
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn batch_tensor(images: &[&Image]) -> Tensor<f32> {
    let (r, c) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * r * c);
    for im in images {
        data.extend_from_slice(im.as_slice());
    }
    Tensor::from_vec([images.len(), 1, r, c], data)
}

#[cfg(test)]
mod tests;
