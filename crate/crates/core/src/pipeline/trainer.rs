use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Classifier, Segmenter, SegmenterKind};
use crate::dataset::{augment_training_set, AugmentConfig, UsSample};
use crate::error::Result;
use crate::models::{
    build_model, save_checkpoint, train, ModelKind, ModelSpec, TrainConfig, TrainedModel,
};

/// Which training images a segmenter sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegmenterRole {
    AllImages,
    /// BP-labelled images only.
    PositiveOnly,
}

impl SegmenterRole {
    fn tag(self) -> &'static str {
        match self {
            SegmenterRole::AllImages => "all",
            SegmenterRole::PositiveOnly => "bp",
        }
    }
}

/// Supplies fitted models to the experiment runner, one call per fold and
/// role.
pub trait ModelTrainer: Sync {
    fn classifier(
        &self,
        fold: usize,
        train: &[UsSample],
        val: &[UsSample],
    ) -> Result<Arc<dyn Classifier>>;

    fn segmenter(
        &self,
        fold: usize,
        kind: SegmenterKind,
        role: SegmenterRole,
        train: &[UsSample],
        val: &[UsSample],
    ) -> Result<Arc<dyn Segmenter>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub classifier: ModelSpec,
    pub unet: ModelSpec,
    pub mnet: ModelSpec,
    pub classifier_train: TrainConfig,
    pub segmenter_train: TrainConfig,
    /// Augmented samples added to each classifier training set.
    pub n_extra: usize,
    pub augment: AugmentConfig,
    /// Root of all per-fold weight-init, shuffle and augmentation seeds.
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            classifier: ModelSpec::classifier(),
            unet: ModelSpec::unet(),
            mnet: ModelSpec::mnet(),
            classifier_train: TrainConfig::for_kind(ModelKind::Classifier),
            segmenter_train: TrainConfig::for_kind(ModelKind::Unet),
            n_extra: 2500,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    /// Small networks on 32x32 inputs for single-core runs on synthetic
    /// data: 8 base channels, depth 3, at most 30 epochs with patience 5 and
    /// 200 augmented classifier samples.
    pub fn desk() -> Self {
        let (cls, seg) = (ModelKind::Classifier, ModelKind::Unet);
        let train = |kind, batch_size| TrainConfig {
            max_epochs: 30,
            batch_size,
            learning_rate: 3e-3,
            early_stop_patience: 5,
            ..TrainConfig::for_kind(kind)
        };
        let small = |spec: ModelSpec| spec.with_input(32, 32).with_base_channels(8).with_depth(3);
        TrainerConfig {
            classifier: small(ModelSpec::classifier()),
            unet: small(ModelSpec::unet()),
            mnet: small(ModelSpec::mnet()),
            classifier_train: train(cls, 16),
            segmenter_train: train(seg, 8),
            n_extra: 200,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }

    pub fn segmenter_spec(&self, kind: SegmenterKind) -> &ModelSpec {
        match kind {
            SegmenterKind::Unet => &self.unet,
            SegmenterKind::Mnet => &self.mnet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kinds = [
            (self.classifier.kind, ModelKind::Classifier),
            (self.unet.kind, ModelKind::Unet),
            (self.mnet.kind, ModelKind::Mnet),
        ];
        for (got, want) in kinds {
            if got != want {
                return Err(crate::Error::invalid(format!(
                    "{want} slot holds a {got} spec"
                )));
            }
        }
        self.classifier.validate()?;
        self.unet.validate()?;
        self.mnet.validate()?;
        self.classifier_train.validate()?;
        self.segmenter_train.validate()
    }
}

/// SplitMix64 finaliser over the root seed, fold and role tag, so every
/// model draws from its own stream regardless of which cells run.
fn derive_seed(root: u64, fold: usize, tag: &str) -> u64 {
    let mut z = root ^ ((fold as u64) << 48);
    for b in tag.bytes() {
        z = z.rotate_left(8) ^ b as u64;
    }
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains the real networks; optionally writes one checkpoint per model.
#[derive(Clone, Debug, Default)]
pub struct NetworkTrainer {
    pub config: TrainerConfig,
    pub checkpoint_dir: Option<PathBuf>,
}

impl NetworkTrainer {
    pub fn new(config: TrainerConfig) -> Self {
        NetworkTrainer {
            config,
            checkpoint_dir: None,
        }
    }

    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    fn fit(
        &self,
        fold: usize,
        tag: &str,
        spec: ModelSpec,
        cfg: TrainConfig,
        train_set: &[UsSample],
        val: &[UsSample],
    ) -> Result<TrainedModel> {
        let seed = derive_seed(self.config.seed, fold, tag);
        let model = build_model(spec, seed)?;
        let cfg = TrainConfig {
            seed: seed.wrapping_add(1),
            ..cfg
        };
        log::info!("fold {fold}: training {tag} on {} samples", train_set.len());
        let trained = train(model, train_set, val, &cfg)?;
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
            save_checkpoint(&trained, dir.join(format!("fold{fold}_{tag}.ckpt")))?;
        }
        Ok(trained)
    }
}

impl ModelTrainer for NetworkTrainer {
    fn classifier(
        &self,
        fold: usize,
        train_set: &[UsSample],
        val: &[UsSample],
    ) -> Result<Arc<dyn Classifier>> {
        let c = &self.config;
        let augmented;
        let train_set = if c.n_extra > 0 {
            augmented = augment_training_set(
                train_set,
                c.n_extra,
                derive_seed(c.seed, fold, "augment"),
                &c.augment,
            )?;
            &augmented[..]
        } else {
            train_set
        };
        let m = self.fit(
            fold,
            "classifier",
            c.classifier,
            c.classifier_train,
            train_set,
            val,
        )?;
        Ok(Arc::new(m))
    }

    fn segmenter(
        &self,
        fold: usize,
        kind: SegmenterKind,
        role: SegmenterRole,
        train_set: &[UsSample],
        val: &[UsSample],
    ) -> Result<Arc<dyn Segmenter>> {
        let c = &self.config;
        let tag = format!("{}_{}", kind.as_str().to_ascii_lowercase(), role.tag());
        let m = self.fit(
            fold,
            &tag,
            *c.segmenter_spec(kind),
            c.segmenter_train,
            train_set,
            val,
        )?;
        Ok(Arc::new(m))
    }
}

/// Hands out the same classifier and segmenter for every fold.
#[derive(Clone)]
pub struct FixedTrainer {
    pub classifier: Arc<dyn Classifier>,
    pub segmenter: Arc<dyn Segmenter>,
}

impl ModelTrainer for FixedTrainer {
    fn classifier(&self, _: usize, _: &[UsSample], _: &[UsSample]) -> Result<Arc<dyn Classifier>> {
        Ok(self.classifier.clone())
    }

    fn segmenter(
        &self,
        _: usize,
        _: SegmenterKind,
        _: SegmenterRole,
        _: &[UsSample],
        _: &[UsSample],
    ) -> Result<Arc<dyn Segmenter>> {
        Ok(self.segmenter.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_fold_and_role() {
        let a = derive_seed(1, 0, "classifier");
        assert_eq!(a, derive_seed(1, 0, "classifier"));
        assert_ne!(a, derive_seed(1, 1, "classifier"));
        assert_ne!(a, derive_seed(1, 0, "unet_bp"));
        assert_ne!(a, derive_seed(2, 0, "classifier"));
    }
}
