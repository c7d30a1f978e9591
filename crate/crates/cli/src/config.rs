//! Run configuration: a TOML document layered over a named preset, with
//! command-line flags applied last.

use std::path::{Path, PathBuf};

use bpseg::curation::CurationConfig;
use bpseg::dataset::{AugmentConfig, FoldStrategy};
use bpseg::evaluation::TTestKind;
use bpseg::models::{ModelKind, ModelSpec, TrainConfig};
use bpseg::nn::LossKind;
use bpseg::pipeline::{DataVariant, PipelineMode, SegmenterKind, TrainerConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "BPSEG_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-size networks (128x128 classifier, 96x96 segmenters, 32 base
    /// channels, depth 4, 2500 augmented samples); needs `data.root`.
    Full,
    /// Small networks on a 200-image synthetic set; minutes on one core.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n: usize,
    pub bp_fraction: f64,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    /// Contradictory near-duplicates appended to the generated set.
    pub planted_pairs: usize,
    pub noise_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory of `<subject>_<index>[_mask].(tif|png)` files.
    pub root: Option<PathBuf>,
    /// Manifest listing the samples of the filtered variant; when absent the
    /// filtered variant is curated during the run.
    pub filtered_manifest: Option<PathBuf>,
    /// Generate data instead of loading `root`.
    pub synth: Option<SynthSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    /// Fold assignment.
    pub folds: u64,
    /// Root of weight init, batch order and augmentation streams.
    pub training: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSection {
    pub n_folds: usize,
    pub val_fraction: f64,
    pub strategy: FoldStrategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub input: [usize; 2],
    pub base_channels: usize,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deep_supervision: Option<bool>,
}

impl ModelSection {
    fn from_spec(spec: &ModelSpec) -> Self {
        ModelSection {
            input: [spec.input_size.0, spec.input_size.1],
            base_channels: spec.base_channels,
            depth: spec.depth,
            deep_supervision: (spec.kind == ModelKind::Mnet).then_some(spec.deep_supervision),
        }
    }

    fn to_spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            input_size: (self.input[0], self.input[1]),
            base_channels: self.base_channels,
            depth: self.depth,
            deep_supervision: kind == ModelKind::Mnet && self.deep_supervision.unwrap_or(true),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub classifier: ModelSection,
    pub unet: ModelSection,
    pub mnet: ModelSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub loss: LossKind,
}

impl TrainSection {
    fn from_config(c: &TrainConfig) -> Self {
        TrainSection {
            max_epochs: c.max_epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            early_stop_patience: c.early_stop_patience,
            loss: c.loss,
        }
    }

    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            early_stop_patience: self.early_stop_patience,
            loss: self.loss,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub classifier: TrainSection,
    pub segmenter: TrainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSection {
    /// Extra augmented samples per classifier training set. Signed so that a
    /// negative value is reported as an input error rather than a parse
    /// error.
    pub n_extra: i64,
    #[serde(flatten)]
    pub ranges: AugmentConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Grouping {
    /// One value per fold: the fold's mean DSC.
    PerFold,
    /// One value per test image, pooled over folds.
    PerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    pub grouping: Grouping,
    pub t_test: TTestKind,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            grouping: Grouping::PerFold,
            t_test: TTestKind::Welch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub modes: Vec<PipelineMode>,
    pub segmenters: Vec<SegmenterKind>,
    pub variants: Vec<DataVariant>,
    pub parallel_folds: bool,
    pub write_checkpoints: bool,
    pub seeds: SeedSection,
    pub data: DataSection,
    pub folds: FoldSection,
    pub curation: CurationConfig,
    pub models: ModelsSection,
    pub training: TrainingSection,
    pub augmentation: AugmentationSection,
    #[serde(default)]
    pub stats: StatsSection,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let trainer = match p {
            Preset::Full => TrainerConfig::default(),
            Preset::Desk => TrainerConfig::desk(),
        };
        RunConfig {
            name: match p {
                Preset::Full => "full".into(),
                Preset::Desk => "desk".into(),
            },
            output_dir: None,
            modes: PipelineMode::ALL.to_vec(),
            segmenters: SegmenterKind::ALL.to_vec(),
            variants: DataVariant::ALL.to_vec(),
            parallel_folds: false,
            write_checkpoints: true,
            seeds: SeedSection {
                folds: 0,
                training: 0,
            },
            data: DataSection {
                synth: (p == Preset::Desk).then_some(SynthSection {
                    n: 200,
                    bp_fraction: 0.5,
                    rows: 64,
                    cols: 64,
                    seed: 0,
                    planted_pairs: 10,
                    noise_fraction: 0.02,
                }),
                ..DataSection::default()
            },
            folds: FoldSection {
                n_folds: 5,
                val_fraction: 0.2,
                strategy: FoldStrategy::ByImage,
            },
            curation: CurationConfig::default(),
            models: ModelsSection {
                classifier: ModelSection::from_spec(&trainer.classifier),
                unet: ModelSection::from_spec(&trainer.unet),
                mnet: ModelSection::from_spec(&trainer.mnet),
            },
            training: TrainingSection {
                classifier: TrainSection::from_config(&trainer.classifier_train),
                segmenter: TrainSection::from_config(&trainer.segmenter_train),
            },
            augmentation: AugmentationSection {
                n_extra: trainer.n_extra as i64,
                ranges: trainer.augment,
            },
            stats: StatsSection::default(),
        }
    }

    /// Preset overlaid with the TOML document at `path`, if any.
    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self, CliError> {
        let base = Self::preset(preset);
        let Some(path) = path else { return Ok(base) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::overlay(base, &text)
            .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
    }

    pub fn overlay(base: Self, text: &str) -> Result<Self, String> {
        let user: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut merged: toml::Table =
            toml::from_str(&toml::to_string(&base).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        merge(&mut merged, user);
        toml::from_str(&toml::to_string(&merged).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            classifier: self.models.classifier.to_spec(ModelKind::Classifier),
            unet: self.models.unet.to_spec(ModelKind::Unet),
            mnet: self.models.mnet.to_spec(ModelKind::Mnet),
            classifier_train: self.training.classifier.to_config(),
            segmenter_train: self.training.segmenter.to_config(),
            n_extra: self.augmentation.n_extra.max(0) as usize,
            augment: self.augmentation.ranges,
            seed: self.seeds.training,
        }
    }

    /// Check invariants and that referenced paths exist.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::input(m));
        if self.modes.is_empty() || self.segmenters.is_empty() || self.variants.is_empty() {
            return bad("at least one mode, segmenter and data variant must be requested".into());
        }
        if self.augmentation.n_extra < 0 {
            return bad(format!(
                "augmentation.n_extra must be >= 0, got {}",
                self.augmentation.n_extra
            ));
        }
        match (&self.data.root, &self.data.synth) {
            (None, None) => return bad("set data.root or data.synth".into()),
            (Some(_), Some(_)) => {
                return bad("data.root and data.synth are mutually exclusive".into())
            }
            (Some(root), None) if !root.is_dir() => {
                return bad(format!("data root {} is not a directory", root.display()))
            }
            _ => {}
        }
        if let Some(m) = &self.data.filtered_manifest {
            if !m.is_file() {
                return bad(format!("filtered manifest {} does not exist", m.display()));
            }
        }
        if self.folds.n_folds < 2 {
            return bad("folds.n_folds must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.folds.val_fraction) {
            return bad("folds.val_fraction must be in [0, 1)".into());
        }
        self.trainer_config()
            .validate()
            .map_err(|e| CliError::input(e.to_string()))
    }

    /// `--out`, then `output_dir`, then `$BPSEG_OUTPUT_ROOT/<name>`, then
    /// `runs/<name>`.
    pub fn resolve_output(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.name)
    }
}

/// Recursive table merge; `over` wins on conflicts.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [Preset::Full, Preset::Desk] {
            let c = RunConfig::preset(p);
            let back = RunConfig::overlay(c.clone(), &c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn full_preset_values() {
        let c = RunConfig::preset(Preset::Full);
        let t = c.trainer_config();
        assert_eq!(t.classifier.input_size, (128, 128));
        assert_eq!(t.unet.input_size, (96, 96));
        assert_eq!(t.mnet.input_size, (96, 96));
        assert_eq!(t.n_extra, 2500);
        assert_eq!((c.folds.n_folds, c.folds.val_fraction), (5, 0.2));
        assert_eq!(c.curation.threshold, 0.95);
        assert!(c.data.root.is_none() && c.data.synth.is_none());
        assert!(c.validate().is_err());
    }

    #[test]
    fn overlay_overrides_nested_keys() {
        let base = RunConfig::preset(Preset::Desk);
        let c = RunConfig::overlay(
            base.clone(),
            "name = \"x\"\nmodes = [\"HYBRID\"]\n[training.segmenter]\nmax_epochs = 3\n[curation]\nthreshold = 1.01\n",
        )
        .unwrap();
        assert_eq!(c.name, "x");
        assert_eq!(c.modes, vec![PipelineMode::Hybrid]);
        assert_eq!(c.training.segmenter.max_epochs, 3);
        assert_eq!(
            c.training.segmenter.batch_size,
            base.training.segmenter.batch_size
        );
        assert_eq!(c.curation.threshold, 1.01);
        assert!(RunConfig::overlay(base.clone(), "bogus = 1").is_err());
        assert!(RunConfig::overlay(base, "modes = [\"SOMETIMES\"]").is_err());
    }

    #[test]
    fn negative_n_extra_is_an_input_error() {
        let c = RunConfig::overlay(
            RunConfig::preset(Preset::Desk),
            "[augmentation]\nn_extra = -1",
        )
        .unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.code, crate::error::EXIT_INPUT);
        assert!(e.message.contains("n_extra"));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut c = RunConfig::preset(Preset::Desk);
        c.modes.clear();
        assert!(c.validate().is_err());
    }
}
