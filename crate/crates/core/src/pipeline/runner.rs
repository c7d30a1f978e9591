use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{score_pipeline, Score};
use super::{
    gate, Classifier, ExperimentMode, Gate, GateDecision, GateInput, GateSource, ModelTrainer,
    PipelineMode, Rle, Segmenter, SegmenterKind, SegmenterRole,
};
use crate::dataset::{preprocess, DatasetIndex, FoldPlan, Label, PreprocessSpec, UsSample};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, confusion, dsc, f1, ConfusionCounts};
use crate::grid::Mask;

/// A dataset prepared at both network resolutions, aligned by position.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    classifier: Vec<UsSample>,
    segmenter: Vec<UsSample>,
}

impl ExperimentData {
    pub fn prepare(
        index: &DatasetIndex,
        classifier: &PreprocessSpec,
        segmenter: &PreprocessSpec,
    ) -> Result<Self> {
        let prep = |spec: &PreprocessSpec| -> Result<Vec<UsSample>> {
            index
                .samples()
                .par_iter()
                .map(|s| preprocess(s, spec).map(|p| p.sample))
                .collect()
        };
        Self::from_parts(prep(classifier)?, prep(segmenter)?)
    }

    pub fn from_parts(classifier: Vec<UsSample>, segmenter: Vec<UsSample>) -> Result<Self> {
        if classifier.len() != segmenter.len() {
            return Err(Error::invalid(
                "classifier and segmenter sample lists differ in length",
            ));
        }
        if let Some((a, b)) = classifier
            .iter()
            .zip(&segmenter)
            .find(|(a, b)| a.id() != b.id())
        {
            return Err(Error::invalid(format!(
                "sample {} is paired with {}",
                a.id(),
                b.id()
            )));
        }
        Ok(ExperimentData {
            classifier,
            segmenter,
        })
    }

    pub fn len(&self) -> usize {
        self.segmenter.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segmenter.is_empty()
    }

    pub fn classifier_samples(&self) -> &[UsSample] {
        &self.classifier
    }

    pub fn segmenter_samples(&self) -> &[UsSample] {
        &self.segmenter
    }

    /// Ground-truth label, taken at the resolution DSC is scored at.
    pub fn truth(&self, i: usize) -> Label {
        self.segmenter[i].label()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub gate: GateDecision,
    pub truth: Label,
    /// Empty when the gate said NO_BP.
    pub predicted_mask: Rle,
    pub dsc: f64,
    /// Both masks empty; DSC is 1 by convention.
    pub empty_vs_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    pub f1: f64,
    pub f1_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub valid: bool,
    pub invalid_reason: Option<String>,
    pub samples: Vec<SampleResult>,
    /// Mean DSC over every test sample.
    pub mean_dsc: Option<f64>,
    /// Mean DSC over test samples the gate passed to the segmenter.
    pub gated_dsc: Option<f64>,
    pub n_gated: usize,
    pub classification: Option<ClassificationSummary>,
}

impl FoldResult {
    fn invalid(fold: usize, reason: String) -> Self {
        log::warn!("fold {fold} marked invalid: {reason}");
        FoldResult {
            fold,
            valid: false,
            invalid_reason: Some(reason),
            samples: Vec::new(),
            mean_dsc: None,
            gated_dsc: None,
            n_gated: 0,
            classification: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub folds: Vec<FoldResult>,
}

impl PipelineResult {
    pub fn valid_folds(&self) -> impl Iterator<Item = &FoldResult> {
        self.folds.iter().filter(|f| f.valid)
    }

    pub fn n_invalid(&self) -> usize {
        self.folds.iter().filter(|f| !f.valid).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentMode,
    pub gate: GateSource,
    pub fold_seed: u64,
    pub n_folds: usize,
    pub result: PipelineResult,
    /// Absent when no fold is valid.
    pub score: Option<Score>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Role {
    Classifier,
    Segmenter(SegmenterKind, SegmenterRole),
}

#[derive(Clone)]
enum Cached {
    Classifier(Arc<dyn Classifier>),
    Segmenter(Arc<dyn Segmenter>),
    /// Training failed in a way that invalidates the fold.
    Failed(String),
}

/// Runs experiment cells over one prepared dataset and fold plan. Trained
/// models are cached per fold and role, so cells that share a model (the
/// BP-only segmenter of the hybrid and oracle-gated protocols, or the
/// classifier across segmenter kinds) train it once.
pub struct ExperimentRunner<'a> {
    data: &'a ExperimentData,
    plan: &'a FoldPlan,
    trainer: &'a dyn ModelTrainer,
    parallel_folds: bool,
    cache: Mutex<HashMap<(usize, Role), Cached>>,
}

fn invalidating(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::TooFewSamples { .. })
}

impl<'a> ExperimentRunner<'a> {
    pub fn new(
        data: &'a ExperimentData,
        plan: &'a FoldPlan,
        trainer: &'a dyn ModelTrainer,
    ) -> Result<Self> {
        if plan.n_samples != data.len() {
            return Err(Error::invalid(format!(
                "fold plan covers {} samples but the dataset has {}",
                plan.n_samples,
                data.len()
            )));
        }
        Ok(ExperimentRunner {
            data,
            plan,
            trainer,
            parallel_folds: false,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Run folds on the rayon pool. Results are identical to the
    /// sequential order.
    pub fn parallel_folds(mut self, on: bool) -> Self {
        self.parallel_folds = on;
        self
    }

    pub fn run(&self, experiment: ExperimentMode) -> Result<ExperimentReport> {
        self.run_with_gate(experiment, experiment.mode.default_gate())
    }

    /// Run a cell with a substitute gate, e.g. the hybrid protocol with the
    /// oracle in place of the classifier.
    pub fn run_with_gate(
        &self,
        experiment: ExperimentMode,
        gate_source: GateSource,
    ) -> Result<ExperimentReport> {
        let folds: Vec<FoldResult> = if self.parallel_folds {
            (0..self.plan.folds.len())
                .into_par_iter()
                .map(|k| self.run_fold(k, experiment, gate_source))
                .collect::<Result<_>>()?
        } else {
            (0..self.plan.folds.len())
                .map(|k| self.run_fold(k, experiment, gate_source))
                .collect::<Result<_>>()?
        };
        let result = PipelineResult { folds };
        let score = match score_pipeline(&result) {
            Ok(s) => Some(s),
            Err(Error::NoValidFolds) => None,
            Err(e) => return Err(e),
        };
        Ok(ExperimentReport {
            experiment,
            gate: gate_source,
            fold_seed: self.plan.seed,
            n_folds: self.plan.folds.len(),
            result,
            score,
        })
    }

    fn cached(&self, key: (usize, Role), make: impl FnOnce() -> Result<Cached>) -> Result<Cached> {
        if let Some(c) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(c.clone());
        }
        let made = match make() {
            Ok(c) => c,
            Err(e) if invalidating(&e) => Cached::Failed(e.to_string()),
            Err(e) => return Err(e),
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, made.clone());
        Ok(made)
    }

    fn run_fold(
        &self,
        k: usize,
        experiment: ExperimentMode,
        gate_source: GateSource,
    ) -> Result<FoldResult> {
        let fold = &self.plan.folds[k];
        let role = match experiment.mode {
            PipelineMode::NoClassification => SegmenterRole::AllImages,
            PipelineMode::Hybrid | PipelineMode::PerfectClassification => {
                SegmenterRole::PositiveOnly
            }
        };
        let keep = |&i: &usize| role == SegmenterRole::AllImages || self.data.truth(i).is_bp();
        let pick = |set: &[UsSample], idx: &[usize], filter: bool| -> Vec<UsSample> {
            idx.iter()
                .filter(|i| !filter || keep(i))
                .map(|&i| set[i].clone())
                .collect()
        };
        let seg_train = pick(&self.data.segmenter, &fold.train, true);
        if seg_train.is_empty() {
            return Ok(FoldResult::invalid(
                k,
                match role {
                    SegmenterRole::PositiveOnly => {
                        "no BP samples in the training split".to_string()
                    }
                    SegmenterRole::AllImages => "empty training split".to_string(),
                },
            ));
        }
        let segmenter =
            match self.cached((k, Role::Segmenter(experiment.segmenter, role)), || {
                let val = pick(&self.data.segmenter, &fold.val, true);
                self.trainer
                    .segmenter(k, experiment.segmenter, role, &seg_train, &val)
                    .map(Cached::Segmenter)
            })? {
                Cached::Segmenter(s) => s,
                Cached::Failed(reason) => {
                    return Ok(FoldResult::invalid(k, format!("segmenter: {reason}")))
                }
                Cached::Classifier(_) => unreachable!("segmenter key holds a classifier"),
            };
        let classifier = if gate_source == GateSource::Cnn {
            match self.cached((k, Role::Classifier), || {
                let train = pick(&self.data.classifier, &fold.train, false);
                let val = pick(&self.data.classifier, &fold.val, false);
                self.trainer
                    .classifier(k, &train, &val)
                    .map(Cached::Classifier)
            })? {
                Cached::Classifier(c) => Some(c),
                Cached::Failed(reason) => {
                    return Ok(FoldResult::invalid(k, format!("classifier: {reason}")))
                }
                Cached::Segmenter(_) => unreachable!("classifier key holds a segmenter"),
            }
        } else {
            None
        };
        let g = match (&classifier, gate_source) {
            (Some(c), _) => Gate::Cnn(c.as_ref()),
            (None, GateSource::Oracle) => Gate::Oracle,
            _ => Gate::None,
        };
        let inputs: Vec<GateInput> = fold
            .test
            .iter()
            .map(|&i| GateInput {
                id: self.data.classifier[i].id(),
                image: self.data.classifier[i].image(),
                truth: self.data.truth(i),
            })
            .collect();
        let decisions = gate(&g, &inputs)?;
        score_fold(
            k,
            &fold.test,
            &decisions,
            self.data,
            segmenter.as_ref(),
            gate_source,
        )
    }
}

fn score_fold(
    k: usize,
    test: &[usize],
    decisions: &[GateDecision],
    data: &ExperimentData,
    segmenter: &dyn Segmenter,
    gate_source: GateSource,
) -> Result<FoldResult> {
    let mut samples = Vec::with_capacity(test.len());
    for (&i, d) in test.iter().zip(decisions) {
        let s = &data.segmenter[i];
        let predicted = if d.predicted.is_bp() {
            let m = segmenter.segment(s)?;
            if m.dims() != s.dims() {
                return Err(Error::ShapeMismatch {
                    expected: s.dims(),
                    actual: m.dims(),
                });
            }
            m
        } else {
            Mask::new(s.dims().0, s.dims().1)
        };
        let score = dsc(&predicted, s.mask())?;
        samples.push(SampleResult {
            gate: *d,
            truth: s.label(),
            predicted_mask: Rle::from_mask(&predicted),
            dsc: score.value,
            empty_vs_empty: score.degenerate,
        });
    }
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let all: Vec<f64> = samples.iter().map(|s| s.dsc).collect();
    let gated: Vec<f64> = samples
        .iter()
        .filter(|s| s.gate.predicted.is_bp())
        .map(|s| s.dsc)
        .collect();
    let classification = if gate_source == GateSource::None || samples.is_empty() {
        None
    } else {
        let pred: Vec<Label> = samples.iter().map(|s| s.gate.predicted).collect();
        let truth: Vec<Label> = samples.iter().map(|s| s.truth).collect();
        let c = confusion(&pred, &truth)?;
        let f = f1(&c);
        Some(ClassificationSummary {
            confusion: c,
            accuracy: accuracy(&c)?,
            f1: f.value,
            f1_degenerate: f.degenerate,
        })
    };
    if samples.is_empty() {
        return Ok(FoldResult::invalid(k, "empty test split".to_string()));
    }
    Ok(FoldResult {
        fold: k,
        valid: true,
        invalid_reason: None,
        mean_dsc: mean(&all),
        gated_dsc: mean(&gated),
        n_gated: gated.len(),
        samples,
        classification,
    })
}
