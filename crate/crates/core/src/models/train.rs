use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    batch_tensor, sigmoid, Arch, Model, ModelKind, TrainConfig, TrainedModel, DECISION_THRESHOLD,
};
use crate::dataset::UsSample;
use crate::error::{Error, Result};
use crate::nn::{Adam, Element, Gradients, Graph, LossKind, Mode, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Accuracy for the classifier, mean DSC for the segmenters, on the
    /// validation set.
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Early stopping monitored the training loss because there was no
    /// validation data.
    pub monitored_train_loss: bool,
}

/// Loss over all network outputs and its parameter gradients. Deep
/// supervision averages the loss of the main and side outputs.
/// Running-statistic updates produced by batch norm in training mode.
pub(crate) type BufferUpdates<E> = Vec<(ParamId, Vec<E>)>;

pub(crate) fn loss_and_grads<E: Element>(
    arch: &Arch,
    params: &ParamStore<E>,
    mode: Mode,
    x: Tensor<E>,
    targets: &[E],
    loss: LossKind,
) -> (f64, Gradients<E>, BufferUpdates<E>) {
    let mut g = Graph::new(params, mode);
    let xi = g.input(x);
    let out = arch.forward(&mut g, xi);
    let nodes: Vec<_> = std::iter::once(out.main)
        .chain(out.aux.iter().copied())
        .collect();
    let w = 1.0 / nodes.len() as f64;
    let mut total = 0.0;
    let mut seeds = Vec::with_capacity(nodes.len());
    for id in nodes {
        let (l, mut grad) = loss.eval(g.value(id), targets);
        total += w * l;
        grad.data.iter_mut().for_each(|v| *v *= E::of(w));
        seeds.push((id, grad));
    }
    let grads = g.backward(&seeds);
    (total, grads, g.take_buffer_updates())
}

fn targets_of(kind: ModelKind, samples: &[&UsSample]) -> Vec<f32> {
    if kind.is_segmenter() {
        samples
            .iter()
            .flat_map(|s| s.mask().as_slice().iter().map(|&v| v as f32))
            .collect()
    } else {
        samples
            .iter()
            .map(|s| s.label().is_bp() as u8 as f32)
            .collect()
    }
}

fn check_samples(model: &Model, samples: &[UsSample]) -> Result<()> {
    for s in samples {
        if s.dims() != model.spec.input_size {
            return Err(Error::ShapeMismatch {
                expected: model.spec.input_size,
                actual: s.dims(),
            });
        }
    }
    Ok(())
}

/// Eval-mode loss and metric over a sample set.
fn evaluate(model: &Model, samples: &[UsSample], cfg: &TrainConfig) -> (f64, f64) {
    let mut loss_sum = 0.0;
    let mut metric_sum = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let refs: Vec<&UsSample> = chunk.iter().collect();
        let images: Vec<_> = refs.iter().map(|s| s.image()).collect();
        let targets = targets_of(model.kind(), &refs);
        let mut g = Graph::new(&model.params, Mode::Eval);
        let xi = g.input(batch_tensor(&images));
        let out = model.arch.forward(&mut g, xi);
        let nodes: Vec<_> = std::iter::once(out.main)
            .chain(out.aux.iter().copied())
            .collect();
        let w = 1.0 / nodes.len() as f64;
        for &id in &nodes {
            loss_sum += w * cfg.loss.eval(g.value(id), &targets).0 * chunk.len() as f64;
        }
        let probs: Vec<f64> = g
            .value(out.main)
            .data
            .iter()
            .map(|&z| sigmoid(z as f64))
            .collect();
        let per = probs.len() / chunk.len();
        for (b, s) in chunk.iter().enumerate() {
            let p = &probs[b * per..(b + 1) * per];
            metric_sum += if model.kind().is_segmenter() {
                hard_dice(p, s.mask().as_slice())
            } else {
                ((p[0] >= DECISION_THRESHOLD) == s.label().is_bp()) as u8 as f64
            };
        }
    }
    let n = samples.len() as f64;
    (loss_sum / n, metric_sum / n)
}

/// DSC of the thresholded prediction; two empty masks agree perfectly.
fn hard_dice(p: &[f64], truth: &[u8]) -> f64 {
    let (mut inter, mut sum) = (0usize, 0usize);
    for (&pv, &t) in p.iter().zip(truth) {
        let pb = (pv >= DECISION_THRESHOLD) as usize;
        inter += pb * t as usize;
        sum += pb + t as usize;
    }
    if sum == 0 {
        1.0
    } else {
        2.0 * inter as f64 / sum as f64
    }
}

/// Fit `model` with Adam on shuffled mini-batches and return the weights
/// of the epoch with the lowest validation loss.
///
/// Without validation data the training loss is monitored instead and a
/// warning is logged. A non-finite batch loss aborts with
/// [`Error::Diverged`].
pub fn train(
    mut model: Model,
    train_set: &[UsSample],
    val_set: &[UsSample],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    check_samples(&model, train_set)?;
    check_samples(&model, val_set)?;
    let monitored_train_loss = val_set.is_empty();
    if monitored_train_loss {
        log::warn!(
            "no validation samples for {}; early stopping on training loss",
            model.kind()
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History {
        monitored_train_loss,
        ..History::default()
    };
    let mut best = (f64::INFINITY, model.params.clone());
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&UsSample> = batch.iter().map(|&i| &train_set[i]).collect();
            let images: Vec<_> = refs.iter().map(|s| s.image()).collect();
            let targets = targets_of(model.kind(), &refs);
            let (loss, grads, updates) = loss_and_grads(
                &model.arch,
                &model.params,
                Mode::Train,
                batch_tensor(&images),
                &targets,
                cfg.loss,
            );
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut model.params, &grads);
            for (id, v) in updates {
                *model.params.value_mut(id) = v;
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let (val_loss, val_metric) = if monitored_train_loss {
            (None, None)
        } else {
            let (l, m) = evaluate(&model, val_set, cfg);
            if !l.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            (Some(l), Some(m))
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });
        log::debug!(
            "{} epoch {epoch}: train {train_loss:.5} val {val_loss:?}",
            model.kind()
        );

        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, model.params.clone());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.early_stop_patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    model.params = best.1;
    Ok(TrainedModel { model, history })
}
