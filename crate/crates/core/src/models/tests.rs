use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::loss_and_grads;
use super::*;
use crate::dataset::{preprocess, synth_generate, PreprocessSpec, SampleId, UsSample};
use crate::nn::ParamKind;

fn small(kind: ModelKind, size: usize, depth: usize) -> ModelSpec {
    ModelSpec::default_for(kind)
        .with_input(size, size)
        .with_base_channels(4)
        .with_depth(depth)
}

fn random_image(size: usize, scale: f32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(size, size, |_, _| rng.random_range(-scale..=scale))
}

fn synth_set(n: usize, size: usize, seed: u64) -> Vec<UsSample> {
    let spec = PreprocessSpec::new(size, size, true);
    synth_generate(n, 0.5, (size, size), seed)
        .unwrap()
        .samples()
        .iter()
        .map(|s| preprocess(s, &spec).unwrap().sample)
        .collect()
}

#[test]
fn depth_must_divide_input() {
    let err = build_model(small(ModelKind::Unet, 100, 3), 0).unwrap_err();
    assert!(err.to_string().contains("divisible"), "{err}");
    // 96 = 3 * 2^5, so depth 5 pools cleanly
    assert!(build_model(ModelSpec::unet().with_depth(5).with_base_channels(2), 0).is_ok());
    assert!(build_model(small(ModelKind::Unet, 96, 0), 0).is_err());
    assert!(build_model(ModelSpec::classifier().with_input(100, 128), 0).is_err());
}

#[test]
fn default_specs() {
    assert_eq!(ModelSpec::classifier().input_size, (128, 128));
    assert_eq!(ModelSpec::unet().input_size, (96, 96));
    assert_eq!(ModelSpec::mnet().input_size, (96, 96));
    for kind in [ModelKind::Classifier, ModelKind::Unet, ModelKind::Mnet] {
        ModelSpec::default_for(kind).validate().unwrap();
    }
}

#[test]
fn full_size_classifier_channels() {
    let m = build_model(ModelSpec::classifier(), 0).unwrap();
    let shapes: Vec<_> = m
        .params()
        .iter()
        .filter(|(_, p)| p.name.ends_with(".w") && p.name.starts_with("block"))
        .map(|(_, p)| p.shape[0])
        .collect();
    assert_eq!(shapes, vec![32, 64, 128, 256]);
}

#[test]
fn parameter_count_is_deterministic() {
    for kind in [ModelKind::Classifier, ModelKind::Unet, ModelKind::Mnet] {
        let spec = small(kind, 32, 3);
        let a = build_model(spec, 1).unwrap();
        let b = build_model(spec, 2).unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
        assert!(a.parameter_count() > 0);
    }
    let u = build_model(small(ModelKind::Unet, 32, 3), 0).unwrap();
    let m = build_model(small(ModelKind::Mnet, 32, 3), 0).unwrap();
    assert!(m.parameter_count() > u.parameter_count());
}

#[test]
fn output_shapes() {
    let img = random_image(32, 2.0, 3);
    let c = build_model(small(ModelKind::Classifier, 32, 3), 0).unwrap();
    let p = c.predict_proba(&[&img, &img]).unwrap();
    assert_eq!(p.len(), 2);
    assert_eq!(p[0].len(), 1);
    for kind in [ModelKind::Unet, ModelKind::Mnet] {
        let m = build_model(small(kind, 32, 3), 0).unwrap();
        let mask = m.predict_mask(&img).unwrap();
        assert_eq!(mask.dims(), (32, 32));
        mask.check_binary().unwrap();
        assert_eq!(m.predict_proba(&[&img]).unwrap()[0].len(), 32 * 32);
    }
}

#[test]
fn mnet_without_side_outputs_matches_unet_shape() {
    let mut spec = small(ModelKind::Mnet, 16, 1);
    spec.deep_supervision = false;
    let img = random_image(16, 1.0, 0);
    let m = build_model(spec, 0)
        .unwrap()
        .predict_proba(&[&img])
        .unwrap();
    let u = build_model(small(ModelKind::Unet, 16, 1), 0)
        .unwrap()
        .predict_proba(&[&img])
        .unwrap();
    assert_eq!(m[0].len(), u[0].len());
}

#[test]
fn shape_and_kind_mismatches_are_errors() {
    let c = build_model(small(ModelKind::Classifier, 32, 2), 0).unwrap();
    let u = build_model(small(ModelKind::Unet, 32, 2), 0).unwrap();
    let wrong = random_image(16, 1.0, 0);
    assert!(matches!(
        c.predict_class(&wrong),
        Err(Error::ShapeMismatch { .. })
    ));
    assert!(matches!(
        u.predict_mask(&wrong),
        Err(Error::ShapeMismatch { .. })
    ));
    let ok = random_image(32, 1.0, 0);
    assert!(c.predict_mask(&ok).is_err());
    assert!(u.predict_class(&ok).is_err());
    let mut nan = ok.clone();
    nan.set(0, 0, f32::NAN);
    assert!(c.predict_class(&nan).is_err());
}

#[test]
fn threshold_convention() {
    assert_eq!(label_at(0.5), Label::Bp);
    assert_eq!(label_at(0.49), Label::NoBp);
    assert_eq!(label_at(1.0), Label::Bp);
}

#[test]
fn inference_is_pure() {
    let img = random_image(32, 1.0, 9);
    let c = build_model(small(ModelKind::Classifier, 32, 2), 5).unwrap();
    assert_eq!(
        c.predict_class(&img).unwrap(),
        c.predict_class(&img).unwrap()
    );
    let u = build_model(small(ModelKind::Mnet, 32, 2), 5).unwrap();
    assert_eq!(u.predict_mask(&img).unwrap(), u.predict_mask(&img).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn predictions_stay_in_unit_interval(seed in 0u64..1000, scale in prop::sample::select(vec![1e-3f32, 1.0, 1e3, 1e6])) {
        let img = random_image(16, scale, seed);
        for kind in [ModelKind::Classifier, ModelKind::Unet, ModelKind::Mnet] {
            let m = build_model(small(kind, 16, 2), seed).unwrap();
            for p in m.predict_proba(&[&img]).unwrap().concat() {
                prop_assert!((0.0..=1.0).contains(&p), "{kind}: {p}");
            }
        }
    }
}

/// Central finite differences against the analytic gradient for every
/// trainable scalar of a tiny network in f64.
fn gradient_check(spec: ModelSpec, loss: LossKind, mode: Mode) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParamStore::<f64>::new();
    let arch = Arch::build(&spec, &mut params, &mut rng);
    // perturb the batch-norm affine terms and running stats off their defaults
    let ids: Vec<_> = params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in &ids {
        if name.contains(".bn.") {
            let var = name.ends_with(".var");
            for v in params.value_mut(*id).iter_mut() {
                *v += rng.random_range(0.1..0.5)
                    * if var {
                        1.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
            }
        }
    }
    let (r, c) = spec.input_size;
    let n = 2;
    let x = crate::nn::Tensor::from_vec(
        [n, 1, r, c],
        (0..n * r * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    );
    let targets: Vec<f64> = if spec.kind.is_segmenter() {
        (0..n * r * c)
            .map(|i| ((i % 3 == 0) as u8) as f64)
            .collect()
    } else {
        vec![1.0, 0.0]
    };
    let (_, grads, _) = loss_and_grads(&arch, &params, mode, x.clone(), &targets, loss);
    let h = 1e-5;
    let mut checked = 0;
    for (id, name) in ids {
        if params.get(id).kind != ParamKind::Trainable {
            continue;
        }
        let analytic = grads.get(id).map(|g| g.to_vec()).unwrap_or_default();
        for i in 0..params.value(id).len() {
            let orig = params.value(id)[i];
            params.value_mut(id)[i] = orig + h;
            let lp = loss_and_grads(&arch, &params, mode, x.clone(), &targets, loss).0;
            params.value_mut(id)[i] = orig - h;
            let lm = loss_and_grads(&arch, &params, mode, x.clone(), &targets, loss).0;
            params.value_mut(id)[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.get(i).copied().unwrap_or(0.0);
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-6));
            assert!(
                rel < 1e-3,
                "{:?} {loss:?} {mode:?} {name}[{i}]: analytic {a} numeric {numeric}",
                spec.kind
            );
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn gradients_match_finite_differences() {
    let toy = ModelSpec {
        kind: ModelKind::Classifier,
        input_size: (4, 4),
        base_channels: 2,
        depth: 1,
        deep_supervision: false,
    };
    for mode in [Mode::Train, Mode::Eval] {
        gradient_check(toy, LossKind::Bce, mode);
        for kind in [ModelKind::Unet, ModelKind::Mnet] {
            let spec = ModelSpec {
                kind,
                input_size: (4, 4),
                base_channels: 2,
                depth: 1,
                deep_supervision: true,
            };
            gradient_check(spec, LossKind::SoftDice, mode);
            gradient_check(spec, LossKind::Bce, mode);
        }
    }
}

fn quick_cfg(kind: ModelKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        batch_size: 4,
        learning_rate: 1e-2,
        early_stop_patience: epochs,
        seed: 3,
        ..TrainConfig::for_kind(kind)
    }
}

#[test]
fn training_requires_samples() {
    let m = build_model(small(ModelKind::Unet, 16, 2), 0).unwrap();
    assert!(matches!(
        train(m, &[], &[], &quick_cfg(ModelKind::Unet, 2)),
        Err(Error::TooFewSamples { .. })
    ));
}

#[test]
fn training_rejects_wrong_size_samples() {
    let data = synth_set(4, 32, 1);
    let m = build_model(small(ModelKind::Unet, 16, 2), 0).unwrap();
    assert!(matches!(
        train(m, &data, &[], &quick_cfg(ModelKind::Unet, 2)),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn training_is_deterministic_and_improves() {
    let data = synth_set(12, 16, 2);
    let (tr, val) = data.split_at(8);
    let cfg = quick_cfg(ModelKind::Unet, 6);
    let a = train(
        build_model(small(ModelKind::Unet, 16, 2), 4).unwrap(),
        tr,
        val,
        &cfg,
    )
    .unwrap();
    let b = train(
        build_model(small(ModelKind::Unet, 16, 2), 4).unwrap(),
        tr,
        val,
        &cfg,
    )
    .unwrap();
    assert_eq!(a.history(), b.history());
    assert_eq!(a.model().params(), b.model().params());
    let h = a.history();
    assert!(h.epochs.len() <= cfg.max_epochs);
    assert!(h.epochs.windows(2).all(|w| w[0].epoch + 1 == w[1].epoch));
    assert!(h.epochs.last().unwrap().train_loss < h.epochs[0].train_loss);
    assert!(h.epochs.iter().all(|e| e.val_loss.is_some()));
}

#[test]
fn patience_zero_stops_at_first_non_improving_epoch() {
    let data = synth_set(8, 16, 3);
    let (tr, val) = data.split_at(4);
    let cfg = TrainConfig {
        early_stop_patience: 0,
        learning_rate: 0.05,
        ..quick_cfg(ModelKind::Classifier, 40)
    };
    let m = build_model(small(ModelKind::Classifier, 16, 2), 0).unwrap();
    let h = train(m, tr, val, &cfg).unwrap().history().clone();
    let losses: Vec<f64> = h.epochs.iter().map(|e| e.val_loss.unwrap()).collect();
    let k = losses.len();
    assert!(losses[..k - 1].windows(2).all(|w| w[1] < w[0]));
    if k < cfg.max_epochs {
        assert!(h.stopped_early);
        assert!(losses[k - 1] >= losses[k - 2]);
        assert_eq!(h.best_epoch, k - 1);
    }
}

#[test]
fn empty_validation_monitors_training_loss() {
    let data = synth_set(4, 16, 4);
    let m = build_model(small(ModelKind::Classifier, 16, 2), 0).unwrap();
    let t = train(m, &data, &[], &quick_cfg(ModelKind::Classifier, 3)).unwrap();
    assert!(t.history().monitored_train_loss);
    assert!(t.history().epochs.iter().all(|e| e.val_loss.is_none()));
}

#[test]
fn non_finite_loss_is_divergence() {
    let mut data = synth_set(4, 16, 5);
    let s = &data[0];
    let mut img = s.image().clone();
    img.set(3, 3, f32::INFINITY);
    data[0] = UsSample::new(SampleId::new(9, 9), img, s.mask().clone()).unwrap();
    let m = build_model(small(ModelKind::Unet, 16, 2), 0).unwrap();
    let r = train(m, &data, &[], &quick_cfg(ModelKind::Unet, 3));
    assert!(
        matches!(r, Err(Error::Diverged { epoch: 1 })),
        "{:?}",
        r.map(|t| t.history().clone())
    );
}

#[test]
fn invalid_train_config() {
    let mut cfg = TrainConfig::for_kind(ModelKind::Unet);
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    cfg = TrainConfig::for_kind(ModelKind::Unet);
    cfg.early_stop_patience = cfg.max_epochs + 1;
    assert!(cfg.validate().is_err());
    cfg.early_stop_patience = 0;
    assert!(cfg.validate().is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_set(6, 16, 6);
    let probe: Vec<&Image> = data.iter().map(|s| s.image()).collect();
    for kind in [ModelKind::Classifier, ModelKind::Unet, ModelKind::Mnet] {
        let m = build_model(small(kind, 16, 2), 1).unwrap();
        let t = train(m, &data[..4], &data[4..], &quick_cfg(kind, 2)).unwrap();
        let path = dir.path().join(format!("{kind}.ckpt"));
        save_checkpoint(&t, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec(), t.spec());
        assert_eq!(back.history(), t.history());
        assert_eq!(
            back.predict_proba(&probe).unwrap(),
            t.predict_proba(&probe).unwrap()
        );
    }
    let cls = dir.path().join("CLASSIFIER.ckpt");
    assert!(load_checkpoint_as(&cls, &[ModelKind::Unet, ModelKind::Mnet]).is_err());
    assert!(load_checkpoint_as(&cls, &[ModelKind::Classifier]).is_ok());
    assert!(matches!(
        load_checkpoint(dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = TrainedModel::untrained(build_model(small(ModelKind::Unet, 16, 1), 0).unwrap());
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&t, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut magic = good.clone();
    magic[0] = b'X';
    std::fs::write(&path, &magic).unwrap();
    assert!(load_checkpoint(&path)
        .unwrap_err()
        .to_string()
        .contains("magic"));

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(load_checkpoint(&path)
        .unwrap_err()
        .to_string()
        .contains("truncated"));

    let mut patched = good.clone();
    let pos = good.windows(7).position(|w| w == b"\"1.0.0\"").unwrap();
    patched[pos + 1] = b'2';
    std::fs::write(&path, &patched).unwrap();
    let err = load_checkpoint(&path).unwrap_err().to_string();
    assert!(
        err.contains("2.0.0") && err.contains(CHECKPOINT_VERSION),
        "{err}"
    );
}
