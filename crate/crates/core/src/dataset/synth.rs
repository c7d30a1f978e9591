//! Desk-scale stand-in for the real ultrasound corpus: speckled background
//! tissue, with a bright elliptical nerve region on positive frames.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetIndex, Label, SampleId, Source, UsSample};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};

const IMAGES_PER_SUBJECT: usize = 120;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub bp_fraction: f64,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n: usize, bp_fraction: f64, size: (usize, usize), seed: u64) -> Self {
        SynthConfig {
            n,
            bp_fraction,
            rows: size.0,
            cols: size.1,
            seed,
        }
    }

    /// round(n * bp_fraction), halves rounded up.
    pub fn bp_count(&self) -> usize {
        (self.n as f64 * self.bp_fraction + 0.5).floor() as usize
    }
}

/// Generate `n` frames, `round(n * bp_fraction)` of them with a nerve region.
pub fn synth_generate(
    n: usize,
    bp_fraction: f64,
    size: (usize, usize),
    seed: u64,
) -> Result<DatasetIndex> {
    generate(&SynthConfig::new(n, bp_fraction, size, seed))
}

fn generate(cfg: &SynthConfig) -> Result<DatasetIndex> {
    if cfg.n == 0 {
        return Err(Error::invalid("synthetic dataset size must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.bp_fraction) {
        return Err(Error::invalid(format!(
            "bp_fraction {} outside [0, 1]",
            cfg.bp_fraction
        )));
    }
    if cfg.rows < 8 || cfg.cols < 8 {
        return Err(Error::invalid("synthetic frames must be at least 8x8"));
    }

    // A stream of its own, so a fold shuffle seeded with the same value does
    // not line up with the class assignment.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut rng);
    let mut positive = vec![false; cfg.n];
    for &i in &order[..cfg.bp_count()] {
        positive[i] = true;
    }

    let samples = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let id = SampleId::new(
                (i / IMAGES_PER_SUBJECT) as u32 + 1,
                (i % IMAGES_PER_SUBJECT) as u32 + 1,
            );
            let (image, mask) = frame(&mut rng, cfg.rows, cfg.cols, positive[i]);
            UsSample::new(id, image, mask).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetIndex::new(samples, Source::Synthetic)
}

fn frame(rng: &mut ChaCha8Rng, rows: usize, cols: usize, positive: bool) -> (Image, Mask) {
    // Horizontal tissue layers with a gentle wave.
    let n_layers = rng.random_range(2..=4);
    let layers: Vec<(f64, f64, f64, f64)> = (0..n_layers)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),   // depth
                rng.random_range(0.03..0.10), // thickness
                rng.random_range(15.0..45.0), // brightness
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let base = rng.random_range(45.0..65.0);

    let region = positive.then(|| {
        let cy = rng.random_range(0.3..0.7) * rows as f64;
        let cx = rng.random_range(0.3..0.7) * cols as f64;
        let ay = rng.random_range(0.10..0.18) * rows as f64;
        let ax = rng.random_range(0.12..0.22) * cols as f64;
        let theta: f64 = rng.random_range(-0.5..0.5);
        (cy, cx, ay, ax, theta.sin_cos())
    });
    let inside = |r: usize, c: usize| -> bool {
        match region {
            None => false,
            Some((cy, cx, ay, ax, (sin, cos))) => {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
            }
        }
    };

    let mask = Grid::from_fn(rows, cols, |r, c| u8::from(inside(r, c)));
    let mut image = Image::new(rows, cols);
    for r in 0..rows {
        let y = r as f64 / rows as f64;
        for c in 0..cols {
            let x = c as f64 / cols as f64;
            let mut tissue = base;
            for &(depth, thick, bright, phase) in &layers {
                let centre = depth + 0.03 * (x * 6.0 + phase).sin();
                let d = (y - centre) / thick;
                tissue += bright * (-d * d).exp();
            }
            if mask.get(r, c) == 1 {
                tissue *= 2.2;
            }
            // Rayleigh speckle with unit mean.
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let speckle = (-2.0 * u.ln()).sqrt() / (std::f64::consts::PI / 2.0).sqrt();
            image.set(r, c, (tissue * speckle).round().clamp(0.0, 255.0) as f32);
        }
    }
    (image, mask)
}

/// A planted near-duplicate: `duplicate` copies the image of the BP sample
/// `original` with light noise but carries an empty mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlantedPair {
    pub original: SampleId,
    pub duplicate: SampleId,
}

/// Append `n_pairs` contradictory near-duplicates of distinct BP samples.
///
/// Each duplicate lives in the same subject as its original and gets additive
/// Gaussian noise with standard deviation `noise_fraction` times the
/// original image's standard deviation.
pub fn plant_contradictions(
    index: &DatasetIndex,
    n_pairs: usize,
    noise_fraction: f64,
    seed: u64,
) -> Result<(DatasetIndex, Vec<PlantedPair>)> {
    let mut candidates: Vec<usize> = (0..index.len())
        .filter(|&i| index.get(i).label() == Label::Bp)
        .collect();
    if candidates.len() < n_pairs {
        return Err(Error::TooFewSamples {
            needed: n_pairs,
            got: candidates.len(),
        });
    }
    if !(noise_fraction >= 0.0 && noise_fraction.is_finite()) {
        return Err(Error::invalid(
            "noise fraction must be finite and non-negative",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let mut next_index = std::collections::HashMap::new();
    for s in index.samples() {
        let e = next_index.entry(s.id().subject).or_insert(0u32);
        *e = (*e).max(s.id().index);
    }

    let mut samples: Vec<Arc<UsSample>> = index.samples().to_vec();
    let mut planted = Vec::with_capacity(n_pairs);
    for &i in &candidates[..n_pairs] {
        let original = index.get(i);
        let slot = next_index
            .get_mut(&original.id().subject)
            .expect("subject seen");
        *slot += 1;
        let id = SampleId::new(original.id().subject, *slot);
        let sigma = noise_fraction * original.image().std();
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::invalid(e.to_string()))?;
        let image = original.image().map(|v| {
            (f64::from(v) + noise.sample(&mut rng))
                .round()
                .clamp(0.0, 255.0) as f32
        });
        let (rows, cols) = original.dims();
        samples.push(Arc::new(UsSample::new(id, image, Mask::new(rows, cols))?));
        planted.push(PlantedPair {
            original: original.id(),
            duplicate: id,
        });
    }
    Ok((DatasetIndex::new(samples, index.source())?, planted))
}
