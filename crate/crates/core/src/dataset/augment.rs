use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::UsSample;
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};

/// Parameters of one affine augmentation about the image centre.
///
/// The forward map is `rotate(rotation) * shear(shear) * scale(scale) *
/// reflect`, where `reflect_x` mirrors columns and `reflect_y` mirrors rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub scale: f64,
    /// Shear angle in radians.
    pub shear: f64,
    /// Rotation angle in radians.
    pub rotation: f64,
    pub reflect_x: bool,
    pub reflect_y: bool,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        scale: 1.0,
        shear: 0.0,
        rotation: 0.0,
        reflect_x: false,
        reflect_y: false,
    };

    fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.shear.is_finite() && self.rotation.is_finite()) {
            return Err(Error::invalid("affine parameters must be finite"));
        }
        if self.scale <= 0.0 {
            return Err(Error::invalid("affine scale must be positive"));
        }
        Ok(())
    }

    /// Forward 2x2 matrix acting on (x, y) = (col, row) offsets.
    fn matrix(&self) -> [[f64; 2]; 2] {
        let fx = if self.reflect_x { -1.0 } else { 1.0 };
        let fy = if self.reflect_y { -1.0 } else { 1.0 };
        let (s, k) = (self.scale, self.shear.tan());
        // shear * scale * reflect
        let m = [[s * fx, k * s * fy], [0.0, s * fy]];
        if self.rotation == 0.0 {
            return m;
        }
        let (sin, cos) = self.rotation.sin_cos();
        [
            [cos * m[0][0] - sin * m[1][0], cos * m[0][1] - sin * m[1][1]],
            [sin * m[0][0] + cos * m[1][0], sin * m[0][1] + cos * m[1][1]],
        ]
    }

    fn inverse(&self) -> [[f64; 2]; 2] {
        let [[a, b], [c, d]] = self.matrix();
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }
}

/// Sampling ranges for random augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub scale: (f64, f64),
    pub shear: (f64, f64),
    pub rotation_degrees: (f64, f64),
    pub reflect_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale: (0.9, 1.1),
            shear: (-0.1, 0.1),
            rotation_degrees: (-10.0, 10.0),
            reflect_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Degenerate ranges that always produce [`AffineParams::IDENTITY`].
    pub fn identity() -> Self {
        AugmentConfig {
            scale: (1.0, 1.0),
            shear: (0.0, 0.0),
            rotation_degrees: (0.0, 0.0),
            reflect_probability: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("scale", self.scale),
            ("shear", self.shear),
            ("rotation", self.rotation_degrees),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::invalid(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::invalid("scale range must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reflect_probability) {
            return Err(Error::invalid("reflect probability outside [0, 1]"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AffineParams {
        fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        }
        AffineParams {
            scale: uniform(rng, self.scale),
            shear: uniform(rng, self.shear),
            rotation: uniform(rng, self.rotation_degrees).to_radians(),
            reflect_x: rng.random_bool(self.reflect_probability),
            reflect_y: rng.random_bool(self.reflect_probability),
        }
    }
}

/// Maps every output pixel back into the source grid: `src = c + A^-1 (p - c)`.
fn inverse_map(
    params: &AffineParams,
    rows: usize,
    cols: usize,
) -> impl Fn(usize, usize) -> (f64, f64) {
    let inv = params.inverse();
    let cx = (cols as f64 - 1.0) / 2.0;
    let cy = (rows as f64 - 1.0) / 2.0;
    move |r, c| {
        let dx = c as f64 - cx;
        let dy = r as f64 - cy;
        (
            cx + inv[0][0] * dx + inv[0][1] * dy,
            cy + inv[1][0] * dx + inv[1][1] * dy,
        )
    }
}

/// Bilinear warp; samples outside the source read as zero.
pub(crate) fn warp_image(image: &Image, params: &AffineParams) -> Image {
    let (rows, cols) = image.dims();
    let map = inverse_map(params, rows, cols);
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= rows as i64 || x >= cols as i64 {
            0.0
        } else {
            f64::from(image.get(y as usize, x as usize))
        }
    };
    Grid::from_fn(rows, cols, |r, c| {
        let (x, y) = map(r, c);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let mut v = at(y0, x0) * (1.0 - fx) * (1.0 - fy);
        if fx != 0.0 {
            v += at(y0, x0 + 1) * fx * (1.0 - fy);
        }
        if fy != 0.0 {
            v += at(y0 + 1, x0) * (1.0 - fx) * fy;
            if fx != 0.0 {
                v += at(y0 + 1, x0 + 1) * fx * fy;
            }
        }
        v as f32
    })
}

/// Nearest-neighbour warp, so the result stays binary.
pub(crate) fn warp_mask(mask: &Mask, params: &AffineParams) -> Mask {
    let (rows, cols) = mask.dims();
    let map = inverse_map(params, rows, cols);
    Grid::from_fn(rows, cols, |r, c| {
        let (x, y) = map(r, c);
        let (x, y) = (x.round(), y.round());
        if x < 0.0 || y < 0.0 || x >= cols as f64 || y >= rows as f64 {
            0
        } else {
            mask.get(y as usize, x as usize)
        }
    })
}

/// Transform image and mask with the same affine map. The label is
/// re-derived from the transformed mask.
pub fn apply_affine(sample: &UsSample, params: &AffineParams) -> Result<UsSample> {
    params.validate()?;
    UsSample::new(
        sample.id(),
        warp_image(sample.image(), params),
        warp_mask(sample.mask(), params),
    )
}

/// Returns the originals followed by `n_extra` randomly transformed copies
/// of randomly chosen originals.
pub fn augment_training_set(
    train: &[UsSample],
    n_extra: usize,
    seed: u64,
    config: &AugmentConfig,
) -> Result<Vec<UsSample>> {
    if train.is_empty() {
        return Err(Error::invalid("cannot augment an empty training set"));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, AffineParams)> = (0..n_extra)
        .map(|_| {
            let src = rng.random_range(0..train.len());
            (src, config.sample(&mut rng))
        })
        .collect();
    let extra = draws
        .par_iter()
        .map(|(src, params)| apply_affine(&train[*src], params))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(train.len() + n_extra);
    out.extend_from_slice(train);
    out.extend(extra);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, SampleId};

    fn sample_with_disc(rows: usize, cols: usize, radius: f64) -> UsSample {
        let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let mask = Grid::from_fn(rows, cols, |r, c| {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            u8::from(d <= radius)
        });
        let image = Grid::from_fn(rows, cols, |r, c| {
            (r * 7 + c * 3) as f32 + 40.0 * f32::from(mask.get(r, c))
        });
        UsSample::new(SampleId::new(2, 5), image, mask).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let s = sample_with_disc(31, 40, 8.0);
        assert_eq!(apply_affine(&s, &AffineParams::IDENTITY).unwrap(), s);
    }

    #[test]
    fn reflection_is_an_involution() {
        let s = sample_with_disc(30, 41, 6.0);
        for params in [
            AffineParams {
                reflect_x: true,
                ..AffineParams::IDENTITY
            },
            AffineParams {
                reflect_y: true,
                ..AffineParams::IDENTITY
            },
        ] {
            let once = apply_affine(&s, &params).unwrap();
            assert_ne!(once.image(), s.image());
            assert_eq!(apply_affine(&once, &params).unwrap(), s);
        }
    }

    #[test]
    fn half_turn_preserves_symmetric_mask_area() {
        let s = sample_with_disc(64, 64, 14.0);
        let params = AffineParams {
            rotation: std::f64::consts::PI,
            ..AffineParams::IDENTITY
        };
        let rotated = apply_affine(&s, &params).unwrap();
        let before = s.mask().count_ones() as f64;
        let after = rotated.mask().count_ones() as f64;
        assert!(
            (after - before).abs() / before <= 0.02,
            "{before} -> {after}"
        );
    }

    #[test]
    fn augment_counts_and_identity_copies() {
        let train: Vec<UsSample> = (1..=4)
            .map(|i| {
                let s = sample_with_disc(16, 16, f64::from(i));
                UsSample::new(SampleId::new(1, i), s.image().clone(), s.mask().clone()).unwrap()
            })
            .collect();
        let out = augment_training_set(&train, 10, 3, &AugmentConfig::identity()).unwrap();
        assert_eq!(out.len(), 14);
        for s in &out[4..] {
            let src = train.iter().find(|t| t.id() == s.id()).unwrap();
            assert_eq!(s, src);
        }
        assert_eq!(
            augment_training_set(&train, 0, 3, &AugmentConfig::default()).unwrap(),
            train
        );
        assert!(augment_training_set(&[], 1, 3, &AugmentConfig::default()).is_err());
    }

    #[test]
    fn label_follows_transformed_mask() {
        let mut mask = Mask::new(20, 20);
        mask.set(0, 0, 1);
        let s = UsSample::new(SampleId::new(1, 1), Image::new(20, 20), mask).unwrap();
        assert_eq!(s.label(), Label::Bp);
        // Zooming in by 2 keeps the central region; the corner leaves the frame.
        let params = AffineParams {
            scale: 2.0,
            ..AffineParams::IDENTITY
        };
        let out = apply_affine(&s, &params).unwrap();
        assert_eq!(out.label(), Label::NoBp);
    }

    #[test]
    fn rejects_non_finite_params() {
        let s = sample_with_disc(8, 8, 2.0);
        let params = AffineParams {
            rotation: f64::NAN,
            ..AffineParams::IDENTITY
        };
        assert!(apply_affine(&s, &params).is_err());
    }
}
