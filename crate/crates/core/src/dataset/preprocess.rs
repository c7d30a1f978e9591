use serde::{Deserialize, Serialize};

use super::UsSample;
use crate::error::{Error, Result};
use crate::grid::{Grid, Image};

/// Target geometry and intensity normalization for one model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub rows: usize,
    pub cols: usize,
    pub normalize: bool,
}

impl PreprocessSpec {
    /// 128x128 standardized input of the classifier CNN.
    pub const CLASSIFIER: PreprocessSpec = PreprocessSpec {
        rows: 128,
        cols: 128,
        normalize: true,
    };

    /// 96x96 standardized input of the segmentation networks.
    pub const SEGMENTER: PreprocessSpec = PreprocessSpec {
        rows: 96,
        cols: 96,
        normalize: true,
    };

    pub fn new(rows: usize, cols: usize, normalize: bool) -> Self {
        PreprocessSpec {
            rows,
            cols,
            normalize,
        }
    }

    pub fn validate_for(&self, source: (usize, usize)) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("target size must be positive"));
        }
        if self.rows > source.0 || self.cols > source.1 {
            return Err(Error::invalid(format!(
                "target size {}x{} exceeds source {}x{}",
                self.rows, self.cols, source.0, source.1
            )));
        }
        Ok(())
    }
}

/// A resized, optionally standardized sample.
///
/// `degenerate` is set when the resized image had zero variance; its
/// standardized image is then all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub sample: UsSample,
    pub degenerate: bool,
}

/// Resize the image bilinearly and the mask by nearest neighbour, then
/// standardize the image to zero mean and unit population std.
pub fn preprocess(sample: &UsSample, spec: &PreprocessSpec) -> Result<Prepared> {
    spec.validate_for(sample.dims())?;
    let resized = resize_bilinear(sample.image(), spec.rows, spec.cols);
    let mask = resize_nearest(sample.mask(), spec.rows, spec.cols);
    let (image, degenerate) = if spec.normalize {
        standardize(&resized)
    } else {
        (resized, false)
    };
    Ok(Prepared {
        sample: UsSample::new(sample.id(), image, mask)?,
        degenerate,
    })
}

/// Source coordinate of output position `i` under corner-aligned scaling:
/// the first and last samples of both grids coincide.
#[inline]
fn source_coord(i: usize, out: usize, input: usize) -> f64 {
    if out <= 1 {
        0.0
    } else {
        i as f64 * (input - 1) as f64 / (out - 1) as f64
    }
}

pub fn resize_bilinear(image: &Image, rows: usize, cols: usize) -> Image {
    let (in_r, in_c) = image.dims();
    if (in_r, in_c) == (rows, cols) {
        return image.clone();
    }
    let col_taps: Vec<(usize, usize, f64)> = (0..cols)
        .map(|c| {
            let x = source_coord(c, cols, in_c);
            let x0 = (x.floor() as usize).min(in_c - 1);
            let x1 = (x0 + 1).min(in_c - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect();
    Grid::from_fn(rows, cols, |r, c| {
        let y = source_coord(r, rows, in_r);
        let y0 = (y.floor() as usize).min(in_r - 1);
        let y1 = (y0 + 1).min(in_r - 1);
        let fy = y - y0 as f64;
        let (x0, x1, fx) = col_taps[c];
        let top = f64::from(image.get(y0, x0)) * (1.0 - fx) + f64::from(image.get(y0, x1)) * fx;
        let bottom = f64::from(image.get(y1, x0)) * (1.0 - fx) + f64::from(image.get(y1, x1)) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

pub fn resize_nearest<T: Copy>(grid: &Grid<T>, rows: usize, cols: usize) -> Grid<T> {
    let (in_r, in_c) = grid.dims();
    if (in_r, in_c) == (rows, cols) {
        return grid.clone();
    }
    Grid::from_fn(rows, cols, |r, c| {
        let y = (source_coord(r, rows, in_r).round() as usize).min(in_r - 1);
        let x = (source_coord(c, cols, in_c).round() as usize).min(in_c - 1);
        grid.get(y, x)
    })
}

/// Per-image standardization with the population standard deviation.
/// Returns the all-zero grid and `true` for a constant image.
pub fn standardize(image: &Image) -> (Image, bool) {
    let mean = image.mean();
    let std = image.std();
    if std == 0.0 || !std.is_finite() {
        return (Image::new(image.rows(), image.cols()), true);
    }
    (image.map(|v| ((f64::from(v) - mean) / std) as f32), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, SampleId};
    use crate::grid::Mask;

    fn checkerboard(n: usize, lo: f32, hi: f32) -> Image {
        Grid::from_fn(n, n, |r, c| if (r + c) % 2 == 0 { lo } else { hi })
    }

    #[test]
    fn checkerboard_downsize_standardizes_to_unit_values() {
        // Corner-aligned bilinear 4 -> 2 samples source pixels (0,0), (0,3),
        // (3,0), (3,3) exactly: {0, 10, 10, 0}, which standardize to -1/+1.
        let img = checkerboard(4, 0.0, 10.0);
        let small = resize_bilinear(&img, 2, 2);
        assert_eq!(small.as_slice(), &[0.0, 10.0, 10.0, 0.0]);
        let (z, degenerate) = standardize(&small);
        assert!(!degenerate);
        assert_eq!(z.as_slice(), &[-1.0, 1.0, 1.0, -1.0]);
        assert!(z.mean().abs() < 1e-12);
        assert!((z.std() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_is_flagged() {
        let sample = UsSample::new(
            SampleId::new(1, 1),
            Image::filled(40, 58, 37.0),
            Mask::new(40, 58),
        )
        .unwrap();
        let out = preprocess(&sample, &PreprocessSpec::new(16, 16, true)).unwrap();
        assert!(out.degenerate);
        assert!(out.sample.image().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_size_frame_to_classifier_input() {
        let img = Grid::from_fn(420, 580, |r, c| ((r * 31 + c * 17) % 251) as f32);
        let mut mask = Mask::new(420, 580);
        for r in 200..260 {
            for c in 300..380 {
                mask.set(r, c, 1);
            }
        }
        let sample = UsSample::new(SampleId::new(3, 9), img, mask).unwrap();
        let out = preprocess(&sample, &PreprocessSpec::CLASSIFIER).unwrap();
        assert_eq!(out.sample.dims(), (128, 128));
        assert!(out.sample.image().mean().abs() < 1e-6);
        assert!((out.sample.image().std() - 1.0).abs() < 1e-6);
        out.sample.mask().check_binary().unwrap();
        assert_eq!(out.sample.label(), Label::Bp);
    }

    #[test]
    fn rejects_upsampling_and_zero_sizes() {
        let s = UsSample::new(SampleId::new(1, 1), Image::new(8, 8), Mask::new(8, 8)).unwrap();
        assert!(preprocess(&s, &PreprocessSpec::new(16, 8, true)).is_err());
        assert!(preprocess(&s, &PreprocessSpec::new(0, 8, true)).is_err());
    }

    #[test]
    fn nearest_keeps_mask_binary() {
        let m = Grid::from_fn(9, 9, |r, c| u8::from(r > 3 && c < 5));
        let small = resize_nearest(&m, 4, 4);
        small.check_binary().unwrap();
        assert!(small.count_ones() > 0);
    }
}
