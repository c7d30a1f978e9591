//! On-disk layout of the public ultrasound nerve dataset:
//! `<subject>_<index>.tif` next to `<subject>_<index>_mask.tif`. PNG is
//! accepted as well and is what the synthetic generator writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{DynamicImage, GrayImage, ImageFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetIndex, Label, SampleId, Source, UsSample};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};

const EXTENSIONS: [&str; 3] = ["tif", "tiff", "png"];

/// One row of `manifest.csv`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: u32,
    pub image_index: u32,
    pub label: Label,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug)]
struct Entry {
    image: Option<PathBuf>,
    mask: Option<PathBuf>,
}

/// Parses `<subject>_<index>[_mask].<ext>`.
fn parse_name(path: &Path) -> Option<(SampleId, bool)> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let (stem, is_mask) = match stem.strip_suffix("_mask") {
        Some(s) => (s, true),
        None => (stem, false),
    };
    let (subject, index) = stem.split_once('_')?;
    let id = SampleId::new(subject.parse().ok()?, index.parse().ok()?);
    Some((id, is_mask))
}

/// Load every image/mask pair under `root`.
///
/// PNG data is tagged [`Source::Synthetic`], TIFF data [`Source::Real`].
pub fn load_dataset(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let dir = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut entries: BTreeMap<SampleId, Entry> = BTreeMap::new();
    let mut any_png = false;
    for item in dir {
        let path = item.map_err(|e| Error::io(root, e))?.path();
        let Some((id, is_mask)) = parse_name(&path) else {
            continue;
        };
        any_png |= path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let entry = entries.entry(id).or_insert(Entry {
            image: None,
            mask: None,
        });
        let slot = if is_mask {
            &mut entry.mask
        } else {
            &mut entry.image
        };
        if let Some(previous) = slot.replace(path.clone()) {
            return Err(Error::invalid(format!(
                "both {} and {} claim sample {id}",
                previous.display(),
                path.display()
            )));
        }
    }

    let pairs: Vec<(SampleId, PathBuf, PathBuf)> = entries
        .into_iter()
        .filter_map(|(id, e)| match (e.image, e.mask) {
            (Some(img), Some(mask)) => Some(Ok((id, img, mask))),
            (Some(img), None) => Some(Err(Error::MissingMask { image: img })),
            (None, Some(mask)) => {
                log::warn!("ignoring mask without image: {}", mask.display());
                None
            }
            (None, None) => None,
        })
        .collect::<Result<_>>()?;

    let samples = pairs
        .par_iter()
        .map(|(id, img_path, mask_path)| {
            let image = read_image(img_path)?;
            let mask = read_mask(mask_path)?;
            if image.dims() != mask.dims() {
                return Err(Error::DimensionMismatch {
                    image: img_path.clone(),
                    image_dims: image.dims(),
                    mask_dims: mask.dims(),
                });
            }
            UsSample::new(*id, image, mask).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;

    let source = if any_png {
        Source::Synthetic
    } else {
        Source::Real
    };
    DatasetIndex::new(samples, source)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn read_image(path: &Path) -> Result<Image> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        other => other
            .into_luma8()
            .into_raw()
            .into_iter()
            .map(f32::from)
            .collect(),
    };
    Grid::from_vec(h, w, data)
}

/// Masks are stored as {0, 255} (public dataset) or {0, 1}.
fn read_mask(path: &Path) -> Result<Mask> {
    let img = decode(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = Vec::with_capacity(raw.len());
    for (i, v) in raw.into_iter().enumerate() {
        data.push(match v {
            0 => 0,
            1 | 255 => 1,
            other => {
                return Err(Error::NonBinaryMask {
                    row: i / w,
                    col: i % w,
                    value: f64::from(other),
                })
            }
        });
    }
    Grid::from_vec(h, w, data)
}

fn to_gray(grid: &Grid<f32>) -> GrayImage {
    let raw = grid
        .as_slice()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::from_raw(grid.cols() as u32, grid.rows() as u32, raw).expect("buffer matches dims")
}

/// Write PNG image/mask pairs (masks as 0/255) plus `manifest.csv`.
pub fn write_dataset(index: &DatasetIndex, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    index.samples().par_iter().try_for_each(|s| {
        let img_path = dir.join(format!("{}.png", s.id()));
        to_gray(s.image())
            .save_with_format(&img_path, ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: img_path.clone(),
                source,
            })?;
        let mask_path = dir.join(format!("{}_mask.png", s.id()));
        let mask = GrayImage::from_raw(
            s.mask().cols() as u32,
            s.mask().rows() as u32,
            s.mask().as_slice().iter().map(|&v| v * 255).collect(),
        )
        .expect("buffer matches dims");
        mask.save_with_format(&mask_path, ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: mask_path.clone(),
                source,
            })
    })?;
    write_manifest(
        index.samples().iter().map(|s| s.as_ref()),
        dir.join("manifest.csv"),
    )
}

/// CSV with columns `subject_id,image_index,label,rows,cols`.
pub fn write_manifest<'a>(
    samples: impl IntoIterator<Item = &'a UsSample>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(ManifestRow {
            subject_id: s.id().subject,
            image_index: s.id().index,
            label: s.label(),
            rows: s.dims().0,
            cols: s.dims().1,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, ClassCounts};

    fn save_gray(path: &Path, rows: u32, cols: u32, f: impl Fn(u32, u32) -> u8) {
        GrayImage::from_fn(cols, rows, |x, y| image::Luma([f(y, x)]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn names_parse() {
        assert_eq!(
            parse_name(Path::new("12_7.tif")),
            Some((SampleId::new(12, 7), false))
        );
        assert_eq!(
            parse_name(Path::new("12_7_mask.TIF")),
            Some((SampleId::new(12, 7), true))
        );
        assert_eq!(parse_name(Path::new("12_7.jpg")), None);
        assert_eq!(parse_name(Path::new("notes_x.tif")), None);
    }

    #[test]
    fn single_empty_mask_tiff() {
        let dir = tempfile::tempdir().unwrap();
        save_gray(&dir.path().join("1_1.tif"), 42, 58, |r, c| {
            ((r + c) % 200) as u8
        });
        save_gray(&dir.path().join("1_1_mask.tif"), 42, 58, |_, _| 0);
        let idx = load_dataset(dir.path()).unwrap();
        assert_eq!(idx.class_counts(), ClassCounts { bp: 0, no_bp: 1 });
        assert_eq!(idx.source(), Source::Real);
        assert_eq!(idx.get(0).dims(), (42, 58));
        assert_eq!(idx.get(0).image().get(3, 4), 7.0);
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = synth_generate(6, 4.0 / 6.0, (20, 24), 3).unwrap();
        write_dataset(&idx, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.class_counts(), ClassCounts { bp: 4, no_bp: 2 });
        for s in back.samples() {
            let orig = idx.get(idx.position(s.id()).unwrap());
            assert_eq!(orig, s.as_ref());
        }
        let rows = read_manifest(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.label == Label::Bp).count(), 4);
    }

    #[test]
    fn missing_mask_names_the_image() {
        let dir = tempfile::tempdir().unwrap();
        save_gray(&dir.path().join("3_2.png"), 8, 8, |_, _| 5);
        match load_dataset(dir.path()) {
            Err(Error::MissingMask { image }) => assert!(image.ends_with("3_2.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_gray(&dir.path().join("3_2.png"), 8, 8, |_, _| 5);
        save_gray(&dir.path().join("3_2_mask.png"), 8, 9, |_, _| 0);
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_binary_mask_file() {
        let dir = tempfile::tempdir().unwrap();
        save_gray(&dir.path().join("1_1.png"), 4, 4, |_, _| 5);
        save_gray(&dir.path().join("1_1_mask.png"), 4, 4, |r, _| {
            if r == 2 {
                128
            } else {
                0
            }
        });
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::NonBinaryMask { row: 2, .. })
        ));
    }
}
