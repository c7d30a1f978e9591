//! Detection of near-identical frames with contradictory annotations and
//! construction of the filtered dataset.
//!
//! Similarity is the zero-normalized cross-correlation (ZNCC) of frames
//! downsampled to a common grid, clamped to [0, 1].

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{resize_bilinear, ClassCounts, DatasetIndex, Label, SampleId};
use crate::error::{Error, Result};
use crate::grid::{check_same_dims, Image};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SearchScope {
    /// Compare frames of the same subject only.
    #[default]
    SameSubject,
    /// Compare every pair in the dataset.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub downsample: (usize, usize),
    /// Pairs below this similarity are not reported.
    pub floor: f64,
    pub scope: SearchScope,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            downsample: (64, 64),
            floor: 0.90,
            scope: SearchScope::SameSubject,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub id_a: SampleId,
    pub id_b: SampleId,
    pub similarity: f64,
    /// One member is BP-annotated, the other is not.
    pub contradictory: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterPolicy {
    /// Drop the unannotated member of each contradictory pair.
    #[default]
    RemoveNoBpMember,
    /// Drop both members.
    RemoveBoth,
}

/// Contradictory pairs found at a given threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contradictions {
    pub threshold: f64,
    pub pairs: Vec<SimilarityPair>,
}

impl Contradictions {
    pub fn none(threshold: f64) -> Self {
        Contradictions {
            threshold,
            pairs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub policy: FilterPolicy,
    pub removed_ids: BTreeSet<SampleId>,
    pub counts_before: ClassCounts,
    pub counts_after: ClassCounts,
    pub pairs: Vec<SimilarityPair>,
}

/// Centered intensity vector of one downsampled frame.
struct Signature {
    raw: Vec<f64>,
    centered: Vec<f64>,
    sum_sq: f64,
}

impl Signature {
    fn new(image: &Image) -> Self {
        let raw: Vec<f64> = image.as_slice().iter().map(|&v| f64::from(v)).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let sum_sq = centered.iter().map(|v| v * v).sum();
        Signature {
            raw,
            centered,
            sum_sq,
        }
    }

    fn similarity(&self, other: &Signature) -> f64 {
        let denom = (self.sum_sq * other.sum_sq).sqrt();
        if denom == 0.0 {
            return if self.raw == other.raw { 1.0 } else { 0.0 };
        }
        let num: f64 = self
            .centered
            .iter()
            .zip(&other.centered)
            .map(|(a, b)| a * b)
            .sum();
        (num / denom).clamp(0.0, 1.0)
    }
}

/// ZNCC of two equally sized images, clamped to [0, 1]. Two constant images
/// score 1 when equal and 0 otherwise.
pub fn zncc(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a, b)?;
    Ok(Signature::new(a).similarity(&Signature::new(b)))
}

/// All pairs (self-pairs excluded) with similarity at or above the floor,
/// sorted by `(id_a, id_b)` with `id_a < id_b`.
pub fn pairwise_similarity(
    index: &DatasetIndex,
    config: &SimilarityConfig,
) -> Result<Vec<SimilarityPair>> {
    if index.is_empty() {
        return Err(Error::invalid("similarity search on an empty dataset"));
    }
    let (rows, cols) = config.downsample;
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(
            "similarity downsample size must be positive",
        ));
    }
    let signatures: Vec<Signature> = index
        .samples()
        .par_iter()
        .map(|s| Signature::new(&resize_bilinear(s.image(), rows, cols)))
        .collect();

    let groups: Vec<Vec<usize>> = match config.scope {
        SearchScope::Global => vec![(0..index.len()).collect()],
        SearchScope::SameSubject => {
            let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, s) in index.samples().iter().enumerate() {
                by_subject.entry(s.id().subject).or_default().push(i);
            }
            by_subject.into_values().collect()
        }
    };
    let tasks: Vec<(usize, &[usize])> = groups
        .iter()
        .flat_map(|g| (0..g.len()).map(move |k| (g[k], &g[k + 1..])))
        .collect();

    let mut pairs: Vec<SimilarityPair> = tasks
        .par_iter()
        .flat_map_iter(|&(i, rest)| {
            let signatures = &signatures;
            rest.iter().filter_map(move |&j| {
                let similarity = signatures[i].similarity(&signatures[j]);
                (similarity >= config.floor).then(|| {
                    let (a, b) = (index.get(i), index.get(j));
                    let (id_a, id_b) = if a.id() < b.id() {
                        (a.id(), b.id())
                    } else {
                        (b.id(), a.id())
                    };
                    SimilarityPair {
                        id_a,
                        id_b,
                        similarity,
                        contradictory: a.label() != b.label(),
                    }
                })
            })
        })
        .collect();
    pairs.sort_by_key(|p| (p.id_a, p.id_b));
    Ok(pairs)
}

/// Pairs at or above `threshold` whose members disagree on the label.
///
/// Thresholds above 1 are accepted and select nothing.
pub fn find_contradictions(
    pairs: &[SimilarityPair],
    index: &DatasetIndex,
    threshold: f64,
) -> Result<Contradictions> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::invalid(format!(
            "contradiction threshold {threshold} must be positive"
        )));
    }
    let label_of = |id: SampleId| -> Result<Label> {
        index
            .position(id)
            .map(|i| index.get(i).label())
            .ok_or_else(|| Error::invalid(format!("pair member {id} not in dataset")))
    };
    let mut out = Vec::new();
    for p in pairs.iter().filter(|p| p.similarity >= threshold) {
        if label_of(p.id_a)? != label_of(p.id_b)? {
            out.push(SimilarityPair {
                contradictory: true,
                ..*p
            });
        }
    }
    Ok(Contradictions {
        threshold,
        pairs: out,
    })
}

pub fn filter_dataset(
    index: &DatasetIndex,
    contradictions: &Contradictions,
    policy: FilterPolicy,
) -> Result<(DatasetIndex, FilterReport)> {
    let mut removed = BTreeSet::new();
    for p in &contradictions.pairs {
        let members = [p.id_a, p.id_b];
        for id in members {
            let i = index
                .position(id)
                .ok_or_else(|| Error::invalid(format!("pair member {id} not in dataset")))?;
            let remove = match policy {
                FilterPolicy::RemoveBoth => true,
                FilterPolicy::RemoveNoBpMember => index.get(i).label() == Label::NoBp,
            };
            if remove {
                removed.insert(id);
            }
        }
    }
    let filtered = index.retain(|s| !removed.contains(&s.id()));
    let report = FilterReport {
        threshold: contradictions.threshold,
        policy,
        removed_ids: removed,
        counts_before: index.class_counts(),
        counts_after: filtered.class_counts(),
        pairs: contradictions.pairs.clone(),
    };
    Ok((filtered, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub similarity: SimilarityConfig,
    pub threshold: f64,
    pub policy: FilterPolicy,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            similarity: SimilarityConfig::default(),
            threshold: 0.95,
            policy: FilterPolicy::RemoveNoBpMember,
        }
    }
}

/// Similarity search, contradiction detection and filtering in one call.
pub fn curate(
    index: &DatasetIndex,
    config: &CurationConfig,
) -> Result<(DatasetIndex, FilterReport)> {
    let pairs = pairwise_similarity(index, &config.similarity)?;
    let contradictions = find_contradictions(&pairs, index, config.threshold)?;
    filter_dataset(index, &contradictions, config.policy)
}

impl FilterReport {
    /// Class counts before and after filtering, as
    /// `,Non-filtered,Filtered` / `BP,..` / `No-BP,..`.
    pub fn write_table_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["", "Non-filtered", "Filtered"])?;
        w.write_record([
            "BP".to_string(),
            self.counts_before.bp.to_string(),
            self.counts_after.bp.to_string(),
        ])?;
        w.write_record([
            "No-BP".to_string(),
            self.counts_before.no_bp.to_string(),
            self.counts_after.no_bp.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<table>", e))
    }

    pub fn table_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_table_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join("table1.csv"), self.table_csv_string())
            .map_err(|e| Error::io(dir.join("table1.csv"), e))?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("removed_pairs.json"), json + "\n")
            .map_err(|e| Error::io(dir.join("removed_pairs.json"), e))
    }
}
