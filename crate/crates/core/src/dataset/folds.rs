use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetIndex;
use crate::error::{Error, Result};

/// How samples are assigned to folds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FoldStrategy {
    /// Shuffle individual images.
    #[default]
    ByImage,
    /// Keep all images of one subject inside the same fold (and the same
    /// side of the train/validation split).
    BySubject,
}

/// One cross-validation round. Ids are positions in the [`DatasetIndex`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub strategy: FoldStrategy,
    pub n_samples: usize,
    pub folds: Vec<Fold>,
}

/// Five folds with a 20% validation split of each training portion.
pub fn make_folds(index: &DatasetIndex, seed: u64) -> Result<FoldPlan> {
    FoldPlan::new(index, 5, 0.2, FoldStrategy::ByImage, seed)
}

impl FoldPlan {
    pub fn new(
        index: &DatasetIndex,
        n_folds: usize,
        val_fraction: f64,
        strategy: FoldStrategy,
        seed: u64,
    ) -> Result<FoldPlan> {
        let groups: Vec<Vec<usize>> = match strategy {
            FoldStrategy::ByImage => (0..index.len()).map(|i| vec![i]).collect(),
            FoldStrategy::BySubject => {
                let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
                for (i, s) in index.samples().iter().enumerate() {
                    by_subject.entry(s.id().subject).or_default().push(i);
                }
                by_subject.into_values().collect()
            }
        };
        Self::from_groups(groups, index.len(), n_folds, val_fraction, strategy, seed)
    }

    /// Plan over `n` anonymous samples, split by image.
    pub fn for_len(n: usize, n_folds: usize, val_fraction: f64, seed: u64) -> Result<FoldPlan> {
        let groups = (0..n).map(|i| vec![i]).collect();
        Self::from_groups(
            groups,
            n,
            n_folds,
            val_fraction,
            FoldStrategy::ByImage,
            seed,
        )
    }

    fn from_groups(
        mut groups: Vec<Vec<usize>>,
        n_samples: usize,
        n_folds: usize,
        val_fraction: f64,
        strategy: FoldStrategy,
        seed: u64,
    ) -> Result<FoldPlan> {
        if n_folds < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction {val_fraction} outside [0, 1)"
            )));
        }
        if groups.len() < n_folds {
            return Err(Error::TooFewSamples {
                needed: n_folds,
                got: groups.len(),
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        groups.shuffle(&mut rng);

        let test_groups: Vec<Vec<usize>> = match strategy {
            FoldStrategy::ByImage => {
                // Contiguous chunks; the first `n % k` folds take one extra.
                let base = groups.len() / n_folds;
                let extra = groups.len() % n_folds;
                let mut out = Vec::with_capacity(n_folds);
                let mut start = 0;
                for f in 0..n_folds {
                    let len = base + usize::from(f < extra);
                    out.push((start..start + len).collect());
                    start += len;
                }
                out
            }
            FoldStrategy::BySubject => {
                let mut out: Vec<Vec<usize>> = vec![Vec::new(); n_folds];
                let mut sizes = vec![0usize; n_folds];
                for (g, members) in groups.iter().enumerate() {
                    let f = (0..n_folds).min_by_key(|&f| (sizes[f], f)).unwrap_or(0);
                    sizes[f] += members.len();
                    out[f].push(g);
                }
                out
            }
        };

        let mut folds = Vec::with_capacity(n_folds);
        for (f, held_out) in test_groups.iter().enumerate() {
            let mut rest: Vec<usize> = test_groups
                .iter()
                .enumerate()
                .filter(|&(other, _)| other != f)
                .flat_map(|(_, gs)| gs.iter().copied())
                .collect();
            rest.shuffle(&mut rng);

            let rest_len: usize = rest.iter().map(|&g| groups[g].len()).sum();
            let target = (val_fraction * rest_len as f64).round() as usize;
            let mut val_groups = Vec::new();
            let mut val_len = 0usize;
            for &g in &rest {
                if val_len >= target {
                    break;
                }
                let len = groups[g].len();
                // Stop when adding this group moves us further from the target.
                if val_len > 0 && (val_len + len).abs_diff(target) > target.abs_diff(val_len) {
                    break;
                }
                val_groups.push(g);
                val_len += len;
            }
            let n_val_groups = val_groups.len();

            let expand = |gs: &[usize]| {
                let mut ids: Vec<usize> =
                    gs.iter().flat_map(|&g| groups[g].iter().copied()).collect();
                ids.sort_unstable();
                ids
            };
            folds.push(Fold {
                train: expand(&rest[n_val_groups..]),
                val: expand(&val_groups),
                test: expand(held_out),
            });
        }

        Ok(FoldPlan {
            n_folds,
            seed,
            val_fraction,
            strategy,
            n_samples,
            folds,
        })
    }

    /// Checks the partition invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        let n = self.n_samples;
        let mut test_owner = vec![usize::MAX; n];
        for (f, fold) in self.folds.iter().enumerate() {
            let mut seen = vec![false; n];
            for &i in fold.train.iter().chain(&fold.val).chain(&fold.test) {
                if i >= n {
                    return Err(format!("fold {f}: id {i} out of range"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(format!("fold {f}: id {i} appears twice"));
                }
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(format!("fold {f}: id {missing} missing"));
            }
            for &i in &fold.test {
                if test_owner[i] != usize::MAX {
                    return Err(format!("id {i} tested in folds {} and {f}", test_owner[i]));
                }
                test_owner[i] = f;
            }
        }
        if let Some(i) = test_owner.iter().position(|&o| o == usize::MAX) {
            return Err(format!("id {i} never tested"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_samples() {
        let plan = FoldPlan::for_len(100, 5, 0.2, 7).unwrap();
        plan.check().unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 20);
            assert_eq!(fold.train.len() + fold.val.len(), 80);
            assert_eq!(fold.val.len(), 16);
        }
        assert_eq!(plan, FoldPlan::for_len(100, 5, 0.2, 7).unwrap());
        assert_ne!(plan, FoldPlan::for_len(100, 5, 0.2, 8).unwrap());
    }

    #[test]
    fn remainder_goes_to_earliest_folds() {
        let plan = FoldPlan::for_len(103, 5, 0.2, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![21, 21, 21, 20, 20]);
        plan.check().unwrap();
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            FoldPlan::for_len(4, 5, 0.2, 0),
            Err(Error::TooFewSamples { needed: 5, got: 4 })
        ));
        FoldPlan::for_len(5, 5, 0.2, 0).unwrap().check().unwrap();
    }
}
