use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::grid::{check_same_dims, Mask};

/// Binary confusion tallies with BP as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// A metric value; `degenerate` marks values fixed by convention where the
/// defining ratio is 0/0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

pub fn confusion(predicted: &[Label], truth: &[Label]) -> Result<ConfusionCounts> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (Label::Bp, Label::Bp) => c.tp += 1,
            (Label::Bp, Label::NoBp) => c.fp += 1,
            (Label::NoBp, Label::NoBp) => c.tn += 1,
            (Label::NoBp, Label::Bp) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// (TP + TN) / (TP + FP + TN + FN).
pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("accuracy of zero samples"));
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// 2TP / (2TP + FP + FN); 1.0 flagged degenerate when there are no positives
/// in either predictions or truth.
pub fn f1(c: &ConfusionCounts) -> Metric {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Metric {
            value: 1.0,
            degenerate: true,
        };
    }
    Metric {
        value: (2 * c.tp) as f64 / denom as f64,
        degenerate: false,
    }
}

/// Per-pixel confusion of a predicted mask against ground truth.
pub fn pixel_confusion(predicted: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    check_same_dims(truth, predicted)?;
    predicted.check_binary()?;
    truth.check_binary()?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.as_slice().iter().zip(truth.as_slice()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Dice similarity 2|M ∩ GT| / (|M| + |GT|). Two empty masks agree
/// perfectly: 1.0, flagged degenerate.
pub fn dsc(predicted: &Mask, truth: &Mask) -> Result<Metric> {
    check_same_dims(truth, predicted)?;
    predicted.check_binary()?;
    truth.check_binary()?;
    let (mut inter, mut m, mut gt) = (0u64, 0u64, 0u64);
    for (&p, &t) in predicted.as_slice().iter().zip(truth.as_slice()) {
        let (p, t) = (u64::from(p), u64::from(t));
        inter += p & t;
        m += p;
        gt += t;
    }
    if m + gt == 0 {
        return Ok(Metric {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(Metric {
        value: (2 * inter) as f64 / (m + gt) as f64,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use Label::{Bp as B, NoBp as N};

    #[test]
    fn confusion_examples() {
        let truth = [B, B, B, B, B, B, N, N, N, N];
        let c = confusion(&truth, &truth).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (6, 4, 0, 0));

        let flipped: Vec<Label> = truth.iter().map(|&l| if l == B { N } else { B }).collect();
        let c = confusion(&flipped, &truth).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));

        let c = confusion(&[B, B, N, N, B], &[B, N, N, B, B]).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );

        assert!(confusion(&[B], &[B, N]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let c = |tp, fp, tn, fn_| ConfusionCounts { tp, fp, tn, fn_ };
        assert_eq!(accuracy(&c(6, 0, 4, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&c(2, 1, 3, 4)).unwrap(), 0.5);
        assert_eq!(accuracy(&c(0, 5, 0, 5)).unwrap(), 0.0);
        assert!(accuracy(&c(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn f1_examples() {
        let c = |tp, fp, tn, fn_| ConfusionCounts { tp, fp, tn, fn_ };
        assert_eq!(f1(&c(2, 1, 0, 1)).value, 4.0 / 6.0);
        assert_eq!(f1(&c(5, 0, 3, 0)).value, 1.0);
        assert_eq!(f1(&c(0, 2, 3, 1)).value, 0.0);
        let degenerate = f1(&c(0, 0, 9, 0));
        assert!(degenerate.degenerate);
        assert_eq!(degenerate.value, 1.0);
    }

    #[test]
    fn dsc_examples() {
        let a = Grid::from_fn(4, 4, |r, _| u8::from(r == 1));
        assert_eq!(dsc(&a, &a).unwrap().value, 1.0);

        let b = Grid::from_fn(4, 4, |r, _| u8::from(r == 3));
        assert_eq!(dsc(&a, &b).unwrap().value, 0.0);

        // |M| = 4 (row 0), |GT| = 6 (first three of row 0, then row 1 cols 0..3).
        let m = Grid::from_fn(4, 4, |r, _| u8::from(r == 0));
        let gt = Grid::from_fn(4, 4, |r, c| {
            u8::from((r == 0 && c < 3) || (r == 1 && c < 3))
        });
        assert_eq!((m.count_ones(), gt.count_ones()), (4, 6));
        assert_eq!(dsc(&m, &gt).unwrap().value, 0.6);

        let e = Mask::new(4, 4);
        let both_empty = dsc(&e, &e).unwrap();
        assert!(both_empty.degenerate);
        assert_eq!(both_empty.value, 1.0);
        assert_eq!(dsc(&e, &a).unwrap().value, 0.0);
    }

    #[test]
    fn dsc_errors() {
        assert!(dsc(&Mask::new(4, 4), &Mask::new(4, 5)).is_err());
        let bad = Grid::from_vec(1, 2, vec![0u8, 2]).unwrap();
        assert!(dsc(&bad, &Mask::new(1, 2)).is_err());
    }
}
