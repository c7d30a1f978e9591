use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and sample (n - 1) standard deviation of per-fold values. The input
/// list is kept for downstream significance tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
    /// Set when a single value was aggregated and `std` is 0 by convention.
    pub degenerate: bool,
}

pub fn aggregate_folds(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::NoValidFolds);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (std, degenerate) = if values.len() == 1 {
        (0.0, true)
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        ((ss / (n - 1.0)).sqrt(), false)
    };
    Ok(Aggregate {
        mean,
        std,
        values: values.to_vec(),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = aggregate_folds(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((a.mean, a.std), (0.5, 0.0));

        // Hand computation: deviations ±0.1, (0.01 + 0.01) / 1 = 0.02.
        let a = aggregate_folds(&[0.4, 0.6]).unwrap();
        assert!((a.mean - 0.5).abs() < 1e-15);
        assert!((a.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((a.std - 0.1414).abs() < 1e-4);

        let a = aggregate_folds(&[0.7]).unwrap();
        assert_eq!((a.mean, a.std, a.degenerate), (0.7, 0.0, true));
        assert_eq!(a.values, vec![0.7]);

        assert!(aggregate_folds(&[]).is_err());
    }
}
