//! Classification and segmentation metrics, fold aggregation and the
//! significance tests used to compare experiment cells.

mod aggregate;
mod metrics;
mod normal;
mod stats;

use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_folds, Aggregate};
pub use metrics::{accuracy, confusion, dsc, f1, pixel_confusion, ConfusionCounts, Metric};
pub use stats::{shapiro_wilk, t_test_two_sided, StatTest, StatTestResult, TTestKind};

/// Serialized form of a metric or test value: `{name, value, n, flags}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub n: Vec<usize>,
    pub flags: Vec<String>,
}

impl MetricRecord {
    pub fn new(name: impl Into<String>, value: f64, n: Vec<usize>) -> Self {
        MetricRecord {
            name: name.into(),
            value,
            n,
            flags: Vec::new(),
        }
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.push(flag.into());
        self
    }
}
