//! Normality and pairwise significance tests over experiment cells.

use std::fmt::Write;

use bpseg::evaluation::{shapiro_wilk, t_test_two_sided, StatTestResult, TTestKind};
use bpseg::pipeline::{ExperimentMode, ExperimentReport};
use serde::{Deserialize, Serialize};

use crate::config::{Grouping, StatsSection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTest {
    pub cell: ExperimentMode,
    pub n: usize,
    pub result: Option<StatTestResult>,
    /// Why the test could not be computed.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: ExperimentMode,
    pub b: ExperimentMode,
    pub result: Option<StatTestResult>,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub grouping: Grouping,
    pub t_test: TTestKind,
    pub shapiro_wilk: Vec<CellTest>,
    pub t_tests: Vec<PairTest>,
}

/// DSC values of a cell under the chosen grouping, valid folds only.
pub fn cell_values(r: &ExperimentReport, grouping: Grouping) -> Vec<f64> {
    let folds = r.result.valid_folds();
    match grouping {
        Grouping::PerFold => folds.filter_map(|f| f.mean_dsc).collect(),
        Grouping::PerImage => folds
            .flat_map(|f| f.samples.iter().map(|s| s.dsc))
            .collect(),
    }
}

pub fn summarize(reports: &[ExperimentReport], opts: &StatsSection) -> StatsSummary {
    let values: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| cell_values(r, opts.grouping))
        .collect();
    let shapiro = reports
        .iter()
        .zip(&values)
        .map(|(r, v)| {
            let (result, skipped) = split(shapiro_wilk(v));
            CellTest {
                cell: r.experiment,
                n: v.len(),
                result,
                skipped,
            }
        })
        .collect();
    let mut t_tests = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let (result, skipped) = split(t_test_two_sided(&values[i], &values[j], opts.t_test));
            t_tests.push(PairTest {
                a: reports[i].experiment,
                b: reports[j].experiment,
                result,
                skipped,
            });
        }
    }
    StatsSummary {
        grouping: opts.grouping,
        t_test: opts.t_test,
        shapiro_wilk: shapiro,
        t_tests,
    }
}

fn split<E: std::fmt::Display>(
    r: Result<StatTestResult, E>,
) -> (Option<StatTestResult>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn fmt_result(r: &Option<StatTestResult>, skipped: &Option<String>) -> (String, String) {
    match (r, skipped) {
        (Some(r), _) => (format!("{:.4}", r.statistic), format!("{:.4}", r.p_value)),
        (None, Some(why)) => ("n/a".into(), why.clone()),
        (None, None) => ("n/a".into(), String::new()),
    }
}

impl StatsSummary {
    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "### Significance tests\n\nGrouping: {:?}; t-test: {:?}\n\n#### Shapiro-Wilk per cell\n\n| Cell | n | W | p |\n|---|---|---|---|\n",
            self.grouping, self.t_test
        );
        for c in &self.shapiro_wilk {
            let (w, p) = fmt_result(&c.result, &c.skipped);
            writeln!(s, "| {} | {} | {w} | {p} |", c.cell, c.n).unwrap();
        }
        s.push_str("\n#### Two-sided t-tests\n\n| Cell A | Cell B | t | p |\n|---|---|---|---|\n");
        for t in &self.t_tests {
            let (stat, p) = fmt_result(&t.result, &t.skipped);
            writeln!(s, "| {} | {} | {stat} | {p} |", t.a, t.b).unwrap();
        }
        s
    }
}
