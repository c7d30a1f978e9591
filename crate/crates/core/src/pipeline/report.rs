use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{DataVariant, ExperimentReport, PipelineMode, PipelineResult, SegmenterKind};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_folds, Aggregate};

/// Fold-level summary of one experiment cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Mean and sample std of per-fold mean DSC over all test images.
    pub all: Aggregate,
    /// The same over the gate-passed subset; folds where the gate passed
    /// nothing are left out.
    pub gated: Option<Aggregate>,
    pub n_valid_folds: usize,
    pub n_invalid_folds: usize,
}

/// Mean ± sample std of per-fold mean DSC over the valid folds.
pub fn score_pipeline(result: &PipelineResult) -> Result<Score> {
    let all: Vec<f64> = result.valid_folds().filter_map(|f| f.mean_dsc).collect();
    if all.is_empty() {
        return Err(Error::NoValidFolds);
    }
    let gated: Vec<f64> = result.valid_folds().filter_map(|f| f.gated_dsc).collect();
    Ok(Score {
        all: aggregate_folds(&all)?,
        gated: aggregate_folds(&gated).ok(),
        n_valid_folds: all.len(),
        n_invalid_folds: result.n_invalid(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TableCell {
    Score {
        mean: f64,
        std: f64,
        n_valid: usize,
        n_folds: usize,
    },
    /// Run but without any valid fold.
    Invalid,
}

impl TableCell {
    /// `mean ± std` to two decimals; `(k/n folds)` is appended when some
    /// folds were invalid, and a single valid fold is flagged because its
    /// std is 0 by convention.
    pub fn render(&self) -> String {
        match self {
            TableCell::Score {
                mean,
                std,
                n_valid,
                n_folds,
            } => {
                let mut s = format!("{mean:.2} ± {std:.2}");
                if n_valid < n_folds {
                    write!(s, " ({n_valid}/{n_folds} folds)").unwrap();
                }
                if *n_valid == 1 {
                    s.push_str(" [single fold, std undefined]");
                }
                s
            }
            TableCell::Invalid => "invalid".to_string(),
        }
    }
}

/// Results grid: rows are protocols, columns (data variant, segmenter).
/// Only rows and columns with at least one cell are kept, in canonical
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table2 {
    pub rows: Vec<PipelineMode>,
    pub columns: Vec<(DataVariant, SegmenterKind)>,
    pub cells: BTreeMap<(PipelineMode, DataVariant, SegmenterKind), TableCell>,
}

impl Table2 {
    /// `gated` selects the gate-passed-subset DSC instead of the all-image
    /// DSC.
    pub fn from_reports<'a>(
        reports: impl IntoIterator<Item = &'a ExperimentReport>,
        gated: bool,
    ) -> Self {
        let mut cells = BTreeMap::new();
        for r in reports {
            let e = r.experiment;
            let agg = r.score.as_ref().and_then(|s| {
                if gated {
                    s.gated.as_ref()
                } else {
                    Some(&s.all)
                }
            });
            let cell = match agg {
                Some(a) => TableCell::Score {
                    mean: a.mean,
                    std: a.std,
                    n_valid: a.values.len(),
                    n_folds: r.n_folds,
                },
                None => TableCell::Invalid,
            };
            cells.insert((e.mode, e.data_variant, e.segmenter), cell);
        }
        let rows = PipelineMode::ALL
            .iter()
            .copied()
            .filter(|m| cells.keys().any(|k| k.0 == *m))
            .collect();
        let mut columns = Vec::new();
        for &v in DataVariant::ALL {
            for &s in SegmenterKind::ALL {
                if cells.keys().any(|k| k.1 == v && k.2 == s) {
                    columns.push((v, s));
                }
            }
        }
        Table2 {
            rows,
            columns,
            cells,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn cell_text(&self, m: PipelineMode, (v, s): (DataVariant, SegmenterKind)) -> String {
        self.cells
            .get(&(m, v, s))
            .map(TableCell::render)
            .unwrap_or_default()
    }

    fn column_label((v, s): (DataVariant, SegmenterKind)) -> String {
        format!("{} {}", v.column_label(), s.column_label())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["Model".to_string()];
        header.extend(self.columns.iter().map(|&c| Self::column_label(c)));
        w.write_record(&header)?;
        for &m in &self.rows {
            let mut rec = vec![m.row_label().to_string()];
            rec.extend(self.columns.iter().map(|&c| self.cell_text(m, c)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Markdown with a grouped header line per data variant.
    pub fn to_markdown(&self, title: &str) -> String {
        let mut s = format!("### {title}\n\n");
        let mut groups: Vec<(DataVariant, usize)> = Vec::new();
        for &(v, _) in &self.columns {
            match groups.last_mut() {
                Some((g, n)) if *g == v => *n += 1,
                _ => groups.push((v, 1)),
            }
        }
        let group_line: Vec<String> = groups
            .iter()
            .map(|(v, n)| format!("{} ({})", v.column_label(), n))
            .collect();
        writeln!(s, "Column groups: {}\n", group_line.join(", ")).unwrap();
        s.push_str("| Model |");
        for &c in &self.columns {
            write!(s, " {} |", Self::column_label(c)).unwrap();
        }
        s.push_str("\n|---|");
        for _ in &self.columns {
            s.push_str("---|");
        }
        s.push('\n');
        for &m in &self.rows {
            write!(s, "| {} |", m.row_label()).unwrap();
            for &c in &self.columns {
                write!(s, " {} |", self.cell_text(m, c)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// CSV and markdown for both DSC scopes:
/// `(all_csv, all_md, gated_csv, gated_md)`.
pub fn render_table2(reports: &[ExperimentReport]) -> Result<(String, String, String, String)> {
    let all = Table2::from_reports(reports, false);
    let gated = Table2::from_reports(reports, true);
    Ok((
        all.to_csv()?,
        all.to_markdown("DSC over all test images (mean ± std over folds)"),
        gated.to_csv()?,
        gated.to_markdown("DSC over gate-passed test images (mean ± std over folds)"),
    ))
}
