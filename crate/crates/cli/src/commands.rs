use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use bpseg::curation::{curate, CurationConfig, FilterPolicy, SearchScope};
use bpseg::dataset::{
    load_dataset, plant_contradictions, read_manifest, synth_generate, write_dataset,
    write_manifest, DatasetIndex, FoldPlan, PlantedPair, PreprocessSpec, SampleId,
};
use bpseg::pipeline::{
    render_table2, DataVariant, ExperimentData, ExperimentMode, ExperimentReport, ExperimentRunner,
    NetworkTrainer,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StatsSection, SynthSection};
use crate::error::{CliError, Context, EXIT_OK, EXIT_PARTIAL};
use crate::summary::summarize;

pub const EXPERIMENT_REPORT: &str = "experiment_report.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).artifact_err(&format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, contents).artifact_err(&format!("cannot write {}", path.display()))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn dir_is_nonempty(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
}

pub struct SynthArgs {
    pub n: usize,
    pub bp_fraction: f64,
    pub size: (usize, usize),
    pub seed: u64,
    pub planted_pairs: usize,
    pub noise_fraction: f64,
    pub out: PathBuf,
    pub force: bool,
}

fn generate(s: &SynthSection) -> Result<(DatasetIndex, Vec<PlantedPair>), CliError> {
    let index =
        synth_generate(s.n, s.bp_fraction, (s.rows, s.cols), s.seed).input_err("synthetic data")?;
    if s.planted_pairs == 0 {
        return Ok((index, Vec::new()));
    }
    plant_contradictions(
        &index,
        s.planted_pairs,
        s.noise_fraction,
        s.seed.wrapping_add(1),
    )
    .input_err("planting contradictory pairs")
}

/// Materialise a synthetic dataset as PNG image/mask pairs plus
/// `manifest.csv`, and `planted_pairs.csv` when pairs were planted.
pub fn cmd_synth(a: &SynthArgs) -> Result<i32, CliError> {
    if dir_is_nonempty(&a.out) && !a.force {
        return Err(CliError::input(format!(
            "{} exists and is not empty; pass --force to overwrite",
            a.out.display()
        )));
    }
    let section = SynthSection {
        n: a.n,
        bp_fraction: a.bp_fraction,
        rows: a.size.0,
        cols: a.size.1,
        seed: a.seed,
        planted_pairs: a.planted_pairs,
        noise_fraction: a.noise_fraction,
    };
    let (index, planted) = generate(&section)?;
    write_dataset(&index, &a.out).artifact_err("writing dataset")?;
    if !planted.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["original", "duplicate"])
            .artifact_err("planted pairs")?;
        for p in &planted {
            w.write_record([p.original.to_string(), p.duplicate.to_string()])
                .artifact_err("planted pairs")?;
        }
        write(
            &a.out.join("planted_pairs.csv"),
            w.into_inner().artifact_err("planted pairs")?,
        )?;
    }
    println!(
        "wrote {} samples ({} BP) to {}",
        index.len(),
        index.class_counts().bp,
        a.out.display()
    );
    Ok(EXIT_OK)
}

pub struct CurateArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub threshold: f64,
    pub policy: FilterPolicy,
    pub scope: SearchScope,
    pub downsample: (usize, usize),
}

/// Writes `table1.csv`, `removed_pairs.json` and the filtered
/// `manifest.csv` into `out`.
pub fn cmd_curate(a: &CurateArgs) -> Result<i32, CliError> {
    let index = load_dataset(&a.data).input_err(&format!("cannot load {}", a.data.display()))?;
    let mut cfg = CurationConfig {
        threshold: a.threshold,
        policy: a.policy,
        ..CurationConfig::default()
    };
    cfg.similarity.scope = a.scope;
    cfg.similarity.downsample = a.downsample;
    let (filtered, report) = curate(&index, &cfg).input_err("curation")?;
    fs::create_dir_all(&a.out).artifact_err(&format!("cannot create {}", a.out.display()))?;
    report
        .save(&a.out)
        .artifact_err("writing curation report")?;
    write_manifest(
        filtered.samples().iter().map(|s| s.as_ref()),
        a.out.join("manifest.csv"),
    )
    .artifact_err("writing filtered manifest")?;
    print!("{}", report.table_csv_string());
    println!("removed {} samples", report.removed_ids.len());
    Ok(EXIT_OK)
}

#[derive(Serialize, Deserialize)]
pub struct RunRecord {
    pub cells: Vec<ExperimentReport>,
}

fn load_index(cfg: &RunConfig) -> Result<DatasetIndex, CliError> {
    match (&cfg.data.root, &cfg.data.synth) {
        (Some(root), _) => load_dataset(root).input_err(&format!("cannot load {}", root.display())),
        (None, Some(s)) => generate(s).map(|(i, _)| i),
        (None, None) => Err(CliError::input("no data source configured")),
    }
}

fn filtered_index(
    cfg: &RunConfig,
    index: &DatasetIndex,
    out: &Path,
) -> Result<DatasetIndex, CliError> {
    if let Some(manifest) = &cfg.data.filtered_manifest {
        let keep: HashSet<SampleId> = read_manifest(manifest)
            .input_err(&format!("cannot read {}", manifest.display()))?
            .into_iter()
            .map(|r| SampleId::new(r.subject_id, r.image_index))
            .collect();
        return Ok(index.retain(|s| keep.contains(&s.id())));
    }
    let (filtered, report) = curate(index, &cfg.curation).input_err("curation")?;
    let dir = out.join("curation");
    fs::create_dir_all(&dir).artifact_err(&format!("cannot create {}", dir.display()))?;
    report.save(&dir).artifact_err("writing curation report")?;
    Ok(filtered)
}

/// Apply the stats options in the resolved config stored with a run.
fn stats_options(run_dir: &Path) -> Result<StatsSection, CliError> {
    let path = run_dir.join(RESOLVED_CONFIG);
    if !path.exists() {
        return Ok(StatsSection::default());
    }
    let text =
        fs::read_to_string(&path).artifact_err(&format!("cannot read {}", path.display()))?;
    let cfg: RunConfig =
        toml::from_str(&text).artifact_err(&format!("corrupt {}", path.display()))?;
    Ok(cfg.stats)
}

/// Files regenerated from stored results: tables and test summaries.
fn render_outputs(
    reports: &[ExperimentReport],
    stats: &StatsSection,
) -> Result<Vec<(&'static str, String)>, CliError> {
    let (csv, md, gcsv, gmd) = render_table2(reports).artifact_err("rendering tables")?;
    let summary = summarize(reports, stats);
    Ok(vec![
        ("table2.csv", csv),
        ("table2.md", md),
        ("table2_gated.csv", gcsv),
        ("table2_gated.md", gmd),
        ("stats_summary.json", json(&summary)),
        ("stats_summary.md", summary.to_markdown()),
    ])
}

pub fn cmd_run(cfg: &RunConfig, out_flag: Option<&Path>) -> Result<i32, CliError> {
    cfg.validate()?;
    let out = cfg.resolve_output(out_flag);
    fs::create_dir_all(&out).artifact_err(&format!("cannot create {}", out.display()))?;
    write(&out.join(RESOLVED_CONFIG), cfg.to_toml())?;

    let base = load_index(cfg)?;
    let trainer_cfg = cfg.trainer_config();
    let cls = PreprocessSpec::new(
        trainer_cfg.classifier.input_size.0,
        trainer_cfg.classifier.input_size.1,
        true,
    );
    // U-net and M-net share one segmenter resolution
    if trainer_cfg.unet.input_size != trainer_cfg.mnet.input_size {
        return Err(CliError::input(
            "models.unet.input and models.mnet.input must match",
        ));
    }
    let seg = PreprocessSpec::new(
        trainer_cfg.unet.input_size.0,
        trainer_cfg.unet.input_size.1,
        true,
    );

    let mut reports = Vec::new();
    for &variant in DataVariant::ALL.iter().filter(|v| cfg.variants.contains(v)) {
        let index = match variant {
            DataVariant::NonFiltered => base.clone(),
            DataVariant::Filtered => filtered_index(cfg, &base, &out)?,
        };
        let tag = variant.as_str().to_ascii_lowercase();
        let data = ExperimentData::prepare(&index, &cls, &seg).input_err("preprocessing")?;
        let plan = FoldPlan::new(
            &index,
            cfg.folds.n_folds,
            cfg.folds.val_fraction,
            cfg.folds.strategy,
            cfg.seeds.folds,
        )
        .input_err("fold planning")?;
        write(&out.join(format!("fold_plan_{tag}.json")), json(&plan))?;
        let mut trainer = NetworkTrainer::new(trainer_cfg.clone());
        if cfg.write_checkpoints {
            trainer = trainer.with_checkpoints(out.join("checkpoints").join(&tag));
        }
        let runner = ExperimentRunner::new(&data, &plan, &trainer)
            .input_err("experiment setup")?
            .parallel_folds(cfg.parallel_folds);
        for &mode in bpseg::pipeline::PipelineMode::ALL
            .iter()
            .filter(|m| cfg.modes.contains(m))
        {
            for &segmenter in bpseg::pipeline::SegmenterKind::ALL
                .iter()
                .filter(|s| cfg.segmenters.contains(s))
            {
                let cell = ExperimentMode::new(mode, segmenter, variant);
                log::info!("running {cell}");
                let report = runner.run(cell).input_err(&format!("cell {cell}"))?;
                for f in &report.result.folds {
                    write(
                        &out.join("folds")
                            .join(cell.key())
                            .join(format!("fold_{}.json", f.fold)),
                        json(f),
                    )?;
                }
                reports.push(report);
            }
        }
    }
    let record = RunRecord { cells: reports };
    write(&out.join(EXPERIMENT_REPORT), json(&record))?;
    for (name, text) in render_outputs(&record.cells, &cfg.stats)? {
        write(&out.join(name), text)?;
    }
    let invalid: usize = record.cells.iter().map(|r| r.result.n_invalid()).sum();
    print!(
        "{}",
        fs::read_to_string(out.join("table2.md")).unwrap_or_default()
    );
    println!("results in {}", out.display());
    if invalid > 0 {
        eprintln!("{invalid} fold(s) were invalid; see {EXPERIMENT_REPORT}");
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

/// Re-render tables and test summaries from a finished run. Writes into
/// `out` when given, otherwise prints markdown; never touches `run_dir`.
pub fn cmd_report(run_dir: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    if let Some(o) = out {
        let same = match (fs::canonicalize(o), fs::canonicalize(run_dir)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        if same {
            return Err(CliError::input(
                "report output must differ from the run directory",
            ));
        }
    }
    let path = run_dir.join(EXPERIMENT_REPORT);
    let text =
        fs::read_to_string(&path).artifact_err(&format!("cannot read {}", path.display()))?;
    let record: RunRecord =
        serde_json::from_str(&text).artifact_err(&format!("corrupt {}", path.display()))?;
    if record.cells.is_empty() {
        return Err(CliError::artifact(format!(
            "{} holds no results",
            path.display()
        )));
    }
    let outputs = render_outputs(&record.cells, &stats_options(run_dir)?)?;
    match out {
        Some(dir) => {
            for (name, text) in outputs {
                write(&dir.join(name), text)?;
            }
            println!("wrote report to {}", dir.display());
        }
        None => {
            for (name, text) in outputs {
                if name.ends_with(".md") {
                    println!("{text}");
                }
            }
        }
    }
    Ok(EXIT_OK)
}
