//! Command-line driver: synthetic data generation, dataset curation, the
//! cross-validated experiment grid and report rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod summary;

use std::ffi::OsString;
use std::path::PathBuf;

use bpseg::curation::{FilterPolicy, SearchScope};
use bpseg::pipeline::{DataVariant, PipelineMode, SegmenterKind};
use clap::{Parser, Subcommand, ValueEnum};

use commands::{CurateArgs, SynthArgs};
use config::{Preset, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "bpseg",
    version,
    about = "Classify-then-segment experiments for brachial plexus ultrasound"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PolicyArg {
    RemoveNoBpMember,
    RemoveBoth,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScopeArg {
    SameSubject,
    Global,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(r)?, p(c)?))
}

fn parse_list<T: std::str::FromStr<Err = bpseg::Error>>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| e.to_string()))
        .collect()
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset of PNG image/mask pairs.
    Synth {
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        bp_fraction: f64,
        /// ROWSxCOLS.
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Contradictory near-duplicates to plant (listed in planted_pairs.csv).
        #[arg(long, default_value_t = 0)]
        planted_pairs: usize,
        /// Noise std of planted duplicates relative to the image std.
        #[arg(long, default_value_t = 0.02)]
        noise_fraction: f64,
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Remove contradictory near-duplicates and write class counts.
    Curate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Similarity at or above which a BP/no-BP pair is contradictory.
        #[arg(long, default_value_t = 0.95)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "remove-no-bp-member")]
        policy: PolicyArg,
        #[arg(long, value_enum, default_value = "same-subject")]
        scope: ScopeArg,
        /// Resolution at which similarity is computed.
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        downsample: (usize, usize),
    },
    /// Run the cross-validated experiment grid.
    Run {
        /// TOML file overlaid on the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
        /// Output directory; defaults to $BPSEG_OUTPUT_ROOT/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        filtered_manifest: Option<PathBuf>,
        /// Comma-separated, e.g. HYBRID,PERFECT_CLASSIFICATION.
        #[arg(long, value_parser = parse_list::<PipelineMode>)]
        modes: Option<Vec<PipelineMode>>,
        #[arg(long, value_parser = parse_list::<SegmenterKind>)]
        segmenters: Option<Vec<SegmenterKind>>,
        #[arg(long, value_parser = parse_list::<DataVariant>)]
        variants: Option<Vec<DataVariant>>,
        #[arg(long)]
        fold_seed: Option<u64>,
        #[arg(long)]
        training_seed: Option<u64>,
        /// Epoch cap for every network.
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        n_extra: Option<i64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        parallel_folds: bool,
        #[arg(long)]
        no_checkpoints: bool,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Re-render tables and tests from a finished run.
    Report {
        run_dir: PathBuf,
        /// Write files here instead of printing markdown.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Synth {
            n,
            bp_fraction,
            size,
            seed,
            planted_pairs,
            noise_fraction,
            out,
            force,
        } => commands::cmd_synth(&SynthArgs {
            n,
            bp_fraction,
            size,
            seed,
            planted_pairs,
            noise_fraction,
            out,
            force,
        }),
        Command::Curate {
            data,
            out,
            threshold,
            policy,
            scope,
            downsample,
        } => commands::cmd_curate(&CurateArgs {
            data,
            out,
            threshold,
            policy: match policy {
                PolicyArg::RemoveNoBpMember => FilterPolicy::RemoveNoBpMember,
                PolicyArg::RemoveBoth => FilterPolicy::RemoveBoth,
            },
            scope: match scope {
                ScopeArg::SameSubject => SearchScope::SameSubject,
                ScopeArg::Global => SearchScope::Global,
            },
            downsample,
        }),
        Command::Run {
            config,
            preset,
            out,
            data_root,
            filtered_manifest,
            modes,
            segmenters,
            variants,
            fold_seed,
            training_seed,
            max_epochs,
            n_extra,
            threshold,
            parallel_folds,
            no_checkpoints,
            print_config,
        } => {
            let mut cfg = RunConfig::load(preset, config.as_deref())?;
            if let Some(root) = data_root {
                cfg.data.root = Some(root);
                cfg.data.synth = None;
            }
            if filtered_manifest.is_some() {
                cfg.data.filtered_manifest = filtered_manifest;
            }
            if let Some(v) = modes {
                cfg.modes = v;
            }
            if let Some(v) = segmenters {
                cfg.segmenters = v;
            }
            if let Some(v) = variants {
                cfg.variants = v;
            }
            if let Some(s) = fold_seed {
                cfg.seeds.folds = s;
            }
            if let Some(s) = training_seed {
                cfg.seeds.training = s;
            }
            if let Some(e) = max_epochs {
                cfg.training.classifier.max_epochs = e;
                cfg.training.segmenter.max_epochs = e;
                for t in [&mut cfg.training.classifier, &mut cfg.training.segmenter] {
                    t.early_stop_patience = t.early_stop_patience.min(e);
                }
            }
            if let Some(n) = n_extra {
                cfg.augmentation.n_extra = n;
            }
            if let Some(t) = threshold {
                cfg.curation.threshold = t;
            }
            cfg.parallel_folds |= parallel_folds;
            cfg.write_checkpoints &= !no_checkpoints;
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(error::EXIT_OK);
            }
            commands::cmd_run(&cfg, out.as_deref())
        }
        Command::Report { run_dir, out } => commands::cmd_report(&run_dir, out.as_deref()),
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                error::EXIT_INPUT
            } else {
                error::EXIT_OK
            };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
