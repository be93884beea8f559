//! `stc`: run circuit-tracing experiments from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use stc_core::config::{ExperimentConfig, ReportFormat};
use stc_core::dump::ingest_activations;
use stc_core::episode::{gen_episodes_with, save_corpus, GenParams};
use stc_core::geometry::detect_registers;
use stc_core::model::planted::{planted_qa_model, PlantedConfig};
use stc_core::report::ResultsBundle;
use stc_core::runner::{run_and_emit, Circuit};
use stc_core::vocab::Vocab;
use stc_core::{Error, FrameGrid};

/// Environment variable that overrides the output directory.
const OUT_DIR_ENV: &str = "STC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "results";

#[derive(Debug, Parser)]
#[command(
    name = "stc",
    version,
    about = "Circuit tracing for vision-language transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one circuit and write its reports.
    Run {
        /// circuit1 (token auditing), circuit2 (logit lens) or circuit3 (attention knockout).
        #[arg(value_parser = parse_circuit)]
        circuit: Circuit,
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to the config's `output_dir`, then `results`.
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic episode corpus.
    GenEpisodes {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, env = OUT_DIR_ENV)]
        out: PathBuf,
        /// Take model, grid and generator settings from an experiment config
        /// instead of the built-in planted model on a 4x8x8 grid.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Validate an activation dump and summarize it.
    Ingest {
        #[arg(long)]
        path: PathBuf,
        /// Patch layout `FRAMESxROWSxCOLS` of the visual tokens; defaults to a
        /// single row holding every token.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<FrameGrid>,
    },
    /// Re-render a results JSON file.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: ReportFormat,
        /// Defaults to the directory holding the results file.
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
}

fn parse_circuit(s: &str) -> Result<Circuit, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_grid(s: &str) -> Result<FrameGrid, String> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|e| format!("bad grid dimension `{p}`: {e}"))
        })
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [f, r, c] => FrameGrid::new(f, r, c).map_err(|e| e.to_string()),
        _ => Err(format!("grid must look like FRAMESxROWSxCOLS, got `{s}`")),
    }
}

/// Distinct exit status per error category; 2 is left to argument parsing.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 3,
        Error::Input(_) => 4,
        Error::Shape(_) => 5,
        Error::Intervention(_) => 6,
        Error::Capacity { .. } => 7,
        Error::Format { .. } => 8,
        Error::UndefinedBaseline => 9,
        Error::Io { .. } => 10,
        Error::Json(_) => 11,
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> stc_core::Result<()> {
    match cli.command {
        Command::Run {
            circuit,
            config,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
            print_written(&run_and_emit(&cfg, circuit, &out)?);
        }
        Command::GenEpisodes {
            seed,
            count,
            out,
            config,
        } => {
            let (model, grid, params) = match config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(path)?;
                    (cfg.build_model()?, cfg.grid, cfg.generator)
                }
                None => {
                    let pc = PlantedConfig::default();
                    let grid = FrameGrid::new(4, 8, 8)?;
                    (
                        planted_qa_model(&pc, &Vocab::toy(pc.vocab_size)?)?,
                        grid,
                        GenParams::default(),
                    )
                }
            };
            let eps = gen_episodes_with(seed, count, &grid, &model, &params)?;
            println!("{}", save_corpus(&out, &eps)?.display());
        }
        Command::Ingest { path, grid } => {
            let dump = ingest_activations(&path)?;
            let grid = match grid {
                Some(g) => g,
                None => FrameGrid::new(1, 1, dump.n_tokens())?,
            };
            let registers = detect_registers(&dump.embeddings()?, &grid)?;
            let summary = json!({
                "path": path.display().to_string(),
                "n_tokens": dump.n_tokens(),
                "width": dump.width(),
                "n_layers": dump.header.n_layers,
                "provenance": dump.header.provenance,
                "grid": grid,
                "registers": registers,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Report {
            results,
            format,
            out,
        } => {
            let bundle = ResultsBundle::load(&results)?;
            let out = out.unwrap_or_else(|| {
                results
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .unwrap_or(Path::new("."))
                    .to_path_buf()
            });
            print_written(&bundle.emit(&out, &[format])?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stc: {} error: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
