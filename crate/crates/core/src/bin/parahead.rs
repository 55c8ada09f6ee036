use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use parahead::bench::{
    convert, generate, inspect, parse_conflicts, parse_ranks, parse_strategies, run_bench, verify, write_csv,
    BenchPlan, FileFormat,
};
use parahead::codec::classic::FormatVersion;
use parahead::strategies::StrategyKind;
use parahead::workload::{ConflictInjection, Dataset};

#[derive(Parser)]
#[command(name = "parahead", version, about = "Parallel header-creation strategies over simulated ranks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Reference dataset whose object counts are scaled.
    #[arg(long, default_value = "98M")]
    dataset: Dataset,
    /// Fraction of the dataset's object counts to generate.
    #[arg(long, default_value_t = 0.01)]
    scale: f64,
    /// Hash table slots; defaults to the dataset's tuned size.
    #[arg(long)]
    hash_size: Option<usize>,
    /// Fraction of objects defined identically on every rank.
    #[arg(long, default_value_t = 0.0)]
    shared_fraction: f64,
    /// Conflicting definitions to inject, as COUNT or COUNT:{type,dim}.
    #[arg(long, value_parser = parse_conflicts)]
    inject_conflicts: Option<ConflictInjection>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload and write the file one strategy produces for it.
    Gen {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value_t = 4)]
        ranks: usize,
        #[arg(long, default_value = "new")]
        format: FileFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run strategies across rank counts and emit CSV rows.
    Bench {
        #[command(flatten)]
        workload: WorkloadArgs,
        /// `all` or a comma-separated list (app, lib_hash, lib_sort, new).
        #[arg(long, default_value = "all")]
        strategies: String,
        /// Comma-separated rank counts.
        #[arg(long, default_value = "1,2,4,8,16")]
        ranks: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe a file; partitioned files are summarized from the index alone.
    Inspect { path: PathBuf },
    /// Convert a file to the other format.
    Convert {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        format: FileFormat,
        /// Version byte of classic output (1, 2 or 5).
        #[arg(long, default_value_t = 5, value_parser = parse_version)]
        classic_version: u8,
    },
    /// Run every strategy on one workload and cross-check the files.
    Verify {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value_t = 4)]
        ranks: usize,
    },
}

fn parse_version(s: &str) -> Result<u8, String> {
    match s.parse::<u8>() {
        Ok(v) if FormatVersion::from_byte(v).is_some() => Ok(v),
        _ => Err(format!("invalid classic version {s:?}; expected 1, 2 or 5")),
    }
}

/// Flag values rejected after parsing; reported with usage text.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn plan(w: &WorkloadArgs) -> Result<BenchPlan, UsageError> {
    if !(0.0..=1.0).contains(&w.shared_fraction) {
        return Err(UsageError(format!("--shared-fraction {} is outside [0, 1]", w.shared_fraction)));
    }
    if w.scale.is_nan() || w.scale <= 0.0 {
        return Err(UsageError(format!("--scale {} must be positive", w.scale)));
    }
    let mut plan = BenchPlan::new(w.dataset, w.seed);
    plan.scale = w.scale;
    plan.hash_size = w.hash_size.unwrap_or(w.dataset.hash_size());
    plan.shared_fraction = w.shared_fraction;
    plan.conflicts = w.inject_conflicts;
    Ok(plan)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Gen {
            workload,
            ranks,
            format,
            out,
        } => {
            let plan = plan(&workload)?;
            let strategy = match format {
                FileFormat::Classic => StrategyKind::LibBaselineHash,
                FileFormat::New => StrategyKind::NewFormat,
            };
            let output = generate(&plan.spec(ranks), strategy, &plan.config())?;
            output.image.save(&out)?;
            eprintln!("wrote {} bytes to {}", output.image.bytes.len(), out.display());
        }
        Command::Bench {
            workload,
            strategies,
            ranks,
            trials,
            out,
        } => {
            let mut plan = plan(&workload)?;
            plan.strategies = parse_strategies(&strategies).map_err(UsageError)?;
            plan.ranks = parse_ranks(&ranks).map_err(UsageError)?;
            plan.trials = trials;
            let outcome = run_bench(&plan)?;
            for f in &outcome.expected_failures {
                eprintln!(
                    "{} at P={}: consistency error on the injected objects {:?}",
                    f.strategy, f.ranks, f.conflicts
                );
            }
            match out {
                Some(path) => write_csv(&outcome.rows, fs::File::create(path)?)?,
                None => write_csv(&outcome.rows, io::stdout().lock())?,
            }
        }
        Command::Inspect { path } => {
            print!("{}", inspect(&fs::read(path)?)?);
        }
        Command::Convert {
            input,
            output,
            format,
            classic_version,
        } => {
            let version = FormatVersion::from_byte(classic_version).expect("validated by the parser");
            fs::write(output, convert(&fs::read(input)?, format, version)?)?;
        }
        Command::Verify { workload, ranks } => {
            let plan = plan(&workload)?;
            let v = verify(&plan.spec(ranks), &plan.config())?;
            println!(
                "ok: {} strategies agree on {} objects at P={ranks}",
                v.strategies.len(),
                v.objects
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is::<UsageError>() {
                eprintln!("\n{}", Cli::command().render_usage());
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
