use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqdetect_cli::grid::parse_grid;
use seqdetect_cli::{run_bounds, run_study, CliError, Manifest, Overrides, Preset, StudyFile};

/// Monte Carlo studies of sequential multi-stream signal detection.
#[derive(Debug, Parser)]
#[command(name = "seqdetect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a study and write `<study>.csv` and `<study>.manifest.json`.
    Run {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Write the lower bounds of a configuration to `<study>_bounds.csv`.
    Bounds {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Study file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rerun the study recorded in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OverrideArgs {
    #[arg(long)]
    trials: Option<u64>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Detection threshold; `b` follows unless given.
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    a: Option<f64>,
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    b: Option<f64>,
    /// Familywise type-I budget for calibrated thresholds; `beta` follows unless given.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed exploration threshold b'.
    #[arg(long)]
    bprime: Option<f64>,
    /// Sweep over b': `start:stop:step` or a comma list.
    #[arg(long, conflicts_with = "a_grid")]
    bprime_grid: Option<String>,
    /// Sweep over a = b: `start:stop:step` or a comma list.
    #[arg(long)]
    a_grid: Option<String>,
    /// Share trial seeds across procedures.
    #[arg(long)]
    crn: bool,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Result<Overrides, CliError> {
        Ok(Overrides {
            trials: self.trials,
            seed: self.seed,
            a: self.a,
            b: self.b,
            alpha: self.alpha,
            beta: self.beta,
            b_prime: self.bprime,
            b_prime_grid: self.bprime_grid.as_deref().map(parse_grid).transpose()?,
            a_grid: self.a_grid.as_deref().map(parse_grid).transpose()?,
            common_random_numbers: self.crn,
        })
    }
}

/// Preset or file first, then command-line overrides. Returns the manifest's
/// worker count when replaying.
fn load(source: &Source, overrides: &OverrideArgs) -> Result<(StudyFile, Option<usize>), CliError> {
    let (mut file, workers) = if let Some(p) = source.preset {
        (p.study_file(), None)
    } else if let Some(path) = &source.config {
        (StudyFile::from_json(&seqdetect_cli::commands::read(path)?)?, None)
    } else if let Some(path) = &source.manifest {
        let m = Manifest::load(path)?;
        (m.config, Some(m.workers))
    } else {
        unreachable!("clap requires one source")
    };
    file.apply(&overrides.to_overrides()?)?;
    Ok((file, workers))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            source,
            overrides,
            workers,
            out_dir,
        } => {
            let (file, recorded) = load(&source, &overrides)?;
            let workers = workers
                .or(recorded)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let out = run_study(&file, workers, &out_dir)?;
            println!("{}", out.csv_path.display());
            println!("{}", out.manifest_path.display());
        }
        Command::Bounds {
            source,
            overrides,
            out_dir,
        } => {
            let (file, _) = load(&source, &overrides)?;
            println!("{}", run_bounds(&file, &out_dir)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seqdetect: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
