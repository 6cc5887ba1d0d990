use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod export;

use config::{Settings, UsageError};

/// Radial LV network topology recovery from smart-meter increments.
#[derive(Debug, Parser)]
#[command(name = "lvtopo", version)]
struct Cli {
    /// JSON settings file; flags take precedence over its values.
    #[arg(long, global = true, env = "LVTOPO_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate smart-meter measurements on a known topology.
    Generate(GenerateArgs),
    /// Recover a topology from a measurement CSV.
    Recover(RecoverArgs),
    /// Sweep sample counts and seeds, scoring each recovery.
    Benchmark(BenchmarkArgs),
    /// Render a topology as DOT or JSON.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Bundled test system: sys6, sys11, sys15, sys20 or sys25.
    #[arg(long)]
    fixture: Option<String>,
    /// Topology JSON file.
    #[arg(long)]
    topology: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulationArgs {
    /// Relative standard deviation of per-snapshot load noise.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Load power factor, lagging.
    #[arg(long = "pf")]
    power_factor: Option<f64>,
    /// Power-flow convergence tolerance in volts.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seconds between snapshots [default: one day divided by the sample count].
    #[arg(long = "interval")]
    interval_s: Option<f64>,
}

#[derive(Debug, Args)]
struct RecoveryArgs {
    /// Grouping distance threshold.
    #[arg(long)]
    theta: Option<f64>,
    /// Segment resistance in ohms.
    #[arg(long)]
    resistance: Option<f64>,
    /// Ridge added before every precision inversion.
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Number of increments; one more snapshot is simulated.
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    simulation: SimulationArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write the per-iteration largest voltage change of every snapshot.
    #[arg(long)]
    dump_convergence: bool,
    /// Write per-leaf dV/dI histograms with this many bins.
    #[arg(long)]
    histogram_bins: Option<usize>,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    /// Measurement CSV written by `generate`.
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Ground-truth topology JSON to score against.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    recovery: RecoveryArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write each layer's correlation, precision and distance matrices.
    #[arg(long)]
    dump_matrices: bool,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated sample counts.
    #[arg(long, value_delimiter = ',')]
    samples: Vec<usize>,
    /// Seeds per sample count, counting up from --seed.
    #[arg(long)]
    seeds: Option<u64>,
    #[command(flatten)]
    simulation: SimulationArgs,
    #[command(flatten)]
    recovery: RecoveryArgs,
    /// Grid points run at once [default: available cores].
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// dot or json.
    #[arg(long, default_value = "dot")]
    format: String,
    /// Output file [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
}

impl SourceArgs {
    fn apply(&self, s: &mut Settings) {
        s.fixture = self.fixture.clone();
        s.topology = self.topology.clone();
    }
}

impl SimulationArgs {
    fn apply(&self, s: &mut Settings) {
        s.noise_sigma = self.noise_sigma;
        s.seed = self.seed;
        s.power_factor = self.power_factor;
        s.tol = self.tol;
        s.max_iter = self.max_iter;
        s.interval_s = self.interval_s;
    }
}

impl RecoveryArgs {
    fn apply(&self, s: &mut Settings) {
        s.theta = self.theta;
        s.resistance = self.resistance;
        s.ridge = self.ridge;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let mut flags = Settings::default();
    match &cli.command {
        Command::Generate(a) => {
            a.source.apply(&mut flags);
            a.simulation.apply(&mut flags);
            flags.samples = a.samples;
            flags.out_dir = a.out_dir.clone();
            let s = file.overlay(&flags);
            commands::generate(s, a.dump_convergence, a.histogram_bins)
        }
        Command::Recover(a) => {
            a.recovery.apply(&mut flags);
            flags.measurements = a.measurements.clone();
            flags.truth = a.truth.clone();
            flags.out_dir = a.out_dir.clone();
            commands::recover(file.overlay(&flags), a.dump_matrices)
        }
        Command::Benchmark(a) => {
            a.source.apply(&mut flags);
            a.simulation.apply(&mut flags);
            a.recovery.apply(&mut flags);
            flags.sample_grid = (!a.samples.is_empty()).then(|| a.samples.clone());
            flags.seeds = a.seeds;
            flags.jobs = a.jobs;
            flags.out_dir = a.out_dir.clone();
            commands::benchmark(file.overlay(&flags))
        }
        Command::Export(a) => {
            a.source.apply(&mut flags);
            commands::export(file.overlay(&flags), &a.format, a.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
