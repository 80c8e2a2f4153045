//! Command-line front end: synthesize channels, solve single weight points,
//! sweep rate regions and run the validation battery.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bcosb::channel::{save_channel_csv, synth_channel};
use bcosb::config::{load_config, parse_config, ChannelSource, RunConfig};
use bcosb::report::{self, RunSummary};
use bcosb::validate;
use bcosb::WeightVector;

#[derive(Parser)]
#[command(name = "bcosb", version, about = "Optimal BC spectra for vectored xDSL under total or per-modem power budgets")]
struct Cli {
    /// Worker threads for the per-tone searches (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log level filter, e.g. `info` or `debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Scenario seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic channel of the configured scenario as CSV.
    Synth(Common),
    /// Solve one weight vector.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights (default: `[weights] point`).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Sweep the configured weight vectors and write the rate region.
    Sweep(Common),
    /// Run the invariant checks and the random battery.
    Validate(Common),
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => load_config(p)?,
        None => parse_config("")?,
    };
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn print_summary(summary: &RunSummary) {
    for p in &summary.points {
        let rates: Vec<String> = p.rates_mbps.iter().map(|r| format!("{r:.3}")).collect();
        let powers: Vec<String> = p
            .modem_power_dbm
            .iter()
            .map(|d| d.map_or_else(|| "-inf".to_string(), |d| format!("{d:.2}")))
            .collect();
        println!(
            "w={:?} rates=[{}] Mbps power=[{}] dBm iterations={} converged={}",
            p.weights,
            rates.join(", "),
            powers.join(", "),
            p.iterations,
            p.converged
        );
    }
    if let Some(t) = &summary.table {
        print!("{}", t.render());
    }
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    println!("status: {:?}", summary.status);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(common) => {
            let config = load(&common)?;
            let ChannelSource::Scenario(spec) = &config.channel else {
                bail!("synth needs a scenario channel source");
            };
            let channel = synth_channel(spec, &config.grid)?;
            fs::create_dir_all(&config.output.dir)?;
            let path = config.output.dir.join("channel.csv");
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            save_channel_csv(&channel, std::io::BufWriter::new(file))?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Solve { common, weights } => {
            let config = load(&common)?;
            let w = match weights {
                Some(w) => WeightVector::new(w)?,
                None => config.point.clone(),
            };
            let summary = report::run_point(&config, &w)?;
            print_summary(&summary);
            Ok(summary.status.exit_code())
        }
        Command::Sweep(common) => {
            let config = load(&common)?;
            let summary = report::run(&config)?;
            print_summary(&summary);
            Ok(summary.status.exit_code())
        }
        Command::Validate(common) => {
            let config = load(&common)?;
            let report = validate::validate(&config)?;
            for c in &report.checks {
                println!("{c}");
            }
            if common.out.is_some() {
                fs::create_dir_all(&config.output.dir)?;
                let path = config.output.dir.join("validation.json");
                fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
                println!("wrote {}", path.display());
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
