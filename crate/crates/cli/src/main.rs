//! Command-line front end: run campaigns and aggregate their results.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsios_core::campaign::{emit_figure_data, read_results, write_aggregate, write_campaign};
use dsios_core::{run_campaign, CampaignConfig, Error, Figure};

#[derive(Parser)]
#[command(name = "dsios", version, about = "Dual-side IOS full-duplex MIMO weighted sum rate simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo campaign.
    ///
    /// Trailing `--field.path value` pairs override config fields,
    /// e.g. `--powers.p-b-dbm 12 --seeds '{"base": 0, "count": 4}'`.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Output root; results go to `<out>/<name>/`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Aggregate a results file into a plot-ready table.
    Aggregate {
        /// One of fig2..fig6.
        #[arg(long)]
        figure: String,
        #[arg(long = "in")]
        input: PathBuf,
        /// Trace directory for fig2 (default: `traces/` next to the input).
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Config {
                path: arg.clone(),
                message: "expected an override of the form `--field.path value`".into(),
            });
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it.next().ok_or_else(|| Error::Config {
            path: key.to_string(),
            message: "override is missing its value".into(),
        })?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

fn simulate(config: Option<PathBuf>, threads: Option<usize>, out: PathBuf, overrides: &[String]) -> Result<(), Error> {
    let base = match &config {
        Some(path) => CampaignConfig::from_file(path)?,
        None => CampaignConfig::default(),
    };
    let cfg = base.with_overrides(&parse_overrides(overrides)?)?;
    let records = run_campaign(&cfg, threads)?;
    let dir = write_campaign(&out, &cfg, &records)?;
    let capped = records.iter().filter(|r| r.row.terminated_by != "tolerance").count();
    if capped > 0 {
        log::warn!("{capped} of {} runs stopped at the iteration cap", records.len());
    }
    println!("{} runs written to {}", records.len(), dir.display());
    Ok(())
}

fn aggregate(figure: &str, input: PathBuf, traces: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), Error> {
    let figure: Figure = figure.parse()?;
    let file = fs::File::open(&input)
        .map_err(|e| Error::Config {
            path: input.display().to_string(),
            message: format!("cannot open results: {e}"),
        })?;
    let rows = read_results(file)?;
    let traces = traces.unwrap_or_else(|| input.parent().unwrap_or(std::path::Path::new(".")).join("traces"));
    let table = emit_figure_data(&rows, figure, Some(&traces))?;
    match out {
        Some(path) => write_aggregate(&table, fs::File::create(path)?),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_aggregate(&table, &mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else if err.is_numerical() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            threads,
            out,
            overrides,
        } => simulate(config, threads, out, &overrides),
        Command::Aggregate {
            figure,
            input,
            traces,
            out,
        } => aggregate(&figure, input, traces, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
