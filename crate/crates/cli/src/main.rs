use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info, warn};

use mapc::error::Result;
use mapc::metrics::ComparisonReport;
use mapc::rawio::{ingest_raw, IngestOptions};
use mapc::scenario::{process_cube, report_from_dir, run_scenario, Method, RunOutcome, RunSpec, Scenario};

#[derive(Parser)]
#[command(name = "mapc", version, about = "Phase-coded FMCW MIMO radar processing with adaptive pulse compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a scenario and process it with the selected methods.
    Run {
        scenario: PathBuf,
        /// Comma separated subset of hann_mf, apc_baseline, apc_proposed.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Overrides the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Also write doppler maps, snapshots and per-iteration profiles.
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Process a recorded raw frame file.
    Ingest {
        raw: PathBuf,
        /// Scenario file supplying the radar parameters.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Frame subtracted as background before processing.
        #[arg(long)]
        subtract_frame: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Recompute the comparison report from a results directory.
    Report { dir: PathBuf },
}

fn parse_methods(names: Option<Vec<String>>) -> Result<Vec<Method>> {
    match names {
        None => Ok(Method::ALL.to_vec()),
        Some(v) => v.iter().map(|s| Method::parse(s.trim())).collect(),
    }
}

fn summarize(outcome: &RunOutcome, out: &Path) {
    for (m, e) in &outcome.failures {
        warn!("{m} failed: {e}");
    }
    if let Some(r) = &outcome.report {
        print_report(r);
    }
    info!("wrote {} files to {}", outcome.written.len(), out.display());
}

fn print_report(r: &ComparisonReport) {
    println!("{:<14} {:>9}  sinr per region (dB)", "method", "psl dB");
    for m in &r.methods {
        let sinr: Vec<String> = m.sinr_db.iter().map(|v| format!("{v:.1}")).collect();
        println!("{:<14} {:>9.1}  {}", m.method, m.psl_db, sinr.join(" "));
    }
    for p in &r.pairs {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{} - {}: weighted diff targets {} other {}",
            r.proposed,
            p.reference,
            fmt(p.weighted_diff.targets),
            fmt(p.weighted_diff.other)
        );
    }
    for (m, e) in &r.failures {
        println!("{m}: failed ({e})");
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, methods, seed, out, dump_intermediates } => {
            let spec = RunSpec { scenario_path: scenario, methods: parse_methods(methods)?, out_dir: out.clone(), seed, dump_intermediates };
            let outcome = run_scenario(&spec)?;
            summarize(&outcome, &out);
            Ok(outcome.report.is_some())
        }
        Command::Ingest { raw, config, frame, subtract_frame, methods, out, dump_intermediates } => {
            let scenario = Scenario::load(&config)?;
            let cube = ingest_raw(&raw, scenario.config(), IngestOptions { frame, subtract_frame })?;
            let outcome = process_cube(&scenario, &cube, &parse_methods(methods)?, &out, dump_intermediates)?;
            summarize(&outcome, &out);
            Ok(outcome.report.is_some())
        }
        Command::Report { dir } => {
            print_report(&report_from_dir(&dir)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("every method failed");
            ExitCode::from(3)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
