use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use abrsim::harness::topology::TopologyFile;
use abrsim::harness::{expand, parse_param, run_scenario, run_sweep, HarnessError, RunReport, ScenarioConfig};

#[derive(Parser)]
#[command(name = "abrsim", version, about = "Cell-network congestion control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.txt and metrics.csv.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated duration in milliseconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Print the max-min fair allocation of a topology.
    Oracle { topology: PathBuf },
    /// Run a scenario once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...`, with dotted keys for nested settings.
        #[arg(long)]
        param: String,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn summary(label: &str, r: &RunReport) -> String {
    let h = &r.headline;
    let fairness = h.steady_fairness.map_or("-".into(), |f| format!("{f:.4}"));
    format!(
        "{label}: fairness {fairness}, loss {}, max queue {}",
        h.total_loss, h.max_queue
    )
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            duration,
        } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = duration {
                cfg.duration_ms = d;
            }
            let report = run_scenario(&cfg)?;
            report.write_to(&out)?;
            println!("{}", summary(&config.display().to_string(), &report));
        }
        Command::Oracle { topology } => {
            let file = TopologyFile::parse(&read(&topology)?)?;
            for (vc, mbps) in file.oracle_mbps()? {
                println!("vc {vc}: {mbps:.6} Mbps");
            }
        }
        Command::Sweep {
            config,
            param,
            out,
            jobs,
        } => {
            let (key, values) = parse_param(&param)?;
            let points = expand(&read(&config)?, &key, &values)?;
            let results = run_sweep(&points, jobs);
            let mut failed = None;
            for (p, r) in points.iter().zip(results) {
                match r {
                    Ok(report) => {
                        let dir = out.join(p.label.replace(['/', '\\'], "_"));
                        report.write_to(&dir)?;
                        println!("{}", summary(&p.label, &report));
                    }
                    Err(e) => {
                        eprintln!("{}: {e}", p.label);
                        failed = Some(e);
                    }
                }
            }
            if let Some(e) = failed {
                return Err(e);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
