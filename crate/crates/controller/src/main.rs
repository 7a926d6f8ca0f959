use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use wanderloc::analyze::analyze;
use wanderloc::export::{episodes_csv, write_export, ExportFormat};
use wanderloc::log::{read_log, render_log, LogWriter};
use wanderloc::offline::{read_report_file, run_offline, simulate, write_reports, write_truth};
use wanderloc::pipeline::IngestOptions;
use wanderloc::replay::replay;
use wanderloc::server::{serve_ingest, ServeOptions};
use wanderloc::{DeploymentConfig, ScenarioFile};

#[derive(Parser)]
#[command(name = "wanderloc", version, about = "BLE RSS tag tracking and wandering detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the anchor reports (and optionally ground truth).
    Simulate {
        /// Scenario file or bundled scenario name.
        #[arg(long)]
        config: String,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario duration.
        #[arg(long)]
        duration_s: Option<f64>,
        /// Report file (one wire line per report).
        #[arg(long)]
        out: PathBuf,
        /// Ground truth CSV at 1 Hz.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Track a report file into a trajectory log.
    Track {
        /// Deployment file or bundled deployment name.
        #[arg(long)]
        config: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accept live anchor connections and append to a trajectory log.
    Serve {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// Stop after this many quiet seconds once all anchors disconnected.
        #[arg(long)]
        idle_exit_s: Option<f64>,
    },
    /// Detect wandering episodes in a trajectory log.
    Analyze {
        #[arg(long)]
        config: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Send a report file to a running service, one connection per anchor.
    Replay {
        /// Deployment whose listen address is the default target.
        #[arg(long)]
        config: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        addr: Option<SocketAddr>,
        /// Report-time seconds per wall-clock second. 0 sends unpaced, which
        /// can push anchors further apart than the reorder window allows.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Optional JSON summary of what was sent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a trajectory log to CSV or GeoJSON.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Simulate {
            config,
            seed,
            duration_s,
            out,
            truth,
        } => {
            let mut file = ScenarioFile::load(&config)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            if let Some(d) = duration_s {
                file.duration_s = d;
            }
            let scenario = file.to_scenario()?;
            let em = simulate(&scenario)?;
            write_reports(&em.reports, create(&out)?)?;
            if let Some(p) = truth {
                write_truth(&em.truth, create(&p)?)?;
            }
            info!(reports = em.reports.len(), seed = scenario.seed, "simulation written");
        }
        Command::Track { config, input, out } => {
            let cfg = DeploymentConfig::load(&config)?;
            let (summary, errors) = run_offline(&cfg, &input)?;
            if !errors.is_empty() {
                warn!(count = errors.len(), "report lines skipped");
            }
            if summary.records.is_empty() {
                warn!("empty trajectory log");
            }
            std::fs::write(&out, render_log(&summary.records)).with_context(|| format!("cannot write {}", out.display()))?;
            info!(records = summary.records.len(), stats = ?summary.stats, "tracking done");
        }
        Command::Serve {
            config,
            out,
            listen,
            idle_exit_s,
        } => {
            let cfg = DeploymentConfig::load(&config)?;
            let log = LogWriter::open_append(&out).with_context(|| format!("cannot open {}", out.display()))?;
            let handle = serve_ingest(
                listen.unwrap_or(cfg.ingest.listen),
                cfg.tracker_config()?,
                IngestOptions::from_config(&cfg),
                Some(Box::new(log.into_inner())),
                ServeOptions {
                    idle_exit: idle_exit_s.map(Duration::from_secs_f64),
                },
            )?;
            if idle_exit_s.is_none() {
                info!(addr = %handle.local_addr(), "serving until killed");
            }
            let summary = handle.wait();
            info!(?summary, "session ended");
        }
        Command::Analyze { config, input, out } => {
            let cfg = DeploymentConfig::load(&config)?;
            let records = read_log(&input)?;
            let episodes = analyze(&records, &cfg.detector_params()?)?;
            std::fs::write(&out, episodes_csv(&episodes)).with_context(|| format!("cannot write {}", out.display()))?;
            info!(episodes = episodes.len(), "analysis written");
        }
        Command::Replay {
            config,
            input,
            addr,
            speed,
            out,
        } => {
            let cfg = DeploymentConfig::load(&config)?;
            let file = read_report_file(&input)?;
            if !file.errors.is_empty() {
                bail!("{} unreadable lines in {}", file.errors.len(), input.display());
            }
            let target = addr.unwrap_or(cfg.ingest.listen);
            let stats = replay(&file.reports, target, speed).with_context(|| format!("replay to {target}"))?;
            info!(lines = stats.lines, connections = stats.connections, "replay done");
            if let Some(p) = out {
                let mut w = create(&p)?;
                writeln!(w, "{{\"lines\":{},\"connections\":{}}}", stats.lines, stats.connections)?;
                w.flush()?;
            }
        }
        Command::Export { input, format, out } => {
            let records = read_log(&input)?;
            let mut w = create(&out)?;
            write_export(&records, format, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}
