//! `vcoach`: run, replay, score and synthesize sessions, build group reports
//! and host the live service.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vcoach_core::analytics::{group_series, Arm};
use vcoach_core::clips::ClipStore;
use vcoach_core::session::SESSION_EXTENSION;
use vcoach_core::synth::synth_participant;
use vcoach_core::{default_task_config, replay, report, CoachingMode, SessionLog, StudyPlan, SynthProfile, TaskConfig};
use vcoach_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "vcoach", version, about = "Needle-passing trainer with a virtual coach")]
struct Cli {
    /// Task configuration (JSON). Defaults to the built-in eight-pair task.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scripted session with a synthetic trainee and record it.
    Run {
        #[arg(long, default_value = "none")]
        mode: CoachingMode,
        #[arg(long, default_value = "expert")]
        profile: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a recorded session and check it reproduces its log.
    Replay { file: PathBuf },
    /// Metrics of a recorded session, recomputed by replay.
    Score { file: PathBuf },
    /// Generate a synthetic cohort, one file per participant and session.
    Synth {
        #[arg(long, default_value = "novice")]
        profile: String,
        #[arg(long, default_value_t = 1)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Five-session plan per participant; without it each participant gets one session in --mode.
        #[arg(long)]
        plan: Option<StudyPlan>,
        #[arg(long, default_value = "none")]
        mode: CoachingMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two cohorts: arm A (coached) against arm B (control).
    Report {
        #[arg(long = "arm-a")]
        arm_a: PathBuf,
        #[arg(long = "arm-b")]
        arm_b: PathBuf,
        /// Directory for report.txt, report.json and grid.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Host live sessions and the request API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, env = "VCOACH_TOKEN")]
        token: String,
    },
}

fn load_config(path: Option<&Path>) -> Result<TaskConfig> {
    let Some(path) = path else { return Ok(default_task_config()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: TaskConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(config)
}

fn session_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == SESSION_EXTENSION))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .{SESSION_EXTENSION} files in {}", dir.display());
    }
    Ok(files)
}

/// Stdout writes propagate errors so a closed pipe ends the command quietly.
macro_rules! out {
    ($($arg:tt)*) => { writeln!(std::io::stdout().lock(), $($arg)*)? };
}

fn print_metrics(metrics: &vcoach_core::TaskMetrics, json: bool) -> std::io::Result<()> {
    if json {
        out!("{}", serde_json::to_string_pretty(metrics).expect("metrics serialize"));
        return Ok(());
    }
    for (id, v) in vcoach_core::MetricId::ALL.iter().zip(metrics.values()) {
        match v {
            Some(v) => out!("{:<36} {v:.3}", id.name()),
            None => out!("{:<36} n/a", id.name()),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Run { mode, profile, seed, out } => {
            let profile = SynthProfile::by_name(&profile)?;
            let log = vcoach_core::synth_session(&profile, &config, mode, seed)?;
            log.save(&out).with_context(|| format!("writing {}", out.display()))?;
            print_metrics(&log.footer.metrics, cli.json)?;
        }
        Command::Replay { file } => {
            let log = SessionLog::load(&file).with_context(|| format!("loading {}", file.display()))?;
            let r = replay(&log)?;
            if cli.json {
                out!(
                    "{}",
                    serde_json::json!({
                        "ticks": r.ticks,
                        "events_match": r.events_match,
                        "metrics_match": r.metrics_match,
                        "first_mismatch": r.first_mismatch,
                        "metrics": r.metrics,
                    })
                );
            } else {
                out!("{} ticks, events match: {}, metrics match: {}", r.ticks, r.events_match, r.metrics_match);
            }
            if !r.is_faithful() {
                bail!("replay diverges from the log (first mismatch at line {:?})", r.first_mismatch);
            }
        }
        Command::Score { file } => {
            let log = SessionLog::load(&file).with_context(|| format!("loading {}", file.display()))?;
            print_metrics(&replay(&log)?.metrics, cli.json)?;
        }
        Command::Synth { profile, n, seed, plan, mode, out } => {
            let p = SynthProfile::by_name(&profile)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let sessions: Vec<(&str, CoachingMode)> = match plan {
                Some(plan) => plan.sessions().to_vec(),
                None => vec![("session", mode)],
            };
            let mut written = Vec::new();
            for i in 0..n {
                let s = seed + i;
                let participant = format!("{profile}-{s}");
                for log in synth_participant(&p, &config, &sessions, &participant, s)? {
                    let path = out.join(format!("{participant}_{}.{SESSION_EXTENSION}", log.header.label));
                    log.save(&path).with_context(|| format!("writing {}", path.display()))?;
                    written.push(path);
                }
            }
            if cli.json {
                out!("{}", serde_json::to_string(&written).expect("paths serialize"));
            } else {
                out!("wrote {} sessions to {}", written.len(), out.display());
            }
        }
        Command::Report { arm_a, arm_b, out } => {
            let summaries = |dir: &Path| -> Result<Vec<(String, String, vcoach_core::TaskMetrics)>> {
                session_files(dir)?
                    .iter()
                    .map(|f| {
                        let (h, footer) =
                            SessionLog::read_summary(f).with_context(|| format!("reading {}", f.display()))?;
                        Ok((h.participant, h.label, footer.metrics))
                    })
                    .collect()
            };
            let mut groups = group_series(Arm::Experimental, summaries(&arm_a)?)?;
            groups.extend(group_series(Arm::Control, summaries(&arm_b)?)?);
            let r = report(&groups)?;
            let json = serde_json::to_string_pretty(&r).expect("report serializes");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("report.txt"), r.to_text())?;
                std::fs::write(dir.join("report.json"), &json)?;
                std::fs::write(dir.join("grid.csv"), r.grid_csv())?;
            }
            if cli.json {
                out!("{json}");
            } else {
                write!(std::io::stdout().lock(), "{}", r.to_text())?;
            }
        }
        Command::Serve { port, data, token } => {
            let clips_dir = data.join("clips");
            if ClipStore::open(&clips_dir).is_err() {
                let expert = vcoach_core::synth_session(&SynthProfile::expert(), &config, CoachingMode::None, 1)?;
                ClipStore::build(&clips_dir, &expert)?;
            }
            let service = ServiceConfig { data_dir: data.join("sessions"), clips_dir, token, task: config };
            eprintln!("serving on port {port}");
            tokio::runtime::Runtime::new()?.block_on(vcoach_service::serve(service, port))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
