use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pulsetrack::experiments::{
    run_experiment_1, run_experiment_2, run_experiment_3, run_experiment_4, GradualChangePlan, SteadyTempoPlan,
    SuddenChangePlan, LATENCY_NOTE_COUNTS,
};
use pulsetrack::kernel::KernelConfig;
use pulsetrack::metrics::{score_run, write_jsonl, write_table, ReportRecord};
use pulsetrack::script::{load_script, replay, write_script, Trigger};
use pulsetrack::simulator::{generate, ChangeSchedule, SimulationConfig};
use pulsetrack::{Meter, TrackerConfig};
use pulsetrack_service::stdio::run_lines;
use pulsetrack_service::ws::WsServer;
use pulsetrack_service::{MonotonicClock, Session, SessionConfig};

#[derive(Parser)]
#[command(
    name = "pulsetrack",
    version,
    about = "Real-time tempo and meter tracking for note streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Live session over standard input/output, one JSON record per line.
    Track {
        #[command(flatten)]
        tracker: TrackerArgs,
        /// Milliseconds between automatic analyses (0 = only on request).
        #[arg(long, default_value_t = 500.0)]
        cadence: f64,
    },
    /// Websocket endpoint for the same protocol.
    Serve {
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long, default_value_t = 500.0)]
        cadence: f64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
    /// Generate a simulated performance script with ground truth.
    Simulate(SimulateArgs),
    /// Replay a script file through the tracker and print the estimates.
    Replay {
        script: PathBuf,
        #[command(flatten)]
        tracker: TrackerArgs,
        /// Milliseconds between analyses.
        #[arg(long, default_value_t = 500.0, conflicts_with = "every_note")]
        cadence: f64,
        /// Analyze at every note instead of on a cadence.
        #[arg(long)]
        every_note: bool,
    },
    /// Analysis latency against the number of notes in the window.
    Bench {
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        /// Report file prefix; writes PREFIX.jsonl and PREFIX.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulation experiments: 2 steady tempo, 3 sudden changes, 4 tempo ramps.
    Eval {
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
        experiment: u8,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 2019)]
        seed: u64,
        /// Report file prefix; writes PREFIX.jsonl and PREFIX.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tracker: TrackerArgs,
    },
}

#[derive(Args, Clone)]
struct TrackerArgs {
    /// Analysis window, ms.
    #[arg(long, default_value_t = 6000.0)]
    window: f64,
    /// Gaussian kernel width, ms.
    #[arg(long, default_value_t = 25.0)]
    sigma: f64,
    /// Spontaneous tempo for salience weighting, ms.
    #[arg(long, default_value_t = 500.0)]
    ts: f64,
    #[arg(long, default_value_t = 100.0)]
    min_lag: f64,
    #[arg(long, default_value_t = 2000.0)]
    max_lag: f64,
    /// Most recent notes analyzed (0 = no limit).
    #[arg(long, default_value_t = 60)]
    max_notes: usize,
}

impl TrackerArgs {
    fn config(&self) -> Result<TrackerConfig> {
        let cfg = TrackerConfig {
            kernel: KernelConfig {
                sigma: self.sigma,
                spontaneous_tempo: self.ts,
            },
            window: self.window,
            min_lag: self.min_lag,
            max_lag: self.max_lag,
            max_notes: self.max_notes,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ChangeKind {
    None,
    SuddenTempo,
    SuddenMeter,
    TempoRamp,
}

#[derive(Args)]
struct SimulateArgs {
    /// Quarter-note beat, ms.
    #[arg(long, default_value_t = 500.0)]
    beat: f64,
    #[arg(long, default_value_t = 4)]
    meter: u32,
    /// Timing jitter standard deviation, ms.
    #[arg(long, default_value_t = 0.0)]
    sigma_err: f64,
    /// Sixteenth-note steps to generate.
    #[arg(long, default_value_t = 160)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ChangeKind::None)]
    change: ChangeKind,
    /// Measures played before the change.
    #[arg(long, default_value_t = ChangeSchedule::DEFAULT_AFTER_MEASURES)]
    after_measures: usize,
    /// Beat after a sudden tempo change, ms.
    #[arg(long)]
    new_beat: Option<f64>,
    /// Meter after a sudden meter change.
    #[arg(long)]
    new_meter: Option<u32>,
    /// Beat change per sixteenth during a ramp, ms.
    #[arg(long, allow_negative_numbers = true)]
    increment: Option<f64>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SimulateArgs {
    fn config(&self) -> Result<SimulationConfig> {
        let after_measures = self.after_measures;
        let schedule = match self.change {
            ChangeKind::None => ChangeSchedule::None,
            ChangeKind::SuddenTempo => ChangeSchedule::SuddenTempo {
                after_measures,
                new_beat: self.new_beat.context("--new-beat is required for a tempo change")?,
            },
            ChangeKind::SuddenMeter => ChangeSchedule::SuddenMeter {
                after_measures,
                new_meter: Meter::try_from(self.new_meter.context("--new-meter is required for a meter change")?)?,
            },
            ChangeKind::TempoRamp => ChangeSchedule::TempoRamp {
                after_measures,
                increment: self.increment.context("--increment is required for a ramp")?,
            },
        };
        let cfg = SimulationConfig {
            beat: self.beat,
            meter: Meter::try_from(self.meter)?,
            sigma_err: self.sigma_err,
            steps: self.steps,
            schedule,
            rng_seed: self.seed,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Track { tracker, cadence } => {
            let session = Session::new(session_config(&tracker, cadence)?, Arc::new(MonotonicClock::new()))?;
            run_lines(Arc::new(session), io::stdin().lock(), io::stdout())?;
        }
        Command::Serve {
            tracker,
            cadence,
            host,
            port,
        } => {
            let server = WsServer::bind((host.as_str(), port), session_config(&tracker, cadence)?)?;
            log::warn!("listening on ws://{}", server.local_addr()?);
            server.serve(None)?;
        }
        Command::Simulate(args) => {
            let script = generate(&args.config()?)?;
            match &args.out {
                Some(path) => write_script(&script, File::create(path).with_context(|| path.display().to_string())?)?,
                None => write_script(&script, io::stdout().lock())?,
            }
        }
        Command::Replay {
            script,
            tracker,
            cadence,
            every_note,
        } => {
            let cfg = tracker.config()?;
            let loaded = load_script(&script).with_context(|| format!("reading {}", script.display()))?;
            let trigger = if every_note {
                Trigger::EveryNote
            } else {
                Trigger::Cadence(cadence)
            };
            let trace = replay(&loaded, trigger, &cfg)?;
            let mut out = BufWriter::new(io::stdout().lock());
            for entry in &trace.entries {
                serde_json::to_writer(&mut out, entry)?;
                writeln!(out)?;
            }
            out.flush()?;
            eprintln!("{} estimates, {} warm-up ticks", trace.len(), trace.warmup_skipped);
            if !trace.is_empty() && trace.entries.iter().all(|e| e.truth.is_some()) {
                if let Ok(m) = score_run(&trace, &loaded.measure_onsets()) {
                    eprintln!(
                        "T-AC {:.1}  M-AC {:.1}  P {:.1}  R {:.1}",
                        m.t_ac, m.m_ac, m.precision, m.recall
                    );
                }
            }
        }
        Command::Bench { tracker, reps, out } => {
            // The note cap would flatten the latency curve.
            let cfg = TrackerConfig {
                max_notes: 0,
                ..tracker.config()?
            };
            let rows = run_experiment_1(&LATENCY_NOTE_COUNTS, reps, &cfg)?;
            let records: Vec<ReportRecord> = rows
                .into_iter()
                .map(|report| ReportRecord::Latency {
                    experiment: "latency".into(),
                    report,
                })
                .collect();
            emit(&records, out.as_deref())?;
        }
        Command::Eval {
            experiment,
            reps,
            seed,
            out,
            tracker,
        } => {
            let cfg = tracker.config()?;
            if reps == 0 {
                bail!("--reps must be at least 1");
            }
            let records = match experiment {
                2 => {
                    let r = run_experiment_2(
                        &SteadyTempoPlan {
                            reps,
                            seed,
                            ..Default::default()
                        },
                        &cfg,
                    )?;
                    r.by_sigma
                        .into_iter()
                        .chain(r.by_tempo)
                        .chain(r.cells)
                        .map(|report| ReportRecord::Metrics {
                            experiment: "steady-tempo".into(),
                            report,
                        })
                        .collect()
                }
                3 => run_experiment_3(
                    &SuddenChangePlan {
                        reps,
                        seed,
                        ..Default::default()
                    },
                    &cfg,
                )?
                .into_iter()
                .map(|report| ReportRecord::Adaptation {
                    experiment: "sudden-change".into(),
                    report,
                })
                .collect(),
                _ => run_experiment_4(
                    &GradualChangePlan {
                        reps,
                        seed,
                        ..Default::default()
                    },
                    &cfg,
                )?
                .into_iter()
                .map(|report| ReportRecord::Metrics {
                    experiment: "tempo-ramp".into(),
                    report,
                })
                .collect::<Vec<_>>(),
            };
            emit(&records, out.as_deref())?;
        }
    }
    Ok(())
}

fn session_config(tracker: &TrackerArgs, cadence: f64) -> Result<SessionConfig> {
    if cadence.is_nan() || cadence < 0.0 {
        bail!("--cadence must be >= 0");
    }
    Ok(SessionConfig {
        tracker: tracker.config()?,
        cadence_ms: cadence,
        ..Default::default()
    })
}

/// Prints the table, and writes PREFIX.jsonl and PREFIX.tsv when a prefix is given.
fn emit(records: &[ReportRecord], prefix: Option<&Path>) -> Result<()> {
    write_table(records, io::stdout().lock())?;
    if let Some(prefix) = prefix {
        for (ext, jsonl) in [("jsonl", true), ("tsv", false)] {
            let path = prefix.with_extension(ext);
            let mut file = BufWriter::new(File::create(&path).with_context(|| path.display().to_string())?);
            if jsonl {
                write_jsonl(records, &mut file)?;
            } else {
                write_table(records, &mut file)?;
            }
            file.flush()?;
        }
    }
    Ok(())
}
