//! Simulation-based evaluation: latency scaling, steady tempo, sudden
//! changes and gradual tempo ramps.
//!
//! Every run draws its own seed from the plan's base seed, so cells are
//! independent and results do not depend on scheduling order.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::events::NoteEventSet;
use crate::metrics::{
    score_run, tempo_score, AdaptationReport, CellLabels, LatencyReport, MetricError, MetricsReport, RunMetrics, Stat,
};
use crate::script::{replay, EstimateTrace, Trigger};
use crate::simulator::{generate, ChangeSchedule, PerformanceScript, SimulationConfig, SimulationError};
use crate::tracker::{analyze, Meter, TrackerConfig, TrackerError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("run with seed {seed}: {source}")]
    Metric { seed: u64, source: MetricError },
}

/// Derives an independent run seed (splitmix64 finalizer over the inputs).
pub fn run_seed(base: u64, cell: u64, rep: u64) -> u64 {
    let mut z = base
        .wrapping_add(cell.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(rep.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A simulated performance replayed with an estimate after every note.
pub struct SimulatedRun {
    pub script: PerformanceScript,
    pub trace: EstimateTrace,
}

pub fn simulate_run(sim: &SimulationConfig, cfg: &TrackerConfig) -> Result<SimulatedRun, ExperimentError> {
    let script = generate(sim)?;
    let trace = replay(&script, Trigger::EveryNote, cfg)?;
    Ok(SimulatedRun { script, trace })
}

fn score(run: &SimulatedRun, seed: u64) -> Result<RunMetrics, ExperimentError> {
    score_run(&run.trace, &run.script.measure_onsets()).map_err(|source| ExperimentError::Metric { seed, source })
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

/// `notes` evenly spaced onsets filling `[0, window)`, analysed at `window`.
pub fn regular_rhythm(notes: usize, window: f64) -> (NoteEventSet, f64) {
    let spacing = window / notes as f64;
    let events = NoteEventSet::from_pairs((0..notes).map(|i| (i as f64 * spacing, 1.0))).expect("finite regular grid");
    (events, window)
}

pub const LATENCY_NOTE_COUNTS: [usize; 11] = [30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80];

/// Wall-clock time of a full analysis per note count. Pass a config with
/// `max_notes = 0`, otherwise the cap flattens the curve.
pub fn run_experiment_1(
    note_counts: &[usize],
    reps: usize,
    cfg: &TrackerConfig,
) -> Result<Vec<LatencyReport>, ExperimentError> {
    let mut rows = Vec::with_capacity(note_counts.len());
    for &notes in note_counts {
        let (events, now) = regular_rhythm(notes, cfg.window);
        analyze(&events, now, cfg)?;
        let mut samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            let est = analyze(&events, now, cfg)?;
            samples.push(start.elapsed().as_secs_f64() * 1000.0);
            std::hint::black_box(est);
        }
        let stat = Stat::of(&samples);
        rows.push(LatencyReport {
            notes,
            samples: samples.len(),
            mean_ms: stat.mean,
            sd_ms: stat.sd,
            pct_sd: 100.0 * stat.sd / stat.mean,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Steady tempo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SteadyTempoPlan {
    /// Quarter-note beats, ms.
    pub beats: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub reps: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SteadyTempoPlan {
    fn default() -> Self {
        Self {
            beats: (0..8).map(|i| 60_000.0 / (60.0 + 20.0 * i as f64)).collect(),
            sigmas: vec![0.0, 2.5, 5.0, 7.5, 10.0, 15.0, 20.0, 25.0],
            reps: 50,
            steps: 160,
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyTempoResult {
    pub cells: Vec<MetricsReport>,
    /// One row per sigma, pooled over tempos.
    pub by_sigma: Vec<MetricsReport>,
    /// One row per tempo, pooled over sigmas.
    pub by_tempo: Vec<MetricsReport>,
}

pub fn run_experiment_2(plan: &SteadyTempoPlan, cfg: &TrackerConfig) -> Result<SteadyTempoResult, ExperimentError> {
    let cells: Vec<(usize, f64, f64)> = plan
        .beats
        .iter()
        .flat_map(|&b| plan.sigmas.iter().map(move |&s| (b, s)))
        .enumerate()
        .map(|(i, (b, s))| (i, b, s))
        .collect();
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .flat_map(|&(i, _, _)| (0..plan.reps as u64).map(move |r| (i, r)))
        .collect();

    let results: Vec<(usize, RunMetrics)> = jobs
        .par_iter()
        .map(|&(cell, rep)| {
            let (_, beat, sigma_err) = cells[cell];
            let seed = run_seed(plan.seed, cell as u64, rep);
            let sim = SimulationConfig {
                beat,
                meter: Meter::Four,
                sigma_err,
                steps: plan.steps,
                rng_seed: seed,
                ..Default::default()
            };
            let run = simulate_run(&sim, cfg)?;
            Ok((cell, score(&run, seed)?))
        })
        .collect::<Result<_, ExperimentError>>()?;

    let pool = |pred: &dyn Fn(f64, f64) -> bool| -> Vec<RunMetrics> {
        results
            .iter()
            .filter(|(c, _)| pred(cells[*c].1, cells[*c].2))
            .map(|(_, m)| *m)
            .collect()
    };
    let labels = |scope: &str, beat: Option<f64>, sigma: Option<f64>| CellLabels {
        scope: scope.into(),
        beat_ms: beat,
        sigma_err: sigma,
        schedule: None,
    };

    Ok(SteadyTempoResult {
        cells: cells
            .iter()
            .map(|&(_, b, s)| {
                MetricsReport::from_runs(labels("cell", Some(b), Some(s)), &pool(&|x, y| x == b && y == s))
            })
            .collect(),
        by_sigma: plan
            .sigmas
            .iter()
            .map(|&s| MetricsReport::from_runs(labels("by_sigma", None, Some(s)), &pool(&|_, y| y == s)))
            .collect(),
        by_tempo: plan
            .beats
            .iter()
            .map(|&b| MetricsReport::from_runs(labels("by_tempo", Some(b), None), &pool(&|x, _| x == b)))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Sudden changes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SuddenChange {
    /// Meter switch at a fixed beat.
    Meter { from: Meter, to: Meter, beat: f64 },
    /// Beat changes from `beat` to `beat + delta` in 4/4.
    Tempo { beat: f64, delta: f64 },
    /// Nothing changes.
    Control { beat: f64, meter: Meter },
}

impl SuddenChange {
    fn label(&self) -> String {
        match *self {
            SuddenChange::Meter { from, to, .. } => format!("meter {from}->{to}"),
            SuddenChange::Tempo { delta, .. } => format!("tempo {delta:+}ms"),
            SuddenChange::Control { meter, .. } => format!("control {meter}"),
        }
    }

    fn initial_beat(&self) -> f64 {
        match *self {
            SuddenChange::Meter { beat, .. }
            | SuddenChange::Tempo { beat, .. }
            | SuddenChange::Control { beat, .. } => beat,
        }
    }

    /// Beat and meter after the change.
    fn target(&self) -> (f64, Meter) {
        match *self {
            SuddenChange::Meter { to, beat, .. } => (beat, to),
            SuddenChange::Tempo { beat, delta } => (beat + delta, Meter::Four),
            SuddenChange::Control { beat, meter } => (beat, meter),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuddenChangePlan {
    pub changes: Vec<SuddenChange>,
    pub reps: usize,
    pub sigma_err: f64,
    pub measures_before: usize,
    /// Measures simulated after the change; runs that have not adapted by the
    /// end are counted at this cap.
    pub measures_after: usize,
    /// Correct estimates needed after the change (not necessarily consecutive).
    pub required_hits: usize,
    pub seed: u64,
}

impl SuddenChangePlan {
    pub fn meter_changes(beats: &[f64]) -> Vec<SuddenChange> {
        let mut out = Vec::new();
        for (from, to) in [(Meter::Four, Meter::Three), (Meter::Three, Meter::Four)] {
            out.extend(beats.iter().map(|&beat| SuddenChange::Meter { from, to, beat }));
        }
        out
    }

    pub fn tempo_changes(deltas: &[f64]) -> Vec<SuddenChange> {
        deltas
            .iter()
            .map(|&delta| SuddenChange::Tempo { beat: 500.0, delta })
            .collect()
    }
}

impl Default for SuddenChangePlan {
    fn default() -> Self {
        let mut changes = Self::meter_changes(&[375.0, 500.0, 750.0]);
        changes.extend(Self::tempo_changes(&[
            -50.0, 50.0, -100.0, 100.0, -150.0, 150.0, -200.0, 200.0,
        ]));
        Self {
            changes,
            reps: 50,
            sigma_err: 10.0,
            measures_before: ChangeSchedule::DEFAULT_AFTER_MEASURES,
            measures_after: 20,
            required_hits: 10,
            seed: 2019,
        }
    }
}

/// Time from `change_time` until the `required`-th correct estimate made at
/// or after it. `None` if the trace never gets there.
pub fn adaptation_time(trace: &EstimateTrace, change: &SuddenChange, change_time: f64, required: usize) -> Option<f64> {
    if let SuddenChange::Control { .. } = change {
        return Some(0.0);
    }
    let (beat, meter) = change.target();
    let correct = |e: &&crate::script::TraceEntry| match change {
        SuddenChange::Meter { .. } => e.estimate.meter.meter == meter,
        _ => tempo_score(e.estimate.beat.beat, beat) == 100,
    };
    trace
        .entries
        .iter()
        .filter(|e| e.at >= change_time)
        .filter(correct)
        .nth(required.checked_sub(1)?)
        .map(|e| e.at - change_time)
}

fn sudden_sim(change: &SuddenChange, plan: &SuddenChangePlan, seed: u64) -> SimulationConfig {
    let after = plan.measures_before;
    let (meter, schedule) = match *change {
        SuddenChange::Meter { from, to, .. } => (
            from,
            ChangeSchedule::SuddenMeter {
                after_measures: after,
                new_meter: to,
            },
        ),
        SuddenChange::Tempo { beat, delta } => (
            Meter::Four,
            ChangeSchedule::SuddenTempo {
                after_measures: after,
                new_beat: beat + delta,
            },
        ),
        SuddenChange::Control { meter, .. } => (meter, ChangeSchedule::None),
    };
    let (_, new_meter) = change.target();
    SimulationConfig {
        beat: change.initial_beat(),
        meter,
        sigma_err: plan.sigma_err,
        steps: after * meter.sixteenths() + plan.measures_after * new_meter.sixteenths(),
        schedule,
        rng_seed: seed,
        ..Default::default()
    }
}

pub fn run_experiment_3(
    plan: &SuddenChangePlan,
    cfg: &TrackerConfig,
) -> Result<Vec<AdaptationReport>, ExperimentError> {
    let jobs: Vec<(usize, u64)> = (0..plan.changes.len())
        .flat_map(|c| (0..plan.reps as u64).map(move |r| (c, r)))
        .collect();
    let results: Vec<(usize, Option<f64>, f64)> = jobs
        .par_iter()
        .map(|&(c, rep)| {
            let change = &plan.changes[c];
            let sim = sudden_sim(change, plan, run_seed(plan.seed, c as u64, rep));
            let run = simulate_run(&sim, cfg)?;
            let onsets = run.script.measure_onsets();
            let change_time = onsets.get(plan.measures_before).copied().unwrap_or(0.0);
            let cap = run.script.duration() - change_time;
            Ok((
                c,
                adaptation_time(&run.trace, change, change_time, plan.required_hits),
                cap,
            ))
        })
        .collect::<Result<_, ExperimentError>>()?;

    Ok(plan
        .changes
        .iter()
        .enumerate()
        .map(|(c, change)| {
            let mine: Vec<_> = results.iter().filter(|r| r.0 == c).collect();
            let times: Vec<f64> = mine.iter().map(|r| r.1.unwrap_or(r.2)).collect();
            let time_ms = Stat::of(&times);
            let (beat, meter) = change.target();
            AdaptationReport {
                labels: CellLabels {
                    scope: "cell".into(),
                    beat_ms: Some(change.initial_beat()),
                    sigma_err: Some(plan.sigma_err),
                    schedule: Some(change.label()),
                },
                runs: mine.len(),
                time_ms,
                measures: time_ms.mean / (beat * meter.beats() as f64),
                unadapted: mine.iter().filter(|r| r.1.is_none()).count(),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Gradual change
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradualChangePlan {
    /// Beat increment per sixteenth during the ramp measure, ms (0 = baseline).
    pub increments: Vec<f64>,
    /// Runs per direction.
    pub reps: usize,
    pub sigma_err: f64,
    pub beat: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for GradualChangePlan {
    fn default() -> Self {
        Self {
            increments: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            reps: 50,
            sigma_err: 10.0,
            beat: 500.0,
            steps: 160,
            seed: 2019,
        }
    }
}

/// Up and down ramps are pooled into one row per increment.
pub fn run_experiment_4(plan: &GradualChangePlan, cfg: &TrackerConfig) -> Result<Vec<MetricsReport>, ExperimentError> {
    let jobs: Vec<(usize, f64, u64)> = plan
        .increments
        .iter()
        .enumerate()
        .flat_map(|(c, _)| {
            [1.0, -1.0]
                .into_iter()
                .flat_map(move |sign| (0..plan.reps as u64).map(move |r| (c, sign, r)))
        })
        .collect();
    let results: Vec<(usize, RunMetrics)> = jobs
        .par_iter()
        .map(|&(c, sign, rep)| {
            let inc = plan.increments[c];
            let schedule = if inc == 0.0 {
                ChangeSchedule::None
            } else {
                ChangeSchedule::TempoRamp {
                    after_measures: ChangeSchedule::DEFAULT_AFTER_MEASURES,
                    increment: sign * inc,
                }
            };
            let seed = run_seed(plan.seed, (2 * c + (sign < 0.0) as usize) as u64, rep);
            let sim = SimulationConfig {
                beat: plan.beat,
                meter: Meter::Four,
                sigma_err: plan.sigma_err,
                steps: plan.steps,
                schedule,
                rng_seed: seed,
                ..Default::default()
            };
            let run = simulate_run(&sim, cfg)?;
            Ok((c, score(&run, seed)?))
        })
        .collect::<Result<_, ExperimentError>>()?;

    Ok(plan
        .increments
        .iter()
        .enumerate()
        .map(|(c, &inc)| {
            let runs: Vec<RunMetrics> = results.iter().filter(|r| r.0 == c).map(|r| r.1).collect();
            MetricsReport::from_runs(
                CellLabels {
                    scope: "cell".into(),
                    beat_ms: Some(plan.beat),
                    sigma_err: Some(plan.sigma_err),
                    schedule: Some(format!("ramp ±{inc}ms/16th")),
                },
                &runs,
            )
        })
        .collect())
}
