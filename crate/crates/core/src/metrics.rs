//! Tempo accuracy, meter accuracy and measure-onset precision/recall, plus
//! the report records the experiment runners emit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::script::EstimateTrace;

/// Tolerance for a tempo estimate to count as correct (or octave-correct), ms.
pub const TEMPO_TOLERANCE_MS: f64 = 10.0;
/// Tolerance for a predicted measure onset to match a true one, ms.
pub const ONSET_TOLERANCE_MS: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
}

/// 100 for a correct beat, 75 for half or double, 0 otherwise.
pub fn tempo_score(estimated_beat: f64, true_beat: f64) -> u8 {
    let near = |target: f64| (estimated_beat - target).abs() <= TEMPO_TOLERANCE_MS;
    if near(true_beat) {
        100
    } else if near(true_beat / 2.0) || near(true_beat * 2.0) {
        75
    } else {
        0
    }
}

/// Mean tempo score over trace entries that carry ground truth.
pub fn tempo_accuracy(trace: &EstimateTrace) -> Result<f64, MetricError> {
    let scores: Vec<f64> = trace
        .entries
        .iter()
        .filter_map(|e| e.truth.map(|t| tempo_score(e.estimate.beat.beat, t.beat) as f64))
        .collect();
    if scores.is_empty() {
        return Err(MetricError::Undefined("tempo accuracy of an empty trace"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Percentage of entries whose meter matches ground truth.
pub fn meter_accuracy(trace: &EstimateTrace) -> Result<f64, MetricError> {
    let hits: Vec<bool> = trace
        .entries
        .iter()
        .filter_map(|e| e.truth.map(|t| t.meter == e.estimate.meter.meter))
        .collect();
    if hits.is_empty() {
        return Err(MetricError::Undefined("meter accuracy of an empty trace"));
    }
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

fn within(sorted: &[f64], x: f64, tol: f64) -> bool {
    let i = sorted.partition_point(|&y| y < x - tol);
    sorted.get(i).is_some_and(|&y| y <= x + tol)
}

/// Precision over all predictions; recall over true onsets except the first,
/// which cannot be forecast. A true onset may be matched by many predictions.
pub fn onset_precision_recall(predicted: &[f64], truth: &[f64]) -> Result<PrecisionRecall, MetricError> {
    if predicted.is_empty() {
        return Err(MetricError::Undefined("precision without predictions"));
    }
    if truth.len() < 2 {
        return Err(MetricError::Undefined("recall with fewer than two measure onsets"));
    }
    let mut pred = predicted.to_vec();
    pred.sort_by(f64::total_cmp);
    let mut actual = truth.to_vec();
    actual.sort_by(f64::total_cmp);

    let hits = pred.iter().filter(|&&p| within(&actual, p, ONSET_TOLERANCE_MS)).count();
    let found = actual[1..]
        .iter()
        .filter(|&&o| within(&pred, o, ONSET_TOLERANCE_MS))
        .count();
    Ok(PrecisionRecall {
        precision: 100.0 * hits as f64 / pred.len() as f64,
        recall: 100.0 * found as f64 / (actual.len() - 1) as f64,
    })
}

/// The four metrics for one simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub t_ac: f64,
    pub m_ac: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn score_run(trace: &EstimateTrace, measure_onsets: &[f64]) -> Result<RunMetrics, MetricError> {
    let pr = onset_precision_recall(&trace.predicted_onsets(), measure_onsets)?;
    Ok(RunMetrics {
        t_ac: tempo_accuracy(trace)?,
        m_ac: meter_accuracy(trace)?,
        precision: pr.precision,
        recall: pr.recall,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, sd }
    }
}

/// Identifies an experimental cell. Unset fields are pooled over.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellLabels {
    pub scope: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beat_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
}

impl CellLabels {
    pub fn render(&self) -> String {
        let mut s = self.scope.clone();
        if let Some(b) = self.beat_ms {
            let _ = write!(s, " beat={b:.1}ms({:.0}bpm)", 60_000.0 / b);
        }
        if let Some(sig) = self.sigma_err {
            let _ = write!(s, " sigma_err={sig}");
        }
        if let Some(sch) = &self.schedule {
            let _ = write!(s, " schedule={sch}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub labels: CellLabels,
    pub runs: usize,
    pub t_ac: Stat,
    pub m_ac: Stat,
    pub precision: Stat,
    pub recall: Stat,
}

impl MetricsReport {
    pub fn from_runs(labels: CellLabels, runs: &[RunMetrics]) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            labels,
            runs: runs.len(),
            t_ac: col(|r| r.t_ac),
            m_ac: col(|r| r.m_ac),
            precision: col(|r| r.precision),
            recall: col(|r| r.recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub labels: CellLabels,
    pub runs: usize,
    pub time_ms: Stat,
    /// Mean adaptation time in measures of the new setting.
    pub measures: f64,
    /// Runs that never reached the adaptation criterion; counted at the cap.
    pub unadapted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub notes: usize,
    pub samples: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub pct_sd: f64,
}

/// One line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    Metrics {
        experiment: String,
        report: MetricsReport,
    },
    Adaptation {
        experiment: String,
        report: AdaptationReport,
    },
    Latency {
        experiment: String,
        report: LatencyReport,
    },
}

pub fn write_jsonl<W: Write>(records: &[ReportRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<ReportRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Flat table: experiment, cell, metric, mean, sd (tab separated).
pub fn write_table<W: Write>(records: &[ReportRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "experiment\tcell\tmetric\tmean\tsd")?;
    for r in records {
        let rows: Vec<(String, String, &str, f64, f64)> = match r {
            ReportRecord::Metrics { experiment, report } => {
                let cell = report.labels.render();
                [
                    ("T-AC", report.t_ac),
                    ("M-AC", report.m_ac),
                    ("P", report.precision),
                    ("R", report.recall),
                ]
                .into_iter()
                .map(|(m, s)| (experiment.clone(), cell.clone(), m, s.mean, s.sd))
                .collect()
            }
            ReportRecord::Adaptation { experiment, report } => {
                let cell = report.labels.render();
                vec![
                    (
                        experiment.clone(),
                        cell.clone(),
                        "adaptation_ms",
                        report.time_ms.mean,
                        report.time_ms.sd,
                    ),
                    (
                        experiment.clone(),
                        cell.clone(),
                        "adaptation_measures",
                        report.measures,
                        f64::NAN,
                    ),
                    (
                        experiment.clone(),
                        cell,
                        "unadapted_runs",
                        report.unadapted as f64,
                        f64::NAN,
                    ),
                ]
            }
            ReportRecord::Latency { experiment, report } => {
                vec![(
                    experiment.clone(),
                    format!("notes={}", report.notes),
                    "latency_ms",
                    report.mean_ms,
                    report.sd_ms,
                )]
            }
        };
        for (e, c, m, mean, sd) in rows {
            writeln!(out, "{e}\t{c}\t{m}\t{mean:.3}\t{sd:.3}")?;
        }
    }
    Ok(())
}
