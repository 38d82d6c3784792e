use proptest::prelude::*;
use pulsetrack::experiments::{run_experiment_1, simulate_run, LATENCY_NOTE_COUNTS};
use pulsetrack::metrics::{
    onset_precision_recall, read_jsonl, score_run, tempo_score, write_jsonl, write_table, CellLabels, MetricsReport,
    ReportRecord, RunMetrics,
};
use pulsetrack::script::{read_script, replay, write_script, Trigger};
use pulsetrack::simulator::{generate, SimulationConfig};
use pulsetrack::TrackerConfig;

#[test]
fn octave_errors_score_75() {
    for beat in [300.0, 500.0, 750.0] {
        assert_eq!(tempo_score(beat, beat), 100);
        assert_eq!(tempo_score(2.0 * beat, beat), 75);
        assert_eq!(tempo_score(beat / 2.0, beat), 75);
        assert_eq!(tempo_score(beat * 1.5, beat), 0);
    }
    assert_eq!(tempo_score(510.0, 500.0), 100);
    assert_eq!(tempo_score(510.5, 500.0), 0);
}

proptest! {
    #[test]
    fn shifted_truth_matches_nothing(
        count in 2usize..40,
        spacing in 500.0f64..3000.0,
        shift in 50.001f64..400.0,
    ) {
        // Spacing exceeds shift + tolerance, so the shifted copy cannot reach a neighbour.
        let grid: Vec<f64> = (0..count).map(|i| i as f64 * spacing).collect();
        let predicted: Vec<f64> = grid.iter().map(|t| t + shift).collect();
        let pr = onset_precision_recall(&predicted, &grid).unwrap();
        prop_assert_eq!(pr.precision, 0.0);
        prop_assert_eq!(pr.recall, 0.0);
    }

    #[test]
    fn run_metrics_are_percentages(seed in 0u64..1000, sigma_err in 0.0f64..25.0, beat in 300.0f64..1000.0) {
        let run = simulate_run(
            &SimulationConfig { beat, sigma_err, rng_seed: seed, ..Default::default() },
            &TrackerConfig::default(),
        ).unwrap();
        let m = score_run(&run.trace, &run.script.measure_onsets()).unwrap();
        for v in [m.t_ac, m.m_ac, m.precision, m.recall] {
            prop_assert!((0.0..=100.0).contains(&v), "{m:?}");
        }
    }
}

#[test]
fn exact_predictions_score_full_marks() {
    let truth = [0.0, 2000.0, 4000.0, 6000.0];
    let pr = onset_precision_recall(&[2000.0, 4010.0, 5960.0], &truth).unwrap();
    assert_eq!(pr.precision, 100.0);
    assert_eq!(pr.recall, 100.0);
    let pr = onset_precision_recall(&[2000.0, 3000.0], &truth).unwrap();
    assert_eq!(pr.precision, 50.0);
    assert!((pr.recall - 100.0 / 3.0).abs() < 1e-12);
}

#[test]
fn reports_round_trip() {
    let runs = [
        RunMetrics {
            t_ac: 80.0,
            m_ac: 90.0,
            precision: 50.5,
            recall: 70.25,
        },
        RunMetrics {
            t_ac: 60.0,
            m_ac: 100.0,
            precision: 1.0 / 3.0,
            recall: 0.1,
        },
    ];
    let labels = CellLabels {
        scope: "cell".into(),
        beat_ms: Some(60_000.0 / 140.0),
        sigma_err: Some(2.5),
        schedule: None,
    };
    let latency = run_experiment_1(
        &LATENCY_NOTE_COUNTS[..2],
        3,
        &TrackerConfig {
            max_notes: 0,
            ..Default::default()
        },
    )
    .unwrap();
    let mut records = vec![ReportRecord::Metrics {
        experiment: "steady-tempo".into(),
        report: MetricsReport::from_runs(labels, &runs),
    }];
    records.extend(latency.into_iter().map(|report| ReportRecord::Latency {
        experiment: "latency".into(),
        report,
    }));

    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), records);

    let mut table = Vec::new();
    write_table(&records, &mut table).unwrap();
    let table = String::from_utf8(table).unwrap();
    assert_eq!(table.lines().next(), Some("experiment\tcell\tmetric\tmean\tsd"));
    assert_eq!(table.lines().count(), 1 + 4 + 2);
}

#[test]
fn cadence_replay_counts_ticks() {
    let script = generate(&SimulationConfig {
        sigma_err: 8.0,
        rng_seed: 31,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrackerConfig::default();
    let trace = replay(&script, Trigger::Cadence(500.0), &cfg).unwrap();
    let ticks = (script.duration() / 500.0).floor() as usize;
    assert_eq!(trace.len() + trace.warmup_skipped, ticks);
    assert!(trace.warmup_skipped <= 1);
    assert!(trace.entries.iter().all(|e| e.truth.is_some()));

    let mut buf = Vec::new();
    write_script(&script, &mut buf).unwrap();
    let again = replay(&read_script(buf.as_slice()).unwrap(), Trigger::Cadence(500.0), &cfg).unwrap();
    assert_eq!(again, trace);
}

#[test]
fn script_files_replay_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("take.jsonl");
    let script = generate(&SimulationConfig {
        rng_seed: 4,
        ..Default::default()
    })
    .unwrap();
    pulsetrack::script::save_script(&script, &path).unwrap();
    let trace = pulsetrack::script::replay_file(&path, 333.0, &TrackerConfig::default()).unwrap();
    assert!(!trace.is_empty());
    std::fs::write(&path, "{\"type\":\"note\",\"t\":1}\n").unwrap();
    assert!(pulsetrack::script::replay_file(&path, 333.0, &TrackerConfig::default()).is_err());
}
