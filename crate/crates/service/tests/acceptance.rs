//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails at the end if any criterion failed.
//!
//! Run with `cargo test -p pulsetrack-service --test acceptance -- --nocapture`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use pulsetrack::experiments::{
    run_experiment_1, run_experiment_2, run_experiment_3, run_experiment_4, run_seed, simulate_run, GradualChangePlan,
    SteadyTempoPlan, SuddenChange, SuddenChangePlan, LATENCY_NOTE_COUNTS,
};
use pulsetrack::kernel::{gaussify_eval, parncutt_salience};
use pulsetrack::metrics::tempo_score;
use pulsetrack::simulator::{generate, SimulationConfig};
use pulsetrack::tracker::{estimate_beat, generate_prototype, trim_window};
use pulsetrack::{analyze, KernelConfig, Meter, NoteEventSet, TrackerConfig};
use pulsetrack_service::{EstimateRecord, ManualClock, MonotonicClock, Outbound, Session, SessionConfig, TickOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn parncutt() -> Outcome {
    let k = KernelConfig::default();
    let p = |t: f64| parncutt_salience(t, &k).unwrap();
    let e2 = (-2.0f64).exp();
    let pass = p(500.0) == 1.0 && (p(250.0) - e2).abs() < 1e-12 && (p(1000.0) - e2).abs() < 1e-12;
    outcome(
        pass,
        format!(
            "P(500)={} P(250)={:.15} P(1000)={:.15} e^-2={e2:.15}",
            p(500.0),
            p(250.0),
            p(1000.0)
        ),
    )
}

fn gaussification_peaks(rng: &mut ChaCha8Rng) -> Outcome {
    let cfg = KernelConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        // Neighbours at least 60 sigma away leave the peak untouched.
        let n = rng.random_range(1..=8);
        let mut t = rng.random_range(-1e5..1e5);
        let mut pairs = Vec::new();
        for _ in 0..n {
            pairs.push((t, rng.random_range(0.01..=1.0)));
            t += rng.random_range(1500.0..5000.0);
        }
        let events = NoteEventSet::from_pairs(pairs.clone()).unwrap();
        for (ti, vi) in pairs {
            worst = worst.max((gaussify_eval(&events, ti, &cfg) - vi).abs());
        }
    }
    outcome(worst < 1e-9, format!("1000 cases, max |G(t_i) - v_i| = {worst:.2e}"))
}

fn prototype_sums(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let beat = rng.random_range(100.0..2000.0);
        for meter in [Meter::Three, Meter::Four] {
            let sum: f64 = generate_prototype(meter.beats(), beat)
                .unwrap()
                .velocities()
                .iter()
                .sum();
            worst = worst.max((sum - 3.6).abs());
        }
    }
    outcome(
        worst < 1e-12,
        format!("200 beats x 2 meters, max |sum - 3.6| = {worst:.2e}"),
    )
}

/// Salience-weighted autocorrelation recomputed with plain loops and no cutoff.
fn naive_argmax(events: &NoteEventSet, cfg: &TrackerConfig) -> f64 {
    let two_var = 2.0 * cfg.kernel.sigma * cfg.kernel.sigma;
    let ag = |lag: f64| {
        let mut s = 0.0;
        for (ti, vi) in events.iter() {
            for (tj, vj) in events.iter() {
                let d = lag - (ti - tj);
                s += vi * vj * (-d * d / two_var).exp();
            }
        }
        s
    };
    let norm = ag(0.0);
    let (mut best, mut best_score) = (0.0, f64::NEG_INFINITY);
    for lag in 100..=2000 {
        let lag = lag as f64;
        let p = (-2.0 * (lag / cfg.kernel.spontaneous_tempo).log2().powi(2)).exp();
        let score = ag(lag) / norm * p;
        if score > best_score {
            (best, best_score) = (lag, score);
        }
    }
    best
}

fn oracle_windows(rng: &mut ChaCha8Rng) -> Outcome {
    let cfg = TrackerConfig::default();
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for case in 0..200 {
        let n = rng.random_range(2..=25);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..cfg.window), rng.random_range(0.05..=1.0)))
            .collect();
        let events = trim_window(&NoteEventSet::from_pairs(pairs).unwrap(), cfg.window, cfg.window);
        let got = estimate_beat(&events, &cfg).unwrap().beat;
        let want = naive_argmax(&events, &cfg);
        if got != want {
            mismatches.push(format!("case {case}: {got} vs {want}"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "200 windows, {} mismatches {:?}, {elapsed:.2?}",
            mismatches.len(),
            mismatches
        ),
    )
}

fn clean_grid() -> Outcome {
    let cfg = TrackerConfig::default();
    let (mut hits, mut total) = (0usize, 0usize);
    let mut rows = Vec::new();
    for beat in [300.0, 375.0, 428.0, 500.0, 600.0, 750.0, 1000.0] {
        let (mut h, mut n) = (0, 0);
        for rep in 0..50 {
            let sim = SimulationConfig {
                beat,
                sigma_err: 0.0,
                rng_seed: run_seed(2019, beat as u64, rep),
                ..Default::default()
            };
            for e in &simulate_run(&sim, &cfg).unwrap().trace.entries {
                n += 1;
                h += (tempo_score(e.estimate.beat.beat, beat) > 0) as usize;
            }
        }
        rows.push(format!("{beat}:{:.1}%", 100.0 * h as f64 / n as f64));
        hits += h;
        total += n;
    }
    let share = hits as f64 / total as f64;
    outcome(
        share >= 0.95,
        format!(
            "{:.2}% of {total} estimates scored 75 or 100 [{}]",
            100.0 * share,
            rows.join(" ")
        ),
    )
}

fn experiment_1() -> Outcome {
    let cfg = TrackerConfig {
        max_notes: 0,
        ..Default::default()
    };
    let rows = run_experiment_1(&LATENCY_NOTE_COUNTS, 50, &cfg).unwrap();
    println!("  notes  mean_ms  sd_ms  %sd");
    for r in &rows {
        println!(
            "  {:>5}  {:>7.3}  {:>5.3}  {:>4.1}",
            r.notes, r.mean_ms, r.sd_ms, r.pct_sd
        );
    }
    let at = |n: usize| rows.iter().find(|r| r.notes == n).unwrap().mean_ms;
    let ratio = at(80) / at(40);
    outcome(
        (3.0..=6.0).contains(&ratio) && at(45) < 333.0,
        format!("latency(80)/latency(40) = {ratio:.2}, latency(45) = {:.3} ms", at(45)),
    )
}

fn experiment_2() -> Outcome {
    let r = run_experiment_2(
        &SteadyTempoPlan {
            reps: 20,
            ..Default::default()
        },
        &TrackerConfig::default(),
    )
    .unwrap();
    for m in r.by_sigma.iter().chain(&r.by_tempo) {
        println!(
            "  {}  T-AC {:5.1}  M-AC {:5.1}",
            m.labels.render(),
            m.t_ac.mean,
            m.m_ac.mean
        );
    }
    let t: Vec<f64> = r.by_sigma.iter().map(|m| m.t_ac.mean).collect();
    let rises: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    let trend = rises.is_empty() || (rises.len() == 1 && rises[0] <= 3.0);
    let best = r.by_tempo.iter().map(|m| m.t_ac.mean).fold(f64::NEG_INFINITY, f64::max);
    let at_120 = r
        .by_tempo
        .iter()
        .find(|m| m.labels.beat_ms == Some(500.0))
        .unwrap()
        .t_ac
        .mean;
    let min_mac = r.by_sigma.iter().map(|m| m.m_ac.mean).fold(f64::INFINITY, f64::min);
    let low: Vec<String> = r
        .by_sigma
        .iter()
        .filter(|m| m.m_ac.mean < 75.0)
        .map(|m| format!("sigma {}: {:.1}", m.labels.sigma_err.unwrap(), m.m_ac.mean))
        .collect();
    println!("  T-AC trend ok: {trend}  120 bpm {at_120:.1} vs max {best:.1}  M-AC min {min_mac:.1}");
    outcome(
        trend && at_120 >= best - 5.0 && min_mac >= 75.0,
        format!(
            "T-AC by sigma {:.1} -> {:.1} (rises {rises:.1?}); 120 bpm {at_120:.1} (max {best:.1}); M-AC below 75: {low:?}",
            t[0],
            t[t.len() - 1]
        ),
    )
}

fn experiment_3() -> Outcome {
    let plan = SuddenChangePlan {
        changes: SuddenChangePlan::meter_changes(&[500.0]),
        reps: 20,
        ..Default::default()
    };
    let reports = run_experiment_3(&plan, &TrackerConfig::default()).unwrap();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (change, r) in plan.changes.iter().zip(&reports) {
        let SuddenChange::Meter { from, to, .. } = change else {
            unreachable!()
        };
        parts.push(format!(
            "{from}->{to}: {:.2} measures ({} unadapted)",
            r.measures, r.unadapted
        ));
        worst = worst.max(r.measures);
    }
    outcome(worst <= 7.0, parts.join(", "))
}

fn experiment_4() -> Outcome {
    let rows = run_experiment_4(
        &GradualChangePlan {
            reps: 20,
            ..Default::default()
        },
        &TrackerConfig::default(),
    )
    .unwrap();
    for m in &rows {
        println!(
            "  {}  T-AC {:5.1}  M-AC {:5.1}  runs {}",
            m.labels.render(),
            m.t_ac.mean,
            m.m_ac.mean,
            m.runs
        );
    }
    let (first, last) = (rows[0].t_ac.mean, rows[rows.len() - 1].t_ac.mean);
    outcome(
        first - last >= 20.0,
        format!("T-AC step 0 {first:.1}, step 5 {last:.1}, gap {:.1}", first - last),
    )
}

fn frozen_time() -> Outcome {
    // Bit-identical estimate for the snapshot taken at tick time.
    let cfg = SessionConfig {
        cadence_ms: 0.0,
        ..Default::default()
    };
    let clock = Arc::new(ManualClock::new(12_000.0));
    let session = Session::new(cfg.clone(), clock.clone()).unwrap();
    let rx = session.subscribe();
    let script = generate(&SimulationConfig {
        sigma_err: 8.0,
        rng_seed: 5,
        ..Default::default()
    })
    .unwrap();
    for (t, v) in script.events.iter().filter(|&(t, _)| t <= 12_000.0) {
        session.ingest(Some(t), v).unwrap();
    }
    let snapshot = session.snapshot(12_000.0);
    session.tick(None);
    clock.advance(400.0);
    for (t, v) in script.events.iter().filter(|&(t, _)| t > 12_000.0) {
        session.ingest(Some(t), v).unwrap();
    }
    let Ok(Outbound::Estimate(got)) = rx.recv_timeout(Duration::from_secs(60)) else {
        return outcome(false, "no estimate published");
    };
    let expected = analyze(&snapshot, 12_000.0, &cfg.tracker).unwrap();
    let again = analyze(&snapshot, 12_000.0, &cfg.tracker).unwrap();
    let identical = got == EstimateRecord::new(&expected, got.stale)
        && got.clarity.to_bits() == expected.beat.clarity.to_bits()
        && got.next_measure_onset_ms.to_bits() == expected.next_measure_onset.to_bits()
        && again == expected;

    // Ingest latency while a long analysis runs on the worker.
    let heavy = SessionConfig {
        tracker: TrackerConfig {
            max_notes: 0,
            ..Default::default()
        },
        cadence_ms: 0.0,
        ..Default::default()
    };
    let session = Session::new(heavy, Arc::new(MonotonicClock::new())).unwrap();
    for i in 0..1500 {
        session
            .ingest(Some(i as f64 * 4.0), 0.5 + 0.25 * (i % 3) as f64)
            .unwrap();
    }
    assert_eq!(session.tick(Some(6000.0)), TickOutcome::Started);
    let (mut worst, mut during) = (Duration::ZERO, 0);
    while session.is_busy() && during < 1000 {
        let start = Instant::now();
        session.ingest(Some(6000.0 + during as f64), 0.8).unwrap();
        worst = worst.max(start.elapsed());
        during += 1;
        std::thread::sleep(Duration::from_micros(200));
    }
    session.wait_idle(Duration::from_secs(120));
    outcome(
        identical && during >= 20 && worst < Duration::from_millis(1),
        format!("bit-identical: {identical}; {during} ingests during analysis, slowest {worst:?}"),
    )
}

fn next_onsets(rng: &mut ChaCha8Rng) -> Outcome {
    let cfg = TrackerConfig::default();
    let (mut checked, mut bad) = (0, 0);
    while checked < 10_000 {
        let beat = rng.random_range(250.0..1000.0);
        let sim = SimulationConfig {
            beat,
            meter: if rng.random_bool(0.5) {
                Meter::Four
            } else {
                Meter::Three
            },
            sigma_err: rng.random_range(0.0..25.0),
            steps: 64,
            rng_seed: rng.random(),
            ..Default::default()
        };
        let script = generate(&sim).unwrap();
        let now = rng.random_range(0.0..script.duration() + 2000.0);
        if let Ok(est) = analyze(&script.events.up_to(now), now, &cfg) {
            checked += 1;
            bad += !(est.next_measure_onset > now && est.next_measure_onset <= now + est.measure) as usize;
        }
    }
    outcome(
        bad == 0,
        format!("{checked} analyses, {bad} predictions outside (now, now + measure]"),
    )
}

#[test]
fn acceptance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2019);
    let mut failed = Vec::new();
    let mut run = |name: &str, check: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = check();
        println!(
            "{} {name}: {} ({:.1?})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed()
        );
        if !o.pass {
            failed.push(name.to_string());
        }
    };
    run("parncutt-salience", &mut parncutt);
    run("gaussification-peak", &mut || gaussification_peaks(&mut rng));
    run("prototype-sums", &mut || prototype_sums(&mut rng));
    run("oracle-equivalence", &mut || oracle_windows(&mut rng));
    run("next-measure-onset-range", &mut || next_onsets(&mut rng));
    run("frozen-time", &mut frozen_time);
    run("latency-scaling", &mut experiment_1);
    run("clean-grid-beat", &mut clean_grid);
    run("sudden-meter-change", &mut experiment_3);
    run("tempo-ramp-gap", &mut experiment_4);
    run("steady-tempo-trends", &mut experiment_2);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
