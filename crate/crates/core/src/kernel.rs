//! Gaussification kernels: evaluation, cross-correlation, autocorrelation and
//! pulse-period salience.
//!
//! Every onset `t_i` with velocity `v_i` becomes a bump `v_i * exp(-(t - t_i)^2 / 2σ^2)`.
//! The bump is deliberately not normalized, so its peak is exactly `v_i`.
//! Correlating two such signals has a closed form: a double sum over onset
//! pairs of Gaussians centred on the pair differences.
//!
//! Terms whose exponent falls below [`CUTOFF_EXPONENT`] are skipped. On sorted
//! onsets this turns the curve routines into a banded computation. The point
//! routines and the curve routines apply the same rule in the same summation
//! order, so `correlation_curve(..)[k]` equals `correlation(.., grid.point(k), ..)`
//! bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::NoteEventSet;

/// Exponents below this contribute less than `2e-22` of a term's weight.
pub const CUTOFF_EXPONENT: f64 = -50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("salience is only defined for positive periods, got {0} ms")]
    NonPositivePeriod(f64),
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Standard deviation of the Gaussian bump, ms.
    pub sigma: f64,
    /// Spontaneous tempo `t_s`, ms. Salience peaks here.
    pub spontaneous_tempo: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma: 25.0,
            spontaneous_tempo: 500.0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(KernelError::InvalidConfig(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.spontaneous_tempo.is_finite() && self.spontaneous_tempo > 0.0) {
            return Err(KernelError::InvalidConfig(format!(
                "spontaneous tempo must be > 0, got {}",
                self.spontaneous_tempo
            )));
        }
        Ok(())
    }
}

/// Precomputed constants of the unnormalized Gaussian.
#[derive(Debug, Clone, Copy)]
struct Bump {
    neg_inv_two_var: f64,
    radius: f64,
}

impl Bump {
    fn new(cfg: &KernelConfig) -> Self {
        let two_var = 2.0 * cfg.sigma * cfg.sigma;
        Self {
            neg_inv_two_var: -1.0 / two_var,
            // |x| beyond this puts the exponent under the cutoff; padded so the
            // band never excludes a term the point routines would keep.
            radius: (-CUTOFF_EXPONENT * two_var).sqrt() + 1.0,
        }
    }

    #[inline]
    fn term(&self, weight: f64, x: f64) -> Option<f64> {
        let e = x * x * self.neg_inv_two_var;
        (e >= CUTOFF_EXPONENT).then(|| weight * e.exp())
    }
}

/// Evaluates the Gaussification of `events` at time `t`.
pub fn gaussify_eval(events: &NoteEventSet, t: f64, cfg: &KernelConfig) -> f64 {
    let bump = Bump::new(cfg);
    events.iter().filter_map(|(ti, vi)| bump.term(vi, t - ti)).sum()
}

/// Correlation of the Gaussifications of `a` and `b` at shift `t`.
pub fn correlation(a: &NoteEventSet, b: &NoteEventSet, t: f64, cfg: &KernelConfig) -> f64 {
    let bump = Bump::new(cfg);
    let mut sum = 0.0;
    for (ta, va) in a.iter() {
        for (tb, vb) in b.iter() {
            if let Some(term) = bump.term(va * vb, t - (ta - tb)) {
                sum += term;
            }
        }
    }
    sum
}

/// Autocorrelation of the Gaussification of `events` at shift `t`.
pub fn autocorrelation(events: &NoteEventSet, t: f64, cfg: &KernelConfig) -> f64 {
    correlation(events, events, t, cfg)
}

/// Pulse-period salience `exp(-2 log2(t / t_s)^2)`.
pub fn parncutt_salience(t: f64, cfg: &KernelConfig) -> Result<f64, KernelError> {
    if t.is_nan() || t <= 0.0 {
        return Err(KernelError::NonPositivePeriod(t));
    }
    let octaves = (t / cfg.spontaneous_tempo).log2();
    Ok((-2.0 * octaves * octaves).exp())
}

/// An arithmetic grid of shifts: `start, start + step, ...` (`len` points).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl LagGrid {
    /// All points `start + k * step` that do not exceed `end`.
    pub fn inclusive(start: f64, end: f64, step: f64) -> Self {
        assert!(step > 0.0, "grid step must be positive");
        let len = if end < start {
            0
        } else {
            ((end - start) / step + 1e-9).floor() as usize + 1
        };
        Self { start, step, len }
    }

    #[inline]
    pub fn point(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.point(k))
    }

    fn end(&self) -> f64 {
        self.point(self.len.saturating_sub(1))
    }
}

/// `correlation(a, b, t)` for every `t` on `grid`.
pub fn correlation_curve(a: &NoteEventSet, b: &NoteEventSet, grid: &LagGrid, cfg: &KernelConfig) -> Vec<f64> {
    let mut out = vec![0.0; grid.len];
    if grid.len == 0 {
        return out;
    }
    let bump = Bump::new(cfg);
    let (lo, hi) = (grid.start - bump.radius, grid.end() + bump.radius);
    let b_onsets = b.onsets();
    let last = grid.len as isize - 1;

    for (ta, va) in a.iter() {
        // Pair difference ta - tb must land in [lo, hi].
        let first = b_onsets.partition_point(|&tb| tb < ta - hi);
        let stop = b_onsets.partition_point(|&tb| tb <= ta - lo);
        for (tb, vb) in b.iter().take(stop).skip(first) {
            let diff = ta - tb;
            let weight = va * vb;
            let k_lo = ((diff - bump.radius - grid.start) / grid.step).floor() as isize;
            let k_hi = ((diff + bump.radius - grid.start) / grid.step).ceil() as isize;
            let (k_lo, k_hi) = (k_lo.max(0), k_hi.min(last));
            for k in k_lo..=k_hi {
                let k = k as usize;
                if let Some(term) = bump.term(weight, grid.point(k) - diff) {
                    out[k] += term;
                }
            }
        }
    }
    out
}

/// The Gaussification of `events` sampled on `grid`.
pub fn gaussify_curve(events: &NoteEventSet, grid: &LagGrid, cfg: &KernelConfig) -> Vec<f64> {
    let mut out = vec![0.0; grid.len];
    if grid.len == 0 {
        return out;
    }
    let bump = Bump::new(cfg);
    let last = grid.len as isize - 1;
    for (t, v) in events.iter() {
        let k_lo = ((t - bump.radius - grid.start) / grid.step).floor() as isize;
        let k_hi = ((t + bump.radius - grid.start) / grid.step).ceil() as isize;
        for k in k_lo.max(0)..=k_hi.min(last) {
            let k = k as usize;
            if let Some(term) = bump.term(v, grid.point(k) - t) {
                out[k] += term;
            }
        }
    }
    out
}

/// Same values as [`correlation_curve`] for a short `template`, up to
/// summation order.
///
/// Uses `CG(t) = sum_j w_j * G(t + p_j)`: when every template onset is a whole
/// number of grid steps, the events' Gaussification is sampled once on an
/// extended grid and each template point becomes a shifted read. Otherwise it
/// falls back to the pairwise computation.
pub fn template_correlation_curve(
    events: &NoteEventSet,
    template: &NoteEventSet,
    grid: &LagGrid,
    cfg: &KernelConfig,
) -> Vec<f64> {
    let shifts: Option<Vec<isize>> = template
        .onsets()
        .iter()
        .map(|&p| {
            let m = (p / grid.step).round();
            ((p - m * grid.step).abs() <= 1e-9 * p.abs().max(1.0)).then_some(m as isize)
        })
        .collect();
    let shifts = match shifts {
        Some(s) if !s.is_empty() && grid.len > 0 => s,
        _ => return correlation_curve(events, template, grid, cfg),
    };
    let lo = *shifts.iter().min().expect("non-empty");
    let hi = *shifts.iter().max().expect("non-empty");
    let sampled = LagGrid {
        start: grid.start + lo as f64 * grid.step,
        step: grid.step,
        len: grid.len + (hi - lo) as usize,
    };
    let g = gaussify_curve(events, &sampled, cfg);

    let mut out = vec![0.0; grid.len];
    for (&m, &w) in shifts.iter().zip(template.velocities()) {
        let offset = (m - lo) as usize;
        for (o, &gv) in out.iter_mut().zip(&g[offset..offset + grid.len]) {
            *o += w * gv;
        }
    }
    out
}

/// `autocorrelation(events, t)` for every `t` on `grid`.
pub fn autocorrelation_curve(events: &NoteEventSet, grid: &LagGrid, cfg: &KernelConfig) -> Vec<f64> {
    correlation_curve(events, events, grid, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(onsets: &[f64], velocities: &[f64]) -> NoteEventSet {
        NoteEventSet::new(onsets.to_vec(), velocities.to_vec()).unwrap()
    }

    fn cfg() -> KernelConfig {
        KernelConfig::default()
    }

    #[test]
    fn gaussify_peak_and_empty() {
        let one = set(&[100.0], &[0.8]);
        assert_eq!(gaussify_eval(&one, 100.0, &cfg()), 0.8);
        assert_eq!(gaussify_eval(&NoteEventSet::empty(), 42.0, &cfg()), 0.0);
        let expected = 0.8 * (-0.5f64).exp();
        assert!((gaussify_eval(&one, 125.0, &cfg()) - expected).abs() < 1e-12);
        assert!((expected - 0.485_224_527_770_107).abs() < 1e-12);
    }

    #[test]
    fn correlation_examples() {
        let v = 0.7;
        let single = set(&[0.0], &[v]);
        assert_eq!(correlation(&single, &single, 0.0, &cfg()), v * v);

        let a = set(&[0.0], &[1.0]);
        let b = set(&[500.0], &[1.0]);
        assert!((correlation(&a, &b, -500.0, &cfg()) - 1.0).abs() < 1e-12);

        let pair = set(&[0.0, 500.0], &[1.0, 1.0]);
        assert!((correlation(&pair, &pair, 0.0, &cfg()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn autocorrelation_examples() {
        let cfg = cfg();
        assert_eq!(autocorrelation(&set(&[0.0], &[1.0]), 0.0, &cfg), 1.0);
        let pair = set(&[0.0, 500.0], &[1.0, 1.0]);
        assert!((autocorrelation(&pair, 500.0, &cfg) - 1.0).abs() < 1e-12);
        let triple = set(&[0.0, 500.0, 1000.0], &[1.0, 1.0, 1.0]);
        assert!((autocorrelation(&triple, 500.0, &cfg) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn salience_examples() {
        let cfg = cfg();
        assert_eq!(parncutt_salience(500.0, &cfg).unwrap(), 1.0);
        let e2 = (-2.0f64).exp();
        assert!((parncutt_salience(250.0, &cfg).unwrap() - e2).abs() < 1e-12);
        assert!((parncutt_salience(1000.0, &cfg).unwrap() - e2).abs() < 1e-12);
        assert_eq!(
            parncutt_salience(250.0, &cfg).unwrap(),
            parncutt_salience(1000.0, &cfg).unwrap()
        );
        // exp(-2 * log2(1.5)^2), evaluated independently with mpmath.
        assert!((parncutt_salience(750.0, &cfg).unwrap() - 0.504_411_813_383_796_6).abs() < 1e-12);
        assert_eq!(parncutt_salience(0.0, &cfg), Err(KernelError::NonPositivePeriod(0.0)));
        assert!(parncutt_salience(-3.0, &cfg).is_err());
    }

    #[test]
    fn grid_is_inclusive() {
        let g = LagGrid::inclusive(100.0, 2000.0, 1.0);
        assert_eq!(g.len, 1901);
        assert_eq!(g.point(g.len - 1), 2000.0);
        let g = LagGrid::inclusive(0.0, 6000.0, 7.0);
        assert_eq!(g.point(g.len - 1), 5999.0);
        assert_eq!(LagGrid::inclusive(5.0, 4.0, 1.0).len, 0);
    }

    #[test]
    fn curve_matches_point_evaluation_bitwise() {
        let cfg = cfg();
        let a = set(&[0.0, 130.5, 480.0, 990.25, 1500.0], &[1.0, 0.2, 0.5, 0.1, 0.7]);
        let b = set(&[0.0, 500.0, 1000.0, 1500.0], &[1.0, 0.1, 0.1, 1.0]);
        let grid = LagGrid::inclusive(-300.0, 2200.0, 3.0);
        let curve = correlation_curve(&a, &b, &grid, &cfg);
        for (k, t) in grid.points().enumerate() {
            assert_eq!(curve[k], correlation(&a, &b, t, &cfg), "lag {t}");
        }
    }

    #[test]
    fn sampled_curves_match_pairwise() {
        let cfg = cfg();
        let events = set(
            &[12.5, 130.5, 480.0, 990.25, 1500.0, 2210.0],
            &[1.0, 0.2, 0.5, 0.1, 0.7, 0.4],
        );
        let grid = LagGrid::inclusive(0.0, 3000.0, 1.0);
        let g = gaussify_curve(&events, &grid, &cfg);
        for (k, t) in grid.points().enumerate().step_by(7) {
            assert!((g[k] - gaussify_eval(&events, t, &cfg)).abs() < 1e-12);
        }

        let aligned = set(&[0.0, 437.0, 874.0, 1311.0], &[1.0, 0.1, 0.1, 1.0]);
        let odd = set(&[0.0, 437.3, 874.6], &[1.0, 0.1, 1.0]);
        for template in [aligned, odd] {
            let fast = template_correlation_curve(&events, &template, &grid, &cfg);
            let slow = correlation_curve(&events, &template, &grid, &cfg);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig::default().validate().is_ok());
        assert!(KernelConfig {
            sigma: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(KernelConfig {
            spontaneous_tempo: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
