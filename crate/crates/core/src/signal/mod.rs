//! Crackling-signal preprocessing and slip-event extraction.
//!
//! A raw force series is detrended per load cycle, normalized in two stages
//! to a stationary fluctuation signal `f`, and finally reduced to a sparse
//! event series `delta_f` holding each force drop's amplitude at the step
//! where the drop begins.

mod generator;
mod stats;

pub use generator::{synthesize, GeneratorConfig, AMPLITUDE_FLOOR, NOISE_ROLLOVER};
pub use stats::{
    event_statistics, fit_class_thresholds, EventStatistics, HistogramBin, PowerLawFit,
    TARGET_OCCUPANCY,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Raw force samples split into load cycles.
///
/// `cycle_boundaries` holds the start index of every cycle after the first,
/// so an empty vector means the whole series is one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub cycle_boundaries: Vec<usize>,
}

impl RawSeries {
    pub fn single_cycle(samples: Vec<f64>) -> Self {
        Self { samples, dt: 1.0, cycle_boundaries: Vec::new() }
    }

    pub fn new(samples: Vec<f64>, cycle_boundaries: Vec<usize>) -> Result<Self> {
        let s = Self { samples, dt: 1.0, cycle_boundaries };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::data("raw series is empty"));
        }
        let mut prev = 0usize;
        for (i, &b) in self.cycle_boundaries.iter().enumerate() {
            if b <= prev || b >= self.samples.len() {
                return Err(Error::data(format!(
                    "cycle boundary {i} at {b} is not strictly increasing within range"
                )));
            }
            prev = b;
        }
        Ok(())
    }

    /// Half-open index ranges of the cycles.
    pub fn cycle_ranges(&self) -> Vec<(usize, usize)> {
        let mut ranges = Vec::with_capacity(self.cycle_boundaries.len() + 1);
        let mut start = 0usize;
        for &b in &self.cycle_boundaries {
            ranges.push((start, b));
            start = b;
        }
        ranges.push((start, self.samples.len()));
        ranges
    }
}

/// Stationary normalized fluctuation signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub f: Vec<f64>,
}

impl NormalizedSeries {
    pub fn new(f: Vec<f64>) -> Self {
        Self { f }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Stationarity contract of the two-stage normalization: global mean
    /// within ±0.05 of 0 and global standard deviation within ±0.05 of 1.
    pub fn check_stationarity(&self) -> Result<()> {
        let (mean, std) = mean_std(&self.f);
        if mean.abs() > 0.05 {
            return Err(Error::data(format!("normalized mean {mean:.4} outside ±0.05")));
        }
        if (std - 1.0).abs() > 0.05 {
            return Err(Error::data(format!("normalized std {std:.4} outside 1±0.05")));
        }
        Ok(())
    }
}

/// The ground-truth stream: normalized fluctuations plus the sparse drop
/// amplitudes. `delta_f[t]` is the drop amplitude if a drop begins at `t`,
/// else exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    pub f: Vec<f64>,
    pub delta_f: Vec<f64>,
}

impl EventSeries {
    pub fn new(f: Vec<f64>, delta_f: Vec<f64>) -> Result<Self> {
        if f.len() != delta_f.len() {
            return Err(Error::data("f and delta_f lengths differ"));
        }
        if delta_f.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::data("delta_f must be nonnegative and finite"));
        }
        Ok(Self { f, delta_f })
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.delta_f.is_empty() {
            return 1.0;
        }
        let zeros = self.delta_f.iter().filter(|&&d| d == 0.0).count();
        zeros as f64 / self.delta_f.len() as f64
    }

    /// Nonzero drop amplitudes in time order.
    pub fn drop_amplitudes(&self) -> Vec<f64> {
        self.delta_f.iter().copied().filter(|&d| d > 0.0).collect()
    }

    /// Writes the columnar text format: header `t,f,delta_f`, one row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,f,delta_f")?;
        for (t, (f, d)) in self.f.iter().zip(&self.delta_f).enumerate() {
            writeln!(w, "{t},{f},{d}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data("series file is empty"))??;
        if header.trim() != "t,f,delta_f" {
            return Err(Error::data(format!("expected header 't,f,delta_f', got '{header}'")));
        }
        let mut f = Vec::new();
        let mut delta_f = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let _t = parts.next();
            let fv: f64 = parts
                .next()
                .ok_or_else(|| Error::data(format!("row {i}: missing f column")))?
                .trim()
                .parse()
                .map_err(|e| Error::data(format!("row {i}: bad f value: {e}")))?;
            let dv: f64 = parts
                .next()
                .ok_or_else(|| Error::data(format!("row {i}: missing delta_f column")))?
                .trim()
                .parse()
                .map_err(|e| Error::data(format!("row {i}: bad delta_f value: {e}")))?;
            f.push(fv);
            delta_f.push(dv);
        }
        Self::new(f, delta_f)
    }
}

/// Amplitude thresholds splitting events into `n_classes` severity classes.
/// Class 0 is the noise class; amplitude in `[bounds[k-1], bounds[k])` maps
/// to class k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub bounds: Vec<f64>,
}

impl ClassThresholds {
    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 4 {
            return Err(Error::config("thresholds need 1..=4 bounds (2..=5 classes)"));
        }
        for w in bounds.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::config("threshold bounds must be strictly increasing"));
            }
        }
        if !(bounds[0] > 0.0) || bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::config("threshold bounds must be positive and finite"));
        }
        Ok(Self { bounds })
    }

    pub fn n_classes(&self) -> usize {
        self.bounds.len() + 1
    }

    /// Class index of an amplitude under the half-open band convention.
    pub fn class_of(&self, amplitude: f64) -> usize {
        self.bounds.partition_point(|&b| b <= amplitude)
    }

    /// Drops the bounds above class `n_classes - 1`, merging the upper bands.
    pub fn truncated(&self, n_classes: usize) -> Result<Self> {
        if n_classes < 2 || n_classes > self.n_classes() {
            return Err(Error::config(format!(
                "cannot truncate {}-class thresholds to {n_classes}",
                self.n_classes()
            )));
        }
        Ok(Self { bounds: self.bounds[..n_classes - 1].to_vec() })
    }
}

/// Subtracts the least-squares affine fit from each load cycle.
pub fn detrend_linear(raw: &RawSeries) -> Result<RawSeries> {
    raw.validate()?;
    let mut out = raw.samples.clone();
    for (lo, hi) in raw.cycle_ranges() {
        let n = hi - lo;
        if n < 2 {
            return Err(Error::data(format!(
                "cycle [{lo},{hi}) has {n} samples; need at least 2 for detrending"
            )));
        }
        let seg = &raw.samples[lo..hi];
        // closed-form least squares on t = 0..n
        let nf = n as f64;
        let t_mean = (nf - 1.0) / 2.0;
        let y_mean = seg.iter().sum::<f64>() / nf;
        let mut stt = 0.0;
        let mut sty = 0.0;
        for (i, &y) in seg.iter().enumerate() {
            let dt = i as f64 - t_mean;
            stt += dt * dt;
            sty += dt * (y - y_mean);
        }
        let slope = if stt > 0.0 { sty / stt } else { 0.0 };
        for i in 0..n {
            out[lo + i] = seg[i] - (y_mean + slope * (i as f64 - t_mean));
        }
    }
    Ok(RawSeries { samples: out, dt: raw.dt, cycle_boundaries: raw.cycle_boundaries.clone() })
}

/// Two-stage normalization: per-cycle standardization, then division by a
/// centered sliding-window standard deviation (window clipped at the series
/// boundaries).
pub fn normalize_two_stage(raw: &RawSeries, window: usize) -> Result<NormalizedSeries> {
    raw.validate()?;
    let n = raw.samples.len();
    if window < 2 || window > n {
        return Err(Error::config(format!(
            "window {window} must be in 2..={n} (series length)"
        )));
    }

    // stage 1: per-cycle standardization
    let mut y = raw.samples.clone();
    for (ci, (lo, hi)) in raw.cycle_ranges().into_iter().enumerate() {
        let seg = &raw.samples[lo..hi];
        let (mean, std) = mean_std(seg);
        if std <= 0.0 {
            return Err(Error::data(format!("zero variance in cycle {ci}; cannot normalize")));
        }
        for i in lo..hi {
            y[i] = (raw.samples[i] - mean) / std;
        }
    }

    // stage 2: divide by a centered sliding std, computed from prefix sums
    let mut s1 = vec![0.0f64; n + 1];
    let mut s2 = vec![0.0f64; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + y[i];
        s2[i + 1] = s2[i] + y[i] * y[i];
    }
    let half = window / 2;
    let mut f = vec![0.0f64; n];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let m = (hi - lo) as f64;
        let sum = s1[hi] - s1[lo];
        let sumsq = s2[hi] - s2[lo];
        let var = (sumsq - sum * sum / m) / m;
        let std = var.max(0.0).sqrt();
        if std <= 1e-12 {
            return Err(Error::data(format!(
                "zero variance in sliding window centered at index {i}"
            )));
        }
        f[i] = y[i] / std;
    }
    Ok(NormalizedSeries::new(f))
}

/// Extracts slip events: every maximal strictly-decreasing run whose total
/// decrease exceeds `min_drop` contributes its amplitude at the first
/// decreasing step of the run.
pub fn extract_drops(f: &NormalizedSeries, min_drop: f64) -> Result<EventSeries> {
    if f.is_empty() {
        return Err(Error::data("cannot extract drops from an empty series"));
    }
    if !(min_drop >= 0.0) {
        return Err(Error::config("min_drop must be nonnegative"));
    }
    let x = &f.f;
    let n = x.len();
    let mut delta_f = vec![0.0f64; n];
    let mut t = 1usize;
    while t < n {
        if x[t] < x[t - 1] {
            let start = t;
            let mut end = t;
            while end + 1 < n && x[end + 1] < x[end] {
                end += 1;
            }
            let total = x[start - 1] - x[end];
            if total > min_drop {
                delta_f[start] = total;
            }
            t = end + 1;
        } else {
            t += 1;
        }
    }
    EventSeries::new(x.clone(), delta_f)
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn detrend_exact_affine_input_is_zeroed() {
        let raw = RawSeries::single_cycle(vec![1.0, 2.0, 3.0, 4.0]);
        let out = detrend_linear(&raw).unwrap();
        for v in out.samples {
            assert!(v.abs() < 1e-12, "residual {v}");
        }
    }

    #[test]
    fn detrend_residuals_sum_to_zero() {
        let raw = RawSeries::single_cycle(vec![0.0, 2.0, 1.0, 3.0]);
        let out = detrend_linear(&raw).unwrap();
        let sum: f64 = out.samples.iter().sum();
        assert!(sum.abs() < 1e-12, "residual sum {sum}");
        // residuals are uncorrelated with the time index
        let n = out.samples.len() as f64;
        let t_mean = (n - 1.0) / 2.0;
        let corr: f64 = out
            .samples
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 - t_mean) * v)
            .sum();
        assert!(corr.abs() < 1e-9);
    }

    #[test]
    fn detrend_two_cycles_with_different_slopes() {
        let mut samples: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        samples.extend((0..10).map(|i| -3.0 * i as f64 + 7.0));
        let raw = RawSeries::new(samples, vec![10]).unwrap();
        let out = detrend_linear(&raw).unwrap();
        for v in out.samples {
            assert!(v.abs() < 1e-10, "residual {v}");
        }
    }

    #[test]
    fn detrend_rejects_short_segment() {
        let raw = RawSeries { samples: vec![1.0, 2.0], dt: 1.0, cycle_boundaries: vec![1] };
        let err = detrend_linear(&raw).unwrap_err();
        assert_eq!(err.kind, crate::error::ErrorKind::Data);
    }

    #[test]
    fn normalize_iid_gaussian_keeps_unit_std() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..20_000)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let raw = RawSeries::single_cycle(samples);
        let out = normalize_two_stage(&raw, 1000).unwrap();
        let (_, std) = mean_std(&out.f);
        assert!((0.95..=1.05).contains(&std), "std {std}");
    }

    #[test]
    fn normalize_flattens_growing_amplitude() {
        // x(t) = (1 + t/T) * g(t): fluctuation amplitude doubles over the series
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 40_000usize;
        let samples: Vec<f64> = (0..n)
            .map(|t| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (1.0 + t as f64 / n as f64) * g
            })
            .collect();
        let raw = RawSeries::single_cycle(samples);
        let out = normalize_two_stage(&raw, 2000).unwrap();
        // windowed stds of the output stay constant within ±10%
        let w = 4000;
        let stds: Vec<f64> = (0..n / w).map(|k| mean_std(&out.f[k * w..(k + 1) * w]).1).collect();
        let mean_of_stds = stds.iter().sum::<f64>() / stds.len() as f64;
        for s in &stds {
            assert!(
                (s / mean_of_stds - 1.0).abs() <= 0.10,
                "windowed std {s} vs mean {mean_of_stds}"
            );
        }
    }

    #[test]
    fn normalize_rejects_constant_input() {
        let raw = RawSeries::single_cycle(vec![3.0; 100]);
        let err = normalize_two_stage(&raw, 10).unwrap_err();
        assert_eq!(err.kind, crate::error::ErrorKind::Data);
    }

    #[test]
    fn normalize_is_nearly_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..30_000)
            .map(|t| (t as f64 * 0.01).sin() + rng.random::<f64>() - 0.5)
            .collect();
        let raw = RawSeries::single_cycle(samples);
        let once = normalize_two_stage(&raw, 5000).unwrap();
        let twice = normalize_two_stage(&RawSeries::single_cycle(once.f.clone()), 5000).unwrap();
        let s1 = mean_std(&once.f).1;
        let s2 = mean_std(&twice.f).1;
        assert!((s2 / s1 - 1.0).abs() < 0.05, "std changed {s1} -> {s2}");
    }

    #[test]
    fn extract_drops_matches_definition_example() {
        let f = NormalizedSeries::new(vec![0.0, 1.0, 2.0, 1.5, 1.0, 2.0]);
        let ev = extract_drops(&f, 0.0).unwrap();
        assert_eq!(ev.delta_f, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn extract_drops_monotone_input_has_no_events() {
        let f = NormalizedSeries::new((0..50).map(|i| i as f64).collect());
        let ev = extract_drops(&f, 0.0).unwrap();
        assert!(ev.delta_f.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn extract_drops_honors_min_drop() {
        let f = NormalizedSeries::new(vec![0.0, 1.0, 0.7, 1.7, 0.2]);
        let ev = extract_drops(&f, 0.5).unwrap();
        assert_eq!(ev.delta_f, vec![0.0, 0.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn class_of_conventions() {
        let th = ClassThresholds::new(vec![0.01, 0.1, 1.0, 10.0]).unwrap();
        assert_eq!(th.class_of(0.0), 0);
        assert_eq!(th.class_of(0.0099), 0);
        assert_eq!(th.class_of(0.01), 1);
        assert_eq!(th.class_of(0.5), 2);
        assert_eq!(th.class_of(10.0), 4);
        assert_eq!(th.class_of(1e9), 4);
    }

    #[test]
    fn series_csv_roundtrip() {
        let ev = EventSeries::new(vec![0.5, 1.25, -0.125], vec![0.0, 0.75, 0.0]).unwrap();
        let mut buf = Vec::new();
        ev.write_csv(&mut buf).unwrap();
        let back = EventSeries::read_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(ev, back);
    }
}
