//! Event statistics: class-threshold calibration, log-binned number-count
//! histograms, and power-law slope fitting.

use super::{ClassThresholds, EventSeries};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Reference five-class occupancy of the full δf signal, zeros included.
pub const TARGET_OCCUPANCY: [f64; 5] = [0.937, 0.0219, 0.0258, 0.0145, 0.0008];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// count / (n_events · bin width): a density estimate whose log-log slope
    /// is the distribution's power-law exponent.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub range: (f64, f64),
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStatistics {
    pub n_steps: usize,
    pub n_events: usize,
    pub zero_fraction: f64,
    /// Per-class proportions over every step (zeros land in class 0).
    pub proportions_with_zeros: Vec<f64>,
    /// Per-class proportions over nonzero events only.
    pub proportions_nonzero: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
    pub power_law: Option<PowerLawFit>,
}

/// Calibrates class thresholds at decade spacing, anchored so that the
/// resulting occupancy (zeros included) best matches [`TARGET_OCCUPANCY`].
/// For `n_classes < 5` the upper bands are merged by truncation; class 0 is
/// always the noise class.
pub fn fit_class_thresholds(events: &EventSeries, n_classes: usize) -> Result<ClassThresholds> {
    if !(2..=5).contains(&n_classes) {
        return Err(Error::config(format!("n_classes {n_classes} outside 2..=5")));
    }
    let mut amps = events.drop_amplitudes();
    if amps.len() < 100 {
        return Err(Error::data(format!(
            "need at least 100 nonzero drops to fit thresholds, got {}",
            amps.len()
        )));
    }
    amps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n_total = events.len() as f64;
    let n_zero = n_total - amps.len() as f64;

    let occupancy_error = |anchor: f64| -> f64 {
        let mut counts = [0.0f64; 5];
        counts[0] = n_zero + amps.partition_point(|&a| a < anchor) as f64;
        for k in 1..5 {
            let lo = anchor * 10f64.powi(k as i32 - 1);
            let hi = anchor * 10f64.powi(k as i32);
            let lo_i = amps.partition_point(|&a| a < lo);
            let hi_i = if k == 4 { amps.len() } else { amps.partition_point(|&a| a < hi) };
            counts[k] = (hi_i - lo_i) as f64;
        }
        counts
            .iter()
            .zip(TARGET_OCCUPANCY.iter())
            .map(|(c, t)| {
                let p = c / n_total;
                (p - t) * (p - t)
            })
            .sum()
    };

    // coarse log grid over the amplitude range, then one refinement pass
    let lo = amps[0] / 10.0;
    let hi = *amps.last().unwrap();
    let mut best = (f64::INFINITY, lo);
    let coarse = 600usize;
    let log_lo = lo.ln();
    let log_hi = hi.ln();
    for i in 0..coarse {
        let a = (log_lo + (log_hi - log_lo) * i as f64 / (coarse - 1) as f64).exp();
        let e = occupancy_error(a);
        if e < best.0 {
            best = (e, a);
        }
    }
    let step = (log_hi - log_lo) / (coarse - 1) as f64;
    let center = best.1.ln();
    for i in 0..200 {
        let a = (center - step + 2.0 * step * i as f64 / 199.0).exp();
        let e = occupancy_error(a);
        if e < best.0 {
            best = (e, a);
        }
    }

    let anchor = best.1;
    let bounds: Vec<f64> = (0..n_classes - 1).map(|k| anchor * 10f64.powi(k as i32)).collect();
    ClassThresholds::new(bounds)
}

/// Full statistics report for an event series under the given thresholds.
/// `fit_range` selects the amplitude interval for the power-law fit; the
/// default is the decade `[10·b0, 100·b0]` above the noise threshold, which
/// sits inside the scale-invariant regime on calibrated streams.
pub fn event_statistics(
    events: &EventSeries,
    thresholds: &ClassThresholds,
    fit_range: Option<(f64, f64)>,
) -> Result<EventStatistics> {
    if events.is_empty() {
        return Err(Error::data("event series is empty"));
    }
    let n = thresholds.n_classes();
    let mut with_zeros = vec![0usize; n];
    let mut nonzero = vec![0usize; n];
    let mut amps = Vec::new();
    for &d in &events.delta_f {
        let k = thresholds.class_of(d);
        with_zeros[k] += 1;
        if d > 0.0 {
            nonzero[k] += 1;
            amps.push(d);
        }
    }
    let n_steps = events.len();
    let n_events = amps.len();
    let zero_fraction = (n_steps - n_events) as f64 / n_steps as f64;

    let histogram = log_binned_histogram(&amps);
    let range = fit_range.unwrap_or((10.0 * thresholds.bounds[0], 100.0 * thresholds.bounds[0]));
    let power_law = fit_power_law(&histogram, range);

    Ok(EventStatistics {
        n_steps,
        n_events,
        zero_fraction,
        proportions_with_zeros: with_zeros.iter().map(|&c| c as f64 / n_steps as f64).collect(),
        proportions_nonzero: if n_events == 0 {
            vec![0.0; n]
        } else {
            nonzero.iter().map(|&c| c as f64 / n_events as f64).collect()
        },
        histogram,
        power_law,
    })
}

fn log_binned_histogram(amps: &[f64]) -> Vec<HistogramBin> {
    if amps.is_empty() {
        return Vec::new();
    }
    let min = amps.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = amps.iter().cloned().fold(0.0f64, f64::max);
    if !(max > min) {
        return vec![HistogramBin { lo: min, hi: max, count: amps.len(), density: f64::INFINITY }];
    }
    let decades = (max / min).log10();
    let n_bins = ((decades * 8.0).ceil() as usize).clamp(4, 64);
    let log_min = min.ln();
    let log_max = (max * (1.0 + 1e-12)).ln();
    let width = (log_max - log_min) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &a in amps {
        let idx = (((a.ln() - log_min) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let n_total = amps.len() as f64;
    (0..n_bins)
        .map(|i| {
            let lo = (log_min + width * i as f64).exp();
            let hi = (log_min + width * (i + 1) as f64).exp();
            HistogramBin {
                lo,
                hi,
                count: counts[i],
                density: counts[i] as f64 / (n_total * (hi - lo)),
            }
        })
        .collect()
}

fn fit_power_law(histogram: &[HistogramBin], range: (f64, f64)) -> Option<PowerLawFit> {
    let pts: Vec<(f64, f64)> = histogram
        .iter()
        .filter(|b| b.count > 0)
        .filter_map(|b| {
            let center = (b.lo * b.hi).sqrt();
            if center >= range.0 && center <= range.1 {
                Some((center.log10(), b.density.log10()))
            } else {
                None
            }
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(PowerLawFit { slope, intercept: my - slope * mx, range, n_bins: pts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize, GeneratorConfig};

    fn calibrated(len: usize) -> EventSeries {
        synthesize(&GeneratorConfig::default(), len).unwrap()
    }

    #[test]
    fn five_class_occupancy_matches_reference() {
        let ev = calibrated(300_000);
        let th = fit_class_thresholds(&ev, 5).unwrap();
        let stats = event_statistics(&ev, &th, None).unwrap();
        for (k, (&got, &want)) in
            stats.proportions_with_zeros.iter().zip(TARGET_OCCUPANCY.iter()).enumerate()
        {
            let rel = (got - want) / want;
            assert!(rel.abs() <= 0.30, "class {k}: occupancy {got:.5} vs {want:.5} ({rel:+.2})");
        }
    }

    #[test]
    fn two_class_threshold_equals_five_class_noise_boundary() {
        let ev = calibrated(150_000);
        let five = fit_class_thresholds(&ev, 5).unwrap();
        let two = fit_class_thresholds(&ev, 2).unwrap();
        assert_eq!(two.bounds.len(), 1);
        assert!((two.bounds[0] - five.bounds[0]).abs() < 1e-12);
    }

    #[test]
    fn degenerate_single_amplitude_lands_in_one_class() {
        let n = 10_000;
        let mut delta_f = vec![0.0; n];
        for i in (0..n).step_by(50) {
            delta_f[i] = 0.5;
        }
        let ev = EventSeries::new(vec![0.0; n], delta_f).unwrap();
        let th = fit_class_thresholds(&ev, 5).unwrap();
        assert!(th.bounds[0] <= 0.5 && 0.5 < th.bounds[3], "bounds straddle the amplitude");
        let stats = event_statistics(&ev, &th, None).unwrap();
        let populated: Vec<usize> = (1..5).filter(|&k| stats.proportions_nonzero[k] > 0.0).collect();
        assert_eq!(populated.len(), 1, "all events in one class: {:?}", stats.proportions_nonzero);
        assert!((stats.proportions_nonzero[populated[0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_events_is_a_data_error() {
        let mut delta_f = vec![0.0; 2000];
        delta_f[100] = 1.0;
        let ev = EventSeries::new(vec![0.0; 2000], delta_f).unwrap();
        assert_eq!(fit_class_thresholds(&ev, 5).unwrap_err().kind, crate::error::ErrorKind::Data);
    }

    #[test]
    fn all_zero_series_reports_trivially() {
        let ev = EventSeries::new(vec![0.0; 100], vec![0.0; 100]).unwrap();
        let th = ClassThresholds::new(vec![0.01, 0.1, 1.0, 10.0]).unwrap();
        let stats = event_statistics(&ev, &th, None).unwrap();
        assert_eq!(stats.zero_fraction, 1.0);
        assert!(stats.histogram.is_empty());
        assert!(stats.power_law.is_none());
        assert_eq!(stats.proportions_with_zeros[0], 1.0);
    }

    #[test]
    fn fitted_slope_matches_configured_exponent() {
        let ev = calibrated(400_000);
        let th = fit_class_thresholds(&ev, 5).unwrap();
        let stats = event_statistics(&ev, &th, None).unwrap();
        let fit = stats.power_law.expect("fit available");
        assert!(
            (fit.slope - (-1.3)).abs() <= 0.15,
            "slope {:.3} outside -1.3±0.15 over {:?}",
            fit.slope,
            fit.range
        );
    }
}
