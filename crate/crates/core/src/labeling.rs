//! Forecasting targets, discrete labels, and windowed training datasets.
//!
//! A target aggregates the events in the future horizon `[t, t+τ]` into a
//! scalar; labels discretize targets through the shared class thresholds.
//! Dataset samples stack three past-only channels (f, δf, and the label
//! series shifted by −τ) so that no input index ever reaches time t.

use crate::error::{Error, Result};
use crate::signal::{ClassThresholds, EventSeries};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Largest event in the future window.
    T1,
    /// Sum of event amplitudes in the future window.
    T2,
    /// Exponentially weighted sum, decay constant τ/3.
    T3,
}

impl TargetKind {
    pub fn all() -> [TargetKind; 3] {
        [TargetKind::T1, TargetKind::T2, TargetKind::T3]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::T1 => "t1",
            TargetKind::T2 => "t2",
            TargetKind::T3 => "t3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: TargetKind,
    /// Future horizon in steps; the window [t, t+tau] is inclusive.
    pub tau: usize,
    pub n_classes: usize,
    pub thresholds: ClassThresholds,
}

impl TargetSpec {
    pub fn new(kind: TargetKind, tau: usize, thresholds: ClassThresholds) -> Result<Self> {
        let spec =
            Self { kind, tau, n_classes: thresholds.n_classes(), thresholds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::config("tau must be at least 1"));
        }
        if self.thresholds.n_classes() != self.n_classes {
            return Err(Error::config(format!(
                "n_classes {} does not match thresholds ({} classes)",
                self.n_classes,
                self.thresholds.n_classes()
            )));
        }
        Ok(())
    }
}

/// Scalar target value for every t with a complete future window.
/// Output index t corresponds to series index t; the trailing τ steps are
/// absent (dropped, not padded).
pub fn target_series(events: &EventSeries, spec: &TargetSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = events.len();
    let tau = spec.tau;
    if n <= tau {
        return Err(Error::data(format!("series length {n} must exceed tau {tau}")));
    }
    let df = &events.delta_f;
    let out_len = n - tau;
    let mut out = vec![0.0f64; out_len];
    match spec.kind {
        TargetKind::T1 => {
            // sliding max over [t, t+tau] via a monotonic deque of indices
            let mut deque: std::collections::VecDeque<usize> = Default::default();
            for t in 0..n {
                while let Some(&back) = deque.back() {
                    if df[back] <= df[t] {
                        deque.pop_back();
                    } else {
                        break;
                    }
                }
                deque.push_back(t);
                if t >= tau {
                    let start = t - tau;
                    while *deque.front().unwrap() < start {
                        deque.pop_front();
                    }
                    out[start] = df[*deque.front().unwrap()];
                }
            }
        }
        TargetKind::T2 => {
            let mut sum: f64 = df[..=tau].iter().sum();
            out[0] = sum;
            for t in 1..out_len {
                sum += df[t + tau] - df[t - 1];
                out[t] = sum;
            }
        }
        TargetKind::T3 => {
            let decay = 3.0 / tau as f64;
            let weights: Vec<f64> = (0..=tau).map(|j| (-decay * j as f64).exp()).collect();
            for t in 0..out_len {
                out[t] = weights.iter().zip(&df[t..=t + tau]).map(|(w, d)| w * d).sum();
            }
        }
    }
    Ok(out)
}

/// Maps scalar targets to class labels through the spec thresholds.
pub fn labelize(targets: &[f64], spec: &TargetSpec) -> Result<Vec<u8>> {
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("targets contain non-finite values"));
    }
    Ok(targets.iter().map(|&v| spec.thresholds.class_of(v) as u8).collect())
}

/// Label series for every t with a complete future window.
pub fn label_series(events: &EventSeries, spec: &TargetSpec) -> Result<Vec<u8>> {
    labelize(&target_series(events, spec)?, spec)
}

/// One materialized training sample: three aligned past windows plus the
/// label at time t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub window_f: Vec<f64>,
    pub window_df: Vec<f64>,
    /// Past labels shifted by −τ, integer codes scaled to [0,1].
    pub window_y: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone)]
enum DatasetSource {
    /// Windows cut lazily from a shared stream.
    Stream { series: Arc<EventSeries>, labels: Arc<Vec<u8>>, indices: Vec<usize> },
    /// Materialized fixed-stride records (3·n_past values per sample).
    Records { channels: Vec<f64>, labels: Vec<u8> },
}

/// Windowed dataset over an event stream. Samples are materialized on
/// access so that unbalanced full-stream datasets stay cheap to hold.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    source: DatasetSource,
    pub spec: TargetSpec,
    pub n_past: usize,
    pub balanced: bool,
}

/// Assembles the dataset of all valid sample times. Valid t ranges over
/// `[n_past, len-1-tau]`; Y-channel indices before the start of the series
/// are filled with class 0.
pub fn build_dataset(
    series: Arc<EventSeries>,
    spec: &TargetSpec,
    n_past: usize,
) -> Result<LabeledDataset> {
    spec.validate()?;
    if n_past < 1 {
        return Err(Error::config("n_past must be at least 1"));
    }
    let len = series.len();
    if len <= n_past + spec.tau {
        return Err(Error::data(format!(
            "series length {len} must exceed n_past + tau = {}",
            n_past + spec.tau
        )));
    }
    let labels = Arc::new(label_series(&series, spec)?);
    let indices: Vec<usize> = (n_past..=len - 1 - spec.tau).collect();
    Ok(LabeledDataset {
        source: DatasetSource::Stream { series, labels, indices },
        spec: spec.clone(),
        n_past,
        balanced: false,
    })
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        match &self.source {
            DatasetSource::Stream { indices, .. } => indices.len(),
            DatasetSource::Records { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> u8 {
        match &self.source {
            DatasetSource::Stream { labels, indices, .. } => labels[indices[i]],
            DatasetSource::Records { labels, .. } => labels[i],
        }
    }

    /// Copies the three input channels of sample `i` into the buffers.
    pub fn fill_channels(&self, i: usize, f: &mut [f64], df: &mut [f64], y: &mut [f64]) {
        let n = self.n_past;
        assert!(f.len() == n && df.len() == n && y.len() == n);
        match &self.source {
            DatasetSource::Stream { series, labels, indices } => {
                let t = indices[i];
                f.copy_from_slice(&series.f[t - n..t]);
                df.copy_from_slice(&series.delta_f[t - n..t]);
                let scale = 1.0 / (self.spec.n_classes - 1).max(1) as f64;
                let tau = self.spec.tau;
                for (j, slot) in y.iter_mut().enumerate() {
                    let idx = t as isize - n as isize - tau as isize + j as isize;
                    *slot = if idx < 0 { 0.0 } else { labels[idx as usize] as f64 * scale };
                }
            }
            DatasetSource::Records { channels, .. } => {
                let base = i * 3 * n;
                f.copy_from_slice(&channels[base..base + n]);
                df.copy_from_slice(&channels[base + n..base + 2 * n]);
                y.copy_from_slice(&channels[base + 2 * n..base + 3 * n]);
            }
        }
    }

    pub fn sample(&self, i: usize) -> LabeledSample {
        let n = self.n_past;
        let mut s = LabeledSample {
            window_f: vec![0.0; n],
            window_df: vec![0.0; n],
            window_y: vec![0.0; n],
            label: self.label(i),
        };
        self.fill_channels(i, &mut s.window_f, &mut s.window_df, &mut s.window_y);
        s
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.spec.n_classes];
        for i in 0..self.len() {
            counts[self.label(i) as usize] += 1;
        }
        counts
    }

    /// Natural label marginals of the dataset.
    pub fn label_marginals(&self) -> Vec<f64> {
        let counts = self.class_counts();
        let total = self.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / total).collect()
    }

    fn select(&self, keep: &[usize]) -> LabeledDataset {
        let source = match &self.source {
            DatasetSource::Stream { series, labels, indices } => DatasetSource::Stream {
                series: Arc::clone(series),
                labels: Arc::clone(labels),
                indices: keep.iter().map(|&i| indices[i]).collect(),
            },
            DatasetSource::Records { channels, labels } => {
                let n = 3 * self.n_past;
                let mut ch = Vec::with_capacity(keep.len() * n);
                let mut lb = Vec::with_capacity(keep.len());
                for &i in keep {
                    ch.extend_from_slice(&channels[i * n..(i + 1) * n]);
                    lb.push(labels[i]);
                }
                DatasetSource::Records { channels: ch, labels: lb }
            }
        };
        LabeledDataset {
            source,
            spec: self.spec.clone(),
            n_past: self.n_past,
            balanced: self.balanced,
        }
    }

    /// Materializes every sample into fixed-stride records.
    pub fn materialize(&self) -> LabeledDataset {
        let n = self.n_past;
        let mut channels = Vec::with_capacity(self.len() * 3 * n);
        let mut labels = Vec::with_capacity(self.len());
        let (mut f, mut df, mut y) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..self.len() {
            self.fill_channels(i, &mut f, &mut df, &mut y);
            channels.extend_from_slice(&f);
            channels.extend_from_slice(&df);
            channels.extend_from_slice(&y);
            labels.push(self.label(i));
        }
        LabeledDataset {
            source: DatasetSource::Records { channels, labels },
            spec: self.spec.clone(),
            n_past,
            balanced: self.balanced,
        }
    }

    pub fn from_records(
        channels: Vec<f64>,
        labels: Vec<u8>,
        spec: TargetSpec,
        n_past: usize,
        balanced: bool,
    ) -> Result<Self> {
        if channels.len() != labels.len() * 3 * n_past {
            return Err(Error::data("record channel length does not match sample count"));
        }
        Ok(LabeledDataset {
            source: DatasetSource::Records { channels, labels },
            spec,
            n_past,
            balanced,
        })
    }

    pub fn records(&self) -> (Vec<f64>, Vec<u8>) {
        match &self.source {
            DatasetSource::Records { channels, labels } => (channels.clone(), labels.clone()),
            DatasetSource::Stream { .. } => {
                let m = self.materialize();
                m.records()
            }
        }
    }

    /// Text export for debugging small datasets.
    pub fn write_text<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n_samples={} n_past={} kind={} tau={} n_classes={}",
            self.len(), self.n_past, self.spec.kind.as_str(), self.spec.tau, self.spec.n_classes)?;
        for i in 0..self.len() {
            let s = self.sample(i);
            let fmt = |v: &[f64]| {
                v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
            };
            writeln!(w, "label={}", s.label)?;
            writeln!(w, "f {}", fmt(&s.window_f))?;
            writeln!(w, "df {}", fmt(&s.window_df))?;
            writeln!(w, "y {}", fmt(&s.window_y))?;
        }
        Ok(())
    }
}

/// Uniformly subsamples every class down to the minority-class count.
/// Deterministic given the seed; errors if any class is absent.
pub fn rebalance(dataset: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let counts = dataset.class_counts();
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::data(format!("cannot rebalance: class {k} is absent")));
        }
    }
    let min_count = *counts.iter().min().unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.spec.n_classes];
    for i in 0..dataset.len() {
        by_class[dataset.label(i) as usize].push(i);
    }
    let mut keep = Vec::with_capacity(min_count * dataset.spec.n_classes);
    for class_indices in &mut by_class {
        class_indices.shuffle(&mut rng);
        keep.extend_from_slice(&class_indices[..min_count]);
    }
    keep.shuffle(&mut rng);
    let mut out = dataset.select(&keep);
    out.balanced = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{fit_class_thresholds, synthesize, GeneratorConfig};

    fn thresholds() -> ClassThresholds {
        ClassThresholds::new(vec![0.01, 0.1, 1.0, 10.0]).unwrap()
    }

    fn series_from_df(df: Vec<f64>) -> EventSeries {
        let f = vec![0.0; df.len()];
        EventSeries::new(f, df).unwrap()
    }

    #[test]
    fn t1_is_window_max_and_t2_is_window_sum() {
        let ev = series_from_df(vec![0.0, 0.0, 2.0, 0.0, 5.0, 0.0]);
        let t1 = TargetSpec::new(TargetKind::T1, 5, thresholds()).unwrap();
        let t2 = TargetSpec::new(TargetKind::T2, 5, thresholds()).unwrap();
        assert_eq!(target_series(&ev, &t1).unwrap(), vec![5.0]);
        assert_eq!(target_series(&ev, &t2).unwrap(), vec![7.0]);
    }

    #[test]
    fn t3_weights_decay_with_constant_tau_over_three() {
        let ev = series_from_df(vec![0.0, 1.0, 0.0, 0.0]);
        let spec = TargetSpec::new(TargetKind::T3, 3, thresholds()).unwrap();
        let t3 = target_series(&ev, &spec).unwrap();
        assert_eq!(t3.len(), 1);
        assert!((t3[0] - (-1.0f64).exp()).abs() < 1e-12, "got {}", t3[0]);
    }

    #[test]
    fn sliding_max_matches_naive_on_random_input() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let df: Vec<f64> =
            (0..500).map(|_| if rng.random::<f64>() < 0.2 { rng.random::<f64>() } else { 0.0 }).collect();
        let ev = series_from_df(df.clone());
        let spec = TargetSpec::new(TargetKind::T1, 7, thresholds()).unwrap();
        let got = target_series(&ev, &spec).unwrap();
        for (t, &g) in got.iter().enumerate() {
            let naive = df[t..=t + 7].iter().cloned().fold(0.0f64, f64::max);
            assert_eq!(g, naive, "t={t}");
        }
    }

    #[test]
    fn labelize_edges() {
        let spec = TargetSpec::new(TargetKind::T1, 1, thresholds()).unwrap();
        let labels = labelize(&[0.0, 1e6], &spec).unwrap();
        assert_eq!(labels, vec![0, 4]);
    }

    #[test]
    fn short_series_is_a_data_error() {
        let ev = series_from_df(vec![0.0; 5]);
        let spec = TargetSpec::new(TargetKind::T2, 5, thresholds()).unwrap();
        assert_eq!(target_series(&ev, &spec).unwrap_err().kind, crate::error::ErrorKind::Data);
    }

    #[test]
    fn boundary_series_yields_exactly_one_sample() {
        let n_past = 8;
        let tau = 3;
        let ev = Arc::new(series_from_df(vec![0.0; n_past + tau + 1]));
        let spec = TargetSpec::new(TargetKind::T1, tau, thresholds()).unwrap();
        let ds = build_dataset(ev, &spec, n_past).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn sample_windows_end_at_t_minus_one_and_t_minus_tau_minus_one() {
        let n_past = 4;
        let tau = 2;
        let len = 16;
        let f: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let mut df = vec![0.0; len];
        df[9] = 5.0; // single large event
        let ev = Arc::new(EventSeries::new(f, df).unwrap());
        let spec = TargetSpec::new(TargetKind::T1, tau, thresholds()).unwrap();
        let ds = build_dataset(Arc::clone(&ev), &spec, n_past).unwrap();

        // sample index 0 corresponds to t = n_past
        let t = n_past;
        let s = ds.sample(0);
        assert_eq!(s.window_f, ev.f[t - n_past..t].to_vec(), "f window ends at t-1");
        assert_eq!(s.window_df, ev.delta_f[t - n_past..t].to_vec());

        // y channel: labels shifted by -tau, prehistory filled with class 0
        let labels = label_series(&ev, &spec).unwrap();
        for j in 0..n_past {
            let idx = t as isize - n_past as isize - tau as isize + j as isize;
            let want = if idx < 0 { 0.0 } else { labels[idx as usize] as f64 / 4.0 };
            assert_eq!(s.window_y[j], want, "y[{j}]");
        }
        assert_eq!(s.label, labels[t]);
    }

    #[test]
    fn future_perturbation_leaves_input_channels_unchanged() {
        let n_past = 6;
        let tau = 3;
        let len = 40;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let f: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let df: Vec<f64> = (0..len).map(|_| if rng.random::<f64>() < 0.3 { 0.5 } else { 0.0 }).collect();
        let spec = TargetSpec::new(TargetKind::T1, tau, thresholds()).unwrap();

        let base = build_dataset(Arc::new(EventSeries::new(f.clone(), df.clone()).unwrap()), &spec, n_past).unwrap();
        let i = 5;
        let t = n_past + i;
        let before = base.sample(i);

        let mut f2 = f.clone();
        let mut df2 = df.clone();
        for idx in t..len {
            f2[idx] += 100.0;
            df2[idx] = 3.0;
        }
        let after = build_dataset(Arc::new(EventSeries::new(f2, df2).unwrap()), &spec, n_past).unwrap().sample(i);
        assert_eq!(before.window_f, after.window_f);
        assert_eq!(before.window_df, after.window_df);
        assert_eq!(before.window_y, after.window_y);
    }

    #[test]
    fn rebalance_subsamples_to_minority_count() {
        // labels: 0 for most steps, class 1 where an event lands in band 1
        let len = 1200;
        let mut df = vec![0.0; len];
        for i in (100..200).step_by(10) {
            df[i] = 0.05;
        }
        let ev = Arc::new(series_from_df(df));
        let spec = TargetSpec::new(TargetKind::T1, 1, ClassThresholds::new(vec![0.01]).unwrap()).unwrap();
        let ds = build_dataset(ev, &spec, 4).unwrap();
        let counts = ds.class_counts();
        assert!(counts[0] > counts[1] && counts[1] > 0, "{counts:?}");
        let bal = rebalance(&ds, 42).unwrap();
        let bal_counts = bal.class_counts();
        assert_eq!(bal_counts[0], bal_counts[1]);
        assert_eq!(bal_counts[1], counts[1]);
        assert!(bal.balanced);
    }

    #[test]
    fn rebalance_of_balanced_input_is_a_permutation() {
        let len = 400;
        let mut df = vec![0.0; len];
        for i in (0..len).step_by(2) {
            df[i] = 0.05;
        }
        let ev = Arc::new(series_from_df(df));
        let spec = TargetSpec::new(TargetKind::T1, 1, ClassThresholds::new(vec![0.01]).unwrap()).unwrap();
        let ds = build_dataset(ev, &spec, 4).unwrap();
        let counts = ds.class_counts();
        assert_eq!(counts[0], counts[1]);
        let bal = rebalance(&ds, 7).unwrap();
        assert_eq!(bal.len(), ds.len());
        let mut a: Vec<Vec<u8>> = (0..ds.len())
            .map(|i| {
                let s = ds.sample(i);
                s.window_df.iter().flat_map(|v| v.to_le_bytes()).chain([s.label]).collect()
            })
            .collect();
        let mut b: Vec<Vec<u8>> = (0..bal.len())
            .map(|i| {
                let s = bal.sample(i);
                s.window_df.iter().flat_map(|v| v.to_le_bytes()).chain([s.label]).collect()
            })
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn rebalance_names_the_absent_class() {
        let ev = Arc::new(series_from_df(vec![0.0; 100]));
        let spec = TargetSpec::new(TargetKind::T1, 1, ClassThresholds::new(vec![0.01]).unwrap()).unwrap();
        let ds = build_dataset(ev, &spec, 4).unwrap();
        let err = rebalance(&ds, 0).unwrap_err();
        assert_eq!(err.kind, crate::error::ErrorKind::Data);
        assert!(err.message.contains("class 1"), "{}", err.message);
    }

    #[test]
    fn calibrated_labels_have_fewer_class4_than_class3() {
        let ev = synthesize(&GeneratorConfig::default(), 150_000).unwrap();
        let th = fit_class_thresholds(&ev, 5).unwrap();
        let spec = TargetSpec::new(TargetKind::T1, 20, th).unwrap();
        let labels = label_series(&ev, &spec).unwrap();
        let mut counts = [0usize; 5];
        for &l in &labels {
            counts[l as usize] += 1;
        }
        assert!(
            counts[4] < counts[3] && counts[4] > 0,
            "class counts {counts:?}"
        );
    }

    #[test]
    fn materialized_dataset_matches_stream_backing() {
        let ev = synthesize(&GeneratorConfig::default(), 3000).unwrap();
        let th = fit_class_thresholds(&synthesize(&GeneratorConfig::default(), 150_000).unwrap(), 5).unwrap();
        let spec = TargetSpec::new(TargetKind::T3, 10, th).unwrap();
        let ds = build_dataset(Arc::new(ev), &spec, 16).unwrap();
        let mat = ds.materialize();
        assert_eq!(ds.len(), mat.len());
        for i in [0, ds.len() / 2, ds.len() - 1] {
            assert_eq!(ds.sample(i), mat.sample(i));
        }
    }
}
