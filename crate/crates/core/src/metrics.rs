//! Frequency-domain error and timing statistics.

use std::path::Path;
use std::time::Duration;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signals::{SignalSeries, DT_TOL};

/// One-sided DFT `Z_k`, `k = 0..=n/2`.
fn spectrum(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdeReport {
    pub value: f64,
    pub f0: f64,
    pub fmax: f64,
    pub n_bins: usize,
}

/// Frequency-domain error between a reference and a candidate signal:
/// `Σ |Z_e − Z_c| / Σ (|Z_e| + |Z_c|)` over the DFT bins in `[f0, fmax]` Hz.
/// Zero for identical signals, one for a zero or sign-flipped candidate.
pub fn fde(reference: &[f64], candidate: &[f64], dt: f64, f0: f64, fmax: f64) -> Result<FdeReport> {
    if reference.len() != candidate.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} samples",
            reference.len(),
            candidate.len()
        )));
    }
    if reference.len() < 2 || !(f0 >= 0.0 && fmax > f0) {
        return Err(Error::EmptyBand { f0, fmax });
    }
    let ze = spectrum(reference);
    let zc = spectrum(candidate);
    let span = reference.len() as f64 * dt;
    let (mut num, mut den, mut n_bins) = (0.0, 0.0, 0);
    for (k, (a, b)) in ze.iter().zip(&zc).enumerate() {
        let f = k as f64 / span;
        if f >= f0 && f <= fmax {
            num += (a - b).norm();
            den += a.norm() + b.norm();
            n_bins += 1;
        }
    }
    if n_bins == 0 {
        return Err(Error::EmptyBand { f0, fmax });
    }
    Ok(FdeReport {
        value: if den == 0.0 { 0.0 } else { num / den },
        f0,
        fmax,
        n_bins,
    })
}

/// FDE between same-labelled channels of two series on the same grid.
pub fn fde_series(
    reference: &SignalSeries,
    candidate: &SignalSeries,
    channel: &str,
    f0: f64,
    fmax: f64,
) -> Result<FdeReport> {
    if (reference.dt - candidate.dt).abs() > DT_TOL * reference.dt {
        return Err(Error::GridMismatch(format!(
            "dt {} vs {}",
            reference.dt, candidate.dt
        )));
    }
    fde(
        &reference.channel_by_label(channel)?,
        &candidate.channel_by_label(channel)?,
        reference.dt,
        f0,
        fmax,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub total: Duration,
    pub mean: Duration,
    pub max: Duration,
    pub p99: Duration,
    pub count: usize,
}

/// Summary of per-step wall-clock times; p99 uses the nearest-rank rule.
pub fn timing_stats(times: &[Duration]) -> TimingStats {
    if times.is_empty() {
        return TimingStats {
            total: Duration::ZERO,
            mean: Duration::ZERO,
            max: Duration::ZERO,
            p99: Duration::ZERO,
            count: 0,
        };
    }
    let total: Duration = times.iter().sum();
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    let rank = ((0.99 * times.len() as f64).ceil() as usize).clamp(1, times.len());
    TimingStats {
        total,
        mean: total / times.len() as u32,
        max: *sorted.last().expect("non-empty"),
        p99: sorted[rank - 1],
        count: times.len(),
    }
}

/// A row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub case_id: String,
    pub channel: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(case_id: &str, channel: &str, metric: &str, value: f64) -> Self {
        Self {
            case_id: case_id.into(),
            channel: channel.into(),
            metric: metric.into(),
            value,
        }
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
