//! Uniformly sampled multi-channel signals, CSV I/O, force profiles and
//! measurement noise.
//!
//! CSV layout: a header `t,<label>,<label>,…` followed by one row per sample.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the sample interval when comparing grids.
pub const DT_TOL: f64 = 1e-9;
/// Looser tolerance for sample times read back from text.
pub const CSV_DT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Displacement,
    Velocity,
    Acceleration,
    Force,
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "displacement" => Ok(Self::Displacement),
            "velocity" => Ok(Self::Velocity),
            "acceleration" => Ok(Self::Acceleration),
            "force" => Ok(Self::Force),
            _ => Err(Error::InvalidParameter(format!(
                "unknown signal kind `{s}`"
            ))),
        }
    }
}

/// Samples stored row-major: `data[i * n_channels + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub dt: f64,
    pub t0: f64,
    pub channels: Vec<String>,
    pub kind: SignalKind,
    data: Vec<f64>,
}

impl SignalSeries {
    pub fn new(dt: f64, t0: f64, channels: Vec<String>, kind: SignalKind) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample interval must be positive, got {dt}"
            )));
        }
        if channels.is_empty() {
            return Err(Error::InvalidParameter(
                "signal needs at least one channel".into(),
            ));
        }
        Ok(Self {
            dt,
            t0,
            channels,
            kind,
            data: Vec::new(),
        })
    }

    /// Builds a series from per-channel columns of equal length.
    pub fn from_columns(
        dt: f64,
        t0: f64,
        channels: Vec<String>,
        kind: SignalKind,
        columns: &[Vec<f64>],
    ) -> Result<Self> {
        if columns.len() != channels.len() {
            return Err(Error::DimensionMismatch {
                expected: channels.len(),
                found: columns.len(),
            });
        }
        let mut s = Self::new(dt, t0, channels, kind)?;
        let n = columns.first().map_or(0, Vec::len);
        let mut row = vec![0.0; columns.len()];
        for i in 0..n {
            for (j, col) in columns.iter().enumerate() {
                if col.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: col.len(),
                    });
                }
                row[j] = col[i];
            }
            s.push_row(&row)?;
        }
        Ok(s)
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_channels()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_channels() {
            return Err(Error::DimensionMismatch {
                expected: self.n_channels(),
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMeasurement(self.n_samples()));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nc = self.n_channels();
        &self.data[i * nc..(i + 1) * nc]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_channels())
    }

    pub fn channel(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn channel_by_label(&self, label: &str) -> Result<Vec<f64>> {
        Ok(self.channel(self.channel_index(label)?))
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> SignalSeries {
        let n = n.min(self.n_samples());
        SignalSeries {
            data: self.data[..n * self.n_channels()].to_vec(),
            channels: self.channels.clone(),
            ..*self
        }
    }

    /// Every `factor`-th sample starting with the first.
    pub fn decimate(&self, factor: usize) -> Result<SignalSeries> {
        if factor == 0 {
            return Err(Error::InvalidParameter(
                "decimation factor must be positive".into(),
            ));
        }
        let mut out = SignalSeries::new(
            self.dt * factor as f64,
            self.t0,
            self.channels.clone(),
            self.kind,
        )?;
        for r in self.rows().step_by(factor) {
            out.data.extend_from_slice(r);
        }
        Ok(out)
    }

    /// Channels selected by label, in the given order.
    pub fn select(&self, labels: &[String]) -> Result<SignalSeries> {
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| self.channel_index(l))
            .collect::<Result<_>>()?;
        let mut out = SignalSeries::new(self.dt, self.t0, labels.to_vec(), self.kind)?;
        for r in self.rows() {
            out.data.extend(idx.iter().map(|&j| r[j]));
        }
        Ok(out)
    }

    pub fn same_grid(&self, other: &SignalSeries) -> bool {
        (self.dt - other.dt).abs() <= DT_TOL * self.dt
            && (self.t0 - other.t0).abs() <= DT_TOL * self.dt
            && self.n_samples() == other.n_samples()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut sink = CsvSink::create(path, &self.channels)?;
        for i in 0..self.n_samples() {
            sink.write_row(self.time(i), self.row(i))?;
        }
        sink.flush()
    }

    /// Reads a CSV written by [`SignalSeries::write_csv`] or [`CsvSink`].
    pub fn read_csv(path: &Path, kind: SignalKind) -> Result<SignalSeries> {
        let mut reader = CsvSource::open(path)?;
        let mut out: Option<SignalSeries> = None;
        let mut times = Vec::new();
        while let Some((t, row)) = reader.next_row()? {
            times.push(t);
            if times.len() == 2 {
                out = Some(SignalSeries::new(
                    times[1] - times[0],
                    times[0],
                    reader.channels.clone(),
                    kind,
                )?);
            }
            match &mut out {
                Some(s) => {
                    let expected = s.time(times.len() - 1);
                    if (t - expected).abs() > CSV_DT_TOL * s.dt {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            msg: format!("non-uniform sampling at row {}", times.len()),
                        });
                    }
                    if times.len() == 2 {
                        s.push_row(&reader.first_row)?;
                    }
                    s.push_row(&row)
                        .map_err(|_| Error::NonFiniteMeasurement(times.len() - 1))?;
                }
                None => reader.first_row = row,
            }
        }
        out.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            msg: "need at least two samples to infer the sample interval".into(),
        })
    }
}

/// Incremental CSV writer; each row is flushed to the OS when requested.
pub struct CsvSink {
    w: BufWriter<File>,
}

impl CsvSink {
    pub fn create(path: &Path, channels: &[String]) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "t")?;
        for c in channels {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        Ok(Self { w })
    }

    pub fn write_row(&mut self, t: f64, row: &[f64]) -> Result<()> {
        write!(self.w, "{t:.15e}")?;
        for v in row {
            write!(self.w, ",{v:e}")?;
        }
        writeln!(self.w)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Row-by-row CSV reader for streaming input.
pub struct CsvSource {
    reader: csv::Reader<File>,
    pub channels: Vec<String>,
    record: csv::StringRecord,
    row_index: usize,
    first_row: Vec<f64>,
    path: std::path::PathBuf,
}

impl CsvSource {
    pub fn open(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("t") {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: "header must be `t,<channel>,...`".into(),
            });
        }
        Ok(Self {
            reader,
            channels: headers.iter().skip(1).map(str::to_string).collect(),
            record: csv::StringRecord::new(),
            row_index: 0,
            first_row: Vec::new(),
            path: path.to_path_buf(),
        })
    }

    /// Next `(t, values)`; non-numeric fields become NaN so the caller can
    /// report the sample index.
    pub fn next_row(&mut self) -> Result<Option<(f64, Vec<f64>)>> {
        if !self.reader.read_record(&mut self.record)? {
            return Ok(None);
        }
        self.row_index += 1;
        if self.record.len() != self.channels.len() + 1 {
            return Err(Error::Parse {
                path: self.path.clone(),
                msg: format!("row {} has {} fields", self.row_index, self.record.len()),
            });
        }
        let t: f64 = self.record[0].parse().map_err(|_| Error::Parse {
            path: self.path.clone(),
            msg: format!("bad time in row {}", self.row_index),
        })?;
        let vals = self
            .record
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        Ok(Some((t, vals)))
    }
}

/// The four chirp-plus-tone excitation profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceProfile {
    F1x,
    F1y,
    F2x,
    F2y,
}

impl FromStr for ForceProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1x" => Ok(Self::F1x),
            "f1y" => Ok(Self::F1y),
            "f2x" => Ok(Self::F2x),
            "f2y" => Ok(Self::F2y),
            _ => Err(Error::UnknownProfile(s.to_string())),
        }
    }
}

const CHIRP_RATE: f64 = 1000.0;
const TONE_HZ: f64 = 200.0;
const RAMP_TAU: f64 = 0.05;

/// Force value in newtons at time `t` (seconds).
pub fn chirp_tone_force(profile: ForceProfile, t: f64) -> f64 {
    use std::f64::consts::TAU;
    let chirp = TAU * CHIRP_RATE * t * t;
    let tone = (TAU * TONE_HZ * t).sin();
    let ramp = 1.0 - (-t / RAMP_TAU).exp();
    let raw = match profile {
        ForceProfile::F1x => 5500.0 * chirp.sin() + 5000.0 * tone,
        ForceProfile::F1y => 5500.0 * chirp.cos() + 5000.0 * tone,
        ForceProfile::F2x | ForceProfile::F2y => 10000.0 * chirp.sin() + 5400.0 * tone,
    };
    ramp * raw
}

/// Samples a profile at `t0 + i·dt`, `i = 0..n`.
pub fn sample_profile(profile: ForceProfile, dt: f64, t0: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| chirp_tone_force(profile, t0 + i as f64 * dt))
        .collect()
}

fn channel_seed(seed: u64, channel: usize) -> u64 {
    // splitmix64 step keeps neighbouring channels decorrelated
    let mut z = seed
        ^ (channel as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn std_dev(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Adds zero-mean Gaussian noise with standard deviation
/// `sigma_fraction × std(channel)` to every channel.
pub fn add_noise(clean: &SignalSeries, sigma_fraction: f64, seed: u64) -> Result<SignalSeries> {
    if !(sigma_fraction >= 0.0 && sigma_fraction.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise fraction must be non-negative, got {sigma_fraction}"
        )));
    }
    let mut columns = Vec::with_capacity(clean.n_channels());
    for j in 0..clean.n_channels() {
        let mut col = clean.channel(j);
        let sigma = sigma_fraction * std_dev(&col);
        let mut rng = ChaCha8Rng::seed_from_u64(channel_seed(seed, j));
        for v in &mut col {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
        columns.push(col);
    }
    SignalSeries::from_columns(
        clean.dt,
        clean.t0,
        clean.channels.clone(),
        clean.kind,
        &columns,
    )
}

/// Per-channel `20·log10(rms(noisy) / rms(noisy − clean))`; `+∞` when identical.
pub fn snr_db(noisy: &SignalSeries, clean: &SignalSeries) -> Result<Vec<f64>> {
    if !noisy.same_grid(clean) || noisy.n_channels() != clean.n_channels() {
        return Err(Error::GridMismatch(
            "noisy and clean series differ in shape".into(),
        ));
    }
    Ok((0..noisy.n_channels())
        .map(|j| {
            let a = noisy.channel(j);
            let diff: Vec<f64> = a.iter().zip(clean.channel(j)).map(|(x, y)| x - y).collect();
            let e = rms(&diff);
            if e == 0.0 {
                f64::INFINITY
            } else {
                20.0 * (rms(&a) / e).log10()
            }
        })
        .collect())
}

/// Zero-mean random force whose spectrum is confined to `[lo, hi]` Hz.
/// `amplitude` is the RMS of the returned signal.
pub fn bandlimited_random_force(
    lo: f64,
    hi: f64,
    amplitude: f64,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let nyquist = 0.5 / dt;
    if !(lo >= 0.0 && hi > lo && hi <= nyquist) {
        return Err(Error::InvalidBand { lo, hi });
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * dt);
    let mut kept = 0;
    for (k, z) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * df;
        if k == 0 || f < lo || f > hi {
            *z = Complex::new(0.0, 0.0);
        } else {
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::InvalidBand { lo, hi });
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let scale = amplitude / rms(&x);
    for v in &mut x {
        *v *= scale;
    }
    Ok(x)
}
