//! One function per subcommand. Each stage reads the artifacts written by
//! earlier stages from the output directory and writes its own next to them.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vsense_core::akf::{Akf, AkfConfig};
use vsense_core::identify::{run_session, simulate, IdentifySession, IdentifySetup, InputKind};
use vsense_core::metrics::{fde_series, timing_stats, write_metrics_csv, MetricRow, TimingStats};
use vsense_core::model::{
    build_cantilever_beam, build_spring_chain, import_matrices, rayleigh_damping, FullModel,
};
use vsense_core::partition::PartitionedModel;
use vsense_core::regularize::{lcurve_select, log_grid, write_lcurve_csv};
use vsense_core::rom::{eigenvalue_error, reduce as reduce_model, Partition, ReducedModel};
use vsense_core::signals::{
    add_noise, bandlimited_random_force, sample_profile, snr_db, CsvSink, CsvSource, SignalKind,
    SignalSeries, CSV_DT_TOL,
};
use vsense_core::Error;

use crate::config::{ConfigError, Excitation, ModelSection, RunConfig};

/// α chosen by `calibrate`, stored for later stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedAlpha {
    pub alpha: f64,
    pub index: usize,
    pub admissible: usize,
    pub degenerate: bool,
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))
}

fn strings<T: ToString>(items: &[T]) -> Vec<String> {
    items.iter().map(ToString::to_string).collect()
}

/// Assembles the full model with Rayleigh damping and saves it.
pub fn build(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let model = match &cfg.model {
        ModelSection::Beam { .. } => build_cantilever_beam(&cfg.beam_spec()?)?,
        ModelSection::Chain {
            masses,
            stiffnesses,
            grounded,
        } => build_spring_chain(masses, stiffnesses, *grounded)?,
        ModelSection::Matrices { m, k, labels } => import_matrices(m, k, labels.as_deref())?,
    };
    let model = rayleigh_damping(&model, cfg.reduction.damping_a, cfg.reduction.damping_b)?;
    model.save(&cfg.full_model_dir())?;
    println!(
        "full model: {} DOFs -> {}",
        model.dim(),
        cfg.full_model_dir().display()
    );
    Ok(())
}

/// Reduces the saved full model and reports the eigenvalue errors.
pub fn reduce(cfg: &RunConfig) -> Result<()> {
    if !cfg.is_reduced() {
        return Err(ConfigError::new(
            "partition.masters",
            "no master DOFs given, nothing to reduce",
        )
        .into());
    }
    let full = FullModel::load(&cfg.full_model_dir())?;
    let p = Partition::from_labels(&full, &cfg.masters())?;
    let red = reduce_model(
        &full,
        &p,
        cfg.reduction.n_modes,
        cfg.reduction.damping_a,
        cfg.reduction.damping_b,
    )?;
    red.save(&cfg.reduced_model_dir())?;
    let errors = eigenvalue_error(&full, &red, red.dim().min(full.dim()))?;
    let path = cfg.out.join("eigenvalue_error.csv");
    let mut text = String::from("mode,error_percent\n");
    for (i, e) in errors.iter().enumerate() {
        text.push_str(&format!("{},{e:e}\n", i + 1));
    }
    fs::write(&path, text)?;
    let worst = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    println!(
        "reduced model: {} -> {} coordinates, max |eigenvalue error| {worst:.3e} %",
        full.dim(),
        red.dim()
    );
    Ok(())
}

fn force_series(cfg: &RunConfig) -> Result<SignalSeries> {
    let forces = &cfg.excitation.forces;
    if forces.is_empty() {
        return Err(ConfigError::new("excitation.forces", "no forces to apply").into());
    }
    let dt = cfg.integrator.dt;
    let n = cfg.excitation.samples;
    let mut columns = Vec::with_capacity(forces.len());
    for (i, f) in forces.iter().enumerate() {
        let values = match cfg.excitation(i)? {
            // the force in row j acts at the end of step j, time (j+1)·dt
            Excitation::Profile(p) => sample_profile(p, dt, dt, n),
            Excitation::Random { lo, hi, rms } => {
                bandlimited_random_force(lo, hi, rms, n, dt, cfg.seed.wrapping_add(1 + i as u64))?
            }
        };
        columns.push(values.into_iter().map(|v| v * f.scale).collect());
    }
    let labels = forces.iter().map(|f| f.label.clone()).collect();
    Ok(SignalSeries::from_columns(
        dt,
        dt,
        labels,
        SignalKind::Force,
        &columns,
    )?)
}

/// Integrates the full model under the configured forces and writes the
/// truth records plus clean and noisy measurement channels.
pub fn simulate_cmd(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let full = FullModel::load(&cfg.full_model_dir())?;
    let forces = force_series(cfg)?;
    let labels = strings(&full.dof_labels);
    let sim = simulate(&full.m, &full.c, &full.k, &labels, cfg.newmark()?, &forces)?;
    forces.write_csv(&cfg.out.join("forces.csv"))?;
    sim.displacement
        .write_csv(&cfg.out.join("displacement.csv"))?;
    sim.acceleration
        .write_csv(&cfg.out.join("acceleration.csv"))?;
    let source = match cfg.integrator.input {
        InputKind::Displacement => &sim.displacement,
        InputKind::Acceleration => &sim.acceleration,
    };
    let clean = source.select(&strings(&cfg.measured()))?;
    let noisy = add_noise(&clean, cfg.noise.fraction, cfg.seed)?;
    clean.write_csv(&cfg.out.join("measurements_clean.csv"))?;
    noisy.write_csv(&cfg.measurements_path())?;
    println!(
        "simulated {} samples of {} DOFs; {} measured channels (noise {} of std)",
        forces.n_samples(),
        full.dim(),
        noisy.n_channels(),
        cfg.noise.fraction
    );
    Ok(())
}

/// Model used for identification and, when reduced, the archive needed to
/// expand responses to every full-model DOF.
struct Identification {
    model: PartitionedModel,
    reduced: Option<ReducedModel>,
}

fn load_identification(cfg: &RunConfig) -> Result<Identification> {
    let measured = cfg.measured();
    if cfg.is_reduced() {
        let red = ReducedModel::load(&cfg.reduced_model_dir())
            .with_context(|| format!("cannot load {}", cfg.reduced_model_dir().display()))?;
        let model = PartitionedModel::from_reduced(&red, &measured)?;
        Ok(Identification {
            model,
            reduced: Some(red),
        })
    } else {
        let full = FullModel::load(&cfg.full_model_dir())
            .with_context(|| format!("cannot load {}", cfg.full_model_dir().display()))?;
        Ok(Identification {
            model: PartitionedModel::from_full(&full, &measured)?,
            reduced: None,
        })
    }
}

/// Selects α on the configured grid from the L-curve of a calibration window.
pub fn calibrate(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let id = load_identification(cfg)?;
    let g = &cfg.regularization;
    let template = IdentifySetup::new(id.model, cfg.newmark()?, 0.0, cfg.integrator.input)?;
    let norm = template.operator().norm();
    let grid = log_grid(g.grid_lo, g.grid_hi, norm * norm, g.grid_points);
    let path = g
        .calibration
        .clone()
        .unwrap_or_else(|| cfg.measurements_path());
    let record = SignalSeries::read_csv(&path, cfg.integrator.input.into())
        .with_context(|| format!("cannot read {}", path.display()))?;
    let window = record.head(g.calibration_samples);
    let sel = lcurve_select(&template, &window, &grid)?;
    write_lcurve_csv(&cfg.out.join("lcurve.csv"), &sel.points)?;
    let chosen = CalibratedAlpha {
        alpha: sel.alpha,
        index: sel.index,
        admissible: sel.admissible,
        degenerate: sel.degenerate,
    };
    fs::write(cfg.alpha_path(), toml::to_string(&chosen)?)?;
    println!(
        "alpha = {:e} (grid point {} of {}, {} admissible{})",
        sel.alpha,
        sel.index + 1,
        grid.len(),
        sel.admissible,
        if sel.degenerate {
            ", no corner found"
        } else {
            ""
        }
    );
    Ok(())
}

fn resolve_alpha(cfg: &RunConfig) -> Result<f64> {
    if let Some(a) = cfg.regularization.alpha {
        return Ok(a);
    }
    let path = cfg.alpha_path();
    if !path.exists() {
        return Err(ConfigError::new(
            "regularization.alpha",
            format!("not set and no calibrated value at {}", path.display()),
        )
        .into());
    }
    let stored: CalibratedAlpha = toml::from_str(&fs::read_to_string(&path)?)
        .with_context(|| format!("cannot parse {}", path.display()))?;
    Ok(stored.alpha)
}

/// Output files shared by the identification and Kalman runs.
struct RunSinks {
    forces: CsvSink,
    responses: CsvSink,
    expanded: Option<CsvSink>,
    timing: CsvSink,
}

impl RunSinks {
    fn create(dir: &Path, id: &Identification) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let expanded = match &id.reduced {
            Some(red) => Some(CsvSink::create(
                &dir.join("expanded.csv"),
                &strings(&red.full_labels),
            )?),
            None => None,
        };
        Ok(Self {
            forces: CsvSink::create(
                &dir.join("forces.csv"),
                &strings(id.model.measured_labels()),
            )?,
            responses: CsvSink::create(&dir.join("responses.csv"), &strings(&id.model.labels))?,
            expanded,
            timing: CsvSink::create(&dir.join("timing.csv"), &["seconds".to_string()])?,
        })
    }
}

/// Streams the measurement CSV row by row through `step`, writing and
/// flushing every output row as soon as it is available.
fn stream<F>(cfg: &RunConfig, id: &Identification, dir: &Path, mut step: F) -> Result<TimingStats>
where
    F: FnMut(&[f64]) -> vsense_core::Result<(Vec<f64>, Vec<f64>)>,
{
    let dt = cfg.integrator.dt;
    let path = cfg.measurements_path();
    let mut src =
        CsvSource::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    let cols: Vec<usize> = id
        .model
        .measured_labels()
        .iter()
        .map(|l| {
            let l = l.to_string();
            src.channels
                .iter()
                .position(|c| *c == l)
                .ok_or(Error::UnknownLabel(l))
        })
        .collect::<vsense_core::Result<_>>()?;
    let mut sinks = RunSinks::create(dir, id)?;
    let mut times: Vec<Duration> = Vec::new();
    let mut y = vec![0.0; cols.len()];
    let mut first: Option<(f64, Vec<f64>)> = None;
    let mut t0 = 0.0;
    let mut index = 0usize;

    let mut process = |t: f64, row: &[f64], times: &mut Vec<Duration>| -> Result<()> {
        for (yi, &j) in y.iter_mut().zip(&cols) {
            *yi = row[j];
        }
        let start = Instant::now();
        let (force, disp) = step(&y)?;
        times.push(start.elapsed());
        sinks.forces.write_row(t, &force)?;
        sinks.responses.write_row(t, &disp)?;
        if let (Some(sink), Some(red)) = (&mut sinks.expanded, &id.reduced) {
            let full = red.expand(id.model.to_source(&disp).as_slice())?;
            sink.write_row(t, full.as_slice())?;
            sink.flush()?;
        }
        sinks
            .timing
            .write_row(t, &[times.last().expect("just pushed").as_secs_f64()])?;
        sinks.forces.flush()?;
        sinks.responses.flush()?;
        sinks.timing.flush()?;
        Ok(())
    };

    while let Some((t, row)) = src.next_row()? {
        match index {
            0 => {
                t0 = t;
                first = Some((t, row));
            }
            1 => {
                let found = t - t0;
                if (found - dt).abs() > CSV_DT_TOL * dt {
                    return Err(Error::SampleRateMismatch {
                        expected: dt,
                        found,
                    }
                    .into());
                }
                let (tf, rf) = first.take().expect("first row kept");
                process(tf, &rf, &mut times)?;
                process(t, &row, &mut times)?;
            }
            _ => {
                let expected = t0 + index as f64 * dt;
                if (t - expected).abs() > CSV_DT_TOL * dt {
                    return Err(Error::Parse {
                        path: path.clone(),
                        msg: format!("non-uniform sampling at row {}", index + 1),
                    }
                    .into());
                }
                process(t, &row, &mut times)?;
            }
        }
        index += 1;
    }
    if index < 2 {
        return Err(Error::Parse {
            path,
            msg: "need at least two samples to infer the sample interval".into(),
        }
        .into());
    }
    Ok(timing_stats(&times))
}

fn report_timing(label: &str, dir: &Path, t: &TimingStats) {
    println!(
        "{label}: {} steps, mean {:.3e} s, p99 {:.3e} s, max {:.3e} s -> {}",
        t.count,
        t.mean.as_secs_f64(),
        t.p99.as_secs_f64(),
        t.max.as_secs_f64(),
        dir.display()
    );
}

/// Online stage: streaming force identification and response reconstruction.
pub fn identify(cfg: &RunConfig) -> Result<()> {
    let id = load_identification(cfg)?;
    let alpha = resolve_alpha(cfg)?;
    let setup = IdentifySetup::new(
        id.model.clone(),
        cfg.newmark()?,
        alpha,
        cfg.integrator.input,
    )?;
    let mut session = IdentifySession::new(Arc::new(setup));
    let dir = cfg.out.join("identify");
    let stats = stream(cfg, &id, &dir, |y| {
        let r = session.step(y)?;
        Ok((
            r.force.as_slice().to_vec(),
            r.displacement.as_slice().to_vec(),
        ))
    })?;
    report_timing("identify", &dir, &stats);
    Ok(())
}

fn akf_config(cfg: &RunConfig) -> Result<AkfConfig, ConfigError> {
    let a = &cfg.akf;
    let dt = cfg.integrator.dt;
    let mut c = AkfConfig::with_defaults(dt, 1.0, 1.0);
    c.process_noise_force = match (a.process_noise_force, a.max_force) {
        (Some(q), _) => q,
        (None, Some(f)) => AkfConfig::with_defaults(dt, f, 1.0).process_noise_force,
        (None, None) => {
            return Err(ConfigError::new(
                "akf.max_force",
                "set akf.max_force or akf.process_noise_force",
            ))
        }
    };
    c.measurement_noise = match (a.measurement_noise, a.noise_std) {
        (Some(r), _) => r,
        (None, Some(s)) => s * s,
        (None, None) => {
            return Err(ConfigError::new(
                "akf.noise_std",
                "set akf.noise_std or akf.measurement_noise",
            ))
        }
    };
    if let Some(q) = a.process_noise_state {
        c.process_noise_state = q;
    }
    if let Some(p) = a.initial_covariance {
        c.initial_covariance = p;
    }
    c.validate()
        .map_err(|e| ConfigError::new("akf", e.to_string()))?;
    Ok(c)
}

/// Augmented Kalman filter baseline with the identification output schema.
pub fn akf(cfg: &RunConfig) -> Result<()> {
    if cfg.integrator.input != InputKind::Acceleration {
        return Err(ConfigError::new(
            "integrator.input",
            "the Kalman baseline observes accelerations",
        )
        .into());
    }
    let id = load_identification(cfg)?;
    let mut filter = Akf::new(id.model.clone(), akf_config(cfg)?)?;
    let dir = cfg.out.join("akf");
    let stats = stream(cfg, &id, &dir, |y| {
        filter.step(y)?;
        Ok((
            filter.force().as_slice().to_vec(),
            filter.displacement().as_slice().to_vec(),
        ))
    })?;
    report_timing("akf", &dir, &stats);
    Ok(())
}

fn read_timing(path: &Path) -> Result<Vec<Duration>> {
    let mut src = CsvSource::open(path)?;
    let mut out = Vec::new();
    while let Some((_, row)) = src.next_row()? {
        out.push(Duration::from_secs_f64(row[0]));
    }
    Ok(out)
}

/// Scores an identification or Kalman run against the simulated truth.
pub fn metrics(cfg: &RunConfig) -> Result<()> {
    let dir: PathBuf = cfg
        .metrics
        .estimate
        .clone()
        .unwrap_or_else(|| cfg.out.join("identify"));
    let case = dir
        .file_name()
        .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
    let truth_f = SignalSeries::read_csv(&cfg.out.join("forces.csv"), SignalKind::Force)?;
    let est_f = SignalSeries::read_csv(&dir.join("forces.csv"), SignalKind::Force)
        .with_context(|| format!("no run output in {}", dir.display()))?;
    if !truth_f.same_grid(&est_f) {
        return Err(Error::GridMismatch(format!(
            "truth has {} samples at {:e} s, estimate {} at {:e} s",
            truth_f.n_samples(),
            truth_f.dt,
            est_f.n_samples(),
            est_f.dt
        ))
        .into());
    }
    let [lo, hi] = cfg.metrics.band.unwrap_or([0.0, 0.5 / truth_f.dt]);
    let mut rows = Vec::new();
    for ch in &est_f.channels {
        if truth_f.channels.contains(ch) {
            let r = fde_series(&truth_f, &est_f, ch, lo, hi)?;
            rows.push(MetricRow::new(&case, ch, "force_fde", r.value));
        }
    }

    let truth_u =
        SignalSeries::read_csv(&cfg.out.join("displacement.csv"), SignalKind::Displacement)?;
    let expanded = dir.join("expanded.csv");
    let resp_path = if expanded.exists() {
        expanded
    } else {
        dir.join("responses.csv")
    };
    let est_u = SignalSeries::read_csv(&resp_path, SignalKind::Displacement)?;
    for ch in &est_u.channels {
        if truth_u.channels.contains(ch) {
            let r = fde_series(&truth_u, &est_u, ch, lo, hi)?;
            rows.push(MetricRow::new(&case, ch, "response_fde", r.value));
        }
    }

    let clean_path = cfg.out.join("measurements_clean.csv");
    if clean_path.exists() {
        let kind = cfg.integrator.input.into();
        let clean = SignalSeries::read_csv(&clean_path, kind)?;
        let noisy = SignalSeries::read_csv(&cfg.measurements_path(), kind)?;
        for (ch, v) in clean.channels.iter().zip(snr_db(&noisy, &clean)?) {
            rows.push(MetricRow::new(&case, ch, "snr_db", v));
        }
    }

    let timing_path = dir.join("timing.csv");
    if timing_path.exists() {
        let t = timing_stats(&read_timing(&timing_path)?);
        rows.push(MetricRow::new(
            &case,
            "all",
            "step_mean_s",
            t.mean.as_secs_f64(),
        ));
        rows.push(MetricRow::new(
            &case,
            "all",
            "step_p99_s",
            t.p99.as_secs_f64(),
        ));
    }

    let eig_path = cfg.out.join("eigenvalue_error.csv");
    if eig_path.exists() {
        let text = fs::read_to_string(&eig_path)?;
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let bad = || Error::Parse {
                path: eig_path.clone(),
                msg: format!("bad row `{line}`"),
            };
            let (mode, value) = line.split_once(',').ok_or_else(bad)?;
            let value: f64 = value.trim().parse().map_err(|_| bad())?;
            rows.push(MetricRow::new(
                &case,
                &format!("mode:{}", mode.trim()),
                "eigenvalue_error_pct",
                value,
            ));
        }
    }

    let out = dir.join("metrics.csv");
    write_metrics_csv(&out, &rows)?;
    for r in rows.iter().filter(|r| r.metric == "force_fde") {
        println!("{case} {} force FDE {:.6e}", r.channel, r.value);
    }
    println!("{} metric rows -> {}", rows.len(), out.display());
    Ok(())
}

/// Per-step latency of the identification loop over the measurement record.
pub fn bench(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let id = load_identification(cfg)?;
    let alpha = resolve_alpha(cfg)?;
    let setup = Arc::new(IdentifySetup::new(
        id.model,
        cfg.newmark()?,
        alpha,
        cfg.integrator.input,
    )?);
    let record = SignalSeries::read_csv(&cfg.measurements_path(), cfg.integrator.input.into())?;
    let path = cfg.out.join("bench.csv");
    let mut text = String::from("repeat,step,seconds\n");
    let mut all = Vec::new();
    for rep in 0..cfg.bench.repeats {
        let mut session = IdentifySession::new(setup.clone());
        let run = run_session(&mut session, &record)?;
        for (i, t) in run.step_times.iter().enumerate() {
            text.push_str(&format!("{rep},{i},{:e}\n", t.as_secs_f64()));
        }
        all.extend(run.step_times);
    }
    fs::write(&path, text)?;
    let t = timing_stats(&all);
    println!(
        "bench: N̂ = {}, {} steps, mean {:.3e} s, p99 {:.3e} s, max {:.3e} s -> {}",
        setup.dim(),
        t.count,
        t.mean.as_secs_f64(),
        t.p99.as_secs_f64(),
        t.max.as_secs_f64(),
        path.display()
    );
    Ok(())
}
