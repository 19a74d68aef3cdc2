//! Augmented Kalman filter (AKF) baseline for joint state and force estimation.
//!
//! The augmented state is `[u; u̇; f]` with `f` the forces at the measured
//! DOFs, modelled as a random walk. The continuous system is discretized
//! exactly with a zero-order hold through one matrix exponential; accelerations
//! at the measured DOFs are the observations.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::{measurement_columns, InputKind, RunOutput};
use crate::metrics::timing_stats;
use crate::numerics::{factorize, SymMatrix};
use crate::partition::PartitionedModel;
use crate::signals::{SignalKind, SignalSeries};

/// Covariance traces above this are treated as divergence.
pub const DIVERGENCE_TRACE: f64 = 1e200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AkfConfig {
    pub dt: f64,
    /// Per-step variance on each displacement and velocity entry.
    pub process_noise_state: f64,
    /// Per-step variance of the force random-walk increment.
    pub process_noise_force: f64,
    /// Variance of each acceleration channel.
    pub measurement_noise: f64,
    /// Initial covariance as a multiple of the process-noise covariance.
    pub initial_covariance: f64,
}

impl AkfConfig {
    /// Force increments with standard deviation `10·max_force` per √s,
    /// measurement variance from the sensor noise floor, and a tight initial
    /// covariance: records start with the structure at rest and unloaded.
    pub fn with_defaults(dt: f64, max_force: f64, noise_floor_std: f64) -> Self {
        let q_force = (10.0 * max_force).powi(2) * dt;
        Self {
            dt,
            process_noise_state: 1e-20,
            process_noise_force: q_force,
            measurement_noise: noise_floor_std.powi(2),
            initial_covariance: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        for (name, v) in [
            ("process_noise_state", self.process_noise_state),
            ("process_noise_force", self.process_noise_force),
            ("measurement_noise", self.measurement_noise),
            ("initial_covariance", self.initial_covariance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Filter mean and covariance.
#[derive(Debug, Clone)]
pub struct AkfState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Akf {
    pub config: AkfConfig,
    model: PartitionedModel,
    /// Discrete transition of `[u; u̇; f]`.
    pub transition: DMatrix<f64>,
    /// Acceleration observation at the measured DOFs.
    pub observation: DMatrix<f64>,
    q: DVector<f64>,
    pub state: AkfState,
    samples: usize,
}

impl Akf {
    pub fn new(model: PartitionedModel, config: AkfConfig) -> Result<Self> {
        config.validate()?;
        let n = model.dim();
        let nf = model.n_measured;
        let ns = 2 * n + nf;

        let m_f = factorize(&model.m)?;
        let minv_k = m_f.solve_matrix(model.k.as_matrix())?;
        let minv_c = m_f.solve_matrix(model.c.as_matrix())?;
        let mut sel = DMatrix::zeros(n, nf);
        for i in 0..nf {
            sel[(i, i)] = 1.0;
        }
        let minv_s = m_f.solve_matrix(&sel)?;

        // [[0, I, 0], [−M⁻¹K, −M⁻¹C, M⁻¹S], [0, 0, 0]]·dt
        let mut z = DMatrix::zeros(ns, ns);
        for i in 0..n {
            z[(i, n + i)] = 1.0;
        }
        z.view_mut((n, 0), (n, n)).copy_from(&(-&minv_k));
        z.view_mut((n, n), (n, n)).copy_from(&(-&minv_c));
        z.view_mut((n, 2 * n), (n, nf)).copy_from(&minv_s);
        z *= config.dt;
        let mut transition = z.exp();
        // the force block is an exact identity; clean exponential round-off
        transition.view_mut((2 * n, 0), (nf, ns)).fill(0.0);
        for i in 0..nf {
            transition[(2 * n + i, 2 * n + i)] = 1.0;
        }

        let mut observation = DMatrix::zeros(nf, ns);
        observation
            .view_mut((0, 0), (nf, n))
            .copy_from(&(-minv_k.rows(0, nf)));
        observation
            .view_mut((0, n), (nf, n))
            .copy_from(&(-minv_c.rows(0, nf)));
        observation
            .view_mut((0, 2 * n), (nf, nf))
            .copy_from(&minv_s.rows(0, nf));

        let q = DVector::from_fn(ns, |i, _| {
            if i < 2 * n {
                config.process_noise_state
            } else {
                config.process_noise_force
            }
        });
        let p = DMatrix::from_diagonal(&(&q * config.initial_covariance));
        Ok(Self {
            config,
            model,
            transition,
            observation,
            q,
            state: AkfState {
                x: DVector::zeros(ns),
                p,
            },
            samples: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn n_forces(&self) -> usize {
        self.model.n_measured
    }

    pub fn force(&self) -> DVector<f64> {
        self.state
            .x
            .rows(2 * self.dim(), self.n_forces())
            .into_owned()
    }

    pub fn displacement(&self) -> DVector<f64> {
        self.state.x.rows(0, self.dim()).into_owned()
    }

    /// Predict to the next sample, then update with its accelerations.
    pub fn step(&mut self, y: &[f64]) -> Result<()> {
        let nf = self.n_forces();
        if y.len() != nf {
            return Err(Error::DimensionMismatch {
                expected: nf,
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMeasurement(self.samples));
        }
        let f = &self.transition;
        let h = &self.observation;
        let st = &mut self.state;

        st.x = f * &st.x;
        let fp = f * &st.p;
        st.p = fp * f.transpose();
        for i in 0..self.q.len() {
            st.p[(i, i)] += self.q[i];
        }

        let pht = &st.p * h.transpose();
        let mut s = h * &pht;
        for i in 0..nf {
            s[(i, i)] += self.config.measurement_noise;
        }
        let s = SymMatrix::symmetrized(s);
        let s_f = factorize(&s).map_err(|_| Error::DivergedFilter(self.samples))?;
        // K = P Hᵀ S⁻¹
        let gain = s_f.solve_matrix(&pht.transpose())?.transpose();
        let innovation = DVector::from_column_slice(y) - h * &st.x;
        st.x += &gain * innovation;

        // Joseph form (I − KH)P(I − KH)ᵀ + KRKᵀ expanded with S = HPHᵀ + R
        let ks = &gain * s.as_matrix();
        let mut p =
            &st.p - &gain * pht.transpose() - &pht * gain.transpose() + ks * gain.transpose();
        p = (&p + p.transpose()) * 0.5;
        st.p = p;

        let trace = st.p.trace();
        if !trace.is_finite() || trace > DIVERGENCE_TRACE || st.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedFilter(self.samples));
        }
        self.samples += 1;
        Ok(())
    }

    /// Runs over a whole acceleration record; output matches the identify schema.
    pub fn run(&mut self, measurements: &SignalSeries) -> Result<RunOutput> {
        let measured: Vec<String> = self
            .model
            .measured_labels()
            .iter()
            .map(ToString::to_string)
            .collect();
        let all: Vec<String> = self.model.labels.iter().map(ToString::to_string).collect();
        let cols = measurement_columns(
            &measured,
            InputKind::Acceleration,
            self.config.dt,
            measurements,
        )?;
        let t0 = measurements.t0;
        let mut forces = SignalSeries::new(self.config.dt, t0, measured, SignalKind::Force)?;
        let mut responses = SignalSeries::new(self.config.dt, t0, all, SignalKind::Displacement)?;
        let mut times: Vec<Duration> = Vec::with_capacity(measurements.n_samples());
        let mut y = vec![0.0; cols.len()];
        for row in measurements.rows() {
            for (yi, &j) in y.iter_mut().zip(&cols) {
                *yi = row[j];
            }
            let start = Instant::now();
            self.step(&y)?;
            times.push(start.elapsed());
            forces.push_row(self.force().as_slice())?;
            responses.push_row(self.displacement().as_slice())?;
        }
        Ok(RunOutput {
            forces,
            responses,
            timing: timing_stats(&times),
            step_times: times,
        })
    }
}
