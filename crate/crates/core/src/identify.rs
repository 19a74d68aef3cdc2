//! Modified Newmark-β integration with simultaneous force identification.
//!
//! Each step first predicts the response with zero force at the measured
//! DOFs, then picks the force that makes the measured coordinates match the
//! data in a Tikhonov least-squares sense, and finally corrects the whole
//! state with that force. All gains are fixed by the model and time step, so
//! they are factored once at setup; a step costs one triangular solve pair
//! and a few matrix-vector products.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{timing_stats, TimingStats};
use crate::numerics::{factorize, schur_complement_inverse, Factorization, SymMatrix};
use crate::partition::PartitionedModel;
use crate::signals::{SignalKind, SignalSeries, DT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewmarkParams {
    pub beta: f64,
    pub delta: f64,
    pub dt: f64,
}

impl NewmarkParams {
    /// Constant average acceleration (β = 1/4, δ = 1/2).
    pub fn average_acceleration(dt: f64) -> Self {
        Self {
            beta: 0.25,
            delta: 0.5,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if !(self.beta > 0.0) || !(self.delta > 0.0) {
            return Err(Error::InvalidParameter("β and δ must be positive".into()));
        }
        if self.delta < 0.5 || self.beta < 0.25 * (0.5 + self.delta).powi(2) {
            log::warn!(
                "Newmark parameters β = {}, δ = {} are not unconditionally stable",
                self.beta,
                self.delta
            );
        }
        Ok(())
    }

    pub fn coefficients(&self) -> NewmarkCoefficients {
        let (b, d, h) = (self.beta, self.delta, self.dt);
        NewmarkCoefficients {
            a0: 1.0 / (b * h * h),
            a1: d / (b * h),
            a2: 1.0 / (b * h),
            a3: 1.0 / (2.0 * b) - 1.0,
            a4: d / b - 1.0,
            a5: h * (d / (2.0 * b) - 1.0),
            a6: h * (1.0 - d),
            a7: d * h,
        }
    }
}

/// Integration constants derived from β, δ and Δt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewmarkCoefficients {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
    pub a7: f64,
}

impl NewmarkCoefficients {
    /// `K̃ = a0·M + a1·C + K`
    pub fn effective_stiffness(&self, m: &SymMatrix, c: &SymMatrix, k: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrized(m.as_matrix() * self.a0 + c.as_matrix() * self.a1 + k.as_matrix())
    }
}

/// Displacement, velocity and acceleration at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
}

impl State {
    pub fn at_rest(n: usize) -> Self {
        Self {
            t: 0.0,
            u: DVector::zeros(n),
            v: DVector::zeros(n),
            a: DVector::zeros(n),
        }
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone)]
struct Workspace {
    x1: DVector<f64>,
    x2: DVector<f64>,
    r: DVector<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            x1: DVector::zeros(n),
            x2: DVector::zeros(n),
            r: DVector::zeros(n),
        }
    }

    /// `r = M(a0 u + a2 v + a3 a) + C(a1 u + a4 v + a5 a)`
    fn history(&mut self, c: &NewmarkCoefficients, m: &DMatrix<f64>, cm: &DMatrix<f64>, s: &State) {
        for i in 0..s.u.len() {
            self.x1[i] = c.a0 * s.u[i] + c.a2 * s.v[i] + c.a3 * s.a[i];
            self.x2[i] = c.a1 * s.u[i] + c.a4 * s.v[i] + c.a5 * s.a[i];
        }
        self.r.gemv(1.0, m, &self.x1, 0.0);
        self.r.gemv(1.0, cm, &self.x2, 1.0);
    }
}

/// Newmark update of velocity and acceleration once `u_new` is known.
fn advance(c: &NewmarkCoefficients, dt: f64, s: &mut State, u_new: &DVector<f64>) {
    for i in 0..u_new.len() {
        let a_new = c.a0 * (u_new[i] - s.u[i]) - c.a2 * s.v[i] - c.a3 * s.a[i];
        s.v[i] += c.a6 * s.a[i] + c.a7 * a_new;
        s.a[i] = a_new;
        s.u[i] = u_new[i];
    }
    s.t += dt;
}

/// Plain Newmark-β integrator with known forces, used to synthesize responses.
#[derive(Debug, Clone)]
pub struct ForwardIntegrator {
    m: SymMatrix,
    c: SymMatrix,
    k: SymMatrix,
    params: NewmarkParams,
    coeffs: NewmarkCoefficients,
    k_eff: Factorization,
    m_factor: Factorization,
    work: Workspace,
}

impl ForwardIntegrator {
    pub fn new(m: &SymMatrix, c: &SymMatrix, k: &SymMatrix, params: NewmarkParams) -> Result<Self> {
        params.validate()?;
        let n = m.dim();
        if k.dim() != n || c.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if k.dim() != n { k.dim() } else { c.dim() },
            });
        }
        let coeffs = params.coefficients();
        let k_eff = factorize(&coeffs.effective_stiffness(m, c, k))
            .map_err(|_| Error::SingularEffectiveStiffness)?;
        Ok(Self {
            m: m.clone(),
            c: c.clone(),
            k: k.clone(),
            params,
            coeffs,
            k_eff,
            m_factor: factorize(m)?,
            work: Workspace::new(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    /// State with acceleration consistent with the equation of motion.
    pub fn consistent_state(&self, u0: &[f64], v0: &[f64], f0: &[f64]) -> Result<State> {
        let n = self.dim();
        for len in [u0.len(), v0.len(), f0.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        let u = DVector::from_column_slice(u0);
        let v = DVector::from_column_slice(v0);
        let rhs =
            DVector::from_column_slice(f0) - self.c.as_matrix() * &v - self.k.as_matrix() * &u;
        let a = self.m_factor.solve(rhs.as_slice())?;
        Ok(State { t: 0.0, u, v, a })
    }

    /// Advances `state` by one step under the force `f` at the new time.
    pub fn step(&mut self, state: &mut State, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: f.len(),
            });
        }
        self.work.history(&self.coeffs, &self.m, &self.c, state);
        for (r, fi) in self.work.r.iter_mut().zip(f) {
            *r += fi;
        }
        self.k_eff.solve_in_place(self.work.r.as_mut_slice());
        let u_new = self.work.r.clone();
        advance(&self.coeffs, self.params.dt, state, &u_new);
        Ok(())
    }
}

/// Displacement and acceleration histories of a forward run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub displacement: SignalSeries,
    pub acceleration: SignalSeries,
}

/// Integrates `M ü + C u̇ + K u = f` from rest. Row `i` of the output is the
/// state after the step driven by row `i` of `forces`, whose channels name
/// the loaded coordinates among `labels`.
pub fn simulate(
    m: &SymMatrix,
    c: &SymMatrix,
    k: &SymMatrix,
    labels: &[String],
    params: NewmarkParams,
    forces: &SignalSeries,
) -> Result<Simulation> {
    if (forces.dt - params.dt).abs() > DT_TOL * params.dt {
        return Err(Error::SampleRateMismatch {
            expected: params.dt,
            found: forces.dt,
        });
    }
    if labels.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: labels.len(),
        });
    }
    let targets: Vec<usize> = forces
        .channels
        .iter()
        .map(|ch| {
            labels
                .iter()
                .position(|l| l == ch)
                .ok_or_else(|| Error::UnknownLabel(ch.clone()))
        })
        .collect::<Result<_>>()?;
    let mut integ = ForwardIntegrator::new(m, c, k, params)?;
    let mut state = State::at_rest(m.dim());
    let mut disp = SignalSeries::new(
        params.dt,
        forces.t0,
        labels.to_vec(),
        SignalKind::Displacement,
    )?;
    let mut acc = SignalSeries::new(
        params.dt,
        forces.t0,
        labels.to_vec(),
        SignalKind::Acceleration,
    )?;
    let mut f = vec![0.0; m.dim()];
    for row in forces.rows() {
        for (&j, v) in targets.iter().zip(row) {
            f[j] = *v;
        }
        integ.step(&mut state, &f)?;
        disp.push_row(state.u.as_slice())?;
        acc.push_row(state.a.as_slice())?;
    }
    Ok(Simulation {
        displacement: disp,
        acceleration: acc,
    })
}

/// Which quantity the sensors deliver at the measured DOFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Displacement,
    Acceleration,
}

impl From<InputKind> for SignalKind {
    fn from(k: InputKind) -> Self {
        match k {
            InputKind::Displacement => SignalKind::Displacement,
            InputKind::Acceleration => SignalKind::Acceleration,
        }
    }
}

/// Everything fixed by the model, the time step and α.
#[derive(Debug, Clone)]
pub struct IdentifySetup {
    pub model: PartitionedModel,
    pub params: NewmarkParams,
    pub coeffs: NewmarkCoefficients,
    pub input: InputKind,
    pub alpha: f64,
    k_eff: Factorization,
    /// `[K̃^m − K̃^c (K̃^u)⁻¹ K̃^cᵀ]⁻¹`: measured response per unit measured force.
    pub h: SymMatrix,
    /// `K̃⁻¹[I; 0]`; its measured rows equal `h`.
    pub influence: DMatrix<f64>,
    /// Maps the measurement innovation to the force.
    pub gain: DMatrix<f64>,
}

impl IdentifySetup {
    pub fn new(
        model: PartitionedModel,
        params: NewmarkParams,
        alpha: f64,
        input: InputKind,
    ) -> Result<Self> {
        params.validate()?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "α must be non-negative, got {alpha}"
            )));
        }
        let coeffs = params.coefficients();
        let k_eff_m = coeffs.effective_stiffness(&model.m, &model.c, &model.k);
        let k_eff = factorize(&k_eff_m).map_err(|_| Error::SingularEffectiveStiffness)?;

        let nm = model.n_measured;
        let kt = k_eff_m.as_matrix();
        let h = schur_complement_inverse(
            &SymMatrix::symmetrized(model.measured_block(kt).into_owned()),
            &model.coupling_block(kt).into_owned(),
            &SymMatrix::symmetrized(model.unmeasured_block(kt).into_owned()),
        )
        .map_err(|_| Error::SingularUnmeasuredBlock)?;

        let mut selector = DMatrix::zeros(model.dim(), nm);
        for i in 0..nm {
            selector[(i, i)] = 1.0;
        }
        let influence = k_eff.solve_matrix(&selector)?;

        let op = operator(&h, &coeffs, input);
        let gain = tikhonov_gain(&op, alpha)?;
        Ok(Self {
            model,
            params,
            coeffs,
            input,
            alpha,
            k_eff,
            h,
            influence,
            gain,
        })
    }

    /// Same model and step with a different α (only the gain changes).
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "α must be non-negative, got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            gain: tikhonov_gain(&self.operator(), alpha)?,
            ..self.clone()
        })
    }

    /// Linear map from measured force to the measured quantity's innovation.
    pub fn operator(&self) -> DMatrix<f64> {
        operator(&self.h, &self.coeffs, self.input)
    }

    pub fn n_measured(&self) -> usize {
        self.model.n_measured
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }
}

fn operator(h: &SymMatrix, c: &NewmarkCoefficients, input: InputKind) -> DMatrix<f64> {
    match input {
        InputKind::Displacement => h.as_matrix().clone(),
        // ü_new = a0 (u_new − u) − …, so a force step moves the measured
        // acceleration by a0·H·f
        InputKind::Acceleration => h.as_matrix() * c.a0,
    }
}

/// `(AᵀA + αI)⁻¹Aᵀ`
pub fn tikhonov_gain(a: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let n = a.ncols();
    let normal = SymMatrix::symmetrized(a.transpose() * a + DMatrix::identity(n, n) * alpha);
    let f = factorize(&normal).map_err(|_| Error::SingularNormalMatrix)?;
    f.solve_matrix(&a.transpose())
}

/// Output of one identification step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub t: f64,
    /// Identified force at the measured DOFs.
    pub force: DVector<f64>,
    /// Measurement minus zero-force prediction at the measured DOFs.
    pub innovation: DVector<f64>,
    /// Reconstructed state at `t` in working order.
    pub displacement: DVector<f64>,
    pub velocity: DVector<f64>,
    pub acceleration: DVector<f64>,
    pub elapsed: Duration,
}

/// Online identification state. The setup is shared and immutable, so many
/// sessions can run from one setup.
#[derive(Debug, Clone)]
pub struct IdentifySession {
    setup: Arc<IdentifySetup>,
    state: State,
    work: Workspace,
    innovation: DVector<f64>,
    force: DVector<f64>,
    samples: usize,
}

impl IdentifySession {
    pub fn new(setup: Arc<IdentifySetup>) -> Self {
        let n = setup.dim();
        let nm = setup.n_measured();
        Self {
            state: State::at_rest(n),
            work: Workspace::new(n),
            innovation: DVector::zeros(nm),
            force: DVector::zeros(nm),
            samples: 0,
            setup,
        }
    }

    pub fn setup(&self) -> &IdentifySetup {
        &self.setup
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn set_state(&mut self, state: State) -> Result<()> {
        if state.u.len() != self.setup.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.setup.dim(),
                found: state.u.len(),
            });
        }
        self.state = state;
        Ok(())
    }

    /// One step with the measured values at the new time.
    pub fn step(&mut self, measured: &[f64]) -> Result<StepResult> {
        let start = Instant::now();
        let s = &*self.setup;
        let nm = s.n_measured();
        if measured.len() != nm {
            return Err(Error::DimensionMismatch {
                expected: nm,
                found: measured.len(),
            });
        }
        if measured.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMeasurement(self.samples));
        }
        let c = &s.coeffs;

        // zero-force prediction u^I = K̃⁻¹ r
        self.work.history(c, &s.model.m, &s.model.c, &self.state);
        s.k_eff.solve_in_place(self.work.r.as_mut_slice());
        let u_pred = &mut self.work.r;

        for i in 0..nm {
            let predicted = match s.input {
                InputKind::Displacement => u_pred[i],
                InputKind::Acceleration => {
                    c.a0 * (u_pred[i] - self.state.u[i])
                        - c.a2 * self.state.v[i]
                        - c.a3 * self.state.a[i]
                }
            };
            self.innovation[i] = measured[i] - predicted;
        }
        self.force.gemv(1.0, &s.gain, &self.innovation, 0.0);
        u_pred.gemv(1.0, &s.influence, &self.force, 1.0);

        let u_new = std::mem::replace(&mut self.work.r, DVector::zeros(0));
        advance(c, s.params.dt, &mut self.state, &u_new);
        self.work.r = u_new;
        self.samples += 1;

        let mut out = StepResult {
            t: self.state.t,
            force: self.force.clone(),
            innovation: self.innovation.clone(),
            displacement: self.state.u.clone(),
            velocity: self.state.v.clone(),
            acceleration: self.state.a.clone(),
            elapsed: Duration::ZERO,
        };
        out.elapsed = start.elapsed();
        Ok(out)
    }
}

/// Builds the shared setup and a session at rest.
pub fn session_setup(
    model: PartitionedModel,
    params: NewmarkParams,
    alpha: f64,
    input: InputKind,
) -> Result<IdentifySession> {
    Ok(IdentifySession::new(Arc::new(IdentifySetup::new(
        model, params, alpha, input,
    )?)))
}

/// Result of processing a whole measurement record.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Identified forces, channels = measured labels.
    pub forces: SignalSeries,
    /// Reconstructed displacements of every working coordinate.
    pub responses: SignalSeries,
    pub step_times: Vec<Duration>,
    pub timing: TimingStats,
}

/// Checks that a measurement record fits the session and returns the
/// column index for every measured label.
pub fn measurement_columns(
    measured_labels: &[String],
    kind: InputKind,
    dt: f64,
    series: &SignalSeries,
) -> Result<Vec<usize>> {
    if (series.dt - dt).abs() > DT_TOL * dt {
        return Err(Error::SampleRateMismatch {
            expected: dt,
            found: series.dt,
        });
    }
    if series.kind != SignalKind::from(kind) {
        return Err(Error::InvalidParameter(format!(
            "expected {:?} measurements, got {:?}",
            SignalKind::from(kind),
            series.kind
        )));
    }
    if series.n_channels() != measured_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: measured_labels.len(),
            found: series.n_channels(),
        });
    }
    measured_labels
        .iter()
        .map(|l| series.channel_index(l))
        .collect()
}

/// Runs the session over a full record, sample by sample.
pub fn run_session(
    session: &mut IdentifySession,
    measurements: &SignalSeries,
) -> Result<RunOutput> {
    let setup = session.setup.clone();
    let measured: Vec<String> = setup
        .model
        .measured_labels()
        .iter()
        .map(ToString::to_string)
        .collect();
    let all: Vec<String> = setup.model.labels.iter().map(ToString::to_string).collect();
    let cols = measurement_columns(&measured, setup.input, setup.params.dt, measurements)?;

    let t0 = measurements.t0;
    let mut forces = SignalSeries::new(setup.params.dt, t0, measured, SignalKind::Force)?;
    let mut responses = SignalSeries::new(setup.params.dt, t0, all, SignalKind::Displacement)?;
    let mut times = Vec::with_capacity(measurements.n_samples());
    let mut y = vec![0.0; cols.len()];
    for row in measurements.rows() {
        for (yi, &j) in y.iter_mut().zip(&cols) {
            *yi = row[j];
        }
        let r = session.step(&y)?;
        times.push(r.elapsed);
        forces.push_row(r.force.as_slice())?;
        responses.push_row(r.displacement.as_slice())?;
    }
    Ok(RunOutput {
        forces,
        responses,
        timing: timing_stats(&times),
        step_times: times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_spring_chain, rayleigh_damping, DofLabel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn chain3() -> PartitionedModel {
        let model = build_spring_chain(&[1.0, 2.0, 1.5], &[100.0, 80.0, 60.0], true).unwrap();
        let model = rayleigh_damping(&model, 0.1, 1e-4).unwrap();
        PartitionedModel::from_full(&model, &[DofLabel::new(2, "x")]).unwrap()
    }

    #[test]
    fn coefficients_for_average_acceleration() {
        let c = NewmarkParams::average_acceleration(0.1).coefficients();
        assert_relative_eq!(c.a0, 400.0, max_relative = 1e-14);
        assert_relative_eq!(c.a1, 20.0, max_relative = 1e-14);
        assert_relative_eq!(c.a2, 40.0, max_relative = 1e-14);
        assert_eq!(c.a3, 1.0);
        assert_eq!(c.a4, 1.0);
        assert_eq!(c.a5, 0.0);
    }

    #[test]
    fn effective_stiffness_of_unit_oscillator() {
        let one = SymMatrix::identity(1);
        let c = NewmarkParams::average_acceleration(1.0).coefficients();
        assert_eq!(
            c.effective_stiffness(&one, &SymMatrix::zeros(1), &one)[(0, 0)],
            5.0
        );
    }

    #[test]
    fn h_is_measured_block_of_effective_flexibility() {
        // random SPD 8-DOF system, dense inverse as oracle
        let n = 8;
        let b = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let k = SymMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(n, n) * 2.0);
        let m = SymMatrix::symmetrized(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 + i as f64 * 0.1
            } else {
                0.01
            }
        }));
        let labels: Vec<DofLabel> = (0..n).map(|i| DofLabel::new(i, "x")).collect();
        let model = crate::model::FullModel::new(m, k, SymMatrix::zeros(n), labels.clone(), vec![])
            .unwrap();
        let measured = [labels[5].clone(), labels[1].clone(), labels[6].clone()];
        let pm = PartitionedModel::from_full(&model, &measured).unwrap();
        let setup = IdentifySetup::new(
            pm,
            NewmarkParams::average_acceleration(0.01),
            0.0,
            InputKind::Displacement,
        )
        .unwrap();
        let kt = setup
            .coeffs
            .effective_stiffness(&model.m, &model.c, &model.k);
        let inv = kt.as_matrix().clone().try_inverse().unwrap();
        for (a, &i) in [5, 1, 6].iter().enumerate() {
            for (b, &j) in [5, 1, 6].iter().enumerate() {
                assert!((setup.h[(a, b)] - inv[(i, j)]).abs() <= 1e-9 * inv.amax());
            }
        }
    }

    #[test]
    fn zero_measurement_from_rest_stays_at_rest() {
        let mut sess = session_setup(
            chain3(),
            NewmarkParams::average_acceleration(1e-3),
            0.0,
            InputKind::Displacement,
        )
        .unwrap();
        for _ in 0..10 {
            let r = sess.step(&[0.0]).unwrap();
            assert_eq!(r.force[0], 0.0);
            assert!(r.displacement.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn energy_is_conserved_without_damping() {
        let m = SymMatrix::identity(1);
        let k = SymMatrix::identity(1);
        let mut fi = ForwardIntegrator::new(
            &m,
            &SymMatrix::zeros(1),
            &k,
            NewmarkParams::average_acceleration(1e-3),
        )
        .unwrap();
        let mut s = fi.consistent_state(&[1.0], &[0.0], &[0.0]).unwrap();
        let e0 = 0.5;
        for _ in 0..10_000 {
            fi.step(&mut s, &[0.0]).unwrap();
        }
        let e = 0.5 * s.v[0] * s.v[0] + 0.5 * s.u[0] * s.u[0];
        assert!(((e - e0) / e0).abs() < 1e-6);
    }

    #[test]
    fn damped_response_settles_to_static_solution() {
        let model = rayleigh_damping(
            &build_spring_chain(&[1.0, 1.0], &[10.0, 5.0], true).unwrap(),
            2.0,
            0.0,
        )
        .unwrap();
        let mut fi = ForwardIntegrator::new(
            &model.m,
            &model.c,
            &model.k,
            NewmarkParams::average_acceleration(1e-2),
        )
        .unwrap();
        let mut s = State::at_rest(2);
        for _ in 0..5000 {
            fi.step(&mut s, &[1.0, 2.0]).unwrap();
        }
        let stat = factorize(&model.k).unwrap().solve(&[1.0, 2.0]).unwrap();
        assert!((&s.u - stat).amax() < 1e-6);
    }

    #[test]
    fn free_vibration_tracks_cosine() {
        let m = SymMatrix::identity(1);
        let k = SymMatrix::identity(1);
        let c = SymMatrix::zeros(1);
        let dt = 1e-3;
        let mut fi =
            ForwardIntegrator::new(&m, &c, &k, NewmarkParams::average_acceleration(dt)).unwrap();
        let mut s = fi.consistent_state(&[1.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(s.a[0], -1.0);
        let steps = (2.0 * std::f64::consts::PI / dt).round() as usize;
        let mut worst: f64 = 0.0;
        for i in 1..=steps {
            fi.step(&mut s, &[0.0]).unwrap();
            worst = worst.max((s.u[0] - s.t.cos()).abs());
            if i == 1000 {
                assert!((s.u[0] - 1.0_f64.cos()).abs() < 1e-4);
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn single_dof_displacement_recovers_force_exactly() {
        // SDOF with every coordinate measured: H = K̃⁻¹ and α = 0 invert exactly
        let model = build_spring_chain(&[2.0, 1.0], &[50.0, 30.0], true).unwrap();
        let pm = PartitionedModel::from_full(&model, &[DofLabel::new(0, "x")]).unwrap();
        let params = NewmarkParams::average_acceleration(1e-3);
        let mut fwd = ForwardIntegrator::new(&pm.m, &pm.c, &pm.k, params).unwrap();
        let mut truth = State::at_rest(2);
        let mut sess = session_setup(pm, params, 0.0, InputKind::Displacement).unwrap();
        for i in 1..=500 {
            let f = (i as f64 * 0.05).sin() * 10.0;
            fwd.step(&mut truth, &[f, 0.0]).unwrap();
            let r = sess.step(&[truth.u[0]]).unwrap();
            assert!(
                (r.force[0] - f).abs() <= 1e-8 * 10.0,
                "step {i}: {} vs {f}",
                r.force[0]
            );
        }
    }

    fn roundtrip_error(input: InputKind) -> f64 {
        let pm = chain3();
        let params = NewmarkParams::average_acceleration(1e-3);
        let mut fwd = ForwardIntegrator::new(&pm.m, &pm.c, &pm.k, params).unwrap();
        let mut truth = State::at_rest(3);
        let mut sess = session_setup(pm, params, 0.0, input).unwrap();
        let mut worst: f64 = 0.0;
        for i in 1..=2000 {
            let f = 5.0 * (i as f64 * 0.01).sin() + 2.0 * (i as f64 * 0.037).cos();
            fwd.step(&mut truth, &[f, 0.0, 0.0]).unwrap();
            let y = match input {
                InputKind::Displacement => truth.u[0],
                InputKind::Acceleration => truth.a[0],
            };
            let r = sess.step(&[y]).unwrap();
            worst = worst.max((r.force[0] - f).abs());
            assert_relative_eq!(sess.state().u[1], truth.u[1], epsilon = 1e-9);
        }
        worst
    }

    #[test]
    fn chain_roundtrip_from_displacement() {
        assert!(roundtrip_error(InputKind::Displacement) < 1e-6);
    }

    #[test]
    fn chain_roundtrip_from_acceleration() {
        assert!(roundtrip_error(InputKind::Acceleration) < 1e-6);
    }

    #[test]
    fn influence_measured_rows_equal_h() {
        let setup = IdentifySetup::new(
            chain3(),
            NewmarkParams::average_acceleration(1e-3),
            0.0,
            InputKind::Displacement,
        )
        .unwrap();
        let nm = setup.n_measured();
        let top = setup.influence.rows(0, nm).into_owned();
        assert!((top - setup.h.as_matrix()).amax() < 1e-12 * setup.h.amax());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut sess = session_setup(
            chain3(),
            NewmarkParams::average_acceleration(1e-3),
            0.0,
            InputKind::Displacement,
        )
        .unwrap();
        assert!(matches!(
            sess.step(&[f64::NAN]),
            Err(Error::NonFiniteMeasurement(0))
        ));
        assert!(matches!(
            sess.step(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(NewmarkParams::average_acceleration(0.0).validate().is_err());
    }

    #[test]
    fn run_session_checks_sample_interval() {
        let mut sess = session_setup(
            chain3(),
            NewmarkParams::average_acceleration(1e-3),
            0.0,
            InputKind::Displacement,
        )
        .unwrap();
        let series = SignalSeries::from_columns(
            2e-3,
            0.0,
            vec!["2:x".into()],
            SignalKind::Displacement,
            &[vec![0.0; 10]],
        )
        .unwrap();
        assert!(matches!(
            run_session(&mut sess, &series),
            Err(Error::SampleRateMismatch { .. })
        ));
        let ok = SignalSeries::from_columns(
            1e-3,
            0.0,
            vec!["2:x".into()],
            SignalKind::Displacement,
            &[vec![0.0; 10]],
        )
        .unwrap();
        let out = run_session(&mut sess, &ok).unwrap();
        assert_eq!(out.forces.n_samples(), 10);
        assert_eq!(out.responses.n_channels(), 3);
        let empty =
            SignalSeries::new(1e-3, 0.0, vec!["2:x".into()], SignalKind::Displacement).unwrap();
        assert_eq!(
            run_session(&mut sess, &empty).unwrap().forces.n_samples(),
            0
        );
    }

    #[test]
    fn shared_setup_gives_identical_sessions() {
        let setup = Arc::new(
            IdentifySetup::new(
                chain3(),
                NewmarkParams::average_acceleration(1e-3),
                1e-12,
                InputKind::Displacement,
            )
            .unwrap(),
        );
        let mut a = IdentifySession::new(setup.clone());
        let mut b = IdentifySession::new(setup);
        for i in 0..50 {
            let y = [(i as f64 * 0.1).sin() * 1e-3];
            assert_eq!(a.step(&y).unwrap().force, b.step(&y).unwrap().force);
        }
    }

    proptest! {
        #[test]
        fn free_decay_yields_no_force(u0 in -1e-2f64..1e-2, v0 in -1.0f64..1.0) {
            let pm = chain3();
            let params = NewmarkParams::average_acceleration(1e-3);
            let mut fwd = ForwardIntegrator::new(&pm.m, &pm.c, &pm.k, params).unwrap();
            let mut truth = fwd.consistent_state(&[u0, 0.0, 0.0], &[0.0, v0, 0.0], &[0.0; 3]).unwrap();
            let mut sess = session_setup(pm, params, 0.0, InputKind::Displacement).unwrap();
            sess.set_state(truth.clone()).unwrap();
            // force scale of the initial state
            let scale = 100.0 * u0.abs() + v0.abs();
            for _ in 0..200 {
                fwd.step(&mut truth, &[0.0; 3]).unwrap();
                let r = sess.step(&[truth.u[0]]).unwrap();
                prop_assert!(r.force[0].abs() <= 1e-8 * scale.max(1e-12));
            }
        }

        #[test]
        fn force_norm_shrinks_with_alpha(y in -1e-3f64..1e-3, a1 in 0.0f64..1e-6, extra in 0.0f64..1e-6) {
            let base = IdentifySetup::new(chain3(), NewmarkParams::average_acceleration(1e-3), a1, InputKind::Displacement)
                .unwrap();
            let more = base.with_alpha(a1 + extra).unwrap();
            let fa = IdentifySession::new(Arc::new(base)).step(&[y]).unwrap().force.norm();
            let fb = IdentifySession::new(Arc::new(more)).step(&[y]).unwrap().force.norm();
            prop_assert!(fb <= fa * (1.0 + 1e-12));
        }
    }
}
