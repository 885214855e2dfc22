//! Time integration of the full and reduced systems under a pulse sequence.
//!
//! Both systems are affine and linear-time-varying. They are advanced in
//! homogeneous coordinates (`[state; 1]`), so every scheme only needs the
//! generator matrix supplied by [`crate::model`].
//!
//! Output is produced on a uniform grid at `sample_rate`. The fixed-step
//! schemes place their sub-steps so that every sample time is a step end; the
//! adaptive scheme fills the grid by cubic Hermite interpolation.

mod engine;

use serde::{Deserialize, Serialize};

use crate::linalg::{LinalgError, Matrix};
use crate::model::{
    field_at, full_generator, larmor_frequency, rabi_frequency, reduced_generator, FieldDrive,
    ModelError, PhysicalParams, SpinState, Vec3,
};
use crate::sequencer::{PulseSequence, SequenceError};
use crate::Real;

pub use engine::StepStats;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("invalid integration config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("step size underflow at t = {t} s (h = {h:e} s); the explicit scheme cannot follow this system")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step budget of {steps} exhausted at t = {t} s; the system is too stiff for the explicit scheme")]
    StepBudgetExceeded { t: f64, steps: usize },
    #[error("non-finite state encountered at t = {t} s")]
    NonFinite { t: f64 },
    #[error("steady state requires a static field (b_osc = 0)")]
    DriveActive,
    #[error("steady-state system is singular: {0}")]
    Singular(LinalgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitAdaptive,
    ImplicitTrapezoidal,
    #[default]
    ExponentialAffine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Full,
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct IntegrationConfig<T> {
    pub rel_tol: T,
    pub abs_tol: T,
    /// Upper bound on the internal step, seconds.
    pub max_step: T,
    pub scheme: Scheme,
    /// Output grid rate, Hz.
    pub sample_rate: T,
    /// Fixed-step schemes use at least this many sub-steps per drive period.
    #[serde(default = "default_steps_per_period")]
    pub steps_per_period: usize,
    /// Step budget of the adaptive scheme.
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Smallest step the adaptive scheme may take, seconds.
    #[serde(default = "default_min_step")]
    pub min_step: T,
}

fn default_steps_per_period() -> usize {
    100
}
fn default_max_steps() -> usize {
    2_000_000
}
fn default_min_step<T: Real>() -> T {
    T::c(1e-12)
}

impl<T: Real> Default for IntegrationConfig<T> {
    fn default() -> Self {
        IntegrationConfig {
            rel_tol: T::c(1e-8),
            abs_tol: T::c(1e-14),
            max_step: T::c(5e-3),
            scheme: Scheme::ExponentialAffine,
            sample_rate: T::c(100.0),
            steps_per_period: default_steps_per_period(),
            max_steps: default_max_steps(),
            min_step: default_min_step(),
        }
    }
}

impl<T: Real> IntegrationConfig<T> {
    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_max_step(mut self, h: T) -> Self {
        self.max_step = h;
        self
    }

    fn invalid(field: &'static str, reason: String) -> IntegrationError {
        IntegrationError::InvalidConfig { field, reason }
    }

    /// Checks the stand-alone invariants (positivity of tolerances and rates).
    pub fn validate(&self) -> Result<(), IntegrationError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("sample_rate", self.sample_rate),
            ("min_step", self.min_step),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > T::zero()) {
                return Err(Self::invalid(field, format!("must be positive, got {v}")));
            }
        }
        if self.steps_per_period == 0 {
            return Err(Self::invalid("steps_per_period", "must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Self::invalid("max_steps", "must be at least 1".into()));
        }
        Ok(())
    }

    /// Checks the invariants that depend on the experiment: the step must
    /// resolve the drive and the grid must resolve the signal.
    pub fn validate_for(
        &self,
        params: &PhysicalParams<T>,
        seq: &PulseSequence<T>,
    ) -> Result<(), IntegrationError> {
        self.validate()?;
        let f = seq.drive.drive_freq;
        if seq.has_active_drive() && f > T::zero() {
            let limit = T::one() / (T::c(20.0) * f);
            if self.max_step > limit {
                return Err(Self::invalid(
                    "max_step",
                    format!("must be at most 1/(20·drive_freq) = {limit} s while a drive is active"),
                ));
            }
        }
        let highest = larmor_frequency(params, seq.drive.b_static).max(f)
            + rabi_frequency(params, seq.drive.b_osc);
        if self.sample_rate < T::c(4.0) * highest {
            return Err(Self::invalid(
                "sample_rate",
                format!("must be at least 4x the highest signal frequency ({highest} Hz)"),
            ));
        }
        Ok(())
    }
}

/// Uniformly sampled solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Trajectory<T> {
    pub t0: T,
    pub dt: T,
    pub model: ModelKind,
    /// For reduced-model trajectories the metastable vectors are zero.
    pub states: Vec<SpinState<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + self.dt * T::from_usize_lossy(k)
    }

    pub fn end_time(&self) -> T {
        self.time(self.len().saturating_sub(1))
    }

    pub fn last(&self) -> Option<&SpinState<T>> {
        self.states.last()
    }

    /// Samples with `start <= t < stop`, as a new trajectory.
    pub fn window(&self, start: T, stop: T) -> Trajectory<T> {
        let eps = self.dt * T::c(1e-6);
        let mut first = None;
        let states: Vec<_> = self
            .states
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let t = self.time(*k);
                t + eps >= start && t + eps < stop
            })
            .map(|(k, s)| {
                first.get_or_insert(k);
                *s
            })
            .collect();
        Trajectory {
            t0: first.map_or(start, |k| self.time(k)),
            dt: self.dt,
            model: self.model,
            states,
        }
    }
}

/// Starting state of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub enum InitialCondition<T> {
    /// Steady state with the pump on and no drive.
    #[default]
    SteadyState,
    /// Steady state followed by an ideal hard pulse about y.
    Tipped { angle: T },
    Explicit { state: SpinState<T> },
}

impl<T: Real> InitialCondition<T> {
    pub fn resolve(
        &self,
        params: &PhysicalParams<T>,
        b_static: T,
        pump: T,
        model: ModelKind,
    ) -> Result<SpinState<T>, IntegrationError> {
        let static_drive = FieldDrive::new(b_static, T::zero(), T::zero());
        let pumped = params.with_pump(pump);
        let steady = || -> Result<SpinState<T>, IntegrationError> {
            match model {
                ModelKind::Full => steady_state(&pumped, &static_drive),
                ModelKind::Reduced => Ok(SpinState::ground(steady_state_reduced(
                    &pumped,
                    &static_drive,
                )?)),
            }
        };
        match *self {
            InitialCondition::SteadyState => steady(),
            InitialCondition::Tipped { angle } => Ok(steady()?.rotated_about_y(angle)),
            InitialCondition::Explicit { state } => {
                if !state.is_finite() {
                    return Err(IntegrationError::NonFinite { t: 0.0 });
                }
                Ok(match model {
                    ModelKind::Full => state,
                    ModelKind::Reduced => SpinState::ground(state.i_vec),
                })
            }
        }
    }
}

fn check_span<T: Real>(t_span: (T, T), seq: &PulseSequence<T>) -> Result<(), IntegrationError> {
    let (a, b) = t_span;
    if !(a.is_finite() && b.is_finite() && a >= T::zero() && b > a && b <= seq.total_duration) {
        return Err(IntegrationError::InvalidConfig {
            field: "t_span",
            reason: format!(
                "span ({a}, {b}) must be increasing and inside [0, {}]",
                seq.total_duration
            ),
        });
    }
    Ok(())
}

/// Integrates the nine-component coupled system.
///
/// While integrating, the pump polarization comes from the sequence gating,
/// overriding `params.pump_polarization`.
pub fn integrate_full<T: Real>(
    state0: &SpinState<T>,
    t_span: (T, T),
    params: &PhysicalParams<T>,
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
) -> Result<Trajectory<T>, IntegrationError> {
    integrate_full_with_stats(state0, t_span, params, seq, config).map(|(t, _)| t)
}

pub fn integrate_full_with_stats<T: Real>(
    state0: &SpinState<T>,
    t_span: (T, T),
    params: &PhysicalParams<T>,
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
) -> Result<(Trajectory<T>, StepStats), IntegrationError> {
    config.validate_for(params, seq)?;
    check_span(t_span, seq)?;
    if !state0.is_finite() {
        return Err(IntegrationError::NonFinite {
            t: t_span.0.to_f64_lossy(),
        });
    }
    let s = state0.to_array();
    let x0: [T; 10] = std::array::from_fn(|k| if k < 9 { s[k] } else { T::one() });
    let generator =
        |t: T, drive: &FieldDrive<T>, pump: T| full_generator(params, field_at(drive, t), pump);
    let (samples, stats) = engine::propagate(x0, t_span, seq, config, &generator)?;
    let states = samples
        .into_iter()
        .map(|x| SpinState::from_array(std::array::from_fn(|k| x[k])))
        .collect();
    Ok((
        Trajectory {
            t0: t_span.0,
            dt: T::one() / config.sample_rate,
            model: ModelKind::Full,
            states,
        },
        stats,
    ))
}

/// Integrates the ground-state-only system.
pub fn integrate_reduced<T: Real>(
    i0: &Vec3<T>,
    t_span: (T, T),
    params: &PhysicalParams<T>,
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
) -> Result<Trajectory<T>, IntegrationError> {
    integrate_reduced_with_stats(i0, t_span, params, seq, config).map(|(t, _)| t)
}

pub fn integrate_reduced_with_stats<T: Real>(
    i0: &Vec3<T>,
    t_span: (T, T),
    params: &PhysicalParams<T>,
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
) -> Result<(Trajectory<T>, StepStats), IntegrationError> {
    config.validate_for(params, seq)?;
    check_span(t_span, seq)?;
    if !i0.is_finite() {
        return Err(IntegrationError::NonFinite {
            t: t_span.0.to_f64_lossy(),
        });
    }
    let x0 = [i0.x(), i0.y(), i0.z(), T::one()];
    let generator =
        |t: T, drive: &FieldDrive<T>, pump: T| reduced_generator(params, field_at(drive, t), pump);
    let (samples, stats) = engine::propagate(x0, t_span, seq, config, &generator)?;
    let states = samples
        .into_iter()
        .map(|x| SpinState::ground(Vec3::new(x[0], x[1], x[2])))
        .collect();
    Ok((
        Trajectory {
            t0: t_span.0,
            dt: T::one() / config.sample_rate,
            model: ModelKind::Reduced,
            states,
        },
        stats,
    ))
}

/// Integrates either model from a full initial state.
pub fn integrate<T: Real>(
    model: ModelKind,
    state0: &SpinState<T>,
    t_span: (T, T),
    params: &PhysicalParams<T>,
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
) -> Result<Trajectory<T>, IntegrationError> {
    match model {
        ModelKind::Full => integrate_full(state0, t_span, params, seq, config),
        ModelKind::Reduced => integrate_reduced(&state0.i_vec, t_span, params, seq, config),
    }
}

fn affine_block<T: Real, const M: usize, const N: usize>(g: &Matrix<T, M>) -> (Matrix<T, N>, [T; N]) {
    let a = Matrix(std::array::from_fn(|r| std::array::from_fn(|c| g.0[r][c])));
    let b = std::array::from_fn(|r| g.0[r][N]);
    (a, b)
}

fn solve_fixed_point<T: Real, const M: usize, const N: usize>(
    g: &Matrix<T, M>,
) -> Result<[T; N], IntegrationError> {
    let (a, b) = affine_block::<T, M, N>(g);
    let lu = a.lu().map_err(IntegrationError::Singular)?;
    let neg_b = b.map(|v| -v);
    let x = lu.solve_vec(&neg_b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IntegrationError::NonFinite { t: 0.0 });
    }
    Ok(x)
}

/// Fixed point of the full system with the pump at `params.pump_polarization`
/// and a static field, from a direct linear solve.
pub fn steady_state<T: Real>(
    params: &PhysicalParams<T>,
    drive: &FieldDrive<T>,
) -> Result<SpinState<T>, IntegrationError> {
    if drive.b_osc != T::zero() {
        return Err(IntegrationError::DriveActive);
    }
    let g = full_generator(params, field_at(drive, T::zero()), params.pump_polarization);
    let x = solve_fixed_point::<T, 10, 9>(&g)?;
    Ok(SpinState::from_array(x))
}

/// Fixed point of the reduced system.
pub fn steady_state_reduced<T: Real>(
    params: &PhysicalParams<T>,
    drive: &FieldDrive<T>,
) -> Result<Vec3<T>, IntegrationError> {
    if drive.b_osc != T::zero() {
        return Err(IntegrationError::DriveActive);
    }
    let g = reduced_generator(params, field_at(drive, T::zero()), params.pump_polarization);
    let x = solve_fixed_point::<T, 4, 3>(&g)?;
    Ok(Vec3(x))
}

#[cfg(test)]
mod tests;
