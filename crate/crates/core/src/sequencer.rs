//! Timed drive pulses and pump-shutter windows.
//!
//! Before the first event the drive is off and the pump is on. Gating is
//! piecewise constant and right-continuous: an event at time `t` is already in
//! effect at `t`.

use serde::{Deserialize, Serialize};

use crate::model::{FieldDrive, ModelError, DEFAULT_PUMP_POLARIZATION};
use crate::Real;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("time {t} s outside sequence [0, {total}] s")]
    OutOfRange { t: f64, total: f64 },
    #[error("event {index}: {reason}")]
    InvalidEvent { index: usize, reason: String },
    #[error("invalid sequence: {0}")]
    Invalid(String),
    #[error(transparent)]
    Drive(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    DriveOn,
    DriveOff,
    PumpOn,
    PumpOff,
}

impl Action {
    fn is_drive(self) -> bool {
        matches!(self, Action::DriveOn | Action::DriveOff)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Event<T> {
    pub time: T,
    pub action: Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpMode {
    Continuous,
    GatedOffDuringDrive,
}

/// Effective drive amplitude (nT) and pump polarization at an instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gate<T> {
    pub b_osc: T,
    pub pump: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct PulseSequence<T> {
    pub events: Vec<Event<T>>,
    pub total_duration: T,
    pub drive: FieldDrive<T>,
    /// Polarization imposed while the pump is on.
    pub pump_value: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Channels<T> {
    drive_on: bool,
    pump_on: bool,
    drive_since: T,
}

impl<T: Real> PulseSequence<T> {
    pub fn new(
        events: Vec<Event<T>>,
        total_duration: T,
        drive: FieldDrive<T>,
        pump_value: T,
    ) -> Result<Self, SequenceError> {
        let seq = PulseSequence {
            events,
            total_duration,
            drive,
            pump_value,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Pump always on, no drive.
    pub fn free(total_duration: T, drive: FieldDrive<T>) -> Result<Self, SequenceError> {
        Self::new(Vec::new(), total_duration, drive, T::c(DEFAULT_PUMP_POLARIZATION))
    }

    pub fn with_pump_value(mut self, p: T) -> Self {
        self.pump_value = p;
        self
    }

    pub fn with_drive(mut self, drive: FieldDrive<T>) -> Self {
        self.drive = drive;
        self
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        self.drive.validate()?;
        if !(self.total_duration.is_finite() && self.total_duration > T::zero()) {
            return Err(SequenceError::Invalid(format!(
                "total_duration must be positive, got {}",
                self.total_duration
            )));
        }
        let p = self.pump_value;
        if !(p.is_finite() && p >= T::zero() && p <= T::one()) {
            return Err(SequenceError::Invalid(format!(
                "pump_value must lie in [0, 1], got {p}"
            )));
        }
        let mut drive_on = false;
        let mut pump_on = true;
        let mut prev: Option<Event<T>> = None;
        let mut group_start = 0usize;
        for (index, ev) in self.events.iter().enumerate() {
            if !(ev.time.is_finite() && ev.time >= T::zero() && ev.time <= self.total_duration) {
                return Err(SequenceError::InvalidEvent {
                    index,
                    reason: format!("time {} outside [0, {}]", ev.time, self.total_duration),
                });
            }
            if let Some(p) = prev {
                if ev.time < p.time {
                    return Err(SequenceError::InvalidEvent {
                        index,
                        reason: "event times must be non-decreasing".into(),
                    });
                }
                if ev.time > p.time {
                    group_start = index;
                }
            }
            let clash = self.events[group_start..index]
                .iter()
                .any(|o| o.time == ev.time && o.action.is_drive() == ev.action.is_drive());
            if clash {
                return Err(SequenceError::InvalidEvent {
                    index,
                    reason: "conflicting simultaneous actions on the same channel".into(),
                });
            }
            let redundant = match ev.action {
                Action::DriveOn => drive_on,
                Action::DriveOff => !drive_on,
                Action::PumpOn => pump_on,
                Action::PumpOff => !pump_on,
            };
            if redundant {
                return Err(SequenceError::InvalidEvent {
                    index,
                    reason: format!("{:?} does not change the channel state", ev.action),
                });
            }
            match ev.action {
                Action::DriveOn => drive_on = true,
                Action::DriveOff => drive_on = false,
                Action::PumpOn => pump_on = true,
                Action::PumpOff => pump_on = false,
            }
            prev = Some(*ev);
        }
        Ok(())
    }

    fn channels_at(&self, t: T) -> Channels<T> {
        let mut ch = Channels {
            drive_on: false,
            pump_on: true,
            drive_since: T::zero(),
        };
        for ev in self.events.iter().take_while(|e| e.time <= t) {
            match ev.action {
                Action::DriveOn => {
                    ch.drive_on = true;
                    ch.drive_since = ev.time;
                }
                Action::DriveOff => ch.drive_on = false,
                Action::PumpOn => ch.pump_on = true,
                Action::PumpOff => ch.pump_on = false,
            }
        }
        ch
    }

    fn check_range(&self, t: T) -> Result<(), SequenceError> {
        if t.is_finite() && t >= T::zero() && t <= self.total_duration {
            Ok(())
        } else {
            Err(SequenceError::OutOfRange {
                t: t.to_f64_lossy(),
                total: self.total_duration.to_f64_lossy(),
            })
        }
    }

    /// Effective (B_M, P) at `t`.
    pub fn params_at(&self, t: T) -> Result<Gate<T>, SequenceError> {
        self.check_range(t)?;
        Ok(self.gate_unchecked(t))
    }

    pub(crate) fn gate_unchecked(&self, t: T) -> Gate<T> {
        let ch = self.channels_at(t);
        Gate {
            b_osc: if ch.drive_on { self.drive.b_osc } else { T::zero() },
            pump: if ch.pump_on { self.pump_value } else { T::zero() },
        }
    }

    /// Drive description valid in the gating interval containing `t`, with the
    /// oscillation phase referenced to the most recent drive-on time.
    pub fn drive_at(&self, t: T) -> Result<FieldDrive<T>, SequenceError> {
        self.check_range(t)?;
        Ok(self.drive_unchecked(t))
    }

    pub(crate) fn drive_unchecked(&self, t: T) -> FieldDrive<T> {
        let ch = self.channels_at(t);
        FieldDrive {
            b_osc: if ch.drive_on { self.drive.b_osc } else { T::zero() },
            phase: self.drive.phase - T::TAU() * self.drive.drive_freq * ch.drive_since,
            ..self.drive
        }
    }

    /// Distinct event times in increasing order.
    pub fn boundaries(&self) -> Vec<T> {
        let mut out: Vec<T> = Vec::new();
        for ev in &self.events {
            if out.last().is_none_or(|&l| ev.time > l) {
                out.push(ev.time);
            }
        }
        out
    }

    /// Closed-open intervals during which the drive is on.
    pub fn drive_windows(&self) -> Vec<(T, T)> {
        let mut out = Vec::new();
        let mut start = None;
        for ev in &self.events {
            match ev.action {
                Action::DriveOn => start = Some(ev.time),
                Action::DriveOff => {
                    if let Some(s) = start.take() {
                        out.push((s, ev.time));
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.total_duration));
        }
        out
    }

    /// True if the drive is switched on at some point with nonzero amplitude.
    pub fn has_active_drive(&self) -> bool {
        self.drive.b_osc > T::zero() && !self.drive_windows().is_empty()
    }
}

/// Three-phase protocol: wait, drive pulse, wait.
pub fn standard_pulse<T: Real>(
    duration_before: T,
    pulse_length: T,
    duration_after: T,
    drive: FieldDrive<T>,
    pump_mode: PumpMode,
) -> Result<PulseSequence<T>, SequenceError> {
    for (name, v) in [
        ("duration_before", duration_before),
        ("pulse_length", pulse_length),
        ("duration_after", duration_after),
    ] {
        if !(v.is_finite() && v >= T::zero()) {
            return Err(SequenceError::Invalid(format!(
                "{name} must be non-negative, got {v}"
            )));
        }
    }
    let total = duration_before + pulse_length + duration_after;
    let mut events = Vec::new();
    if pulse_length > T::zero() {
        let start = duration_before;
        let stop = duration_before + pulse_length;
        let gated = pump_mode == PumpMode::GatedOffDuringDrive;
        events.push(Event {
            time: start,
            action: Action::DriveOn,
        });
        if gated {
            events.push(Event {
                time: start,
                action: Action::PumpOff,
            });
        }
        events.push(Event {
            time: stop,
            action: Action::DriveOff,
        });
        if gated {
            events.push(Event {
                time: stop,
                action: Action::PumpOn,
            });
        }
    }
    PulseSequence::new(events, total, drive, T::c(DEFAULT_PUMP_POLARIZATION))
}
