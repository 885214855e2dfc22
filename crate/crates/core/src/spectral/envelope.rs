use serde::{Deserialize, Serialize};

use super::{ObservableSeries, SpectralError};
use crate::Real;

/// Length of the low-pass kernel, in carrier periods.
pub const ENVELOPE_KERNEL_PERIODS: f64 = 4.0;

/// Slowly varying amplitude of `series` about `carrier_freq`.
///
/// The signal is mixed with quadrature carriers, each product is low-passed
/// at `carrier/2` by a Hann-tapered sinc kernel (renormalized where it
/// overhangs the record ends), and the envelope is `2·|I + iQ|`.
pub fn envelope<T: Real>(
    series: &ObservableSeries<T>,
    carrier_freq: T,
) -> Result<ObservableSeries<T>, SpectralError> {
    series.validate()?;
    let duration = series.duration();
    let nyquist = T::c(0.5) / series.dt;
    if !(carrier_freq.is_finite()
        && carrier_freq >= T::c(4.0) / duration
        && carrier_freq < nyquist)
    {
        return Err(SpectralError::CarrierOutOfRange {
            carrier: carrier_freq.to_f64_lossy(),
            duration: duration.to_f64_lossy(),
            dt: series.dt.to_f64_lossy(),
        });
    }
    let kernel = lowpass_kernel(carrier_freq * T::c(0.5), series.dt, carrier_freq);
    let half = kernel.len() / 2;
    let (i, q): (Vec<T>, Vec<T>) = series
        .samples
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let (s, c) = (T::TAU() * carrier_freq * series.time(k)).sin_cos();
            (x * c, x * s)
        })
        .unzip();
    let n = series.len();
    let samples = (0..n)
        .map(|k| {
            let (mut si, mut sq, mut wsum) = (T::zero(), T::zero(), T::zero());
            for (j, &h) in kernel.iter().enumerate() {
                let Some(idx) = (k + j).checked_sub(half).filter(|&idx| idx < n) else {
                    continue;
                };
                si = si + h * i[idx];
                sq = sq + h * q[idx];
                wsum = wsum + h;
            }
            T::two() * (si / wsum).hypot(sq / wsum)
        })
        .collect();
    Ok(ObservableSeries {
        t0: series.t0,
        dt: series.dt,
        samples,
    })
}

/// Envelope with the samples the kernel only partly covers removed from
/// both ends.
pub fn trim_edges<T: Real>(env: &ObservableSeries<T>, carrier_freq: T) -> ObservableSeries<T> {
    let trim = (T::c(0.5 * ENVELOPE_KERNEL_PERIODS) / (carrier_freq * env.dt))
        .ceil()
        .to_usize()
        .unwrap_or(0);
    let n = env.len();
    if n <= 2 * trim + 1 {
        return env.clone();
    }
    ObservableSeries {
        t0: env.time(trim),
        dt: env.dt,
        samples: env.samples[trim..n - trim].to_vec(),
    }
}

fn lowpass_kernel<T: Real>(cutoff: T, dt: T, carrier: T) -> Vec<T> {
    let half = (T::c(0.5 * ENVELOPE_KERNEL_PERIODS) / (carrier * dt)).ceil().to_usize().unwrap_or(1).max(1);
    let len = 2 * half + 1;
    let mut h: Vec<T> = (0..len)
        .map(|j| {
            let m = T::from_usize_lossy(j) - T::from_usize_lossy(half);
            let x = T::two() * cutoff * dt * m;
            let sinc = if m == T::zero() {
                T::one()
            } else {
                (T::PI() * x).sin() / (T::PI() * x)
            };
            let taper = T::c(0.5)
                * (T::one() + (T::PI() * m / T::from_usize_lossy(half + 1)).cos());
            sinc * taper
        })
        .collect();
    let sum = h.iter().fold(T::zero(), |a, &b| a + b);
    h.iter_mut().for_each(|v| *v = *v / sum);
    h
}

/// `(max − min)/(max + min)` of a non-negative envelope, with the minimum
/// taken after the maximum.
///
/// A driven record that starts from longitudinal polarization has a trivial
/// null at the pulse onset; only dips after the envelope has grown count.
pub fn modulation_depth<T: Real>(env: &ObservableSeries<T>) -> T {
    let Some((k_max, &max)) = env
        .samples
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, &T)>, (k, v)| match best {
            Some((_, b)) if *b >= *v => best,
            _ => Some((k, v)),
        })
    else {
        return T::zero();
    };
    let min = env.samples[k_max..].iter().copied().fold(max, T::min);
    if max + min > T::zero() {
        (max - min) / (max + min)
    } else {
        T::zero()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct DecayFit<T> {
    /// Fitted envelope value at `t = 0`.
    pub amplitude: T,
    /// Decay time, s; infinite when the envelope does not decay.
    pub decay_time: T,
    /// RMS of the log-residuals.
    pub residual: T,
    pub non_decaying: bool,
    pub points: usize,
}

/// Least-squares fit of `A·exp(−t/T)` to the envelope samples at `t ≥ t_start`,
/// linear in `ln env`.
pub fn fit_decay<T: Real>(env: &ObservableSeries<T>, t_start: T) -> Result<DecayFit<T>, SpectralError> {
    let pts: Vec<(usize, T, T)> = env
        .samples
        .iter()
        .enumerate()
        .map(|(k, &v)| (k, env.time(k), v))
        .filter(|&(_, t, _)| t >= t_start)
        .collect();
    if pts.len() < 8 {
        return Err(SpectralError::TooFewPoints(pts.len()));
    }
    if let Some(&(index, _, _)) = pts.iter().find(|p| !(p.2 > T::zero() && p.2.is_finite())) {
        return Err(SpectralError::NonPositive { index });
    }
    let n = T::from_usize_lossy(pts.len());
    let mean_t = pts.iter().fold(T::zero(), |a, p| a + p.1) / n;
    let mean_y = pts.iter().fold(T::zero(), |a, p| a + p.2.ln()) / n;
    let (mut stt, mut sty) = (T::zero(), T::zero());
    for &(_, t, v) in &pts {
        let dt = t - mean_t;
        stt = stt + dt * dt;
        sty = sty + dt * (v.ln() - mean_y);
    }
    let slope = sty / stt;
    let intercept = mean_y - slope * mean_t;
    let ss = pts.iter().fold(T::zero(), |a, &(_, t, v)| {
        let r = v.ln() - (intercept + slope * t);
        a + r * r
    });
    let span = pts[pts.len() - 1].1 - pts[0].1;
    // a slope below rounding over the span is treated as flat
    let non_decaying = slope * span > -T::epsilon() * T::c(64.0);
    Ok(DecayFit {
        amplitude: intercept.exp(),
        decay_time: if non_decaying { T::infinity() } else { -T::one() / slope },
        residual: (ss / n).sqrt(),
        non_decaying,
        points: pts.len(),
    })
}
