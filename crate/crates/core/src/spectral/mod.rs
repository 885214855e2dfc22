//! Detector-proxy signal, windowed magnitude spectra, triplet extraction,
//! envelope demodulation and decay fits.

mod envelope;
mod peaks;

pub use envelope::{
    envelope, fit_decay, modulation_depth, trim_edges, DecayFit, ENVELOPE_KERNEL_PERIODS,
};
pub use peaks::{extract_triplet, FoundMask, Peak, TripletFeatures};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::integrator::{ModelKind, Trajectory};
use crate::Real;

/// Fewest samples a series may hold.
pub const MIN_SERIES_LEN: usize = 16;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("series has {len} samples, at least {min} required")]
    TooShort { len: usize, min: usize },
    #[error("invalid sampling interval {0}")]
    InvalidSampling(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("zero-padding factor {0} not in {{1, 2, 4, 8}}")]
    InvalidPadding(usize),
    #[error("expected center {center} Hz outside spectrum range [0, {nyquist}] Hz")]
    CenterOutOfRange { center: f64, nyquist: f64 },
    #[error("invalid search parameter: {0}")]
    InvalidSearch(String),
    #[error("carrier {carrier} Hz unusable for a {duration} s record with {dt} s sampling")]
    CarrierOutOfRange { carrier: f64, duration: f64, dt: f64 },
    #[error("envelope sample {index} is not positive")]
    NonPositive { index: usize },
    #[error("fit range holds {0} points, at least 8 required")]
    TooFewPoints(usize),
}

/// Uniformly sampled scalar signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct ObservableSeries<T> {
    pub t0: T,
    pub dt: T,
    pub samples: Vec<T>,
}

impl<T: Real> ObservableSeries<T> {
    pub fn new(t0: T, dt: T, samples: Vec<T>) -> Result<Self, SpectralError> {
        let s = ObservableSeries { t0, dt, samples };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if !(self.dt.is_finite() && self.dt > T::zero() && self.t0.is_finite()) {
            return Err(SpectralError::InvalidSampling(self.dt.to_f64_lossy()));
        }
        if self.samples.len() < MIN_SERIES_LEN {
            return Err(SpectralError::TooShort {
                len: self.samples.len(),
                min: MIN_SERIES_LEN,
            });
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + self.dt * T::from_usize_lossy(k)
    }

    /// Record length `n·dt`.
    pub fn duration(&self) -> T {
        self.dt * T::from_usize_lossy(self.samples.len())
    }

    pub fn scaled(&self, s: T) -> Self {
        ObservableSeries {
            t0: self.t0,
            dt: self.dt,
            samples: self.samples.iter().map(|&v| v * s).collect(),
        }
    }
}

/// Probe signal of a trajectory.
///
/// Full model: `F_μ,x + weight·F_μ′,x`. Reduced model: `I_x`, since the
/// metastable orientation follows the ground state in that regime.
pub fn observable<T: Real>(traj: &Trajectory<T>, weight_mu_prime: T) -> ObservableSeries<T> {
    let samples = traj
        .states
        .iter()
        .map(|s| match traj.model {
            ModelKind::Full => s.f_mu.x() + weight_mu_prime * s.f_mu_prime.x(),
            ModelKind::Reduced => s.i_vec.x(),
        })
        .collect();
    ObservableSeries {
        t0: traj.t0,
        dt: traj.dt,
        samples,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rect,
}

impl Window {
    pub fn coefficients<T: Real>(self, n: usize) -> Vec<T> {
        match self {
            Window::Rect => vec![T::one(); n],
            Window::Hann => {
                let denom = T::from_usize_lossy(n.saturating_sub(1).max(1));
                (0..n)
                    .map(|k| {
                        let x = T::TAU() * T::from_usize_lossy(k) / denom;
                        T::c(0.5) * (T::one() - x.cos())
                    })
                    .collect()
            }
        }
    }
}

/// One-sided magnitude spectrum from 0 Hz to Nyquist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Spectrum<T> {
    /// Bin spacing of the padded transform, Hz.
    pub freq_resolution: T,
    /// Resolution of the unpadded record, `1/(n·dt)`, Hz.
    pub native_resolution: T,
    pub frequencies: Vec<T>,
    pub magnitudes: Vec<T>,
    pub window: Window,
    pub zero_pad_factor: usize,
    pub fft_len: usize,
    /// Sum of the window coefficients, the amplitude normalization.
    pub window_sum: T,
}

impl<T: Real> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn nyquist(&self) -> T {
        *self.frequencies.last().unwrap_or(&T::zero())
    }

    pub fn bins(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.frequencies.iter().copied().zip(self.magnitudes.iter().copied())
    }

    /// Bin nearest `f`, clamped to the spectrum.
    pub fn nearest_bin(&self, f: T) -> usize {
        let k = (f / self.freq_resolution).round().to_usize().unwrap_or(0);
        k.min(self.len().saturating_sub(1))
    }

    /// Energy `Σ|X_k|²/N` over the full two-sided transform, rebuilt from the
    /// one-sided magnitudes.
    pub fn energy(&self) -> T {
        let n = self.fft_len;
        let half = T::c(0.5) * self.window_sum;
        let mut e = T::zero();
        for (k, &m) in self.magnitudes.iter().enumerate() {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            e = e + if edge {
                let x = m * self.window_sum;
                x * x
            } else {
                let x = m * half;
                T::two() * x * x
            };
        }
        e / T::from_usize_lossy(n)
    }
}

/// Energy `Σ(w·x)²` of the windowed series.
pub fn windowed_energy<T: Real>(series: &ObservableSeries<T>, window: Window) -> T {
    window
        .coefficients::<T>(series.len())
        .iter()
        .zip(&series.samples)
        .fold(T::zero(), |acc, (&w, &x)| acc + (w * x) * (w * x))
}

/// Magnitude spectrum of the windowed, zero-padded series.
///
/// A unit sinusoid centred on a bin reads 1.0 with the rectangular window
/// (each of the two-sided lines carries 0.5; they are folded together).
pub fn power_spectrum<T: Real>(
    series: &ObservableSeries<T>,
    window: Window,
    zero_pad_factor: usize,
) -> Result<Spectrum<T>, SpectralError> {
    series.validate()?;
    if ![1, 2, 4, 8].contains(&zero_pad_factor) {
        return Err(SpectralError::InvalidPadding(zero_pad_factor));
    }
    let n = series.len();
    let len = n * zero_pad_factor;
    let w = window.coefficients::<T>(n);
    let window_sum = w.iter().fold(T::zero(), |a, &b| a + b);
    let mut buf: Vec<Complex<T>> = series
        .samples
        .iter()
        .zip(&w)
        .map(|(&x, &wk)| Complex::new(x * wk, T::zero()))
        .chain(std::iter::repeat(Complex::new(T::zero(), T::zero())))
        .take(len)
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    let bins = len / 2 + 1;
    let df = T::one() / (T::from_usize_lossy(len) * series.dt);
    let frequencies = (0..bins).map(|k| df * T::from_usize_lossy(k)).collect();
    let magnitudes = buf[..bins]
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let edge = k == 0 || (len.is_multiple_of(2) && k == len / 2);
            let fold = if edge { T::one() } else { T::two() };
            fold * z.norm() / window_sum
        })
        .collect();
    Ok(Spectrum {
        freq_resolution: df,
        native_resolution: T::one() / series.duration(),
        frequencies,
        magnitudes,
        window,
        zero_pad_factor,
        fft_len: len,
        window_sum,
    })
}
