use serde::{Deserialize, Serialize};

use super::{SpectralError, Spectrum};
use crate::Real;

/// A spectral line with sub-bin frequency and amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Peak<T> {
    pub freq: T,
    pub amp: T,
    /// Topographic prominence, same units as `amp`.
    pub prominence: T,
    pub bin: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FoundMask {
    pub sideband_low: bool,
    pub center: bool,
    pub sideband_high: bool,
}

impl FoundMask {
    pub fn all(&self) -> bool {
        self.sideband_low && self.center && self.sideband_high
    }

    pub fn none(&self) -> bool {
        !(self.sideband_low || self.center || self.sideband_high)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct TripletFeatures<T> {
    pub center: Option<Peak<T>>,
    pub sideband_low: Option<Peak<T>>,
    pub sideband_high: Option<Peak<T>>,
    /// Half the sideband separation, or the center distance of the only
    /// sideband found.
    pub splitting: Option<T>,
    pub found_mask: FoundMask,
}

impl<T: Real> TripletFeatures<T> {
    pub fn unfound() -> Self {
        TripletFeatures {
            center: None,
            sideband_low: None,
            sideband_high: None,
            splitting: None,
            found_mask: FoundMask::default(),
        }
    }

    pub fn center_freq(&self) -> Option<T> {
        self.center.map(|p| p.freq)
    }
    pub fn center_amp(&self) -> Option<T> {
        self.center.map(|p| p.amp)
    }
    pub fn sideband_low_freq(&self) -> Option<T> {
        self.sideband_low.map(|p| p.freq)
    }
    pub fn sideband_high_freq(&self) -> Option<T> {
        self.sideband_high.map(|p| p.freq)
    }

    /// Larger of the two sideband amplitudes.
    pub fn max_sideband_amp(&self) -> Option<T> {
        match (self.sideband_low, self.sideband_high) {
            (Some(a), Some(b)) => Some(a.amp.max(b.amp)),
            (Some(a), None) | (None, Some(a)) => Some(a.amp),
            (None, None) => None,
        }
    }
}

fn local_maxima<T: Real>(m: &[T]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 1;
    while k + 1 < m.len() {
        if m[k] > m[k - 1] {
            // walk across a flat top
            let mut j = k;
            while j + 1 < m.len() && m[j + 1] == m[k] {
                j += 1;
            }
            if j + 1 < m.len() && m[j + 1] < m[k] {
                out.push((k + j) / 2);
            }
            k = j + 1;
        } else {
            k += 1;
        }
    }
    out
}

/// Height above the higher of the two saddles that separate `k` from any
/// taller point.
fn prominence<T: Real>(m: &[T], k: usize) -> T {
    let h = m[k];
    let mut left_min = h;
    for &v in m[..k].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &m[k + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

fn refine<T: Real>(spec: &Spectrum<T>, k: usize, prom: T) -> Peak<T> {
    let m = &spec.magnitudes;
    let (mut freq, mut amp) = (spec.frequencies[k], m[k]);
    if k > 0 && k + 1 < m.len() {
        let (a, b, c) = (m[k - 1], m[k], m[k + 1]);
        let denom = a - T::two() * b + c;
        if denom < T::zero() {
            let p = T::c(0.5) * (a - c) / denom;
            freq = freq + p * spec.freq_resolution;
            amp = b - T::c(0.25) * (a - c) * p;
        }
    }
    Peak {
        freq,
        amp,
        prominence: prom,
        bin: k,
    }
}

/// Locates the center line near `expected_center` and the sideband pair
/// around it.
///
/// The center is the tallest local maximum within two native resolution
/// bins of `expected_center` whose prominence reaches `min_prominence`
/// times the largest magnitude in the search window. Sidebands are local
/// maxima in `(0, center ± search_halfwidth]` with prominence at least
/// `min_prominence` times the center amplitude, farther than half a native
/// bin from the center and away from harmonics of the center frequency.
/// The symmetric pair (or lone sideband) with the largest combined
/// prominence wins. Lines that fail these tests are left unfound; without a
/// center the sidebands are sought about `expected_center`, with the
/// prominence floor taken from the window maximum.
pub fn extract_triplet<T: Real>(
    spec: &Spectrum<T>,
    expected_center: T,
    search_halfwidth: T,
    min_prominence: T,
) -> Result<TripletFeatures<T>, SpectralError> {
    let nyquist = spec.nyquist();
    if !(expected_center.is_finite() && expected_center >= T::zero() && expected_center <= nyquist)
    {
        return Err(SpectralError::CenterOutOfRange {
            center: expected_center.to_f64_lossy(),
            nyquist: nyquist.to_f64_lossy(),
        });
    }
    if !(search_halfwidth.is_finite() && search_halfwidth > T::zero()) {
        return Err(SpectralError::InvalidSearch(format!(
            "search_halfwidth must be positive, got {search_halfwidth}"
        )));
    }
    if !(min_prominence.is_finite() && min_prominence >= T::zero()) {
        return Err(SpectralError::InvalidSearch(format!(
            "min_prominence must be non-negative, got {min_prominence}"
        )));
    }

    let m = &spec.magnitudes;
    let f = &spec.frequencies;
    let native = spec.native_resolution;
    let lo = expected_center - search_halfwidth;
    let hi = expected_center + search_halfwidth;
    let in_window = |k: usize| f[k] > T::zero() && f[k] >= lo && f[k] <= hi;
    let window_max = (0..m.len())
        .filter(|&k| in_window(k))
        .map(|k| m[k])
        .fold(T::zero(), T::max);
    if window_max <= T::zero() {
        return Ok(TripletFeatures::unfound());
    }
    let peaks: Vec<(usize, T)> = local_maxima(m)
        .into_iter()
        .filter(|&k| in_window(k))
        .map(|k| (k, prominence(m, k)))
        .collect();

    let center = peaks
        .iter()
        .filter(|&&(k, p)| {
            (f[k] - expected_center).abs() <= T::two() * native && p >= min_prominence * window_max
        })
        .max_by(|a, b| m[a.0].partial_cmp(&m[b.0]).unwrap_or(std::cmp::Ordering::Equal));
    let center = center.map(|&(k, p)| (k, refine(spec, k, p)));
    // with the center line suppressed the sidebands are still placed about
    // the expected center
    let (anchor, floor) = match &center {
        Some((_, c)) => (c.freq, c.amp),
        None => (expected_center, window_max),
    };

    let harmonic =
        |x: T| (2..=8).any(|n| (x - anchor * T::from_usize_lossy(n)).abs() <= T::two() * native);
    let candidates: Vec<Peak<T>> = peaks
        .iter()
        .filter(|&&(k, p)| {
            center.as_ref().is_none_or(|c| c.0 != k) && p >= min_prominence * floor && !harmonic(f[k])
        })
        .map(|&(k, p)| refine(spec, k, p))
        .filter(|p| (p.freq - anchor).abs() > T::c(0.5) * native)
        .collect();
    let lows: Vec<&Peak<T>> = candidates.iter().filter(|p| p.freq < anchor).collect();
    let highs: Vec<&Peak<T>> = candidates.iter().filter(|p| p.freq > anchor).collect();

    let mut best: (T, Option<Peak<T>>, Option<Peak<T>>) = (T::zero(), None, None);
    for &l in &lows {
        for &h in &highs {
            let dl = anchor - l.freq;
            let dh = h.freq - anchor;
            let tol = native.max(T::c(0.1) * T::c(0.5) * (dl + dh));
            let score = l.prominence + h.prominence;
            if (dl - dh).abs() <= tol && score > best.0 {
                best = (score, Some(*l), Some(*h));
            }
        }
    }
    for &s in lows.iter().chain(&highs) {
        if s.prominence > best.0 {
            best = if s.freq < anchor {
                (s.prominence, Some(*s), None)
            } else {
                (s.prominence, None, Some(*s))
            };
        }
    }
    let (_, low, high) = best;
    let splitting = match (low, high) {
        (Some(l), Some(h)) => Some(T::c(0.5) * (h.freq - l.freq)),
        (Some(s), None) | (None, Some(s)) => Some((s.freq - anchor).abs()),
        (None, None) => None,
    };
    Ok(TripletFeatures {
        center: center.map(|c| c.1),
        sideband_low: low,
        sideband_high: high,
        splitting,
        found_mask: FoundMask {
            sideband_low: low.is_some(),
            center: center.is_some(),
            sideband_high: high.is_some(),
        },
    })
}
