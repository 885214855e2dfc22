//! Physical types, the coupled ground/metastable Bloch system and the
//! closed-form dressed-state relations.
//!
//! Unit convention, used everywhere in the crate:
//!
//! * gyromagnetic ratios are stored in Hz per gauss and precession uses the
//!   angular rate `2π·γ·B`;
//! * every relaxation and exchange rate is an exponential rate in s⁻¹ and
//!   enters the equations without a `2π`;
//! * fields are given in nanotesla and converted with 1 G = 10⁵ nT.

use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::Real;

pub const NT_PER_GAUSS: f64 = 1e5;

/// Pump polarization used when none is configured.
pub const DEFAULT_PUMP_POLARIZATION: f64 = 0.1;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("non-finite component in {what}")]
    NonFinite { what: &'static str },
}

/// Cartesian 3-vector.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3([x, y, z])
    }
    pub fn zero() -> Self {
        Vec3([T::zero(); 3])
    }
    pub fn e_z() -> Self {
        Vec3::new(T::zero(), T::zero(), T::one())
    }
    pub fn x(&self) -> T {
        self.0[0]
    }
    pub fn y(&self) -> T {
        self.0[1]
    }
    pub fn z(&self) -> T {
        self.0[2]
    }
    pub fn cross(&self, o: &Self) -> Self {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3::new(b * f - c * e, c * d - a * f, a * e - b * d)
    }
    pub fn dot(&self, o: &Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
    /// Rotation about the y axis by `angle` (z is carried toward +x).
    pub fn rotated_about_y(&self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x() + s * self.z(), self.y(), c * self.z() - s * self.x())
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3::new(self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2])
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2])
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Vec3::new(self.0[0] * s, self.0[1] * s, self.0[2] * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self * -T::one()
    }
}

/// Which metastable exchange rate divides the pump source of the reduced model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeBranch {
    #[default]
    Mu,
    MuPrime,
}

/// Gyromagnetic ratios, exchange and relaxation rates, pump polarization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct PhysicalParams<T> {
    /// Ground state 1¹S₀, Hz/G.
    pub gamma_g: T,
    /// Metastable 2³S₁ F=1/2, Hz/G.
    pub gamma_mu: T,
    /// Metastable 2³S₁ F=3/2, Hz/G.
    pub gamma_mu_prime: T,
    pub gme_g: T,
    pub gme_mu: T,
    pub gme_mu_prime: T,
    pub gamma_relax_g: T,
    pub gamma_relax_mu: T,
    pub gamma_relax_mu_prime: T,
    pub pump_polarization: T,
    #[serde(default)]
    pub reduced_branch: ExchangeBranch,
}

impl<T: Real> Default for PhysicalParams<T> {
    fn default() -> Self {
        PhysicalParams {
            gamma_g: T::c(0.0032e6),
            gamma_mu: T::c(3.8e6),
            gamma_mu_prime: T::c(1.9e6),
            gme_g: T::c(1.0),
            gme_mu: T::c(1e6),
            gme_mu_prime: T::c(1e6),
            gamma_relax_g: T::c(0.5),
            gamma_relax_mu: T::c(1e3),
            gamma_relax_mu_prime: T::c(1e3),
            pump_polarization: T::c(DEFAULT_PUMP_POLARIZATION),
            reduced_branch: ExchangeBranch::Mu,
        }
    }
}

impl<T: Real> PhysicalParams<T> {
    pub fn with_pump(mut self, p: T) -> Self {
        self.pump_polarization = p;
        self
    }

    /// Checks the strict invariants: every ratio and rate finite and
    /// positive, polarization in [0, 1].
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("gamma_g", self.gamma_g),
            ("gamma_mu", self.gamma_mu),
            ("gamma_mu_prime", self.gamma_mu_prime),
            ("gme_g", self.gme_g),
            ("gme_mu", self.gme_mu),
            ("gme_mu_prime", self.gme_mu_prime),
            ("gamma_relax_g", self.gamma_relax_g),
            ("gamma_relax_mu", self.gamma_relax_mu),
            ("gamma_relax_mu_prime", self.gamma_relax_mu_prime),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > T::zero()) {
                return Err(ModelError::InvalidParameter {
                    field,
                    reason: format!("must be finite and strictly positive, got {v}"),
                });
            }
        }
        let p = self.pump_polarization;
        if !(p.is_finite() && p >= T::zero() && p <= T::one()) {
            return Err(ModelError::InvalidParameter {
                field: "pump_polarization",
                reason: format!("must lie in [0, 1], got {p}"),
            });
        }
        Ok(())
    }

    /// Source rate of the reduced model, `Γ_ME_g·Γ_μ/Γ_ME_μ(μ′)`, in s⁻¹ per unit polarization.
    pub fn reduced_pump_rate(&self) -> T {
        let denom = match self.reduced_branch {
            ExchangeBranch::Mu => self.gme_mu,
            ExchangeBranch::MuPrime => self.gme_mu_prime,
        };
        self.gme_g * self.gamma_relax_mu / denom
    }
}

/// Static field along z and linearly polarized drive along y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct FieldDrive<T> {
    /// |B₀| along z, nT.
    pub b_static: T,
    /// Amplitude of B_M along y, nT.
    pub b_osc: T,
    /// ω/2π, Hz.
    pub drive_freq: T,
    /// Radians.
    #[serde(default)]
    pub phase: T,
}

impl<T: Real> FieldDrive<T> {
    pub fn new(b_static: T, b_osc: T, drive_freq: T) -> Self {
        FieldDrive {
            b_static,
            b_osc,
            drive_freq,
            phase: T::zero(),
        }
    }

    /// Drive tuned to the ground-state Larmor frequency.
    pub fn resonant(params: &PhysicalParams<T>, b_static: T, b_osc: T) -> Self {
        Self::new(b_static, b_osc, larmor_frequency(params, b_static))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("b_static", self.b_static),
            ("b_osc", self.b_osc),
            ("drive_freq", self.drive_freq),
        ];
        for (field, v) in fields {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(ModelError::InvalidParameter {
                    field,
                    reason: format!("must be finite and non-negative, got {v}"),
                });
            }
        }
        if !self.phase.is_finite() {
            return Err(ModelError::InvalidParameter {
                field: "phase",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Expectation values of the ground-state and the two metastable angular momenta.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "[T; 9]", from = "[T; 9]")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct SpinState<T> {
    pub i_vec: Vec3<T>,
    pub f_mu: Vec3<T>,
    pub f_mu_prime: Vec3<T>,
}

impl<T: Real> SpinState<T> {
    pub fn zero() -> Self {
        SpinState {
            i_vec: Vec3::zero(),
            f_mu: Vec3::zero(),
            f_mu_prime: Vec3::zero(),
        }
    }

    pub fn ground(i_vec: Vec3<T>) -> Self {
        SpinState {
            i_vec,
            ..Self::zero()
        }
    }

    /// Column order: I_x, I_y, I_z, F_μx, F_μy, F_μz, F_μ′x, F_μ′y, F_μ′z.
    pub fn to_array(&self) -> [T; 9] {
        let [a, b, c] = self.i_vec.0;
        let [d, e, f] = self.f_mu.0;
        let [g, h, i] = self.f_mu_prime.0;
        [a, b, c, d, e, f, g, h, i]
    }

    pub fn from_array(v: [T; 9]) -> Self {
        SpinState {
            i_vec: Vec3([v[0], v[1], v[2]]),
            f_mu: Vec3([v[3], v[4], v[5]]),
            f_mu_prime: Vec3([v[6], v[7], v[8]]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.i_vec.is_finite() && self.f_mu.is_finite() && self.f_mu_prime.is_finite()
    }

    pub fn scaled(&self, s: T) -> Self {
        SpinState {
            i_vec: self.i_vec * s,
            f_mu: self.f_mu * s,
            f_mu_prime: self.f_mu_prime * s,
        }
    }

    /// Ideal hard pulse about the y axis applied to all three species.
    pub fn rotated_about_y(&self, angle: T) -> Self {
        SpinState {
            i_vec: self.i_vec.rotated_about_y(angle),
            f_mu: self.f_mu.rotated_about_y(angle),
            f_mu_prime: self.f_mu_prime.rotated_about_y(angle),
        }
    }

    pub fn norm(&self) -> T {
        self.to_array()
            .iter()
            .fold(T::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }
}

impl<T: Real> From<SpinState<T>> for [T; 9] {
    fn from(s: SpinState<T>) -> Self {
        s.to_array()
    }
}

impl<T: Real> From<[T; 9]> for SpinState<T> {
    fn from(v: [T; 9]) -> Self {
        SpinState::from_array(v)
    }
}

impl<T: Real> Add for SpinState<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        SpinState {
            i_vec: self.i_vec + o.i_vec,
            f_mu: self.f_mu + o.f_mu,
            f_mu_prime: self.f_mu_prime + o.f_mu_prime,
        }
    }
}

impl<T: Real> Sub for SpinState<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + o.scaled(-T::one())
    }
}

/// Closed-form dressed-state frequencies, all in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DressedPrediction<T> {
    pub larmor_freq: T,
    pub rabi_freq: T,
    /// ω_g − ω in Hz.
    pub detuning: T,
    pub splitting: T,
    /// Drive frequency; the triplet is centred on it.
    pub center: T,
    pub sideband_low: T,
    pub sideband_high: T,
}

/// Metastability-exchange coefficient matrix, rows = equation for (I, F_μ, F_μ′),
/// columns = contribution of (I, F_μ, F_μ′). Each row is multiplied by the
/// exchange rate of the species it belongs to.
///
/// Generic over any numeric type so it can be evaluated exactly in rationals.
pub fn exchange_coefficients<T: Num + Copy + FromPrimitive>() -> [[T; 3]; 3] {
    let q = |n: i64, d: i64| {
        T::from_i64(n).expect("small integer") / T::from_i64(d).expect("small integer")
    };
    [
        [q(-1, 1), q(-1, 3), q(1, 3)],
        [q(-1, 9), q(-7, 9), q(1, 9)],
        [q(10, 9), q(10, 9), q(-4, 9)],
    ]
}

fn nt_to_gauss<T: Real>(b: T) -> T {
    b / T::c(NT_PER_GAUSS)
}

/// Total field `B₀ e_z + B_M cos(2πft + φ) e_y`, in gauss.
pub fn field_at<T: Real>(drive: &FieldDrive<T>, t: T) -> Vec3<T> {
    let arg = T::TAU() * drive.drive_freq * t + drive.phase;
    Vec3::new(
        T::zero(),
        nt_to_gauss(drive.b_osc) * arg.cos(),
        nt_to_gauss(drive.b_static),
    )
}

fn precession<T: Real>(gamma: T, field: Vec3<T>) -> Vec3<T> {
    field * (T::TAU() * gamma)
}

/// Time derivative of the full nine-component state.
pub fn rhs_full<T: Real>(
    state: &SpinState<T>,
    t: T,
    params: &PhysicalParams<T>,
    drive: &FieldDrive<T>,
) -> Result<SpinState<T>, ModelError> {
    if !state.is_finite() {
        return Err(ModelError::NonFinite { what: "spin state" });
    }
    let b = field_at(drive, t);
    let c = exchange_coefficients::<T>();
    let SpinState {
        i_vec: i,
        f_mu: f,
        f_mu_prime: g,
    } = *state;
    let mix = |row: &[T; 3]| i * row[0] + f * row[1] + g * row[2];

    let di = precession(params.gamma_g, b).cross(&i) + mix(&c[0]) * params.gme_g
        - i * params.gamma_relax_g;
    let df = precession(params.gamma_mu, b).cross(&f) + mix(&c[1]) * params.gme_mu
        - (f - Vec3::e_z() * params.pump_polarization) * params.gamma_relax_mu;
    let dg = precession(params.gamma_mu_prime, b).cross(&g) + mix(&c[2]) * params.gme_mu_prime
        - g * params.gamma_relax_mu_prime;
    Ok(SpinState {
        i_vec: di,
        f_mu: df,
        f_mu_prime: dg,
    })
}

/// Time derivative of the ground-state-only model with the metastables
/// adiabatically eliminated.
pub fn rhs_reduced<T: Real>(
    i_vec: &Vec3<T>,
    t: T,
    params: &PhysicalParams<T>,
    drive: &FieldDrive<T>,
) -> Result<Vec3<T>, ModelError> {
    if !i_vec.is_finite() {
        return Err(ModelError::NonFinite {
            what: "ground-state vector",
        });
    }
    let b = field_at(drive, t);
    Ok(precession(params.gamma_g, b).cross(i_vec)
        + Vec3::e_z() * (params.reduced_pump_rate() * params.pump_polarization)
        - *i_vec * params.gamma_relax_g)
}

fn put_skew<T: Real, const N: usize>(m: &mut Matrix<T, N>, at: usize, w: Vec3<T>) {
    let [x, y, z] = w.0;
    m[(at, at + 1)] = m[(at, at + 1)] - z;
    m[(at, at + 2)] = m[(at, at + 2)] + y;
    m[(at + 1, at)] = m[(at + 1, at)] + z;
    m[(at + 1, at + 2)] = m[(at + 1, at + 2)] - x;
    m[(at + 2, at)] = m[(at + 2, at)] - y;
    m[(at + 2, at + 1)] = m[(at + 2, at + 1)] + x;
}

/// Homogeneous generator of the full system at a given field and pump value:
/// `d/dt [s; 1] = G [s; 1]` with the nine state components first.
pub fn full_generator<T: Real>(
    params: &PhysicalParams<T>,
    field: Vec3<T>,
    pump: T,
) -> Matrix<T, 10> {
    let mut m = Matrix::zeros();
    let c = exchange_coefficients::<T>();
    let gammas = [params.gamma_g, params.gamma_mu, params.gamma_mu_prime];
    let exchange = [params.gme_g, params.gme_mu, params.gme_mu_prime];
    let relax = [
        params.gamma_relax_g,
        params.gamma_relax_mu,
        params.gamma_relax_mu_prime,
    ];
    for s in 0..3 {
        put_skew(&mut m, 3 * s, precession(gammas[s], field));
        for src in 0..3 {
            for k in 0..3 {
                m[(3 * s + k, 3 * src + k)] = m[(3 * s + k, 3 * src + k)] + exchange[s] * c[s][src];
            }
        }
        for k in 0..3 {
            m[(3 * s + k, 3 * s + k)] = m[(3 * s + k, 3 * s + k)] - relax[s];
        }
    }
    m[(5, 9)] = params.gamma_relax_mu * pump;
    m
}

/// Homogeneous generator of the reduced system.
pub fn reduced_generator<T: Real>(
    params: &PhysicalParams<T>,
    field: Vec3<T>,
    pump: T,
) -> Matrix<T, 4> {
    let mut m = Matrix::zeros();
    put_skew(&mut m, 0, precession(params.gamma_g, field));
    for k in 0..3 {
        m[(k, k)] = -params.gamma_relax_g;
    }
    m[(2, 3)] = params.reduced_pump_rate() * pump;
    m
}

/// Ground-state Larmor frequency γ_g·B₀ in Hz.
pub fn larmor_frequency<T: Real>(params: &PhysicalParams<T>, b_static: T) -> T {
    params.gamma_g * nt_to_gauss(b_static)
}

/// Rabi frequency ½·γ_g·B_M in Hz.
pub fn rabi_frequency<T: Real>(params: &PhysicalParams<T>, b_osc: T) -> T {
    T::c(0.5) * params.gamma_g * nt_to_gauss(b_osc)
}

/// Drive amplitude in nT that produces a resonant splitting of `splitting` Hz.
pub fn b_osc_from_splitting<T: Real>(params: &PhysicalParams<T>, splitting: T) -> T {
    T::two() * splitting / params.gamma_g * T::c(NT_PER_GAUSS)
}

/// Generalized splitting Δ = √(δω² + Ω_R²) and the triplet around the drive.
pub fn triplet_prediction<T: Real>(
    params: &PhysicalParams<T>,
    drive: &FieldDrive<T>,
) -> DressedPrediction<T> {
    let larmor = larmor_frequency(params, drive.b_static);
    let rabi = rabi_frequency(params, drive.b_osc);
    let detuning = larmor - drive.drive_freq;
    let splitting = detuning.hypot(rabi);
    DressedPrediction {
        larmor_freq: larmor,
        rabi_freq: rabi,
        detuning,
        splitting,
        center: drive.drive_freq,
        sideband_low: drive.drive_freq - splitting,
        sideband_high: drive.drive_freq + splitting,
    }
}
