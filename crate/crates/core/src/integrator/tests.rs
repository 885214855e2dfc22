use super::*;
use crate::model::rhs_full;
use crate::sequencer::{standard_pulse, PumpMode};
use std::f64::consts::TAU;

fn uncoupled() -> PhysicalParams<f64> {
    PhysicalParams {
        gme_g: 0.0,
        gme_mu: 0.0,
        gme_mu_prime: 0.0,
        gamma_relax_g: 0.0,
        gamma_relax_mu: 0.0,
        gamma_relax_mu_prime: 0.0,
        pump_polarization: 0.0,
        ..PhysicalParams::default()
    }
}

fn free_seq(duration: f64, pump: f64) -> PulseSequence<f64> {
    PulseSequence::free(duration, FieldDrive::new(125.0, 0.0, 4.0))
        .unwrap()
        .with_pump_value(pump)
}

fn resonant_seq(b_osc: f64, pulse: f64) -> PulseSequence<f64> {
    let drive = FieldDrive::new(125.0, b_osc, 4.0);
    standard_pulse(0.0, pulse, 0.0, drive, PumpMode::Continuous).unwrap()
}

#[test]
fn pure_precession_returns_after_four_cycles() {
    let p = uncoupled();
    let seq = free_seq(1.0, 0.0);
    let s0 = SpinState::ground(Vec3::new(1.0, 0.0, 0.0));
    for scheme in [
        Scheme::ExponentialAffine,
        Scheme::ImplicitTrapezoidal,
        Scheme::ExplicitAdaptive,
    ] {
        let cfg = IntegrationConfig::default().with_scheme(scheme).with_max_step(1e-4);
        let traj = integrate_full(&s0, (0.0, 1.0), &p, &seq, &cfg).unwrap();
        assert_eq!(traj.len(), 101);
        let end = traj.last().unwrap().i_vec;
        assert!((end - Vec3::new(1.0, 0.0, 0.0)).norm() < 2e-5, "{scheme:?}: {end:?}");
        // closed form at every sample
        for (k, s) in traj.states.iter().enumerate() {
            let t = traj.time(k);
            let want = Vec3::new((TAU * 4.0 * t).cos(), (TAU * 4.0 * t).sin(), 0.0);
            assert!((s.i_vec - want).norm() < 2e-5, "{scheme:?} t={t}");
        }
    }
}

#[test]
fn pumped_metastable_relaxes_exponentially() {
    let p = PhysicalParams {
        gamma_relax_mu: 1e3,
        ..uncoupled()
    };
    let seq = free_seq(0.01, 0.1);
    let cfg = IntegrationConfig {
        sample_rate: 10_000.0,
        max_step: 1e-5,
        ..Default::default()
    };
    let traj = integrate_full(&SpinState::zero(), (0.0, 0.01), &p, &seq, &cfg).unwrap();
    for (k, s) in traj.states.iter().enumerate() {
        let t = traj.time(k);
        let want = 0.1 * (1.0 - (-1000.0 * t).exp());
        assert!((s.f_mu.z() - want).abs() < 1e-12, "t={t}");
    }
}

#[test]
fn steady_state_is_a_fixed_point_of_the_integrator() {
    let p = PhysicalParams::<f64>::default();
    let drive = FieldDrive::new(125.0, 0.0, 4.0);
    let s0 = steady_state(&p, &drive).unwrap();
    let traj = integrate_full(&s0, (0.0, 2.0), &p, &free_seq(2.0, 0.1), &IntegrationConfig::default())
        .unwrap();
    for s in &traj.states {
        assert!((*s - s0).norm() <= 1e-10 * s0.norm(), "{}", (*s - s0).norm() / s0.norm());
    }
}

#[test]
fn steady_state_examples() {
    let drive = FieldDrive::new(125.0, 0.0, 4.0);
    let zero = steady_state(&PhysicalParams::default().with_pump(0.0), &drive).unwrap();
    assert_eq!(zero.norm(), 0.0);

    let p = PhysicalParams::<f64>::default();
    let s = steady_state(&p, &drive).unwrap();
    assert!(s.i_vec.z() > 0.0 && s.f_mu.z() > 0.0);
    let residual = rhs_full(&s, 0.0, &p, &drive).unwrap();
    // rates up to 1e6 s⁻¹ multiply the state, so scale the residual accordingly
    assert!(residual.norm() < 1e-12 * 1e6 * s.norm(), "{}", residual.norm());

    let doubled = steady_state(&p.with_pump(0.2), &drive).unwrap();
    assert!((doubled - s.scaled(2.0)).norm() <= 1e-14 * s.norm());

    // cross-check against a long integration from zero
    let traj = integrate_full(
        &SpinState::zero(),
        (0.0, 30.0),
        &p,
        &free_seq(30.0, 0.1),
        &IntegrationConfig::default(),
    )
    .unwrap();
    let end = traj.last().unwrap();
    assert!((*end - s).norm() < 1e-5 * s.norm());
}

#[test]
fn steady_state_rejects_drive_and_singular_systems() {
    let p = PhysicalParams::<f64>::default();
    assert_eq!(
        steady_state(&p, &FieldDrive::new(125.0, 3.0, 4.0)).unwrap_err(),
        IntegrationError::DriveActive
    );
    let no_relax = PhysicalParams {
        gamma_relax_g: 0.0,
        gamma_relax_mu: 0.0,
        gamma_relax_mu_prime: 0.0,
        ..p
    };
    let err = steady_state(&no_relax, &FieldDrive::new(125.0, 0.0, 4.0)).unwrap_err();
    assert!(matches!(err, IntegrationError::Singular(_)), "{err:?}");
}

#[test]
fn reduced_free_relaxation_reaches_fixed_point_monotonically() {
    let p = PhysicalParams::<f64>::default();
    let traj = integrate_reduced(
        &Vec3::zero(),
        (0.0, 30.0),
        &p,
        &free_seq(30.0, 0.1),
        &IntegrationConfig::default(),
    )
    .unwrap();
    let z: Vec<f64> = traj.states.iter().map(|s| s.i_vec.z()).collect();
    assert!(z.windows(2).all(|w| w[1] >= w[0]));
    assert!((z.last().unwrap() - 2e-4).abs() < 2e-4 * 1e-6);
    let steady = steady_state_reduced(&p, &FieldDrive::new(125.0, 0.0, 4.0)).unwrap();
    assert!((steady.z() - 2e-4).abs() < 1e-18);
}

/// Rotating-wave closed form of the reduced model started from its
/// undriven steady state, with the drive switched on at t = 0.
fn rotating_wave(p: &PhysicalParams<f64>, drive: &FieldDrive<f64>, t: f64) -> (f64, f64) {
    let w = TAU * drive.drive_freq;
    let w1 = TAU * 0.5 * p.gamma_g * drive.b_osc * 1e-5;
    let delta = TAU * p.gamma_g * drive.b_static * 1e-5 - w;
    let g = p.gamma_relax_g;
    let s = p.reduced_pump_rate() * p.pump_polarization;
    // steady state of (Ω×I − ΓI + S e_z) = 0 with Ω = (0, w1, delta), by Cramer's rule
    let m = [[-g, -delta, w1], [delta, -g, 0.0], [-w1, 0.0, -g]];
    let rhs = [0.0, 0.0, -s];
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(m);
    let ss: [f64; 3] = std::array::from_fn(|c| {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = rhs[r];
        }
        det3(mc) / d
    });
    let dev0 = [-ss[0], -ss[1], s / g - ss[2]];
    // Rodrigues rotation of dev0 about Ω by |Ω| t
    let om = [0.0, w1, delta];
    let mag = (w1 * w1 + delta * delta).sqrt();
    let n = om.map(|v| v / mag);
    let th = mag * t;
    let ndot = n[0] * dev0[0] + n[1] * dev0[1] + n[2] * dev0[2];
    let cr = [
        n[1] * dev0[2] - n[2] * dev0[1],
        n[2] * dev0[0] - n[0] * dev0[2],
        n[0] * dev0[1] - n[1] * dev0[0],
    ];
    let rot: [f64; 3] =
        std::array::from_fn(|i| dev0[i] * th.cos() + cr[i] * th.sin() + n[i] * ndot * (1.0 - th.cos()));
    let decay = (-g * t).exp();
    let xr = ss[0] + decay * rot[0];
    let yr = ss[1] + decay * rot[1];
    (xr * (w * t).cos() - yr * (w * t).sin(), xr * (w * t).sin() + yr * (w * t).cos())
}

#[test]
fn reduced_model_matches_rotating_wave_closed_form() {
    let p = PhysicalParams::<f64>::default();
    let seq = resonant_seq(9.0, 10.0);
    let i0 = steady_state_reduced(&p, &FieldDrive::new(125.0, 0.0, 4.0)).unwrap();
    let traj =
        integrate_reduced(&i0, (0.0, 10.0), &p, &seq, &IntegrationConfig::default()).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, s) in traj.states.iter().enumerate() {
        let (x, y) = rotating_wave(&p, &seq.drive, traj.time(k));
        num += (s.i_vec.x() - x).powi(2) + (s.i_vec.y() - y).powi(2);
        den += x * x + y * y;
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.03, "relative RMS {rel}");
}

#[test]
fn implicit_and_exponential_agree_on_stiff_run() {
    let p = PhysicalParams::<f64>::default();
    let seq = resonant_seq(21.0, 1.0);
    let s0 = steady_state(&p, &FieldDrive::new(125.0, 0.0, 4.0)).unwrap();
    let exp = integrate_full(&s0, (0.0, 1.0), &p, &seq, &IntegrationConfig::default()).unwrap();
    let trap = integrate_full(
        &s0,
        (0.0, 1.0),
        &p,
        &seq,
        // the trapezoid is only A-stable, so the fast metastable modes need a finer step
        &IntegrationConfig {
            steps_per_period: 800,
            ..IntegrationConfig::default().with_scheme(Scheme::ImplicitTrapezoidal)
        },
    )
    .unwrap();
    let scale = s0.i_vec.norm();
    for (a, b) in exp.states.iter().zip(&trap.states) {
        assert!((a.i_vec - b.i_vec).norm() < 1e-3 * scale);
    }
}

fn max_err(a: &Trajectory<f64>, b: &Trajectory<f64>) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x.i_vec - y.i_vec).norm())
        .fold(0.0, f64::max)
}

#[test]
fn fixed_step_schemes_are_second_order() {
    let p = PhysicalParams::<f64>::default();
    let seq = resonant_seq(70.0, 2.0);
    let i0 = Vec3::new(2e-4, 0.0, 0.0);
    for scheme in [Scheme::ExponentialAffine, Scheme::ImplicitTrapezoidal] {
        let run = |spp: usize| {
            let cfg = IntegrationConfig {
                steps_per_period: spp,
                max_step: 0.0125,
                ..IntegrationConfig::default().with_scheme(scheme)
            };
            integrate_reduced(&i0, (0.0, 2.0), &p, &seq, &cfg).unwrap()
        };
        let reference = run(3200);
        let e1 = max_err(&run(25), &reference);
        let e2 = max_err(&run(50), &reference);
        let order = (e1 / e2).log2();
        assert!((1.7..2.3).contains(&order), "{scheme:?}: order {order}");
    }
}

#[test]
fn explicit_scheme_fails_loudly_on_stiff_full_model() {
    let p = PhysicalParams::<f64>::default();
    let s0 = steady_state(&p, &FieldDrive::new(125.0, 0.0, 4.0)).unwrap();
    let cfg = IntegrationConfig {
        max_steps: 20_000,
        ..IntegrationConfig::default().with_scheme(Scheme::ExplicitAdaptive)
    };
    let err = integrate_full(&s0, (0.0, 1.0), &p, &resonant_seq(21.0, 1.0), &cfg).unwrap_err();
    assert!(matches!(err, IntegrationError::StepBudgetExceeded { .. }), "{err:?}");

    let cfg = IntegrationConfig {
        min_step: 1e-4,
        ..IntegrationConfig::default().with_scheme(Scheme::ExplicitAdaptive)
    };
    let err = integrate_full(&s0, (0.0, 1.0), &p, &resonant_seq(21.0, 1.0), &cfg).unwrap_err();
    assert!(matches!(err, IntegrationError::StepSizeUnderflow { .. }), "{err:?}");
}

#[test]
fn explicit_scheme_matches_exponential_on_reduced_model() {
    let p = PhysicalParams::<f64>::default();
    let seq = resonant_seq(21.0, 3.0);
    let i0 = steady_state_reduced(&p, &FieldDrive::new(125.0, 0.0, 4.0)).unwrap();
    let a = integrate_reduced(&i0, (0.0, 3.0), &p, &seq, &IntegrationConfig::default()).unwrap();
    let b = integrate_reduced(
        &i0,
        (0.0, 3.0),
        &p,
        &seq,
        &IntegrationConfig::default().with_scheme(Scheme::ExplicitAdaptive),
    )
    .unwrap();
    assert!(max_err(&a, &b) < 1e-3 * i0.norm());
}

#[test]
fn norm_conserved_under_driven_precession() {
    let p = uncoupled();
    let seq = resonant_seq(21.0, 10.0);
    let s0 = SpinState::ground(Vec3::new(0.6, 0.0, 0.8));
    for scheme in [Scheme::ExponentialAffine, Scheme::ImplicitTrapezoidal] {
        let traj = integrate_full(
            &s0,
            (0.0, 10.0),
            &p,
            &seq,
            &IntegrationConfig::default().with_scheme(scheme),
        )
        .unwrap();
        let drift = traj
            .states
            .iter()
            .map(|s| (s.i_vec.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-8, "{scheme:?}: {drift}");
    }
}

#[test]
fn full_model_larmor_shift_from_metastable_precession() {
    // Eliminating the metastables to first order in γ_μB₀/Γ_ME adds
    // 2·Γ_ME_g·γ_μ/Γ_ME_μ to the ground-state ratio (γ_μ′ = γ_μ/2 here).
    let p = PhysicalParams::<f64>::default();
    let predicted = (p.gamma_g + 2.0 * p.gme_g * p.gamma_mu / p.gme_mu) * 125.0e-5;
    let s0 = steady_state(&p, &FieldDrive::new(125.0, 0.0, 4.0))
        .unwrap()
        .rotated_about_y(std::f64::consts::FRAC_PI_2);
    let traj = integrate_full(&s0, (0.0, 10.0), &p, &free_seq(10.0, 0.1), &IntegrationConfig::default())
        .unwrap();
    let mut phase = 0.0;
    let mut prev = 0.0f64;
    for s in &traj.states {
        let a = s.i_vec.y().atan2(s.i_vec.x());
        let mut d = a - prev;
        while d > std::f64::consts::PI {
            d -= TAU;
        }
        while d < -std::f64::consts::PI {
            d += TAU;
        }
        phase += d;
        prev = a;
    }
    let measured = phase / TAU / 10.0;
    assert!((measured - predicted).abs() < 5e-4, "{measured} vs {predicted}");
    assert!(measured > 4.005);
}

#[test]
fn invalid_configs_rejected() {
    let p = PhysicalParams::<f64>::default();
    let seq = resonant_seq(21.0, 1.0);
    let s0 = SpinState::zero();
    let too_coarse = IntegrationConfig::default().with_max_step(0.05);
    assert!(matches!(
        integrate_full(&s0, (0.0, 1.0), &p, &seq, &too_coarse),
        Err(IntegrationError::InvalidConfig { field: "max_step", .. })
    ));
    let slow = IntegrationConfig {
        sample_rate: 10.0,
        ..Default::default()
    };
    assert!(matches!(
        integrate_full(&s0, (0.0, 1.0), &p, &seq, &slow),
        Err(IntegrationError::InvalidConfig { field: "sample_rate", .. })
    ));
    let zero_tol = IntegrationConfig {
        rel_tol: 0.0,
        ..Default::default()
    };
    assert!(zero_tol.validate().is_err());
    assert!(integrate_full(&s0, (0.0, 2.0), &p, &seq, &IntegrationConfig::default()).is_err());
    let nan = SpinState::ground(Vec3::new(f64::NAN, 0.0, 0.0));
    assert!(matches!(
        integrate_full(&nan, (0.0, 1.0), &p, &seq, &IntegrationConfig::default()),
        Err(IntegrationError::NonFinite { .. })
    ));
}

#[test]
fn integration_is_bit_reproducible() {
    let p = PhysicalParams::<f64>::default();
    let seq = resonant_seq(21.0, 2.0);
    let s0 = steady_state(&p, &FieldDrive::new(125.0, 0.0, 4.0)).unwrap();
    let a = integrate_full(&s0, (0.0, 2.0), &p, &seq, &IntegrationConfig::default()).unwrap();
    let b = integrate_full(&s0, (0.0, 2.0), &p, &seq, &IntegrationConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn window_selects_half_open_interval() {
    let p = PhysicalParams::<f64>::default();
    let traj = integrate_reduced(
        &Vec3::zero(),
        (0.0, 2.0),
        &p,
        &free_seq(2.0, 0.1),
        &IntegrationConfig::default(),
    )
    .unwrap();
    let w = traj.window(0.5, 1.5);
    assert_eq!(w.len(), 100);
    assert!((w.t0 - 0.5).abs() < 1e-12);
}

#[test]
fn tipped_initial_condition() {
    let p = PhysicalParams::<f64>::default();
    let s = InitialCondition::Tipped {
        angle: std::f64::consts::FRAC_PI_2,
    }
    .resolve(&p, 125.0, 0.1, ModelKind::Reduced)
    .unwrap();
    assert!((s.i_vec.x() - 2e-4).abs() < 1e-15);
    assert!(s.i_vec.z().abs() < 1e-15);
}

