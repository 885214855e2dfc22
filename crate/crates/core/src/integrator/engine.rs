use crate::linalg::{Lu, Matrix};
use crate::model::FieldDrive;
use crate::sequencer::PulseSequence;
use crate::Real;

use super::{IntegrationConfig, IntegrationError, Scheme};

/// Work counters for one integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub matrix_exponentials: usize,
}

type Generator<'a, T, const M: usize> = dyn Fn(T, &FieldDrive<T>, T) -> Matrix<T, M> + 'a;

/// A maximal interval over which the sequence gating is constant.
struct Piece<T> {
    start: T,
    stop: T,
    drive: FieldDrive<T>,
    pump: T,
}

impl<T: Real> Piece<T> {
    fn new(seq: &PulseSequence<T>, start: T, stop: T) -> Self {
        let mid = (start + stop) * T::c(0.5);
        Piece {
            start,
            stop,
            drive: seq.drive_unchecked(mid),
            pump: seq.gate_unchecked(mid).pump,
        }
    }

    fn oscillating(&self) -> bool {
        self.drive.b_osc > T::zero() && self.drive.drive_freq > T::zero()
    }
}

fn sample_count<T: Real>(t_span: (T, T), rate: T) -> usize {
    let n = ((t_span.1 - t_span.0) * rate + T::c(1e-9)).floor();
    n.to_usize().unwrap_or(0)
}

fn cut_points<T: Real>(a: T, b: T, boundaries: &[T]) -> Vec<T> {
    let tiny = (b - a).abs() * T::c(1e-9);
    let mut cuts = vec![a];
    cuts.extend(
        boundaries
            .iter()
            .copied()
            .filter(|&e| e > a + tiny && e < b - tiny),
    );
    cuts.push(b);
    cuts
}

fn all_finite<T: Real>(x: &[T]) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub(super) fn propagate<T: Real, const M: usize>(
    x0: [T; M],
    t_span: (T, T),
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
    generator: &Generator<'_, T, M>,
) -> Result<(Vec<[T; M]>, StepStats), IntegrationError> {
    match config.scheme {
        Scheme::ExplicitAdaptive => adaptive(x0, t_span, seq, config, generator),
        Scheme::ExponentialAffine | Scheme::ImplicitTrapezoidal => {
            fixed_step(x0, t_span, seq, config, generator)
        }
    }
}

/// Propagator for one static piece, reused while the step size repeats.
enum Cached<T, const M: usize> {
    /// Step matrix and, when the piece has a unique equilibrium, that equilibrium.
    Exp(Matrix<T, M>, Option<[T; M]>),
    Trap(Matrix<T, M>, Lu<T, M>),
}

/// Equilibrium of a homogeneous affine generator (last coordinate pinned to 1).
fn equilibrium<T: Real, const M: usize>(g: &Matrix<T, M>) -> Option<[T; M]> {
    let mut pinned = *g;
    pinned.0[M - 1] = [T::zero(); M];
    pinned.0[M - 1][M - 1] = T::one();
    let mut e = [T::zero(); M];
    e[M - 1] = T::one();
    let x = pinned.lu().ok()?.solve_vec(&e);
    all_finite(&x).then_some(x)
}

fn fixed_step<T: Real, const M: usize>(
    x0: [T; M],
    t_span: (T, T),
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
    generator: &Generator<'_, T, M>,
) -> Result<(Vec<[T; M]>, StepStats), IntegrationError> {
    let n = sample_count(t_span, config.sample_rate);
    let dt = T::one() / config.sample_rate;
    let boundaries = seq.boundaries();
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(n + 1);
    let mut x = x0;
    out.push(x);
    let half = T::c(0.5);
    let identity = Matrix::<T, M>::identity();
    let mut cache: Option<(T, T, Cached<T, M>)> = None;

    for k in 0..n {
        let a = t_span.0 + dt * T::from_usize_lossy(k);
        let b = t_span.0 + dt * T::from_usize_lossy(k + 1);
        for w in cut_points(a, b, &boundaries).windows(2) {
            let piece = Piece::new(seq, w[0], w[1]);
            let oscillating = piece.oscillating();
            let mut h_max = config.max_step;
            if oscillating {
                let per_period = T::one()
                    / (piece.drive.drive_freq * T::from_usize_lossy(config.steps_per_period));
                h_max = h_max.min(per_period);
            }
            let len = piece.stop - piece.start;
            let m = (len / h_max - T::c(1e-9)).ceil().to_usize().unwrap_or(1).max(1);
            let h = len / T::from_usize_lossy(m);
            for j in 0..m {
                let t = piece.start + h * T::from_usize_lossy(j);
                if !oscillating {
                    let hit = matches!(&cache, Some((p, hh, _)) if *p == piece.pump && *hh == h);
                    if !hit {
                        let g = generator(t, &piece.drive, piece.pump);
                        let prop = match config.scheme {
                            Scheme::ExponentialAffine => {
                                stats.matrix_exponentials += 1;
                                Cached::Exp(g.scale(h).exp()?, equilibrium(&g))
                            }
                            _ => Cached::Trap(
                                identity + g.scale(h * half),
                                (identity - g.scale(h * half)).lu()?,
                            ),
                        };
                        cache = Some((piece.pump, h, prop));
                    }
                    x = match &cache.as_ref().expect("cache filled").2 {
                        // stepping the deviation keeps an equilibrium exactly fixed
                        Cached::Exp(e, Some(eq)) => {
                            let d = e.mul_vec(&std::array::from_fn(|i| x[i] - eq[i]));
                            std::array::from_fn(|i| eq[i] + d[i])
                        }
                        Cached::Exp(e, None) => e.mul_vec(&x),
                        Cached::Trap(r, lu) => lu.solve_vec(&r.mul_vec(&x)),
                    };
                } else {
                    // both schemes freeze the field at the substep midpoint
                    let g = generator(t + h * half, &piece.drive, piece.pump);
                    x = match config.scheme {
                        Scheme::ExponentialAffine => {
                            stats.matrix_exponentials += 1;
                            g.scale(h).exp()?.mul_vec(&x)
                        }
                        _ => {
                            let rhs = (identity + g.scale(h * half)).mul_vec(&x);
                            (identity - g.scale(h * half)).lu()?.solve_vec(&rhs)
                        }
                    };
                }
                stats.accepted += 1;
            }
            if !all_finite(&x) {
                return Err(IntegrationError::NonFinite {
                    t: piece.stop.to_f64_lossy(),
                });
            }
        }
        out.push(x);
    }
    Ok((out, stats))
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn hermite<T: Real, const M: usize>(
    x0: &[T; M],
    f0: &[T; M],
    x1: &[T; M],
    f1: &[T; M],
    h: T,
    theta: T,
) -> [T; M] {
    let one = T::one();
    let two = T::two();
    let three = T::c(3.0);
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = two * t3 - three * t2 + one;
    let h10 = t3 - two * t2 + theta;
    let h01 = three * t2 - two * t3;
    let h11 = t3 - t2;
    std::array::from_fn(|i| h00 * x0[i] + h10 * h * f0[i] + h01 * x1[i] + h11 * h * f1[i])
}

fn adaptive<T: Real, const M: usize>(
    x0: [T; M],
    t_span: (T, T),
    seq: &PulseSequence<T>,
    config: &IntegrationConfig<T>,
    generator: &Generator<'_, T, M>,
) -> Result<(Vec<[T; M]>, StepStats), IntegrationError> {
    let n = sample_count(t_span, config.sample_rate);
    let dt = T::one() / config.sample_rate;
    let sample_time = |k: usize| t_span.0 + dt * T::from_usize_lossy(k);
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(n + 1);
    out.push(x0);
    let mut next = 1usize;
    let mut x = x0;
    let a: [[T; 6]; 7] = A.map(|row| row.map(T::c));
    let c: [T; 7] = C.map(T::c);
    let e: [T; 7] = E.map(T::c);
    let n_state = M - 1;
    let mut h = config.max_step;

    let cuts = cut_points(t_span.0, t_span.1, &seq.boundaries());
    for w in cuts.windows(2) {
        let piece = Piece::new(seq, w[0], w[1]);
        let f = |t: T, y: &[T; M]| generator(t, &piece.drive, piece.pump).mul_vec(y);
        let mut t = piece.start;
        let mut k1 = f(t, &x);
        while t < piece.stop {
            if stats.accepted + stats.rejected >= config.max_steps {
                return Err(IntegrationError::StepBudgetExceeded {
                    t: t.to_f64_lossy(),
                    steps: config.max_steps,
                });
            }
            let remaining = piece.stop - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let mut k = [[T::zero(); M]; 7];
            k[0] = k1;
            for s in 1..7 {
                let ys: [T; M] = std::array::from_fn(|i| {
                    x[i] + step * (0..s).fold(T::zero(), |acc, j| acc + a[s][j] * k[j][i])
                });
                k[s] = f(t + c[s] * step, &ys);
            }
            let x_new: [T; M] = std::array::from_fn(|i| {
                x[i] + step * (0..6).fold(T::zero(), |acc, j| acc + a[6][j] * k[j][i])
            });
            let mut err_sq = T::zero();
            for i in 0..n_state {
                let est = step * (0..7).fold(T::zero(), |acc, j| acc + e[j] * k[j][i]);
                let sc = config.abs_tol + config.rel_tol * x[i].abs().max(x_new[i].abs());
                err_sq = err_sq + (est / sc) * (est / sc);
            }
            let err = (err_sq / T::from_usize_lossy(n_state)).sqrt();
            if !err.is_finite() {
                return Err(IntegrationError::NonFinite {
                    t: t.to_f64_lossy(),
                });
            }
            let factor = if err == T::zero() {
                T::c(5.0)
            } else {
                (T::c(0.9) * err.powf(T::c(-0.2))).max(T::c(0.2)).min(T::c(5.0))
            };
            if err <= T::one() {
                let t_new = if last { piece.stop } else { t + step };
                let f_new = k[6];
                while next <= n && sample_time(next) <= t_new + dt * T::c(1e-9) {
                    let theta = ((sample_time(next) - t) / step).min(T::one());
                    out.push(hermite(&x, &k1, &x_new, &f_new, step, theta));
                    next += 1;
                }
                t = t_new;
                x = x_new;
                k1 = f_new;
                stats.accepted += 1;
                // a clipped final step says nothing about the next piece
                if !last {
                    h = (step * factor).min(config.max_step);
                }
            } else {
                stats.rejected += 1;
                h = step * factor;
            }
            if t < piece.stop && h < config.min_step {
                return Err(IntegrationError::StepSizeUnderflow {
                    t: t.to_f64_lossy(),
                    h: h.to_f64_lossy(),
                });
            }
        }
    }
    while out.len() < n + 1 {
        out.push(x);
    }
    Ok((out, stats))
}
