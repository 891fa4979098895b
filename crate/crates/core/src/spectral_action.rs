//! Spectral action of the disc-averaging propagator: the multiplier `h_t(s)` of the
//! normalized disc kernel, its behaviour along the periods `t_k = 2πk/s`, and the
//! time-averaged lower bound on an interval of spectral parameters.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, HypError, Result};
use crate::quad::{Adaptive, GaussLegendre};
use crate::selberg::SpectralFunction;

/// Range `[a, b]` of the spectral parameter `s`, i.e. eigenvalues in `[1/4 + a², 1/4 + b²]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralInterval {
    pub a: f64,
    pub b: f64,
}

impl SpectralInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b >= a && b.is_finite()) {
            return invalid(format!("spectral interval needs 0 < a <= b, got [{a}, {b}]"));
        }
        Ok(Self { a, b })
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        (0.25 + self.a * self.a, 0.25 + self.b * self.b)
    }

    /// `n` Chebyshev points of the second kind on `[a, b]`, endpoints included.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if n < 2 || self.a == self.b {
            return vec![self.a; n.max(1)];
        }
        let (m, r) = (0.5 * (self.a + self.b), 0.5 * (self.b - self.a));
        (0..n).rev().map(|j| m + r * (PI * j as f64 / (n - 1) as f64).cos()).collect()
    }
}

/// `1 − cosh u / cosh t` for `0 ≤ u ≤ t`, free of cancellation and overflow.
pub fn disc_profile(t: f64, u: f64) -> f64 {
    let a = -(-(t - u)).exp_m1();
    let b = -(-(t + u)).exp_m1();
    (a * b / (1.0 + (-2.0 * t).exp())).max(0.0)
}

fn check_t(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return invalid("time must be finite and nonnegative");
    }
    Ok(())
}

/// `h_t(s) = 4√2 ∫_0^t cos(su) √(1 − cosh u / cosh t) du` by adaptive quadrature.
///
/// The last unit before `u = t` is integrated in `v` with `u = t − v²`; the rest is cut
/// into pieces of at most half a period of `cos(su)`.
pub fn h_t_closed(t: f64, s: f64) -> Result<f64> {
    check_t(t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let q = Adaptive::new(1e-14, 1e-11).with_budget(4000);
    let split = (t - 1.0).max(0.0);
    let v_end = (t - split).sqrt();
    let near = q
        .integrate(|v: f64| 2.0 * v * (s * (t - v * v)).cos() * disc_profile(t, t - v * v).sqrt(), 0.0, v_end)?
        .value;
    let far = if split > 0.0 {
        let step = if s.abs() > 0.0 { (PI / s.abs()).min(1.0) } else { 1.0 };
        let n = (split / step).ceil() as usize;
        let pts: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(split)).collect();
        q.integrate_pieces(|u: f64| (s * u).cos() * disc_profile(t, u).sqrt(), &pts)?.value
    } else {
        0.0
    };
    Ok(4.0 * SQRT_2 * (near + far))
}

/// Fixed-node version of [`h_t_closed`] for grid sweeps: Gauss–Legendre on panels no
/// wider than one radian of `su` (and one unit of `u`), plus the `v` substitution on the
/// last unit.
pub fn h_t_fixed(t: f64, s: f64) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    let gl = GaussLegendre::cached(16);
    let split = (t - 1.0).max(0.0);
    let v_end = (t - split).sqrt();
    let near_panels = 1 + (s.abs() * (t - split) / 4.0).ceil() as usize;
    let near = gl.composite(
        |v: f64| 2.0 * v * (s * (t - v * v)).cos() * disc_profile(t, t - v * v).sqrt(),
        0.0,
        v_end,
        near_panels,
    );
    let far = if split > 0.0 {
        let panels = (split * s.abs().max(1.0) / 4.0).ceil() as usize;
        gl.composite(|u: f64| (s * u).cos() * disc_profile(t, u).sqrt(), 0.0, split, panels.max(1))
    } else {
        0.0
    };
    4.0 * SQRT_2 * (near + far)
}

/// `s ↦ h_t(s)` as a multiplier.
pub fn disc_multiplier(t: f64) -> SpectralFunction {
    SpectralFunction::new(move |s| h_t_fixed(t, s))
}

/// Largest difference quotient `|h_{t+δ}(s) − h_t(s)| / δ` over `s_grid` and `n_t`
/// equispaced times in `t_range`.
pub fn lipschitz_bound_with(s_grid: &[f64], t_range: (f64, f64), n_t: usize, delta: f64) -> Result<f64> {
    let (t0, t1) = t_range;
    if !(t0 > 1.0 && t1 >= t0 && delta > 0.0) {
        return invalid("Lipschitz sweep needs 1 < t0 <= t1 and δ > 0");
    }
    let n_t = n_t.max(2);
    let pairs: Vec<(f64, f64)> = s_grid
        .iter()
        .flat_map(|&s| (0..n_t).map(move |i| (s, t0 + (t1 - t0) * i as f64 / (n_t - 1) as f64)))
        .collect();
    Ok(pairs
        .par_iter()
        .map(|&(s, t)| ((h_t_fixed(t + delta, s) - h_t_fixed(t, s)) / delta).abs())
        .reduce(|| 0.0, f64::max))
}

/// [`lipschitz_bound_with`] at `δ = 1e-4` and 20 times per unit of `t`.
pub fn lipschitz_bound(s_grid: &[f64], t_range: (f64, f64)) -> Result<f64> {
    let n_t = ((t_range.1 - t_range.0) * 20.0).ceil() as usize + 1;
    lipschitz_bound_with(s_grid, t_range, n_t, 1e-4)
}

/// `t_k = 2πk/s`.
pub fn period_sequence(s: f64, k: usize) -> f64 {
    2.0 * PI * k as f64 / s
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return invalid("spectral parameter must be positive");
    }
    Ok(())
}

/// `c(s) = −½ ∫_0^{2π/s} cos(sv) √(1 − e^{v − 2π/s}) dv`, integrated in `w` with
/// `v = 2π/s − w²`.
pub fn c_of_s(s: f64) -> Result<f64> {
    check_s(s)?;
    let p = 2.0 * PI / s;
    let q = Adaptive::new(1e-13, 1e-11).with_budget(4000);
    let i = q
        .integrate(|w: f64| 2.0 * w * (s * (p - w * w)).cos() * (-(-w * w).exp_m1()).sqrt(), 0.0, p.sqrt())?
        .value;
    Ok(-0.5 * i)
}

/// `(1/(2s²)) ∫_0^{2π} sin x · e^{(x−2π)/s} / √(1 − e^{(x−2π)/s}) dx`, the integrated-by-parts
/// form of `∫_0^{2π/s} cos(sv) √(1 − e^{v−2π/s}) dv`, which equals `−2 c(s)`.
pub fn c_by_parts_integral(s: f64) -> Result<f64> {
    check_s(s)?;
    let q = Adaptive::new(1e-13, 1e-11).with_budget(4000);
    // x = 2π − w², dx = 2w dw
    let f = |w: f64| {
        if w == 0.0 {
            return 0.0;
        }
        let e = (-w * w / s).exp();
        let root = (-(-w * w / s).exp_m1()).sqrt();
        (2.0 * PI - w * w).sin() * e * 2.0 * w / root
    };
    Ok(q.integrate(f, 0.0, (2.0 * PI).sqrt())?.value / (2.0 * s * s))
}

/// Outcome of the period-bound verification on an interval.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodBound {
    /// Grid minimum of `c(s)` over the interval.
    pub c_i: f64,
    /// Grid minimum lowered by a Lipschitz-in-`s` enclosure of the gaps between grid points.
    pub c_i_certified: f64,
    pub argmin_s: f64,
    /// Smallest `k` from which `h_{t_k}(s) < −2c_I + tol` holds up to `k_max` on the grid.
    pub k0: usize,
    pub k_max: usize,
    /// Largest `h_{t_k}(s) + 2c_I` over the grid and `k ∈ [k0, k_max]`.
    pub worst_margin: f64,
}

/// Slack in the strict inequality `h_{t_k}(s) < −2c_I`.
pub const PERIOD_TOL: f64 = 1e-6;

/// Number of grid points on the interval for `c(I)` and the period check.
pub const PERIOD_GRID: usize = 256;

pub fn verify_period_bound(interval: SpectralInterval, k_max: usize) -> Result<PeriodBound> {
    verify_period_bound_on(interval, k_max, PERIOD_GRID)
}

pub fn verify_period_bound_on(interval: SpectralInterval, k_max: usize, n_grid: usize) -> Result<PeriodBound> {
    if k_max < 10 {
        return invalid("k_max must be at least 10");
    }
    let grid = interval.grid(n_grid);
    let cs: Vec<f64> = grid.par_iter().map(|&s| c_of_s(s)).collect::<Result<_>>()?;
    let (imin, &c_i) = cs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let (slope, gap) = grid.windows(2).zip(cs.windows(2)).fold((0.0f64, 0.0f64), |(l, g), (s, c)| {
        let d = s[1] - s[0];
        if d > 0.0 {
            (l.max((c[1] - c[0]).abs() / d), g.max(d))
        } else {
            (l, g)
        }
    });
    // doubled slope as safety factor, half a gap to the nearest grid point
    let c_i_certified = c_i - slope * gap;

    // margins[k−1] = max over the grid of h_{t_k}(s) + 2c_I
    let margins: Vec<(f64, f64)> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            grid.iter()
                .map(|&s| (h_t_fixed(period_sequence(s, k), s) + 2.0 * c_i, s))
                .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
        })
        .collect();
    let mut k0 = k_max + 1;
    for k in (1..=k_max).rev() {
        if margins[k - 1].0 < PERIOD_TOL {
            k0 = k;
        } else {
            break;
        }
    }
    if k0 > k_max {
        let violations = margins
            .iter()
            .enumerate()
            .filter(|(_, m)| m.0 >= PERIOD_TOL)
            .map(|(i, m)| (i + 1, m.1))
            .collect();
        return Err(HypError::BoundNotReached { k_max, violations });
    }
    let worst_margin = margins[k0 - 1..].iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(PeriodBound { c_i, c_i_certified, argmin_s: grid[imin], k0, k_max, worst_margin })
}

/// `√(1 − cosh(v + t_{k−1}) / cosh t_k)` on `[0, 2π/s]`.
pub fn f_k(s: f64, k: usize, v: f64) -> f64 {
    f_limit(s, v) * k_ratio(s, k, v).sqrt()
}

/// `f_k(v)² / f(v)²`, which equals `(1 − e^{−(t_k + u)}) / (1 + e^{−2t_k})` with
/// `u = v + t_{k−1}`.
fn k_ratio(s: f64, k: usize, v: f64) -> f64 {
    let tk = period_sequence(s, k);
    let u = (v + tk - 2.0 * PI / s).max(0.0);
    -(-(tk + u)).exp_m1() / (1.0 + (-2.0 * tk).exp())
}

/// Pointwise limit `√(1 − e^{v − 2π/s})` of [`f_k`].
pub fn f_limit(s: f64, v: f64) -> f64 {
    (-(v - 2.0 * PI / s).exp_m1()).max(0.0).sqrt()
}

/// `f(v) − f_k(v)`, evaluated as `f·(1 − R)/(1 + √R)` to avoid cancellation.
pub fn f_gap(s: f64, k: usize, v: f64) -> f64 {
    let tk = period_sequence(s, k);
    let u = (v + tk - 2.0 * PI / s).max(0.0);
    let e = (-2.0 * tk).exp();
    let one_minus_r = (e + (-(tk + u)).exp()) / (1.0 + e);
    f_limit(s, v) * one_minus_r / (1.0 + k_ratio(s, k, v).sqrt())
}

/// Largest `|f_k(v) − f(v)|` over `n_s × n_v` grid points of `s ∈ I`, `v ∈ [0, 2π/s]`,
/// together with the bound `½ e^{2(1−k)π/a}`.
pub fn uniform_convergence_gap(interval: SpectralInterval, k: usize, n_s: usize, n_v: usize) -> (f64, f64) {
    let n_v = n_v.max(2);
    let gap = interval
        .grid(n_s)
        .iter()
        .flat_map(|&s| {
            (0..n_v).map(move |j| {
                let v = 2.0 * PI / s * j as f64 / (n_v - 1) as f64;
                f_gap(s, k, v).abs()
            })
        })
        .fold(0.0, f64::max);
    let bound = 0.5 * (2.0 * (1.0 - k as f64) * PI / interval.a).exp();
    (gap, bound)
}

/// `(1/T) ∫_0^T h_t(s)² dt` by Gauss–Legendre panels no longer than a quarter period.
pub fn time_average(s: f64, big_t: f64) -> f64 {
    if !(big_t > 0.0) {
        return 0.0;
    }
    let gl = GaussLegendre::cached(16);
    let width = (0.5 * PI / s.abs().max(1e-3)).min(1.0);
    let panels = (big_t / width).ceil() as usize;
    let h = big_t / panels as f64;
    // summed in panel order so the result does not depend on the thread count
    let parts: Vec<f64> = (0..panels)
        .into_par_iter()
        .map(|p| {
            let a = p as f64 * h;
            gl.mapped(a, a + h).map(|(t, w)| w * h_t_fixed(t, s).powi(2)).sum::<f64>()
        })
        .collect();
    parts.iter().sum::<f64>() / big_t
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeAverage {
    pub big_t: f64,
    /// Minimum of the time average over the grid.
    pub value: f64,
    pub argmin_s: f64,
}

/// Number of grid points for the time-averaged bound.
pub const AVERAGE_GRID: usize = 33;

pub fn time_avg_lower_bound(interval: SpectralInterval, big_t: f64) -> Result<TimeAverage> {
    time_avg_lower_bound_on(interval, big_t, AVERAGE_GRID)
}

pub fn time_avg_lower_bound_on(interval: SpectralInterval, big_t: f64, n_grid: usize) -> Result<TimeAverage> {
    if !(big_t > 0.0 && big_t.is_finite()) {
        return invalid("averaging time must be positive");
    }
    let grid = interval.grid(n_grid);
    let (value, argmin_s) = grid
        .iter()
        .map(|&s| (time_average(s, big_t), s))
        .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
    Ok(TimeAverage { big_t, value, argmin_s })
}

/// Constants of the lower-bound chain: around each period `t_k` with `k ≥ k1`, the window
/// `J + t_k` (`J = [−c_I/(2L), c_I/(2L)]`) keeps `|h_t(s)| ≥ c_I` by the Lipschitz bound `L`.
#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundChain {
    pub c_i: f64,
    pub lipschitz: f64,
    pub j_len: f64,
    pub k0: usize,
    pub k1: usize,
    /// Smallest `T` at which the chain bound is positive on the whole interval.
    pub t_i: f64,
}

impl LowerBoundChain {
    /// `(s/(4π) − k1/T)·|J|·c_I²`, valid for `T ≥ 4π/s`.
    pub fn bound(&self, s: f64, big_t: f64) -> f64 {
        (s / (4.0 * PI) - self.k1 as f64 / big_t) * self.j_len * self.c_i * self.c_i
    }

    /// Chain bound minimized over `s ∈ I`; the expression increases with `s`.
    pub fn bound_on(&self, interval: SpectralInterval, big_t: f64) -> f64 {
        self.bound(interval.a, big_t)
    }
}

pub fn lower_bound_chain(interval: SpectralInterval, k_max: usize) -> Result<LowerBoundChain> {
    let pb = verify_period_bound(interval, k_max)?;
    let t_hi = period_sequence(interval.a, k_max) + 1.0;
    let lipschitz = lipschitz_bound(&interval.grid(9), (1.0 + 1e-3, t_hi))?;
    let j_len = pb.c_i / lipschitz;
    let mut k1 = pb.k0;
    // the windows must sit inside (1, ∞) where the Lipschitz bound applies
    while period_sequence(interval.b, k1) - 0.5 * j_len <= 1.0 {
        k1 += 1;
    }
    let t_i = (4.0 * PI * k1 as f64 / interval.a).max(4.0 * PI / interval.a);
    Ok(LowerBoundChain { c_i: pb.c_i, lipschitz, j_len, k0: pb.k0, k1, t_i })
}

/// `t ↦ h_t(s)` sampled on `n` equispaced times in `[t0, t1]`.
pub fn h_table(s: f64, t0: f64, t1: f64, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
            (t, h_t_fixed(t, s))
        })
        .collect()
}
