//! The disc-averaging propagator `P_t`, the kernel of `P_t a P_t`, lens volumes,
//! Hilbert–Schmidt estimators and ergodic averages over lenses.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fuchsian::Quotient;
use crate::geom::{ball_volume, geodesic_flow, hyp_dist, polar_from, sample_in_ball, sample_radius, segment_midframe};
use crate::quad::GaussLegendre;
use crate::rng::{mc_map, MeanErr};
use crate::{Point, UnitTangent};

type PointFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Bounded function on the hyperbolic plane.
#[derive(Clone)]
pub struct Observable {
    f: PointFn,
    pub sup_bound: f64,
    pub mean_zero_hint: bool,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable")
            .field("sup_bound", &self.sup_bound)
            .field("mean_zero_hint", &self.mean_zero_hint)
            .finish()
    }
}

impl Observable {
    pub fn new<F: Fn(Point) -> f64 + Send + Sync + 'static>(f: F, sup_bound: f64) -> Self {
        Self { f: Arc::new(f), sup_bound, mean_zero_hint: false }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, c.abs())
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn mean_zero(mut self) -> Self {
        self.mean_zero_hint = true;
        self
    }

    pub fn eval(&self, z: Point) -> f64 {
        (self.f)(z)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.f.clone();
        Self::new(move |z| c * f(z), c.abs() * self.sup_bound)
    }

    /// `αu + βv`.
    pub fn combine(alpha: f64, u: &Self, beta: f64, v: &Self) -> Self {
        let (f, g) = (u.f.clone(), v.f.clone());
        Self::new(move |z| alpha * f(z) + beta * g(z), alpha.abs() * u.sup_bound + beta.abs() * v.sup_bound)
    }

    pub fn shifted(&self, c: f64) -> Self {
        let f = self.f.clone();
        Self::new(move |z| f(z) + c, self.sup_bound + c.abs())
    }

    /// Largest `|a(γz) − a(z)|` over the given translates and points.
    pub fn invariance_defect(&self, elements: &[crate::MobiusElement], points: &[Point]) -> f64 {
        points
            .iter()
            .flat_map(|&z| elements.iter().map(move |g| (g.apply(z), z)))
            .map(|(gz, z)| (self.eval(gz) - self.eval(z)).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|a(z)|` over the points divided by `sup_bound` (at most 1 when the bound holds).
    pub fn bound_ratio(&self, points: &[Point]) -> f64 {
        let m = points.iter().map(|&z| self.eval(z).abs()).fold(0.0, f64::max);
        if self.sup_bound > 0.0 {
            m / self.sup_bound
        } else if m == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `a − mean`, with the mean estimated by Monte Carlo on the quotient.
    pub fn centered<Q: Quotient>(&self, q: &Q, n: usize, seed: u64) -> (Self, MeanErr) {
        let vals = mc_map(n, seed, 0x6d65_616e, |rng, _| self.eval(q.sample(rng)));
        let m = MeanErr::of(&vals);
        (self.shifted(-m.mean).mean_zero(), m)
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_mean(m: MeanErr, scale: f64) -> Self {
        Self { value: m.mean * scale, stderr: m.stderr * scale.abs() }
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return invalid("propagation time must be positive");
    }
    Ok(())
}

/// `P_t u(z) = (cosh t)^{-1/2} ∫_{B(z,t)} u dμ` by uniform sampling of the disc.
pub fn apply_pt(u: &Observable, z: Point, t: f64, n: usize, seed: u64) -> Result<Estimate> {
    check_t(t)?;
    if n == 0 {
        return invalid("need at least one sample");
    }
    let vals = mc_map(n, seed, 0x7074_7570, |rng, _| u.eval(sample_in_ball(rng, z, t)));
    Ok(Estimate::from_mean(MeanErr::of(&vals), ball_volume(t) / t.cosh().sqrt()))
}

/// `P_t u(z)` by Gauss–Legendre in the radius (`n_r` nodes on each of `panels` panels)
/// and the trapezoid rule with `n_theta` angles.
pub fn apply_pt_quadrature(u: &Observable, z: Point, t: f64, n_r: usize, panels: usize, n_theta: usize) -> Result<f64> {
    check_t(t)?;
    let gl = GaussLegendre::cached(n_r.max(2));
    let n_theta = n_theta.max(4);
    let ring = |r: f64| {
        (0..n_theta)
            .map(|j| u.eval(polar_from(z, TAU * j as f64 / n_theta as f64, r)))
            .sum::<f64>()
            * TAU
            / n_theta as f64
    };
    Ok(gl.composite(|r: f64| ring(r) * r.sinh(), 0.0, t, panels.max(1)) / t.cosh().sqrt())
}

/// `ρ` with `cosh ρ = cosh t / cosh(r/2)`: distance from the midpoint of the centres to
/// the corners of the lens `B(z₁,t) ∩ B(z₂,t)`, `d(z₁,z₂) = r`.
pub fn pythagoras_radius(t: f64, r: f64) -> f64 {
    (t.cosh() / (0.5 * r).cosh()).max(1.0).acosh()
}

/// Distance from the midpoint to the lens boundary along the ray at angle `phi` from the
/// axis through the centres.
pub fn lens_boundary_radius(t: f64, r: f64, phi: f64) -> f64 {
    // law of cosines towards the farther centre: cosh t = A cosh R − B sinh R
    let a = (0.5 * r).cosh();
    let b = (0.5 * r).sinh() * phi.cos().abs();
    let scale = ((a - b) * (a + b)).sqrt();
    let ratio = t.cosh() / scale;
    if ratio < 1.0 {
        return 0.0;
    }
    (ratio.acosh() - (b / a).atanh()).max(0.0)
}

/// Area of the lens by Gauss–Legendre in the boundary angle.
pub fn lens_volume_quadrature(t: f64, r: f64) -> f64 {
    if r >= 2.0 * t {
        return 0.0;
    }
    let gl = GaussLegendre::cached(32);
    // four congruent quarters
    4.0 * gl.composite(|phi: f64| lens_boundary_radius(t, r, phi).cosh() - 1.0, 0.0, 0.5 * PI, 4)
}

/// Node counts for lens integrals in midpoint polar coordinates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LensRule {
    /// Gauss–Legendre angles per quarter of the lens.
    pub angle_nodes: usize,
    /// Gauss–Legendre radii per ray.
    pub radial_nodes: usize,
}

impl Default for LensRule {
    fn default() -> Self {
        Self { angle_nodes: 12, radial_nodes: 12 }
    }
}

/// `∫_{B(z₁,t)∩B(z₂,t)} a dμ` where `mid` is the midpoint frame pointing towards `z₂`
/// and `r = d(z₁, z₂)`.
pub fn lens_integral(a: &Observable, mid: &UnitTangent, r: f64, t: f64, rule: LensRule) -> f64 {
    if r >= 2.0 * t {
        return 0.0;
    }
    let ga = GaussLegendre::cached(rule.angle_nodes.max(2));
    let gr = GaussLegendre::cached(rule.radial_nodes.max(2));
    let mut total = 0.0;
    for q in 0..4 {
        let lo = 0.5 * PI * q as f64;
        for (phi, wa) in ga.mapped(lo, lo + 0.5 * PI) {
            let rmax = lens_boundary_radius(t, r, phi);
            let th = mid.theta + phi;
            let ray: f64 = gr.mapped(0.0, rmax).map(|(rho, w)| w * a.eval(polar_from(mid.base, th, rho)) * rho.sinh()).sum();
            total += wa * ray;
        }
    }
    total
}

/// Kernel estimate of `P_t a P_t` at a pair of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Fraction of proposals that fell in the lens.
    pub acceptance: f64,
    /// Proposals came from the disc about the midpoint instead of the disc about `z`.
    pub midpoint_sampler: bool,
    /// The lens volume is below resolution; the value is reported as zero.
    pub degenerate: bool,
}

/// Lens volumes below this are reported as degenerate.
pub const DEGENERATE_LENS: f64 = 1e-12;

/// `[P_t a P_t](z, w) = (cosh t)^{-1} ∫_{B(z,t)∩B(w,t)} a dμ`, exactly zero when `d(z,w) > 2t`.
///
/// Proposals are drawn from `B(z, t)`; when a pilot run accepts fewer than 1% of them the
/// sampler switches to the disc of radius `ρ` (Pythagoras) about the midpoint.
pub fn kernel_pt_a_pt(a: &Observable, z: Point, w: Point, t: f64, n: usize, seed: u64) -> Result<KernelEstimate> {
    check_t(t)?;
    if n == 0 {
        return invalid("need at least one sample");
    }
    let d = hyp_dist(z, w);
    let zero = |deg| KernelEstimate { value: 0.0, stderr: 0.0, acceptance: 0.0, midpoint_sampler: false, degenerate: deg };
    if d > 2.0 * t {
        return Ok(zero(false));
    }
    if lens_volume_quadrature(t, d) < DEGENERATE_LENS {
        return Ok(zero(true));
    }
    let ct = t.cosh();
    let in_lens = |p: Point| hyp_dist(p, z) <= t && hyp_dist(p, w) <= t;
    let pilot = mc_map(1000, seed, 0x706c_6f74, |rng, _| in_lens(sample_in_ball(rng, z, t)));
    let pilot_rate = pilot.iter().filter(|&&b| b).count() as f64 / pilot.len() as f64;
    let (centre, radius, midpoint_sampler) = if pilot_rate < 0.01 {
        let (m, _) = segment_midframe(z, w);
        (m.base, pythagoras_radius(t, d) + 1e-12, true)
    } else {
        (z, t, false)
    };
    let hits = mc_map(n, seed, 0x6c65_6e73, |rng, _| {
        let p = sample_in_ball(rng, centre, radius);
        if in_lens(p) {
            (a.eval(p), true)
        } else {
            (0.0, false)
        }
    });
    let acc = hits.iter().filter(|h| h.1).count();
    let vals: Vec<f64> = hits.iter().map(|h| h.0).collect();
    let est = Estimate::from_mean(MeanErr::of(&vals), ball_volume(radius) / ct);
    let acceptance = acc as f64 / n as f64;
    if acc == 0 {
        return Ok(KernelEstimate { acceptance, midpoint_sampler, ..zero(true) });
    }
    Ok(KernelEstimate { value: est.value, stderr: est.stderr, acceptance, midpoint_sampler, degenerate: false })
}

/// Monte Carlo lens volume with its quadrature reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LensVolume {
    pub t: f64,
    pub r: f64,
    pub volume: f64,
    pub stderr: f64,
    /// Deterministic area from the boundary-radius quadrature.
    pub reference: f64,
    /// Pythagoras radius `ρ` of the enclosing disc about the midpoint.
    pub rho: f64,
    pub acceptance: f64,
}

/// Constant `K` in `|lens| ≤ K·min(|B(t − r/2)|, |B(ρ)|)`, valid once `t − r/2 ≥ 1`.
///
/// The lens lies in `B(m, ρ)` and `cosh ρ ≤ 2 cosh(t − r/2)`, so the ratio of the two discs
/// is at most `(2 cosh 1 − 1)/(cosh 1 − 1) < 4`. Closer to tangency the lens is much fatter
/// than `B(t − r/2)` and only the `ρ` disc bounds it.
pub const LENS_BOUND_K: f64 = 4.0;

pub fn lens_bound(t: f64, r: f64) -> f64 {
    let outer = LENS_BOUND_K * ball_volume(pythagoras_radius(t, r));
    let x = t - 0.5 * r;
    if x >= 1.0 {
        outer.min(LENS_BOUND_K * ball_volume(x))
    } else {
        outer
    }
}

/// Area of `B(z₁,t) ∩ B(z₂,t)` with `d(z₁,z₂) = r`, sampled in the Pythagoras disc about
/// the midpoint.
pub fn intersection_volume(t: f64, r: f64, n: usize, seed: u64) -> Result<LensVolume> {
    check_t(t)?;
    if !(0.0..=2.0 * t).contains(&r) {
        return invalid("lens needs 0 <= r <= 2t");
    }
    if n == 0 {
        return invalid("need at least one sample");
    }
    let rho = pythagoras_radius(t, r);
    let m = Point::i();
    let z1 = polar_from(m, PI, 0.5 * r);
    let z2 = polar_from(m, 0.0, 0.5 * r);
    let hits = mc_map(n, seed, 0x766f_6c75, |rng, _| {
        let p = sample_in_ball(rng, m, rho);
        f64::from(u8::from(hyp_dist(p, z1) <= t && hyp_dist(p, z2) <= t))
    });
    let me = MeanErr::of(&hits);
    let vol = ball_volume(rho);
    Ok(LensVolume {
        t,
        r,
        volume: me.mean * vol,
        stderr: me.stderr * vol,
        reference: lens_volume_quadrature(t, r),
        rho,
        acceptance: me.mean,
    })
}

/// Least-squares slope of `ln |lens|` against `t − r/2`.
pub fn lens_growth_slope(ts: &[f64], r: f64, n: usize, seed: u64) -> Result<(f64, Vec<LensVolume>)> {
    let vols: Vec<LensVolume> = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| intersection_volume(t, r, n, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = ts.iter().map(|t| t - 0.5 * r).collect();
    let ys: Vec<f64> = vols.iter().map(|v| v.volume.ln()).collect();
    Ok((ls_slope(&xs, &ys), vols))
}

pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Geometric check of `cosh ρ = cosh t / cosh(r/2)`: largest deviation of the distances
/// from the constructed lens corner to both centres from `t`.
pub fn pythagoras_defect(t: f64, r: f64, base: &UnitTangent) -> f64 {
    let rho = pythagoras_radius(t, r);
    let z1 = geodesic_flow(base, -0.5 * r).base;
    let z2 = geodesic_flow(base, 0.5 * r).base;
    [0.5 * PI, 1.5 * PI]
        .iter()
        .map(|&phi| {
            let c = polar_from(base.base, base.theta + phi, rho);
            (hyp_dist(c, z1) - t).abs().max((hyp_dist(c, z2) - t).abs())
        })
        .fold(0.0, f64::max)
}

/// Both sides of the midpoint change of variables with their error bars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChangeOfVariables {
    pub lhs: Estimate,
    pub rhs: Estimate,
}

impl ChangeOfVariables {
    /// `|lhs − rhs|` in units of the combined standard error.
    pub fn sigma(&self) -> f64 {
        let s = (self.lhs.stderr.powi(2) + self.rhs.stderr.powi(2)).sqrt();
        let d = (self.lhs.value - self.rhs.value).abs();
        if s > 0.0 {
            d / s
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Monte Carlo estimates of
/// `∬_{z∈D, d(z,z')<R} f(m(z,z'), θ(z,z'), d(z,z'))` and `∫_0^R sinh r ∫_D ∫_{S¹} f(z,θ,r)`.
///
/// `f` receives the midpoint frame and the separation; it must be invariant under the group.
pub fn midpoint_change_of_var_check<Q, F>(f: F, big_r: f64, q: &Q, n: usize, seed: u64) -> Result<ChangeOfVariables>
where
    Q: Quotient,
    F: Fn(&UnitTangent, f64) -> f64 + Sync,
{
    if !(big_r > 0.0) || n == 0 {
        return invalid("change of variables needs R > 0 and n >= 1");
    }
    let scale = q.volume() * ball_volume(big_r);
    let lhs = mc_map(n, seed, 0x6c68_7300, |rng, _| {
        let z = q.sample(rng);
        let zp = sample_in_ball(rng, z, big_r);
        let (m, r) = segment_midframe(z, zp);
        f(&m, r)
    });
    let rhs = mc_map(n, seed, 0x7268_7300, |rng, _| {
        let r = sample_radius(rng, big_r);
        let v = q.sample_tangent(rng);
        f(&v, r)
    });
    Ok(ChangeOfVariables {
        lhs: Estimate::from_mean(MeanErr::of(&lhs), scale),
        rhs: Estimate::from_mean(MeanErr::of(&rhs), scale),
    })
}

/// Random group-invariant test function of a frame and a separation: a trigonometric
/// polynomial in the reduced frame `(x, log y, θ)`, damped in `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameTestFunction {
    pub coefficients: [f64; 5],
    pub phase: f64,
    pub decay: f64,
}

impl FrameTestFunction {
    pub fn random(seed: u64) -> Self {
        let mut rng = crate::rng::stream_rng(seed, 0x6672_616d);
        let mut c = [0.0; 5];
        c.iter_mut().for_each(|v| *v = 2.0 * rng.gen::<f64>() - 1.0);
        Self { coefficients: c, phase: TAU * rng.gen::<f64>(), decay: 0.2 + rng.gen::<f64>() }
    }

    pub fn eval<Q: Quotient>(&self, q: &Q, v: &UnitTangent, r: f64) -> f64 {
        let w = q.reduce_tangent(v);
        let (x, ly, th) = (w.base.x, w.base.y.ln(), w.theta);
        let c = &self.coefficients;
        (c[0] + c[1] * th.cos() + c[2] * (2.0 * th).sin() + c[3] * (3.0 * x + self.phase).cos() + c[4] * (2.0 * ly).sin())
            * (-self.decay * r).exp()
    }
}

/// Options for the Hilbert–Schmidt estimators.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HsOptions {
    /// Gauss–Legendre nodes of the time average.
    pub t_nodes: usize,
    pub lens: LensRule,
    pub n: usize,
    pub seed: u64,
}

impl Default for HsOptions {
    fn default() -> Self {
        Self { t_nodes: 64, lens: LensRule::default(), n: 4000, seed: 0 }
    }
}

/// `(1/T) ∫_0^T [P_t a P_t](z₁, z₂) dt` for the pair whose midpoint frame is `mid` and
/// separation `r`; the integrand vanishes for `t < r/2` and the lower limit is resolved by
/// `t = r/2 + w²`.
pub fn time_averaged_kernel(a: &Observable, mid: &UnitTangent, r: f64, big_t: f64, opts: &HsOptions) -> f64 {
    if r >= 2.0 * big_t {
        return 0.0;
    }
    let gl = GaussLegendre::cached(opts.t_nodes.max(2));
    let w_end = (big_t - 0.5 * r).sqrt();
    gl.mapped(0.0, w_end)
        .map(|(w, wt)| {
            let t = 0.5 * r + w * w;
            wt * 2.0 * w * lens_integral(a, mid, r, t, opts.lens) / t.cosh()
        })
        .sum::<f64>()
        / big_t
}

/// `sup |(1/T)∫_0^T [P_t a P_t] dt| ≤ ‖a‖_∞ (1/T)∫_0^T |B(t)| / cosh t dt`.
pub fn kernel_sup_bound(a: &Observable, big_t: f64) -> f64 {
    let gl = GaussLegendre::cached(32);
    a.sup_bound * gl.integrate(|t: f64| ball_volume(t) / t.cosh(), 0.0, big_t) / big_t
}

/// Main term and remainder of the injectivity-radius split of the Hilbert–Schmidt norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HsEstimate {
    pub main: f64,
    pub main_stderr: f64,
    pub remainder_bound: f64,
    pub sup_kernel: f64,
}

/// `∫_D ∫_ℍ |K|²` for `K = (1/T)∫_0^T P_t a P_t dt`, sampled through the midpoint change
/// of variables, plus `(e^{2R}/ℓ_min)·Vol(thin)·sup|K|²`.
///
/// `thin_fraction` is the fraction of `D` with injectivity radius below `R`; `R ≥ 2T`.
pub fn hs_norm_estimate<Q: Quotient>(
    q: &Q,
    a: &Observable,
    big_t: f64,
    big_r: f64,
    ell_min: f64,
    thin_fraction: f64,
    opts: &HsOptions,
) -> Result<HsEstimate> {
    check_t(big_t)?;
    if !(big_r >= 2.0 * big_t) || !(ell_min > 0.0) || !(0.0..=1.0).contains(&thin_fraction) {
        return invalid("HS split needs R >= 2T, ℓ_min > 0 and a thin fraction in [0, 1]");
    }
    let support = 2.0 * big_t;
    let vals = mc_map(opts.n.max(1), opts.seed, 0x6873_6d61, |rng, _| {
        let r = sample_radius(rng, support);
        let v = q.sample_tangent(rng);
        time_averaged_kernel(a, &v, r, big_t, opts).powi(2)
    });
    let me = MeanErr::of(&vals);
    let scale = q.volume() * ball_volume(support);
    let sup_kernel = kernel_sup_bound(a, big_t);
    let remainder_bound = (2.0 * big_r).exp() / ell_min * thin_fraction * q.volume() * sup_kernel * sup_kernel;
    Ok(HsEstimate { main: me.mean * scale, main_stderr: me.stderr * scale, remainder_bound, sup_kernel })
}

/// Direct estimate of `∫_D ∫_D |Σ_γ K(z, γw)|²`: `z ∈ D`, `w'` uniform in `B(z, 2T)`,
/// each orbit weighted by one over the number of its points in that disc.
pub fn hs_norm_brute_force<Q: Quotient>(q: &Q, a: &Observable, big_t: f64, opts: &HsOptions) -> Result<Estimate> {
    check_t(big_t)?;
    let support = 2.0 * big_t;
    let vals = mc_map(opts.n.max(1), opts.seed, 0x6873_6266, |rng, _| -> Result<f64> {
        let z = q.sample(rng);
        let wp = sample_in_ball(rng, z, support);
        // γ·w' close to z is the same as w' close to γ⁻¹·z
        let mut images = vec![wp];
        for (g, _) in q.translates(wp, 2.0 * support)? {
            let p = g.apply(wp);
            if hyp_dist(z, p) < support {
                images.push(p);
            }
        }
        let sum: f64 = images
            .iter()
            .map(|&p| {
                let (m, r) = segment_midframe(z, p);
                time_averaged_kernel(a, &m, r, big_t, opts)
            })
            .sum();
        Ok(sum * sum / images.len() as f64)
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_mean(MeanErr::of(&vals), q.volume() * ball_volume(support)))
}

/// One row of the ergodic-average table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub t: f64,
    /// Haar measure of `F_t(r)`: lens area times `2π`.
    pub set_volume: f64,
    /// `L²(D × S¹)` norm of the lens averages of `a`, normalized by `Vol(D)·2π`.
    pub deviation: f64,
    pub stderr: f64,
}

/// Result of [`ergodic_average_decay`].
#[derive(Debug, Clone, Serialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Mean of `a` subtracted before averaging, and its standard error.
    pub subtracted_mean: f64,
    pub mean_stderr: f64,
    /// Least-squares `θ̂` in `deviation ∝ |F_t|^{−θ̂}`.
    pub exponent: f64,
    /// Whether deviations are nonincreasing up to twice their standard errors.
    pub nonincreasing: bool,
}

/// Root mean square over `(z, θ) ∈ D × S¹` of the average of `a − mean(a)` over the lens
/// whose centres are `φ_{±r/2}(z, θ)`, for each `t`.
pub fn ergodic_average_decay<Q: Quotient>(
    q: &Q,
    a: &Observable,
    t_list: &[f64],
    r: f64,
    n: usize,
    seed: u64,
    rule: LensRule,
) -> Result<DecayTable> {
    if t_list.is_empty() || !(r >= 0.0) || t_list.iter().any(|&t| !(2.0 * t > r)) {
        return invalid("ergodic averages need r < 2·min(t)");
    }
    let (centered, mean) = a.centered(q, n.max(1000), seed ^ 0x5eed);
    let mut rows = Vec::with_capacity(t_list.len());
    for (i, &t) in t_list.iter().enumerate() {
        let vol = lens_volume_quadrature(t, r);
        let sq = mc_map(n.max(1), seed.wrapping_add(i as u64), 0x6572_676f, |rng, _| {
            let v = q.sample_tangent(rng);
            (lens_integral(&centered, &v, r, t, rule) / vol).powi(2)
        });
        let me = MeanErr::of(&sq);
        let dev = me.mean.max(0.0).sqrt();
        // delta method for the square root
        let err = if dev > 0.0 { me.stderr / (2.0 * dev) } else { me.stderr.sqrt() };
        rows.push(DecayRow { t, set_volume: TAU * vol, deviation: dev, stderr: err });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.set_volume.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.deviation.max(f64::MIN_POSITIVE).ln()).collect();
    let exponent = if rows.len() >= 2 { -ls_slope(&xs, &ys) } else { 0.0 };
    let nonincreasing = is_nonincreasing(&rows);
    Ok(DecayTable { rows, subtracted_mean: mean.mean, mean_stderr: mean.stderr, exponent, nonincreasing })
}

fn is_nonincreasing(rows: &[DecayRow]) -> bool {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.set_volume.total_cmp(&b.set_volume));
    sorted.windows(2).all(|w| w[1].deviation <= w[0].deviation + 2.0 * (w[0].stderr + w[1].stderr))
}

/// `⟨P_t u, v⟩` and `⟨u, P_t v⟩` over the plane, with `u, v` supported in `B(centre, support)`.
pub fn self_adjointness_check(
    u: &Observable,
    v: &Observable,
    centre: Point,
    support: f64,
    t: f64,
    rule: (usize, usize),
    n: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    check_t(t)?;
    let big = support + t;
    let scale = ball_volume(big);
    let side = |f: &Observable, g: &Observable, tag: u32| {
        let vals = mc_map(n, seed, tag, |rng, _| {
            let z = sample_in_ball(rng, centre, big);
            let gz = g.eval(z);
            if gz == 0.0 {
                return 0.0;
            }
            gz * apply_pt_quadrature(f, z, t, rule.0, 2, rule.1).unwrap_or(0.0)
        });
        Estimate::from_mean(MeanErr::of(&vals), scale)
    };
    Ok((side(u, v, 0x7361_0001), side(v, u, 0x7361_0002)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::{cyclic_group, CylinderWindow};
    use crate::geom::{cosh_dist, MobiusElement as Mobius};
    use crate::rng::stream_rng;
    use crate::selberg::spherical_oracle;
    use crate::spectral_action::h_t_closed;
    use proptest::prelude::*;

    fn bump(c: Point, width: f64) -> Observable {
        Observable::new(
            move |z| {
                let d = hyp_dist(z, c);
                if d < width {
                    (1.0 - (d / width).powi(2)).powi(3)
                } else {
                    0.0
                }
            },
            1.0,
        )
    }

    #[test]
    fn constant_observable_gives_ball_volume() {
        let z = Point::new(0.3, 2.0);
        for t in [0.5, 1.0, 2.0] {
            let e = apply_pt(&Observable::constant(1.0), z, t, 1000, 1).unwrap();
            let want = ball_volume(t) / t.cosh().sqrt();
            assert!((e.value - want).abs() < 1e-12 * want && e.stderr < 1e-12);
            let q = apply_pt_quadrature(&Observable::constant(1.0), z, t, 16, 2, 16).unwrap();
            assert!((q - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn spherical_function_is_an_eigenfunction() {
        let origin = Point::i();
        for t in [1.0, 2.0] {
            for s in [0.5, 1.0, 2.0] {
                let o = Arc::new(spherical_oracle(s, 10.0).unwrap());
                let phi = {
                    let o = o.clone();
                    Observable::new(move |z| o.eval(hyp_dist(z, origin)), 1.0)
                };
                let got = apply_pt_quadrature(&phi, origin, t, 24, 4, 8).unwrap();
                let h = h_t_closed(t, s).unwrap();
                assert!((got - h).abs() <= 1e-3 * h.abs().max(1e-2), "t={t} s={s}: {got} {h}");
                // same at a point off the origin
                let z = Point::new(0.4, 1.3);
                let got = apply_pt_quadrature(&phi, z, t, 24, 4, 128).unwrap();
                let want = h * o.eval(hyp_dist(z, origin));
                assert!((got - want).abs() <= 1e-3 * want.abs().max(1e-2), "t={t} s={s}: {got} {want}");
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        let u = bump(Point::new(0.2, 1.1), 1.5);
        let z = Point::i();
        let mc = apply_pt(&u, z, 1.2, 200_000, 3).unwrap();
        let qd = apply_pt_quadrature(&u, z, 1.2, 24, 4, 128).unwrap();
        assert!((mc.value - qd).abs() < 4.0 * mc.stderr, "{mc:?} {qd}");
    }

    #[test]
    fn linear_at_shared_seed() {
        let u = bump(Point::new(0.2, 1.1), 1.5);
        let v = bump(Point::new(-0.4, 0.8), 1.0);
        let z = Point::i();
        let w = Observable::combine(2.0, &u, -3.0, &v);
        let a = apply_pt(&u, z, 1.0, 5000, 9).unwrap().value;
        let b = apply_pt(&v, z, 1.0, 5000, 9).unwrap().value;
        let c = apply_pt(&w, z, 1.0, 5000, 9).unwrap().value;
        assert!((c - (2.0 * a - 3.0 * b)).abs() < 1e-10);
    }

    #[test]
    fn propagator_is_symmetric() {
        let u = bump(Point::new(0.3, 1.2), 1.0);
        let v = bump(Point::new(-0.2, 0.9), 1.2);
        let (a, b) = self_adjointness_check(&u, &v, Point::i(), 2.5, 0.8, (8, 32), 20_000, 4).unwrap();
        let s = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < 4.0 * s, "{a:?} {b:?}");
    }

    #[test]
    fn kernel_vanishes_beyond_twice_t() {
        let a = Observable::constant(1.0);
        let z = Point::i();
        let w = polar_from(z, 1.0, 2.1);
        let k = kernel_pt_a_pt(&a, z, w, 1.0, 1000, 1).unwrap();
        assert_eq!(k.value, 0.0);
        assert!(!k.degenerate);
    }

    #[test]
    fn kernel_on_the_diagonal_is_ball_volume() {
        let a = Observable::constant(1.0);
        let z = Point::new(1.0, 0.5);
        for t in [0.5, 1.5] {
            let k = kernel_pt_a_pt(&a, z, z, t, 2000, 1).unwrap();
            let want = ball_volume(t) / t.cosh();
            assert!((k.value - want).abs() < 1e-12 * want && k.acceptance == 1.0);
        }
    }

    #[test]
    fn kernel_is_symmetric_and_matches_lens_quadrature() {
        let a = bump(Point::new(0.1, 1.3), 2.0);
        let z = Point::i();
        let w = polar_from(z, 0.7, 1.1);
        let t = 1.0;
        let k1 = kernel_pt_a_pt(&a, z, w, t, 100_000, 5).unwrap();
        let k2 = kernel_pt_a_pt(&a, w, z, t, 100_000, 6).unwrap();
        let s = (k1.stderr.powi(2) + k2.stderr.powi(2)).sqrt();
        assert!((k1.value - k2.value).abs() < 4.0 * s);
        let (m, r) = segment_midframe(z, w);
        let quad = lens_integral(&a, &m, r, t, LensRule { angle_nodes: 24, radial_nodes: 24 }) / t.cosh();
        assert!((k1.value - quad).abs() < 4.0 * k1.stderr, "{k1:?} {quad}");
    }

    #[test]
    fn thin_lens_switches_sampler() {
        let a = Observable::constant(1.0);
        let z = Point::i();
        let t = 2.0;
        let w = polar_from(z, 0.3, 3.9);
        let k = kernel_pt_a_pt(&a, z, w, t, 50_000, 2).unwrap();
        assert!(k.midpoint_sampler);
        let want = lens_volume_quadrature(t, 3.9) / t.cosh();
        assert!((k.value - want).abs() < 4.0 * k.stderr, "{k:?} {want}");
        let tangent = polar_from(z, 0.3, 4.0);
        assert!(kernel_pt_a_pt(&a, z, tangent, t, 1000, 2).unwrap().degenerate);
    }

    #[test]
    fn lens_quadrature_against_monte_carlo() {
        for (t, r) in [(1.0, 0.0), (1.0, 1.0), (2.5, 2.0), (3.0, 5.5)] {
            let v = intersection_volume(t, r, 200_000, 7).unwrap();
            assert!((v.volume - v.reference).abs() < 4.0 * v.stderr + 1e-9 * v.reference, "{v:?}");
        }
        let v0 = lens_volume_quadrature(1.3, 0.0);
        assert!((v0 - ball_volume(1.3)).abs() < 1e-10);
        let v = intersection_volume(1.0, 2.0, 10_000, 1).unwrap();
        assert!(v.volume < 1e-6 && v.reference == 0.0);
    }

    #[test]
    fn lens_sits_between_its_discs() {
        for (t, r) in [(1.0, 0.5), (2.0, 3.0), (4.0, 2.0)] {
            let vol = lens_volume_quadrature(t, r);
            assert!(vol >= ball_volume(t - 0.5 * r) - 1e-9);
            assert!(vol <= ball_volume(pythagoras_radius(t, r)) + 1e-9);
            assert!(vol <= lens_bound(t, r) + 1e-9);
        }
    }

    #[test]
    fn lens_growth_is_exponential_in_t_minus_half_r() {
        let ts = [3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0];
        let (slope, _) = lens_growth_slope(&ts, 2.0, 20_000, 11).unwrap();
        assert!((0.9..=1.1).contains(&slope), "{slope}");
    }

    #[test]
    fn pythagoras_corners() {
        let base = UnitTangent::new(Point::new(0.7, 2.0), 1.1);
        for (t, r) in [(1.0, 1.0), (3.0, 2.0), (5.0, 9.0)] {
            assert!(pythagoras_defect(t, r, &base) < 1e-9);
        }
    }

    #[test]
    fn change_of_variables_on_the_cylinder() {
        // angles are invariant under the diagonal group, so f may depend on θ directly
        let cyl = CylinderWindow::new(2.0, 1.0).unwrap();
        let lhs_rhs = midpoint_change_of_var_check(|_, _| 1.0, 1.0, &cyl, 20_000, 3).unwrap();
        assert_eq!(lhs_rhs.lhs.value, lhs_rhs.rhs.value);
    }

    #[test]
    fn change_of_variables_on_the_octagon() {
        let q = crate::fuchsian::DirichletDomain::with_reach(&crate::fuchsian::octagon_group(), 2.0).unwrap();
        let fs: [Box<dyn Fn(&UnitTangent, f64) -> f64 + Sync>; 3] = [
            Box::new(|_, _| 1.0),
            Box::new(|v, r| q.reduce_tangent(v).theta.cos() * (-r).exp()),
            Box::new(|v, r| {
                let w = q.reduce_tangent(v);
                let thin = q.translates(w.base, 1.6).unwrap().iter().any(|e| e.1 < 1.6);
                f64::from(u8::from(thin)) * (-r).exp() + (w.base.x * 3.0).sin() * r
            }),
        ];
        for (i, f) in fs.iter().enumerate() {
            let c = midpoint_change_of_var_check(f, 1.5, &q, 20_000, 40 + i as u64).unwrap();
            assert!(c.sigma() < 3.0, "f{i}: {c:?}");
        }
    }

    #[test]
    fn hs_of_zero_observable_vanishes() {
        let cyl = CylinderWindow::new(2.0, 1.0).unwrap();
        let opts = HsOptions { n: 50, t_nodes: 8, ..HsOptions::default() };
        let e = hs_norm_estimate(&cyl, &Observable::zero(), 0.5, 1.0, 2.0, 0.3, &opts).unwrap();
        assert_eq!((e.main, e.remainder_bound), (0.0, 0.0));
    }

    #[test]
    fn hs_main_is_quadratic() {
        let cyl = CylinderWindow::new(2.0, 1.0).unwrap();
        let opts = HsOptions { n: 200, t_nodes: 12, lens: LensRule { angle_nodes: 6, radial_nodes: 6 }, seed: 3 };
        let a = Observable::new(|z: Point| (CylinderWindow::fermi(z).0 * PI).sin(), 1.0);
        let e1 = hs_norm_estimate(&cyl, &a, 0.6, 1.2, 2.0, 0.0, &opts).unwrap();
        let e3 = hs_norm_estimate(&cyl, &a.scaled(3.0), 0.6, 1.2, 2.0, 0.0, &opts).unwrap();
        assert!((e3.main - 9.0 * e1.main).abs() < 1e-10 * e3.main.abs().max(1e-300));
    }

    #[test]
    fn hs_main_matches_brute_force_for_constant_observable() {
        // with T = 0.5 no translate of the L = 3 cylinder falls within 2T
        let cyl = CylinderWindow::new(3.0, 0.8).unwrap();
        let a = Observable::constant(1.0);
        let opts = HsOptions { n: 4000, t_nodes: 16, lens: LensRule { angle_nodes: 6, radial_nodes: 8 }, seed: 8 };
        let main = hs_norm_estimate(&cyl, &a, 0.5, 1.0, 3.0, 0.0, &opts).unwrap();
        let brute = hs_norm_brute_force(&cyl, &a, 0.5, &HsOptions { seed: 9, ..opts }).unwrap();
        let s = (main.main_stderr.powi(2) + brute.stderr.powi(2)).sqrt();
        assert!((main.main - brute.value).abs() < 3.0 * s, "{main:?} {brute:?}");
    }

    #[test]
    fn hs_split_dominates_brute_force() {
        let group = cyclic_group(1.0).unwrap();
        let cyl = CylinderWindow::from_spec(&group, 0.6).unwrap();
        let a = Observable::constant(1.0);
        let big_t = 0.75;
        let big_r = 2.0 * big_t;
        let opts = HsOptions { n: 3000, t_nodes: 16, lens: LensRule { angle_nodes: 6, radial_nodes: 8 }, seed: 12 };
        let thin = crate::fuchsian::thin_part_fraction_in(&cyl, big_r, 4000, 5).unwrap();
        let split = hs_norm_estimate(&cyl, &a, big_t, big_r, cyl.length, thin.fraction, &opts).unwrap();
        let brute = hs_norm_brute_force(&cyl, &a, big_t, &HsOptions { seed: 13, ..opts }).unwrap();
        assert!(brute.value > split.main, "translates must add mass");
        let s = (split.main_stderr.powi(2) + brute.stderr.powi(2)).sqrt();
        assert!(split.main + split.remainder_bound >= brute.value - 3.0 * s, "{split:?} {brute:?}");
    }

    #[test]
    fn ergodic_averages_decay_on_the_cylinder() {
        let cyl = CylinderWindow::new(2.0, 1.0).unwrap();
        // sign of the cell along the axis
        let a = Observable::new(|z: Point| (PI * CylinderWindow::fermi(z).0).sin().signum(), 1.0);
        let rule = LensRule { angle_nodes: 16, radial_nodes: 16 };
        let table = ergodic_average_decay(&cyl, &a, &[1.0, 1.5, 2.0, 2.5, 3.0], 0.5, 400, 21, rule).unwrap();
        assert!(table.rows.iter().all(|r| r.deviation >= 0.0));
        assert!(table.exponent > 0.0, "{table:?}");
        assert!(table.rows.windows(2).all(|w| w[1].set_volume > w[0].set_volume));
        let flat = ergodic_average_decay(&cyl, &Observable::constant(2.5), &[1.0, 2.0], 0.5, 200, 1, LensRule::default()).unwrap();
        assert!(flat.rows.iter().all(|r| r.deviation < 1e-12));
    }

    #[test]
    fn monotonicity_flag_uses_error_bars() {
        let row = |v, d, e| DecayRow { t: v, set_volume: v, deviation: d, stderr: e };
        assert!(is_nonincreasing(&[row(1.0, 0.5, 0.01), row(2.0, 0.51, 0.01)]));
        assert!(!is_nonincreasing(&[row(1.0, 0.5, 0.01), row(2.0, 0.6, 0.01)]));
    }

    #[test]
    fn invariance_defect_of_periodic_observable() {
        let a = Observable::new(|z: Point| (2.0 * PI * CylinderWindow::fermi(z).0 / 1.5).cos(), 1.0);
        let g = [Mobius::diagonal(1.5), Mobius::diagonal(-3.0)];
        let mut rng = stream_rng(4, 0);
        let pts: Vec<Point> = (0..50).map(|_| sample_in_ball(&mut rng, Point::i(), 2.0)).collect();
        assert!(a.invariance_defect(&g, &pts) < 1e-9);
        assert!(a.bound_ratio(&pts) <= 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn lens_boundary_lies_on_a_circle(t in 0.2..5.0f64, f in 0.0..0.999f64, phi in 0.0..6.28f64) {
            let r = 2.0 * t * f;
            let base = UnitTangent::new(Point::i(), 0.0);
            let z1 = geodesic_flow(&base, -0.5 * r).base;
            let z2 = geodesic_flow(&base, 0.5 * r).base;
            let rho = lens_boundary_radius(t, r, phi);
            let p = polar_from(base.base, phi, rho);
            let d = hyp_dist(p, z1).max(hyp_dist(p, z2));
            prop_assert!((d - t).abs() < 1e-8 * t.cosh());
        }

        #[test]
        fn kernel_support_is_exact(x in -2.0..2.0f64, y in 0.2..3.0f64, t in 0.2..2.0f64) {
            let z = Point::i();
            let w = Point::new(x, y);
            let k = kernel_pt_a_pt(&Observable::constant(1.0), z, w, t, 64, 1).unwrap();
            if cosh_dist(z, w) > (2.0 * t).cosh() {
                prop_assert_eq!(k.value, 0.0);
            }
        }
    }
}
