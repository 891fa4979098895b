//! The Selberg transform pair (Abel then Fourier), its windowed inverse, the heat
//! kernel and the radial eigenfunctions used to test them.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::{Arc, Mutex, RwLock};

use once_cell::sync::Lazy;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, HypError, Result};
use crate::interp::ChebTable;
use crate::quad::{Adaptive, GaussLegendre};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Smoothness {
    Smooth,
    Jump,
}

/// Radial kernel `ρ ↦ k(ρ)` vanishing beyond `support`.
#[derive(Clone)]
pub struct RadialKernel {
    f: RealFn,
    pub support: f64,
    pub smoothness: Smoothness,
    /// Radii strictly inside the support where `k` jumps.
    pub jumps: Vec<f64>,
    /// Length over which `k` varies appreciably; sets the forward quadrature resolution.
    pub scale: f64,
}

impl fmt::Debug for RadialKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialKernel")
            .field("support", &self.support)
            .field("smoothness", &self.smoothness)
            .field("jumps", &self.jumps)
            .field("scale", &self.scale)
            .finish()
    }
}

impl RadialKernel {
    pub fn new<F>(f: F, support: f64, smoothness: Smoothness, jumps: Vec<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(support > 0.0 && support.is_finite()) {
            return invalid("kernel support must be positive and finite");
        }
        let mut jumps: Vec<f64> = jumps.into_iter().filter(|&j| j > 0.0 && j < support).collect();
        jumps.sort_by(f64::total_cmp);
        Ok(Self { f: Arc::new(f), support, smoothness, jumps, scale: support })
    }

    /// Normalized disc indicator `(cosh t)^{-1/2} 1_{ρ ≤ t}`.
    pub fn disc(t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return invalid("disc radius must be positive");
        }
        let c = t.cosh().sqrt().recip();
        Self::new(move |_| c, t, Smoothness::Jump, vec![])
    }

    /// `exp(−ρ²/(2σ²))`, cut off where it falls below 1e-17.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return invalid("gaussian width must be positive");
        }
        let q = 0.5 / (sigma * sigma);
        Ok(Self::new(move |r| (-q * r * r).exp(), 9.0 * sigma, Smoothness::Smooth, vec![])?.with_scale(sigma))
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, 1.0, Smoothness::Smooth, vec![]).expect("valid support")
    }

    /// Kernel interpolated from `table`, whose features are no narrower than `scale`.
    pub fn from_table(table: ChebTable, support: f64, scale: f64) -> Self {
        let t = Arc::new(table);
        Self { f: Arc::new(move |r| t.eval(r)), support, smoothness: Smoothness::Smooth, jumps: vec![], scale }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale.clamp(f64::MIN_POSITIVE, self.support);
        self
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.f.clone();
        Self { f: Arc::new(move |r| c * f(r)), ..self.clone() }
    }

    pub fn eval(&self, rho: f64) -> f64 {
        let rho = rho.abs();
        if rho > self.support {
            0.0
        } else {
            (self.f)(rho)
        }
    }
}

/// Even (by default) multiplier `s ↦ h(s)`, optionally carrying a closed-form Abel
/// derivative `g′` used by the inverse transform.
#[derive(Clone)]
pub struct SpectralFunction {
    f: RealFn,
    pub even: bool,
    abel_deriv: Option<RealFn>,
}

impl fmt::Debug for SpectralFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralFunction")
            .field("even", &self.even)
            .field("analytic_abel", &self.abel_deriv.is_some())
            .finish()
    }
}

impl SpectralFunction {
    /// Even multiplier: `eval(s)` calls `f(|s|)`.
    pub fn new<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self { f: Arc::new(f), even: true, abel_deriv: None }
    }

    /// Multiplier evaluated as given at negative arguments.
    pub fn general<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self { f: Arc::new(f), even: false, abel_deriv: None }
    }

    /// `e^{−t(1/4 + s²)}`, with `g(u) = e^{−t/4} e^{−u²/4t} / √(4πt)`.
    pub fn heat(t: f64) -> Self {
        let c = (-0.25 * t).exp() / (4.0 * PI * t).sqrt();
        Self {
            f: Arc::new(move |s| (-t * (0.25 + s * s)).exp()),
            even: true,
            abel_deriv: Some(Arc::new(move |u| -u / (2.0 * t) * c * (-u * u / (4.0 * t)).exp())),
        }
    }

    /// `e^{−σ²s²/2}`, with `g(u) = e^{−u²/2σ²} / (σ√(2π))`.
    pub fn gaussian(sigma: f64) -> Self {
        let c = 1.0 / (sigma * (2.0 * PI).sqrt());
        let q = 0.5 / (sigma * sigma);
        Self {
            f: Arc::new(move |s| (-0.5 * sigma * sigma * s * s).exp()),
            even: true,
            abel_deriv: Some(Arc::new(move |u| -2.0 * q * u * c * (-q * u * u).exp())),
        }
    }

    pub fn zero() -> Self {
        Self { f: Arc::new(|_| 0.0), even: true, abel_deriv: Some(Arc::new(|_| 0.0)) }
    }

    /// Drops any closed-form Abel data so the inverse goes through the Fourier integral.
    pub fn without_abel(&self) -> Self {
        Self { abel_deriv: None, ..self.clone() }
    }

    pub fn has_analytic_abel(&self) -> bool {
        self.abel_deriv.is_some()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.f.clone();
        let d = self.abel_deriv.clone();
        Self {
            f: Arc::new(move |s| c * f(s)),
            even: self.even,
            abel_deriv: d.map(|d| Arc::new(move |u| c * d(u)) as RealFn),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        if self.even {
            (self.f)(s.abs())
        } else {
            (self.f)(s)
        }
    }
}

fn abel_quad() -> Adaptive {
    Adaptive::new(1e-15, 1e-12).with_budget(4000)
}

/// `√(cosh a − cosh b)` for `a ≥ b ≥ 0`, without cancellation.
fn sqrt_cosh_diff(a: f64, b: f64) -> f64 {
    (2.0 * (0.5 * (a + b)).sinh() * (0.5 * (a - b)).sinh()).max(0.0).sqrt()
}

/// `ρ` with `cosh ρ = cosh u + v²`.
fn shifted_radius(u: f64, v: f64) -> f64 {
    let h = (0.5 * u).sinh();
    2.0 * (h * h + 0.5 * v * v).sqrt().asinh()
}

/// `g(u) = √2 ∫_{|u|}^∞ k(ρ) sinh ρ / √(cosh ρ − cosh u) dρ`.
///
/// Within one unit of `u` the integral runs in `v = √(cosh ρ − cosh u)`, which removes
/// the endpoint singularity; beyond that the integrand is smooth in `ρ`. Both parts split
/// at the kernel's jumps.
pub fn abel_transform(k: &RadialKernel, u: f64) -> Result<f64> {
    let u = u.abs();
    let s = k.support;
    if u >= s {
        return Ok(0.0);
    }
    let q = abel_quad();
    let split = (u + 1.0).min(s);
    let mut pts = vec![0.0];
    pts.extend(k.jumps.iter().filter(|&&j| j > u && j < split).map(|&j| sqrt_cosh_diff(j, u)));
    pts.push(sqrt_cosh_diff(split, u));
    let near = q.integrate_pieces(|v: f64| 2.0 * k.eval(shifted_radius(u, v)), &pts)?.value;
    let far = if split < s {
        let mut pts = vec![split];
        pts.extend(k.jumps.iter().filter(|&&j| j > split && j < s));
        pts.push(s);
        q.integrate_pieces(|r: f64| k.eval(r) * r.sinh() / sqrt_cosh_diff(r, u), &pts)?.value
    } else {
        0.0
    };
    Ok(SQRT_2 * (near + far))
}

const GL_NODES: usize = 20;
const MIN_LEVEL: u32 = 3;
const MAX_LEVEL: u32 = 14;

/// Quadrature data for `h(s) = 2 ∫_0^S cos(su) g(u) du`: on each piece `[a, β]` between
/// jumps the substitution `u = β − w²` absorbs the square-root behaviour of `g` at `β`.
struct Forward {
    k: RadialKernel,
    pieces: Vec<(f64, f64)>,
    levels: Mutex<HashMap<u32, Arc<Vec<(f64, f64)>>>>,
}

impl Forward {
    fn new(k: RadialKernel) -> Self {
        let mut ends = vec![0.0];
        ends.extend(k.jumps.iter().copied());
        ends.push(k.support);
        let pieces = ends.windows(2).map(|w| (w[0], w[1])).collect();
        Self { k, pieces, levels: Mutex::new(HashMap::new()) }
    }

    fn level_for(&self, s: f64) -> u32 {
        let span = self.k.support;
        let need = (s.abs() * span / 6.0).max(span / (2.0 * self.k.scale)).max(1.0);
        (need.log2().ceil() as u32).clamp(MIN_LEVEL, MAX_LEVEL)
    }

    fn compute(&self, level: u32, strict: bool) -> Result<Vec<(f64, f64)>> {
        let gl = GaussLegendre::cached(GL_NODES);
        let span = self.k.support;
        let mut nodes = Vec::new();
        for &(a, b) in &self.pieces {
            let w_end = (b - a).sqrt();
            let panels = (((1u64 << level) as f64 * (b - a) / span).ceil() as usize).max(2);
            let width = w_end / panels as f64;
            for p in 0..panels {
                let lo = p as f64 * width;
                for (x, wt) in gl.nodes.iter().zip(&gl.weights) {
                    let w = lo + 0.5 * width * (x + 1.0);
                    nodes.push((b - w * w, 0.5 * width * wt * 4.0 * w));
                }
            }
        }
        let values: Vec<Result<f64>> = nodes.par_iter().map(|&(u, _)| abel_transform(&self.k, u)).collect();
        let mut out = Vec::with_capacity(nodes.len());
        for ((u, c), g) in nodes.into_iter().zip(values) {
            let g = match g {
                Ok(g) => g,
                Err(HypError::QuadratureFailure { estimate, .. }) if !strict => estimate,
                Err(e) => return Err(e),
            };
            out.push((u, c * g));
        }
        Ok(out)
    }

    fn nodes(&self, level: u32) -> Arc<Vec<(f64, f64)>> {
        if let Some(v) = self.levels.lock().expect("cache lock").get(&level) {
            return v.clone();
        }
        let v = Arc::new(self.compute(level, false).unwrap_or_default());
        self.levels.lock().expect("cache lock").insert(level, v.clone());
        v
    }

    fn eval(&self, s: f64) -> f64 {
        self.nodes(self.level_for(s)).iter().map(|&(u, c)| c * (s * u).cos()).sum()
    }
}

/// `h(s) = ∫ e^{isu} g(u) du` for the Abel transform `g` of `k`.
pub fn selberg_forward(k: &RadialKernel) -> Result<SpectralFunction> {
    let fw = Forward::new(k.clone());
    let base = fw.level_for(0.0);
    let first = Arc::new(fw.compute(base, true)?);
    fw.levels.lock().expect("cache lock").insert(base, first);
    let fw = Arc::new(fw);
    Ok(SpectralFunction::new(move |s| fw.eval(s)))
}

/// Smooth cutoff: 1 on `[0, 1/2]`, 0 from 1 on, `C^∞` in between.
pub fn window(x: f64) -> f64 {
    let x = x.abs();
    if x <= 0.5 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let psi = |y: f64| if y > 0.0 { (-1.0 / y).exp() } else { 0.0 };
    let tau = 2.0 * (x - 0.5);
    let a = psi(1.0 - tau);
    a / (a + psi(tau))
}

#[derive(Debug, Clone, Copy)]
pub struct InverseOptions {
    /// Sup-norm tolerance of the roundtrip check on `|s| ≤ band/2`.
    pub tol: f64,
    /// Largest `u` at which `g` is resolved.
    pub u_max: f64,
    /// Number of roundtrip check points; zero disables the check.
    pub check_points: usize,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self { tol: 1e-5, u_max: 40.0, check_points: 9 }
    }
}

/// Kernel whose Selberg transform is `h` windowed to `|s| < band` (unchanged on
/// `|s| ≤ band/2`).
pub fn selberg_inverse(h: &SpectralFunction, band: f64) -> Result<RadialKernel> {
    selberg_inverse_with(h, band, &InverseOptions::default())
}

pub fn selberg_inverse_with(h: &SpectralFunction, band: f64, opts: &InverseOptions) -> Result<RadialKernel> {
    if !(band > 0.0) || !band.is_finite() {
        return invalid("band limit must be positive");
    }
    if !h.even {
        return invalid("the inverse transform needs an even multiplier");
    }
    // g'(u) = −(1/π) ∫_0^band s h(s) w(s/band) sin(su) ds
    let gprime: RealFn = match &h.abel_deriv {
        Some(d) => d.clone(),
        None => {
            let gl = GaussLegendre::cached(GL_NODES);
            let panels = ((band * opts.u_max / 6.0).ceil() as usize).max(4);
            let width = band / panels as f64;
            let nodes: Vec<(f64, f64)> = (0..panels)
                .flat_map(|p| {
                    let lo = p as f64 * width;
                    gl.nodes.iter().zip(&gl.weights).map(move |(x, w)| (lo + 0.5 * width * (x + 1.0), 0.5 * width * w))
                })
                .collect();
            let coef: Vec<(f64, f64)> = nodes
                .par_iter()
                .map(|&(s, w)| (s, -w * s * h.eval(s) * window(s / band) / PI))
                .collect();
            Arc::new(move |u| coef.iter().map(|&(s, c)| c * (s * u).sin()).sum())
        }
    };

    let coarse: Vec<f64> = (0..=(opts.u_max / 0.05) as usize)
        .into_par_iter()
        .map(|j| gprime(0.05 * j as f64).abs())
        .collect();
    let gmax = coarse.iter().fold(0.0f64, |m, &v| m.max(v));
    if gmax == 0.0 {
        return Ok(RadialKernel::zero());
    }
    let last = coarse.iter().rposition(|&v| v > 1e-14 * gmax).unwrap_or(0);
    let support = (0.05 * last as f64 + 0.5).min(opts.u_max);

    let width = (3.0 / band).min(0.25);
    let q = {
        let gp = gprime.clone();
        ChebTable::build(move |u| gp(u) / u.sinh(), 0.0, support, width, GL_NODES)
    };
    let gl = GaussLegendre::cached(GL_NODES);
    let near_panels = (band / 3.0).ceil() as usize + 2;
    let kfun = |rho: f64| {
        // cosh u = cosh ρ + v² near the lower limit, plain u beyond ρ + 1
        let far_start = (rho + 1.0).min(support);
        let v_end = sqrt_cosh_diff(far_start, rho);
        let near = gl.composite(|v: f64| q.eval(shifted_radius(rho, v)), 0.0, v_end, near_panels);
        let far = if far_start < support {
            let panels = ((support - far_start) / width.min(0.5)).ceil() as usize;
            gl.composite(
                |u: f64| q.eval(u) * u.sinh() / (2.0 * sqrt_cosh_diff(u, rho)),
                far_start,
                support,
                panels.max(1),
            )
        } else {
            0.0
        };
        -SQRT_2 / PI * (near + far)
    };
    let table = ChebTable::build(kfun, 0.0, support, width, GL_NODES);
    let kernel = RadialKernel::from_table(table, support, width);

    if opts.check_points > 0 {
        let fwd = selberg_forward(&kernel)?;
        let n = opts.check_points.max(2);
        let sup_err = (0..n)
            .map(|i| {
                let s = 0.5 * band * i as f64 / (n - 1) as f64;
                (fwd.eval(s) - h.eval(s)).abs()
            })
            .fold(0.0, f64::max);
        if !(sup_err <= opts.tol) {
            return Err(HypError::BandTooSmall { band, sup_err, tolerance: opts.tol });
        }
    }
    Ok(kernel)
}

/// Sup of `|forward(inverse(h))(s) − h(s)|` over `n` equispaced `s ∈ [0, band/2]`.
pub fn roundtrip_error(h: &SpectralFunction, band: f64, n: usize) -> Result<f64> {
    let opts = InverseOptions { check_points: 0, ..InverseOptions::default() };
    let k = selberg_inverse_with(h, band, &opts)?;
    let fwd = selberg_forward(&k)?;
    let n = n.max(2);
    Ok((0..n)
        .map(|i| {
            let s = 0.5 * band * i as f64 / (n - 1) as f64;
            (fwd.eval(s) - h.eval(s)).abs()
        })
        .fold(0.0, f64::max))
}

static HEAT: Lazy<RwLock<HashMap<u64, Arc<RadialKernel>>>> = Lazy::new(|| RwLock::new(HashMap::new()));

/// Heat kernel `p_t` as a radial kernel (cached per `t`).
pub fn heat_kernel_fn(t: f64) -> Result<Arc<RadialKernel>> {
    if !(t > 0.0) || !t.is_finite() {
        return invalid("heat time must be positive");
    }
    if let Some(k) = HEAT.read().expect("heat cache").get(&t.to_bits()) {
        return Ok(k.clone());
    }
    // the multiplier is below 1e-18 beyond band/2
    let band = 2.0 * (41.5 / t).sqrt();
    let k = Arc::new(selberg_inverse(&SpectralFunction::heat(t), band)?);
    Ok(HEAT.write().expect("heat cache").entry(t.to_bits()).or_insert(k).clone())
}

/// `p_t(ρ)`, the kernel of `e^{tΔ}` on the hyperbolic plane.
pub fn heat_kernel(t: f64, rho: f64) -> Result<f64> {
    Ok(heat_kernel_fn(t)?.eval(rho))
}

/// Smallest `C` with `p_t(ρ) ≤ C e^{−ρ²}` on `n` equispaced radii in `[0, rho_max]`.
pub fn heat_bound_constant(t: f64, rho_max: f64, n: usize) -> Result<f64> {
    let k = heat_kernel_fn(t)?;
    let n = n.max(2);
    Ok((0..n)
        .map(|i| {
            let r = rho_max * i as f64 / (n - 1) as f64;
            k.eval(r) * (r * r).exp()
        })
        .fold(0.0, f64::max))
}

/// Radial solution of `φ'' + coth(r) φ' + (1/4 + s²) φ = 0` with `φ(0) = 1`, tabulated
/// with first derivatives and evaluated by quintic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct SphericalOracle {
    pub s: f64,
    pub r_max: f64,
    pub ode_tolerance: f64,
    /// Largest ODE residual of the interpolant at the grid midpoints.
    pub residual: f64,
    step: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
}

const ORACLE_STEP: f64 = 2.5e-3;

pub fn spherical_oracle(s: f64, r_max: f64) -> Result<SphericalOracle> {
    spherical_oracle_with(s, r_max, 1e-8)
}

pub fn spherical_oracle_with(s: f64, r_max: f64, ode_tolerance: f64) -> Result<SphericalOracle> {
    if !(r_max > 0.0 && r_max <= 12.0) {
        return invalid("spherical oracle needs 0 < r_max <= 12");
    }
    let lambda = 0.25 + s * s;
    let h = ORACLE_STEP;
    let n = (r_max / h).ceil() as usize + 1;
    let mut phi = vec![1.0; n + 1];
    let mut dphi = vec![0.0; n + 1];
    // hypergeometric series in x = sinh²(r/2) up to r = 1/2, RK4 beyond
    let series = |r: f64| {
        let x = (0.5 * r).sinh().powi(2);
        let (mut c, mut y, mut dy) = (1.0, 1.0, 0.0);
        for k in 0..200 {
            let kf = k as f64;
            c *= -((kf + 0.5).powi(2) + s * s) / ((kf + 1.0) * (kf + 1.0));
            let term = c * x.powi(k as i32 + 1);
            y += term;
            dy += (kf + 1.0) * c * x.powi(k as i32);
            if term.abs() < 1e-18 {
                break;
            }
        }
        (y, 0.5 * r.sinh() * dy)
    };
    let start = ((0.5 / h) as usize).min(n);
    for i in 1..=start {
        (phi[i], dphi[i]) = series(i as f64 * h);
    }
    let rhs = |r: f64, y: f64, dy: f64| -dy / r.tanh() - lambda * y;
    for i in start..n {
        let r = i as f64 * h;
        let (y, dy) = (phi[i], dphi[i]);
        let k1 = (dy, rhs(r, y, dy));
        let k2 = (dy + 0.5 * h * k1.1, rhs(r + 0.5 * h, y + 0.5 * h * k1.0, dy + 0.5 * h * k1.1));
        let k3 = (dy + 0.5 * h * k2.1, rhs(r + 0.5 * h, y + 0.5 * h * k2.0, dy + 0.5 * h * k2.1));
        let k4 = (dy + h * k3.1, rhs(r + h, y + h * k3.0, dy + h * k3.1));
        phi[i + 1] = y + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        dphi[i + 1] = dy + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    let mut o = SphericalOracle { s, r_max, ode_tolerance, residual: 0.0, step: h, phi, dphi };
    o.residual = (1..n)
        .map(|i| {
            let r = (i as f64 + 0.5) * h;
            let (y, dy, d2y) = o.jet(r);
            (d2y + dy / r.tanh() + lambda * y).abs()
        })
        .fold(0.0, f64::max);
    if !(o.residual <= ode_tolerance) {
        return Err(HypError::OdeFailure { residual: o.residual, tolerance: ode_tolerance });
    }
    Ok(o)
}

impl SphericalOracle {
    pub fn lambda(&self) -> f64 {
        0.25 + self.s * self.s
    }

    fn second(&self, i: usize) -> f64 {
        let r = i as f64 * self.step;
        if i == 0 {
            -0.5 * self.lambda()
        } else {
            -self.dphi[i] / r.tanh() - self.lambda() * self.phi[i]
        }
    }

    /// `(φ, φ', φ'')` at `r`, clamped to `[0, r_max]`.
    pub fn jet(&self, r: f64) -> (f64, f64, f64) {
        let h = self.step;
        let r = r.abs().min(self.r_max);
        let i = ((r / h) as usize).min(self.phi.len() - 2);
        let t = r / h - i as f64;
        let (f0, d0, s0) = (self.phi[i], h * self.dphi[i], h * h * self.second(i));
        let (f1, d1, s1) = (self.phi[i + 1], h * self.dphi[i + 1], h * h * self.second(i + 1));
        let c = [
            f0,
            d0,
            0.5 * s0,
            -10.0 * f0 - 6.0 * d0 - 1.5 * s0 + 10.0 * f1 - 4.0 * d1 + 0.5 * s1,
            15.0 * f0 + 8.0 * d0 + 1.5 * s0 - 15.0 * f1 + 7.0 * d1 - s1,
            -6.0 * f0 - 3.0 * d0 - 0.5 * s0 + 6.0 * f1 - 3.0 * d1 + 0.5 * s1,
        ];
        let mut p = 0.0;
        let mut dp = 0.0;
        let mut d2p = 0.0;
        for k in (0..6).rev() {
            p = p * t + c[k];
        }
        for k in (1..6).rev() {
            dp = dp * t + k as f64 * c[k];
        }
        for k in (2..6).rev() {
            d2p = d2p * t + (k * (k - 1)) as f64 * c[k];
        }
        (p, dp / h, d2p / (h * h))
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.jet(r).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{hyp_dist, polar_from};
    use crate::Point;

    /// Abel integral in the raw variable ρ, endpoint singularity removed by ρ = u + w².
    fn raw_abel(k: &RadialKernel, u: f64) -> f64 {
        let q = Adaptive::new(1e-13, 1e-11);
        let w_end = (k.support - u).sqrt();
        q.integrate(
            |w: f64| {
                let r = u + w * w;
                let d = (r.cosh() - u.cosh()).max(1e-300);
                SQRT_2 * k.eval(r) * r.sinh() / d.sqrt() * 2.0 * w
            },
            0.0,
            w_end,
        )
        .unwrap()
        .value
    }

    fn disc_closed_g(t: f64, u: f64) -> f64 {
        2.0 * SQRT_2 * (1.0 - u.cosh() / t.cosh()).max(0.0).sqrt()
    }

    #[test]
    fn abel_of_disc_kernel() {
        let k = RadialKernel::disc(1.0).unwrap();
        let g0 = abel_transform(&k, 0.0).unwrap();
        assert!((g0 - raw_abel(&k, 0.0)).abs() < 1e-8);
        assert!((g0 - disc_closed_g(1.0, 0.0)).abs() < 1e-12);
        assert!((g0 - 1.677_965).abs() < 1e-5);
        for u in [0.1, 0.5, 0.9, 0.999] {
            let g = abel_transform(&k, u).unwrap();
            assert!((g - disc_closed_g(1.0, u)).abs() < 1e-11, "{u}");
            assert_eq!(g, abel_transform(&k, -u).unwrap());
        }
        assert_eq!(abel_transform(&k, 1.0).unwrap(), 0.0);
        assert_eq!(abel_transform(&k, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn abel_of_smooth_kernel_matches_raw_quadrature() {
        let k = RadialKernel::gaussian(0.8).unwrap();
        for u in [0.0, 0.3, 1.7, 4.0] {
            let a = abel_transform(&k, u).unwrap();
            let b = raw_abel(&k, u);
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300) + 1e-14, "{u}: {a} {b}");
        }
    }

    #[test]
    fn forward_of_disc_kernel_matches_direct_fourier_integral() {
        for t in [1.0, 2.0] {
            let h = selberg_forward(&RadialKernel::disc(t).unwrap()).unwrap();
            for s in [0.0, 0.5, 1.0, 3.0, 12.0] {
                let direct = Adaptive::new(1e-13, 1e-12)
                    .integrate(|w: f64| 2.0 * (s * (t - w * w)).cos() * disc_closed_g(t, t - w * w) * 2.0 * w, 0.0, t.sqrt())
                    .unwrap()
                    .value;
                assert!((h.eval(s) - direct).abs() < 1e-9, "t={t} s={s}");
                assert_eq!(h.eval(s), h.eval(-s));
            }
        }
    }

    #[test]
    fn forward_is_linear_and_kills_zero() {
        let k = RadialKernel::gaussian(0.7).unwrap();
        let h = selberg_forward(&k).unwrap();
        let h3 = selberg_forward(&k.scaled(3.0)).unwrap();
        for s in [0.0, 1.0, 2.5] {
            assert!((h3.eval(s) - 3.0 * h.eval(s)).abs() < 1e-12 * h.eval(s).abs().max(1.0));
        }
        let z = selberg_forward(&RadialKernel::zero()).unwrap();
        assert_eq!(z.eval(1.3), 0.0);
        assert!(selberg_inverse(&SpectralFunction::zero(), 10.0).unwrap().eval(0.5) == 0.0);
        assert!(selberg_inverse(&SpectralFunction::zero().without_abel(), 10.0).unwrap().eval(0.5) == 0.0);
    }

    #[test]
    fn forward_at_imaginary_quarter_is_total_mass() {
        // h(i/2) = ∫ k dμ; compare the Abel side ∫ cosh(u/2) g(u) du to the disc area
        let t = 1.5;
        let k = RadialKernel::disc(t).unwrap();
        let m = Adaptive::default()
            .integrate(|u: f64| 2.0 * (0.5 * u).cosh() * abel_transform(&k, u).unwrap(), 0.0, t)
            .unwrap()
            .value;
        let area = crate::geom::ball_volume(t) / t.cosh().sqrt();
        assert!((m - area).abs() < 1e-7);
    }

    fn mckean(t: f64, rho: f64) -> f64 {
        let c = SQRT_2 * (-0.25 * t).exp() / (4.0 * PI * t).powf(1.5);
        let upper = (rho + 12.0 * t.sqrt() + 10.0).cosh() - rho.cosh();
        let f = |v: f64| {
            let u = shifted_radius(rho, v);
            let ratio = if u < 1e-8 { 1.0 } else { u / u.sinh() };
            ratio * (-u * u / (4.0 * t)).exp() * 2.0
        };
        let split = [0.0, 1.0, 10.0, 100.0, upper.sqrt()];
        let pts: Vec<f64> = split.iter().copied().filter(|&x| x <= upper.sqrt()).collect();
        c * Adaptive::new(1e-300, 1e-12).integrate_pieces(f, &pts).unwrap().value
    }

    #[test]
    fn heat_kernel_matches_mckean_formula() {
        for t in [0.5, 1.0, 2.0] {
            for rho in [0.0, 0.5, 2.0, 4.0, 6.0] {
                let a = heat_kernel(t, rho).unwrap();
                let b = mckean(t, rho);
                assert!((a - b).abs() <= 1e-7 * b + 1e-15, "t={t} rho={rho}: {a} {b}");
                assert!(a > 0.0);
            }
        }
    }

    #[test]
    fn heat_kernel_has_unit_mass() {
        for t in [0.5, 1.0, 2.0] {
            let k = heat_kernel_fn(t).unwrap();
            let m = Adaptive::new(1e-14, 1e-12)
                .integrate(|r: f64| k.eval(r) * 2.0 * PI * r.sinh(), 0.0, k.support)
                .unwrap()
                .value;
            assert!((m - 1.0).abs() < 1e-6, "t={t}: {m}");
        }
    }

    #[test]
    fn heat_bound_constant_is_stable() {
        for t in [0.5, 1.0, 2.0] {
            let a = heat_bound_constant(t, 6.0, 601).unwrap();
            let b = heat_bound_constant(t, 6.0, 1201).unwrap();
            assert!(a.is_finite() && a > 0.0);
            assert!((a - b).abs() <= 1e-6 * b);
        }
    }

    #[test]
    fn roundtrip_on_smooth_multipliers() {
        let h = SpectralFunction::gaussian(0.6).without_abel();
        assert!(roundtrip_error(&h, 30.0, 31).unwrap() < 1e-5);
        let h = SpectralFunction::heat(1.0);
        assert!(roundtrip_error(&h, 13.0, 31).unwrap() < 1e-5);
    }

    #[test]
    fn roundtrip_on_disc_and_bump_kernels() {
        let disc = selberg_forward(&RadialKernel::disc(1.0).unwrap()).unwrap();
        assert!(roundtrip_error(&disc, 40.0, 81).unwrap() < 1e-5);
        let bump = RadialKernel::new(
            |r: f64| if r < 2.0 { (1.0 - 4.0 / (4.0 - r * r)).exp() } else { 0.0 },
            2.0,
            Smoothness::Smooth,
            vec![],
        )
        .unwrap()
        .with_scale(0.25);
        let h = selberg_forward(&bump).unwrap();
        assert!(roundtrip_error(&h, 40.0, 81).unwrap() < 1e-5);
    }

    #[test]
    fn kernel_survives_forward_then_inverse() {
        let k = RadialKernel::gaussian(0.5).unwrap();
        let back = selberg_inverse(&selberg_forward(&k).unwrap(), 60.0).unwrap();
        for r in [0.0, 0.2, 0.5, 1.0, 2.0, 3.0] {
            assert!((back.eval(r) - k.eval(r)).abs() < 1e-5, "{r}");
        }
    }

    #[test]
    fn heat_kernel_is_positive() {
        for t in [0.5, 1.0, 2.0] {
            let k = heat_kernel_fn(t).unwrap();
            for i in 0..=600 {
                let r = 0.01 * i as f64;
                assert!(k.eval(r) > 0.0, "t={t} r={r}");
            }
        }
    }

    #[test]
    fn heat_semigroup() {
        // p_{1/2} * p_{1/2} = p_1, integrated in polar coordinates about z
        let p = heat_kernel_fn(0.5).unwrap();
        let z = Point::i();
        let zp = Point::new(0.4, 1.6);
        let gl = GaussLegendre::new(40);
        let n_theta = 128;
        let lhs = gl.composite(
            |r: f64| {
                let ring: f64 = (0..n_theta)
                    .map(|j| {
                        let th = 2.0 * PI * j as f64 / n_theta as f64;
                        p.eval(hyp_dist(polar_from(z, th, r), zp))
                    })
                    .sum::<f64>()
                    * 2.0
                    * PI
                    / n_theta as f64;
                p.eval(r) * ring * r.sinh()
            },
            0.0,
            p.support,
            8,
        );
        let rhs = heat_kernel(1.0, hyp_dist(z, zp)).unwrap();
        assert!((lhs - rhs).abs() <= 1e-4 * rhs, "{lhs} {rhs}");
    }

    #[test]
    fn inverse_of_gaussian_multiplier_matches_closed_form_g() {
        // the numeric g' route and the closed form must give the same kernel
        let h = SpectralFunction::gaussian(0.6);
        let opts = InverseOptions { check_points: 0, ..InverseOptions::default() };
        let a = selberg_inverse_with(&h, 30.0, &opts).unwrap();
        let b = selberg_inverse_with(&h.without_abel(), 30.0, &opts).unwrap();
        for r in [0.0, 0.3, 1.0, 2.5] {
            assert!((a.eval(r) - b.eval(r)).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn tight_tolerance_reports_band_too_small() {
        let h = SpectralFunction::new(|s: f64| 1.0 / (1.0 + s * s));
        let opts = InverseOptions { tol: 1e-14, ..InverseOptions::default() };
        let r = selberg_inverse_with(&h, 4.0, &opts);
        assert!(matches!(r, Err(HypError::BandTooSmall { .. })));
    }

    #[test]
    fn spherical_oracle_contract() {
        for s in [0.5, 1.0, 2.0] {
            let o = spherical_oracle(s, 8.0).unwrap();
            assert_eq!(o.eval(0.0), 1.0);
            assert!(o.residual <= 1e-8);
        }
        assert!(spherical_oracle(1.0, 13.0).is_err());
    }

    #[test]
    fn spherical_function_matches_integral_representation() {
        // φ_s(r) = (1/π) ∫_0^π (cosh r − sinh r cos θ)^{−1/2 + is} dθ
        for s in [0.0, 1.0, 2.0] {
            let o = spherical_oracle(s, 6.0).unwrap();
            for r in [0.5f64, 2.0, 5.0] {
                let rep = Adaptive::default()
                    .integrate(
                        |th: f64| {
                            let b = r.cosh() - r.sinh() * th.cos();
                            b.powf(-0.5) * (s * b.ln()).cos()
                        },
                        0.0,
                        PI,
                    )
                    .unwrap()
                    .value
                    / PI;
                assert!((o.eval(r) - rep).abs() < 1e-9, "s={s} r={r}");
            }
        }
    }

    #[test]
    fn eigen_identity_at_origin() {
        for t in [1.0, 2.0] {
            let h = selberg_forward(&RadialKernel::disc(t).unwrap()).unwrap();
            for s in [0.5, 1.0, 2.0] {
                let o = spherical_oracle(s, 8.0).unwrap();
                let lhs = 2.0 * PI / t.cosh().sqrt()
                    * Adaptive::default().integrate(|r: f64| o.eval(r) * r.sinh(), 0.0, t).unwrap().value;
                assert!((lhs - h.eval(s)).abs() <= 1e-4 * h.eval(s).abs().max(1e-3), "t={t} s={s}");
            }
        }
    }

    #[test]
    fn eigen_identity_off_origin() {
        let t = 1.0;
        let s = 1.0;
        let h = selberg_forward(&RadialKernel::disc(t).unwrap()).unwrap().eval(s);
        let o = spherical_oracle(s, 10.0).unwrap();
        let origin = Point::i();
        let gl = GaussLegendre::new(40);
        for z in [Point::new(0.3, 1.2), Point::new(-1.0, 0.5), Point::new(2.0, 3.0)] {
            let n_theta = 256;
            let lhs = gl.integrate(
                |r: f64| {
                    let ring: f64 = (0..n_theta)
                        .map(|j| {
                            let th = 2.0 * PI * j as f64 / n_theta as f64;
                            o.eval(hyp_dist(polar_from(z, th, r), origin))
                        })
                        .sum::<f64>()
                        * 2.0
                        * PI
                        / n_theta as f64;
                    ring * r.sinh()
                },
                0.0,
                t,
            ) / t.cosh().sqrt();
            let rhs = h * o.eval(hyp_dist(z, origin));
            assert!((lhs - rhs).abs() <= 1e-4 * rhs.abs().max(1e-3), "{lhs} {rhs}");
        }
    }

    #[test]
    fn window_shape() {
        assert_eq!(window(0.2), 1.0);
        assert_eq!(window(1.2), 0.0);
        assert!((window(0.75) - 0.5).abs() < 1e-15);
        let mut last = 1.0;
        for i in 0..=100 {
            let w = window(0.5 + 0.005 * i as f64);
            assert!(w <= last);
            last = w;
        }
    }
}
