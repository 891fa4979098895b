//! Pre-trace formula numerics: the Weyl density, geometric heat sums over group
//! elements, spectral heat traces of ingested eigen-data, exponential-sum fits and
//! eigenvalue counts. Also synthesizes the window-localized spectrum of a hyperbolic
//! cylinder by separation of variables, which is the built-in ground truth.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HypError, Result};
use crate::fuchsian::{group_ball, lattice_count_bound, CylinderWindow, GroupSpec, Quotient};
use crate::quad::Adaptive;
use crate::rng::{mc_map, MeanErr};
use crate::selberg::heat_kernel_fn;
use crate::tridiag::SymTridiag;
use crate::Point;

/// `(1/4π) ∫_ℝ f(1/4 + ρ²) tanh(πρ) ρ dρ` over `|ρ| ≤ quad_limit`.
pub fn weyl_density<F: Fn(f64) -> f64>(f: F, quad_limit: f64) -> Result<f64> {
    weyl_density_with_breaks(f, quad_limit, &[])
}

/// As [`weyl_density`], splitting the quadrature where `f` has kinks (given as
/// eigenvalues `λ`).
pub fn weyl_density_with_breaks<F: Fn(f64) -> f64>(f: F, quad_limit: f64, kinks: &[f64]) -> Result<f64> {
    if !(quad_limit > 0.0) || !quad_limit.is_finite() {
        return invalid("weyl_density needs a positive finite quadrature limit");
    }
    let mut pts = vec![0.0];
    let mut rho: Vec<f64> = kinks
        .iter()
        .filter(|&&l| l > 0.25)
        .map(|&l| (l - 0.25).sqrt())
        .filter(|&r| r < quad_limit)
        .collect();
    rho.sort_by(f64::total_cmp);
    pts.extend(rho);
    pts.push(quad_limit);
    let quad = Adaptive::new(1e-11, 1e-11).with_budget(4000);
    let e = quad.integrate_pieces(|r: f64| f(0.25 + r * r) * (PI * r).tanh() * r, &pts)?;
    Ok(e.value / (2.0 * PI))
}

/// `weyl_density(e^{−tλ})`, which is also `p_t(0)`.
pub fn weyl_heat(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return invalid("heat time must be positive");
    }
    weyl_density(|l| (-t * l).exp(), (45.0 / t).sqrt())
}

/// Weyl mass of `e^{−tλ}` above `lambda_max`.
pub fn weyl_heat_tail(t: f64, lambda_max: f64) -> Result<f64> {
    let rho0 = (lambda_max - 0.25).max(0.0).sqrt();
    let lim = (45.0 / t).sqrt();
    if rho0 >= lim {
        return Ok(0.0);
    }
    weyl_density_with_breaks(|l| if l > lambda_max { (-t * l).exp() } else { 0.0 }, lim, &[lambda_max])
}

/// Piecewise-linear stand-in for the indicator of `[a, b]` with ramps of width `eps`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Trapezoid {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    /// Ramps placed `-1` inside the interval, `0` centred on its ends, `1` outside.
    pub placement: i8,
}

impl Trapezoid {
    pub fn new(a: f64, b: f64, eps: f64, placement: i8) -> Self {
        Self { a, b, eps, placement }
    }

    fn ramp_ends(&self) -> (f64, f64, f64, f64) {
        let shift = 0.5 * self.eps * f64::from(self.placement);
        let (a, b, h) = (self.a, self.b, 0.5 * self.eps);
        (a - shift - h, a - shift + h, b + shift - h, b + shift + h)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (a0, a1, b0, b1) = self.ramp_ends();
        if x <= a0 || x >= b1 {
            0.0
        } else if x < a1 {
            (x - a0) / (a1 - a0)
        } else if x <= b0 {
            1.0
        } else {
            (b1 - x) / (b1 - b0)
        }
    }

    pub fn kinks(&self) -> [f64; 4] {
        let (a0, a1, b0, b1) = self.ramp_ends();
        [a0, a1, b0, b1]
    }

    pub fn support_end(&self) -> f64 {
        self.ramp_ends().3
    }

    /// `weyl_density` of this window.
    pub fn weyl(&self) -> Result<f64> {
        let end = self.support_end();
        weyl_density_with_breaks(|l| self.eval(l), (end - 0.25).max(1e-3).sqrt() + 1e-9, &self.kinks())
    }
}

/// Eigenvalues of a surface, optionally with eigenfunction values on a quadrature mesh.
///
/// `mass`, when present, holds `∫_W |ψ_j|²` over a sub-region `W` of area `volume`
/// (window-localized data); absent, every eigenfunction counts with weight one.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EigenData {
    pub volume: f64,
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<Mesh>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<Vec<f64>>,
}

/// Quadrature points, weights and `values[j][p] = ψ_j(points[p])`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mesh {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl EigenData {
    pub fn new(volume: f64, eigenvalues: Vec<f64>) -> Result<Self> {
        let e = Self { volume, eigenvalues, mesh: None, mass: None };
        e.validate()?;
        Ok(e)
    }

    pub fn with_mesh(mut self, mesh: Mesh) -> Result<Self> {
        self.mesh = Some(mesh);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume > 0.0) {
            return invalid("eigen-data volume must be positive");
        }
        match self.eigenvalues.first() {
            Some(&l) if l == 0.0 => {}
            _ => return invalid("eigenvalue list must start at exactly 0"),
        }
        if self.eigenvalues.windows(2).any(|w| !(w[1] >= w[0])) {
            return invalid("eigenvalues must be nondecreasing");
        }
        if let Some(m) = &self.mass {
            if m.len() != self.eigenvalues.len() || m.iter().any(|&x| !(x >= 0.0)) {
                return invalid("mass list must match the eigenvalues and be nonnegative");
            }
        }
        if let Some(mesh) = &self.mesh {
            let p = mesh.points.len();
            if mesh.weights.len() != p || mesh.values.iter().any(|v| v.len() != p) {
                return invalid("mesh weights and values must match the point count");
            }
            if mesh.values.len() > self.eigenvalues.len() {
                return invalid("more mesh eigenfunctions than eigenvalues");
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(s)?;
        e.validate()?;
        Ok(e)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eigen-data serializes")
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.mass.as_ref().map_or(1.0, |m| m[j])
    }

    /// `max |G − I|` for the mesh Gram matrix `G_jk = Σ_p w_p ψ_j ψ_k`.
    pub fn gram_deviation(&self) -> Result<f64> {
        let mesh = self.mesh.as_ref().ok_or(HypError::NoMesh)?;
        let n = mesh.values.len();
        let dev = (0..n)
            .into_par_iter()
            .map(|j| {
                (j..n)
                    .map(|k| {
                        let g: f64 = mesh
                            .weights
                            .iter()
                            .zip(&mesh.values[j])
                            .zip(&mesh.values[k])
                            .map(|((w, a), b)| w * a * b)
                            .sum();
                        (g - if j == k { 1.0 } else { 0.0 }).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        Ok(dev)
    }

    /// `Σ_j f(λ_j)` with each eigenvalue weighted by its mass.
    pub fn spectral_sum<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.eigenvalues.iter().enumerate().map(|(j, &l)| self.weight(j) * f(l)).sum()
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("validated non-empty")
    }
}

/// Value with a separately reported (estimated or certified) error term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WithTail {
    pub value: f64,
    pub tail: f64,
}

/// `Σ_j e^{−tλ_j}` plus the Weyl estimate `Vol·weyl(e^{−t·} 1_{>Λ_max})` of the
/// eigenvalues beyond the list.
pub fn heat_trace_spectral(e: &EigenData, t: f64) -> Result<WithTail> {
    if !(t > 0.0) {
        return invalid("heat time must be positive");
    }
    let value = e.spectral_sum(|l| (-t * l).exp());
    let tail = e.volume * weyl_heat_tail(t, e.lambda_max())?;
    Ok(WithTail { value, tail })
}

/// Upper bound for `p_t(ρ)` from `cosh s − cosh ρ ≥ sinh ρ (s − ρ)` in the
/// integral representation of the heat kernel.
pub fn heat_kernel_upper(t: f64, rho: f64) -> f64 {
    if rho <= 0.0 {
        return f64::INFINITY;
    }
    let pre = std::f64::consts::SQRT_2 * (-0.25 * t).exp() / (4.0 * PI * t).powf(1.5);
    let a = 2.0 * t / rho;
    let bracket = (2.0 * PI * t * rho).sqrt() + 0.5 * PI.sqrt() * a.powf(1.5);
    // e^{−ρ²/4t}/√sinh ρ in logs to survive large ρ
    let log = -rho * rho / (4.0 * t) - 0.5 * (0.5 * (1.0 - (-2.0 * rho).exp())).ln() - 0.5 * rho;
    pre * bracket * log.exp()
}

/// Certified bound on `Σ p_t(d(z, γz))` over `d > radius`, for a torsion-free group
/// whose translation lengths are at least `ell`.
pub fn heat_tail_bound(t: f64, radius: f64, ell: f64) -> f64 {
    let step = 0.5;
    let mut total = 0.0;
    for j in 0.. {
        let r = radius.max(1e-3) + j as f64 * step;
        // orbit points are ℓ apart, so discs of radius ℓ/2 about them are disjoint
        let term = lattice_count_bound(r + step, 0.5 * ell) * heat_kernel_upper(t, r);
        total += term;
        if term < 1e-300 || (j > 4 && term < 1e-18 * total.max(1e-300)) {
            break;
        }
    }
    total
}

/// `Σ_{γ ≠ id, d(z,γz) ≤ R} p_t(d(z, γz))` with the certified tail beyond `R` (and any
/// terms beyond the tabulated heat-kernel support) in `tail`.
pub fn geometric_side(spec: &GroupSpec, z: Point, t: f64, radius: f64, ell: f64) -> Result<WithTail> {
    let ball = group_ball(spec, z, radius)?;
    let d: Vec<f64> = ball.elements.iter().map(|e| e.displacement).collect();
    heat_sum(&d, t, radius, ell)
}

/// As [`geometric_side`] for a point of a quotient region, using its translates.
pub fn geometric_side_in<Q: Quotient>(q: &Q, z: Point, t: f64, radius: f64, ell: f64) -> Result<WithTail> {
    let d: Vec<f64> = q.translates(z, radius)?.into_iter().map(|(_, d)| d).collect();
    heat_sum(&d, t, radius, ell)
}

fn heat_sum(displacements: &[f64], t: f64, radius: f64, ell: f64) -> Result<WithTail> {
    if !(t > 0.0) || !(ell > 0.0) {
        return invalid("geometric side needs t > 0 and ℓ > 0");
    }
    let p = heat_kernel_fn(t)?;
    let mut value = 0.0;
    let mut tail = heat_tail_bound(t, radius, ell);
    for &d in displacements {
        if d <= p.support {
            value += p.eval(d);
        } else {
            tail += heat_kernel_upper(t, d);
        }
    }
    Ok(WithTail { value, tail })
}

/// Monte Carlo `∫_D` of the geometric side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratedGeometric {
    pub value: f64,
    pub stderr: f64,
    /// `Vol(D) · max` of the pointwise certified tails.
    pub tail: f64,
}

pub fn integrated_geometric_side<Q: Quotient>(
    q: &Q,
    t: f64,
    radius: f64,
    ell: f64,
    n: usize,
    seed: u64,
) -> Result<IntegratedGeometric> {
    if n == 0 {
        return invalid("need at least one sample");
    }
    heat_kernel_fn(t)?;
    let vals = mc_map(n, seed, 0x6765_6f73, |rng, _| geometric_side_in(q, q.sample(rng), t, radius, ell));
    let vals: Vec<WithTail> = vals.into_iter().collect::<Result<_>>()?;
    let me = MeanErr::of(&vals.iter().map(|v| v.value).collect::<Vec<_>>());
    let tail = vals.iter().map(|v| v.tail).fold(0.0, f64::max);
    let vol = q.volume();
    Ok(IntegratedGeometric { value: me.mean * vol, stderr: me.stderr * vol, tail: tail * vol })
}

/// Discretization of the cross-section of a hyperbolic cylinder.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CylinderGrid {
    /// Fermi half-width of the truncated cylinder (Neumann walls).
    pub r_max: f64,
    /// Cell width in the Fermi distance.
    pub h: f64,
    /// Eigenvalues above this are dropped.
    pub lambda_max: f64,
    /// Angular modes are added until every kept eigenvalue has window mass below this.
    pub mass_floor: f64,
}

impl Default for CylinderGrid {
    fn default() -> Self {
        Self { r_max: 20.0, h: 0.02, lambda_max: 40.0, mass_floor: 1e-15 }
    }
}

/// Window-localized spectrum of the cylinder `⟨z ↦ e^L z⟩ \ ℍ`, cut at Fermi distance
/// `grid.r_max` with Neumann walls, for the window `|r| ≤ width`.
///
/// Eigenfunctions separate as `e^{2πins/L} u(r)`; for each `n` the radial operator
/// `−(cosh r)^{-1}(cosh r u′)′ + (2πn/L)² u / cosh² r` is discretized by finite volumes
/// with exact cell masses, split by parity in `r`. `mass[j]` is `∫_{|r|≤width} |ψ_j|²`.
pub fn cylinder_spectrum(length: f64, width: f64, grid: CylinderGrid) -> Result<EigenData> {
    if !(length > 0.0 && width > 0.0 && grid.h > 0.0 && grid.r_max > width && grid.lambda_max > 0.0) {
        return invalid("cylinder spectrum needs positive length, width, step and r_max > width");
    }
    // cell edges land on the window boundary
    let cells_w = (width / grid.h).round().max(1.0) as usize;
    let h = width / cells_w as f64;
    let cells = cells_w + ((grid.r_max - width) / h).ceil() as usize;
    let edges: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
    let mass: Vec<f64> = edges.windows(2).map(|w| w[1].sinh() - w[0].sinh()).collect();
    let gd: Vec<f64> = edges.iter().map(|r| r.sinh().atan()).collect();
    let flux: Vec<f64> = edges.iter().map(|r| r.cosh() / h).collect();

    let mode = |n: usize, odd: bool| -> Vec<(f64, f64)> {
        let k2 = (2.0 * PI * n as f64 / length).powi(2);
        let d: Vec<f64> = (0..cells)
            .map(|i| {
                let left = if i == 0 {
                    if odd {
                        2.0 * flux[0]
                    } else {
                        0.0
                    }
                } else {
                    flux[i]
                };
                let right = if i + 1 < cells { flux[i + 1] } else { 0.0 };
                // cell average of k²/cosh² r against cosh r dr
                (left + right) / mass[i] + k2 * (gd[i + 1] - gd[i]) / mass[i]
            })
            .collect();
        let e: Vec<f64> = (0..cells - 1).map(|i| -flux[i + 1] / (mass[i] * mass[i + 1]).sqrt()).collect();
        let tri = SymTridiag::new(d, e);
        tri.eigenvalues_below(grid.lambda_max, 1e-12)
            .into_iter()
            .map(|l| {
                let v = tri.eigenvector(l);
                let m: f64 = v[..cells_w].iter().map(|x| x * x).sum();
                (if l.abs() < 1e-9 { 0.0 } else { l }, m)
            })
            .collect()
    };

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut n = 0usize;
    loop {
        let mut batch: Vec<(f64, f64)> = [false, true].par_iter().flat_map(|&odd| mode(n, odd)).collect();
        let peak = batch.iter().map(|p| p.1).fold(0.0, f64::max);
        if n > 0 {
            // ±n share the radial problem
            let copy = batch.clone();
            batch.extend(copy);
        }
        pairs.extend(batch);
        if n > 0 && peak < grid.mass_floor {
            break;
        }
        n += 1;
        if n > 100_000 {
            return invalid("angular mode sum did not reach the mass floor");
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let volume = 2.0 * length * width.sinh();
    let (eigenvalues, mass) = pairs.into_iter().unzip();
    let e = EigenData { volume, eigenvalues, mesh: None, mass: Some(mass) };
    e.validate()?;
    Ok(e)
}

/// Both sides of the pre-trace identity integrated over a cylinder window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PretraceCheck {
    pub length: f64,
    pub t: f64,
    pub spectral: f64,
    /// Weyl estimate of the eigenvalues above the cutoff.
    pub spectral_tail: f64,
    /// Richardson estimate of the finite-volume error of the spectral side.
    pub discretization: f64,
    pub weyl_term: f64,
    pub geometric: f64,
    pub geometric_stderr: f64,
    pub geometric_tail: f64,
    /// `spectral − weyl_term − geometric`.
    pub residual: f64,
    /// `3σ` of the Monte Carlo term plus all tails and the discretization estimate.
    pub allowed: f64,
}

impl PretraceCheck {
    pub fn passes(&self) -> bool {
        self.residual.abs() <= self.allowed
    }
}

/// Pre-trace identity on the window `|r| ≤ width` of the cylinder of length `length`:
/// synthesized spectral side against `Vol·weyl(e^{−t·}) + ∫_W geometric side`.
pub fn pretrace_check(length: f64, width: f64, t: f64, grid: CylinderGrid, n: usize, seed: u64) -> Result<PretraceCheck> {
    let fine = cylinder_spectrum(length, width, grid)?;
    let coarse = cylinder_spectrum(length, width, CylinderGrid { h: 2.0 * grid.h, ..grid })?;
    let s_fine = heat_trace_spectral(&fine, t)?;
    let s_coarse = heat_trace_spectral(&coarse, t)?;
    let discretization = (s_fine.value - s_coarse.value).abs() / 3.0;
    let window = CylinderWindow::new(length, width)?;
    let weyl_term = window.volume() * weyl_heat(t)?;
    let radius = geometric_radius(t, length);
    let g = integrated_geometric_side(&window, t, radius, length, n, seed)?;
    let spectral = s_fine.value + s_fine.tail;
    let residual = spectral - weyl_term - g.value;
    let allowed = 3.0 * g.stderr + g.tail + s_fine.tail + discretization;
    Ok(PretraceCheck {
        length,
        t,
        spectral,
        spectral_tail: s_fine.tail,
        discretization,
        weyl_term,
        geometric: g.value,
        geometric_stderr: g.stderr,
        geometric_tail: g.tail,
        residual,
        allowed,
    })
}

/// Enumeration radius at which the certified heat tail for systole `ell` drops below 1e-12.
pub fn geometric_radius(t: f64, ell: f64) -> f64 {
    let mut r = 1.0;
    while heat_tail_bound(t, r, ell) > 1e-12 && r < 200.0 {
        r += 0.5;
    }
    r
}

/// `g(x) ≈ Σ_k a_k e^{−t_k x}` on `[0, x_max]`.
#[derive(Debug, Clone, Serialize)]
pub struct ExpSumApprox {
    pub coefficients: Vec<f64>,
    pub rates: Vec<f64>,
    /// Sup of the residual over the fit grid.
    pub sup_error: f64,
    pub x_max: f64,
    /// The normal equations were numerically singular and only the ridge kept them solvable.
    pub ill_conditioned: bool,
}

impl ExpSumApprox {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().zip(&self.rates).map(|(a, t)| a * (-t * x).exp()).sum()
    }
}

/// Least-squares fit of `g(x) = f(x) e^x` by `Σ_{k=1}^K a_k e^{−kΔx}` on `grid` equispaced
/// points of `[0, x_max]`. The rates are nested in `K` for a fixed `Δ`; the default
/// `Δ = 2/x_max` makes the basis polynomials in `q = e^{−Δx} ∈ [e^{−2}, 1]`.
pub fn exp_sum_fit<F: Fn(f64) -> f64>(f: F, k: usize, x_max: f64, rate_step: Option<f64>, grid: usize) -> Result<ExpSumApprox> {
    if !(x_max > 0.0) || grid < 2 {
        return invalid("exp_sum_fit needs x_max > 0 and at least two grid points");
    }
    let delta = rate_step.unwrap_or(2.0 / x_max);
    if !(delta > 0.0) {
        return invalid("rate step must be positive");
    }
    let xs: Vec<f64> = (0..grid).map(|i| x_max * i as f64 / (grid - 1) as f64).collect();
    let g: Vec<f64> = xs.iter().map(|&x| f(x) * x.exp()).collect();
    let rates: Vec<f64> = (1..=k).map(|j| j as f64 * delta).collect();
    if k == 0 {
        let sup = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        return Ok(ExpSumApprox { coefficients: vec![], rates, sup_error: sup, x_max, ill_conditioned: false });
    }
    let a = DMatrix::from_fn(grid, k, |i, j| (-rates[j] * xs[i]).exp());
    // column scaling keeps the ridge relative
    let scale: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    let an = DMatrix::from_fn(grid, k, |i, j| a[(i, j)] / scale[j]);
    let rhs = DVector::from_vec(g.clone());
    let mut normal = an.transpose() * &an;
    let atb = an.transpose() * rhs;
    let svals = normal.clone().symmetric_eigenvalues();
    let smax = svals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smin = svals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let ill_conditioned = smin < 1e-10 * smax;
    for j in 0..k {
        normal[(j, j)] += 1e-10 * smax;
    }
    let c = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => normal
            .svd(true, true)
            .solve(&atb, 1e-14 * smax)
            .map_err(|e| HypError::InvalidInput(format!("exp-sum solve failed: {e}")))?,
    };
    let coefficients: Vec<f64> = (0..k).map(|j| c[j] / scale[j]).collect();
    let mut fit = ExpSumApprox { coefficients, rates, sup_error: 0.0, x_max, ill_conditioned };
    fit.sup_error = xs.iter().zip(&g).map(|(&x, gv)| (fit.eval(x) - gv).abs()).fold(0.0, f64::max);
    Ok(fit)
}

/// Eigenvalue count in an interval with its Weyl prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenCount {
    /// Exact (mass-weighted) count when eigen-data is given, else the trace-formula estimate.
    pub estimate: f64,
    /// `Vol · weyl_density` of the interval with ramps centred on its ends.
    pub weyl: f64,
    /// Weyl values with ramps inside and outside the interval.
    pub weyl_in: f64,
    pub weyl_out: f64,
    /// Counts against the inner and outer ramps, which bracket the exact count.
    pub count_in: Option<f64>,
    pub count_out: Option<f64>,
    pub volume: f64,
    /// Sup error of the exponential fit of `f·e^x` on its grid (zero for exact counts).
    pub fit_error: f64,
    /// Monte Carlo error of the estimate, `Σ_k |a_k| σ_k`.
    pub stderr: f64,
}

/// Options of the count estimate without eigen-data.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CountOptions {
    pub eps: f64,
    /// Exponentials in the fit of the smoothed indicator.
    pub k: usize,
    pub rate_step: Option<f64>,
    /// Translation-length lower bound of the group.
    pub ell: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self { eps: 0.05, k: 40, rate_step: None, ell: 1.0, n: 2000, seed: 0 }
    }
}

/// `N(I)` for `I = [a, b] ⊂ (1/4, ∞)`: exact from `eigen` when given, otherwise
/// `Σ_k a_k [Vol·weyl(e^{−(t_k+1)·}) + ∫_D geometric_side(·, t_k + 1)]` from an
/// exponential fit of the centred trapezoid times `e^x`.
pub fn eigencount_estimate<Q: Quotient>(q: &Q, eigen: Option<&EigenData>, interval: (f64, f64), opts: CountOptions) -> Result<EigenCount> {
    let (a, b) = interval;
    if !(a > 0.25 && b > a && b.is_finite()) {
        return invalid("count interval must be bounded and lie in (1/4, ∞)");
    }
    let centred = Trapezoid::new(a, b, opts.eps, 0);
    let inner = Trapezoid::new(a, b, opts.eps, -1);
    let outer = Trapezoid::new(a, b, opts.eps, 1);
    let volume = eigen.map_or_else(|| q.volume(), |e| e.volume);
    let weyl = volume * centred.weyl()?;
    let weyl_in = volume * inner.weyl()?;
    let weyl_out = volume * outer.weyl()?;
    let (estimate, count_in, count_out, fit_error, stderr) = match eigen {
        Some(e) => {
            let exact = e.spectral_sum(|l| f64::from(u8::from(l >= a && l <= b)));
            (exact, Some(e.spectral_sum(|l| inner.eval(l))), Some(e.spectral_sum(|l| outer.eval(l))), 0.0, 0.0)
        }
        None => {
            let x_max = outer.support_end() + 1.0;
            let fit = exp_sum_fit(|x| centred.eval(x), opts.k, x_max, opts.rate_step, 2000)?;
            let mut weyl_part = 0.0;
            let mut radius = 0.0f64;
            for (&ak, &tk) in fit.coefficients.iter().zip(&fit.rates) {
                weyl_part += ak * volume * weyl_heat(tk + 1.0)?;
                radius = radius.max(geometric_radius(tk + 1.0, opts.ell));
                heat_kernel_fn(tk + 1.0)?;
            }
            // Σ_k a_k · geometric_side(z, t_k + 1) sampled jointly, so the fitted
            // cancellations between terms are not lost to independent noise
            let samples = mc_map(opts.n.max(1), opts.seed, 0x636f_756e, |rng, _| -> Result<(f64, f64)> {
                let z = q.sample(rng);
                let d: Vec<f64> = q.translates(z, radius)?.into_iter().map(|(_, d)| d).collect();
                let mut v = 0.0;
                let mut tail = 0.0;
                for (&ak, &tk) in fit.coefficients.iter().zip(&fit.rates) {
                    let h = heat_sum(&d, tk + 1.0, radius, opts.ell)?;
                    v += ak * h.value;
                    tail += ak.abs() * h.tail;
                }
                Ok((v, tail))
            });
            let samples: Vec<(f64, f64)> = samples.into_iter().collect::<Result<_>>()?;
            let me = MeanErr::of(&samples.iter().map(|s| s.0).collect::<Vec<_>>());
            let tail = samples.iter().map(|s| s.1).fold(0.0, f64::max);
            let vol = q.volume();
            let total = weyl_part + me.mean * vol;
            let err = me.stderr * vol + tail * vol;
            (total, None, None, fit.sup_error, err)
        }
    };
    Ok(EigenCount { estimate, weyl, weyl_in, weyl_out, count_in, count_out, volume, fit_error, stderr })
}

/// One cover in the count trend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverRow {
    pub degree: usize,
    pub length: f64,
    /// Fraction of the window with injectivity radius below `thin_radius`.
    pub thin_fraction: f64,
    pub count_density: f64,
    pub weyl_density: f64,
    pub deviation: f64,
}

/// Window-localized counts on the degree-`m` cyclic covers of the cylinder of length
/// `length` against the Weyl density.
pub fn cover_trend(
    length: f64,
    width: f64,
    degrees: &[usize],
    interval: (f64, f64),
    grid: CylinderGrid,
    thin_radius: f64,
    seed: u64,
) -> Result<Vec<CoverRow>> {
    degrees
        .iter()
        .map(|&m| {
            if m == 0 {
                return invalid("cover degree must be positive");
            }
            let l = length * m as f64;
            let e = cylinder_spectrum(l, width, grid)?;
            let window = CylinderWindow::new(l, width)?;
            let c = eigencount_estimate(&window, Some(&e), interval, CountOptions::default())?;
            let thin = crate::fuchsian::thin_part_fraction_in(&window, thin_radius, 4000, seed)?;
            let count_density = c.estimate / e.volume;
            let weyl_density = c.weyl / e.volume;
            Ok(CoverRow {
                degree: m,
                length: l,
                thin_fraction: thin.fraction,
                count_density,
                weyl_density,
                deviation: (count_density - weyl_density).abs(),
            })
        })
        .collect()
}
