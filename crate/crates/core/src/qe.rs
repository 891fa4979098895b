//! Quantum ergodicity variance of diagonal matrix elements and its quantitative bound.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, HypError, Result};
use crate::propagator::Observable;
use crate::rng::stream_rng;
use crate::trace::{EigenData, Mesh};
use crate::Point;

/// Gram deviations above this are flagged.
pub const GRAM_WARNING: f64 = 1e-2;

/// Parameters of the quantitative bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParameters {
    pub radius: f64,
    pub ell_min: f64,
    pub rho_gap: f64,
    pub thin_volume: f64,
}

impl Default for BoundParameters {
    fn default() -> Self {
        Self { radius: 1.0, ell_min: 1.0, rho_gap: 1.0, thin_volume: 0.0 }
    }
}

/// One eigenfunction's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QETerm {
    pub index: usize,
    pub lambda: f64,
    pub matrix_element: f64,
    pub deviation_sq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QEReport {
    pub interval: (f64, f64),
    pub variance_sum: f64,
    /// `variance_sum / max(N, 1)`.
    pub normalized: f64,
    pub count: usize,
    /// Volume-normalized mean of the observable under the mesh quadrature.
    pub mean: f64,
    /// `‖a − mean‖₂²` and `‖a‖_∞` under the mesh quadrature.
    pub l2_sq: f64,
    pub sup: f64,
    pub bound_main: f64,
    pub bound_remainder: f64,
    pub parameters: BoundParameters,
    pub gram_deviation: f64,
    pub gram_warning: bool,
    pub terms: Vec<QETerm>,
}

impl QEReport {
    pub fn covered(&self) -> bool {
        self.variance_sum <= self.bound_main + self.bound_remainder
    }
}

/// `(‖a‖₂²/(ρ²R), (e^{4R}/ℓ_min)·Vol(thin)·‖a‖_∞²)`.
pub fn quantitative_bound(l2_sq: f64, sup: f64, p: &BoundParameters) -> Result<(f64, f64)> {
    if !(p.radius > 0.0 && p.ell_min > 0.0 && p.rho_gap > 0.0) || !(p.thin_volume >= 0.0) {
        return invalid("bound parameters R, ℓ_min, ρ must be positive and the thin volume nonnegative");
    }
    if !(l2_sq >= 0.0 && sup >= 0.0) {
        return invalid("norms must be nonnegative");
    }
    let main = l2_sq / (p.rho_gap * p.rho_gap * p.radius);
    let remainder = if p.thin_volume == 0.0 {
        0.0
    } else {
        (4.0 * p.radius).exp() / p.ell_min * p.thin_volume * sup * sup
    };
    Ok((main, remainder))
}

/// `Σ_{λ_j ∈ I} |⟨ψ_j, a ψ_j⟩ − ⨍ a|²` with the matrix elements and the mean taken by the
/// mesh quadrature. With `strict`, a Gram deviation above [`GRAM_WARNING`] is an error.
pub fn qe_variance(e: &EigenData, a: &Observable, interval: (f64, f64), params: BoundParameters, strict: bool) -> Result<QEReport> {
    let mesh = e.mesh.as_ref().ok_or(HypError::NoMesh)?;
    let values: Vec<f64> = mesh.points.iter().map(|&[x, y]| a.eval(Point::new(x, y))).collect();
    qe_variance_values(e, &values, interval, params, strict)
}

/// As [`qe_variance`] with the observable given by its values at the mesh points.
pub fn qe_variance_values(e: &EigenData, a: &[f64], interval: (f64, f64), params: BoundParameters, strict: bool) -> Result<QEReport> {
    let mesh = e.mesh.as_ref().ok_or(HypError::NoMesh)?;
    if a.len() != mesh.points.len() {
        return invalid("observable values must match the mesh points");
    }
    let (lo, hi) = interval;
    if !(hi >= lo) {
        return invalid("interval must have lo <= hi");
    }
    let gram_deviation = e.gram_deviation()?;
    let gram_warning = gram_deviation > GRAM_WARNING;
    if strict && gram_warning {
        return Err(HypError::GramDeviationTooLarge { deviation: gram_deviation });
    }
    let vol: f64 = mesh.weights.iter().sum();
    if !(vol > 0.0) {
        return invalid("mesh weights must have positive total");
    }
    let mean = mesh.weights.iter().zip(a).map(|(w, v)| w * v).sum::<f64>() / vol;
    let l2_sq = mesh.weights.iter().zip(a).map(|(w, v)| w * (v - mean).powi(2)).sum::<f64>();
    let sup = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let terms: Vec<QETerm> = mesh
        .values
        .par_iter()
        .enumerate()
        .filter(|(j, _)| (lo..=hi).contains(&e.eigenvalues[*j]))
        .map(|(j, psi)| {
            let m: f64 = mesh.weights.iter().zip(a).zip(psi).map(|((w, v), p)| w * v * p * p).sum();
            QETerm { index: j, lambda: e.eigenvalues[j], matrix_element: m, deviation_sq: (m - mean).powi(2) }
        })
        .collect();
    let variance_sum: f64 = terms.iter().map(|t| t.deviation_sq).sum();
    let count = terms.len();
    let (bound_main, bound_remainder) = quantitative_bound(l2_sq, sup, &params)?;
    Ok(QEReport {
        interval,
        variance_sum,
        normalized: variance_sum / count.max(1) as f64,
        count,
        mean,
        l2_sq,
        sup,
        bound_main,
        bound_remainder,
        parameters: params,
        gram_deviation,
        gram_warning,
        terms,
    })
}

/// Largest `ρ` with `variance ≤ ‖a‖₂²/(ρ²R)` on every `(variance, ‖a‖₂², R)` given.
pub fn fit_rho_gap(samples: &[(f64, f64, f64)]) -> Result<f64> {
    let rho = samples
        .iter()
        .filter(|s| s.0 > 0.0)
        .map(|&(v, l2, r)| (l2 / (r * v)).sqrt())
        .fold(f64::INFINITY, f64::min);
    if rho.is_finite() && rho > 0.0 {
        Ok(rho)
    } else {
        invalid("no sample with positive variance to fit ρ")
    }
}

/// `n_side × n_side` cell-centre mesh of the square `[−1/2, 1/2] × [1, 2]` with equal
/// weights summing to `volume`.
pub fn flat_mesh(n_side: usize, volume: f64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let n = n_side.max(1);
    let pts = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            [-0.5 + (i as f64 + 0.5) / n as f64, 1.0 + (j as f64 + 0.5) / n as f64]
        })
        .collect();
    (pts, vec![volume / (n * n) as f64; n * n])
}

/// Eigen-data on a mesh whose eigenfunctions are `n_funcs` Haar-random orthonormal vectors
/// (orthonormal under the mesh weights), with eigenvalues `eigenvalues`.
pub fn random_basis_eigendata(
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
    eigenvalues: Vec<f64>,
    seed: u64,
) -> Result<EigenData> {
    let p = points.len();
    let k = eigenvalues.len();
    if k > p {
        return invalid("cannot have more orthonormal functions than mesh points");
    }
    let mut rng = stream_rng(seed, 0x6261_7369);
    let g = nalgebra::DMatrix::<f64>::from_fn(p, k, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let values: Vec<Vec<f64>> = (0..k).map(|j| (0..p).map(|i| q[(i, j)] / weights[i].sqrt()).collect()).collect();
    let volume = weights.iter().sum();
    EigenData::new(volume, eigenvalues)?.with_mesh(Mesh { points, weights, values })
}
