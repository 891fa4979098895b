//! Numerical quadrature: adaptive Gauss–Kronrod (G7/K15) and fixed Gauss–Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{HypError, Result};
use crate::scalar::Scalar;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a quadrature with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub abs_err: T,
    pub evals: usize,
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    err: T,
    key: f64,
}

impl<T> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<T> Eq for Segment<T> {}
impl<T> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key)
    }
}

/// One 15-point Kronrod panel: returns (kronrod value, error estimate).
fn gk15<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    let mut res_g = fc * T::lit(WG[3]);
    let mut res_k = fc * T::lit(WGK[7]);
    let mut res_abs = res_k.abs();
    let mut fv1 = [T::zero(); 7];
    let mut fv2 = [T::zero(); 7];
    for j in 0..7 {
        let dx = half_len * T::lit(XGK[j]);
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        let w = T::lit(WGK[j]);
        res_k = res_k + w * (f1 + f2);
        res_abs = res_abs + w * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g = res_g + T::lit(WG[j / 2]) * (f1 + f2);
        }
    }
    let mean = res_k * half;
    let mut res_asc = T::lit(WGK[7]) * (fc - mean).abs();
    for j in 0..7 {
        res_asc = res_asc + T::lit(WGK[j]) * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let scale = half_len.abs();
    let result = res_k * half_len;
    res_abs = res_abs * scale;
    res_asc = res_asc * scale;
    let mut err = ((res_k - res_g) * half_len).abs();
    if res_asc != T::zero() && err != T::zero() {
        let s = (T::lit(200.0) * err / res_asc).powf(T::lit(1.5));
        err = if s < T::one() { res_asc * s } else { res_asc };
    }
    let eps = T::epsilon();
    if res_abs > T::min_positive_value() / (T::lit(50.0) * eps) {
        let floor = T::lit(50.0) * eps * res_abs;
        if floor > err {
            err = floor;
        }
    }
    (result, err)
}

/// Globally adaptive Gauss–Kronrod integrator.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_segments: usize,
}

impl Default for Adaptive {
    fn default() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-10, max_segments: 2000 }
    }
}

impl Adaptive {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self { abs_tol, rel_tol, ..Self::default() }
    }

    pub fn with_budget(mut self, max_segments: usize) -> Self {
        self.max_segments = max_segments;
        self
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<T: Scalar, F: Fn(T) -> T>(&self, f: F, a: T, b: T) -> Result<Estimate<T>> {
        if a == b {
            return Ok(Estimate { value: T::zero(), abs_err: T::zero(), evals: 0 });
        }
        let (v, e) = gk15(&f, a, b);
        let mut heap = BinaryHeap::new();
        heap.push(Segment { a, b, value: v, err: e, key: e.as_f64() });
        let mut total = v;
        let mut total_err = e;
        let mut evals = 15;
        let half = T::lit(0.5);
        loop {
            let floor = 100.0 * T::epsilon().as_f64() * total.abs().as_f64();
            let tol = self.abs_tol.max(self.rel_tol * total.abs().as_f64()).max(floor);
            if total_err.as_f64() <= tol {
                break;
            }
            if heap.len() >= self.max_segments {
                return Err(HypError::QuadratureFailure {
                    segments: heap.len(),
                    estimate: total.as_f64(),
                    abs_err: total_err.as_f64(),
                });
            }
            let seg = heap.pop().expect("non-empty heap");
            let mid = half * (seg.a + seg.b);
            if mid <= seg.a.min(seg.b) || mid >= seg.a.max(seg.b) {
                // interval collapsed to machine resolution
                heap.push(Segment { key: 0.0, ..seg });
                if heap.iter().all(|s| s.key == 0.0) {
                    break;
                }
                continue;
            }
            let (v1, e1) = gk15(&f, seg.a, mid);
            let (v2, e2) = gk15(&f, mid, seg.b);
            evals += 30;
            total = total - seg.value + v1 + v2;
            total_err = total_err - seg.err + e1 + e2;
            heap.push(Segment { a: seg.a, b: mid, value: v1, err: e1, key: e1.as_f64() });
            heap.push(Segment { a: mid, b: seg.b, value: v2, err: e2, key: e2.as_f64() });
        }
        // re-sum to shed accumulated cancellation in the running totals
        let mut value = T::zero();
        let mut err = T::zero();
        for s in heap.iter() {
            value = value + s.value;
            err = err + s.err;
        }
        Ok(Estimate { value, abs_err: err, evals })
    }

    /// Integrates over consecutive sub-intervals given by sorted `points`.
    pub fn integrate_pieces<T: Scalar, F: Fn(T) -> T>(
        &self,
        f: F,
        points: &[T],
    ) -> Result<Estimate<T>> {
        let mut out = Estimate { value: T::zero(), abs_err: T::zero(), evals: 0 };
        for w in points.windows(2) {
            let e = self.integrate(&f, w[0], w[1])?;
            out.value = out.value + e.value;
            out.abs_err = out.abs_err + e.abs_err;
            out.evals += e.evals;
        }
        Ok(out)
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

static GL_CACHE: Lazy<RwLock<HashMap<usize, Arc<GaussLegendre>>>> =
    Lazy::new(|| RwLock::new(HashMap::new()));

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared cached rule of order `n`.
    pub fn cached(n: usize) -> Arc<GaussLegendre> {
        if let Some(r) = GL_CACHE.read().expect("gl cache").get(&n) {
            return Arc::clone(r);
        }
        let rule = Arc::new(GaussLegendre::new(n));
        GL_CACHE.write().expect("gl cache").insert(n, Arc::clone(&rule));
        rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate<T: Scalar, F: Fn(T) -> T>(&self, f: F, a: T, b: T) -> T {
        let c = T::lit(0.5) * (a + b);
        let h = T::lit(0.5) * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (x, w)| acc + T::lit(*w) * f(c + h * T::lit(*x)))
            * h
    }

    /// Composite rule with `panels` equal sub-intervals.
    pub fn composite<T: Scalar, F: Fn(T) -> T>(&self, f: F, a: T, b: T, panels: usize) -> T {
        let panels = panels.max(1);
        let h = (b - a) / T::lit(panels as f64);
        (0..panels).fold(T::zero(), |acc, p| {
            let lo = a + h * T::lit(p as f64);
            acc + self.integrate(&f, lo, lo + h)
        })
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
