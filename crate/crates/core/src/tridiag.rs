//! Partial eigen-decomposition of real symmetric tridiagonal matrices: Sturm-count
//! bisection for eigenvalues below a cutoff, inverse iteration for their vectors.

/// Symmetric tridiagonal matrix with diagonal `d` and off-diagonal `e`.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl SymTridiag {
    pub fn new(d: Vec<f64>, e: Vec<f64>) -> Self {
        assert!(!d.is_empty() && e.len() + 1 == d.len());
        Self { d, e }
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.d[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.d.len() {
            let prev = if q == 0.0 { f64::EPSILON * (1.0 + x.abs()) } else { q };
            q = self.d[i] - x - self.e[i - 1] * self.e[i - 1] / prev;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn bounds(&self) -> (f64, f64) {
        let n = self.d.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.e[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.e[i].abs() } else { 0.0 };
            lo = lo.min(self.d[i] - r);
            hi = hi.max(self.d[i] + r);
        }
        (lo, hi)
    }

    /// Eigenvalues below `cutoff`, ascending, bisected to absolute width `tol`.
    pub fn eigenvalues_below(&self, cutoff: f64, tol: f64) -> Vec<f64> {
        let (lo0, hi0) = self.bounds();
        let hi0 = hi0.min(cutoff);
        let m = self.count_below(hi0);
        (0..m)
            .map(|j| {
                let (mut lo, mut hi) = (lo0, hi0);
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.count_below(mid) > j {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }

    /// Unit eigenvector for the (simple) eigenvalue `lambda`.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.d.len();
        let shift = lambda + 1e-10 * (1.0 + lambda.abs());
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i as f64) * 0.7).sin()).collect();
        for _ in 0..4 {
            x = self.solve_shifted(shift, &x);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                break;
            }
            x.iter_mut().for_each(|v| *v /= norm);
        }
        x
    }

    /// `(T − σ I) x = b` by Gaussian elimination with partial pivoting.
    fn solve_shifted(&self, sigma: f64, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        if n == 1 {
            let p = self.d[0] - sigma;
            return vec![b[0] / if p == 0.0 { f64::EPSILON } else { p }];
        }
        // rows stored as (diag, super, super-super) after elimination
        let mut dl: Vec<f64> = self.e.clone();
        let mut dd: Vec<f64> = self.d.iter().map(|v| v - sigma).collect();
        let mut du: Vec<f64> = self.e.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut rhs = b.to_vec();
        for i in 0..n - 1 {
            if dd[i].abs() >= dl[i].abs() {
                let piv = if dd[i] == 0.0 { f64::EPSILON } else { dd[i] };
                let f = dl[i] / piv;
                dd[i] = piv;
                dd[i + 1] -= f * du[i];
                rhs[i + 1] -= f * rhs[i];
                dl[i] = 0.0;
            } else {
                let f = dd[i] / dl[i];
                dd[i] = dl[i];
                let tmp = dd[i + 1];
                dd[i + 1] = du[i] - f * tmp;
                du[i] = tmp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du2[i];
                }
                rhs.swap(i, i + 1);
                rhs[i + 1] -= f * rhs[i];
            }
        }
        let mut x = vec![0.0; n];
        let last = if dd[n - 1] == 0.0 { f64::EPSILON } else { dd[n - 1] };
        x[n - 1] = rhs[n - 1] / last;
        x[n - 2] = (rhs[n - 2] - du[n - 2] * x[n - 1]) / dd[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (rhs[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / dd[i];
        }
        x
    }
}
