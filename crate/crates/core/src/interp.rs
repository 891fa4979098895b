//! Piecewise Chebyshev tables for cheap evaluation of expensive smooth functions.

use rayon::prelude::*;

/// Values of a function at first-kind Chebyshev nodes on equal-width panels,
/// evaluated by barycentric interpolation.
#[derive(Debug, Clone)]
pub struct ChebTable {
    a: f64,
    b: f64,
    width: f64,
    n: usize,
    nodes: Vec<f64>,
    bary: Vec<f64>,
    values: Vec<f64>,
}

impl ChebTable {
    /// Tabulates `f` on `[a, b]` with panels no wider than `max_width`, `n` nodes each.
    pub fn build<F>(f: F, a: f64, b: f64, max_width: f64, n: usize) -> Self
    where
        F: Fn(f64) -> f64 + Sync,
    {
        assert!(b > a && max_width > 0.0 && n >= 2);
        let panels = ((b - a) / max_width).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        let nodes: Vec<f64> = (0..n)
            .map(|j| (std::f64::consts::PI * (2 * j + 1) as f64 / (2 * n) as f64).cos())
            .collect();
        let bary = (0..n)
            .map(|j| {
                let s = (std::f64::consts::PI * (2 * j + 1) as f64 / (2 * n) as f64).sin();
                if j % 2 == 0 { s } else { -s }
            })
            .collect();
        let xs: Vec<f64> = (0..panels)
            .flat_map(|p| {
                let lo = a + p as f64 * width;
                nodes.iter().map(move |x| lo + 0.5 * width * (x + 1.0))
            })
            .collect();
        let values = xs.par_iter().map(|&x| f(x)).collect();
        Self { a, b, width, n, nodes, bary, values }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Interpolated value; arguments outside the domain are clamped to it.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.a, self.b);
        let panels = self.values.len() / self.n;
        let p = (((x - self.a) / self.width) as usize).min(panels - 1);
        let lo = self.a + p as f64 * self.width;
        let t = 2.0 * (x - lo) / self.width - 1.0;
        let vals = &self.values[p * self.n..(p + 1) * self.n];
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.n {
            let d = t - self.nodes[j];
            if d == 0.0 {
                return vals[j];
            }
            let w = self.bary[j] / d;
            num += w * vals[j];
            den += w;
        }
        num / den
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_smooth_functions() {
        let t = ChebTable::build(|x: f64| (3.0 * x).sin() * (-x).exp(), 0.0, 5.0, 0.25, 16);
        for i in 0..=500 {
            let x = 5.0 * i as f64 / 500.0;
            assert!((t.eval(x) - (3.0 * x).sin() * (-x).exp()).abs() < 1e-13);
        }
        assert_eq!(t.domain(), (0.0, 5.0));
    }

    #[test]
    fn clamps_outside_domain() {
        let t = ChebTable::build(|x: f64| x * x, 1.0, 2.0, 1.0, 8);
        assert!((t.eval(5.0) - 4.0).abs() < 1e-13);
        assert!((t.max_abs() - 4.0).abs() < 0.1);
    }
}
