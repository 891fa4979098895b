//! Upper half-plane model of the hyperbolic plane.
//!
//! Points are `x + iy` with `y > 0`, the metric is `(dx² + dy²)/y²` and the area
//! element `dx dy / y²`. Unit tangent vectors are stored as a base point plus an
//! angle measured counterclockwise from the upward vertical direction.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::mc_map;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    /// Panics if `y` is not strictly positive.
    pub fn new(x: T, y: T) -> Self {
        assert!(y > T::zero(), "point must lie in the upper half-plane");
        Self { x, y }
    }

    pub fn checked(x: T, y: T) -> Result<Self> {
        if !(y > T::zero()) || !x.is_finite() || !y.is_finite() {
            return invalid("point must satisfy y > 0 and be finite");
        }
        Ok(Self { x, y })
    }

    /// The point `i`.
    pub fn i() -> Self {
        Self { x: T::zero(), y: T::one() }
    }

    pub fn to_complex(self) -> Complex<T> {
        Complex::new(self.x, self.y)
    }

    pub fn from_complex(z: Complex<T>) -> Self {
        // roundoff can push a far-away image onto the real axis
        let y = if z.im > T::zero() { z.im } else { T::min_positive_value() };
        Self { x: z.re, y }
    }

    pub fn cast<U: Scalar>(self) -> Point<U> {
        Point { x: U::lit(self.x.as_f64()), y: U::lit(self.y.as_f64()) }
    }
}

/// Unit tangent vector `(z, θ)`; `θ = 0` points straight up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangent<T> {
    pub base: Point<T>,
    pub theta: T,
}

impl<T: Scalar> UnitTangent<T> {
    pub fn new(base: Point<T>, theta: T) -> Self {
        Self { base, theta: normalize_angle(theta) }
    }

    /// Euclidean direction of the vector, as a unit complex number.
    pub fn direction(&self) -> Complex<T> {
        // rotate `i` counterclockwise by theta
        Complex::new(-self.theta.sin(), self.theta.cos())
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.base, self.theta + T::PI())
    }
}

/// Angle reduced to `[0, 2π)`.
pub fn normalize_angle<T: Scalar>(theta: T) -> T {
    let two_pi = T::TAU();
    let mut t = theta % two_pi;
    if t < T::zero() {
        t = t + two_pi;
    }
    if t >= two_pi {
        t = t - two_pi;
    }
    t
}

/// Element of PSL(2, ℝ), stored with determinant one and a canonical sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobiusElement<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Scalar> MobiusElement<T> {
    /// Normalizes `[[a, b], [c, d]]` to determinant one. Rejects `ad − bc ≤ 0`.
    pub fn new(a: T, b: T, c: T, d: T) -> Result<Self> {
        let det = a * d - b * c;
        if !(det > T::zero()) || !det.is_finite() {
            return invalid(format!("matrix determinant must be positive, got {:?}", det));
        }
        let s = det.sqrt().recip();
        Ok(Self::raw(a * s, b * s, c * s, d * s).canonical())
    }

    fn raw(a: T, b: T, c: T, d: T) -> Self {
        Self { a, b, c, d }
    }

    pub fn identity() -> Self {
        Self::raw(T::one(), T::zero(), T::zero(), T::one())
    }

    /// `z ↦ e^{t} z`: translation by `t` along the imaginary axis.
    pub fn diagonal(t: T) -> Self {
        let h = (t * T::lit(0.5)).exp();
        Self::raw(h, T::zero(), T::zero(), h.recip())
    }

    /// Rotation about `i` turning tangent vectors counterclockwise by `angle`.
    pub fn rotation(angle: T) -> Self {
        let h = angle * T::lit(0.5);
        Self::raw(h.cos(), h.sin(), -h.sin(), h.cos()).canonical()
    }

    /// Affine map sending `i` to `z` without rotating tangent vectors.
    pub fn affine_to(z: Point<T>) -> Self {
        let r = z.y.sqrt();
        Self::raw(r, z.x / r, T::zero(), r.recip())
    }

    /// The isometry sending `(i, up)` to `v`.
    pub fn frame(v: &UnitTangent<T>) -> Self {
        Self::affine_to(v.base).compose(&Self::rotation(v.theta))
    }

    /// Flips the overall sign so the first entry that is not negligible is positive.
    pub fn canonical(self) -> Self {
        let tiny = T::lit(1e-14);
        let first = [self.a, self.b, self.c, self.d]
            .into_iter()
            .find(|v| v.abs() > tiny)
            .unwrap_or(self.a);
        if first < T::zero() {
            Self::raw(-self.a, -self.b, -self.c, -self.d)
        } else {
            self
        }
    }

    /// Matrix product `self · other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self::raw(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )
        .canonical()
    }

    pub fn inverse(&self) -> Self {
        Self::raw(self.d, -self.b, -self.c, self.a).canonical()
    }

    pub fn determinant(&self) -> T {
        self.a * self.d - self.b * self.c
    }

    /// Rescales to unit determinant after long products.
    pub fn renormalized(&self) -> Self {
        let s = self.determinant().sqrt().recip();
        Self::raw(self.a * s, self.b * s, self.c * s, self.d * s).canonical()
    }

    pub fn trace(&self) -> T {
        self.a + self.d
    }

    /// Translation length `2 acosh(|tr|/2)`; zero for elliptic or parabolic elements.
    pub fn translation_length(&self) -> T {
        let half = self.trace().abs() * T::lit(0.5);
        if half <= T::one() {
            T::zero()
        } else {
            T::lit(2.0) * half.acosh()
        }
    }

    /// Equality in PSL(2, ℝ): matrices agree up to sign within `tol` (max-norm).
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        let plus = (self.a - other.a)
            .abs()
            .max((self.b - other.b).abs())
            .max((self.c - other.c).abs())
            .max((self.d - other.d).abs());
        let minus = (self.a + other.a)
            .abs()
            .max((self.b + other.b).abs())
            .max((self.c + other.c).abs())
            .max((self.d + other.d).abs());
        plus.min(minus) <= tol
    }

    /// `(az + b)/(cz + d)`.
    pub fn apply(&self, z: Point<T>) -> Point<T> {
        let zc = z.to_complex();
        let num = zc * self.a + self.b;
        let den = zc * self.c + self.d;
        Point::from_complex(num / den)
    }

    /// Pushes a unit tangent vector forward by the differential.
    pub fn apply_tangent(&self, v: &UnitTangent<T>) -> UnitTangent<T> {
        let den = v.base.to_complex() * self.c + self.d;
        let base = self.apply(v.base);
        UnitTangent::new(base, v.theta - T::lit(2.0) * den.arg())
    }

    pub fn cast<U: Scalar>(self) -> MobiusElement<U> {
        MobiusElement {
            a: U::lit(self.a.as_f64()),
            b: U::lit(self.b.as_f64()),
            c: U::lit(self.c.as_f64()),
            d: U::lit(self.d.as_f64()),
        }
    }
}

/// Convenience wrapper for `g.apply(z)`.
pub fn mobius_apply<T: Scalar>(g: &MobiusElement<T>, z: Point<T>) -> Point<T> {
    g.apply(z)
}

/// `cosh d(z, w) = 1 + |z − w|²/(2 Im z Im w)`.
pub fn cosh_dist<T: Scalar>(z: Point<T>, w: Point<T>) -> T {
    let dx = z.x - w.x;
    let dy = z.y - w.y;
    T::one() + (dx * dx + dy * dy) / (T::lit(2.0) * z.y * w.y)
}

/// Hyperbolic distance, in the cancellation-free form `2 asinh(|z − w| / (2√(y₁y₂)))`.
pub fn hyp_dist<T: Scalar>(z: Point<T>, w: Point<T>) -> T {
    let dx = z.x - w.x;
    let dy = z.y - w.y;
    let e = (dx * dx + dy * dy).sqrt();
    T::lit(2.0) * (e / (T::lit(2.0) * (z.y * w.y).sqrt())).asinh()
}

/// Follows the geodesic tangent to `v` for time `t` (negative `t` flows backwards).
pub fn geodesic_flow<T: Scalar>(v: &UnitTangent<T>, t: T) -> UnitTangent<T> {
    let g = MobiusElement::frame(v);
    let w = Complex::new(T::zero(), t.exp());
    let num = w * g.a + g.b;
    let den = w * g.c + g.d;
    let base = Point::from_complex(num / den);
    UnitTangent::new(base, -T::lit(2.0) * den.arg())
}

/// Point at distance `r` from `z0` in direction `theta`.
pub fn polar_from<T: Scalar>(z0: Point<T>, theta: T, r: T) -> Point<T> {
    geodesic_flow(&UnitTangent::new(z0, theta), r).base
}

/// Polar coordinates `(θ, r)` of `z` around `z0`; inverse of [`polar_from`].
pub fn polar_coords<T: Scalar>(z0: Point<T>, z: Point<T>) -> (T, T) {
    let r = hyp_dist(z0, z);
    let w = MobiusElement::affine_to(z0).inverse().apply(z).to_complex();
    let i = Complex::new(T::zero(), T::one());
    let zeta = (w - i) / (w + i);
    let theta = if zeta.norm() == T::zero() { T::zero() } else { normalize_angle(zeta.arg()) };
    (theta, r)
}

/// Unit tangent at `z` pointing towards `w`, and their distance.
pub fn direction_towards<T: Scalar>(z: Point<T>, w: Point<T>) -> (UnitTangent<T>, T) {
    let (theta, r) = polar_coords(z, w);
    (UnitTangent::new(z, theta), r)
}

/// Midpoint of the segment `[z, w]` with the unit tangent there pointing towards `w`,
/// plus the length of the segment.
pub fn segment_midframe<T: Scalar>(z: Point<T>, w: Point<T>) -> (UnitTangent<T>, T) {
    let (v, r) = direction_towards(z, w);
    (geodesic_flow(&v, r * T::lit(0.5)), r)
}

/// Area of a geodesic disc: `2π(cosh r − 1) = 4π sinh²(r/2)`.
pub fn ball_volume<T: Scalar>(r: T) -> T {
    let s = (r * T::lit(0.5)).sinh();
    T::lit(4.0) * T::PI() * s * s
}

/// Radius whose disc has the given area.
pub fn ball_radius_for_volume(v: f64) -> f64 {
    2.0 * (v / (4.0 * std::f64::consts::PI)).sqrt().asinh()
}

/// One uniform sample from the disc `B(z0, r)` by radial CDF inversion.
pub fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, z0: Point<f64>, r: f64) -> Point<f64> {
    let u: f64 = rng.gen();
    let theta: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    // cosh ρ = 1 + u (cosh r − 1), written through sinh² to avoid cancellation
    let s = (r * 0.5).sinh();
    let rho = 2.0 * (u.sqrt() * s).asinh();
    polar_from(z0, theta, rho)
}

/// Radius distributed as `sinh ρ dρ / (cosh r − 1)` on `[0, r]`.
pub fn sample_radius<R: Rng + ?Sized>(rng: &mut R, r: f64) -> f64 {
    let u: f64 = rng.gen();
    2.0 * (u.sqrt() * (r * 0.5).sinh()).asinh()
}

/// `n` i.i.d. uniform samples from `B(z0, r)`, reproducible per seed.
pub fn sample_ball(z0: Point<f64>, r: f64, n: usize, seed: u64) -> Result<Vec<Point<f64>>> {
    if !(r > 0.0) {
        return invalid("sample_ball requires r > 0");
    }
    if n == 0 {
        return invalid("sample_ball requires n >= 1");
    }
    Ok(mc_map(n, seed, 0x6765_6f6d, |rng, _| sample_in_ball(rng, z0, r)))
}
