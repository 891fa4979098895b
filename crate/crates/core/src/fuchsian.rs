//! Finitely generated Fuchsian groups: ball enumeration, injectivity radius,
//! systole, Dirichlet domains and thin-part statistics.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, HypError, Result};
use crate::geom::{cosh_dist, hyp_dist, polar_from, sample_in_ball};
use crate::quad::GaussLegendre;
use crate::rng::{mc_map, Rng};
use crate::{MobiusElement, Point, UnitTangent};

/// Entry-wise tolerance (relative to the entry size) for identifying two group elements.
pub const ELEMENT_TOL: f64 = 1e-9;

/// On-disk form of a group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFile {
    pub name: String,
    pub generators: Vec<[[f64; 2]; 2]>,
    pub base_point: [f64; 2],
    pub max_word_length: usize,
    /// Circumradius about `base_point` of a Dirichlet domain whose sides are paired by
    /// the generators. When present it tightens the enumeration pruning margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_radius: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub name: String,
    pub generators: Vec<MobiusElement>,
    pub base_point: Point,
    pub max_word_length: usize,
    pub tile_radius: Option<f64>,
}

/// Generators together with their inverses, duplicates removed.
#[derive(Debug, Clone)]
struct Letters {
    mats: Vec<MobiusElement>,
    /// `i + 1` for generator `i`, `-(i + 1)` for its inverse.
    codes: Vec<i32>,
    inv: Vec<usize>,
}

impl GroupSpec {
    pub fn new(
        name: impl Into<String>,
        generators: Vec<MobiusElement>,
        base_point: Point,
        max_word_length: usize,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            generators,
            base_point,
            max_word_length,
            tile_radius: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_tile_radius(mut self, r: f64) -> Self {
        self.tile_radius = Some(r);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.generators.is_empty() {
            return invalid("group needs at least one generator");
        }
        if self.max_word_length == 0 {
            return invalid("max_word_length must be at least 1");
        }
        if !(self.base_point.y > 0.0) {
            return invalid("base point must lie in the upper half-plane");
        }
        for g in &self.generators {
            if (g.determinant() - 1.0).abs() > 1e-12 {
                return invalid("generator is not normalized to determinant one");
            }
        }
        if let Some(r) = self.tile_radius {
            if !(r > 0.0) {
                return invalid("tile_radius must be positive");
            }
        }
        Ok(())
    }

    pub fn from_file(file: GroupFile) -> Result<Self> {
        let mut gens = Vec::with_capacity(file.generators.len());
        for (i, m) in file.generators.iter().enumerate() {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if (det - 1.0).abs() > 1e-6 {
                return invalid(format!("generator {i} has determinant {det}, expected 1"));
            }
            gens.push(MobiusElement::new(m[0][0], m[0][1], m[1][0], m[1][1])?);
        }
        let base = Point::checked(file.base_point[0], file.base_point[1])?;
        let mut spec = Self::new(file.name, gens, base, file.max_word_length)?;
        spec.tile_radius = file.tile_radius;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_file(&self) -> GroupFile {
        GroupFile {
            name: self.name.clone(),
            generators: self.generators.iter().map(|g| [[g.a, g.b], [g.c, g.d]]).collect(),
            base_point: [self.base_point.x, self.base_point.y],
            max_word_length: self.max_word_length,
            tile_radius: self.tile_radius,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("group file serializes")
    }

    fn letters(&self) -> Letters {
        let mut mats: Vec<MobiusElement> = Vec::new();
        let mut codes = Vec::new();
        for (i, g) in self.generators.iter().enumerate() {
            for (m, code) in [(*g, i as i32 + 1), (g.inverse(), -(i as i32 + 1))] {
                if !mats.iter().any(|h| same_element(h, &m)) {
                    mats.push(m);
                    codes.push(code);
                }
            }
        }
        let inv = mats
            .iter()
            .map(|m| {
                let mi = m.inverse();
                mats.iter().position(|h| same_element(h, &mi)).expect("letters closed under inverse")
            })
            .collect();
        Letters { mats, codes, inv }
    }

    /// Largest `d(z, g z)` over generators.
    pub fn max_generator_displacement(&self, z: Point) -> f64 {
        self.generators.iter().map(|g| hyp_dist(z, g.apply(z))).fold(0.0, f64::max)
    }

}

fn same_element(g: &MobiusElement, h: &MobiusElement) -> bool {
    let scale = 1.0 + g.a.abs().max(g.b.abs()).max(g.c.abs()).max(g.d.abs());
    g.approx_eq(h, ELEMENT_TOL * scale)
}

#[derive(Debug, Clone, Serialize)]
pub struct BallElement {
    pub element: MobiusElement,
    /// Signed generator indices: `k` is generator `k − 1`, `−k` its inverse.
    pub word: Vec<i32>,
    /// `d(z, γ z)` at the enumeration centre.
    pub displacement: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupBall {
    pub center: Point,
    pub radius: f64,
    /// Sorted by displacement; identity excluded.
    pub elements: Vec<BallElement>,
}

impl GroupBall {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Quantized-matrix index used to detect repeated group elements.
struct ElementIndex {
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl ElementIndex {
    const Q: f64 = 1e-3;

    fn key(g: &MobiusElement) -> (i64, i64) {
        ((g.a / Self::Q).floor() as i64, (g.b / Self::Q).floor() as i64)
    }

    fn find(&self, g: &MobiusElement, stored: &[MobiusElement]) -> Option<u32> {
        let (ka, kb) = Self::key(g);
        for da in -1..=1 {
            for db in -1..=1 {
                if let Some(v) = self.cells.get(&(ka + da, kb + db)) {
                    if let Some(&i) = v.iter().find(|&&i| same_element(&stored[i as usize], g)) {
                        return Some(i);
                    }
                }
            }
        }
        None
    }

    fn insert(&mut self, g: &MobiusElement, idx: u32) {
        self.cells.entry(Self::key(g)).or_default().push(idx);
    }
}

/// All `γ ≠ id` with `d(z, γ z) ≤ R`, by breadth-first search over reduced words.
///
/// A word is extended only while its displacement stays within `R` plus twice the
/// largest generator displacement at `z`; if live words remain at `max_word_length` the search
/// reports [`HypError::EnumerationTruncated`]. With a declared `tile_radius` the point is
/// first moved into the tile by the side pairings, the margin becomes the tile radius
/// plus the distance to the base point, and the result is conjugated back.
pub fn group_ball(spec: &GroupSpec, z: Point, radius: f64) -> Result<GroupBall> {
    if !(radius > 0.0) {
        return invalid("group_ball radius must be positive");
    }
    let letters = spec.letters();
    let Some(tile) = spec.tile_radius else {
        let margin = 2.0 * spec.max_generator_displacement(z);
        return enumerate(spec, &letters, z, radius, margin);
    };
    let (w, delta, delta_word) = pull_towards_base(spec, &letters, z);
    let margin = tile + hyp_dist(w, spec.base_point) + 1e-6;
    let mut ball = enumerate(spec, &letters, w, radius, margin)?;
    if delta_word.is_empty() {
        return Ok(ball);
    }
    let delta_inv = delta.inverse();
    let inv_word: Vec<i32> = delta_word.iter().rev().map(|l| -l).collect();
    for e in &mut ball.elements {
        e.element = delta_inv.compose(&e.element).compose(&delta).renormalized();
        let mut word = inv_word.clone();
        word.extend_from_slice(&e.word);
        word.extend_from_slice(&delta_word);
        e.word = free_reduce(&word);
        e.displacement = hyp_dist(z, e.element.apply(z));
    }
    ball.center = z;
    Ok(ball)
}

/// Greedy descent towards the base point using single letters. For side-pairing
/// generators of a Dirichlet domain this ends inside the domain.
fn pull_towards_base(spec: &GroupSpec, letters: &Letters, z: Point) -> (Point, MobiusElement, Vec<i32>) {
    let z0 = spec.base_point;
    let mut w = z;
    let mut acc = MobiusElement::identity();
    let mut word = Vec::new();
    for _ in 0..10_000 {
        let c0 = cosh_dist(z0, w);
        let best = letters
            .mats
            .iter()
            .enumerate()
            .map(|(j, l)| (j, cosh_dist(z0, l.apply(w))))
            .filter(|&(_, c)| c < c0 * (1.0 - 1e-14))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, _)) => {
                w = letters.mats[j].apply(w);
                acc = letters.mats[j].compose(&acc).renormalized();
                word.insert(0, letters.codes[j]);
            }
            None => break,
        }
    }
    (w, acc, word)
}

fn free_reduce(word: &[i32]) -> Vec<i32> {
    let mut out: Vec<i32> = Vec::with_capacity(word.len());
    for &l in word {
        if out.last() == Some(&-l) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

/// Cap on stored words, far above any desk-scale ball.
const MAX_NODES: usize = 20_000_000;

fn enumerate(spec: &GroupSpec, letters: &Letters, z: Point, radius: f64, margin: f64) -> Result<GroupBall> {
    let bound = radius + margin;
    let cosh_bound = bound.cosh();
    let truncated = || HypError::EnumerationTruncated { radius, max_word_length: spec.max_word_length };

    let mut mats = vec![MobiusElement::identity()];
    let mut parent: Vec<(u32, u32)> = vec![(u32::MAX, u32::MAX)];
    let mut cosh_disp = vec![1.0];
    let mut index = ElementIndex { cells: HashMap::new() };
    index.insert(&mats[0], 0);

    let mut frontier: Vec<u32> = vec![0];
    for _depth in 0..spec.max_word_length {
        let mut next = Vec::new();
        for &ni in &frontier {
            let (_, last) = parent[ni as usize];
            for (j, l) in letters.mats.iter().enumerate() {
                if last != u32::MAX && j == letters.inv[last as usize] {
                    continue;
                }
                let g = mats[ni as usize].compose(l).renormalized();
                let c = cosh_dist(z, g.apply(z));
                if c > cosh_bound {
                    continue;
                }
                if index.find(&g, &mats).is_some() {
                    continue;
                }
                let idx = mats.len() as u32;
                index.insert(&g, idx);
                mats.push(g);
                parent.push((ni, j as u32));
                cosh_disp.push(c);
                next.push(idx);
            }
            if mats.len() > MAX_NODES {
                return Err(truncated());
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    if !frontier.is_empty() {
        return Err(truncated());
    }

    let keep = (radius + 1e-9).cosh();
    let mut elements: Vec<BallElement> = (1..mats.len())
        .filter(|&i| cosh_disp[i] <= keep)
        .map(|i| {
            let mut word = Vec::new();
            let mut k = i;
            while k != 0 {
                let (p, l) = parent[k];
                word.push(letters.codes[l as usize]);
                k = p as usize;
            }
            word.reverse();
            BallElement { element: mats[i], word, displacement: hyp_dist(z, mats[i].apply(z)) }
        })
        .collect();
    elements.sort_by(|a, b| a.displacement.total_cmp(&b.displacement));
    Ok(GroupBall { center: z, radius, elements })
}

/// `(cosh(R + ℓ) − 1)/(cosh ℓ − 1)`: at most this many orbit points of a group with
/// systole `ℓ` lie within distance `R`.
pub fn lattice_count_bound(radius: f64, systole: f64) -> f64 {
    ((radius + systole).cosh() - 1.0) / (systole.cosh() - 1.0)
}

/// Exponent sum of generator `generator` (0-based) along a word.
pub fn exponent_sum(word: &[i32], generator: usize) -> i32 {
    let code = generator as i32 + 1;
    word.iter().map(|&l| if l == code { 1 } else if l == -code { -1 } else { 0 }).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InjRadius {
    pub value: f64,
    /// No non-trivial element within the search cap; `value` is only a lower bound.
    pub capped: bool,
}

pub fn injectivity_radius(spec: &GroupSpec, z: Point, r_cap: f64) -> Result<InjRadius> {
    let ball = group_ball(spec, z, r_cap)?;
    Ok(match ball.elements.first() {
        Some(e) => InjRadius { value: 0.5 * e.displacement, capped: false },
        None => InjRadius { value: 0.5 * r_cap, capped: true },
    })
}

/// Length of the shortest closed geodesic: the least translation length in the ball
/// of radius `search_radius` about the base point. Exact once `search_radius`
/// exceeds the systole plus the diameter of the Dirichlet domain.
pub fn systole(spec: &GroupSpec, search_radius: f64) -> Result<f64> {
    let ball = group_ball(spec, spec.base_point, search_radius)?;
    let min = ball
        .elements
        .iter()
        .map(|e| e.element.translation_length())
        .filter(|&l| l > 1e-9)
        .fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        Ok(min)
    } else {
        Err(HypError::EnumerationTruncated { radius: search_radius, max_word_length: spec.max_word_length })
    }
}

/// Least displacement over the given points (twice the smallest injectivity radius
/// among them), searching balls of radius `r_cap`.
pub fn min_displacement_over(spec: &GroupSpec, points: &[Point], r_cap: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for &z in points {
        let ball = group_ball(spec, z, r_cap)?;
        if let Some(e) = ball.elements.first() {
            best = best.min(e.displacement);
        }
    }
    Ok(best)
}

/// Membership in the Dirichlet domain centred at the base point.
pub fn dirichlet_contains(spec: &GroupSpec, z: Point, r_cap: f64) -> Result<bool> {
    let z0 = spec.base_point;
    let radius = 2.0 * hyp_dist(z0, z) + 1e-6;
    if radius > r_cap {
        return Err(HypError::EnumerationTruncated { radius, max_word_length: spec.max_word_length });
    }
    let ball = group_ball(spec, z0, radius)?;
    Ok(contains_with(&ball, z))
}

/// Dirichlet test against a ball enumerated at the domain centre. Valid when the ball
/// radius is at least `2 d(z0, z)`.
fn contains_with(ball: &GroupBall, z: Point) -> bool {
    let z0 = ball.center;
    let d0 = hyp_dist(z0, z);
    let c0 = cosh_dist(z0, z);
    let cut = 2.0 * d0 + 1e-6;
    for e in &ball.elements {
        if e.displacement > cut {
            break;
        }
        if cosh_dist(z0, e.element.apply(z)) < c0 {
            return false;
        }
    }
    true
}

/// A fundamental region for a group action, with the operations the estimators need.
pub trait Quotient: Sync {
    /// Hyperbolic area of the region.
    fn volume(&self) -> f64;
    fn contains(&self, z: Point) -> bool;
    /// Uniform sample from the region.
    fn sample(&self, rng: &mut Rng) -> Point;
    /// `(γ z, γ)` with `γ z` in the fundamental strip or domain.
    fn reduce(&self, z: Point) -> (Point, MobiusElement);
    /// Every `γ ≠ id` with `d(z, γ z) ≤ r`, paired with that displacement, for `z` in the region.
    fn translates(&self, z: Point, r: f64) -> Result<Vec<(MobiusElement, f64)>>;

    fn sample_tangent(&self, rng: &mut Rng) -> UnitTangent {
        let z = self.sample(rng);
        UnitTangent::new(z, rng.gen::<f64>() * std::f64::consts::TAU)
    }

    fn reduce_tangent(&self, v: &UnitTangent) -> UnitTangent {
        let (_, g) = self.reduce(v.base);
        g.apply_tangent(v)
    }
}

/// Dirichlet domain `{z : d(z0, z) < d(z0, γ z) for all γ ≠ id}` of a cocompact group.
#[derive(Debug, Clone)]
pub struct DirichletDomain {
    pub center: Point,
    /// Circumradius about the centre.
    pub radius: f64,
    pub volume: f64,
    /// Directions of the vertices seen from the centre, ascending in `[0, 2π)`.
    pub vertex_angles: Vec<f64>,
    /// Displacement range, beyond twice the circumradius, for which `translates` is exact.
    pub reach: f64,
    ball: GroupBall,
    max_word_length: usize,
}

const RAYS: usize = 720;

impl DirichletDomain {
    pub fn new(spec: &GroupSpec) -> Result<Self> {
        Self::with_reach(spec, 0.0)
    }

    /// Builds the domain with enough group elements stored to answer `translates(z, r)`
    /// for `r ≤ reach`.
    pub fn with_reach(spec: &GroupSpec, reach: f64) -> Result<Self> {
        let z0 = spec.base_point;
        let mut b = (2.0 * spec.max_generator_displacement(z0)).max(1.0) + 0.5;
        let (ball, radii) = loop {
            let ball = group_ball(spec, z0, b)?;
            let limit = 0.5 * (b - 1e-6);
            let mut radii = Vec::with_capacity(RAYS);
            let mut open = None;
            for i in 0..RAYS {
                let theta = std::f64::consts::TAU * i as f64 / RAYS as f64;
                match boundary_radius(&ball, theta, limit) {
                    Some(r) => radii.push(r),
                    None => {
                        open = Some(theta);
                        break;
                    }
                }
            }
            match open {
                None => break (ball, radii),
                Some(theta) if b > 40.0 => return Err(HypError::UnboundedDomain { theta }),
                Some(_) => b *= 1.5,
            }
        };
        let limit = 0.5 * (b - 1e-6);
        let ray_at = |theta: f64| boundary_radius(&ball, theta, limit).unwrap_or(limit);

        let step = std::f64::consts::TAU / RAYS as f64;
        let mut vertices: Vec<(f64, f64)> = Vec::new();
        for i in 0..RAYS {
            let prev = radii[(i + RAYS - 1) % RAYS];
            let next = radii[(i + 1) % RAYS];
            if radii[i] >= prev && radii[i] > next {
                let centre = step * i as f64;
                let (t, r) = golden_max(&ray_at, centre - step, centre + step);
                let t = crate::geom::normalize_angle(t);
                if !vertices.iter().any(|&(u, _)| angle_gap(u, t) < 1e-7) {
                    vertices.push((t, r));
                }
            }
        }
        if vertices.len() < 3 {
            return invalid("could not resolve the vertices of the Dirichlet domain");
        }
        vertices.sort_by(|a, b| a.0.total_cmp(&b.0));
        let radius = vertices.iter().map(|v| v.1).fold(0.0, f64::max);

        let gl = GaussLegendre::cached(24);
        let mut volume = 0.0;
        for k in 0..vertices.len() {
            let a = vertices[k].0;
            let mut c = vertices[(k + 1) % vertices.len()].0;
            if c <= a {
                c += std::f64::consts::TAU;
            }
            volume += gl.integrate(|t: f64| ray_at(t).cosh() - 1.0, a, c);
        }

        let needed = 2.0 * radius + reach + 1e-3;
        let ball = if needed > b { group_ball(spec, z0, needed)? } else { ball };
        let reach = ball.radius - 2.0 * radius;
        Ok(Self {
            center: z0,
            radius,
            volume,
            vertex_angles: vertices.iter().map(|v| v.0).collect(),
            reach,
            ball,
            max_word_length: spec.max_word_length,
        })
    }

    /// Distance from the centre to the boundary in direction `theta`.
    pub fn boundary_radius(&self, theta: f64) -> f64 {
        boundary_radius(&self.ball, theta, self.radius + 1.0).unwrap_or(self.radius)
    }

    /// Stored group elements (at the centre), sorted by displacement.
    pub fn elements(&self) -> &[BallElement] {
        &self.ball.elements
    }

    /// Number of translates `γ D` (identity included) that contain `z`.
    pub fn claims(&self, z: Point) -> usize {
        let own = usize::from(self.contains(z));
        own + self
            .ball
            .elements
            .iter()
            .filter(|e| {
                let w = e.element.apply(z);
                hyp_dist(self.center, w) <= self.radius && self.contains(w)
            })
            .count()
    }

    fn translates_where<F: Fn(&BallElement) -> bool>(
        &self,
        z: Point,
        r: f64,
        keep: F,
    ) -> Result<Vec<(MobiusElement, f64)>> {
        let d0 = hyp_dist(self.center, z);
        if r + 2.0 * d0 > self.ball.radius + 1e-12 {
            return Err(HypError::EnumerationTruncated {
                radius: r + 2.0 * d0,
                max_word_length: self.max_word_length,
            });
        }
        let cut = r + 2.0 * d0;
        let cr = r.cosh();
        let mut out = Vec::new();
        for e in &self.ball.elements {
            if e.displacement > cut {
                break;
            }
            if !keep(e) {
                continue;
            }
            let c = cosh_dist(z, e.element.apply(z));
            if c <= cr {
                out.push((e.element, c.max(1.0).acosh()));
            }
        }
        Ok(out)
    }

    /// Translates restricted to the kernel of `γ ↦ (exponent sum of generator) mod n`,
    /// the deck group of a cyclic `n`-fold cover.
    pub fn translates_in_cover(
        &self,
        z: Point,
        r: f64,
        generator: usize,
        n: i32,
    ) -> Result<Vec<(MobiusElement, f64)>> {
        if n < 1 {
            return invalid("cover degree must be at least 1");
        }
        self.translates_where(z, r, |e| exponent_sum(&e.word, generator).rem_euclid(n) == 0)
    }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// First exit radius along the ray, or `None` if the ray stays inside up to `limit`.
fn boundary_radius(ball: &GroupBall, theta: f64, limit: f64) -> Option<f64> {
    let inside = |r: f64| contains_with(ball, polar_from(ball.center, theta, r));
    let mut lo = 0.0;
    let mut hi = 0.25_f64.min(limit);
    while inside(hi) {
        if hi >= limit {
            return None;
        }
        lo = hi;
        hi = (2.0 * hi).min(limit);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-14 {
            break;
        }
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > 1e-11 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t).max(fc).max(fd))
}

impl Quotient for DirichletDomain {
    fn volume(&self) -> f64 {
        self.volume
    }

    fn contains(&self, z: Point) -> bool {
        hyp_dist(self.center, z) <= self.radius + 1e-12 && contains_with(&self.ball, z)
    }

    fn sample(&self, rng: &mut Rng) -> Point {
        loop {
            let z = sample_in_ball(rng, self.center, self.radius);
            if contains_with(&self.ball, z) {
                return z;
            }
        }
    }

    fn reduce(&self, z: Point) -> (Point, MobiusElement) {
        let z0 = self.center;
        let mut w = z;
        let mut acc = MobiusElement::identity();
        for _ in 0..100_000 {
            let d0 = hyp_dist(z0, w);
            let c0 = cosh_dist(z0, w);
            let cut = (2.0 * d0 + 1e-6).min(self.ball.radius);
            let mut best: Option<(f64, &BallElement)> = None;
            for e in &self.ball.elements {
                if e.displacement > cut {
                    break;
                }
                let c = cosh_dist(z0, e.element.apply(w));
                if c < c0 && best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, e));
                }
            }
            match best {
                Some((_, e)) => {
                    w = e.element.apply(w);
                    acc = e.element.compose(&acc).renormalized();
                }
                None => return (w, acc),
            }
        }
        (w, acc)
    }

    fn translates(&self, z: Point, r: f64) -> Result<Vec<(MobiusElement, f64)>> {
        self.translates_where(z, r, |_| true)
    }
}

/// Fundamental strip `e^{-L/2} ≤ |z| < e^{L/2}` of the cyclic group `⟨z ↦ e^L z⟩`, cut
/// off at Fermi distance `width` from the imaginary axis so that it has finite area.
#[derive(Debug, Clone, Copy)]
pub struct CylinderWindow {
    pub length: f64,
    pub width: f64,
}

impl CylinderWindow {
    pub fn new(length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) {
            return invalid("cylinder length and width must be positive");
        }
        Ok(Self { length, width })
    }

    /// Reads the translation length from a one-generator diagonal group.
    pub fn from_spec(spec: &GroupSpec, width: f64) -> Result<Self> {
        match spec.generators.as_slice() {
            [g] if g.b.abs() < 1e-12 && g.c.abs() < 1e-12 => {
                Self::new(2.0 * (g.a.abs().ln()).abs(), width)
            }
            _ => invalid("cylinder window needs a single diagonal generator"),
        }
    }

    /// Fermi coordinates `(s, r)`: position along the axis and signed distance from it.
    pub fn fermi(z: Point) -> (f64, f64) {
        (0.5 * (z.x * z.x + z.y * z.y).ln(), (z.x / z.y).asinh())
    }

    pub fn from_fermi(s: f64, r: f64) -> Point {
        Point::new(s.exp() * r.tanh(), s.exp() / r.cosh())
    }

    /// `cosh d(z, γ^k z)` for a point at Fermi distance `r`.
    pub fn cosh_displacement(&self, r: f64, k: i64) -> f64 {
        let sh = (0.5 * k as f64 * self.length).sinh();
        1.0 + 2.0 * r.cosh().powi(2) * sh * sh
    }
}

impl Quotient for CylinderWindow {
    fn volume(&self) -> f64 {
        2.0 * self.length * self.width.sinh()
    }

    fn contains(&self, z: Point) -> bool {
        let (s, r) = Self::fermi(z);
        s >= -0.5 * self.length && s < 0.5 * self.length && r.abs() <= self.width
    }

    fn sample(&self, rng: &mut Rng) -> Point {
        let s = (rng.gen::<f64>() - 0.5) * self.length;
        let r = ((2.0 * rng.gen::<f64>() - 1.0) * self.width.sinh()).asinh();
        Self::from_fermi(s, r)
    }

    fn reduce(&self, z: Point) -> (Point, MobiusElement) {
        let (s, _) = Self::fermi(z);
        let k = ((s + 0.5 * self.length) / self.length).floor();
        let g = MobiusElement::diagonal(-k * self.length);
        (g.apply(z), g)
    }

    fn translates(&self, z: Point, r: f64) -> Result<Vec<(MobiusElement, f64)>> {
        let (_, rho) = Self::fermi(z);
        let cr = r.cosh();
        let mut out = Vec::new();
        let mut k = 1i64;
        loop {
            let c = self.cosh_displacement(rho, k);
            if c > cr {
                break;
            }
            let d = c.acosh();
            out.push((MobiusElement::diagonal(k as f64 * self.length), d));
            out.push((MobiusElement::diagonal(-(k as f64) * self.length), d));
            k += 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThinPart {
    pub fraction: f64,
    /// One-sigma binomial error.
    pub stderr: f64,
    pub n: usize,
}

/// Monte Carlo fraction of the domain where the injectivity radius is below `r`.
pub fn thin_part_fraction(spec: &GroupSpec, r: f64, n: usize, seed: u64) -> Result<ThinPart> {
    if !(r > 0.0) || n == 0 {
        return invalid("thin_part_fraction needs R > 0 and n >= 1");
    }
    let domain = DirichletDomain::with_reach(spec, 2.0 * r)?;
    thin_part_fraction_in(&domain, r, n, seed)
}

pub fn thin_part_fraction_in<Q: Quotient>(q: &Q, r: f64, n: usize, seed: u64) -> Result<ThinPart> {
    let hits = mc_map(n, seed, 0x7468_696e, |rng, _| {
        let z = q.sample(rng);
        q.translates(z, 2.0 * r).map(|t| t.iter().any(|&(_, d)| d < 2.0 * r))
    });
    let mut k = 0usize;
    for h in hits {
        k += usize::from(h?);
    }
    let p = k as f64 / n as f64;
    Ok(ThinPart { fraction: p, stderr: (p * (1.0 - p) / n as f64).sqrt(), n })
}

/// Genus-two surface glued from the regular octagon with interior angles `π/4`,
/// opposite sides identified. Generator `k` translates along the
/// geodesic through `i` in direction `kπ/4` by twice the apothem.
pub fn octagon_group() -> GroupSpec {
    let apothem = (1.0 + std::f64::consts::SQRT_2).acosh();
    let t = MobiusElement::diagonal(2.0 * apothem);
    let generators = (0..8)
        .map(|k| {
            let rot = MobiusElement::rotation(k as f64 * std::f64::consts::FRAC_PI_4);
            rot.compose(&t).compose(&rot.inverse()).renormalized()
        })
        .collect();
    let circumradius = ((1.0 + std::f64::consts::SQRT_2).powi(2)).acosh();
    GroupSpec::new("bolza", generators, Point::i(), 24)
        .expect("octagon generators are valid")
        .with_tile_radius(circumradius)
}

/// `⟨z ↦ e^L z⟩`.
pub fn cyclic_group(length: f64) -> Result<GroupSpec> {
    if !(length > 0.0) {
        return invalid("translation length must be positive");
    }
    GroupSpec::new(format!("cyclic_L{length}"), vec![MobiusElement::diagonal(length)], Point::i(), 64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn octagon() -> &'static (GroupSpec, DirichletDomain) {
        static CELL: once_cell::sync::Lazy<(GroupSpec, DirichletDomain)> = once_cell::sync::Lazy::new(|| {
            let g = octagon_group();
            let d = DirichletDomain::with_reach(&g, 4.0).unwrap();
            (g, d)
        });
        &CELL
    }

    #[test]
    fn cyclic_ball_has_four_elements() {
        let l = 2.0;
        let g = cyclic_group(l).unwrap();
        let ball = group_ball(&g, Point::i(), 2.0 * l + 0.1).unwrap();
        assert_eq!(ball.len(), 4);
        // brute force over |k| <= 4
        for k in [-2i32, -1, 1, 2] {
            let gk = MobiusElement::diagonal(k as f64 * l);
            assert!(ball.elements.iter().any(|e| e.element.approx_eq(&gk, 1e-12)));
        }
        for e in &ball.elements {
            assert!((e.displacement - l * e.word.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_below_systole_is_empty() {
        let (g, _) = octagon();
        assert!(group_ball(g, g.base_point, 3.0).unwrap().is_empty());
        let c = cyclic_group(2.0).unwrap();
        assert!(group_ball(&c, Point::new(0.3, 0.5), 1.9).unwrap().is_empty());
    }

    #[test]
    fn octagon_counts_grow_within_lattice_bound() {
        let (g, _) = octagon();
        let sys = systole(g, 8.0).unwrap();
        let mut last = 0;
        for r in [2.0, 4.0, 6.0] {
            let n = group_ball(g, g.base_point, r).unwrap().len();
            assert!(n >= last);
            assert!((n as f64) <= lattice_count_bound(r, sys));
            last = n;
        }
        assert!(last > 0);
    }

    #[test]
    fn ball_has_no_duplicates_and_respects_radius() {
        let (g, _) = octagon();
        let ball = group_ball(g, Point::new(0.1, 1.2), 6.0).unwrap();
        for (i, a) in ball.elements.iter().enumerate() {
            assert!(a.displacement <= 6.0 + 1e-9);
            assert!(!a.element.approx_eq(&MobiusElement::identity(), 1e-9));
            for b in &ball.elements[i + 1..] {
                assert!(!same_element(&a.element, &b.element));
            }
        }
    }

    #[test]
    fn words_multiply_to_elements() {
        let (g, _) = octagon();
        let ball = group_ball(g, g.base_point, 7.0).unwrap();
        for e in &ball.elements {
            let mut m = MobiusElement::identity();
            for &l in &e.word {
                let gen = g.generators[(l.unsigned_abs() - 1) as usize];
                m = m.compose(&if l > 0 { gen } else { gen.inverse() });
            }
            assert!(same_element(&m, &e.element));
        }
    }

    #[test]
    fn truncation_is_reported() {
        let mut g = cyclic_group(1.0).unwrap();
        g.max_word_length = 3;
        let r = group_ball(&g, Point::i(), 5.5);
        assert!(matches!(r, Err(HypError::EnumerationTruncated { .. })));
    }

    #[test]
    fn cyclic_injectivity_radius() {
        let l = 2.0;
        let g = cyclic_group(l).unwrap();
        let ir = injectivity_radius(&g, Point::new(0.0, 3.0), 10.0).unwrap();
        assert!(!ir.capped && (ir.value - 1.0).abs() < 1e-12);
        let z = Point::new(1.3, 0.8);
        let brute = (-10..=10)
            .filter(|&k| k != 0)
            .map(|k| hyp_dist(z, MobiusElement::diagonal(k as f64 * l).apply(z)))
            .fold(f64::INFINITY, f64::min);
        let ir = injectivity_radius(&g, z, 10.0).unwrap();
        assert!((ir.value - 0.5 * brute).abs() < 1e-12);
        let far = injectivity_radius(&g, Point::new(40.0, 0.01), 5.0).unwrap();
        assert!(far.capped && far.value == 2.5);
    }

    #[test]
    fn systole_examples() {
        let c = cyclic_group(2.0).unwrap();
        assert!((systole(&c, 5.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(systole(&c, 1.0).is_err());

        let (g, d) = octagon();
        let sys = systole(g, 3.1 + 2.0 * d.radius).unwrap();
        let expect = 2.0 * (1.0 + std::f64::consts::SQRT_2).acosh();
        assert!((sys - expect).abs() < 1e-9);
        // net oracle at two resolutions, centre included
        for rings in [(4usize, 5usize), (6, 8)] {
            let mut net = vec![g.base_point];
            for i in 1..=rings.0 {
                for j in 0..rings.1 {
                    let t = std::f64::consts::TAU * (j as f64 + 0.5 * i as f64) / rings.1 as f64;
                    let z = polar_from(g.base_point, t, 0.45 * d.radius * i as f64 / rings.0 as f64);
                    net.push(z);
                }
            }
            net.truncate(20);
            let mut min_net = f64::INFINITY;
            for z in &net {
                let t = d.translates(*z, 4.0).unwrap();
                let m = t.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                assert!(sys <= m + 1e-9);
                min_net = min_net.min(m);
            }
            assert!((min_net - sys).abs() < 1e-6);
        }
    }

    #[test]
    fn octagon_dirichlet_domain() {
        let (g, d) = octagon();
        assert_eq!(d.vertex_angles.len(), 8);
        assert!((d.volume - 4.0 * std::f64::consts::PI).abs() < 1e-8, "{}", d.volume);
        assert!((d.radius - g.tile_radius.unwrap()).abs() < 1e-9);
        let apothem = (1.0 + std::f64::consts::SQRT_2).acosh();
        assert!((d.boundary_radius(0.0) - apothem).abs() < 1e-10);
        for (k, t) in d.vertex_angles.iter().enumerate() {
            let want = std::f64::consts::PI * (2 * k + 1) as f64 / 8.0;
            assert!(angle_gap(*t, want) < 1e-6);
        }
    }

    #[test]
    fn dirichlet_contains_examples() {
        let c = cyclic_group(2.0).unwrap();
        assert!(dirichlet_contains(&c, Point::i(), 5.0).unwrap());
        assert!(!dirichlet_contains(&c, Point::new(0.0, (0.6f64 * 2.0).exp()), 5.0).unwrap());
        assert!(dirichlet_contains(&c, Point::new(0.0, (0.4f64 * 2.0).exp()), 5.0).unwrap());
        assert!(dirichlet_contains(&c, Point::new(0.0, 50.0), 3.0).is_err());
    }

    #[test]
    fn rejected_points_have_accepted_translates() {
        let (_, d) = octagon();
        let mut rng = stream_rng(3, 0);
        let mut rejected = 0;
        for _ in 0..400 {
            let z = sample_in_ball(&mut rng, d.center, 5.0);
            if d.contains(z) {
                continue;
            }
            rejected += 1;
            let (w, gam) = d.reduce(z);
            assert!(d.contains(w));
            let back = gam.apply(z);
            assert!(hyp_dist(back, w) < 1e-8);
        }
        assert!(rejected > 100);
    }

    #[test]
    fn tiling_claims_each_point_once() {
        let (_, d) = octagon();
        let mut rng = stream_rng(4, 0);
        let n = 2000;
        let ones = (0..n).filter(|_| d.claims(sample_in_ball(&mut rng, d.center, 2.0)) == 1).count();
        assert_eq!(ones, n);
    }

    #[test]
    fn domain_sampling_is_uniform_in_area() {
        let (_, d) = octagon();
        // fraction of samples inside the inscribed disc equals its share of the area
        let apothem = (1.0 + std::f64::consts::SQRT_2).acosh();
        let n = 40_000;
        let hits = mc_map(n, 9, 1, |rng, _| hyp_dist(d.center, d.sample(rng)) < apothem);
        let p = hits.iter().filter(|&&h| h).count() as f64 / n as f64;
        let want = crate::geom::ball_volume(apothem) / d.volume;
        assert!((p - want).abs() < 4.0 * (want * (1.0 - want) / n as f64).sqrt());
    }

    #[test]
    fn thin_part_examples() {
        let (g, _) = octagon();
        let sys = 2.0 * (1.0 + std::f64::consts::SQRT_2).acosh();
        let t = thin_part_fraction(g, 0.49 * sys, 3000, 1).unwrap();
        assert_eq!(t.fraction, 0.0);
        let c = CylinderWindow::new(2.0, 1.0).unwrap();
        let big = thin_part_fraction_in(&c, 20.0, 2000, 1).unwrap();
        assert_eq!(big.fraction, 1.0);
        let mut last = 0.0;
        for r in [1.0, 1.1, 1.2, 1.3] {
            let f = thin_part_fraction_in(&c, r, 4000, 5).unwrap().fraction;
            assert!(f >= last);
            last = f;
        }
        assert!(last > 0.0 && last < 1.0);
    }

    #[test]
    fn thin_part_large_radius_on_octagon() {
        let (g, d) = octagon();
        let t = thin_part_fraction(g, d.radius + 0.5 * 3.06, 500, 2).unwrap();
        assert_eq!(t.fraction, 1.0);
    }

    #[test]
    fn cylinder_window_geometry() {
        let c = CylinderWindow::new(2.0, 1.5).unwrap();
        let z = CylinderWindow::from_fermi(0.3, -0.7);
        let (s, r) = CylinderWindow::fermi(z);
        assert!((s - 0.3).abs() < 1e-14 && (r + 0.7).abs() < 1e-14);
        let on_axis = Point::new(0.0, 0.3f64.exp());
        assert!((hyp_dist(on_axis, z) - 0.7).abs() < 1e-12);
        for k in 1..4 {
            let g = MobiusElement::diagonal(k as f64 * 2.0);
            assert!((cosh_dist(z, g.apply(z)) - c.cosh_displacement(-0.7, k)).abs() < 1e-9);
        }
        let t = c.translates(z, 5.0).unwrap();
        let brute = (-6i32..=6)
            .filter(|&k| k != 0)
            .filter(|&k| hyp_dist(z, MobiusElement::diagonal(k as f64 * 2.0).apply(z)) <= 5.0)
            .count();
        assert_eq!(t.len(), brute);
        let far = Point::new(-3.0, 20.0);
        let (w, g) = c.reduce(far);
        assert!(CylinderWindow::fermi(w).0.abs() <= 1.0);
        assert!(hyp_dist(g.apply(far), w) < 1e-12);
        let spec = cyclic_group(2.0).unwrap();
        assert!((CylinderWindow::from_spec(&spec, 1.0).unwrap().length - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_volume_matches_monte_carlo() {
        let c = CylinderWindow::new(2.0, 1.2).unwrap();
        // uniform samples from a disc covering the window, counted against area
        let zc = Point::i();
        let r = 4.0;
        let n = 80_000;
        let pts = crate::geom::sample_ball(zc, r, n, 3).unwrap();
        let inside = pts.iter().filter(|&&z| c.contains(z)).count() as f64 / n as f64;
        let est = inside * crate::geom::ball_volume(r);
        let sd = (inside * (1.0 - inside) / n as f64).sqrt() * crate::geom::ball_volume(r);
        assert!((est - c.volume()).abs() < 4.0 * sd, "{est} {}", c.volume());
    }

    #[test]
    fn json_roundtrip_and_shipped_files() {
        let g = octagon_group();
        let back = GroupSpec::from_json(&g.to_json()).unwrap();
        for (a, b) in back.generators.iter().zip(&g.generators) {
            assert!(a.approx_eq(b, 1e-14));
        }
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/");
        let shipped = GroupSpec::load(format!("{dir}bolza.json")).unwrap();
        assert_eq!(shipped.generators.len(), 8);
        for (a, b) in shipped.generators.iter().zip(&g.generators) {
            assert!(a.approx_eq(b, 1e-12));
        }
        let cyc = GroupSpec::load(format!("{dir}cyclic_L2.json")).unwrap();
        assert!((systole(&cyc, 5.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(GroupSpec::from_json(r#"{"name":"x","generators":[[[2,0],[0,2]]],"base_point":[0,1],"max_word_length":3}"#).is_err());
        assert!(GroupSpec::from_json(r#"{"name":"x","generators":[],"base_point":[0,1],"max_word_length":3}"#).is_err());
    }

    #[test]
    fn cover_translates_are_a_subgroup_slice() {
        let (_, d) = octagon();
        let z = polar_from(d.center, 0.4, 0.7);
        let all = d.translates(z, 4.0).unwrap();
        let one = d.translates_in_cover(z, 4.0, 0, 1).unwrap();
        let two = d.translates_in_cover(z, 4.0, 0, 2).unwrap();
        assert_eq!(all.len(), one.len());
        assert!(two.len() < all.len());
        assert_eq!(exponent_sum(&[1, 2, -1, 1, -3], 0), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conjugation_consistency(t in 0.0..6.3f64, r in 0.0..1.0f64, k in 0usize..8) {
            let (g, _) = octagon();
            let z = polar_from(g.base_point, t, r);
            let gz = g.generators[k].apply(z);
            let a = group_ball(g, z, 5.0).unwrap();
            let b = group_ball(g, gz, 5.0).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.elements.iter().zip(&b.elements) {
                prop_assert!((x.displacement - y.displacement).abs() < 1e-9);
            }
        }

        #[test]
        fn lattice_count_bound_holds(t in 0.0..6.3f64, r in 0.0..2.4f64, rad in 1.0..6.0f64) {
            let (g, _) = octagon();
            let sys = 2.0 * (1.0 + std::f64::consts::SQRT_2).acosh();
            let z = polar_from(g.base_point, t, r);
            let n = group_ball(g, z, rad).unwrap().len();
            prop_assert!((n as f64) <= lattice_count_bound(rad, sys));
        }

        #[test]
        fn injectivity_radius_is_lipschitz(t1 in 0.0..6.3f64, r1 in 0.0..2.4f64, t2 in 0.0..6.3f64, r2 in 0.0..2.4f64) {
            let (g, d) = octagon();
            let z = polar_from(g.base_point, t1, r1);
            let w = polar_from(g.base_point, t2, r2);
            let ir = |p: Point| 0.5 * d.translates(p, 4.0).unwrap().iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let (a, b) = (ir(z), ir(w));
            prop_assert!((a - b).abs() <= hyp_dist(z, w) + 1e-9);
            prop_assert!(3.05 <= 2.0 * a.min(b) + 1e-9);
        }
    }
}
