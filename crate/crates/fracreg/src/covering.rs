//! Feature-proportional coverings of singular neighborhoods.
//!
//! Elements come from dyadic trees anchored at the singular feature: an octree
//! for balls, a quadtree in the face plane for half-balls and a binary tree
//! along the edge for wedges. A cell is discarded when a conservative
//! three-valued version of the partition predicate proves it misses the
//! truncated neighborhood, and emitted as an element once an element centred
//! at the cell centre provably contains every neighborhood point of the cell.
//! Because the trees are anchored at the feature and all cutoffs are scale
//! invariant, generation `k+1` is the image of generation `k` under a dilation
//! by `1/2`, which is what makes the overlap count depth independent.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polytope::{add, axpy, cross, dot, norm, scale, sub, unit, Distances, GeomError, Kind, NeighborhoodSpec, Polytope, P3};
use crate::quadrature::{dihedral_from, face_corner, in_face_direction};

#[derive(Debug, Error)]
pub enum CoverError {
    #[error("covering configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, CoverError>;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const MAX_CELLS: usize = 20_000_000;
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Ball,
    HalfBall,
    Wedge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringElement {
    pub shape: Shape,
    pub center: P3,
    /// Radius at scale `c`; the enlarged element has radius `radius·chat/c`.
    #[serde(rename = "R")]
    pub radius: f64,
    pub c: f64,
    pub chat: f64,
    pub generation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Inward normals of the planes through the centre that cut the ball.
    #[serde(default, skip_serializing)]
    pub planes: Vec<P3>,
    /// Wedge is the intersection of its half-spaces (dihedral below `π`).
    #[serde(default, skip_serializing)]
    pub convex: bool,
}

impl CoveringElement {
    pub fn ball(center: P3, radius: f64, c: f64, chat: f64) -> Self {
        Self { shape: Shape::Ball, center, radius, c, chat, generation: 0, theta: None, planes: vec![], convex: true }
    }

    pub fn radius_at(&self, kappa: f64) -> f64 {
        self.radius * kappa / self.c
    }

    /// Membership of `x` in the element scaled to factor `kappa`.
    pub fn contains_at(&self, x: P3, kappa: f64) -> bool {
        let r = self.radius_at(kappa);
        let v = sub(x, self.center);
        if dot(v, v) >= r * r {
            return false;
        }
        match self.shape {
            Shape::Ball => true,
            Shape::HalfBall => dot(self.planes[0], v) > 0.0,
            Shape::Wedge if self.convex => self.planes.iter().all(|n| dot(*n, v) > 0.0),
            Shape::Wedge => self.planes.iter().any(|n| dot(*n, v) > 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub n_emp: usize,
    pub samples: usize,
    /// `histogram[k]` samples lie in exactly `k` enlarged elements.
    pub histogram: Vec<usize>,
    /// Radius comparability constant per generation.
    pub c_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub samples: usize,
    pub covered: usize,
    pub fraction: f64,
    pub misses: Vec<P3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Feature {
    Vertex(usize),
    Edge(usize),
    Face(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Window {
    None,
    Axis { dir: P3, half: f64 },
    Square { w1: P3, w2: P3, half: f64 },
}

/// Scale, anchor and local axes of one truncated neighborhood.
#[derive(Debug, Clone)]
struct Target {
    spec: NeighborhoodSpec,
    shape: Shape,
    feature: Feature,
    outer: f64,
    trunc: f64,
    anchor: P3,
    window: Window,
    xi_p: f64,
    depth: usize,
}

impl Target {
    fn new(p: &Polytope, spec: NeighborhoodSpec, depth: usize) -> Result<Self> {
        let xi = spec.xi;
        let (shape, feature, outer) = match spec.kind {
            Kind::V => (Shape::Ball, Feature::Vertex(spec.v.unwrap()), xi),
            Kind::E => (Shape::Ball, Feature::Edge(spec.e.unwrap()), xi * xi),
            Kind::F => (Shape::Ball, Feature::Face(spec.f.unwrap()), xi * xi * xi),
            Kind::Ef => (Shape::HalfBall, Feature::Edge(spec.e.unwrap()), xi * xi),
            Kind::Vf => (Shape::HalfBall, Feature::Vertex(spec.v.unwrap()), xi),
            Kind::Ve | Kind::Vef => (Shape::Wedge, Feature::Vertex(spec.v.unwrap()), xi),
            Kind::Int => return Err(CoverError::Config("the interior neighborhood has no singular feature".into())),
        };
        let (anchor, window) = match feature {
            Feature::Vertex(v) => (p.vertices[v], Window::None),
            Feature::Edge(e) => {
                let (a, b) = p.edge_pts(e);
                (scale(add(a, b), 0.5), Window::Axis { dir: p.edges[e].dir, half: outer / 2.0 })
            }
            Feature::Face(f) => {
                let w1 = p.edges[p.first_edge_of_face(f)].dir;
                let w2 = cross(p.faces[f].normal, w1);
                (face_centroid(p, f), Window::Square { w1, w2, half: outer / 2.0 })
            }
        };
        Ok(Self {
            spec,
            shape,
            feature,
            outer,
            trunc: outer * 0.5f64.powi(depth as i32),
            anchor,
            window,
            xi_p: xi / (1.0 - xi * xi).sqrt(),
            depth,
        })
    }

    fn dist_feature(&self, d: &Distances) -> f64 {
        match self.feature {
            Feature::Vertex(v) => d.rv[v],
            Feature::Edge(e) => d.re[e],
            Feature::Face(f) => d.rf[f],
        }
    }

    fn dist_feature_at(&self, p: &Polytope, x: P3) -> f64 {
        match self.feature {
            Feature::Vertex(v) => p.dist_vertex(v, x),
            Feature::Edge(e) => p.dist_edge(e, x),
            Feature::Face(f) => p.dist_face(f, x),
        }
    }

    /// Signed excess of the window coordinate over its half-width.
    fn window_excess(&self, x: P3) -> f64 {
        let y = sub(x, self.anchor);
        match self.window {
            Window::None => f64::NEG_INFINITY,
            Window::Axis { dir, half } => dot(y, dir).abs() - half,
            Window::Square { w1, w2, half } => dot(y, w1).abs().max(dot(y, w2).abs()) - half,
        }
    }

    fn generation(&self, df: f64) -> usize {
        if df <= 0.0 {
            return self.depth.saturating_sub(1);
        }
        let k = (self.outer / df).log2().floor();
        (k.max(0.0) as usize).min(self.depth.saturating_sub(1))
    }

    /// Exact membership in the truncated neighborhood.
    fn in_region(&self, p: &Polytope, x: P3) -> bool {
        if self.window_excess(x) > 0.0 {
            return false;
        }
        let d = p.distances_unchecked(x);
        d.rbnd > 0.0 && self.dist_feature(&d) >= self.trunc && p.member(&self.spec, &d) && p.contains(x)
    }

    /// Conservative membership of the cell of half-diagonal `delta` around `x`.
    fn region3(&self, p: &Polytope, x: P3, d: &Distances, delta: f64) -> Tri {
        let inside = if d.rbnd > delta {
            if p.contains(x) {
                Tri::Yes
            } else {
                Tri::No
            }
        } else {
            Tri::Maybe
        };
        let trunc = lt(self.dist_feature(d) - self.trunc, 1.0, delta).not();
        let window = match self.window {
            Window::None => Tri::Yes,
            _ => lt(self.window_excess(x), 1.0, delta),
        };
        trunc.and(window).and(member3(p, &self.spec, d, delta)).and(inside)
    }

    /// Region points can only be this close to the anchor's feature.
    fn shell(&self, k: usize) -> (f64, f64) {
        let b = self.outer * 0.5f64.powi(k as i32);
        (b / 2.0, b)
    }
}

fn face_centroid(p: &Polytope, f: usize) -> P3 {
    let mut c = [0.0; 3];
    let mut area = 0.0;
    for t in &p.faces[f].tris {
        let [a, b, q] = p.tri_pts(*t);
        let w = norm(cross(sub(b, a), sub(q, a))) / 2.0;
        c = axpy(c, w / 3.0, add(add(a, b), q));
        area += w;
    }
    scale(c, 1.0 / area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tri {
    Yes,
    No,
    Maybe,
}

impl Tri {
    fn and(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::No, _) | (_, Tri::No) => Tri::No,
            (Tri::Yes, Tri::Yes) => Tri::Yes,
            _ => Tri::Maybe,
        }
    }
    fn or(self, o: Tri) -> Tri {
        match (self, o) {
            (Tri::Yes, _) | (_, Tri::Yes) => Tri::Yes,
            (Tri::No, Tri::No) => Tri::No,
            _ => Tri::Maybe,
        }
    }
    fn not(self) -> Tri {
        match self {
            Tri::Yes => Tri::No,
            Tri::No => Tri::Yes,
            Tri::Maybe => Tri::Maybe,
        }
    }
    fn of(b: bool) -> Tri {
        if b {
            Tri::Yes
        } else {
            Tri::No
        }
    }
}

fn all3(it: impl IntoIterator<Item = Tri>) -> Tri {
    it.into_iter().fold(Tri::Yes, Tri::and)
}

fn any3(it: impl IntoIterator<Item = Tri>) -> Tri {
    it.into_iter().fold(Tri::No, Tri::or)
}

/// `g < 0` on a cell, for `g` with Lipschitz constant `lip` evaluated at its centre.
fn lt(g: f64, lip: f64, delta: f64) -> Tri {
    if g < -lip * delta {
        Tri::Yes
    } else if g >= lip * delta {
        Tri::No
    } else {
        Tri::Maybe
    }
}

/// Three-valued mirror of [`Polytope::member`] over a cell.
fn member3(p: &Polytope, spec: &NeighborhoodSpec, d: &Distances, delta: f64) -> Tri {
    let xi = spec.xi;
    let (xi2, xi3) = (xi * xi, xi * xi * xi);
    let r_lt = |r: f64, a: f64| lt(r - a, 1.0, delta);
    let ve_lt = |v: usize, e: usize| lt(d.re[e] - xi * d.rv[v], 1.0 + xi, delta);
    let ef_lt = |e: usize, f: usize| lt(d.rf[f] - xi * d.re[e], 1.0 + xi, delta);
    let shared = |v: usize, f: usize| p.e_of_v[v].iter().copied().filter(move |e| p.e_of_f[f].contains(e));
    let face_part = |e: usize, f: Option<usize>| match f {
        Some(f) => Tri::of(p.f_of_e[e].contains(&f)).and(ef_lt(e, f)),
        None => all3(p.f_of_e[e].iter().map(|&f| ef_lt(e, f).not())),
    };
    match spec.kind {
        Kind::Int => all3(d.rv.iter().map(|&r| r_lt(r, xi).not()))
            .and(all3(d.re.iter().map(|&r| r_lt(r, xi2).not())))
            .and(all3(d.rf.iter().map(|&r| r_lt(r, xi3).not()))),
        Kind::F => {
            let f = spec.f.unwrap();
            r_lt(d.rf[f], xi3)
                .and(all3(p.v_of_f[f].iter().map(|&v| r_lt(d.rv[v], xi).not())))
                .and(all3(p.e_of_f[f].iter().map(|&e| r_lt(d.re[e], xi2).not())))
        }
        Kind::E | Kind::Ef => {
            let e = spec.e.unwrap();
            r_lt(d.re[e], xi2)
                .and(all3(p.v_of_e[e].iter().map(|&v| r_lt(d.rv[v], xi).not())))
                .and(face_part(e, spec.f))
        }
        Kind::Ve | Kind::Vef => {
            let (v, e) = (spec.v.unwrap(), spec.e.unwrap());
            Tri::of(p.e_of_v[v].contains(&e))
                .and(r_lt(d.rv[v], xi))
                .and(ve_lt(v, e))
                .and(face_part(e, spec.f))
        }
        Kind::Vf => {
            let (v, f) = (spec.v.unwrap(), spec.f.unwrap());
            Tri::of(p.f_of_v[v].contains(&f))
                .and(r_lt(d.rv[v], xi))
                .and(all3(shared(v, f).map(|e| ve_lt(v, e).not().and(ef_lt(e, f)))))
        }
        Kind::V => {
            let v = spec.v.unwrap();
            r_lt(d.rv[v], xi)
                .and(all3(p.e_of_v[v].iter().map(|&e| ve_lt(v, e).not())))
                .and(all3(p.f_of_v[v].iter().map(|&f| any3(shared(v, f).map(|e| ef_lt(e, f).not())))))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Covering {
    pub elements: Vec<CoveringElement>,
    pub target: NeighborhoodSpec,
    pub c: f64,
    pub chat: f64,
    pub depth: usize,
    /// Outer scale of the neighborhood in its feature distance.
    pub outer: f64,
    /// Points closer than this to the feature are excluded.
    pub truncation: f64,
    /// Tree cells visited during generation.
    pub cells: usize,
    /// Cells left undecided at the level cap; zero for a complete covering.
    pub unresolved: usize,
    pub certificate: Option<Certificate>,
    poly: Polytope,
    tgt: Target,
}

fn check_spec(p: &Polytope, s: &NeighborhoodSpec) -> Result<()> {
    let bad = |m: &str| Err(CoverError::Config(format!("{}: {m}", s.label())));
    if s.v.is_some_and(|v| v >= p.vertices.len())
        || s.e.is_some_and(|e| e >= p.edges.len())
        || s.f.is_some_and(|f| f >= p.faces.len())
    {
        return bad("feature index out of range");
    }
    if let (Some(v), Some(e)) = (s.v, s.e) {
        if !p.e_of_v[v].contains(&e) {
            return bad("edge does not meet the vertex");
        }
    }
    if let (Some(e), Some(f)) = (s.e, s.f) {
        if !p.f_of_e[e].contains(&f) {
            return bad("face does not contain the edge");
        }
    }
    if let (Some(v), Some(f)) = (s.v, s.f) {
        if !p.f_of_v[v].contains(&f) {
            return bad("face does not contain the vertex");
        }
    }
    Ok(())
}

/// Half-balls need `ξ' < c·min(1, sin φ)` at each edge bounding the column;
/// wedges need the enlarged ball to avoid every other face at the vertex.
fn check_admissible(p: &Polytope, t: &Target, c: f64, chat: f64) -> Result<()> {
    let s = &t.spec;
    match t.shape {
        Shape::Ball => Ok(()),
        Shape::HalfBall => {
            let f = s.f.unwrap();
            let edges: Vec<usize> = match s.e {
                Some(e) => vec![e],
                None => {
                    let v = s.v.unwrap();
                    p.e_of_v[v].iter().copied().filter(|e| p.e_of_f[f].contains(e)).collect()
                }
            };
            for e in edges {
                let phi = dihedral_from(p, e, f);
                let factor = if phi <= PI { phi.sin().min(1.0) } else { 1.0 };
                if t.xi_p >= c * factor {
                    return Err(CoverError::Config(format!(
                        "half-balls on face {f} cannot cover the cusp at edge {e}: xi'={:.4} >= c*{factor:.4}",
                        t.xi_p
                    )));
                }
            }
            Ok(())
        }
        Shape::Wedge => {
            let (v, e) = (s.v.unwrap(), s.e.unwrap());
            let u = p.edges[e].dir;
            for &g in &p.f_of_v[v] {
                if p.f_of_e[e].contains(&g) {
                    continue;
                }
                let sin_a = dot(u, p.faces[g].normal).abs();
                if chat >= sin_a {
                    return Err(CoverError::Config(format!(
                        "wedges along edge {e} would meet face {g}: chat={chat} >= sin(angle)={sin_a:.4}"
                    )));
                }
            }
            if t.xi_p >= c {
                return Err(CoverError::Config(format!("wedges need xi' < c; got xi'={:.4}, c={c}", t.xi_p)));
            }
            Ok(())
        }
    }
}

/// Build the truncated covering of the neighborhood `spec` with `depth` dyadic generations.
pub fn cover(p: &Polytope, spec: NeighborhoodSpec, c: f64, chat: f64, depth: usize) -> Result<Covering> {
    if !(0.0 < c && c < chat && chat < 1.0) {
        return Err(CoverError::Config(format!("need 0 < c < chat < 1; got c={c}, chat={chat}")));
    }
    if depth == 0 || depth > 24 {
        return Err(CoverError::Config(format!("depth {depth} outside 1..=24")));
    }
    p.check_xi(spec.xi)?;
    check_spec(p, &spec)?;
    let tgt = Target::new(p, spec, depth)?;
    check_admissible(p, &tgt, c, chat)?;
    let mut b = Builder { p, t: &tgt, c, chat, max_level: depth + 24, elements: vec![], cells: 0, unresolved: 0 };
    match tgt.shape {
        Shape::Ball => b.balls()?,
        Shape::HalfBall => b.half_balls()?,
        Shape::Wedge => b.wedges()?,
    }
    Ok(Covering {
        elements: b.elements,
        target: spec,
        c,
        chat,
        depth,
        outer: tgt.outer,
        truncation: tgt.trunc,
        cells: b.cells,
        unresolved: b.unresolved,
        certificate: None,
        poly: p.clone(),
        tgt,
    })
}

/// Continue the construction for `extra_depth` more generations.
pub fn refine_toward_feature(cov: &Covering, extra_depth: usize) -> Result<Covering> {
    cover(&cov.poly, cov.target, cov.c, cov.chat, cov.depth + extra_depth)
}

struct Builder<'a> {
    p: &'a Polytope,
    t: &'a Target,
    c: f64,
    chat: f64,
    max_level: usize,
    elements: Vec<CoveringElement>,
    cells: usize,
    unresolved: usize,
}

impl Builder<'_> {
    fn tick(&mut self) -> Result<()> {
        self.cells += 1;
        if self.cells > MAX_CELLS {
            return Err(CoverError::Config(format!("covering exceeds {MAX_CELLS} tree cells")));
        }
        Ok(())
    }

    fn push(&mut self, shape: Shape, center: P3, radius: f64, planes: Vec<P3>, convex: bool) {
        let df = self.t.dist_feature_at(self.p, center);
        self.elements.push(CoveringElement {
            shape,
            center,
            radius,
            c: self.c,
            chat: self.chat,
            generation: self.t.generation(df),
            theta: None,
            planes,
            convex,
        });
    }

    fn balls(&mut self) -> Result<()> {
        let (p, t) = (self.p, self.t);
        let mut stack = vec![(t.anchor, t.outer, 0usize)];
        while let Some((x, h, lvl)) = stack.pop() {
            self.tick()?;
            let delta = SQRT3 * h;
            let d = p.distances_unchecked(x);
            if t.region3(p, x, &d, delta) == Tri::No {
                continue;
            }
            if d.rbnd > 0.0 {
                let r = self.c * t.dist_feature(&d).min(d.rbnd);
                if r > delta * (1.0 + 1e-12) && p.contains(x) {
                    self.push(Shape::Ball, x, r, vec![], true);
                    continue;
                }
            }
            if lvl >= self.max_level {
                self.unresolved += 1;
                continue;
            }
            let q = h / 2.0;
            for i in (0..8).rev() {
                let o = [
                    if i & 1 == 0 { -q } else { q },
                    if i & 2 == 0 { -q } else { q },
                    if i & 4 == 0 { -q } else { q },
                ];
                stack.push((add(x, o), q, lvl + 1));
            }
        }
        Ok(())
    }

    fn half_balls(&mut self) -> Result<()> {
        let (p, t) = (self.p, self.t);
        let s = t.spec;
        let f = s.f.unwrap();
        let n = p.inward_normal(f);
        let (u1, u2, named): (P3, P3, Vec<usize>) = match (s.v, s.e) {
            (_, Some(e)) => (p.edges[e].dir, in_face_direction(p, e, f), vec![e]),
            (Some(v), None) => {
                let (w1, w2, _) = face_corner(p, v, f);
                (w1, w2, p.e_of_v[v].iter().copied().filter(|e| p.e_of_f[f].contains(e)).collect())
            }
            _ => unreachable!(),
        };
        let mut stack = vec![(0.0f64, 0.0f64, t.outer, 0usize)];
        while let Some((a, b, h, lvl)) = stack.pop() {
            self.tick()?;
            let q = axpy(axpy(t.anchor, a, u1), b, u2);
            let rho2 = SQRT_2 * h;
            let dn = named.iter().map(|&e| p.dist_edge(e, q)).fold(f64::INFINITY, f64::min);
            let zc = t.xi_p * (dn + rho2);
            let bc = axpy(q, zc / 2.0, n);
            let delta = (rho2 * rho2 + zc * zc / 4.0).sqrt();
            let d = p.distances_unchecked(bc);
            if t.region3(p, bc, &d, delta) == Tri::No {
                continue;
            }
            if dn > 0.0 && p.dist_face(f, q) <= 1e-12 * t.outer {
                let other = (0..p.faces.len()).filter(|&g| g != f).map(|g| p.dist_face(g, q)).fold(f64::INFINITY, f64::min);
                let r = self.c * t.dist_feature_at(p, q).min(other);
                if rho2 * rho2 + zc * zc < r * r * (1.0 - 1e-12) {
                    self.push(Shape::HalfBall, q, r, vec![n], true);
                    continue;
                }
            }
            if lvl >= self.max_level {
                self.unresolved += 1;
                continue;
            }
            let k = h / 2.0;
            for (da, db) in [(k, k), (-k, k), (k, -k), (-k, -k)] {
                stack.push((a + da, b + db, k, lvl + 1));
            }
        }
        Ok(())
    }

    fn wedges(&mut self) -> Result<()> {
        let (p, t) = (self.p, self.t);
        let (v, e) = (t.spec.v.unwrap(), t.spec.e.unwrap());
        let u = if p.edges[e].a == v { p.edges[e].dir } else { scale(p.edges[e].dir, -1.0) };
        let [f0, f1] = p.f_of_e[e];
        let planes = vec![p.inward_normal(f0), p.inward_normal(f1)];
        let convex = dihedral_from(p, e, f0) < PI;
        let others: Vec<usize> = (0..p.faces.len()).filter(|g| !p.f_of_e[e].contains(g)).collect();
        let mut stack = vec![(t.outer / 2.0, t.outer / 2.0, 0usize)];
        while let Some((s, h, lvl)) = stack.pop() {
            self.tick()?;
            let x = axpy(p.vertices[v], s, u);
            let rho = t.xi_p * (s + h);
            let delta = (h * h + rho * rho).sqrt();
            let d = p.distances_unchecked(x);
            if t.region3(p, x, &d, delta) == Tri::No {
                continue;
            }
            let r = self.c * s;
            if s > h && h * h + rho * rho < r * r * (1.0 - 1e-12) {
                let clear = others.iter().map(|&g| d.rf[g]).fold(f64::INFINITY, f64::min);
                if clear <= r * self.chat / self.c {
                    return Err(CoverError::Config(format!(
                        "wedge at distance {s:.3e} along edge {e} meets a second face"
                    )));
                }
                self.push(Shape::Wedge, x, r, planes.clone(), convex);
                continue;
            }
            if lvl >= self.max_level {
                self.unresolved += 1;
                continue;
            }
            stack.push((s + h / 2.0, h / 2.0, lvl + 1));
            stack.push((s - h / 2.0, h / 2.0, lvl + 1));
        }
        Ok(())
    }
}

/// Elements bucketed by radius level on uniform grids.
struct Index {
    kappa: f64,
    levels: Vec<(f64, HashMap<[i64; 3], Vec<u32>>)>,
}

impl Index {
    fn new(elements: &[CoveringElement], kappa: f64) -> Self {
        let mut by_level: HashMap<i32, HashMap<[i64; 3], Vec<u32>>> = HashMap::new();
        for (i, el) in elements.iter().enumerate() {
            let r = el.radius_at(kappa);
            let lvl = r.log2().ceil() as i32;
            let h = 2f64.powi(lvl);
            let grid = by_level.entry(lvl).or_default();
            let lo: Vec<i64> = (0..3).map(|k| ((el.center[k] - r) / h).floor() as i64).collect();
            let hi: Vec<i64> = (0..3).map(|k| ((el.center[k] + r) / h).floor() as i64).collect();
            for a in lo[0]..=hi[0] {
                for b in lo[1]..=hi[1] {
                    for c in lo[2]..=hi[2] {
                        grid.entry([a, b, c]).or_default().push(i as u32);
                    }
                }
            }
        }
        let mut levels: Vec<(i32, HashMap<[i64; 3], Vec<u32>>)> = by_level.into_iter().collect();
        levels.sort_by_key(|l| l.0);
        Self { kappa, levels: levels.into_iter().map(|(l, g)| (2f64.powi(l), g)).collect() }
    }

    fn count(&self, elements: &[CoveringElement], x: P3, kappa: f64, mut each: impl FnMut(&CoveringElement)) -> usize {
        debug_assert!(kappa <= self.kappa);
        let mut n = 0;
        for (h, grid) in &self.levels {
            let key = [(x[0] / h).floor() as i64, (x[1] / h).floor() as i64, (x[2] / h).floor() as i64];
            if let Some(ids) = grid.get(&key) {
                for &i in ids {
                    let el = &elements[i as usize];
                    if el.contains_at(x, kappa) {
                        n += 1;
                        each(el);
                    }
                }
            }
        }
        n
    }
}

/// Maximum and histogram of the number of `kappa`-scaled elements containing each point.
pub fn overlap_counts(elements: &[CoveringElement], points: &[P3], kappa: f64) -> (usize, Vec<usize>) {
    let idx = Index::new(elements, kappa);
    let counts: Vec<usize> = points.par_iter().map(|&x| idx.count(elements, x, kappa, |_| {})).collect();
    histogram(&counts)
}

fn histogram(counts: &[usize]) -> (usize, Vec<usize>) {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut h = vec![0; max + 1];
    for &k in counts {
        h[k] += 1;
    }
    (max, h)
}

fn orthonormal(u: P3) -> (P3, P3) {
    let a = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let w1 = unit(cross(u, a));
    (w1, cross(u, w1))
}

impl Covering {
    pub fn polytope(&self) -> &Polytope {
        &self.poly
    }

    pub fn anchor(&self) -> P3 {
        self.tgt.anchor
    }

    /// Exact membership in the truncated neighborhood this covering targets.
    pub fn in_region(&self, x: P3) -> bool {
        self.tgt.in_region(&self.poly, x)
    }

    pub fn generations(&self) -> Vec<Vec<&CoveringElement>> {
        let mut g = vec![Vec::new(); self.depth];
        for el in &self.elements {
            g[el.generation].push(el);
        }
        g
    }

    /// One superset draw from the shell of generation `k`.
    fn propose(&self, k: usize, rng: &mut ChaCha8Rng) -> P3 {
        let p = &self.poly;
        let t = &self.tgt;
        let s = &t.spec;
        let (a, b) = t.shell(k);
        let asin_xi = (s.xi.asin() * 1.05).min(PI / 2.0);
        match (t.feature, s.kind) {
            (Feature::Vertex(v), kind) => {
                let r = (a.powi(3) + rng.gen::<f64>() * (b.powi(3) - a.powi(3))).cbrt();
                let dir = match kind {
                    Kind::Ve | Kind::Vef => {
                        let e = s.e.unwrap();
                        let u = if p.edges[e].a == v { p.edges[e].dir } else { scale(p.edges[e].dir, -1.0) };
                        let (w1, w2) = orthonormal(u);
                        let ct = 1.0 - rng.gen::<f64>() * (1.0 - asin_xi.cos());
                        let st = (1.0 - ct * ct).max(0.0).sqrt();
                        let ph = rng.gen::<f64>() * 2.0 * PI;
                        add(scale(u, ct), add(scale(w1, st * ph.cos()), scale(w2, st * ph.sin())))
                    }
                    Kind::Vf => {
                        let n = p.inward_normal(s.f.unwrap());
                        let (w1, w2) = orthonormal(n);
                        let sz = (2.0 * rng.gen::<f64>() - 1.0) * asin_xi.sin();
                        let cz = (1.0 - sz * sz).sqrt();
                        let ph = rng.gen::<f64>() * 2.0 * PI;
                        add(scale(n, sz), add(scale(w1, cz * ph.cos()), scale(w2, cz * ph.sin())))
                    }
                    _ => {
                        let z: f64 = 2.0 * rng.gen::<f64>() - 1.0;
                        let ph = rng.gen::<f64>() * 2.0 * PI;
                        let q = (1.0 - z * z).sqrt();
                        [q * ph.cos(), q * ph.sin(), z]
                    }
                };
                axpy(t.anchor, r, dir)
            }
            (Feature::Edge(e), kind) => {
                let u = p.edges[e].dir;
                let half = t.outer / 2.0;
                let ax = (2.0 * rng.gen::<f64>() - 1.0) * half;
                let rho = (a * a + rng.gen::<f64>() * (b * b - a * a)).sqrt();
                let (w1, w2, ph) = if kind == Kind::Ef {
                    let f = s.f.unwrap();
                    (in_face_direction(p, e, f), p.inward_normal(f), (2.0 * rng.gen::<f64>() - 1.0) * asin_xi)
                } else {
                    let (w1, w2) = orthonormal(u);
                    (w1, w2, rng.gen::<f64>() * 2.0 * PI)
                };
                let off = add(scale(w1, rho * ph.cos()), scale(w2, rho * ph.sin()));
                add(axpy(t.anchor, ax, u), off)
            }
            (Feature::Face(f), _) => {
                let Window::Square { w1, w2, half } = t.window else { unreachable!() };
                let s1 = (2.0 * rng.gen::<f64>() - 1.0) * half;
                let s2 = (2.0 * rng.gen::<f64>() - 1.0) * half;
                let z = a + rng.gen::<f64>() * (b - a);
                axpy(axpy(axpy(t.anchor, s1, w1), s2, w2), z, p.inward_normal(f))
            }
        }
    }

    /// Rejection samples of the region in generation `k`, one stream per chunk.
    fn draw(&self, k: usize, n: usize, seed: u64, stream: u64) -> Vec<P3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut out = Vec::with_capacity(n);
        let mut tries = 0usize;
        while out.len() < n && tries < 2000 * n + 100_000 {
            tries += 1;
            let x = self.propose(k, &mut rng);
            if self.in_region(x) {
                out.push(x);
            }
        }
        out
    }

    /// Samples stratified evenly over the generations.
    pub fn region_samples(&self, n: usize, seed: u64) -> Vec<P3> {
        let mut tasks = Vec::new();
        for k in 0..self.depth {
            let nk = n / self.depth + usize::from(k < n % self.depth);
            for c in 0..nk.div_ceil(CHUNK) {
                tasks.push((k, CHUNK.min(nk - c * CHUNK)));
            }
        }
        let parts: Vec<Vec<P3>> =
            tasks.par_iter().enumerate().map(|(i, &(k, m))| self.draw(k, m, seed, i as u64 + 1)).collect();
        parts.concat()
    }

    /// Fraction of region samples lying in at least one element at scale `c`.
    pub fn coverage(&self, samples: usize, seed: u64) -> CoverageReport {
        let pts = self.region_samples(samples, seed);
        let idx = Index::new(&self.elements, self.c);
        let hit: Vec<bool> = pts.par_iter().map(|&x| idx.count(&self.elements, x, self.c, |_| {}) > 0).collect();
        let covered = hit.iter().filter(|&&h| h).count();
        let misses: Vec<P3> = pts.iter().zip(&hit).filter(|(_, &h)| !h).map(|(x, _)| *x).take(16).collect();
        CoverageReport {
            samples: pts.len(),
            covered,
            fraction: if pts.is_empty() { 0.0 } else { covered as f64 / pts.len() as f64 },
            misses,
        }
    }

    /// Overlap of the enlarged elements at `samples` outermost-generation
    /// points, each carried into every generation by the dyadic dilation
    /// about the anchor.
    pub fn certify_overlap(&self, samples: usize, seed: u64) -> Certificate {
        let refs = self.region_samples_in(0, samples, seed);
        let idx = Index::new(&self.elements, self.chat);
        let depth = self.depth;
        let per: Vec<(Vec<usize>, Vec<(f64, f64)>)> = refs
            .par_iter()
            .map(|&x0| {
                let mut counts = Vec::new();
                let mut ratio = vec![(f64::INFINITY, 0.0f64); depth];
                for k in 0..depth {
                    let x = add(self.tgt.anchor, scale(sub(x0, self.tgt.anchor), 0.5f64.powi(k as i32)));
                    if !self.in_region(x) {
                        continue;
                    }
                    let df = self.tgt.dist_feature_at(&self.poly, x);
                    let n = idx.count(&self.elements, x, self.chat, |el| {
                        let q = df / el.radius;
                        ratio[k].0 = ratio[k].0.min(q);
                        ratio[k].1 = ratio[k].1.max(q);
                    });
                    counts.push(n);
                }
                (counts, ratio)
            })
            .collect();
        let mut counts = Vec::new();
        let mut ratio = vec![(f64::INFINITY, 0.0f64); depth];
        for (c, r) in per {
            counts.extend(c);
            for k in 0..depth {
                ratio[k].0 = ratio[k].0.min(r[k].0);
                ratio[k].1 = ratio[k].1.max(r[k].1);
            }
        }
        let (n_emp, hist) = histogram(&counts);
        let c_b = ratio.iter().map(|&(lo, hi)| if hi > 0.0 { hi.max(1.0 / lo) } else { f64::NAN }).collect();
        Certificate { n_emp, samples: counts.len(), histogram: hist, c_b }
    }

    fn region_samples_in(&self, k: usize, n: usize, seed: u64) -> Vec<P3> {
        let parts: Vec<Vec<P3>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| self.draw(k, CHUNK.min(n - c * CHUNK), seed, c as u64 + 1))
            .collect();
        parts.concat()
    }

    pub fn with_certificate(mut self, samples: usize, seed: u64) -> Self {
        self.certificate = Some(self.certify_overlap(samples, seed));
        self
    }

    /// One JSON object per element.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for el in &self.elements {
            s.push_str(&serde_json::to_string(el).expect("element serialises"));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::fixtures::*;
    use proptest::prelude::*;

    const C: f64 = 0.25;
    const CHAT: f64 = 0.5;

    fn spec(kind: Kind, xi: f64, v: Option<usize>, e: Option<usize>, f: Option<usize>) -> NeighborhoodSpec {
        NeighborhoodSpec::new(kind, xi, v, e, f).unwrap()
    }

    fn cube_v() -> (Polytope, NeighborhoodSpec) {
        let p = cube();
        let v = vertex_index(&p, [0.0; 3]);
        (p, spec(Kind::V, 0.2, Some(v), None, None))
    }

    fn cube_ef() -> (Polytope, NeighborhoodSpec) {
        let p = cube();
        let e = edge_index(&p, [0.0; 3], [1.0, 0.0, 0.0]);
        let f = face_with_normal(&p, [0.0, 0.0, -1.0]);
        (p, spec(Kind::Ef, 0.2, None, Some(e), Some(f)))
    }

    #[test]
    fn vertex_balls_sit_inside_the_cube() {
        let (p, s) = cube_v();
        let cov = cover(&p, s, C, CHAT, 4).unwrap();
        assert!(!cov.elements.is_empty());
        assert_eq!(cov.unresolved, 0);
        for el in &cov.elements {
            assert_eq!(el.shape, Shape::Ball);
            assert!(p.contains(el.center));
            assert!(p.dist_boundary(el.center) > el.radius_at(CHAT));
        }
    }

    #[test]
    fn edge_face_half_balls_are_cut_by_one_plane() {
        let (p, s) = cube_ef();
        let f = s.f.unwrap();
        let cov = cover(&p, s, C, CHAT, 4).unwrap();
        assert!(!cov.elements.is_empty());
        for el in &cov.elements {
            assert_eq!(el.shape, Shape::HalfBall);
            assert!(p.dist_face(f, el.center) < 1e-14);
            assert_eq!(el.planes, vec![p.inward_normal(f)]);
            let r = el.radius_at(CHAT);
            for g in (0..p.faces.len()).filter(|&g| g != f) {
                assert!(p.dist_face(g, el.center) > r, "second face inside a half-ball");
            }
        }
    }

    #[test]
    fn wedges_sit_on_the_edge() {
        let p = cube();
        let v = vertex_index(&p, [0.0; 3]);
        let e = edge_index(&p, [0.0; 3], [0.0, 1.0, 0.0]);
        let cov = cover(&p, spec(Kind::Ve, 0.2, Some(v), Some(e), None), C, CHAT, 5).unwrap();
        for el in &cov.elements {
            assert_eq!(el.shape, Shape::Wedge);
            assert!(p.dist_edge(e, el.center) < 1e-14);
            let want: Vec<P3> = p.f_of_e[e].iter().map(|&f| p.inward_normal(f)).collect();
            assert_eq!(el.planes, want);
            assert!((el.radius - C * p.dist_vertex(v, el.center)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_and_disjoint_elements_overlap_once() {
        let a = CoveringElement::ball([0.0; 3], 0.25, C, CHAT);
        let b = CoveringElement::ball([5.0, 0.0, 0.0], 0.25, C, CHAT);
        let pts = vec![[0.1, 0.0, 0.0], [0.0, -0.3, 0.1], [5.2, 0.0, 0.0]];
        assert_eq!(overlap_counts(&[a.clone()], &pts[..2], CHAT).0, 1);
        let (n, h) = overlap_counts(&[a, b], &pts, CHAT);
        assert_eq!(n, 1);
        assert_eq!(h, vec![0, 3]);
    }

    #[test]
    fn vertex_covering_covers_samples() {
        let (p, s) = cube_v();
        let cov = cover(&p, s, C, CHAT, 4).unwrap();
        let rep = cov.coverage(20_000, 7);
        assert_eq!(rep.samples, 20_000);
        assert_eq!(rep.covered, rep.samples, "misses {:?}", rep.misses);
    }

    #[test]
    fn refinement_adds_elements_and_keeps_old_ones() {
        let p = cube();
        let v = vertex_index(&p, [0.0; 3]);
        let f = face_with_normal(&p, [0.0, 0.0, -1.0]);
        let cov = cover(&p, spec(Kind::Vf, 0.2, Some(v), None, Some(f)), C, CHAT, 3).unwrap();
        let fine = refine_toward_feature(&cov, 2).unwrap();
        assert_eq!(fine.depth, 5);
        assert!(fine.elements.len() > cov.elements.len());
        for el in &cov.elements {
            assert!(fine.elements.iter().any(|g| g.center == el.center && g.radius == el.radius));
        }
    }

    #[test]
    fn generation_radii_halve() {
        let (p, s) = cube_v();
        let cov = cover(&p, s, C, CHAT, 4).unwrap();
        let med: Vec<f64> = cov
            .generations()
            .iter()
            .map(|g| {
                let mut r: Vec<f64> = g.iter().map(|e| e.radius).collect();
                r.sort_by(f64::total_cmp);
                r[r.len() / 2]
            })
            .collect();
        for w in med.windows(2) {
            let q = w[1] / w[0];
            assert!((0.4..=0.6).contains(&q), "median ratio {q}");
        }
    }

    #[test]
    fn overlap_is_depth_independent_for_wedges() {
        let p = cube();
        let v = vertex_index(&p, [0.0; 3]);
        let e = edge_index(&p, [0.0; 3], [0.0, 0.0, 1.0]);
        let f = face_with_normal(&p, [-1.0, 0.0, 0.0]);
        let s = spec(Kind::Vef, 0.2, Some(v), Some(e), Some(f));
        let a = cover(&p, s, C, CHAT, 4).unwrap().certify_overlap(4000, 3);
        let b = cover(&p, s, C, CHAT, 6).unwrap().certify_overlap(4000, 3);
        assert!(a.n_emp >= 1);
        assert_eq!(a.n_emp, b.n_emp);
    }

    #[test]
    fn inadmissible_parameters_are_rejected() {
        let (p, s) = cube_ef();
        assert!(matches!(cover(&p, s, 0.15, CHAT, 3), Err(CoverError::Config(_))));
        assert!(matches!(cover(&p, s, 0.5, 0.4, 3), Err(CoverError::Config(_))));
        assert!(matches!(cover(&p, s, C, CHAT, 0), Err(CoverError::Config(_))));
        assert!(cover(&p, NeighborhoodSpec::interior(0.2), C, CHAT, 3).is_err());
        let wrong = NeighborhoodSpec { f: Some(face_with_normal(&p, [0.0, 0.0, 1.0])), ..s };
        assert!(cover(&p, wrong, C, CHAT, 3).is_err());
    }

    #[test]
    fn jsonl_round_trips() {
        let (p, s) = cube_ef();
        let cov = cover(&p, s, C, CHAT, 2).unwrap();
        let text = cov.to_jsonl();
        assert_eq!(text.lines().count(), cov.elements.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["shape"], "half_ball");
        for key in ["center", "R", "c", "chat", "generation"] {
            assert!(first.get(key).is_some(), "{key} missing");
        }
    }

    #[test]
    fn reflex_edge_half_balls_cover_the_l_prism() {
        let p = l_prism();
        let e = edge_index(&p, [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]);
        let f = p.f_of_e[e][0];
        let cov = cover(&p, spec(Kind::Ef, 0.1, None, Some(e), Some(f)), C, CHAT, 4).unwrap();
        let rep = cov.coverage(10_000, 11);
        assert_eq!(rep.covered, rep.samples, "misses {:?}", rep.misses);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn three_valued_membership_is_conservative(
            c in prop::array::uniform3(0.0f64..0.3),
            h in 0.001f64..0.05,
            off in prop::array::uniform3(-1.0f64..1.0),
            k in 0usize..7,
        ) {
            let p = cube();
            let v = vertex_index(&p, [0.0; 3]);
            let e = edge_index(&p, [0.0; 3], [1.0, 0.0, 0.0]);
            let f = face_with_normal(&p, [0.0, 0.0, -1.0]);
            let specs = [
                spec(Kind::V, 0.2, Some(v), None, None),
                spec(Kind::E, 0.2, None, Some(e), None),
                spec(Kind::F, 0.2, None, None, Some(f)),
                spec(Kind::Ve, 0.2, Some(v), Some(e), None),
                spec(Kind::Vf, 0.2, Some(v), None, Some(f)),
                spec(Kind::Ef, 0.2, None, Some(e), Some(f)),
                spec(Kind::Vef, 0.2, Some(v), Some(e), Some(f)),
            ];
            let s = specs[k];
            let d = p.distances_unchecked(c);
            let delta = SQRT3 * h;
            let x = [c[0] + h * off[0], c[1] + h * off[1], c[2] + h * off[2]];
            let dx = p.distances_unchecked(x);
            match member3(&p, &s, &d, delta) {
                Tri::Yes => prop_assert!(p.member(&s, &dx)),
                Tri::No => prop_assert!(!p.member(&s, &dx)),
                Tri::Maybe => {}
            }
        }
    }
}
