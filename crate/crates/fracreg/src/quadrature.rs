//! Quadrature: Gauss–Jacobi rules for the `y^α` weight, smooth fields with
//! optional analytic derivatives, frame derivatives, feature-graded weighted
//! norms over neighborhoods and a Monte-Carlo Slobodeckij seminorm.

use crate::polytope::{add, axpy, cross, dot, norm, scale, sub, unit, Frame, Kind, NeighborhoodSpec, Polytope, P3};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("weight y^{0} is not integrable at 0")]
    NotIntegrable(f64),
    #[error("finite-difference stencil leaves the field's domain at {0:?}")]
    Domain(P3),
    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, QuadError>;

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiRule {
    pub alpha: f64,
    pub y_max: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl JacobiRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&y, &w)| w * f(y)).sum()
    }
}

/// Golub–Welsch nodes and weights on `[-1,1]` for the weight `(1+t)^b`.
fn jacobi_ref(b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let a = 0.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kk = k as f64;
        let diag = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / ((2.0 * kk + a + b) * (2.0 * kk + a + b + 2.0))
        };
        m[(k, k)] = diag;
        if k + 1 < n {
            let j = kk + 1.0;
            let beta = if k == 0 {
                4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b).powi(2) * (3.0 + a + b))
            } else {
                let c = 2.0 * j + a + b;
                4.0 * j * (j + a) * (j + b) * (j + a + b) / (c * c * (c + 1.0) * (c - 1.0))
            };
            m[(k, k + 1)] = beta.sqrt();
            m[(k + 1, k)] = beta.sqrt();
        }
    }
    let mu0 = 2f64.powf(b + 1.0) / (b + 1.0);
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}

type RuleCache = Mutex<HashMap<(u64, usize), Arc<(Vec<f64>, Vec<f64>)>>>;

fn cached_ref(b: f64, n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let c = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (b.to_bits(), n);
    if let Some(r) = c.lock().unwrap().get(&key) {
        return r.clone();
    }
    let r = Arc::new(jacobi_ref(b, n));
    c.lock().unwrap().insert(key, r.clone());
    r
}

/// Gauss rule on `(0, y_max)` for the weight `y^alpha`.
pub fn jacobi_rule(alpha: f64, y_max: f64, n: usize) -> Result<JacobiRule> {
    if alpha <= -1.0 || !alpha.is_finite() {
        return Err(QuadError::NotIntegrable(alpha));
    }
    if n == 0 || !(y_max > 0.0) {
        return Err(QuadError::Config("jacobi_rule needs n ≥ 1 and Y > 0".into()));
    }
    let r = cached_ref(alpha, n);
    let h = 0.5 * y_max;
    let sc = h.powf(alpha + 1.0);
    Ok(JacobiRule {
        alpha,
        y_max,
        nodes: r.0.iter().map(|t| h * (1.0 + t)).collect(),
        weights: r.1.iter().map(|w| w * sc).collect(),
    })
}

/// Gauss–Legendre nodes and weights on `(a, b)`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let r = cached_ref(0.0, n);
    let h = 0.5 * (b - a);
    (r.0.iter().map(|t| a + h * (1.0 + t)).collect(), r.1.iter().map(|w| w * h).collect())
}

/// Where a field can be nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Ball { center: P3, radius: f64 },
    Everywhere,
}

impl Support {
    pub fn may_be_nonzero(&self, x: &P3) -> bool {
        match self {
            Support::Ball { center, radius } => norm(sub(*x, *center)) < *radius,
            Support::Everywhere => true,
        }
    }
}

/// A scalar field on R³.
pub trait Field: Sync + Send {
    fn value(&self, x: &P3) -> f64;
    /// Analytic partial derivative `∂^gamma`, when registered.
    fn partial(&self, _x: &P3, _gamma: [u32; 3]) -> Option<f64> {
        None
    }
    fn support(&self) -> Support {
        Support::Everywhere
    }
    /// Where the field is smooth enough for finite differences.
    fn contains(&self, _x: &P3) -> bool {
        true
    }
}

impl<T: Field + ?Sized> Field for &T {
    fn value(&self, x: &P3) -> f64 {
        (**self).value(x)
    }
    fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
        (**self).partial(x, g)
    }
    fn support(&self) -> Support {
        (**self).support()
    }
    fn contains(&self, x: &P3) -> bool {
        (**self).contains(x)
    }
}

impl<T: Field + ?Sized> Field for Box<T> {
    fn value(&self, x: &P3) -> f64 {
        (**self).value(x)
    }
    fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
        (**self).partial(x, g)
    }
    fn support(&self) -> Support {
        (**self).support()
    }
    fn contains(&self, x: &P3) -> bool {
        (**self).contains(x)
    }
}

pub struct Const(pub f64);

impl Field for Const {
    fn value(&self, _x: &P3) -> f64 {
        self.0
    }
    fn partial(&self, _x: &P3, g: [u32; 3]) -> Option<f64> {
        Some(if g == [0, 0, 0] { self.0 } else { 0.0 })
    }
}

/// Value-only field from a closure.
pub struct FnField<F: Fn(&P3) -> f64 + Sync + Send> {
    pub f: F,
    pub support: Support,
}

impl<F: Fn(&P3) -> f64 + Sync + Send> FnField<F> {
    pub fn new(f: F) -> Self {
        Self { f, support: Support::Everywhere }
    }
}

impl<F: Fn(&P3) -> f64 + Sync + Send> Field for FnField<F> {
    fn value(&self, x: &P3) -> f64 {
        (self.f)(x)
    }
    fn support(&self) -> Support {
        self.support
    }
}

fn falling(a: f64, k: u32) -> f64 {
    (0..k).map(|i| a - i as f64).product()
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// Polynomial in three variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Poly3 {
    pub terms: BTreeMap<[u32; 3], f64>,
}

impl Poly3 {
    pub fn constant(c: f64) -> Self {
        Self::monomial(c, [0, 0, 0])
    }

    pub fn monomial(c: f64, k: [u32; 3]) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(k, c);
        }
        Self { terms }
    }

    /// Affine form `c + g·x`.
    pub fn linear(c: f64, g: P3) -> Self {
        let mut p = Self::constant(c);
        for (i, gi) in g.iter().enumerate() {
            let mut k = [0; 3];
            k[i] = 1;
            p = p.add(&Self::monomial(*gi, k));
        }
        p
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut t = self.terms.clone();
        for (k, c) in &o.terms {
            *t.entry(*k).or_insert(0.0) += c;
        }
        t.retain(|_, c| *c != 0.0);
        Self { terms: t }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { terms: self.terms.iter().map(|(k, c)| (*k, c * s)).filter(|(_, c)| *c != 0.0).collect() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut t: BTreeMap<[u32; 3], f64> = BTreeMap::new();
        for (k1, c1) in &self.terms {
            for (k2, c2) in &o.terms {
                *t.entry([k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2]]).or_insert(0.0) += c1 * c2;
            }
        }
        t.retain(|_, c| *c != 0.0);
        Self { terms: t }
    }

    pub fn pow(&self, m: u32) -> Self {
        (0..m).fold(Self::constant(1.0), |acc, _| acc.mul(self))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|k| k[0] + k[1] + k[2]).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &P3) -> f64 {
        self.terms
            .iter()
            .map(|(k, c)| c * x[0].powi(k[0] as i32) * x[1].powi(k[1] as i32) * x[2].powi(k[2] as i32))
            .sum()
    }

    pub fn deriv(&self, g: [u32; 3]) -> Self {
        let mut t = BTreeMap::new();
        for (k, c) in &self.terms {
            if k[0] >= g[0] && k[1] >= g[1] && k[2] >= g[2] {
                let f = (0..3).map(|i| falling(k[i] as f64, g[i])).product::<f64>();
                t.insert([k[0] - g[0], k[1] - g[1], k[2] - g[2]], c * f);
            }
        }
        Self { terms: t }
    }

    pub fn partial_at(&self, x: &P3, g: [u32; 3]) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| k[0] >= g[0] && k[1] >= g[1] && k[2] >= g[2])
            .map(|(k, c)| {
                let mut v = *c;
                for i in 0..3 {
                    v *= falling(k[i] as f64, g[i]) * x[i].powi((k[i] - g[i]) as i32);
                }
                v
            })
            .sum()
    }

    /// `(1 - |x-c|²/R²)^m`, as a polynomial (cut off by the caller).
    pub fn bump(center: P3, radius: f64, m: u32) -> Self {
        let mut q = Self::constant(1.0);
        for i in 0..3 {
            let mut k = [0; 3];
            k[i] = 1;
            let li = Self::linear(-center[i], [0.0; 3]).add(&Self::monomial(1.0, k));
            q = q.add(&li.mul(&li).scale(-1.0 / (radius * radius)));
        }
        q.pow(m)
    }
}

/// Polynomial, optionally restricted to a ball (zero outside).
#[derive(Debug, Clone)]
pub struct PolyField {
    pub poly: Poly3,
    pub ball: Option<(P3, f64)>,
}

impl PolyField {
    pub fn new(poly: Poly3) -> Self {
        Self { poly, ball: None }
    }

    /// `(1 - |x-c|²/R²)_+^m`: `C^{m-1}`, analytic inside the ball.
    pub fn bump(center: P3, radius: f64, m: u32) -> Self {
        Self { poly: Poly3::bump(center, radius, m), ball: Some((center, radius)) }
    }

    fn inside(&self, x: &P3) -> bool {
        self.ball.is_none_or(|(c, r)| norm(sub(*x, c)) < r)
    }
}

impl Field for PolyField {
    fn value(&self, x: &P3) -> f64 {
        if self.inside(x) {
            self.poly.eval(x)
        } else {
            0.0
        }
    }
    fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
        Some(if self.inside(x) { self.poly.partial_at(x, g) } else { 0.0 })
    }
    fn support(&self) -> Support {
        match self.ball {
            Some((center, radius)) => Support::Ball { center, radius },
            None => Support::Everywhere,
        }
    }
}

/// `coef · (n·(x - origin))_+^exp`: a power of the distance to a plane.
#[derive(Debug, Clone, Copy)]
pub struct FacePower {
    pub origin: P3,
    /// Unit normal pointing into the domain.
    pub normal: P3,
    pub exp: f64,
    pub coef: f64,
}

impl FacePower {
    pub fn for_face(p: &Polytope, f: usize, exp: f64) -> Self {
        let n = p.inward_normal(f);
        Self { origin: p.vertices[p.faces[f].verts[0]], normal: n, exp, coef: 1.0 }
    }
    fn z(&self, x: &P3) -> f64 {
        dot(self.normal, sub(*x, self.origin))
    }
}

impl Field for FacePower {
    fn value(&self, x: &P3) -> f64 {
        let z = self.z(x);
        if z > 0.0 {
            self.coef * z.powf(self.exp)
        } else {
            0.0
        }
    }
    fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
        let z = self.z(x);
        if z <= 0.0 {
            return Some(0.0);
        }
        let k = g[0] + g[1] + g[2];
        let dirs = self.normal[0].powi(g[0] as i32) * self.normal[1].powi(g[1] as i32) * self.normal[2].powi(g[2] as i32);
        Some(self.coef * falling(self.exp, k) * z.powf(self.exp - k as f64) * dirs)
    }
    fn contains(&self, x: &P3) -> bool {
        self.z(x) > 0.0
    }
}

/// Product of two fields; analytic partials by the Leibniz rule.
pub struct Product<A: Field, B: Field>(pub A, pub B);

impl<A: Field, B: Field> Field for Product<A, B> {
    fn value(&self, x: &P3) -> f64 {
        let b = self.1.value(x);
        if b == 0.0 {
            return 0.0;
        }
        self.0.value(x) * b
    }
    fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
        if !self.1.support().may_be_nonzero(x) || !self.0.support().may_be_nonzero(x) {
            return Some(0.0);
        }
        let mut s = 0.0;
        for d0 in 0..=g[0] {
            for d1 in 0..=g[1] {
                for d2 in 0..=g[2] {
                    let c = binom(g[0], d0) * binom(g[1], d1) * binom(g[2], d2);
                    let b = self.1.partial(x, [g[0] - d0, g[1] - d1, g[2] - d2])?;
                    if b != 0.0 {
                        s += c * self.0.partial(x, [d0, d1, d2])? * b;
                    }
                }
            }
        }
        Some(s)
    }
    fn support(&self) -> Support {
        match (self.0.support(), self.1.support()) {
            (Support::Everywhere, s) | (s, Support::Everywhere) => s,
            (a, _) => a,
        }
    }
    fn contains(&self, x: &P3) -> bool {
        self.0.contains(x) && self.1.contains(x)
    }
}

/// Linear combination of boxed fields.
pub struct LinComb(pub Vec<(f64, Box<dyn Field>)>);

impl Field for LinComb {
    fn value(&self, x: &P3) -> f64 {
        self.0.iter().map(|(c, f)| c * f.value(x)).sum()
    }
    fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
        let mut s = 0.0;
        for (c, f) in &self.0 {
            s += c * f.partial(x, g)?;
        }
        Some(s)
    }
    fn support(&self) -> Support {
        let mut out: Option<(P3, f64)> = None;
        for (_, f) in &self.0 {
            match f.support() {
                Support::Everywhere => return Support::Everywhere,
                Support::Ball { center, radius } => {
                    out = Some(match out {
                        None => (center, radius),
                        Some((c, r)) => {
                            let d = norm(sub(c, center));
                            if d + radius <= r {
                                (c, r)
                            } else {
                                (c, d + radius)
                            }
                        }
                    })
                }
            }
        }
        out.map_or(Support::Everywhere, |(center, radius)| Support::Ball { center, radius })
    }
    fn contains(&self, x: &P3) -> bool {
        self.0.iter().all(|(_, f)| f.contains(x))
    }
}

/// Derivative order along `(g_perp, g_parperp, g_par)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct MultiIndex {
    pub b_perp: u32,
    pub b_parperp: u32,
    pub b_par: u32,
}

impl MultiIndex {
    pub fn new(b_perp: u32, b_parperp: u32, b_par: u32) -> Self {
        Self { b_perp, b_parperp, b_par }
    }
    pub fn order(&self) -> u32 {
        self.b_perp + self.b_parperp + self.b_par
    }
    /// All multi-indices of total order `p`.
    pub fn of_order(p: u32) -> Vec<Self> {
        let mut v = Vec::new();
        for a in 0..=p {
            for b in 0..=p - a {
                v.push(Self::new(a, b, p - a - b));
            }
        }
        v
    }
}

/// `D^beta` in a frame expanded as `Σ coef_γ ∂^γ`.
pub fn expand_frame_derivative(frame: &Frame, beta: MultiIndex) -> BTreeMap<[u32; 3], f64> {
    let mut dirs = Vec::new();
    dirs.extend(std::iter::repeat_n(frame.g_perp, beta.b_perp as usize));
    dirs.extend(std::iter::repeat_n(frame.g_parperp, beta.b_parperp as usize));
    dirs.extend(std::iter::repeat_n(frame.g_par, beta.b_par as usize));
    let mut acc: BTreeMap<[u32; 3], f64> = BTreeMap::from([([0, 0, 0], 1.0)]);
    for g in dirs {
        let mut next = BTreeMap::new();
        for (k, c) in &acc {
            for i in 0..3 {
                if g[i] != 0.0 {
                    let mut k2 = *k;
                    k2[i] += 1;
                    *next.entry(k2).or_insert(0.0) += c * g[i];
                }
            }
        }
        acc = next;
    }
    acc.retain(|_, c| c.abs() > 1e-15);
    acc
}

fn central_weights(k: u32) -> Vec<(f64, f64)> {
    (0..=k).map(|j| (k as f64 / 2.0 - j as f64, if j % 2 == 0 { 1.0 } else { -1.0 } * binom(k, j))).collect()
}

fn fd_tensor(u: &dyn Field, frame: &Frame, beta: MultiIndex, x: &P3, h: f64) -> Result<f64> {
    let w = [central_weights(beta.b_perp), central_weights(beta.b_parperp), central_weights(beta.b_par)];
    let g = [frame.g_perp, frame.g_parperp, frame.g_par];
    let mut s = 0.0;
    for (o0, c0) in &w[0] {
        for (o1, c1) in &w[1] {
            for (o2, c2) in &w[2] {
                let p = axpy(axpy(axpy(*x, o0 * h, g[0]), o1 * h, g[1]), o2 * h, g[2]);
                if !u.contains(&p) {
                    return Err(QuadError::Domain(p));
                }
                s += c0 * c1 * c2 * u.value(&p);
            }
        }
    }
    Ok(s / h.powi(beta.order() as i32))
}

/// Analytic `D^beta u(x)` if every needed partial is registered.
pub fn analytic_dir_derivative(u: &dyn Field, frame: &Frame, beta: MultiIndex, x: &P3) -> Option<f64> {
    let mut s = 0.0;
    for (g, c) in expand_frame_derivative(frame, beta) {
        s += c * u.partial(x, g)?;
    }
    Some(s)
}

/// Default finite-difference step `ε^{1/(|β|+2)}`.
pub fn default_step(beta: MultiIndex) -> f64 {
    f64::EPSILON.powf(1.0 / (beta.order() as f64 + 2.0))
}

/// `D^beta u(x)` in the frame; analytic when registered, else Richardson-extrapolated
/// central differences with step `h`.
pub fn dir_derivative(u: &dyn Field, frame: &Frame, beta: MultiIndex, x: &P3, h: Option<f64>) -> Result<f64> {
    if let Some(v) = analytic_dir_derivative(u, frame, beta, x) {
        return Ok(v);
    }
    if beta.order() == 0 {
        return Ok(u.value(x));
    }
    let h = h.unwrap_or_else(|| default_step(beta));
    let d1 = fd_tensor(u, frame, beta, x, h)?;
    let d2 = fd_tensor(u, frame, beta, x, 0.5 * h)?;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// Exponents of `r_∂Ω^{d_bnd} r_v^{a_v} r_e^{a_e} r_f^{a_f}`; a missing feature
/// reference means the nearest one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub s: f64,
    pub t: f64,
    pub a_v: f64,
    pub a_e: f64,
    pub a_f: f64,
    pub d_bnd: f64,
    pub v: Option<usize>,
    pub e: Option<usize>,
    pub f: Option<usize>,
}

impl WeightSpec {
    pub fn unweighted() -> Self {
        Self { s: 0.5, t: 0.0, a_v: 0.0, a_e: 0.0, a_f: 0.0, d_bnd: 0.0, v: None, e: None, f: None }
    }

    /// `r_∂Ω^{-t-s} r_v^{β_par} r_e^{β_parperp} r_f^{β_perp}` for the neighborhood's features.
    pub fn regularity(spec: &NeighborhoodSpec, s: f64, t: f64, beta: MultiIndex) -> Result<Self> {
        if !(0.0 < s && s < 1.0) || !(0.0..0.5).contains(&t) {
            return Err(QuadError::Config(format!("need s in (0,1), t in [0,1/2); got s={s}, t={t}")));
        }
        Ok(Self::regularity_unchecked(spec, s, t, beta))
    }

    /// As [`WeightSpec::regularity`] without the `t < 1/2` check, for frontier scans.
    pub fn regularity_unchecked(spec: &NeighborhoodSpec, s: f64, t: f64, beta: MultiIndex) -> Self {
        Self {
            s,
            t,
            a_v: beta.b_par as f64,
            a_e: beta.b_parperp as f64,
            a_f: beta.b_perp as f64,
            d_bnd: -t - s,
            v: spec.v,
            e: spec.e,
            f: spec.f,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.a_v == 0.0 && self.a_e == 0.0 && self.a_f == 0.0 && self.d_bnd == 0.0
    }

    pub fn eval(&self, p: &Polytope, x: &P3) -> f64 {
        let pick = |idx: Option<usize>, n: usize, d: &dyn Fn(usize) -> f64| match idx {
            Some(i) => d(i),
            None => (0..n).map(d).fold(f64::INFINITY, f64::min),
        };
        let mut w = 1.0;
        if self.d_bnd != 0.0 {
            w *= p.dist_boundary(*x).powf(self.d_bnd);
        }
        if self.a_v != 0.0 {
            w *= pick(self.v, p.vertices.len(), &|i| p.dist_vertex(i, *x)).powf(self.a_v);
        }
        if self.a_e != 0.0 {
            w *= pick(self.e, p.edges.len(), &|i| p.dist_edge(i, *x)).powf(self.a_e);
        }
        if self.a_f != 0.0 {
            w *= pick(self.f, p.faces.len(), &|i| p.dist_face(i, *x)).powf(self.a_f);
        }
        w
    }
}

/// Integration domain for weighted norms.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Nbhd { poly: &'a Polytope, spec: NeighborhoodSpec },
    Box { lo: P3, hi: P3 },
    Ball { center: P3, radius: f64 },
    /// `B ∩ Ω` with the polytope supplying the weight distances.
    BallIn { poly: &'a Polytope, center: P3, radius: f64 },
}

impl Region<'_> {
    pub fn poly(&self) -> Option<&Polytope> {
        match self {
            Region::Nbhd { poly, .. } | Region::BallIn { poly, .. } => Some(poly),
            _ => None,
        }
    }

    pub fn contains(&self, x: &P3) -> bool {
        match self {
            Region::Nbhd { poly, spec } => {
                poly.contains(*x) && poly.member(spec, &poly.distances_unchecked(*x))
            }
            Region::Box { lo, hi } => (0..3).all(|i| x[i] > lo[i] && x[i] < hi[i]),
            Region::Ball { center, radius } => norm(sub(*x, *center)) < *radius,
            Region::BallIn { poly, center, radius } => norm(sub(*x, *center)) < *radius && poly.contains(*x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormResult {
    pub value: f64,
    pub error: f64,
    pub divergent: bool,
}

impl NormResult {
    pub fn is_finite(&self) -> bool {
        !self.divergent && self.value.is_finite()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub shell_pts: usize,
    pub panel_pts: usize,
    pub panels: usize,
    pub tail_tol: f64,
    pub min_shells: usize,
    pub max_shells: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { shell_pts: 6, panel_pts: 5, panels: 8, tail_tol: 1e-3, min_shells: 5, max_shells: 64 }
    }
}

/// One parameter direction of a chart.
#[derive(Debug, Clone)]
pub enum Dim {
    /// Composite Gauss over the listed intervals.
    Panels(Vec<(f64, f64)>),
    /// `(0, L)` split in dyadic shells toward 0, summed until the geometric tail is small.
    Graded(f64),
}

impl Dim {
    pub fn uniform(a: f64, b: f64, n: usize) -> Self {
        Dim::Panels((0..n).map(|i| (a + (b - a) * i as f64 / n as f64, a + (b - a) * (i + 1) as f64 / n as f64)).collect())
    }

    /// Uniform panels with extra breakpoints.
    pub fn with_breaks(a: f64, b: f64, n: usize, breaks: &[f64]) -> Self {
        let mut pts: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        pts.extend(breaks.iter().copied().filter(|&t| t > a && t < b));
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|p, q| (*p - *q).abs() < 1e-12 * (b - a));
        Dim::Panels(pts.windows(2).map(|w| (w[0], w[1])).collect())
    }
}

/// A parametrisation `params → (point, jacobian)` over a tensor of dims.
pub struct Chart<'a> {
    pub dims: [Dim; 3],
    pub map: Box<dyn Fn([f64; 3]) -> (P3, f64) + Sync + 'a>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    val: f64,
    err: f64,
    div: bool,
}

impl Chart<'_> {
    pub fn integrate(&self, f: &dyn Fn(&P3) -> f64, o: &QuadOptions) -> NormResult {
        let mut p = [0.0; 3];
        let a = self.level(0, &mut p, f, o);
        if a.div {
            NormResult { value: f64::INFINITY, error: f64::INFINITY, divergent: true }
        } else {
            NormResult { value: a.val, error: a.err, divergent: false }
        }
    }

    fn level(&self, d: usize, p: &mut [f64; 3], f: &dyn Fn(&P3) -> f64, o: &QuadOptions) -> Acc {
        if d == 3 {
            let (x, j) = (self.map)(*p);
            if j == 0.0 {
                return Acc::default();
            }
            return Acc { val: f(&x) * j, err: 0.0, div: false };
        }
        match &self.dims[d] {
            Dim::Panels(ps) => {
                let mut acc = Acc::default();
                for &(a, b) in ps {
                    let (xs, ws) = gauss_legendre(o.panel_pts, a, b);
                    for (x, w) in xs.iter().zip(&ws) {
                        p[d] = *x;
                        let r = self.level(d + 1, p, f, o);
                        if r.div {
                            return r;
                        }
                        acc.val += w * r.val;
                        acc.err += w.abs() * r.err;
                    }
                }
                acc
            }
            Dim::Graded(l) => {
                let l = *l;
                shell_sum(o, |a, b| {
                    let (xs, ws) = gauss_legendre(o.shell_pts, a, b);
                    let mut acc = Acc::default();
                    for (x, w) in xs.iter().zip(&ws) {
                        p[d] = *x;
                        let r = self.level(d + 1, p, f, o);
                        if r.div {
                            return r;
                        }
                        acc.val += w * r.val;
                        acc.err += w.abs() * r.err;
                    }
                    acc
                }, l)
            }
        }
    }
}

/// Dyadic shells `[L2^{-k-1}, L2^{-k}]` with geometric tail extrapolation.
fn shell_sum(o: &QuadOptions, mut shell: impl FnMut(f64, f64) -> Acc, l: f64) -> Acc {
    let mut sum = 0.0;
    let mut err = 0.0;
    let mut prev: Option<f64> = None;
    let mut prev_q: Option<f64> = None;
    let mut growing = 0;
    let mut stable = 0;
    let mut zeros = 0;
    for k in 0..o.max_shells {
        let b = l * 0.5f64.powi(k as i32);
        let r = shell(0.5 * b, b);
        if r.div {
            return r;
        }
        let s = r.val.abs();
        sum += r.val;
        err += r.err;
        if s == 0.0 || s <= 1e-16 * sum.abs() {
            zeros += 1;
            if zeros >= 2 && (sum != 0.0 || k >= 30) && k + 1 >= o.min_shells {
                return Acc { val: sum, err, div: false };
            }
            prev = Some(s);
            prev_q = None;
            continue;
        }
        zeros = 0;
        if let Some(p) = prev.filter(|p| *p > 0.0) {
            let q = s / p;
            growing = if q >= 1.0 { growing + 1 } else { 0 };
            if growing >= 3 && k + 1 >= o.min_shells {
                return Acc { val: f64::INFINITY, err: f64::INFINITY, div: true };
            }
            if let Some(pq) = prev_q {
                stable = if (q - pq).abs() <= 1e-3 * q { stable + 1 } else { 0 };
            }
            prev_q = Some(q);
            if q < 1.0 && k + 1 >= o.min_shells {
                let tail = s * q / (1.0 - q);
                if tail <= o.tail_tol * sum.abs() || (stable >= 3 && q < 0.999) {
                    let dq = prev_q.map_or(0.0, |pq| (q - pq).abs());
                    return Acc { val: sum + tail, err: err + tail * (1e-3 + dq / (1.0 - q)), div: false };
                }
            }
        }
        prev = Some(s);
    }
    // cap reached: extrapolate with the last ratio when possible
    match (prev, prev_q) {
        (Some(s), Some(q)) if q < 1.0 => {
            let tail = s * q / (1.0 - q);
            Acc { val: sum + tail, err: err + tail, div: false }
        }
        _ => Acc { val: sum, err: err + sum.abs(), div: false },
    }
}

/// Unit vector in face `f`, perpendicular to edge `e` and pointing into the face.
pub fn in_face_direction(p: &Polytope, e: usize, f: usize) -> P3 {
    let l = &p.faces[f].verts;
    let [a, b] = p.v_of_e[e];
    for k in 0..l.len() {
        let (i, j) = (l[k], l[(k + 1) % l.len()]);
        if (i == a && j == b) || (i == b && j == a) {
            let t = unit(sub(p.vertices[j], p.vertices[i]));
            return unit(cross(p.faces[f].normal, t));
        }
    }
    panic!("edge {e} not on face {f}");
}

/// Interior dihedral angle of the wedge at `e`, measured from face `f0`.
pub fn dihedral_from(p: &Polytope, e: usize, f0: usize) -> f64 {
    let f1 = if p.f_of_e[e][0] == f0 { p.f_of_e[e][1] } else { p.f_of_e[e][0] };
    let w1 = in_face_direction(p, e, f0);
    let w2 = p.inward_normal(f0);
    let u = in_face_direction(p, e, f1);
    let mut a = dot(u, w2).atan2(dot(u, w1));
    if a <= 0.0 {
        a += 2.0 * PI;
    }
    a
}

/// In-face polar axes at vertex `v` of face `f` and the interior angle.
pub fn face_corner(p: &Polytope, v: usize, f: usize) -> (P3, P3, f64) {
    let l = &p.faces[f].verts;
    let k = l.iter().position(|&i| i == v).expect("vertex on face");
    let q = p.vertices[l[(k + 1) % l.len()]];
    let pr = p.vertices[l[(k + l.len() - 1) % l.len()]];
    let x = p.vertices[v];
    let w1 = unit(sub(q, x));
    let w2 = cross(p.faces[f].normal, w1);
    let d = sub(pr, x);
    let mut a = dot(d, w2).atan2(dot(d, w1));
    if a <= 0.0 {
        a += 2.0 * PI;
    }
    (w1, w2, a)
}

/// Chart adapted to a region: graded toward its singular feature.
pub fn region_chart<'a>(region: &Region<'a>, o: &QuadOptions) -> Chart<'a> {
    let np = o.panels;
    match *region {
        Region::Box { lo, hi } => Chart {
            dims: [Dim::uniform(lo[0], hi[0], np), Dim::uniform(lo[1], hi[1], np), Dim::uniform(lo[2], hi[2], np)],
            map: Box::new(|q| (q, 1.0)),
        },
        Region::Ball { center, radius } | Region::BallIn { center, radius, .. } => sph_chart(
            center,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            radius,
            Dim::uniform(0.0, PI, np.max(2) / 2 + 2),
            Dim::uniform(0.0, 2.0 * PI, np.max(4)),
        ),
        Region::Nbhd { poly, spec } => nbhd_chart(poly, &spec, o),
    }
}

/// Spherical chart `c + r(sinθ cosφ w1 + sinθ sinφ w2 + cosθ w3)`.
fn sph_chart<'a>(c: P3, w: [P3; 3], r: f64, theta: Dim, phi: Dim) -> Chart<'a> {
    Chart {
        dims: [Dim::Graded(r), theta, phi],
        map: Box::new(move |q| {
            let (st, ct) = q[1].sin_cos();
            let (sp, cp) = q[2].sin_cos();
            let d = add(add(scale(w[0], st * cp), scale(w[1], st * sp)), scale(w[2], ct));
            (axpy(c, q[0], d), q[0] * q[0] * st)
        }),
    }
}

fn nbhd_chart<'a>(p: &'a Polytope, spec: &NeighborhoodSpec, o: &QuadOptions) -> Chart<'a> {
    let xi = spec.xi;
    let np = o.panels;
    let margin = 1.05;
    let ax = xi.asin();
    match spec.kind {
        Kind::Int => {
            let (lo, hi) = p.bbox();
            Chart {
                dims: [Dim::uniform(lo[0], hi[0], np), Dim::uniform(lo[1], hi[1], np), Dim::uniform(lo[2], hi[2], np)],
                map: Box::new(|q| (q, 1.0)),
            }
        }
        Kind::F => {
            let f = spec.f.unwrap();
            let n = p.inward_normal(f);
            let o0 = p.vertices[p.faces[f].verts[0]];
            let u1 = p.edges[p.first_edge_of_face(f)].dir;
            let u2 = cross(n, u1);
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in &p.faces[f].verts {
                let d = sub(p.vertices[v], o0);
                for (i, u) in [u1, u2].iter().enumerate() {
                    lo[i] = lo[i].min(dot(d, *u));
                    hi[i] = hi[i].max(dot(d, *u));
                }
            }
            let b = xi * xi;
            Chart {
                dims: [
                    Dim::Graded(xi * xi * xi),
                    Dim::with_breaks(lo[0], hi[0], np, &[lo[0] + b, hi[0] - b, lo[0] + xi, hi[0] - xi]),
                    Dim::with_breaks(lo[1], hi[1], np, &[lo[1] + b, hi[1] - b, lo[1] + xi, hi[1] - xi]),
                ],
                map: Box::new(move |q| (add(add(add(o0, scale(n, q[0])), scale(u1, q[1])), scale(u2, q[2])), 1.0)),
            }
        }
        Kind::E | Kind::Ef => {
            let e = spec.e.unwrap();
            let f0 = spec.f.unwrap_or(p.f_of_e[e][0]);
            let w1 = in_face_direction(p, e, f0);
            let w2 = p.inward_normal(f0);
            let a = p.vertices[p.edges[e].a];
            let d = p.edges[e].dir;
            let len = p.edges[e].len;
            let phi = if spec.kind == Kind::Ef {
                Dim::Graded(ax * margin)
            } else {
                let tw = dihedral_from(p, e, f0);
                Dim::with_breaks(0.0, tw, np, &[ax, tw - ax])
            };
            Chart {
                dims: [Dim::Graded(xi * xi), phi, Dim::with_breaks(0.0, len, np, &[xi, len - xi])],
                map: Box::new(move |q| {
                    let (sp, cp) = q[1].sin_cos();
                    let x = add(axpy(a, q[2], d), scale(add(scale(w1, cp), scale(w2, sp)), q[0]));
                    (x, q[0])
                }),
            }
        }
        Kind::V => {
            let v = spec.v.unwrap();
            sph_chart(
                p.vertices[v],
                [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                xi,
                Dim::uniform(0.0, PI, np),
                Dim::uniform(0.0, 2.0 * PI, 2 * np),
            )
        }
        Kind::Ve | Kind::Vef => {
            let (v, e) = (spec.v.unwrap(), spec.e.unwrap());
            let f0 = spec.f.unwrap_or(p.f_of_e[e][0]);
            let other = if p.edges[e].a == v { p.edges[e].b } else { p.edges[e].a };
            let t = unit(sub(p.vertices[other], p.vertices[v]));
            let w1 = in_face_direction(p, e, f0);
            let w2 = p.inward_normal(f0);
            let phi = if spec.kind == Kind::Vef {
                Dim::Graded(ax * margin)
            } else {
                let tw = dihedral_from(p, e, f0);
                Dim::with_breaks(0.0, tw, np, &[ax, tw - ax])
            };
            sph_chart(p.vertices[v], [w1, w2, t], xi, Dim::Graded(ax * margin), phi)
        }
        Kind::Vf => {
            let (v, f) = (spec.v.unwrap(), spec.f.unwrap());
            let (w1, w2, ang) = face_corner(p, v, f);
            let n = p.inward_normal(f);
            let c = p.vertices[v];
            let psi = (xi / (1.0 - xi * xi).sqrt()).atan() * margin;
            Chart {
                dims: [Dim::Graded(xi), Dim::Graded(psi), Dim::with_breaks(0.0, ang, np, &[ax, ang - ax])],
                map: Box::new(move |q| {
                    let (sps, cps) = q[1].sin_cos();
                    let (sp, cp) = q[2].sin_cos();
                    let d = add(scale(add(scale(w1, cp), scale(w2, sp)), cps), scale(n, sps));
                    (axpy(c, q[0], d), q[0] * q[0] * cps)
                }),
            }
        }
    }
}

/// `‖w · D^β u‖_{L²(region)}` by feature-graded quadrature; divergence yields a tagged `+∞`.
pub fn weighted_norm(
    u: &dyn Field,
    region: &Region,
    w: &WeightSpec,
    beta: MultiIndex,
    frame: &Frame,
) -> Result<NormResult> {
    weighted_norm_with(u, region, w, beta, frame, &QuadOptions::default())
}

pub fn weighted_norm_with(
    u: &dyn Field,
    region: &Region,
    w: &WeightSpec,
    beta: MultiIndex,
    frame: &Frame,
    o: &QuadOptions,
) -> Result<NormResult> {
    let poly = region.poly();
    if !w.is_trivial() && poly.is_none() {
        return Err(QuadError::Config("a weighted norm needs a polytope for the distances".into()));
    }
    let supp = u.support();
    let chart = region_chart(region, o);
    let failure: Mutex<Option<QuadError>> = Mutex::new(None);
    let integrand = |x: &P3| -> f64 {
        if !supp.may_be_nonzero(x) || !region.contains(x) {
            return 0.0;
        }
        let h = poly.map_or(1.0, |p| (0.25 * p.dist_boundary(*x)).min(1.0)) * default_step(beta);
        let d = match dir_derivative(u, frame, beta, x, Some(h)) {
            Ok(d) => d,
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                return 0.0;
            }
        };
        if d == 0.0 {
            return 0.0;
        }
        let wt = match poly {
            Some(p) if !w.is_trivial() => w.eval(p, x),
            _ => 1.0,
        };
        (wt * d).powi(2)
    };
    let r = chart.integrate(&integrand, o);
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    if r.divergent {
        return Ok(r);
    }
    let v = r.value.max(0.0).sqrt();
    Ok(NormResult { value: v, error: if v > 0.0 { 0.5 * r.error / v } else { r.error.sqrt() }, divergent: false })
}

/// Bounded open sets for the Monte-Carlo seminorm.
#[derive(Debug, Clone, Copy)]
pub enum McRegion {
    Interval(f64, f64),
    Box { lo: P3, hi: P3 },
    Ball { center: P3, radius: f64 },
}

impl McRegion {
    pub fn dim(&self) -> usize {
        match self {
            McRegion::Interval(..) => 1,
            _ => 3,
        }
    }
    pub fn measure(&self) -> f64 {
        match self {
            McRegion::Interval(a, b) => b - a,
            McRegion::Box { lo, hi } => (0..3).map(|i| hi[i] - lo[i]).product(),
            McRegion::Ball { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
        }
    }
    pub fn diameter(&self) -> f64 {
        match self {
            McRegion::Interval(a, b) => b - a,
            McRegion::Box { lo, hi } => norm(sub(*hi, *lo)),
            McRegion::Ball { radius, .. } => 2.0 * radius,
        }
    }
    pub fn contains(&self, x: &P3) -> bool {
        match self {
            McRegion::Interval(a, b) => x[0] > *a && x[0] < *b,
            McRegion::Box { lo, hi } => (0..3).all(|i| x[i] > lo[i] && x[i] < hi[i]),
            McRegion::Ball { center, radius } => norm(sub(*x, *center)) < *radius,
        }
    }
    pub fn sample(&self, rng: &mut impl Rng) -> P3 {
        match self {
            McRegion::Interval(a, b) => [rng.gen_range(*a..*b), 0.0, 0.0],
            McRegion::Box { lo, hi } => [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]), rng.gen_range(lo[2]..hi[2])],
            McRegion::Ball { center, radius } => loop {
                let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                if dot(d, d) < 1.0 {
                    return axpy(*center, *radius, d);
                }
            },
        }
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub fn unit_direction(d: usize, rng: &mut impl Rng) -> P3 {
    if d == 1 {
        return [if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, 0.0, 0.0];
    }
    let z: f64 = rng.gen_range(-1.0..1.0);
    let ph: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * ph.cos(), r * ph.sin(), z]
}

const MC_CHUNK: usize = 4096;

/// Run `budget` samples of `draw` in fixed chunks with per-chunk streams; the
/// reduction is in chunk order so the result does not depend on scheduling.
pub fn mc_mean(budget: usize, seed: u64, draw: impl Fn(&mut ChaCha8Rng) -> f64 + Sync) -> McEstimate {
    let chunks = budget.div_ceil(MC_CHUNK);
    let parts: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let n = MC_CHUNK.min(budget - c * MC_CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let v = draw(&mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2, n)
        })
        .collect();
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for (a, b, c) in parts {
        s += a;
        s2 += b;
        n += c;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    McEstimate { value: mean, stderr: (var / n as f64).sqrt(), samples: n }
}

/// `|u|²_{H^t(region)} = ∫∫ |u(x)-u(z)|²/|x-z|^{d+2t}` by importance-sampled Monte Carlo:
/// `x` uniform, `z = x + ρω` with `ρ ∝ ρ^{1-2t}` on `(0, diam)`.
pub fn slobodeckij(u: &dyn Field, region: &McRegion, t: f64, budget: usize, seed: u64) -> Result<McEstimate> {
    if !(0.0 < t && t < 1.0) || budget == 0 {
        return Err(QuadError::Config(format!("slobodeckij needs t in (0,1) and a budget; got t={t}")));
    }
    let d = region.dim();
    let dm = region.diameter();
    let sphere = if d == 1 { 2.0 } else { 4.0 * PI };
    let pw = 2.0 - 2.0 * t;
    let c = region.measure() * sphere * dm.powf(pw) / pw;
    Ok(mc_mean(budget, seed, |rng| {
        let x = region.sample(rng);
        let om = unit_direction(d, rng);
        let rho = dm * rng.gen::<f64>().powf(1.0 / pw);
        let z = axpy(x, rho, om);
        if !region.contains(&z) {
            return 0.0;
        }
        let du = u.value(&x) - u.value(&z);
        c * du * du / (rho * rho)
    }))
}

/// Conical-product rule on the reference tetrahedron `x,y,z ≥ 0, x+y+z ≤ 1`,
/// exact to degree `2n-1`.
pub fn tet_rule(n: usize) -> Vec<(P3, f64)> {
    let a = cached_ref(2.0, n);
    let b = cached_ref(1.0, n);
    let c = cached_ref(0.0, n);
    // weights (1+t)^k on [-1,1] map to (1-u)^k on [0,1] with u = (1-t)/2
    let map = |r: &Arc<(Vec<f64>, Vec<f64>)>, k: i32| -> Vec<(f64, f64)> {
        r.0.iter().zip(&r.1).map(|(t, w)| (0.5 * (1.0 - t), w * 0.5f64.powi(k + 1))).collect()
    };
    let (ua, vb, wc) = (map(&a, 2), map(&b, 1), map(&c, 0));
    let mut out = Vec::with_capacity(n * n * n);
    for &(u, wu) in &ua {
        for &(v, wv) in &vb {
            for &(w, ww) in &wc {
                out.push(([u, (1.0 - u) * v, (1.0 - u) * (1.0 - v) * w], wu * wv * ww));
            }
        }
    }
    out
}

/// Rule for the tetrahedron with the given corners.
pub fn tet_rule_on(p: [P3; 4], n: usize) -> Vec<(P3, f64)> {
    let e = [sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0])];
    let det = dot(e[0], cross(e[1], e[2]));
    tet_rule(n)
        .into_iter()
        .map(|(q, w)| (add(add(axpy(p[0], q[0], e[0]), scale(e[1], q[1])), scale(e[2], q[2])), w * det))
        .collect()
}

/// Volume rule over a polytope: fan of tetrahedra from the centroid over the
/// face triangulation, with signed weights so it is exact for any shape.
pub fn polytope_rule(p: &Polytope, n: usize) -> Vec<(P3, f64)> {
    let mut c = [0.0; 3];
    for v in &p.vertices {
        c = add(c, *v);
    }
    c = scale(c, 1.0 / p.vertices.len() as f64);
    let mut out = Vec::new();
    for f in &p.faces {
        for t in &f.tris {
            let [a, b, d] = p.tri_pts(*t);
            out.extend(tet_rule_on([c, a, b, d], n));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::fixtures::*;
    use proptest::prelude::*;

    #[test]
    fn jacobi_examples() {
        let r = jacobi_rule(0.5, 1.0, 1).unwrap();
        assert!((r.integrate(|_| 1.0) - 2.0 / 3.0).abs() < 1e-14);
        let r = jacobi_rule(0.0, 2.0, 2).unwrap();
        assert!((r.integrate(|y| y.powi(3)) - 4.0).abs() < 1e-13);
        let r = jacobi_rule(-0.5, 1.0, 8).unwrap();
        assert!((r.integrate(f64::exp) - 2.92530).abs() < 1e-5);
        assert!(matches!(jacobi_rule(-1.0, 1.0, 3), Err(QuadError::NotIntegrable(_))));
    }

    #[test]
    fn jacobi_against_adaptive_oracle() {
        // ∫₀¹ y^{-1/2} e^y dy = 2∫₀¹ e^{u²} du by substitution; composite Simpson oracle
        let n = 20000;
        let h = 1.0 / n as f64;
        let g = |u: f64| 2.0 * (u * u).exp();
        let simpson = (0..n).map(|i| {
            let a = i as f64 * h;
            h / 6.0 * (g(a) + 4.0 * g(a + 0.5 * h) + g(a + h))
        }).sum::<f64>();
        let r = jacobi_rule(-0.5, 1.0, 8).unwrap();
        assert!((r.integrate(f64::exp) - simpson).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn jacobi_monomials(alpha in -0.95..0.95f64, y in 0.1..3.0f64, n in 1usize..12) {
            let r = jacobi_rule(alpha, y, n).unwrap();
            prop_assert!(r.nodes.iter().all(|&t| t > 0.0 && t < y));
            prop_assert!(r.weights.iter().all(|&w| w > 0.0));
            for k in 0..2 * n {
                let exact = y.powf(alpha + k as f64 + 1.0) / (alpha + k as f64 + 1.0);
                let got = r.integrate(|t| t.powi(k as i32));
                prop_assert!((got - exact).abs() <= 1e-12 * exact.max(1.0), "k={} {} vs {}", k, got, exact);
            }
        }

        #[test]
        fn norm_is_homogeneous(lam in -3.0..3.0f64) {
            let u = PolyField::new(Poly3::linear(0.3, [1.0, -2.0, 0.5]));
            let lu = PolyField::new(u.poly.scale(lam));
            let reg = Region::Box { lo: [0.0; 3], hi: [1.0; 3] };
            let w = WeightSpec::unweighted();
            let fr = Frame::canonical();
            let b = MultiIndex::new(0, 0, 1);
            let a = weighted_norm(&u, &reg, &w, b, &fr).unwrap().value;
            let c = weighted_norm(&lu, &reg, &w, b, &fr).unwrap().value;
            prop_assert!((c - lam.abs() * a).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn gamma_reflection_and_constants() {
        for &x in &[0.1, 0.25, 0.5, 0.75, 0.9] {
            let lhs = gamma(x) * gamma(1.0 - x);
            assert!((lhs - PI / (PI * x).sin()).abs() < 1e-12 * lhs);
        }
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-14);
        assert!((gamma(-0.5) + 2.0 * PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn derivative_examples() {
        let fr = Frame::canonical();
        let u = FnField::new(|x: &P3| x[0] * x[0]);
        let d = dir_derivative(&u, &fr, MultiIndex::new(0, 0, 2), &[0.3, 0.2, 0.1], None).unwrap();
        assert!((d - 2.0).abs() < 1e-6);
        let u = FnField::new(|x: &P3| x[0] * x[1]);
        let d = dir_derivative(&u, &fr, MultiIndex::new(0, 1, 1), &[0.3, 0.2, 0.1], None).unwrap();
        assert!((d - 1.0).abs() < 1e-6);
        let c = cube();
        let u = FacePower::for_face(&c, face_with_normal(&c, [0.0, 0.0, -1.0]), 0.5);
        let d = dir_derivative(&u, &fr, MultiIndex::new(1, 0, 0), &[0.5, 0.5, 0.04], None).unwrap();
        assert!((d - 2.5).abs() < 1e-14);
    }

    #[test]
    fn fd_matches_analytic_in_rotated_frame() {
        let c = cube();
        let spec = NeighborhoodSpec { kind: Kind::Ef, xi: 0.1, v: None, e: Some(edge_index(&c, [1.0, 0.0, 0.0], [1.0, 1.0, 0.0])), f: Some(face_with_normal(&c, [1.0, 0.0, 0.0])) };
        let fr = c.frame_for(&spec);
        let p = Poly3::linear(0.0, [1.0, 2.0, -1.0]).pow(3).add(&Poly3::monomial(0.7, [1, 1, 1]));
        let ua = PolyField::new(p.clone());
        let uf = FnField::new(move |x: &P3| p.eval(x));
        let x = [0.3, 0.4, 0.2];
        for b in MultiIndex::of_order(3).into_iter().chain(MultiIndex::of_order(2)) {
            let a = dir_derivative(&ua, &fr, b, &x, None).unwrap();
            let f = dir_derivative(&uf, &fr, b, &x, None).unwrap();
            assert!((a - f).abs() < 1e-5 * a.abs().max(1.0), "{b:?}: {a} vs {f}");
        }
    }

    #[test]
    fn fd_domain_error() {
        let c = cube();
        let u = FacePower::for_face(&c, face_with_normal(&c, [0.0, 0.0, -1.0]), 0.5);
        let uf = FnField { f: move |x: &P3| u.value(x), support: Support::Everywhere };
        struct Restricted<F: Field>(F);
        impl<F: Field> Field for Restricted<F> {
            fn value(&self, x: &P3) -> f64 { self.0.value(x) }
            fn contains(&self, x: &P3) -> bool { x[2] > 0.0 }
        }
        let r = dir_derivative(&Restricted(uf), &Frame::canonical(), MultiIndex::new(1, 0, 0), &[0.5, 0.5, 1e-6], Some(1e-3));
        assert!(matches!(r, Err(QuadError::Domain(_))));
    }

    #[test]
    fn norm_examples() {
        let fr = Frame::canonical();
        let w = WeightSpec::unweighted();
        let r = weighted_norm(&Const(1.0), &Region::Box { lo: [0.0; 3], hi: [1.0; 3] }, &w, MultiIndex::default(), &fr).unwrap();
        assert!((r.value - 1.0).abs() < 1e-14);
        let u = FnField::new(|x: &P3| norm(*x));
        let r = weighted_norm(&u, &Region::Ball { center: [0.0; 3], radius: 1.0 }, &w, MultiIndex::default(), &fr).unwrap();
        assert!((r.value - (4.0 * PI / 5.0).sqrt()).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn frontier_of_face_singularity() {
        let c = cube();
        let f = face_with_normal(&c, [0.0, 0.0, -1.0]);
        let spec = NeighborhoodSpec { kind: Kind::F, xi: 0.1, v: None, e: None, f: Some(f) };
        let u = Product(FacePower::for_face(&c, f, 0.5), PolyField::bump([0.5, 0.5, 0.0], 0.3, 3));
        let fr = c.frame_for(&spec);
        let reg = Region::Nbhd { poly: &c, spec };
        let b = MultiIndex::new(1, 0, 0);
        let ok = weighted_norm(&u, &reg, &WeightSpec::regularity_unchecked(&spec, 0.5, 0.49, b), b, &fr).unwrap();
        assert!(ok.is_finite() && ok.value > 0.0);
        let bad = weighted_norm(&u, &reg, &WeightSpec::regularity_unchecked(&spec, 0.5, 0.51, b), b, &fr).unwrap();
        assert!(bad.divergent && bad.value.is_infinite());
    }

    #[test]
    fn face_slab_norm_matches_closed_form() {
        // ∫ over the ω_f slab of z^{-2t}·(bump)² has a 1D closed form in z when the bump is flat
        let c = cube();
        let f = face_with_normal(&c, [0.0, 0.0, -1.0]);
        let xi = 0.1;
        let spec = NeighborhoodSpec { kind: Kind::F, xi, v: None, e: None, f: Some(f) };
        let u = FacePower::for_face(&c, f, 0.5);
        let fr = c.frame_for(&spec);
        let b = MultiIndex::default();
        let w = WeightSpec::regularity_unchecked(&spec, 0.5, 0.25, b);
        let r = weighted_norm(&u, &Region::Nbhd { poly: &c, spec }, &w, b, &fr).unwrap();
        // cross-section of ω_f: square [ξ²,1-ξ²]² minus the corner pieces with r_v<ξ
        let side = 1.0 - 2.0 * xi * xi;
        let prim = |x: f64| 0.5 * (x * (xi * xi - x * x).sqrt() + xi * xi * (x / xi).asin());
        let (a, b) = (xi * xi, (xi * xi - xi.powi(4)).sqrt());
        let corner = prim(b) - prim(a) - xi * xi * (b - a);
        let area = side * side - 4.0 * corner;
        let zmax: f64 = xi.powi(3);
        let exact = (area * zmax.powf(0.5) / 0.5).sqrt();
        assert!((r.value - exact).abs() < 5e-3 * exact, "{} vs {}", r.value, exact);
    }

    #[test]
    fn norm_monotone_in_region() {
        let u = PolyField::new(Poly3::linear(1.0, [1.0, 1.0, 1.0]));
        let w = WeightSpec::unweighted();
        let fr = Frame::canonical();
        let small = weighted_norm(&u, &Region::Ball { center: [0.5; 3], radius: 0.2 }, &w, MultiIndex::default(), &fr).unwrap();
        let big = weighted_norm(&u, &Region::Ball { center: [0.5; 3], radius: 0.4 }, &w, MultiIndex::default(), &fr).unwrap();
        assert!(small.value <= big.value);
    }

    #[test]
    fn slobodeckij_examples() {
        let r = slobodeckij(&Const(3.0), &McRegion::Box { lo: [0.0; 3], hi: [1.0; 3] }, 0.5, 10000, 1).unwrap();
        assert_eq!(r.value, 0.0);
        let u = FnField::new(|x: &P3| x[0]);
        let r = slobodeckij(&u, &McRegion::Interval(0.0, 1.0), 0.5, 400_000, 7).unwrap();
        assert!((r.value - 1.0).abs() < 4.0 * r.stderr && r.stderr < 0.01, "{r:?}");
    }

    /// `8∫_{[0,1]³} Π(1-h_i) h₁²/|h|⁴ dh` by splitting into pyramids by the largest coordinate.
    fn cube_x1_seminorm_oracle(n: usize) -> f64 {
        let (xs, ws) = gauss_legendre(n, 0.0, 1.0);
        let mut s = 0.0;
        for (i, r) in xs.iter().enumerate() {
            for (j, a) in xs.iter().enumerate() {
                for (k, b) in xs.iter().enumerate() {
                    let w = ws[i] * ws[j] * ws[k];
                    let den = (1.0 + a * a + b * b).powi(2);
                    let common = (1.0 - r) * (1.0 - r * a) * (1.0 - r * b) / den;
                    // largest coordinate is h1, h2 or h3; h1² / max² is 1, a² or b²
                    s += w * common * (1.0 + a * a + b * b);
                }
            }
        }
        8.0 * s
    }

    #[test]
    fn slobodeckij_cube_against_tensor_oracle() {
        let oracle = cube_x1_seminorm_oracle(24);
        assert!((oracle - cube_x1_seminorm_oracle(32)).abs() < 1e-10);
        let u = FnField::new(|x: &P3| x[0]);
        let r = slobodeckij(&u, &McRegion::Box { lo: [0.0; 3], hi: [1.0; 3] }, 0.5, 400_000, 3).unwrap();
        assert!((r.value - oracle).abs() < 0.05 * oracle, "{} vs {}", r.value, oracle);
        assert!((r.value - oracle).abs() < 4.0 * r.stderr);
    }

    #[test]
    fn slobodeckij_stderr_scaling_and_determinism() {
        let u = FnField::new(|x: &P3| (3.0 * x[0]).sin() * x[1]);
        let reg = McRegion::Box { lo: [0.0; 3], hi: [1.0; 3] };
        let a = slobodeckij(&u, &reg, 0.4, 100_000, 11).unwrap();
        let b = slobodeckij(&u, &reg, 0.4, 200_000, 11).unwrap();
        let ratio = b.stderr / a.stderr;
        assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
        let a2 = slobodeckij(&u, &reg, 0.4, 100_000, 11).unwrap();
        assert_eq!(a.value.to_bits(), a2.value.to_bits());
    }

    #[test]
    fn bump_poly_is_flat_at_rim() {
        let b = PolyField::bump([0.0; 3], 1.0, 3);
        assert!((b.value(&[0.0; 3]) - 1.0).abs() < 1e-15);
        assert!(b.value(&[0.999, 0.0, 0.0]).abs() < 1e-8);
        assert_eq!(b.value(&[1.2, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn tet_rule_monomials() {
        // ∫ x^a y^b z^c over the reference simplex is a!b!c!/(a+b+c+3)!
        let fact = |k: u32| (1..=k).map(|i| i as f64).product::<f64>();
        let r = tet_rule(3);
        for a in 0..3u32 {
            for b in 0..3u32 {
                for c in 0..3u32 {
                    if a + b + c > 5 { continue; }
                    let got: f64 = r.iter().map(|(q, w)| w * q[0].powi(a as i32) * q[1].powi(b as i32) * q[2].powi(c as i32)).sum();
                    let want = fact(a) * fact(b) * fact(c) / fact(a + b + c + 3);
                    assert!((got - want).abs() < 1e-15, "{a}{b}{c}");
                }
            }
        }
    }

    #[test]
    fn polytope_rule_volumes_and_moments() {
        for (p, vol) in [(cube(), 1.0), (l_prism(), 3.0), (tetrahedron(), 1.0 / 6.0)] {
            let r = polytope_rule(&p, 2);
            let v: f64 = r.iter().map(|(_, w)| w).sum();
            assert!((v - vol).abs() < 1e-13);
        }
        let r = polytope_rule(&cube(), 3);
        let m: f64 = r.iter().map(|(q, w)| w * q[0] * q[0] * q[1]).sum();
        assert!((m - 1.0 / 6.0).abs() < 1e-14);
    }
}
