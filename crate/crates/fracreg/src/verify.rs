//! Bounded-ratio experiments: each inequality with an unspecified constant is
//! evaluated on a dyadic scale ladder and judged by the trend of LHS/RHS.
//!
//! Most checks run on manufactured fields `U(x,y) = Σ P_k(x-x₀) y^{q_k}` whose
//! norms over ball, half-ball and wedge sectors are integrated exactly in `y`
//! and by tensor Gauss rules in `x`.

use crate::covering::{CoveringElement, Shape};
use crate::extension::{dtn_constant, ExtError, ExtensionField, ExtensionParams};
use crate::polytope::{axpy, cross, dot, fixtures, norm, sub, unit, Frame, NeighborhoodSpec, Polytope, P3};
use crate::quadrature::{
    gauss_legendre, jacobi_rule, mc_mean, slobodeckij, unit_direction, weighted_norm, Field, McRegion, MultiIndex,
    NormResult, Poly3, PolyField, QuadError, Region, WeightSpec,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Ext(#[from] ExtError),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

fn cfg<T>(msg: impl Into<String>) -> Result<T> {
    Err(VerifyError::Config(msg.into()))
}

/// Largest tolerated decay exponent of the ratio toward small scales.
pub const SLOPE_BAND: f64 = 0.2;

/// Relative Monte-Carlo error above which a verdict is withheld.
pub const MC_REL_ERR: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Bounded,
    Unbounded,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Bounded => "bounded",
            Verdict::Unbounded => "unbounded",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub id: String,
    pub scales: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs0: Vec<f64>,
    pub ratio: Vec<f64>,
    /// Least-squares slope of `log ratio` against `log scale`.
    pub slope: f64,
    /// `|slope| ≤ SLOPE_BAND`.
    pub flat: bool,
    pub verdict: Verdict,
    /// Largest observed ratio, the empirical constant.
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

fn ratio_of(l: f64, r: f64) -> f64 {
    if l == 0.0 {
        0.0
    } else if r > 0.0 {
        l / r
    } else {
        f64::INFINITY
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

impl RatioReport {
    /// Apply the verdict rule: all-zero LHS is bounded; a non-finite ratio is
    /// unbounded; otherwise the ratio must not grow toward small scales faster
    /// than `scale^{-SLOPE_BAND}`.
    pub fn from_ladder(id: impl Into<String>, scales: Vec<f64>, lhs: Vec<f64>, rhs0: Vec<f64>) -> Self {
        let ratio: Vec<f64> = lhs.iter().zip(&rhs0).map(|(l, r)| ratio_of(*l, *r)).collect();
        let constant = ratio.iter().copied().fold(0.0, f64::max);
        let mut notes = Vec::new();
        let (slope, verdict) = if lhs.iter().all(|l| *l == 0.0) {
            (0.0, Verdict::Bounded)
        } else if ratio.iter().any(|r| !r.is_finite()) {
            notes.push("non-finite ratio".into());
            (f64::NAN, Verdict::Unbounded)
        } else if ratio.iter().any(|r| *r == 0.0) {
            notes.push("LHS vanishes on part of the ladder".into());
            (f64::NAN, Verdict::Inconclusive)
        } else if scales.len() < 2 {
            (0.0, Verdict::Bounded)
        } else {
            let m = loglog_slope(&scales, &ratio);
            (m, if m >= -SLOPE_BAND { Verdict::Bounded } else { Verdict::Unbounded })
        };
        Self {
            id: id.into(),
            scales,
            lhs,
            rhs0,
            ratio,
            slope,
            flat: slope.abs() <= SLOPE_BAND,
            verdict,
            constant,
            gamma: None,
            notes,
        }
    }

    /// Withhold the verdict when any Monte-Carlo error bar exceeds the rule.
    pub fn with_mc_errors(mut self, errs: &[f64]) -> Self {
        let bad = self.lhs.iter().zip(errs).any(|(l, e)| *l > 0.0 && *e > MC_REL_ERR * l);
        if bad {
            self.verdict = Verdict::Inconclusive;
            self.notes.push(format!("Monte-Carlo error above {MC_REL_ERR} of LHS"));
        }
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str = "id,scale,lhs,rhs0,ratio,verdict";

    /// Data rows without the header.
    pub fn csv_rows(&self) -> String {
        let id = csv_field(&self.id);
        let mut out = String::new();
        for i in 0..self.scales.len() {
            out.push_str(&format!(
                "{id},{},{},{},{},{}\n",
                self.scales[i],
                self.lhs[i],
                self.rhs0[i],
                self.ratio[i],
                self.verdict.name()
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `B ∩ Ω` near a feature in spherical coordinates about `center`: the full
/// ball, the half-ball on the side of `axis`, or the convex wedge swept from
/// `w1` toward `w2` around the edge direction `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub shape: Shape,
    pub center: P3,
    pub axis: P3,
    pub w1: P3,
    pub w2: P3,
    pub psi_max: f64,
}

fn complement(a: P3) -> (P3, P3) {
    let t = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let w1 = unit(cross(a, t));
    (w1, cross(a, w1))
}

impl Sector {
    pub fn ball(center: P3) -> Self {
        Self { shape: Shape::Ball, center, axis: [0.0, 0.0, 1.0], w1: [1.0, 0.0, 0.0], w2: [0.0, 1.0, 0.0], psi_max: 2.0 * PI }
    }

    pub fn half_ball(center: P3, inward: P3) -> Self {
        let n = unit(inward);
        let (w1, w2) = complement(n);
        Self { shape: Shape::HalfBall, center, axis: n, w1, w2, psi_max: 2.0 * PI }
    }

    /// Wedge between two faces with inward normals `n0`, `n1`; reflex wedges
    /// are not sectors of this form.
    pub fn wedge(center: P3, n0: P3, n1: P3) -> Result<Self> {
        let (n0, n1) = (unit(n0), unit(n1));
        let a = cross(n0, n1);
        if norm(a) < 1e-12 {
            return cfg("wedge faces are parallel");
        }
        let a = unit(a);
        let mut w1 = cross(a, n0);
        if dot(w1, n1) < 0.0 {
            w1 = [-w1[0], -w1[1], -w1[2]];
        }
        let psi = PI - dot(n0, n1).clamp(-1.0, 1.0).acos();
        Ok(Self { shape: Shape::Wedge, center, axis: a, w1, w2: n0, psi_max: psi })
    }

    pub fn from_element(el: &CoveringElement) -> Result<Self> {
        match el.shape {
            Shape::Ball => Ok(Self::ball(el.center)),
            Shape::HalfBall => Ok(Self::half_ball(el.center, el.planes[0])),
            Shape::Wedge if !el.convex => cfg("reflex wedges are not supported"),
            Shape::Wedge => Self::wedge(el.center, el.planes[0], el.planes[1]),
        }
    }

    /// Any direction in a ball, face-tangential in a half-ball, edge-parallel in a wedge.
    pub fn admissible(&self, d: P3) -> bool {
        match self.shape {
            Shape::Ball => true,
            Shape::HalfBall => dot(d, self.axis).abs() < 1e-12,
            Shape::Wedge => norm(cross(d, self.axis)) < 1e-12,
        }
    }

    /// Points (relative to the centre) and weights on the sector of radius
    /// `radius`, with the extra weight `(distance to the face)^kappa` for
    /// half-balls. Exact for polynomials of degree below `2n` when `kappa = 0`.
    pub fn rule(&self, radius: f64, n: usize, kappa: f64) -> Result<Vec<(P3, f64)>> {
        if kappa != 0.0 && self.shape != Shape::HalfBall {
            return cfg("a face-distance weight needs a half-ball");
        }
        let rr = jacobi_rule(2.0 + kappa, radius, n)?;
        let mut ang: Vec<(f64, f64, f64)> = Vec::new(); // (cos θ, sin θ, weight)
        match self.shape {
            Shape::Ball => {
                let (m, w) = gauss_legendre(n, -1.0, 1.0);
                ang.extend(m.iter().zip(&w).map(|(m, w)| (*m, (1.0 - m * m).sqrt(), *w)));
            }
            Shape::HalfBall => {
                let j = jacobi_rule(kappa, 1.0, n)?;
                ang.extend(j.nodes.iter().zip(&j.weights).map(|(m, w)| (*m, (1.0 - m * m).sqrt(), *w)));
            }
            Shape::Wedge => {
                let (th, w) = gauss_legendre(2 * n, 0.0, PI);
                ang.extend(th.iter().zip(&w).map(|(t, w)| (t.cos(), t.sin(), w * t.sin())));
            }
        }
        let psi: Vec<(f64, f64)> = if self.shape == Shape::Wedge {
            let (p, w) = gauss_legendre(2 * n, 0.0, self.psi_max);
            p.into_iter().zip(w).collect()
        } else {
            let m = 2 * n + 2;
            (0..m).map(|k| (2.0 * PI * k as f64 / m as f64, 2.0 * PI / m as f64)).collect()
        };
        let mut out = Vec::with_capacity(n * ang.len() * psi.len());
        for (r, wr) in rr.nodes.iter().zip(&rr.weights) {
            for (ct, st, wt) in &ang {
                for (p, wp) in &psi {
                    let d = [
                        ct * self.axis[0] + st * (p.cos() * self.w1[0] + p.sin() * self.w2[0]),
                        ct * self.axis[1] + st * (p.cos() * self.w1[1] + p.sin() * self.w2[1]),
                        ct * self.axis[2] + st * (p.cos() * self.w1[2] + p.sin() * self.w2[2]),
                    ];
                    out.push(([r * d[0], r * d[1], r * d[2]], wr * wt * wp));
                }
            }
        }
        Ok(out)
    }
}

/// A sum of `P(x - x₀)·y^q`.
pub type Series = Vec<(Poly3, f64)>;

const AXES: [[u32; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

fn dir_poly(p: &Poly3, d: P3) -> Poly3 {
    (0..3).filter(|i| d[*i] != 0.0).fold(Poly3::default(), |acc, i| acc.add(&p.deriv(AXES[i]).scale(d[i])))
}

fn laplacian(p: &Poly3) -> Poly3 {
    p.deriv([2, 0, 0]).add(&p.deriv([0, 2, 0])).add(&p.deriv([0, 0, 2]))
}

/// All multi-indices `[a,b,c]` with `a+b+c = j`.
pub fn multi_indices(j: u32) -> Vec<[u32; 3]> {
    let mut v = Vec::new();
    for a in 0..=j {
        for b in 0..=j - a {
            v.push([a, b, j - a - b]);
        }
    }
    v
}

/// `Σ_series ∫_sector ∫_0^θ y^w (Σ_k P_k y^{a_k})²`; `+∞` when a `y`-power is not integrable.
pub fn sq_norm(series: &[Series], pts: &[(P3, f64)], w: f64, theta: f64) -> f64 {
    let mut total = 0.0;
    for ser in series {
        let terms: Vec<&(Poly3, f64)> = ser.iter().filter(|(p, _)| !p.terms.is_empty()).collect();
        let vals: Vec<Vec<f64>> = terms.iter().map(|(p, _)| pts.iter().map(|(x, _)| p.eval(x)).collect()).collect();
        for k in 0..terms.len() {
            for l in 0..terms.len() {
                let xint: f64 = pts.iter().enumerate().map(|(i, (_, wt))| wt * vals[k][i] * vals[l][i]).sum();
                if xint == 0.0 {
                    continue;
                }
                let e = w + terms[k].1 + terms[l].1;
                if e <= -1.0 {
                    return f64::INFINITY;
                }
                total += xint * theta.powf(e + 1.0) / (e + 1.0);
            }
        }
    }
    total
}

fn sq_norm_x(p: &Poly3, pts: &[(P3, f64)]) -> f64 {
    if p.terms.is_empty() {
        return 0.0;
    }
    pts.iter().map(|(x, w)| w * p.eval(x).powi(2)).sum()
}

/// Closed-form triple `(U, f, F)` with `U = Σ P_k(x-x₀) y^{q_k}`,
/// `F = div(y^α∇U)` and `f = -d_s lim_{y→0} y^α∂_yU`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manufactured {
    pub s: f64,
    pub center: P3,
    pub terms: Series,
}

fn is_q(q: f64, v: f64) -> bool {
    (q - v).abs() < 1e-12
}

impl Manufactured {
    /// Powers must be `0`, `2s` or above `1+s`, so that `f` exists and
    /// `F ∈ L²_{-α}` near `y = 0`.
    pub fn new(s: f64, center: P3, terms: Series) -> Result<Self> {
        if !(0.0 < s && s < 1.0) {
            return cfg(format!("order s={s} outside (0,1)"));
        }
        for (_, q) in &terms {
            if !(is_q(*q, 0.0) || is_q(*q, 2.0 * s) || *q > 1.0 + s) {
                return cfg(format!("y-power {q} gives no admissible triple for s={s}"));
            }
        }
        Ok(Self { s, center, terms })
    }

    pub fn alpha(&self) -> f64 {
        1.0 - 2.0 * self.s
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(p, _)| p.degree()).max().unwrap_or(0)
    }

    fn local(&self, x: &P3) -> P3 {
        sub(*x, self.center)
    }

    pub fn value(&self, x: &P3, y: f64) -> f64 {
        let l = self.local(x);
        self.terms.iter().map(|(p, q)| p.eval(&l) * y.powf(*q)).sum()
    }

    /// `D_{d_1}⋯D_{d_p} U`.
    pub fn derived(&self, dirs: &[P3]) -> Series {
        self.terms.iter().map(|(p, q)| (dirs.iter().fold(p.clone(), |acc, d| dir_poly(&acc, *d)), *q)).collect()
    }

    /// `(∇_x, ∂_y)` of a series, one series per component.
    pub fn grad_of(ser: &Series) -> Vec<Series> {
        let mut out: Vec<Series> = AXES.iter().map(|g| ser.iter().map(|(p, q)| (p.deriv(*g), *q)).collect()).collect();
        out.push(ser.iter().filter(|(_, q)| *q != 0.0).map(|(p, q)| (p.scale(*q), q - 1.0)).collect());
        out
    }

    pub fn grad_series(&self, dirs: &[P3]) -> Vec<Series> {
        Self::grad_of(&self.derived(dirs))
    }

    /// `f` as a polynomial in local coordinates.
    pub fn f_poly(&self) -> Poly3 {
        let ds = dtn_constant(self.s);
        self.terms
            .iter()
            .filter(|(_, q)| is_q(*q, 2.0 * self.s))
            .fold(Poly3::default(), |acc, (p, _)| acc.add(&p.scale(-ds * 2.0 * self.s)))
    }

    pub fn f_value(&self, x: &P3) -> f64 {
        self.f_poly().eval(&self.local(x))
    }

    /// `∂_x^g F`, `y`-exponents including the factor `y^α`.
    pub fn big_f_series(&self, g: [u32; 3]) -> Series {
        let (a, s2) = (self.alpha(), 2.0 * self.s);
        let mut out = Series::new();
        for (p, q) in &self.terms {
            let dp = p.deriv(g);
            out.push((laplacian(&dp), q + a));
            if !is_q(*q, 0.0) && !is_q(*q, s2) {
                out.push((dp.scale(q * (q - s2)), q - 2.0 + a));
            }
        }
        out
    }

    pub fn big_f(&self, x: &P3, y: f64) -> f64 {
        let l = self.local(x);
        self.big_f_series([0, 0, 0]).iter().map(|(p, q)| p.eval(&l) * y.powf(*q)).sum()
    }

    /// `div(y^α∇U)` by second-order forward differentiation of `U`'s closed form.
    pub fn div_by_dual(&self, x: &P3, y: f64) -> f64 {
        let l = self.local(x);
        let c = |v: f64| Hd::c(v);
        let mut lap = 0.0;
        for i in 0..3 {
            let mut xs = [c(l[0]), c(l[1]), c(l[2])];
            xs[i] = Hd { a: l[i], b: 1.0, c: 1.0, d: 0.0 };
            lap += self.value_hd(&xs, c(y)).d;
        }
        let uy = self.value_hd(&[c(l[0]), c(l[1]), c(l[2])], Hd { a: y, b: 1.0, c: 1.0, d: 0.0 });
        let a = self.alpha();
        y.powf(a) * (lap + uy.d) + a * y.powf(a - 1.0) * uy.b
    }

    fn value_hd(&self, x: &[Hd; 3], y: Hd) -> Hd {
        let mut acc = Hd::c(0.0);
        for (p, q) in &self.terms {
            let mut pv = Hd::c(0.0);
            for (k, coef) in &p.terms {
                let mut m = Hd::c(*coef);
                for i in 0..3 {
                    for _ in 0..k[i] {
                        m = m.mul(x[i]);
                    }
                }
                pv = pv.add(m);
            }
            acc = acc.add(pv.mul(y.powf(*q)));
        }
        acc
    }

    /// `f` recovered from the flux `-d_s y^α ∂_yU` on a `y`-ladder (central
    /// differences), extrapolated in the leading correction power.
    pub fn f_by_ladder(&self, x: &P3) -> f64 {
        let (a, s2) = (self.alpha(), 2.0 * self.s);
        let ds = dtn_constant(self.s);
        let flux = |y: f64| {
            let h = 1e-4 * y;
            -ds * y.powf(a) * (self.value(x, y + h) - self.value(x, y - h)) / (2.0 * h)
        };
        let e = self
            .terms
            .iter()
            .filter(|(_, q)| !is_q(*q, 0.0) && !is_q(*q, s2))
            .map(|(_, q)| q - s2)
            .fold(f64::INFINITY, f64::min);
        let y = 0.01;
        if e.is_infinite() {
            return flux(y);
        }
        let k = 2f64.powf(e);
        (k * flux(0.5 * y) - flux(y)) / (k - 1.0)
    }
}

/// Hyper-dual number `a + bε₁ + cε₂ + dε₁ε₂`.
#[derive(Debug, Clone, Copy)]
struct Hd {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Hd {
    fn c(a: f64) -> Self {
        Self { a, b: 0.0, c: 0.0, d: 0.0 }
    }
    fn add(self, o: Self) -> Self {
        Self { a: self.a + o.a, b: self.b + o.b, c: self.c + o.c, d: self.d + o.d }
    }
    fn mul(self, o: Self) -> Self {
        Self {
            a: self.a * o.a,
            b: self.a * o.b + self.b * o.a,
            c: self.a * o.c + self.c * o.a,
            d: self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
        }
    }
    fn powf(self, q: f64) -> Self {
        if q == 0.0 {
            return Self::c(1.0);
        }
        let f0 = self.a.powf(q);
        let f1 = q * self.a.powf(q - 1.0);
        let f2 = q * (q - 1.0) * self.a.powf(q - 2.0);
        Self { a: f0, b: f1 * self.b, c: f1 * self.c, d: f1 * self.d + f2 * self.b * self.c }
    }
}

fn check_common(sector: &Sector, r: f64, c: f64, dirs: &[P3]) -> Result<()> {
    if !(0.0 < c && c < 1.0) || !(r > 0.0) {
        return cfg(format!("need R > 0 and c in (0,1); got R={r}, c={c}"));
    }
    for d in dirs {
        if !sector.admissible(*d) {
            return cfg(format!("direction {d:?} is not admissible for a {:?}", sector.shape));
        }
    }
    Ok(())
}

fn rule_order(m: &Manufactured) -> usize {
    (m.degree() as usize + 2).max(4)
}

/// `(LHS, RHS0)` of the first-order Caccioppoli inequality along `dir`:
/// `‖D∇U‖²_{L²_α(B^θ_{cR})}` against
/// `(((1-c)R)^{-2} + (θ'-θ)^{-2})‖∇U‖²_{L²_α(B^{θ'}_R)} + ‖Df‖²_{L²(B_R)} + ‖F‖²_{L²_{-α}(B^{θ'}_R)}`.
#[allow(clippy::too_many_arguments)]
pub fn caccioppoli_ratio(m: &Manufactured, sector: &Sector, r: f64, c: f64, theta: f64, theta2: f64, dir: P3) -> Result<(f64, f64)> {
    check_common(sector, r, c, &[dir])?;
    if !(0.0 < theta && theta < theta2) {
        return cfg(format!("need 0 < θ < θ'; got {theta}, {theta2}"));
    }
    let n = rule_order(m);
    let a = m.alpha();
    let inner = sector.rule(c * r, n, 0.0)?;
    let outer = sector.rule(r, n, 0.0)?;
    let lhs = sq_norm(&m.grad_series(&[dir]), &inner, a, theta);
    let g = sq_norm(&m.grad_series(&[]), &outer, a, theta2);
    let fp = sq_norm_x(&dir_poly(&m.f_poly(), dir), &outer);
    let bf = sq_norm(&[m.big_f_series([0, 0, 0])], &outer, -a, theta2);
    let k = ((1.0 - c) * r).powi(-2) + (theta2 - theta).powi(-2);
    Ok((lhs, k * g + fp + bf))
}

/// Largest `‖D^η f‖²_{L²(B_R)}` over sub-multisets `η` of `dirs` with `|η| = j`.
fn max_f_sub(m: &Manufactured, dirs: &[P3], j: usize, pts: &[(P3, f64)]) -> f64 {
    let f = m.f_poly();
    if f.terms.is_empty() {
        return 0.0;
    }
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << dirs.len()) {
        if mask.count_ones() as usize != j {
            continue;
        }
        let p = (0..dirs.len()).filter(|i| mask & (1 << i) != 0).fold(f.clone(), |acc, i| dir_poly(&acc, dirs[i]));
        best = best.max(sq_norm_x(&p, pts));
    }
    best
}

fn max_big_f(m: &Manufactured, j: u32, pts: &[(P3, f64)], theta: f64) -> f64 {
    multi_indices(j).into_iter().map(|g| sq_norm(&[m.big_f_series(g)], pts, -m.alpha(), theta)).fold(0.0, f64::max)
}

fn max_f_axes(m: &Manufactured, j: u32, pts: &[(P3, f64)]) -> f64 {
    let f = m.f_poly();
    multi_indices(j).into_iter().map(|g| sq_norm_x(&f.deriv(g), pts)).fold(0.0, f64::max)
}

/// `(LHS, RHS0)` of the order-`p` Caccioppoli inequality, `p = dirs.len()`:
/// `‖D^β∇U‖²` against `(γp)^{2p}R^{-2p}‖∇U‖² + Σ_j (γp)^{2(p-j)}R^{2(j-p)}(max‖D^η f‖² + max‖∂^η F‖²)`.
#[allow(clippy::too_many_arguments)]
pub fn high_order_caccioppoli(
    m: &Manufactured,
    sector: &Sector,
    r: f64,
    c: f64,
    theta: f64,
    theta2: f64,
    dirs: &[P3],
    gamma: f64,
) -> Result<(f64, f64)> {
    check_common(sector, r, c, dirs)?;
    if !(0.0 < theta && theta < theta2) || !(gamma > 0.0) {
        return cfg("need 0 < θ < θ' and γ > 0");
    }
    let n = rule_order(m);
    let a = m.alpha();
    let p = dirs.len();
    let gp = gamma * p as f64;
    let inner = sector.rule(c * r, n, 0.0)?;
    let outer = sector.rule(r, n, 0.0)?;
    let lhs = sq_norm(&m.grad_series(dirs), &inner, a, theta);
    let mut rhs = gp.powi(2 * p as i32) * r.powi(-2 * p as i32) * sq_norm(&m.grad_series(&[]), &outer, a, theta2);
    for j in 1..=p {
        let data = max_f_sub(m, dirs, j, &outer) + max_big_f(m, j as u32 - 1, &outer, theta2);
        rhs += gp.powi(2 * (p - j) as i32) * r.powi(2 * (j as i32 - p as i32)) * data;
    }
    Ok((lhs, rhs))
}

/// One `j`-row of the data norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataNormRow {
    pub j: u32,
    pub f_max: f64,
    pub big_f_max: f64,
    pub term: f64,
}

/// `Σ_{j=1}^{p+1} (γp)^{-2j}(3^j max_{|β|=j}‖∂^β f‖² + 3^{j-1} max_{|β|=j-1}‖∂^β F‖²_{-α})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataNormBundle {
    pub p: u32,
    pub gamma: f64,
    pub value: f64,
    pub components: Vec<DataNormRow>,
}

/// `γp` with `p = 0` read as `p = 1`, where the literal factor is undefined.
pub fn gamma_p(gamma: f64, p: u32) -> f64 {
    gamma * p.max(1) as f64
}

impl DataNormBundle {
    /// From the maxima per order: `f_max[j]` for `|β| = j`, `big_f_max[j]` for `|β| = j`.
    pub fn assemble(f_max: &[f64], big_f_max: &[f64], gamma: f64, p: u32) -> Result<Self> {
        if f_max.len() < p as usize + 2 || big_f_max.len() < p as usize + 1 || !(gamma > 0.0) {
            return cfg("data norm needs maxima up to order p+1 and γ > 0");
        }
        let gp = gamma_p(gamma, p);
        let mut components = Vec::new();
        let mut value = 0.0;
        for j in 1..=p + 1 {
            let (fm, bm) = (f_max[j as usize], big_f_max[j as usize - 1]);
            let term = gp.powi(-2 * j as i32) * (3f64.powi(j as i32) * fm + 3f64.powi(j as i32 - 1) * bm);
            value += term;
            components.push(DataNormRow { j, f_max: fm, big_f_max: bm, term });
        }
        Ok(Self { p, gamma, value, components })
    }

    /// The bundle of a manufactured triple on `B_R ∩ sector` with heights `(0, Y)`.
    pub fn of_triple(m: &Manufactured, sector: &Sector, r: f64, y: f64, gamma: f64, p: u32) -> Result<Self> {
        let pts = sector.rule(r, rule_order(m), 0.0)?;
        let f_max: Vec<f64> = (0..=p + 1).map(|j| max_f_axes(m, j, &pts)).collect();
        let big_f_max: Vec<f64> = (0..=p).map(|j| max_big_f(m, j, &pts, y)).collect();
        Self::assemble(&f_max, &big_f_max, gamma, p)
    }
}

/// `(LHS, RHS0)` of the localized shift estimate on a half-ball:
/// `‖r_∂Ω^{-t}D^β∇U‖²_{L²_α(B^{Y/2}_{cR})}` against
/// `R^{-2p-1}(γp)^{2p}(1+γp)(‖∇U‖²_{L²_α(B^Y_R)} + R^{s+1}Ñ^{(p)})`.
#[allow(clippy::too_many_arguments)]
pub fn shift_ratio(
    m: &Manufactured,
    sector: &Sector,
    r: f64,
    c: f64,
    y: f64,
    t: f64,
    dirs: &[P3],
    gamma: f64,
) -> Result<(f64, f64)> {
    check_common(sector, r, c, dirs)?;
    if !(0.0..0.5).contains(&t) {
        return cfg(format!("shift order t={t} outside [0,1/2)"));
    }
    if t > 0.0 && sector.shape != Shape::HalfBall {
        return cfg("the boundary weight is resolved on half-balls only");
    }
    let n = rule_order(m);
    let a = m.alpha();
    let p = dirs.len() as u32;
    let gp = gamma * p as f64;
    let inner = sector.rule(c * r, n, -2.0 * t)?;
    let outer = sector.rule(r, n, 0.0)?;
    let lhs = sq_norm(&m.grad_series(dirs), &inner, a, 0.5 * y);
    let g = sq_norm(&m.grad_series(&[]), &outer, a, y);
    let nt = DataNormBundle::of_triple(m, sector, r, y, gamma, p)?.value;
    let rhs = r.powi(-2 * p as i32 - 1) * gp.powi(2 * p as i32) * (1.0 + gp) * (g + r.powf(m.s + 1.0) * nt);
    Ok((lhs, rhs))
}

/// `(|V(0)|², ‖V‖^{1-α}‖∂_yV‖^{1+α} + ‖V‖²)` for a profile given as
/// `y ↦ (V, y^α∂_yV)`, norms in `L²_α(0,Y)`.
pub fn trace_ratio_profile(v: &dyn Fn(f64) -> (f64, f64), v0: f64, alpha: f64, y_max: f64, y1: f64, n: usize) -> Result<(f64, f64)> {
    let (mut nv, mut nd) = (0.0, 0.0);
    for (yy, wa, wm) in panels(alpha, y_max, y1, n)? {
        let (val, fl) = v(yy);
        nv += wa * val * val;
        nd += wm * fl * fl;
    }
    let rhs = nv.sqrt().powf(1.0 - alpha) * nd.sqrt().powf(1.0 + alpha) + nv;
    Ok((v0 * v0, rhs))
}

/// Nodes on `(0, Y)` with weights for `y^α` and `y^{-α}`: Gauss–Jacobi on
/// `(0, y1)` and Gauss–Legendre on dyadic panels beyond.
fn panels(alpha: f64, y_max: f64, y1: f64, n: usize) -> Result<Vec<(f64, f64, f64)>> {
    let y1 = y1.min(y_max);
    let ja = jacobi_rule(alpha, y1, n)?;
    let jm = jacobi_rule(-alpha, y1, n)?;
    // one set of nodes: both weights from the α rule, corrected by y^{-2α}
    let mut out: Vec<(f64, f64, f64)> = ja.nodes.iter().zip(&ja.weights).map(|(y, w)| (*y, *w, w * y.powf(-2.0 * alpha))).collect();
    if alpha != 0.0 {
        out.clear();
        for (y, w) in ja.nodes.iter().zip(&ja.weights) {
            out.push((*y, *w, 0.0));
        }
        for (y, w) in jm.nodes.iter().zip(&jm.weights) {
            out.push((*y, 0.0, *w));
        }
    }
    let mut a = y1;
    while a < y_max * (1.0 - 1e-12) {
        let b = (2.0 * a).min(y_max);
        let (ys, ws) = gauss_legendre(n, a, b);
        for (y, w) in ys.iter().zip(&ws) {
            out.push((*y, w * y.powf(alpha), w * y.powf(-alpha)));
        }
        a = b;
    }
    Ok(out)
}

/// Trace inequality at each point of `xs`; the report's constant is the largest ratio.
pub fn trace_ratio(v: &ExtensionField, xs: &[P3], y_max: f64) -> Result<RatioReport> {
    let alpha = v.params.alpha;
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for x in xs {
        let y1 = y_max.min(0.25 * v.interior_depth(x).max(1e-3 * y_max));
        let v0 = v.extend(x, 0.0)?;
        let err = std::cell::RefCell::new(None);
        let prof = |y: f64| match (v.extend(x, y), v.weighted_dy(x, y)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                err.borrow_mut().get_or_insert(e);
                (0.0, 0.0)
            }
        };
        let (l, r) = trace_ratio_profile(&prof, v0, alpha, y_max, y1, 12)?;
        if let Some(e) = err.into_inner() {
            return Err(e.into());
        }
        lhs.push(l);
        rhs.push(r);
    }
    let scales = (1..=xs.len()).map(|i| i as f64).collect();
    let mut rep = RatioReport::from_ladder("trace/points", scales, lhs, rhs);
    rep.slope = 0.0;
    rep.flat = true;
    if rep.verdict != Verdict::Unbounded {
        rep.verdict = Verdict::Bounded;
    }
    Ok(rep.note("pointwise constant over the listed points"))
}

/// Standard mollifier `exp(-1/(1-|x-c|²/ρ²))` on `B_ρ(c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub center: P3,
    pub radius: f64,
}

impl Mollifier {
    pub fn value(&self, x: &P3) -> f64 {
        let q2 = dot(sub(*x, self.center), sub(*x, self.center)) / (self.radius * self.radius);
        if q2 >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - q2)).exp()
        }
    }

    pub fn sup(&self) -> f64 {
        (-1.0f64).exp()
    }

    /// `max |∇η|`, from the radial profile on a fine grid.
    pub fn grad_sup(&self) -> f64 {
        let n = 20000;
        (1..n)
            .map(|k| {
                let q = k as f64 / n as f64;
                let e = 1.0 - q * q;
                (-1.0 / e).exp() * 2.0 * q / (e * e)
            })
            .fold(0.0, f64::max)
            / self.radius
    }
}

/// Localization estimate at one scale: `(LHS, RHS0, stderr of LHS)` for
/// `‖ηf‖_{H^{1-s}(Ω)}` against
/// `(R^s‖∇η‖_∞ + (R^{s-1}+1)‖η‖_∞)‖f‖_{L²(B_R)} + ‖η‖_∞|f|_{H^{1-s}(B_R)}`,
/// with `η` the mollifier on `B_{cR}(x₀)`.
#[allow(clippy::too_many_arguments)]
pub fn localization_ratio(
    f: &dyn Field,
    omega: &Polytope,
    x0: P3,
    r: f64,
    c: f64,
    s: f64,
    budget: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if !(0.0 < s && s < 1.0) || !(0.0 < c && c < 1.0) || !(r > 0.0) || budget == 0 {
        return cfg("localization needs s, c in (0,1), R > 0 and a budget");
    }
    if omega.dist_boundary(x0) <= r || !omega.contains(x0) {
        return cfg("the ball B_R must lie inside the domain");
    }
    let eta = Mollifier { center: x0, radius: c * r };
    let ball = Sector::ball(x0);
    let g = |x: &P3| eta.value(x) * f.value(x);
    let l2: f64 = ball.rule(c * r, 24, 0.0)?.iter().map(|(d, w)| w * g(&axpy(x0, 1.0, *d)).powi(2)).sum();
    // pairs with x in supp η: weight 2 for z outside it, 1 inside
    let sig = 1.0 - s;
    let pw = 2.0 - 2.0 * sig;
    let diam = omega.diam;
    let src = McRegion::Ball { center: x0, radius: c * r };
    let k = src.measure() * 4.0 * PI * diam.powf(pw) / pw;
    let semi = mc_mean(budget, seed, |rng| {
        let x = src.sample(rng);
        let om = unit_direction(3, rng);
        let rho = diam * rng.gen::<f64>().powf(1.0 / pw);
        let z = axpy(x, rho, om);
        if !omega.contains(z) {
            return 0.0;
        }
        let du = g(&x) - g(&z);
        let wt = if src.contains(&z) { 1.0 } else { 2.0 };
        wt * k * du * du / (rho * rho)
    });
    let lhs2 = l2 + semi.value.max(0.0);
    let lhs = lhs2.sqrt();
    let err = if lhs > 0.0 { 0.5 * semi.stderr / lhs } else { semi.stderr.sqrt() };
    let fl2: f64 = ball.rule(r, 12, 0.0)?.iter().map(|(d, w)| w * f.value(&axpy(x0, 1.0, *d)).powi(2)).sum();
    let fsemi = slobodeckij(f, &McRegion::Ball { center: x0, radius: r }, sig, budget, seed.wrapping_add(1))?;
    let (e, ge) = (eta.sup(), eta.grad_sup());
    let rhs = (r.powf(s) * ge + (r.powf(s - 1.0) + 1.0) * e) * fl2.sqrt() + e * fsemi.value.max(0.0).sqrt();
    Ok((lhs, rhs, err))
}

/// `u = x₃^a·P(x)` on the model wedge `{x₁∈(0,μ), x₂∈(0,ξx₁), x₃∈(0,ξx₂)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardyField {
    pub a: f64,
    pub poly: Poly3,
}

/// `(‖r_f^{-t-s}u‖, ‖r_f^{1-t-s}∂_{x₃}u‖)` on the model wedge with `r_f = x₃`;
/// the LHS is `+∞` when `x₃^{2a-2(t+s)}` is not integrable.
pub fn hardy_ratio(u: &HardyField, mu: f64, xi: f64, t: f64, s: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && xi > 0.0) || !(0.0..0.5).contains(&t) || !(0.0 < s && s < 1.0) {
        return cfg("hardy needs μ, ξ > 0, t in [0,1/2), s in (0,1)");
    }
    if u.poly.terms.is_empty() {
        return Ok((0.0, 0.0));
    }
    let e = 2.0 * u.a - 2.0 * (t + s);
    if e <= -1.0 {
        return Ok((f64::INFINITY, f64::NAN));
    }
    // x₁ = μa, x₂ = ξx₁b, x₃ = ξx₂c; Jacobian μ³ξ³a²b and x₃^e = (ξ²μ)^e a^e b^e c^e
    let n = (u.poly.degree() as usize + 4).max(6);
    let ra = jacobi_rule(2.0 + e, 1.0, n)?;
    let rb = jacobi_rule(1.0 + e, 1.0, n)?;
    let rc = jacobi_rule(e, 1.0, n)?;
    let pre = (mu * xi).powi(3) * (xi * xi * mu).powf(e);
    let d3 = u.poly.deriv([0, 0, 1]);
    let (mut l, mut r) = (0.0, 0.0);
    for (a, wa) in ra.nodes.iter().zip(&ra.weights) {
        for (b, wb) in rb.nodes.iter().zip(&rb.weights) {
            for (c, wc) in rc.nodes.iter().zip(&rc.weights) {
                let x1 = mu * a;
                let x2 = xi * x1 * b;
                let x3 = xi * x2 * c;
                let x = [x1, x2, x3];
                let w = wa * wb * wc;
                let p = u.poly.eval(&x);
                l += w * p * p;
                let g = u.a * p + x3 * d3.eval(&x);
                r += w * g * g;
            }
        }
    }
    Ok(((pre * l).sqrt(), (pre * r).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub beta: MultiIndex,
    pub a: NormResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthProfile {
    pub rows: Vec<GrowthRow>,
    /// `max_{|β|=k} (A_β/A₀)^{1/k}/k` for `k = 1..=p_max` (index `k-1`).
    pub gamma_by_order: Vec<f64>,
    pub gamma_fit: f64,
    pub divergent: bool,
    pub stable: bool,
    pub verdict: Verdict,
}

impl GrowthProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("b_perp,b_parperp,b_par,order,a,error,divergent\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.beta.b_perp,
                r.beta.b_parperp,
                r.beta.b_par,
                r.beta.order(),
                r.a.value,
                r.a.error,
                r.a.divergent
            ));
        }
        s
    }
}

/// Weighted norms `A_β` over the neighborhood for the listed multi-indices
/// (all of order ≤ `p_max` when `betas` is `None`), and the fitted growth constant.
#[allow(clippy::too_many_arguments)]
pub fn growth_profile(
    u: &dyn Field,
    poly: &Polytope,
    spec: &NeighborhoodSpec,
    frame: &Frame,
    p_max: u32,
    t: f64,
    s: f64,
    betas: Option<&[MultiIndex]>,
) -> Result<GrowthProfile> {
    if p_max == 0 {
        return cfg("p_max must be at least 1");
    }
    let list: Vec<MultiIndex> = match betas {
        Some(b) => {
            let mut v = vec![MultiIndex::default()];
            v.extend(b.iter().copied().filter(|b| b.order() > 0 && b.order() <= p_max));
            v
        }
        None => (0..=p_max).flat_map(MultiIndex::of_order).collect(),
    };
    let region = Region::Nbhd { poly, spec: *spec };
    let mut rows = Vec::with_capacity(list.len());
    for beta in list {
        let w = WeightSpec::regularity_unchecked(spec, s, t, beta);
        rows.push(GrowthRow { beta, a: weighted_norm(u, &region, &w, beta, frame)? });
    }
    let divergent = rows.iter().any(|r| !r.a.is_finite());
    let a0 = rows[0].a.value;
    let mut gamma_by_order = vec![0.0f64; p_max as usize];
    for r in rows.iter().skip(1) {
        let k = r.beta.order();
        let g = (r.a.value / a0).powf(1.0 / k as f64) / k as f64;
        let slot = &mut gamma_by_order[k as usize - 1];
        *slot = slot.max(g);
    }
    let gamma_fit = gamma_by_order.iter().copied().fold(0.0, f64::max);
    let stable = if p_max >= 2 {
        let (g1, g2) = (gamma_by_order[p_max as usize - 2], gamma_by_order[p_max as usize - 1]);
        g1 > 0.0 && (g2 / g1 - 1.0).abs() <= 0.25
    } else {
        false
    };
    let verdict = if divergent || !(a0 > 0.0) {
        Verdict::Unbounded
    } else if stable {
        Verdict::Bounded
    } else {
        Verdict::Inconclusive
    };
    Ok(GrowthProfile { rows, gamma_by_order, gamma_fit, divergent, stable, verdict })
}

/// Dyadic ladder `r₀2^{-k}`, `k = 0..n`.
pub fn ladder(r0: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| r0 * 0.5f64.powi(k as i32)).collect()
}

const E1: P3 = [1.0, 0.0, 0.0];
const E2: P3 = [0.0, 1.0, 0.0];
const E3: P3 = [0.0, 0.0, 1.0];

fn mono(c: f64, k: [u32; 3]) -> Poly3 {
    Poly3::monomial(c, k)
}

/// Ball, half-ball and wedge sectors at the centre, a face and an edge of the unit cube.
pub fn cube_sectors() -> Vec<(&'static str, Sector)> {
    vec![
        ("ball", Sector::ball([0.5, 0.5, 0.5])),
        ("half_ball", Sector::half_ball([0.5, 0.5, 0.0], E3)),
        ("wedge", Sector::wedge([0.5, 0.0, 0.0], E3, E2).expect("cube edge is convex")),
    ]
}

/// Degree-three fields, homogeneous in `(x - x₀, y)` with `f = 0`, one per sector.
fn cubic_field(name: &str, center: P3, s: f64) -> Result<Manufactured> {
    let terms = match name {
        "ball" => vec![(mono(1.0, [1, 2, 0]), 0.0), (mono(1.0, [1, 0, 0]), 2.0)],
        "half_ball" => vec![(mono(1.0, [2, 0, 1]), 0.0), (mono(1.0, [0, 0, 1]), 2.0)],
        _ => vec![(mono(1.0, [1, 1, 1]), 0.0), (mono(1.0, [1, 0, 0]), 2.0)],
    };
    Manufactured::new(s, center, terms)
}

/// `x₁² - y²/(1+α)`: `F = 0` and `f = 0`.
fn alpha_harmonic(center: P3, s: f64) -> Result<Manufactured> {
    Manufactured::new(s, center, vec![(mono(1.0, [2, 0, 0]), 0.0), (Poly3::constant(-1.0 / (2.0 - 2.0 * s)), 2.0)])
}

fn sextic_field(center: P3, s: f64) -> Result<Manufactured> {
    Manufactured::new(s, center, vec![(mono(1.0, [3, 2, 1]), 0.0), (mono(1.0, [4, 0, 0]), 2.0)])
}

fn sector_dirs(name: &str, p: usize) -> Vec<P3> {
    let cyc: &[P3] = match name {
        "ball" => &[E1, E2, E3, E1],
        "half_ball" => &[E1, E2, E1, E2],
        _ => &[E1, E1, E1, E1],
    };
    cyc.iter().copied().cycle().take(p).collect()
}

const R0: f64 = 0.2;
const RUNGS: usize = 5;

/// First-order Caccioppoli ladders on the three cube sectors, heights `θ = R`, `θ' = 2R`.
pub fn caccioppoli_suite(s: f64) -> Result<Vec<RatioReport>> {
    let mut out = Vec::new();
    for (name, sec) in cube_sectors() {
        let m = cubic_field(name, sec.center, s)?;
        let scales = ladder(R0, RUNGS);
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for &rr in &scales {
            let (a, b) = caccioppoli_ratio(&m, &sec, rr, 0.5, rr, 2.0 * rr, E1)?;
            l.push(a);
            r.push(b);
        }
        out.push(RatioReport::from_ladder(format!("caccioppoli/{name}"), scales, l, r));
    }
    Ok(out)
}

/// Order-`p` Caccioppoli ladders for `p = 1..=p_max` on the three cube sectors.
pub fn high_order_suite(s: f64, p_max: usize, gamma: f64) -> Result<Vec<RatioReport>> {
    let mut out = Vec::new();
    for (name, sec) in cube_sectors() {
        let m = sextic_field(sec.center, s)?;
        for p in 1..=p_max {
            let dirs = sector_dirs(name, p);
            let scales = ladder(R0, RUNGS);
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for &rr in &scales {
                let (a, b) = high_order_caccioppoli(&m, &sec, rr, 0.5, rr, 2.0 * rr, &dirs, gamma)?;
                l.push(a);
                r.push(b);
            }
            let mut rep = RatioReport::from_ladder(format!("high_order/{name}/p{p}"), scales, l, r);
            rep.gamma = Some(gamma);
            out.push(rep);
        }
    }
    Ok(out)
}

/// Localized shift ladders on the face half-ball for each `t` and `p ∈ {0, 1}`, height `Y = R`.
pub fn shift_suite(s: f64, ts: &[f64], gamma: f64) -> Result<Vec<RatioReport>> {
    let (_, sec) = cube_sectors()[1];
    let m = alpha_harmonic(sec.center, s)?;
    let mut out = Vec::new();
    for &t in ts {
        for p in 0..=1 {
            let dirs = sector_dirs("half_ball", p);
            let scales = ladder(R0, RUNGS);
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for &rr in &scales {
                let (a, b) = shift_ratio(&m, &sec, rr, 0.5, rr, t, &dirs, gamma)?;
                l.push(a);
                r.push(b);
            }
            let mut rep = RatioReport::from_ladder(format!("shift/t{t}/p{p}"), scales, l, r);
            rep.gamma = Some(gamma);
            out.push(rep);
        }
    }
    Ok(out)
}

/// Trace inequality at the centre of dilated bumps `λ·r₀`, `Y = 1`.
pub fn trace_suite(s: f64) -> Result<RatioReport> {
    let params = ExtensionParams::new(3, s)?;
    let scales = ladder(1.0, 4);
    let (mut l, mut r) = (Vec::new(), Vec::new());
    for &lam in &scales {
        let tr: Arc<dyn Field> = Arc::new(PolyField::bump([0.0; 3], 0.25 * lam, 2));
        let v = ExtensionField::new(params, tr)?;
        let rep = trace_ratio(&v, &[[0.0; 3]], 1.0)?;
        l.push(rep.lhs[0]);
        r.push(rep.rhs0[0]);
    }
    Ok(RatioReport::from_ladder("trace/dilation", scales, l, r))
}

/// Localization ladder for `f ≡ 1` about the cube centre, `c = 1/2`.
pub fn localization_suite(s: f64, budget: usize, seed: u64) -> Result<RatioReport> {
    let cube = fixtures::cube();
    let one = crate::quadrature::Const(1.0);
    let scales = ladder(0.2, 4);
    let (mut l, mut r, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for (k, &rr) in scales.iter().enumerate() {
        let (a, b, err) = localization_ratio(&one, &cube, [0.5; 3], rr, 0.5, s, budget, seed.wrapping_add(2 * k as u64))?;
        l.push(a);
        r.push(b);
        e.push(err);
    }
    Ok(RatioReport::from_ladder("localization", scales, l, r).with_mc_errors(&e))
}

/// Hardy ladders over `μ` on the model wedge for `u = x₃` and `u = x₃^{1/2}`.
pub fn hardy_suite(s: f64, t: f64) -> Result<Vec<RatioReport>> {
    let xi = 0.1;
    let mut out = Vec::new();
    for (name, a) in [("x3", 1.0), ("sqrt_x3", 0.5)] {
        let u = HardyField { a, poly: Poly3::constant(1.0) };
        let scales = ladder(1.0, RUNGS);
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for &mu in &scales {
            let (x, y) = hardy_ratio(&u, mu, xi, t, s)?;
            l.push(x);
            r.push(y);
        }
        out.push(RatioReport::from_ladder(format!("hardy/{name}/t{t}"), scales, l, r).note("ratio of norms"));
    }
    Ok(out)
}

/// Every suite with the defaults used by the CLI and the acceptance run.
pub fn run_all(s: f64, p_max: usize, budget: usize, seed: u64) -> Result<Vec<RatioReport>> {
    let mut out = caccioppoli_suite(s)?;
    out.extend(high_order_suite(s, p_max, 1.0)?);
    out.extend(shift_suite(s, &[0.0, 0.25, 0.45], 1.0)?);
    out.push(trace_suite(s)?);
    out.push(localization_suite(s, budget, seed)?);
    out.extend(hardy_suite(s, 0.25)?);
    out.extend(hardy_suite(s, 0.45)?);
    Ok(out)
}
