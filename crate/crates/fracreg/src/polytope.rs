//! Polytopes in R³: combinatorics, distance functions, the neighborhood
//! partition and the local frames used for directional derivatives.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub type P3 = [f64; 3];

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("cannot read polytope file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse polytope: {0}")]
    Parse(String),
    #[error("open boundary: edge ({0},{1}) belongs to {2} face(s)")]
    OpenBoundary(usize, usize, usize),
    #[error("degenerate face {0} (zero area)")]
    DegenerateFace(usize),
    #[error("face {0} is not planar (deviation {1:e})")]
    NonPlanar(usize, f64),
    #[error("inconsistent face orientation at edge ({0},{1})")]
    Orientation(usize, usize),
    #[error("point {0:?} lies outside the closed polytope")]
    Domain(P3),
    #[error("point lies on the feature: {0}")]
    Singular(&'static str),
    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;

pub fn add(a: P3, b: P3) -> P3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
pub fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
pub fn scale(a: P3, s: f64) -> P3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
pub fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
pub fn cross(a: P3, b: P3) -> P3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
pub fn norm(a: P3) -> f64 {
    dot(a, a).sqrt()
}
pub fn unit(a: P3) -> P3 {
    scale(a, 1.0 / norm(a))
}
/// `a + s·b`
pub fn axpy(a: P3, s: f64, b: P3) -> P3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoints with `a < b`.
    pub a: usize,
    pub b: usize,
    /// Unit vector from `a` to `b`.
    pub dir: P3,
    pub len: f64,
}

#[derive(Debug, Clone)]
pub struct Face {
    pub verts: Vec<usize>,
    /// Outward unit normal.
    pub normal: P3,
    /// Plane offset: `normal · x = offset` on the face.
    pub offset: f64,
    pub tris: Vec<[usize; 3]>,
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct Polytope {
    pub vertices: Vec<P3>,
    pub edges: Vec<Edge>,
    pub faces: Vec<Face>,
    pub e_of_v: Vec<Vec<usize>>,
    pub f_of_v: Vec<Vec<usize>>,
    pub v_of_e: Vec<[usize; 2]>,
    pub f_of_e: Vec<[usize; 2]>,
    pub e_of_f: Vec<Vec<usize>>,
    pub v_of_f: Vec<Vec<usize>>,
    pub diam: f64,
    /// Smallest distance between features whose closures are disjoint.
    pub separation: f64,
}

#[derive(Deserialize, Serialize)]
struct PolytopeFile {
    vertices: Vec<P3>,
    faces: Vec<Vec<usize>>,
}

/// Distances of a point to every feature.
#[derive(Debug, Clone)]
pub struct Distances {
    pub rv: Vec<f64>,
    pub re: Vec<f64>,
    pub rf: Vec<f64>,
    pub rbnd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    V,
    E,
    F,
    Ve,
    Vf,
    Ef,
    Vef,
    Int,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::V,
        Kind::E,
        Kind::F,
        Kind::Ve,
        Kind::Vf,
        Kind::Ef,
        Kind::Vef,
        Kind::Int,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::V => "v",
            Kind::E => "e",
            Kind::F => "f",
            Kind::Ve => "ve",
            Kind::Vf => "vf",
            Kind::Ef => "ef",
            Kind::Vef => "vef",
            Kind::Int => "int",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn has_v(self) -> bool {
        matches!(self, Kind::V | Kind::Ve | Kind::Vf | Kind::Vef)
    }
    pub fn has_e(self) -> bool {
        matches!(self, Kind::E | Kind::Ve | Kind::Ef | Kind::Vef)
    }
    pub fn has_f(self) -> bool {
        matches!(self, Kind::F | Kind::Vf | Kind::Ef | Kind::Vef)
    }
}

/// One neighborhood of the partition with the features it abuts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub kind: Kind,
    pub xi: f64,
    pub v: Option<usize>,
    pub e: Option<usize>,
    pub f: Option<usize>,
}

impl NeighborhoodSpec {
    pub fn new(
        kind: Kind,
        xi: f64,
        v: Option<usize>,
        e: Option<usize>,
        f: Option<usize>,
    ) -> Result<Self> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(GeomError::Config(format!("xi = {xi} outside (0,1)")));
        }
        if kind.has_v() != v.is_some() || kind.has_e() != e.is_some() || kind.has_f() != f.is_some()
        {
            return Err(GeomError::Config(format!(
                "kind {} does not match the referenced features",
                kind.name()
            )));
        }
        Ok(Self { kind, xi, v, e, f })
    }

    pub fn interior(xi: f64) -> Self {
        Self { kind: Kind::Int, xi, v: None, e: None, f: None }
    }

    pub fn label(&self) -> String {
        let mut s = format!("omega_{}", self.kind.name());
        for (c, i) in [('v', self.v), ('e', self.e), ('f', self.f)] {
            if let Some(i) = i {
                s.push_str(&format!(" {c}{i}"));
            }
        }
        s
    }
}

/// Orthonormal frame `(g_par, g_parperp, g_perp)`, right-handed in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub g_perp: P3,
    pub g_parperp: P3,
    pub g_par: P3,
}

impl Frame {
    pub fn canonical() -> Self {
        Self { g_par: [1.0, 0.0, 0.0], g_parperp: [0.0, 1.0, 0.0], g_perp: [0.0, 0.0, 1.0] }
    }

    /// Determinant of the matrix with rows `g_par, g_parperp, g_perp`.
    pub fn det(&self) -> f64 {
        dot(self.g_par, cross(self.g_parperp, self.g_perp))
    }
}

fn seg_closest(p: P3, a: P3, b: P3) -> P3 {
    let ab = sub(b, a);
    let l2 = dot(ab, ab);
    let t = if l2 > 0.0 { (dot(sub(p, a), ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    axpy(a, t, ab)
}

pub fn dist_point_segment(p: P3, a: P3, b: P3) -> f64 {
    norm(sub(p, seg_closest(p, a, b)))
}

/// Closest point on triangle `abc` to `p`.
pub fn tri_closest(p: P3, a: P3, b: P3, c: P3) -> P3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return axpy(a, d1 / (d1 - d3), ab);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return axpy(a, d2 / (d2 - d6), ac);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return axpy(b, w, sub(c, b));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(add(a, scale(ab, v)), scale(ac, w))
}

pub fn dist_point_tri(p: P3, t: [P3; 3]) -> f64 {
    norm(sub(p, tri_closest(p, t[0], t[1], t[2])))
}

/// Distance between segments `p1q1` and `p2q2`.
pub fn dist_seg_seg(p1: P3, q1: P3, p2: P3, q2: P3) -> f64 {
    let d1 = sub(q1, p1);
    let d2 = sub(q2, p2);
    let r = sub(p1, p2);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    let (s, t);
    if a <= 1e-300 && e <= 1e-300 {
        return norm(r);
    }
    if a <= 1e-300 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = dot(d1, r);
        if e <= 1e-300 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(d1, d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    norm(sub(axpy(p1, s, d1), axpy(p2, t, d2)))
}

fn seg_hits_tri(p: P3, q: P3, t: [P3; 3]) -> bool {
    let n = cross(sub(t[1], t[0]), sub(t[2], t[0]));
    let dp = dot(n, sub(p, t[0]));
    let dq = dot(n, sub(q, t[0]));
    if dp * dq > 0.0 || (dp == 0.0 && dq == 0.0) {
        return false;
    }
    let x = axpy(p, dp / (dp - dq), sub(q, p));
    let nn = dot(n, n);
    (0..3).all(|i| dot(cross(sub(t[(i + 1) % 3], t[i]), sub(x, t[i])), n) >= -1e-14 * nn)
}

pub fn dist_seg_tri(p: P3, q: P3, t: [P3; 3]) -> f64 {
    if seg_hits_tri(p, q, t) {
        return 0.0;
    }
    let mut d = dist_point_tri(p, t).min(dist_point_tri(q, t));
    for i in 0..3 {
        d = d.min(dist_seg_seg(p, q, t[i], t[(i + 1) % 3]));
    }
    d
}

pub fn dist_tri_tri(a: [P3; 3], b: [P3; 3]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..3 {
        d = d.min(dist_seg_tri(a[i], a[(i + 1) % 3], b));
        d = d.min(dist_seg_tri(b[i], b[(i + 1) % 3], a));
    }
    d
}

/// Ear-clipping triangulation of a simple polygon given counter-clockwise in 2D.
fn ear_clip(pts: &[[f64; 2]]) -> Option<Vec<[usize; 3]>> {
    let cr = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let mut out = Vec::new();
    let mut guard = 0;
    while idx.len() > 3 {
        guard += 1;
        if guard > 10 * pts.len() * pts.len() {
            return None;
        }
        let n = idx.len();
        let mut clipped = false;
        for k in 0..n {
            let (i0, i1, i2) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
            let (a, b, c) = (pts[i0], pts[i1], pts[i2]);
            if cr(a, b, c) <= 0.0 {
                continue;
            }
            let blocked = idx.iter().any(|&j| {
                j != i0 && j != i1 && j != i2 && {
                    let p = pts[j];
                    cr(a, b, p) >= 0.0 && cr(b, c, p) >= 0.0 && cr(c, a, p) >= 0.0
                }
            });
            if !blocked {
                out.push([i0, i1, i2]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return None;
        }
    }
    out.push([idx[0], idx[1], idx[2]]);
    Some(out)
}

impl Polytope {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: PolytopeFile = serde_json::from_str(s).map_err(|e| GeomError::Parse(e.to_string()))?;
        Self::from_parts(f.vertices, f.faces)
    }

    pub fn from_parts(vertices: Vec<P3>, face_loops: Vec<Vec<usize>>) -> Result<Self> {
        let nv = vertices.len();
        if nv < 4 || face_loops.len() < 4 {
            return Err(GeomError::Parse("too few vertices or faces".into()));
        }
        for (fi, l) in face_loops.iter().enumerate() {
            if l.len() < 3 || l.iter().any(|&i| i >= nv) {
                return Err(GeomError::Parse(format!("face {fi} has a bad vertex loop")));
            }
        }
        // directed edge uses per undirected edge
        let mut uses: BTreeMap<(usize, usize), Vec<(usize, bool)>> = BTreeMap::new();
        for (fi, l) in face_loops.iter().enumerate() {
            for k in 0..l.len() {
                let (i, j) = (l[k], l[(k + 1) % l.len()]);
                uses.entry((i.min(j), i.max(j))).or_default().push((fi, i < j));
            }
        }
        let mut edges = Vec::new();
        let mut f_of_e = Vec::new();
        let mut edge_id = BTreeMap::new();
        for (&(a, b), u) in &uses {
            if u.len() != 2 {
                return Err(GeomError::OpenBoundary(a, b, u.len()));
            }
            if u[0].1 == u[1].1 {
                return Err(GeomError::Orientation(a, b));
            }
            let d = sub(vertices[b], vertices[a]);
            let len = norm(d);
            edge_id.insert((a, b), edges.len());
            edges.push(Edge { a, b, dir: scale(d, 1.0 / len), len });
            let (f0, f1) = (u[0].0.min(u[1].0), u[0].0.max(u[1].0));
            f_of_e.push([f0, f1]);
        }
        let mut faces = Vec::new();
        for (fi, l) in face_loops.iter().enumerate() {
            let mut nw = [0.0; 3];
            for k in 0..l.len() {
                let p = vertices[l[k]];
                let q = vertices[l[(k + 1) % l.len()]];
                nw[0] += (p[1] - q[1]) * (p[2] + q[2]);
                nw[1] += (p[2] - q[2]) * (p[0] + q[0]);
                nw[2] += (p[0] - q[0]) * (p[1] + q[1]);
            }
            let area2 = norm(nw);
            if area2 < 1e-14 {
                return Err(GeomError::DegenerateFace(fi));
            }
            let n = scale(nw, 1.0 / area2);
            let off = l.iter().map(|&i| dot(n, vertices[i])).sum::<f64>() / l.len() as f64;
            let dev = l.iter().map(|&i| (dot(n, vertices[i]) - off).abs()).fold(0.0, f64::max);
            if dev > 1e-10 {
                return Err(GeomError::NonPlanar(fi, dev));
            }
            faces.push(Face { verts: l.clone(), normal: n, offset: off, tris: vec![], area: 0.5 * area2 });
        }
        // global orientation from the signed volume
        let vol: f64 = faces.iter().map(|f| f.area * f.offset).sum::<f64>() / 3.0;
        if vol.abs() < 1e-14 {
            return Err(GeomError::Parse("zero enclosed volume".into()));
        }
        if vol < 0.0 {
            for f in &mut faces {
                f.normal = scale(f.normal, -1.0);
                f.offset = -f.offset;
                f.verts.reverse();
            }
        }
        for (fi, f) in faces.iter_mut().enumerate() {
            let u = unit(sub(vertices[f.verts[1]], vertices[f.verts[0]]));
            let w = cross(f.normal, u);
            let o = vertices[f.verts[0]];
            let pts: Vec<[f64; 2]> = f
                .verts
                .iter()
                .map(|&i| {
                    let d = sub(vertices[i], o);
                    [dot(d, u), dot(d, w)]
                })
                .collect();
            let tris = ear_clip(&pts).ok_or(GeomError::DegenerateFace(fi))?;
            f.tris = tris.into_iter().map(|t| [f.verts[t[0]], f.verts[t[1]], f.verts[t[2]]]).collect();
        }
        let nf = faces.len();
        let mut e_of_v = vec![Vec::new(); nv];
        let mut f_of_v = vec![Vec::new(); nv];
        let mut e_of_f = vec![Vec::new(); nf];
        let mut v_of_f = vec![Vec::new(); nf];
        let v_of_e: Vec<[usize; 2]> = edges.iter().map(|e| [e.a, e.b]).collect();
        for (ei, e) in edges.iter().enumerate() {
            e_of_v[e.a].push(ei);
            e_of_v[e.b].push(ei);
            for &f in &f_of_e[ei] {
                e_of_f[f].push(ei);
            }
        }
        for (fi, f) in faces.iter().enumerate() {
            let mut vs = f.verts.clone();
            vs.sort_unstable();
            for &v in &vs {
                f_of_v[v].push(fi);
            }
            v_of_f[fi] = vs;
        }
        if e_of_v.iter().any(|l| l.is_empty()) {
            return Err(GeomError::Parse("isolated vertex".into()));
        }
        let mut diam: f64 = 0.0;
        for a in &vertices {
            for b in &vertices {
                diam = diam.max(norm(sub(*a, *b)));
            }
        }
        let mut p = Polytope {
            vertices,
            edges,
            faces,
            e_of_v,
            f_of_v,
            v_of_e,
            f_of_e,
            e_of_f,
            v_of_f,
            diam,
            separation: 0.0,
        };
        p.separation = p.feature_separation();
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let f = PolytopeFile {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| f.verts.clone()).collect(),
        };
        serde_json::to_string(&f).expect("serializable")
    }

    /// Copy with all coordinates multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let v = self.vertices.iter().map(|p| scale(*p, lambda)).collect();
        Self::from_parts(v, self.faces.iter().map(|f| f.verts.clone()).collect()).expect("scaled copy stays valid")
    }

    pub fn edge_pts(&self, e: usize) -> (P3, P3) {
        (self.vertices[self.edges[e].a], self.vertices[self.edges[e].b])
    }

    pub fn tri_pts(&self, t: [usize; 3]) -> [P3; 3] {
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn volume(&self) -> f64 {
        self.faces.iter().map(|f| f.area * f.offset).sum::<f64>() / 3.0
    }

    pub fn bbox(&self) -> (P3, P3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    fn feature_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        let nv = self.vertices.len();
        let ne = self.edges.len();
        let nf = self.faces.len();
        for v in 0..nv {
            let p = self.vertices[v];
            for e in 0..ne {
                if !self.v_of_e[e].contains(&v) {
                    let (a, b) = self.edge_pts(e);
                    best = best.min(dist_point_segment(p, a, b));
                }
            }
            for f in 0..nf {
                if !self.v_of_f[f].contains(&v) {
                    best = best.min(self.dist_face(f, p));
                }
            }
        }
        let shares = |x: &[usize], y: &[usize]| x.iter().any(|i| y.contains(i));
        for e in 0..ne {
            let (a, b) = self.edge_pts(e);
            for e2 in e + 1..ne {
                if !shares(&self.v_of_e[e], &self.v_of_e[e2]) {
                    let (c, d) = self.edge_pts(e2);
                    best = best.min(dist_seg_seg(a, b, c, d));
                }
            }
            for f in 0..nf {
                if !shares(&self.v_of_e[e], &self.v_of_f[f]) {
                    for t in &self.faces[f].tris {
                        best = best.min(dist_seg_tri(a, b, self.tri_pts(*t)));
                    }
                }
            }
        }
        for f in 0..nf {
            for f2 in f + 1..nf {
                if !shares(&self.v_of_f[f], &self.v_of_f[f2]) {
                    for t in &self.faces[f].tris {
                        for t2 in &self.faces[f2].tris {
                            best = best.min(dist_tri_tri(self.tri_pts(*t), self.tri_pts(*t2)));
                        }
                    }
                }
            }
        }
        best
    }

    /// Largest admissible ξ is strictly below this value.
    pub fn xi_max(&self) -> f64 {
        self.separation / (2.0 * self.diam)
    }

    pub fn check_xi(&self, xi: f64) -> Result<()> {
        if !(xi > 0.0 && xi < 1.0) || 2.0 * xi * self.diam >= self.separation {
            return Err(GeomError::Config(format!(
                "xi = {xi} not admissible (need 2·xi·diam < {:.6})",
                self.separation
            )));
        }
        Ok(())
    }

    pub fn dist_vertex(&self, v: usize, x: P3) -> f64 {
        norm(sub(x, self.vertices[v]))
    }

    pub fn dist_edge(&self, e: usize, x: P3) -> f64 {
        let (a, b) = self.edge_pts(e);
        dist_point_segment(x, a, b)
    }

    pub fn dist_face(&self, f: usize, x: P3) -> f64 {
        self.faces[f]
            .tris
            .iter()
            .map(|t| dist_point_tri(x, self.tri_pts(*t)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dist_boundary(&self, x: P3) -> f64 {
        (0..self.faces.len()).map(|f| self.dist_face(f, x)).fold(f64::INFINITY, f64::min)
    }

    /// Generalised winding number of the boundary around `x`.
    pub fn winding(&self, x: P3) -> f64 {
        let mut w = 0.0;
        for f in &self.faces {
            for t in &f.tris {
                let a = sub(self.vertices[t[0]], x);
                let b = sub(self.vertices[t[1]], x);
                let c = sub(self.vertices[t[2]], x);
                let (la, lb, lc) = (norm(a), norm(b), norm(c));
                let num = dot(a, cross(b, c));
                let den = la * lb * lc + dot(a, b) * lc + dot(a, c) * lb + dot(b, c) * la;
                w += 2.0 * num.atan2(den);
            }
        }
        w / (4.0 * std::f64::consts::PI)
    }

    /// Open-set membership.
    pub fn contains(&self, x: P3) -> bool {
        self.winding(x) > 0.5 && self.dist_boundary(x) > 0.0
    }

    pub fn contains_closure(&self, x: P3) -> bool {
        self.dist_boundary(x) <= 1e-12 || self.winding(x) > 0.5
    }

    /// Distances without the domain check.
    pub fn distances_unchecked(&self, x: P3) -> Distances {
        let rv = (0..self.vertices.len()).map(|v| self.dist_vertex(v, x)).collect();
        let re = (0..self.edges.len()).map(|e| self.dist_edge(e, x)).collect();
        let rf: Vec<f64> = (0..self.faces.len()).map(|f| self.dist_face(f, x)).collect();
        let rbnd = rf.iter().copied().fold(f64::INFINITY, f64::min);
        Distances { rv, re, rf, rbnd }
    }

    pub fn dist_features(&self, x: P3) -> Result<Distances> {
        if !self.contains_closure(x) {
            return Err(GeomError::Domain(x));
        }
        Ok(self.distances_unchecked(x))
    }

    pub fn rho(&self, x: P3, v: usize, e: usize, f: usize) -> Result<(f64, f64)> {
        let rv = self.dist_vertex(v, x);
        let re = self.dist_edge(e, x);
        if rv == 0.0 {
            return Err(GeomError::Singular("vertex"));
        }
        if re == 0.0 {
            return Err(GeomError::Singular("edge"));
        }
        Ok((re / rv, self.dist_face(f, x) / re))
    }

    /// Membership in one neighborhood given precomputed distances.
    ///
    /// `ω_v` is read as the complement of the other vertex sectors: every
    /// `ρ_ve ≥ ξ`, and no face at `v` has `ρ_ef < ξ` along all its edges at `v`.
    pub fn member(&self, spec: &NeighborhoodSpec, d: &Distances) -> bool {
        let xi = spec.xi;
        let xi2 = xi * xi;
        let xi3 = xi2 * xi;
        let rho_ve = |v: usize, e: usize| d.re[e] / d.rv[v];
        let rho_ef = |e: usize, f: usize| d.rf[f] / d.re[e];
        let shared = |v: usize, f: usize| self.e_of_v[v].iter().copied().filter(move |e| self.e_of_f[f].contains(e));
        match spec.kind {
            Kind::Int => {
                d.rv.iter().all(|&r| r >= xi) && d.re.iter().all(|&r| r >= xi2) && d.rf.iter().all(|&r| r >= xi3)
            }
            Kind::F => {
                let f = spec.f.unwrap();
                d.rf[f] < xi3
                    && self.v_of_f[f].iter().all(|&v| d.rv[v] >= xi)
                    && self.e_of_f[f].iter().all(|&e| d.re[e] >= xi2)
            }
            Kind::E | Kind::Ef => {
                let e = spec.e.unwrap();
                if !(d.re[e] < xi2 && self.v_of_e[e].iter().all(|&v| d.rv[v] >= xi)) {
                    return false;
                }
                match spec.f {
                    Some(f) => self.f_of_e[e].contains(&f) && rho_ef(e, f) < xi,
                    None => self.f_of_e[e].iter().all(|&f| rho_ef(e, f) >= xi),
                }
            }
            Kind::Ve | Kind::Vef => {
                let (v, e) = (spec.v.unwrap(), spec.e.unwrap());
                if !(self.e_of_v[v].contains(&e) && d.rv[v] < xi && rho_ve(v, e) < xi) {
                    return false;
                }
                match spec.f {
                    Some(f) => self.f_of_e[e].contains(&f) && rho_ef(e, f) < xi,
                    None => self.f_of_e[e].iter().all(|&f| rho_ef(e, f) >= xi),
                }
            }
            Kind::Vf => {
                let (v, f) = (spec.v.unwrap(), spec.f.unwrap());
                self.f_of_v[v].contains(&f)
                    && d.rv[v] < xi
                    && shared(v, f).all(|e| rho_ve(v, e) >= xi && rho_ef(e, f) < xi)
            }
            Kind::V => {
                let v = spec.v.unwrap();
                d.rv[v] < xi
                    && self.e_of_v[v].iter().all(|&e| rho_ve(v, e) >= xi)
                    && self.f_of_v[v].iter().all(|&f| shared(v, f).any(|e| rho_ef(e, f) >= xi))
            }
        }
    }

    /// All neighborhoods containing the interior point `x`.
    pub fn classify(&self, x: P3, xi: f64) -> Result<Vec<NeighborhoodSpec>> {
        self.check_xi(xi)?;
        let d = self.dist_features(x)?;
        if d.rbnd <= 0.0 || !self.contains(x) {
            return Err(GeomError::Domain(x));
        }
        Ok(self.classify_with(&d, xi))
    }

    pub fn classify_with(&self, d: &Distances, xi: f64) -> Vec<NeighborhoodSpec> {
        let mut out = Vec::new();
        let mut push = |k, v, e, f| {
            let s = NeighborhoodSpec { kind: k, xi, v, e, f };
            if self.member(&s, d) {
                out.push(s);
            }
        };
        for v in 0..self.vertices.len() {
            if d.rv[v] >= xi {
                continue;
            }
            push(Kind::V, Some(v), None, None);
            for &e in &self.e_of_v[v] {
                push(Kind::Ve, Some(v), Some(e), None);
                for &f in &self.f_of_e[e] {
                    push(Kind::Vef, Some(v), Some(e), Some(f));
                }
            }
            for &f in &self.f_of_v[v] {
                push(Kind::Vf, Some(v), None, Some(f));
            }
        }
        for e in 0..self.edges.len() {
            if d.re[e] >= xi * xi {
                continue;
            }
            push(Kind::E, None, Some(e), None);
            for &f in &self.f_of_e[e] {
                push(Kind::Ef, None, Some(e), Some(f));
            }
        }
        for f in 0..self.faces.len() {
            push(Kind::F, None, None, Some(f));
        }
        push(Kind::Int, None, None, None);
        out
    }

    /// Features "in range" of a point: `r_v < ξ`, `r_e < ξ·min(ξ, r_v over V_e)`,
    /// and `r_f < ξ·min(r_e over E_f)` for faces touching an in-range vertex or
    /// edge, `r_f < ξ³` for the others.
    pub fn features_in_range(&self, d: &Distances, xi: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let vs = (0..self.vertices.len()).filter(|&v| d.rv[v] < xi).collect();
        let es = (0..self.edges.len())
            .filter(|&e| {
                let m = self.v_of_e[e].iter().map(|&v| d.rv[v]).fold(xi, f64::min);
                d.re[e] < xi * m
            })
            .collect();
        let es: Vec<usize> = es;
        let vs: Vec<usize> = vs;
        let fs = (0..self.faces.len())
            .filter(|&f| {
                let near = self.v_of_f[f].iter().any(|v| vs.contains(v)) || self.e_of_f[f].iter().any(|e| es.contains(e));
                let m = if near {
                    self.e_of_f[f].iter().map(|&e| d.re[e]).fold(f64::INFINITY, f64::min)
                } else {
                    xi * xi
                };
                d.rf[f] < xi * m
            })
            .collect();
        (vs, es, fs)
    }

    /// True when the features in range are exactly the ones the neighborhood names.
    pub fn abuts_only_named(&self, spec: &NeighborhoodSpec, d: &Distances) -> bool {
        let (vs, es, fs) = self.features_in_range(d, spec.xi);
        let as_vec = |o: Option<usize>| o.into_iter().collect::<Vec<_>>();
        vs == as_vec(spec.v) && es == as_vec(spec.e) && fs == as_vec(spec.f)
    }

    pub fn inward_normal(&self, f: usize) -> P3 {
        scale(self.faces[f].normal, -1.0)
    }

    /// Edge index of the face's first loop segment.
    pub fn first_edge_of_face(&self, f: usize) -> usize {
        let l = &self.faces[f].verts;
        let (a, b) = (l[0].min(l[1]), l[0].max(l[1]));
        (0..self.edges.len()).find(|&e| self.v_of_e[e] == [a, b]).expect("face edge exists")
    }

    pub fn frame_for(&self, spec: &NeighborhoodSpec) -> Frame {
        let (perp, par) = match (spec.e, spec.f) {
            (Some(e), Some(f)) => (self.inward_normal(f), self.edges[e].dir),
            (Some(e), None) => (self.inward_normal(self.f_of_e[e][0]), self.edges[e].dir),
            (None, Some(f)) => (self.inward_normal(f), self.edges[self.first_edge_of_face(f)].dir),
            (None, None) => return Frame::canonical(),
        };
        Frame { g_perp: perp, g_parperp: cross(perp, par), g_par: par }
    }
}

impl NeighborhoodSpec {
    /// The `kind` neighborhood at vertex 0, its first edge and that edge's first face.
    pub fn first_of(p: &Polytope, kind: Kind, xi: f64) -> Result<Self> {
        let v = 0;
        let e = p.e_of_v[v][0];
        let f = p.f_of_e[e][0];
        Self::new(
            kind,
            xi,
            kind.has_v().then_some(v),
            kind.has_e().then_some(e),
            kind.has_f().then_some(f),
        )
    }
}

/// Classification statistics of uniform interior samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCensus {
    pub xi: f64,
    pub samples: usize,
    /// Samples in no neighborhood.
    pub uncovered: usize,
    /// (sample, neighborhood) pairs whose in-range features differ from the named ones.
    pub abut_violations: usize,
    /// Samples per neighborhood label.
    pub counts: BTreeMap<String, usize>,
}

impl PartitionCensus {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("neighborhood,count\n");
        for (k, v) in &self.counts {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

/// Classify `n` uniform samples of `Ω` (bounding-box rejection, one
/// ChaCha stream per chunk so the result is schedule independent).
pub fn partition_census(p: &Polytope, xi: f64, n: usize, seed: u64) -> Result<PartitionCensus> {
    use rand::{Rng, SeedableRng};
    use rayon::prelude::*;
    p.check_xi(xi)?;
    const CHUNK: usize = 2048;
    let (lo, hi) = p.bbox();
    let parts: Vec<(usize, usize, BTreeMap<String, usize>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let (mut unc, mut bad, mut counts) = (0, 0, BTreeMap::new());
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let x = loop {
                    let x = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]), rng.gen_range(lo[2]..hi[2])];
                    if p.contains(x) {
                        break x;
                    }
                };
                let d = p.distances_unchecked(x);
                let r = p.classify_with(&d, xi);
                if r.is_empty() {
                    unc += 1;
                }
                for s in &r {
                    if !p.abuts_only_named(s, &d) {
                        bad += 1;
                    }
                    *counts.entry(s.label()).or_insert(0) += 1;
                }
            }
            (unc, bad, counts)
        })
        .collect();
    let mut out = PartitionCensus { xi, samples: n, uncovered: 0, abut_violations: 0, counts: BTreeMap::new() };
    for (u, b, c) in parts {
        out.uncovered += u;
        out.abut_violations += b;
        for (k, v) in c {
            *out.counts.entry(k).or_insert(0) += v;
        }
    }
    Ok(out)
}

pub mod fixtures {
    //! Reference solids used by tests, the CLI and the acceptance suite.
    use super::*;

    pub fn cube() -> Polytope {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        Polytope::from_parts(v, cube_faces()).expect("cube")
    }

    pub fn cube_faces() -> Vec<Vec<usize>> {
        vec![
            vec![0, 2, 3, 1],
            vec![4, 5, 7, 6],
            vec![0, 1, 5, 4],
            vec![2, 6, 7, 3],
            vec![0, 4, 6, 2],
            vec![1, 3, 7, 5],
        ]
    }

    pub fn tetrahedron() -> Polytope {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Polytope::from_parts(v, vec![vec![0, 2, 1], vec![0, 1, 3], vec![0, 3, 2], vec![1, 2, 3]]).expect("tet")
    }

    /// `([0,2]² ∖ [1,2]²) × [0,1]`.
    pub fn l_prism() -> Polytope {
        let base = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
        let mut v: Vec<P3> = base.iter().map(|p| [p[0], p[1], 0.0]).collect();
        v.extend(base.iter().map(|p| [p[0], p[1], 1.0]));
        let mut faces = vec![(0..6).rev().collect::<Vec<_>>(), (6..12).collect()];
        for i in 0..6 {
            let j = (i + 1) % 6;
            faces.push(vec![i, j, j + 6, i + 6]);
        }
        Polytope::from_parts(v, faces).expect("L-prism")
    }

    pub fn vertex_index(p: &Polytope, x: P3) -> usize {
        p.vertices.iter().position(|v| norm(sub(*v, x)) < 1e-12).expect("vertex present")
    }

    pub fn edge_index(p: &Polytope, a: P3, b: P3) -> usize {
        let (i, j) = (vertex_index(p, a), vertex_index(p, b));
        (0..p.edges.len()).find(|&e| p.v_of_e[e] == [i.min(j), i.max(j)]).expect("edge present")
    }

    /// Face whose outward normal is `n`.
    pub fn face_with_normal(p: &Polytope, n: P3) -> usize {
        (0..p.faces.len()).find(|&f| norm(sub(p.faces[f].normal, n)) < 1e-12).expect("face present")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cube_and_tet_combinatorics() {
        let c = cube();
        assert_eq!((c.vertices.len(), c.edges.len(), c.faces.len()), (8, 12, 6));
        let t = tetrahedron();
        assert_eq!((t.vertices.len(), t.edges.len(), t.faces.len()), (4, 6, 4));
        assert!((c.volume() - 1.0).abs() < 1e-14);
        assert!((t.volume() - 1.0 / 6.0).abs() < 1e-14);
        let l = l_prism();
        assert_eq!((l.vertices.len(), l.edges.len(), l.faces.len()), (12, 18, 8));
        assert!((l.volume() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn open_cube_rejected() {
        let c = cube();
        let mut faces = cube_faces();
        faces.remove(1);
        let r = Polytope::from_parts(c.vertices.clone(), faces);
        assert!(matches!(r, Err(GeomError::OpenBoundary(..))));
    }

    #[test]
    fn degenerate_and_nonplanar_rejected() {
        let mut v = cube().vertices;
        v[7] = [1.0, 1.0, 1.3];
        assert!(matches!(Polytope::from_parts(v, cube_faces()), Err(GeomError::NonPlanar(..))));
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let r = Polytope::from_parts(v, vec![vec![0, 1, 2], vec![0, 3, 1], vec![1, 3, 2], vec![2, 3, 0]]);
        assert!(matches!(r, Err(GeomError::DegenerateFace(0))));
    }

    #[test]
    fn inverted_orientation_is_fixed() {
        let c = cube();
        let faces: Vec<Vec<usize>> = cube_faces().into_iter().map(|mut l| { l.reverse(); l }).collect();
        let p = Polytope::from_parts(c.vertices.clone(), faces).unwrap();
        assert!(p.volume() > 0.0);
        let f = face_with_normal(&p, [0.0, 0.0, -1.0]);
        assert!((p.faces[f].offset - 0.0).abs() < 1e-15);
    }

    #[test]
    fn adjacency_consistent() {
        for p in [cube(), tetrahedron(), l_prism()] {
            for e in 0..p.edges.len() {
                assert!((norm(p.edges[e].dir) - 1.0).abs() < 1e-12);
                for &v in &p.v_of_e[e] {
                    assert!(p.e_of_v[v].contains(&e));
                }
                for &f in &p.f_of_e[e] {
                    assert!(p.e_of_f[f].contains(&e));
                }
            }
            for f in 0..p.faces.len() {
                for &v in &p.v_of_f[f] {
                    assert!(p.f_of_v[v].contains(&f));
                }
            }
        }
    }

    #[test]
    fn distance_examples() {
        let c = cube();
        let d = c.dist_features([0.3, 0.0, 0.0]).unwrap();
        assert!((d.rv[0] - 0.3).abs() < 1e-15);
        let ex = edge_index(&c, [0.0; 3], [1.0, 0.0, 0.0]);
        assert!((c.dist_edge(ex, [0.5, 0.1, 0.0]) - 0.1).abs() < 1e-15);
        let d = c.dist_features([0.5; 3]).unwrap();
        assert!((d.rbnd - 0.5).abs() < 1e-15);
        assert!(matches!(c.dist_features([1.5, 0.5, 0.5]), Err(GeomError::Domain(_))));
    }

    #[test]
    fn rho_examples() {
        let c = cube();
        let ex = edge_index(&c, [0.0; 3], [1.0, 0.0, 0.0]);
        let fz = face_with_normal(&c, [0.0, 0.0, -1.0]);
        let (rve, _) = c.rho([0.3, 0.1, 0.0], 0, ex, fz).unwrap();
        assert!((rve - 0.1 / 0.1f64.sqrt()).abs() < 1e-12);
        assert!((rve - 0.31623).abs() < 1e-5);
        let (rve, _) = c.rho([0.3, 0.0, 0.0], 0, ex, fz).unwrap_or((0.0, 0.0));
        assert_eq!(rve, 0.0);
        assert!(matches!(c.rho([0.0; 3], 0, ex, fz), Err(GeomError::Singular(_))));
    }

    #[test]
    fn classify_examples() {
        let c = cube();
        let r = c.classify([0.5; 3], 0.1).unwrap();
        assert_eq!(r, vec![NeighborhoodSpec::interior(0.1)]);
        let r = c.classify([0.05, 0.004, 0.0002], 0.1).unwrap();
        let ex = edge_index(&c, [0.0; 3], [1.0, 0.0, 0.0]);
        let fz = face_with_normal(&c, [0.0, 0.0, -1.0]);
        assert_eq!(r, vec![NeighborhoodSpec { kind: Kind::Vef, xi: 0.1, v: Some(0), e: Some(ex), f: Some(fz) }]);
        // hand-evaluated ratios of the same point
        let (rve, ref_) = c.rho([0.05, 0.004, 0.0002], 0, ex, fz).unwrap();
        assert!((rve - 0.0798).abs() < 1e-4 && (ref_ - 0.0499).abs() < 1e-4);
        assert!(matches!(c.classify([0.5; 3], 0.3), Err(GeomError::Config(_))));
    }

    #[test]
    fn classify_threshold_is_verbatim() {
        // r_f = ξ³ exactly: not in ω_f (strict), so interior.
        let c = cube();
        let xi: f64 = 0.5f64.powi(3);
        let z = xi * xi * xi;
        let r = c.classify([0.5, 0.5, z], xi).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].kind, Kind::Int);
        let r = c.classify([0.5, 0.5, z * 0.999], xi).unwrap();
        assert_eq!(r[0].kind, Kind::F);
    }

    #[test]
    fn gap_point_of_verbatim_vertex_sector_is_covered() {
        let c = cube();
        let r = c.classify([0.04315, 0.025, 0.0035], 0.1).unwrap();
        assert!(!r.is_empty());
    }

    #[test]
    fn frames() {
        let c = cube();
        let fz = face_with_normal(&c, [0.0, 0.0, -1.0]);
        let ex = edge_index(&c, [0.0; 3], [1.0, 0.0, 0.0]);
        let f = c.frame_for(&NeighborhoodSpec { kind: Kind::F, xi: 0.1, v: None, e: None, f: Some(fz) });
        assert_eq!(f.g_perp, [0.0, 0.0, 1.0]);
        assert!(dot(f.g_par, [0.0, 0.0, 1.0]).abs() < 1e-15);
        let f = c.frame_for(&NeighborhoodSpec { kind: Kind::Ef, xi: 0.1, v: None, e: Some(ex), f: Some(fz) });
        assert_eq!((f.g_par, f.g_parperp, f.g_perp), ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]));
        let f = c.frame_for(&NeighborhoodSpec { kind: Kind::V, xi: 0.1, v: Some(0), e: None, f: None });
        assert_eq!(f, Frame::canonical());
    }

    #[test]
    fn frames_satisfy_constraints_everywhere() {
        for p in [cube(), tetrahedron(), l_prism()] {
            for e in 0..p.edges.len() {
                for &f in &p.f_of_e[e] {
                    let fr = p.frame_for(&NeighborhoodSpec { kind: Kind::Ef, xi: 0.05, v: None, e: Some(e), f: Some(f) });
                    let n = p.faces[f].normal;
                    let d = p.edges[e].dir;
                    assert!((fr.det() - 1.0).abs() < 1e-10);
                    assert!(dot(fr.g_perp, d).abs() < 1e-12 && (dot(fr.g_perp, n).abs() - 1.0).abs() < 1e-12);
                    assert!(dot(fr.g_parperp, n).abs() < 1e-12 && dot(fr.g_parperp, d).abs() < 1e-12);
                    assert!((dot(fr.g_par, d) - 1.0).abs() < 1e-12);
                    assert!(dot(fr.g_par, fr.g_parperp).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn separation_and_xi_limits() {
        let c = cube();
        assert!((c.separation - 1.0).abs() < 1e-12);
        assert!((c.xi_max() - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-12);
        let l = l_prism();
        assert!((l.separation - 1.0).abs() < 1e-12);
        assert!(l.check_xi(0.1).is_ok());
    }

    #[test]
    fn winding_inside_l_prism() {
        let l = l_prism();
        assert!(l.contains([0.5, 0.5, 0.5]));
        assert!(l.contains([1.5, 0.5, 0.5]));
        assert!(!l.contains([1.5, 1.5, 0.5]));
        assert!((l.dist_boundary([1.2, 1.2, 0.5]) - 0.2f64.hypot(0.2)).abs() > 0.0);
    }

    #[test]
    fn census_is_complete_and_reproducible() {
        let c = cube();
        let a = partition_census(&c, 0.1, 5000, 4).unwrap();
        assert_eq!((a.uncovered, a.abut_violations), (0, 0));
        assert!(a.counts.values().sum::<usize>() >= 5000);
        assert_eq!(a, partition_census(&c, 0.1, 5000, 4).unwrap());
        assert!(partition_census(&c, 0.4, 10, 4).is_err());
    }

    #[test]
    fn first_of_names_adjacent_features() {
        let c = cube();
        let s = NeighborhoodSpec::first_of(&c, Kind::Vef, 0.1).unwrap();
        let (e, f) = (s.e.unwrap(), s.f.unwrap());
        assert!(c.v_of_e[e].contains(&0));
        assert!(c.f_of_e[e].contains(&f));
        assert_eq!(NeighborhoodSpec::first_of(&c, Kind::Int, 0.1).unwrap(), NeighborhoodSpec::interior(0.1));
    }

    fn sample_in(p: &Polytope, u: [f64; 3]) -> Option<P3> {
        let (lo, hi) = p.bbox();
        let x = [lo[0] + u[0] * (hi[0] - lo[0]), lo[1] + u[1] * (hi[1] - lo[1]), lo[2] + u[2] * (hi[2] - lo[2])];
        p.contains(x).then_some(x)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn decomposition_covers(u in prop::array::uniform3(0.0..1.0f64), w in 0.0..1.0f64) {
            // bias half the samples toward the origin corner
            let u = if w < 0.5 { [u[0] * 0.12, u[1] * 0.12, u[2] * 0.12] } else { u };
            for p in [cube(), l_prism()] {
                if let Some(x) = sample_in(&p, u) {
                    let r = p.classify(x, 0.1).unwrap();
                    prop_assert!(!r.is_empty());
                    let d = p.dist_features(x).unwrap();
                    for s in &r {
                        prop_assert!(p.abuts_only_named(s, &d), "{} at {:?}", s.label(), x);
                    }
                }
            }
        }

        #[test]
        fn classify_scale_equivariant(u in prop::array::uniform3(0.001..0.999f64), lam in prop::sample::select(vec![0.5, 2.0])) {
            let c = cube();
            let big = c.scaled(lam);
            let x = scale(u, lam);
            let a = c.classify(u, 0.1).unwrap();
            // classify on λP with lengths divided by λ
            let d = big.dist_features(x).unwrap();
            let d = Distances {
                rv: d.rv.iter().map(|r| r / lam).collect(),
                re: d.re.iter().map(|r| r / lam).collect(),
                rf: d.rf.iter().map(|r| r / lam).collect(),
                rbnd: d.rbnd / lam,
            };
            prop_assert_eq!(a, big.classify_with(&d, 0.1));
        }

        #[test]
        fn vertex_sector_equivalences(u in prop::array::uniform3(0.0..0.1f64)) {
            let c = cube();
            let x = u;
            if c.contains(x) {
                let d = c.dist_features(x).unwrap();
                for s in c.classify_with(&d, 0.1) {
                    match s.kind {
                        Kind::V => {
                            let rf = d.rf.iter().copied().fold(f64::INFINITY, f64::min);
                            let re = d.re.iter().copied().fold(f64::INFINITY, f64::min);
                            prop_assert!(rf.max(re) <= d.rv[0]);
                            prop_assert!(d.rv[0] <= rf / (0.1 * 0.1) + 1e-12);
                        }
                        Kind::Vef => {
                            let (e, f) = (s.e.unwrap(), s.f.unwrap());
                            prop_assert!(d.rf[f] <= d.re[e] && d.re[e] <= d.rv[0]);
                        }
                        _ => {}
                    }
                }
            }
        }
    }
}
