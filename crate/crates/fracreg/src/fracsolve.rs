//! Galerkin solver for the integral fractional Laplacian with zero exterior
//! data: P1 elements on intervals or tetrahedra, dense assembly, direct solve.
//!
//! The bilinear form is integrated as `∫_Ω dx ∫_{S^{d-1}} dω ∫_0^∞ dρ`: for a
//! quadrature point `x` each ray is walked through the mesh and the radial
//! integral over every simplex it crosses is done in closed form, since both
//! basis differences are affine in `ρ` there. The exterior part uses the exit
//! distance of the ray, which is exact for convex domains.

use crate::extension::frac_constant;
use crate::polytope::{add, dot, scale, sub, Frame, Polytope, P3};
use crate::quadrature::{dir_derivative, gauss_legendre, polytope_rule, tet_rule_on, Field, MultiIndex};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("system matrix is not positive definite")]
    Singular,
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SolveError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dim: usize,
    pub nodes: Vec<P3>,
    pub cells: Vec<Vec<usize>>,
    pub boundary: Vec<bool>,
}

/// Barycentric coordinates of a simplex as affine functions `a_k + g_k·x`.
#[derive(Debug, Clone)]
struct Bary {
    a: Vec<f64>,
    g: Vec<P3>,
    vol: f64,
}

impl Bary {
    fn eval(&self, k: usize, x: &P3) -> f64 {
        self.a[k] + dot(self.g[k], *x)
    }
}

impl Mesh {
    /// Uniform mesh of `(a, b)` with `n` elements.
    pub fn interval(n: usize, a: f64, b: f64) -> Self {
        let nodes = (0..=n).map(|i| [a + (b - a) * i as f64 / n as f64, 0.0, 0.0]).collect();
        let cells = (0..n).map(|i| vec![i, i + 1]).collect();
        let boundary = (0..=n).map(|i| i == 0 || i == n).collect();
        Self { dim: 1, nodes, cells, boundary }
    }

    /// Kuhn triangulation of the unit cube with `n³` subcubes and `6n³` tetrahedra.
    pub fn cube(n: usize) -> Self {
        let id = |i: usize, j: usize, k: usize| i + (n + 1) * (j + (n + 1) * k);
        let h = 1.0 / n as f64;
        let mut nodes = Vec::with_capacity((n + 1).pow(3));
        let mut boundary = Vec::with_capacity((n + 1).pow(3));
        for k in 0..=n {
            for j in 0..=n {
                for i in 0..=n {
                    nodes.push([i as f64 * h, j as f64 * h, k as f64 * h]);
                    boundary.push([i, j, k].iter().any(|&t| t == 0 || t == n));
                }
            }
        }
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut cells = Vec::with_capacity(6 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for p in perms {
                        let mut c = [i, j, k];
                        let mut t = vec![id(c[0], c[1], c[2])];
                        for ax in p {
                            c[ax] += 1;
                            t.push(id(c[0], c[1], c[2]));
                        }
                        cells.push(t);
                    }
                }
            }
        }
        let mut m = Self { dim: 3, nodes, cells, boundary };
        m.orient();
        m
    }

    fn signed_volume(&self, c: &[usize]) -> f64 {
        let p = |k: usize| self.nodes[c[k]];
        if self.dim == 1 {
            p(1)[0] - p(0)[0]
        } else {
            let (e1, e2, e3) = (sub(p(1), p(0)), sub(p(2), p(0)), sub(p(3), p(0)));
            dot(e1, crate::polytope::cross(e2, e3)) / 6.0
        }
    }

    fn orient(&mut self) {
        for i in 0..self.cells.len() {
            if self.signed_volume(&self.cells[i]) < 0.0 {
                let n = self.cells[i].len();
                self.cells[i].swap(n - 2, n - 1);
            }
        }
    }

    fn face_key(c: &[usize], k: usize) -> Vec<usize> {
        let mut f: Vec<usize> = c.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).collect();
        f.sort_unstable();
        f
    }

    /// Neighbour across the face opposite each local vertex.
    fn neighbours(&self) -> Vec<Vec<Option<(usize, usize)>>> {
        let mut map: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
        for (ci, c) in self.cells.iter().enumerate() {
            for k in 0..c.len() {
                map.entry(Self::face_key(c, k)).or_default().push((ci, k));
            }
        }
        self.cells
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                (0..c.len())
                    .map(|k| map[&Self::face_key(c, k)].iter().find(|(cj, _)| *cj != ci).copied())
                    .collect()
            })
            .collect()
    }

    /// Conformity, positive volumes, consistent boundary flags and convexity.
    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 3 {
            return Err(SolveError::Mesh(format!("dimension {} unsupported", self.dim)));
        }
        if self.boundary.len() != self.nodes.len() {
            return Err(SolveError::Mesh("one boundary flag per node".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.len() != self.dim + 1 || c.iter().any(|&v| v >= self.nodes.len()) {
                return Err(SolveError::Mesh(format!("cell {i} malformed")));
            }
            if self.signed_volume(c) <= 0.0 {
                return Err(SolveError::Mesh(format!("cell {i} has non-positive volume")));
            }
        }
        let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
        for c in &self.cells {
            for k in 0..c.len() {
                *count.entry(Self::face_key(c, k)).or_default() += 1;
            }
        }
        if let Some((f, _)) = count.iter().find(|(_, n)| **n > 2) {
            return Err(SolveError::Mesh(format!("face {f:?} shared by more than two cells")));
        }
        let mut on_bnd = vec![false; self.nodes.len()];
        let mut bfaces = Vec::new();
        for (ci, c) in self.cells.iter().enumerate() {
            for k in 0..c.len() {
                if count[&Self::face_key(c, k)] == 1 {
                    for (i, v) in c.iter().enumerate() {
                        if i != k {
                            on_bnd[*v] = true;
                        }
                    }
                    bfaces.push((ci, k));
                }
            }
        }
        if on_bnd != self.boundary {
            return Err(SolveError::Mesh("boundary flags disagree with the boundary faces".into()));
        }
        let bary = self.barycentrics();
        let tol = 1e-10 * self.diameter();
        for (ci, k) in bfaces {
            // the outward side of a boundary face is where λ_k < 0; no node may lie there
            let b = &bary[ci];
            let n = scale(b.g[k], 1.0 / dot(b.g[k], b.g[k]).sqrt());
            let off = b.eval(k, &[0.0; 3]) / dot(b.g[k], b.g[k]).sqrt();
            if self.nodes.iter().any(|x| dot(n, *x) + off < -tol) {
                return Err(SolveError::Mesh("domain is not convex".into()));
            }
        }
        Ok(())
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for p in &self.nodes {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..3 {
            d += (hi[k] - lo[k]).powi(2);
        }
        d.sqrt()
    }

    fn barycentrics(&self) -> Vec<Bary> {
        self.cells
            .iter()
            .map(|c| {
                let p0 = self.nodes[c[0]];
                if self.dim == 1 {
                    let h = self.nodes[c[1]][0] - p0[0];
                    let g1 = [1.0 / h, 0.0, 0.0];
                    Bary { a: vec![1.0 + p0[0] / h, -p0[0] / h], g: vec![scale(g1, -1.0), g1], vol: h }
                } else {
                    let m = nalgebra::Matrix3::from_fn(|r, k| self.nodes[c[k + 1]][r] - p0[r]);
                    let inv = m.try_inverse().expect("validated cell");
                    let mut g = vec![[0.0; 3]; 4];
                    let mut a = vec![0.0; 4];
                    for k in 0..3 {
                        g[k + 1] = [inv[(k, 0)], inv[(k, 1)], inv[(k, 2)]];
                        a[k + 1] = -dot(g[k + 1], p0);
                    }
                    g[0] = scale(add(add(g[1], g[2]), g[3]), -1.0);
                    a[0] = 1.0 - a[1] - a[2] - a[3];
                    Bary { a, g, vol: m.determinant() / 6.0 }
                }
            })
            .collect()
    }

    /// Index of each interior node among the unknowns.
    pub fn unknowns(&self) -> Vec<Option<usize>> {
        let mut k = 0;
        self.boundary
            .iter()
            .map(|b| {
                if *b {
                    None
                } else {
                    k += 1;
                    Some(k - 1)
                }
            })
            .collect()
    }

    pub fn n_unknowns(&self) -> usize {
        self.boundary.iter().filter(|b| !**b).count()
    }

    /// Quadrature points of each cell: graded Gauss in 1D, conical product in 3D.
    fn cell_rule(&self, c: usize, order: usize) -> Vec<(P3, f64)> {
        let cell = &self.cells[c];
        if self.dim == 1 {
            let (a, b) = (self.nodes[cell[0]][0], self.nodes[cell[1]][0]);
            let h = b - a;
            let mut br = vec![0.0, 0.5, 1.0];
            for j in 1..=10 {
                let t = 0.5f64.powi(j + 1);
                br.push(t);
                br.push(1.0 - t);
            }
            br.sort_by(f64::total_cmp);
            let mut out = Vec::new();
            for w in br.windows(2) {
                let (xs, ws) = gauss_legendre(order, a + h * w[0], a + h * w[1]);
                out.extend(xs.into_iter().zip(ws).map(|(x, w)| ([x, 0.0, 0.0], w)));
            }
            out
        } else {
            let p = |k: usize| self.nodes[cell[k]];
            tet_rule_on([p(0), p(1), p(2), p(3)], order)
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |m: &str| SolveError::Mesh(m.to_string());
        let mut header = |key: &str| -> Result<usize> {
            let l = lines.next().ok_or_else(|| bad("truncated header"))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(bad(&format!("expected `{key}`")));
            }
            it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(&format!("bad `{key}` count")))
        };
        let dim = header("dim")?;
        let nn = header("nodes")?;
        let mut nodes = Vec::with_capacity(nn);
        let mut boundary = Vec::with_capacity(nn);
        let mut rest: Vec<&str> = Vec::new();
        let mut it = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).skip(2);
        for _ in 0..nn {
            let l = it.next().ok_or_else(|| bad("missing node"))?;
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().map_err(|_| bad(l))).collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad(&format!("node line `{l}`")));
            }
            nodes.push([v[0], v[1], v[2]]);
            boundary.push(v[3] != 0.0);
        }
        rest.extend(it);
        let mut r = rest.into_iter();
        let cl = r.next().ok_or_else(|| bad("missing cells header"))?;
        let nc: usize = cl
            .strip_prefix("cells")
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| bad("expected `cells`"))?;
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let l = r.next().ok_or_else(|| bad("missing cell"))?;
            cells.push(l.split_whitespace().map(|t| t.parse().map_err(|_| bad(l))).collect::<Result<Vec<usize>>>()?);
        }
        let m = Self { dim, nodes, cells, boundary };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// ASCII format: `dim d`, `nodes N`, `x y z flag` lines, `cells M`, index lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# fracreg mesh: node lines are `x y z boundary_flag`\n");
        s += &format!("dim {}\nnodes {}\n", self.dim, self.nodes.len());
        for (p, b) in self.nodes.iter().zip(&self.boundary) {
            s += &format!("{} {} {} {}\n", p[0], p[1], p[2], u8::from(*b));
        }
        s += &format!("cells {}\n", self.cells.len());
        for c in &self.cells {
            s += &c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
            s.push('\n');
        }
        s
    }

    /// Cell containing `x` and its barycentric coordinates.
    fn locate(&self, bary: &[Bary], x: &P3) -> Option<(usize, Vec<f64>)> {
        bary.iter().enumerate().find_map(|(c, b)| {
            let l: Vec<f64> = (0..b.a.len()).map(|k| b.eval(k, x)).collect();
            l.iter().all(|&v| v >= -1e-12).then_some((c, l))
        })
    }
}

/// Quadrature orders and direction counts for assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub x_order: usize,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl AssemblyOptions {
    pub fn for_dim(d: usize) -> Self {
        if d == 1 {
            Self { x_order: 8, n_theta: 1, n_phi: 1 }
        } else {
            Self { x_order: 3, n_theta: 8, n_phi: 16 }
        }
    }
}

fn directions(d: usize, o: &AssemblyOptions) -> Vec<(P3, f64)> {
    if d == 1 {
        return vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)];
    }
    let (mu, wm) = gauss_legendre(o.n_theta, -1.0, 1.0);
    let mut v = Vec::new();
    for (m, w) in mu.iter().zip(&wm) {
        let st = (1.0 - m * m).sqrt();
        for j in 0..o.n_phi {
            let ph = 2.0 * PI * (j as f64 + 0.5) / o.n_phi as f64;
            v.push(([st * ph.cos(), st * ph.sin(), *m], w * 2.0 * PI / o.n_phi as f64));
        }
    }
    v
}

/// `∫_a^b ρ^p dρ`.
fn power_moment(p: f64, a: f64, b: f64) -> f64 {
    if (p + 1.0).abs() < 1e-14 {
        (b / a).ln()
    } else {
        (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0)
    }
}

struct Assembler<'a> {
    mesh: &'a Mesh,
    bary: Vec<Bary>,
    nbr: Vec<Vec<Option<(usize, usize)>>>,
    idx: Vec<Option<usize>>,
    dirs: Vec<(P3, f64)>,
    s: f64,
}

impl Assembler<'_> {
    /// Add `w ∫_{R^d} (φ_i(x)-φ_i(z))(φ_j(x)-φ_j(z))|x-z|^{-d-2s} dz`, with the
    /// exterior counted twice, for all unknowns `i, j`.
    fn point(&self, c0: usize, x: &P3, wx: f64, acc: &mut DMatrix<f64>) {
        let b0 = &self.bary[c0];
        let cell0 = &self.mesh.cells[c0];
        let l0: Vec<f64> = (0..cell0.len()).map(|k| b0.eval(k, x)).collect();
        let s2 = 2.0 * self.s;
        let mut ids: Vec<usize> = Vec::with_capacity(8);
        let mut al: Vec<f64> = Vec::with_capacity(8);
        let mut be: Vec<f64> = Vec::with_capacity(8);
        for (om, wo) in &self.dirs {
            let w = wx * wo;
            let (mut cur, mut r0, mut entry) = (c0, 0.0f64, usize::MAX);
            for _ in 0..100_000 {
                let b = &self.bary[cur];
                let cell = &self.mesh.cells[cur];
                let mut r1 = f64::INFINITY;
                let mut kx = usize::MAX;
                for k in 0..cell.len() {
                    let rate = dot(b.g[k], *om);
                    if k != entry && rate < 0.0 {
                        let r = -b.eval(k, x) / rate;
                        if r < r1 {
                            r1 = r;
                            kx = k;
                        }
                    }
                }
                let r1 = r1.max(r0);
                if r1 > r0 {
                    ids.clear();
                    al.clear();
                    be.clear();
                    for (k, v) in cell0.iter().enumerate() {
                        if let Some(i) = self.idx[*v] {
                            ids.push(i);
                            al.push(l0[k]);
                            be.push(0.0);
                        }
                    }
                    for (k, v) in cell.iter().enumerate() {
                        if let Some(i) = self.idx[*v] {
                            let (a, g) = if cur == c0 { (l0[k], dot(b.g[k], *om)) } else { (b.eval(k, x), dot(b.g[k], *om)) };
                            match ids.iter().position(|&j| j == i) {
                                Some(p) => {
                                    al[p] -= a;
                                    be[p] = g;
                                }
                                None => {
                                    ids.push(i);
                                    al.push(-a);
                                    be.push(g);
                                }
                            }
                        }
                    }
                    let m2 = power_moment(1.0 - s2, r0, r1);
                    let (m0, m1) = if cur == c0 { (0.0, 0.0) } else { (power_moment(-1.0 - s2, r0, r1), power_moment(-s2, r0, r1)) };
                    for p in 0..ids.len() {
                        for q in 0..ids.len() {
                            let v = al[p] * al[q] * m0 - (al[p] * be[q] + be[p] * al[q]) * m1 + be[p] * be[q] * m2;
                            acc[(ids[p], ids[q])] += w * v;
                        }
                    }
                }
                match self.nbr[cur].get(kx).copied().flatten() {
                    Some((n, kn)) => {
                        cur = n;
                        entry = kn;
                        r0 = r1;
                    }
                    None => {
                        // ray leaves Ω: exterior integral ∫_{r1}^∞ ρ^{-1-2s} dρ, counted twice
                        let ext = 2.0 * r1.powf(-s2) / s2;
                        for (p, vp) in cell0.iter().enumerate() {
                            if let Some(i) = self.idx[*vp] {
                                for (q, vq) in cell0.iter().enumerate() {
                                    if let Some(j) = self.idx[*vq] {
                                        acc[(i, j)] += w * l0[p] * l0[q] * ext;
                                    }
                                }
                            }
                        }
                        break;
                    }
                }
            }
        }
    }
}

/// Dense stiffness matrix `A_ij = a(φ_i, φ_j)` over the interior nodes.
pub fn assemble(mesh: &Mesh, s: f64) -> Result<DMatrix<f64>> {
    assemble_with(mesh, s, &AssemblyOptions::for_dim(mesh.dim))
}

pub fn assemble_with(mesh: &Mesh, s: f64, o: &AssemblyOptions) -> Result<DMatrix<f64>> {
    if !(0.0 < s && s < 1.0) {
        return Err(SolveError::Config(format!("order s={s} outside (0,1)")));
    }
    mesh.validate()?;
    let n = mesh.n_unknowns();
    let asm = Assembler { mesh, bary: mesh.barycentrics(), nbr: mesh.neighbours(), idx: mesh.unknowns(), dirs: directions(mesh.dim, o), s };
    // fixed chunks reduced in order, so the matrix does not depend on the thread count
    let nc = mesh.cells.len();
    let chunks = 16.min(nc);
    let parts: Vec<DMatrix<f64>> = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut acc = DMatrix::zeros(n, n);
            for c in (ch * nc / chunks)..((ch + 1) * nc / chunks) {
                if mesh.cells[c].iter().all(|v| asm.idx[*v].is_none()) {
                    continue;
                }
                for (x, w) in mesh.cell_rule(c, o.x_order) {
                    asm.point(c, &x, w, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut a = DMatrix::zeros(n, n);
    for p in parts {
        a += p;
    }
    Ok(a * (0.5 * frac_constant(mesh.dim, s)))
}

/// Load vector `(f, φ_i)`.
pub fn load_vector(mesh: &Mesh, f: &dyn Field, order: usize) -> DVector<f64> {
    let idx = mesh.unknowns();
    let bary = mesh.barycentrics();
    let mut b = DVector::zeros(mesh.n_unknowns());
    for (c, cell) in mesh.cells.iter().enumerate() {
        for (x, w) in mesh.cell_rule(c, order) {
            let fx = f.value(&x);
            for (k, v) in cell.iter().enumerate() {
                if let Some(i) = idx[*v] {
                    b[i] += w * fx * bary[c].eval(k, &x);
                }
            }
        }
    }
    b
}

/// Consistent P1 mass matrix over the interior nodes.
pub fn mass_matrix(mesh: &Mesh) -> DMatrix<f64> {
    let idx = mesh.unknowns();
    let bary = mesh.barycentrics();
    let n = mesh.n_unknowns();
    let mut m = DMatrix::zeros(n, n);
    let d = mesh.dim as f64;
    for (c, cell) in mesh.cells.iter().enumerate() {
        let vol = bary[c].vol;
        for (p, vp) in cell.iter().enumerate() {
            for (q, vq) in cell.iter().enumerate() {
                if let (Some(i), Some(j)) = (idx[*vp], idx[*vq]) {
                    let f = if p == q { 2.0 } else { 1.0 };
                    m[(i, j)] += vol * f / ((d + 1.0) * (d + 2.0));
                }
            }
        }
    }
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub s: f64,
    /// Nodal values including the zero boundary nodes.
    pub values: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub residual: f64,
    /// `a(u_h, u_h) = (f, u_h)`.
    pub energy: f64,
}

impl Solution {
    pub fn to_csv(&self, mesh: &Mesh) -> String {
        let mut s = String::from("node,x,y,z,value\n");
        for (i, (p, v)) in mesh.nodes.iter().zip(&self.values).enumerate() {
            s += &format!("{i},{},{},{},{}\n", p[0], p[1], p[2], v);
        }
        s
    }
}

/// Solve `A u = b` by Cholesky and report the relative residual.
pub fn solve_system(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let ch = a.clone().cholesky().ok_or(SolveError::Singular)?;
    let u = ch.solve(b);
    let r = (a * &u - b).norm() / b.norm().max(f64::MIN_POSITIVE);
    Ok((u, r))
}

pub fn solve(mesh: &Mesh, f: &dyn Field, s: f64) -> Result<Solution> {
    let a = assemble(mesh, s)?;
    solve_assembled(mesh, &a, f, s)
}

pub fn solve_assembled(mesh: &Mesh, a: &DMatrix<f64>, f: &dyn Field, s: f64) -> Result<Solution> {
    let order = if mesh.dim == 1 { 6 } else { 3 };
    let b = load_vector(mesh, f, order);
    let (u, residual) = if b.norm() == 0.0 { (DVector::zeros(b.len()), 0.0) } else { solve_system(a, &b)? };
    let idx = mesh.unknowns();
    let values = idx.iter().map(|i| i.map_or(0.0, |i| u[i])).collect();
    Ok(Solution { s, values, energy: b.dot(&u), coeffs: u.iter().copied().collect(), residual })
}

/// Smallest eigenvalue of `A x = λ M x`.
pub fn min_ritz_value(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let l = m.clone().cholesky().ok_or(SolveError::Singular)?.l();
    let li = l.try_inverse().ok_or(SolveError::Singular)?;
    let b = &li * a * li.transpose();
    let b = 0.5 * (&b + b.transpose());
    Ok(SymmetricEigen::new(b).eigenvalues.min())
}

/// Nodal values of a coarse P1 function at the nodes of another mesh.
pub fn interpolate(coarse: &Mesh, values: &[f64], fine: &Mesh) -> Result<Vec<f64>> {
    let bary = coarse.barycentrics();
    fine.nodes
        .iter()
        .map(|x| {
            let (c, l) = coarse.locate(&bary, x).ok_or_else(|| SolveError::Mesh(format!("node {x:?} outside the coarse mesh")))?;
            Ok(coarse.cells[c].iter().zip(&l).map(|(v, t)| values[*v] * t).sum())
        })
        .collect()
}

/// Refinement comparison: the L² distance between a coarse solution and a
/// finer one on a nested mesh, and the estimate `√((E_fine - E_coarse)/λ_min)`
/// that bounds it (Galerkin orthogonality plus the discrete Rayleigh quotient).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RefinementCheck {
    pub l2_difference: f64,
    pub estimate: f64,
    pub energy_coarse: f64,
    pub energy_fine: f64,
    pub min_ritz: f64,
}

pub fn refinement_check(coarse: &Mesh, uc: &Solution, fine: &Mesh, uf: &Solution, a_fine: &DMatrix<f64>) -> Result<RefinementCheck> {
    let m = mass_matrix(fine);
    let lam = min_ritz_value(a_fine, &m)?;
    let ui = interpolate(coarse, &uc.values, fine)?;
    let idx = fine.unknowns();
    let mut w = DVector::zeros(fine.n_unknowns());
    for (v, i) in idx.iter().enumerate() {
        if let Some(i) = i {
            w[*i] = uf.values[v] - ui[v];
        }
    }
    let l2 = (w.dot(&(&m * &w))).max(0.0).sqrt();
    let gap = (uf.energy - uc.energy).max(0.0);
    Ok(RefinementCheck { l2_difference: l2, estimate: (gap / lam).sqrt(), energy_coarse: uc.energy, energy_fine: uf.energy, min_ritz: lam })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthTable {
    /// `(j, Σ_{|β|=j} ‖∂^β f‖_{L²(Ω)})`.
    pub rows: Vec<(u32, f64)>,
    /// `max_j (row_j / j^j)^{1/(j+1)}`.
    pub gamma_f: f64,
}

/// Derivative growth of the data over the polytope.
pub fn analytic_rhs_check(f: &dyn Field, omega: &Polytope, p_max: u32) -> GrowthTable {
    let rule = polytope_rule(omega, 12);
    let fr = Frame::canonical();
    let mut rows = Vec::new();
    for j in 0..=p_max {
        let mut total = 0.0;
        for a in 0..=j {
            for b in 0..=j - a {
                // canonical frame: g_par = e1, g_parperp = e2, g_perp = e3
                let beta = MultiIndex::new(j - a - b, b, a);
                let sq: f64 = rule
                    .iter()
                    .map(|(x, w)| w * dir_derivative(f, &fr, beta, x, None).map(|v| v * v).unwrap_or(f64::NAN))
                    .sum();
                total += sq.max(0.0).sqrt();
            }
        }
        rows.push((j, total));
    }
    let gamma_f = rows
        .iter()
        .map(|&(j, v)| (v / (j as f64).powi(j as i32)).powf(1.0 / (j as f64 + 1.0)))
        .fold(0.0, f64::max);
    GrowthTable { rows, gamma_f }
}

/// Solution of `(-Δ)^s u = 1` on `(-1,1)` with zero exterior data:
/// `Γ(1/2)/(4^s Γ(s+1/2) Γ(1+s)) (1-x²)_+^s`.
pub fn interval_solution(s: f64, x: f64) -> f64 {
    use crate::quadrature::gamma;
    let k = gamma(0.5) / (4f64.powf(s) * gamma(s + 0.5) * gamma(1.0 + s));
    k * (1.0 - x * x).max(0.0).powf(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::fixtures::cube as cube_poly;
    use crate::quadrature::{Const, FnField};
    use proptest::prelude::*;

    #[test]
    fn interval_solution_at_half_is_the_semicircle() {
        for x in [0.0, 0.3, -0.7, 1.0, 1.5] {
            assert!((interval_solution(0.5, x) - (1.0 - x * x).max(0.0).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn meshes_are_valid() {
        let m = Mesh::cube(3);
        assert_eq!(m.cells.len(), 162);
        assert_eq!(m.n_unknowns(), 8);
        m.validate().unwrap();
        let v: f64 = m.cells.iter().map(|c| m.signed_volume(c)).sum();
        assert!((v - 1.0).abs() < 1e-14);
        assert_eq!(Mesh::cube(6).cells.len(), 1296);
        Mesh::interval(4, -1.0, 1.0).validate().unwrap();
        let mut bad = Mesh::interval(4, -1.0, 1.0);
        bad.boundary[2] = true;
        assert!(bad.validate().is_err());
        let mut bad = Mesh::cube(2);
        bad.cells[0].swap(0, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mesh_text_roundtrip() {
        let m = Mesh::cube(2);
        let t = m.to_text();
        assert_eq!(Mesh::parse(&t).unwrap(), m);
        assert!(Mesh::parse("dim 3\nnodes 1\n0 0 0\n").is_err());
    }

    #[test]
    fn two_element_matrix_matches_oracle() {
        // values from an independent adaptive (tanh-sinh) evaluation of the double integral
        for (s, want) in [(0.5, 4.0 * 2f64.ln() / PI), (0.3, 0.729341410590285), (0.75, 1.24637321202707)] {
            let a = assemble(&Mesh::interval(2, -1.0, 1.0), s).unwrap();
            assert!((a[(0, 0)] - want).abs() < 1e-6 * want, "s={s}: {} vs {want}", a[(0, 0)]);
        }
    }

    #[test]
    fn symmetry_and_definiteness() {
        for (m, s) in [(Mesh::interval(4, -1.0, 1.0), 0.3), (Mesh::interval(8, -1.0, 1.0), 0.8), (Mesh::cube(3), 0.5)] {
            let a = assemble(&m, s).unwrap();
            let amax = a.amax();
            assert!((&a - a.transpose()).amax() <= 1e-10 * amax);
            let ev = SymmetricEigen::new(a.clone()).eigenvalues.min();
            assert!(ev > 0.0);
            assert!(min_ritz_value(&a, &mass_matrix(&m)).unwrap() > 0.0);
        }
    }

    #[test]
    fn interval_solution_converges_to_half_root() {
        let mut errs = Vec::new();
        let mut energies = Vec::new();
        for n in [32, 64, 128] {
            let m = Mesh::interval(n, -1.0, 1.0);
            let u = solve(&m, &Const(1.0), 0.5).unwrap();
            assert!(u.residual < 1e-10);
            let e = m.nodes.iter().zip(&u.values).map(|(x, v)| (v - (1.0 - x[0] * x[0]).max(0.0).sqrt()).abs()).fold(0.0, f64::max);
            errs.push(e);
            energies.push(u.energy);
        }
        assert!(errs[0] <= 0.1 && errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        assert!(energies[1] >= energies[0] - 1e-10 && energies[2] >= energies[1] - 1e-10, "{energies:?}");
    }

    #[test]
    fn galerkin_orthogonality_scaling_and_zero_data() {
        let m = Mesh::interval(16, -1.0, 1.0);
        let a = assemble(&m, 0.4).unwrap();
        let f = FnField::new(|x: &P3| 1.0 + x[0]);
        let u = solve_assembled(&m, &a, &f, 0.4).unwrap();
        let b = load_vector(&m, &f, 6);
        let c = DVector::from_vec(u.coeffs.clone());
        assert!((&a * &c - &b).amax() <= 1e-9);
        let f2 = FnField::new(|x: &P3| 2.0 * (1.0 + x[0]));
        let u2 = solve_assembled(&m, &a, &f2, 0.4).unwrap();
        for (p, q) in u.coeffs.iter().zip(&u2.coeffs) {
            assert!((2.0 * p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
        let z = solve_assembled(&m, &a, &Const(0.0), 0.4).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cube_refinement_is_consistent_and_nonnegative() {
        let (mc, mf) = (Mesh::cube(3), Mesh::cube(6));
        let ac = assemble(&mc, 0.5).unwrap();
        let af = assemble(&mf, 0.5).unwrap();
        let uc = solve_assembled(&mc, &ac, &Const(1.0), 0.5).unwrap();
        let uf = solve_assembled(&mf, &af, &Const(1.0), 0.5).unwrap();
        assert!(uc.values.iter().chain(&uf.values).all(|v| *v >= 0.0));
        let r = refinement_check(&mc, &uc, &mf, &uf, &af).unwrap();
        assert!(r.energy_fine >= r.energy_coarse);
        assert!(r.l2_difference <= r.estimate, "{r:?}");
    }

    #[test]
    fn rhs_growth_tables() {
        let c = cube_poly();
        let t = analytic_rhs_check(&Const(1.0), &c, 3);
        assert!((t.rows[0].1 - 1.0).abs() < 1e-12);
        assert!(t.rows[1..].iter().all(|r| r.1 == 0.0));
        let e = crate::quadrature::PolyField::new(crate::quadrature::Poly3::constant(0.0));
        assert_eq!(analytic_rhs_check(&e, &c, 2).gamma_f, 0.0);
        struct Exp;
        impl Field for Exp {
            fn value(&self, x: &P3) -> f64 {
                x[0].exp()
            }
            fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
                Some(if g[1] == 0 && g[2] == 0 { x[0].exp() } else { 0.0 })
            }
        }
        let t = analytic_rhs_check(&Exp, &c, 4);
        let r0 = ((1f64.exp().powi(2) - 1.0) / 2.0).sqrt();
        for (_, v) in &t.rows {
            assert!((v - r0).abs() < 1e-10, "{v} vs {r0}");
        }
        assert!(t.gamma_f.is_finite());
        struct Inv;
        impl Field for Inv {
            fn value(&self, x: &P3) -> f64 {
                1.0 / (2.0 - x[0])
            }
            fn partial(&self, x: &P3, g: [u32; 3]) -> Option<f64> {
                if g[1] != 0 || g[2] != 0 {
                    return Some(0.0);
                }
                let j = g[0] as i32;
                Some((1..=j).map(f64::from).product::<f64>() / (2.0 - x[0]).powi(j + 1))
            }
        }
        let t = analytic_rhs_check(&Inv, &c, 6);
        for (j, v) in &t.rows {
            let jf = (1..=*j).map(f64::from).product::<f64>();
            let want = jf * ((1.0 - 2f64.powi(-2 * *j as i32 - 1)) / (2.0 * *j as f64 + 1.0)).sqrt();
            assert!((v - want).abs() < 1e-8 * want, "j={j}: {v} vs {want}");
        }
        assert!(t.gamma_f > 0.5 && t.gamma_f < 2.0, "{}", t.gamma_f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn interval_matrix_is_spd(n in 2usize..10, s in 0.1..0.9f64) {
            let m = Mesh::interval(n, -1.0, 1.0);
            let a = assemble(&m, s).unwrap();
            prop_assert!((&a - a.transpose()).amax() <= 1e-10 * a.amax());
            prop_assert!(a.clone().cholesky().is_some());
        }
    }
}
