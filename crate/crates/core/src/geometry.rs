//! Quad-grid cloth template: rest geometry, connectivity, lumped masses.
//!
//! Vertex `(i, j)` (row `i` from the top, column `j`) has index `i * cols + j`.
//! Quads are listed as `(i,j), (i,j+1), (i+1,j+1), (i+1,j)` and always split
//! along the `(i,j)–(i+1,j+1)` diagonal.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Default area density in kg/m².
pub const DEFAULT_DENSITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ClothMesh {
    pub rows: usize,
    pub cols: usize,
    pub rest_positions: Vec<Vec3>,
    pub quads: Vec<[usize; 4]>,
    pub uvs: Vec<[f64; 2]>,
    /// Sorted, unique.
    pub pinned: Vec<usize>,
    /// Per-vertex lumped masses in kg; empty until [`ClothMesh::with_masses`].
    pub masses: Vec<f64>,
}

/// Top row of a `cols`-wide grid.
pub fn top_row(cols: usize) -> Vec<usize> {
    (0..cols).collect()
}

/// Planar `rows × cols` grid hanging from the origin in the x/y plane
/// (x to the right, rows going down along −y, z = 0).
pub fn build_template(rows: usize, cols: usize, spacing: f64, pinned: &[usize]) -> Result<ClothMesh> {
    if rows < 2 || cols < 2 {
        return Err(Error::DimensionTooSmall { rows, cols });
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    let mut rest_positions = Vec::with_capacity(rows * cols);
    let mut uvs = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            rest_positions.push([j as f64 * spacing, -(i as f64) * spacing, 0.0]);
            uvs.push([j as f64 / (cols - 1) as f64, i as f64 / (rows - 1) as f64]);
        }
    }
    let mut pins = pinned.to_vec();
    pins.sort_unstable();
    pins.dedup();
    let mesh = ClothMesh {
        rows,
        cols,
        rest_positions,
        quads: grid_quads(rows, cols),
        uvs,
        pinned: pins,
        masses: Vec::new(),
    };
    mesh.validate()?;
    Ok(mesh)
}

fn grid_quads(rows: usize, cols: usize) -> Vec<[usize; 4]> {
    let mut quads = Vec::with_capacity((rows - 1) * (cols - 1));
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let a = i * cols + j;
            quads.push([a, a + 1, a + cols + 1, a + cols]);
        }
    }
    quads
}

impl ClothMesh {
    pub fn num_vertices(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    /// Two triangles per quad, split along the `(i,j)–(i+1,j+1)` diagonal.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.quads
            .iter()
            .flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]])
            .collect()
    }

    pub fn pinned_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_vertices()];
        for &p in &self.pinned {
            mask[p] = true;
        }
        mask
    }

    pub fn with_masses(mut self, density: f64) -> Result<Self> {
        self.masses = compute_masses(&self, density)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vertices();
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::DimensionTooSmall { rows: self.rows, cols: self.cols });
        }
        if self.rest_positions.len() != n || self.uvs.len() != n {
            return Err(Error::InvalidMesh(format!(
                "expected {n} vertices and uvs, got {} and {}",
                self.rest_positions.len(),
                self.uvs.len()
            )));
        }
        if self.quads != grid_quads(self.rows, self.cols) {
            return Err(Error::InvalidMesh("quads do not follow the grid layout".into()));
        }
        for q in &self.quads {
            for k in 0..4 {
                if q[k] >= n || q[(k + 1)..].contains(&q[k]) {
                    return Err(Error::InvalidMesh(format!("bad quad {q:?}")));
                }
            }
        }
        if let Some(uv) = self.uvs.iter().find(|uv| !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1])) {
            return Err(Error::InvalidMesh(format!("uv {uv:?} outside the unit square")));
        }
        if self.rest_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh("non-finite rest position".into()));
        }
        if self.pinned.iter().any(|&p| p >= n) || self.pinned.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMesh("pinned set must be sorted, unique and in range".into()));
        }
        if !self.masses.is_empty() {
            if self.masses.len() != n {
                return Err(Error::InvalidMesh(format!("expected {n} masses, got {}", self.masses.len())));
            }
            if self.masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
                return Err(Error::InvalidMesh("masses must be strictly positive".into()));
            }
        }
        Ok(())
    }

    /// Plain-text serialization (see `docs/formats.md`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "clothsft-mesh 1");
        let _ = writeln!(s, "grid {} {}", self.rows, self.cols);
        for p in &self.rest_positions {
            let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
        }
        for uv in &self.uvs {
            let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
        }
        for q in &self.quads {
            let _ = writeln!(s, "q {} {} {} {}", q[0], q[1], q[2], q[3]);
        }
        for p in &self.pinned {
            let _ = writeln!(s, "pin {p}");
        }
        for m in &self.masses {
            let _ = writeln!(s, "m {m}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::InvalidMesh(format!("line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        match lines.next() {
            Some((_, l)) if l.split_whitespace().collect::<Vec<_>>() == ["clothsft-mesh", "1"] => {}
            _ => return Err(Error::InvalidMesh("missing `clothsft-mesh 1` header".into())),
        }
        let mut mesh = ClothMesh {
            rows: 0,
            cols: 0,
            rest_positions: Vec::new(),
            quads: Vec::new(),
            uvs: Vec::new(),
            pinned: Vec::new(),
            masses: Vec::new(),
        };
        for (ln, line) in lines {
            let mut it = line.split_whitespace();
            let tag = it.next().unwrap_or_default();
            let fields: Vec<&str> = it.collect();
            let floats = || -> Result<Vec<f64>> {
                fields.iter().map(|f| f.parse::<f64>().map_err(|_| bad(ln, "bad number"))).collect()
            };
            let ints = || -> Result<Vec<usize>> {
                fields.iter().map(|f| f.parse::<usize>().map_err(|_| bad(ln, "bad index"))).collect()
            };
            match (tag, fields.len()) {
                ("grid", 2) => {
                    let v = ints()?;
                    mesh.rows = v[0];
                    mesh.cols = v[1];
                }
                ("v", 3) => {
                    let v = floats()?;
                    mesh.rest_positions.push([v[0], v[1], v[2]]);
                }
                ("vt", 2) => {
                    let v = floats()?;
                    mesh.uvs.push([v[0], v[1]]);
                }
                ("q", 4) => {
                    let v = ints()?;
                    mesh.quads.push([v[0], v[1], v[2], v[3]]);
                }
                ("pin", 1) => mesh.pinned.push(ints()?[0]),
                ("m", 1) => mesh.masses.push(floats()?[0]),
                _ => return Err(bad(ln, "unrecognized record")),
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::InvalidMesh(m) => Error::schema(path, m),
            other => other,
        })
    }
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Lumped masses: each triangle's mass `density × area` is split evenly
/// between its three vertices.
pub fn compute_masses(mesh: &ClothMesh, density: f64) -> Result<Vec<f64>> {
    if !(density > 0.0) || !density.is_finite() {
        return Err(Error::InvalidParameter(format!("density must be positive, got {density}")));
    }
    let p = &mesh.rest_positions;
    let mut masses = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = triangle_area(p[tri[0]], p[tri[1]], p[tri[2]]);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle(t));
        }
        let share = density * area / 3.0;
        for &v in tri {
            masses[v] += share;
        }
    }
    Ok(masses)
}

/// Total triangulated area at rest.
pub fn surface_area(mesh: &ClothMesh) -> f64 {
    let p = &mesh.rest_positions;
    mesh.triangles().iter().map(|t| triangle_area(p[t[0]], p[t[1]], p[t[2]])).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
}

/// Two edges `(a, mid)` and `(mid, b)` sharing `mid`; the angle is measured
/// between `a − mid` and `b − mid`, in `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnglePair {
    pub a: usize,
    pub mid: usize,
    pub b: usize,
    pub rest_angle: f64,
}

impl AnglePair {
    /// Straight at rest (rest angle exactly π).
    pub fn is_straight(&self) -> bool {
        self.rest_angle == PI
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestQuantities {
    pub edges: Vec<Edge>,
    /// Collinear edge pairs of the grid.
    pub bend_pairs: Vec<AnglePair>,
    /// Remaining (perpendicular) connected edge pairs.
    pub shear_pairs: Vec<AnglePair>,
}

pub fn angle_between(a: Vec3, mid: Vec3, b: Vec3) -> f64 {
    let u = [a[0] - mid[0], a[1] - mid[1], a[2] - mid[2]];
    let v = [b[0] - mid[0], b[1] - mid[1], b[2] - mid[2]];
    let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    s.atan2(u[0] * v[0] + u[1] * v[1] + u[2] * v[2])
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn rest_quantities(mesh: &ClothMesh) -> RestQuantities {
    let (r, c) = (mesh.rows, mesh.cols);
    let p = &mesh.rest_positions;
    let idx = |i: usize, j: usize| i * c + j;
    let edge = |a: usize, b: usize| Edge { a, b, rest_length: dist(p[a], p[b]) };
    let pair = |a: usize, mid: usize, b: usize| AnglePair { a, mid, b, rest_angle: angle_between(p[a], p[mid], p[b]) };

    let mut edges = Vec::with_capacity(r * (c - 1) + c * (r - 1));
    for i in 0..r {
        for j in 0..c - 1 {
            edges.push(edge(idx(i, j), idx(i, j + 1)));
        }
    }
    for i in 0..r - 1 {
        for j in 0..c {
            edges.push(edge(idx(i, j), idx(i + 1, j)));
        }
    }

    let mut bend_pairs = Vec::new();
    for i in 0..r {
        for j in 1..c.saturating_sub(1) {
            bend_pairs.push(pair(idx(i, j - 1), idx(i, j), idx(i, j + 1)));
        }
    }
    for i in 1..r.saturating_sub(1) {
        for j in 0..c {
            bend_pairs.push(pair(idx(i - 1, j), idx(i, j), idx(i + 1, j)));
        }
    }

    let mut shear_pairs = Vec::with_capacity(4 * (r - 1) * (c - 1));
    for i in 0..r - 1 {
        for j in 0..c - 1 {
            let (v00, v01, v11, v10) = (idx(i, j), idx(i, j + 1), idx(i + 1, j + 1), idx(i + 1, j));
            shear_pairs.push(pair(v01, v00, v10));
            shear_pairs.push(pair(v00, v01, v11));
            shear_pairs.push(pair(v01, v11, v10));
            shear_pairs.push(pair(v11, v10, v00));
        }
    }
    RestQuantities { edges, bend_pairs, shear_pairs }
}
