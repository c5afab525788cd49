//! Stretch, bend and shear energies and their derivatives.
//!
//! Every stencil energy is linear in its stiffness, so the routines here work
//! on unit-stiffness energies and scale afterwards.

use crate::geometry::{AnglePair, Edge, RestQuantities, Vec3};
use crate::jet::{cross3, dot3, scale3, sub3, Dual, Jet, Real};

use super::sparse::BlockMatrix;
use super::{ClothModel, Stiffness};

/// Squared-length floor (edge norms are clamped at 1e-9 m).
pub const MIN_LEN2: f64 = 1e-18;
/// Below this `tan²` of the deflection the straight-pair energy uses a series.
const SERIES_LIMIT: f64 = 1e-4;

pub fn edge_energy<T: Real>(xa: [T; 3], xb: [T; 3], rest_length: f64) -> T {
    let e = sub3(xb, xa);
    let len = dot3(e, e).floor_at(MIN_LEN2).sqrt();
    let d = len - T::cst(rest_length);
    (d * d).scale(0.5)
}

/// `½ (θ − θ₀)²` for the angle between `a − mid` and `b − mid`.
///
/// Pairs that are straight at rest use the deflection `ψ = π − θ` and
/// evaluate `ψ²` as a smooth function of `‖û×v̂‖²`, which keeps every
/// derivative finite at the flat configuration.
pub fn angle_energy<T: Real>(xa: [T; 3], xm: [T; 3], xb: [T; 3], rest_angle: f64, straight: bool) -> T {
    let u = sub3(xa, xm);
    let v = sub3(xb, xm);
    let nu = dot3(u, u).floor_at(MIN_LEN2).sqrt();
    let nv = dot3(v, v).floor_at(MIN_LEN2).sqrt();
    let uh = scale3(u, T::cst(1.0) / nu);
    let vh = scale3(v, T::cst(1.0) / nv);
    let c = cross3(uh, vh);
    let q = dot3(c, c);
    let d = dot3(uh, vh);
    if straight {
        let e = -d;
        let er = e.re();
        let psi2 = if er > 0.0 && q.re() < SERIES_LIMIT * er * er {
            // atan(√w)² = w (1 − w/3 + w²/5 − w³/7 + w⁴/9)²,  w = q / e²
            let w = q / (e * e);
            let t = T::cst(1.0) - w * (T::cst(1.0 / 3.0) - w * (T::cst(0.2) - w * (T::cst(1.0 / 7.0) - w.scale(1.0 / 9.0))));
            w * t * t
        } else {
            let psi = q.floor_at(1e-30).sqrt().atan2(e);
            psi * psi
        };
        psi2.scale(0.5)
    } else {
        let theta = q.floor_at(1e-30).sqrt().atan2(d);
        let diff = theta - T::cst(rest_angle);
        (diff * diff).scale(0.5)
    }
}

#[inline]
fn load<T: Real>(x: &[Vec3], i: usize) -> [T; 3] {
    [T::cst(x[i][0]), T::cst(x[i][1]), T::cst(x[i][2])]
}

pub fn stretch_unit(x: &[Vec3], edges: &[Edge]) -> f64 {
    edges.iter().map(|e| edge_energy(load::<f64>(x, e.a), load(x, e.b), e.rest_length)).sum()
}

pub fn angle_unit(x: &[Vec3], pairs: &[AnglePair]) -> f64 {
    pairs
        .iter()
        .map(|p| angle_energy(load::<f64>(x, p.a), load(x, p.mid), load(x, p.b), p.rest_angle, p.is_straight()))
        .sum()
}

/// `Σ ½ Y (‖e‖ − L₀)²`
pub fn stretch_energy(x: &[Vec3], rest: &RestQuantities, stretch: f64) -> f64 {
    stretch * stretch_unit(x, &rest.edges)
}

/// `Σ ½ B (θ − θ₀)²` over the collinear pairs.
pub fn bend_energy(x: &[Vec3], rest: &RestQuantities, bend: f64) -> f64 {
    bend * angle_unit(x, &rest.bend_pairs)
}

/// `Σ ½ S (φ − φ₀)²` over the perpendicular pairs.
pub fn shear_energy(x: &[Vec3], rest: &RestQuantities, shear: f64) -> f64 {
    shear * angle_unit(x, &rest.shear_pairs)
}

/// Unit-stiffness energies `[stretch, bend, shear]`.
pub fn unit_energies(x: &[Vec3], rest: &RestQuantities) -> [f64; 3] {
    [stretch_unit(x, &rest.edges), angle_unit(x, &rest.bend_pairs), angle_unit(x, &rest.shear_pairs)]
}

pub fn total_energy(x: &[Vec3], rest: &RestQuantities, k: &Stiffness) -> f64 {
    let [e_y, e_b, e_s] = unit_energies(x, rest);
    k.stretch * e_y + k.bend * e_b + k.shear * e_s
}

/// Stencil vertices and a slot table into the block matrix.
pub(crate) enum StencilRef<'a> {
    Edge(&'a Edge),
    Angle(&'a AnglePair),
}

impl StencilRef<'_> {
    fn vertices(&self) -> ([usize; 3], usize) {
        match self {
            StencilRef::Edge(e) => ([e.a, e.b, 0], 2),
            StencilRef::Angle(p) => ([p.a, p.mid, p.b], 3),
        }
    }
}

fn eval_edge<T: Real>(e: &Edge, xs: &[[T; 3]]) -> T {
    edge_energy(xs[0], xs[1], e.rest_length)
}

fn eval_angle<T: Real>(p: &AnglePair, xs: &[[T; 3]]) -> T {
    angle_energy(xs[0], xs[1], xs[2], p.rest_angle, p.is_straight())
}

/// Unit-stiffness gradient of one stencil; returns per-local-vertex gradients.
fn stencil_gradient<const N: usize>(eval: impl Fn(&[[Jet<f64, N>; 3]]) -> Jet<f64, N>, x: &[Vec3], verts: &[usize]) -> [f64; N] {
    let xs: Vec<[Jet<f64, N>; 3]> = verts
        .iter()
        .enumerate()
        .map(|(l, &v)| std::array::from_fn(|d| Jet::var(x[v][d], 3 * l + d)))
        .collect();
    eval(&xs).g
}

type HJet<const N: usize> = Jet<Jet<f64, N>, N>;

fn hessian_var<const N: usize>(x: f64, i: usize) -> HJet<N> {
    let mut g = [Jet::constant(0.0); N];
    g[i] = Jet::constant(1.0);
    Jet { v: Jet::var(x, i), g }
}

/// Unit-stiffness Hessian of one stencil, row-major `N × N`.
fn stencil_hessian<const N: usize>(eval: impl Fn(&[[HJet<N>; 3]]) -> HJet<N>, x: &[Vec3], verts: &[usize]) -> [[f64; N]; N] {
    let xs: Vec<[HJet<N>; 3]> = verts
        .iter()
        .enumerate()
        .map(|(l, &v)| std::array::from_fn(|d| hessian_var(x[v][d], 3 * l + d)))
        .collect();
    let out = eval(&xs);
    std::array::from_fn(|r| out.g[r].g)
}

type TJet<const N: usize> = Dual<Dual<Jet<f64, N>>>;

/// For unit stiffness returns `(λᵀ H u, ∇ₓ(λᵀ H u))` on one stencil.
fn stencil_third<const N: usize>(
    eval: impl Fn(&[[TJet<N>; 3]]) -> TJet<N>,
    x: &[Vec3],
    lambda: &[Vec3],
    u: &[Vec3],
    verts: &[usize],
) -> (f64, [f64; N]) {
    let xs: Vec<[TJet<N>; 3]> = verts
        .iter()
        .enumerate()
        .map(|(l, &v)| {
            std::array::from_fn(|d| Dual {
                v: Dual { v: Jet::var(x[v][d], 3 * l + d), d: Jet::constant(u[v][d]) },
                d: Dual { v: Jet::constant(lambda[v][d]), d: Jet::constant(0.0) },
            })
        })
        .collect();
    let out = eval(&xs).d.d;
    (out.v, out.g)
}

impl ClothModel {
    pub(crate) fn stencils(&self) -> impl Iterator<Item = (usize, StencilRef<'_>)> {
        let r = &self.rest;
        r.edges
            .iter()
            .map(|e| (0, StencilRef::Edge(e)))
            .chain(r.bend_pairs.iter().map(|p| (1, StencilRef::Angle(p))))
            .chain(r.shear_pairs.iter().map(|p| (2, StencilRef::Angle(p))))
    }

    /// Unit-stiffness energy gradients, one array per term.
    pub fn unit_gradients(&self, x: &[Vec3]) -> [Vec<Vec3>; 3] {
        let n = x.len();
        let mut out = [vec![[0.0; 3]; n], vec![[0.0; 3]; n], vec![[0.0; 3]; n]];
        for (term, s) in self.stencils() {
            let (verts, nv) = s.vertices();
            let verts = &verts[..nv];
            let g: Vec<f64> = match &s {
                StencilRef::Edge(e) => stencil_gradient::<6>(|xs| eval_edge(e, xs), x, verts).to_vec(),
                StencilRef::Angle(p) => stencil_gradient::<9>(|xs| eval_angle(p, xs), x, verts).to_vec(),
            };
            for (l, &v) in verts.iter().enumerate() {
                for d in 0..3 {
                    out[term][v][d] += g[3 * l + d];
                }
            }
        }
        out
    }

    /// Assembles `H = ∂²E/∂x²` for the given stiffness.
    pub fn hessian(&self, x: &[Vec3], k: &Stiffness) -> BlockMatrix {
        let mut h = BlockMatrix::zeros(self.pattern.clone());
        let ks = k.as_array();
        for (idx, (term, s)) in self.stencils().enumerate() {
            let (verts, nv) = s.vertices();
            let slots = &self.slots[idx];
            let scale = ks[term];
            match &s {
                StencilRef::Edge(e) => {
                    let hl = stencil_hessian::<6>(|xs| eval_edge(e, xs), x, &verts[..2]);
                    scatter(&mut h, slots, nv, &hl, scale);
                }
                StencilRef::Angle(p) => {
                    let hl = stencil_hessian::<9>(|xs| eval_angle(p, xs), x, &verts[..3]);
                    scatter(&mut h, slots, nv, &hl, scale);
                }
            }
        }
        h
    }

    /// For `c(x, k) = λᵀ H(x, k) u` returns `(∇ₓc, [∂c/∂Y, ∂c/∂B, ∂c/∂S])`.
    pub fn hessian_contraction_gradient(&self, x: &[Vec3], k: &Stiffness, lambda: &[Vec3], u: &[Vec3]) -> (Vec<Vec3>, [f64; 3]) {
        let ks = k.as_array();
        let mut gx = vec![[0.0; 3]; x.len()];
        let mut gk = [0.0; 3];
        for (term, s) in self.stencils() {
            let (verts, nv) = s.vertices();
            let verts = &verts[..nv];
            let (c, g): (f64, Vec<f64>) = match &s {
                StencilRef::Edge(e) => {
                    let (c, g) = stencil_third::<6>(|xs| eval_edge(e, xs), x, lambda, u, verts);
                    (c, g.to_vec())
                }
                StencilRef::Angle(p) => {
                    let (c, g) = stencil_third::<9>(|xs| eval_angle(p, xs), x, lambda, u, verts);
                    (c, g.to_vec())
                }
            };
            gk[term] += c;
            for (l, &v) in verts.iter().enumerate() {
                for d in 0..3 {
                    gx[v][d] += ks[term] * g[3 * l + d];
                }
            }
        }
        (gx, gk)
    }

    /// Number of stencils whose edge-length clamp is active.
    pub fn degenerate_stencils(&self, x: &[Vec3]) -> usize {
        let short = |a: usize, b: usize| {
            let e = sub3(x[b], x[a]);
            dot3(e, e) < MIN_LEN2
        };
        self.stencils()
            .filter(|(_, s)| match s {
                StencilRef::Edge(e) => short(e.a, e.b),
                StencilRef::Angle(p) => short(p.a, p.mid) || short(p.b, p.mid),
            })
            .count()
    }
}

fn scatter<const N: usize>(h: &mut BlockMatrix, slots: &[usize; 9], nv: usize, hl: &[[f64; N]; N], scale: f64) {
    for a in 0..nv {
        for b in 0..nv {
            let block = &mut h.values[slots[a * 3 + b]];
            for r in 0..3 {
                for c in 0..3 {
                    block[r * 3 + c] += scale * hl[3 * a + r][3 * b + c];
                }
            }
        }
    }
}

/// Internal forces `F = −∂E/∂x` and the number of clamped stencils.
#[derive(Clone, Debug)]
pub struct InternalForces {
    pub forces: Vec<Vec3>,
    pub degenerate: usize,
}

pub fn internal_forces(model: &ClothModel, x: &[Vec3], k: &Stiffness) -> InternalForces {
    let [gy, gb, gs] = model.unit_gradients(x);
    let forces = (0..x.len())
        .map(|i| std::array::from_fn(|d| -(k.stretch * gy[i][d] + k.bend * gb[i][d] + k.shear * gs[i][d])))
        .collect();
    InternalForces { forces, degenerate: model.degenerate_stencils(x) }
}
