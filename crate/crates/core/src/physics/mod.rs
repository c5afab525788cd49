//! Mass-spring cloth model and implicit backward-Euler integration.

mod energy;
mod integrate;
pub mod solver;
pub mod sparse;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rest_quantities, ClothMesh, RestQuantities, Vec3};

pub use energy::{
    angle_energy, bend_energy, edge_energy, internal_forces, shear_energy, stretch_energy, total_energy,
    unit_energies, InternalForces,
};
pub use integrate::{simulate, step, step_backward, step_with_cache, StepAdjoint, StepCache};
use sparse::BlockPattern;

/// Log-stiffness boxes: log10 Y ∈ [1,3], log10 B ∈ [−4,−2], log10 S ∈ [−5,−2].
pub const LOG10_STRETCH_RANGE: (f64, f64) = (1.0, 3.0);
pub const LOG10_BEND_RANGE: (f64, f64) = (-4.0, -2.0);
pub const LOG10_SHEAR_RANGE: (f64, f64) = (-5.0, -2.0);
pub const DEFAULT_DT: f64 = 0.005;
pub const DEFAULT_SUBSTEPS: usize = 4;
pub const DEFAULT_DAMPING: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stiffness {
    pub stretch: f64,
    pub bend: f64,
    pub shear: f64,
}

impl Stiffness {
    pub fn from_log10(y: f64, b: f64, s: f64) -> Self {
        Self { stretch: 10f64.powf(y), bend: 10f64.powf(b), shear: 10f64.powf(s) }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.stretch, self.bend, self.shear]
    }
}

/// Everything the integrator needs that is fixed by the template.
#[derive(Clone, Debug)]
pub struct ClothModel {
    pub rows: usize,
    pub cols: usize,
    pub rest_positions: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub pinned: Vec<bool>,
    pub rest: RestQuantities,
    pub(crate) pattern: Arc<BlockPattern>,
    /// Block slots per stencil, indexed `a * 3 + b` over local vertices.
    pub(crate) slots: Vec<[usize; 9]>,
}

impl ClothModel {
    pub fn new(mesh: &ClothMesh) -> Result<Self> {
        mesh.validate()?;
        if mesh.masses.is_empty() {
            return Err(Error::InvalidMesh("masses have not been computed".into()));
        }
        let rest = rest_quantities(mesh);
        let n = mesh.num_vertices();
        let locals: Vec<Vec<usize>> = rest
            .edges
            .iter()
            .map(|e| vec![e.a, e.b])
            .chain(rest.bend_pairs.iter().chain(&rest.shear_pairs).map(|p| vec![p.a, p.mid, p.b]))
            .collect();
        let pairs = locals.iter().flat_map(|v| {
            let v = v.clone();
            (0..v.len()).flat_map(move |a| {
                let v = v.clone();
                (0..v.len()).map(move |b| (v[a], v[b]))
            })
        });
        let pattern = Arc::new(BlockPattern::from_pairs(n, pairs));
        let slots = locals
            .iter()
            .map(|v| {
                let mut s = [0; 9];
                for a in 0..v.len() {
                    for b in 0..v.len() {
                        s[a * 3 + b] = pattern.slot(v[a], v[b]).expect("stencil pair in pattern");
                    }
                }
                s
            })
            .collect();
        Ok(Self {
            rows: mesh.rows,
            cols: mesh.cols,
            rest_positions: mesh.rest_positions.clone(),
            masses: mesh.masses.clone(),
            pinned: mesh.pinned_mask(),
            rest,
            pattern,
            slots,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.masses.len()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    pub fn rest_state(&self) -> ClothState {
        ClothState::at_rest(&self.rest_positions)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClothState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// Integration step counter.
    pub time_index: usize,
}

impl ClothState {
    pub fn at_rest(positions: &[Vec3]) -> Self {
        Self { positions: positions.to_vec(), velocities: vec![[0.0; 3]; positions.len()], time_index: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().chain(&self.velocities).flatten().all(|v| v.is_finite())
    }

    /// `[x; v]` flattened.
    pub fn to_flat(&self) -> Vec<f64> {
        self.positions.iter().chain(&self.velocities).flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64], time_index: usize) -> Self {
        let n = flat.len() / 6;
        let vecs: Vec<Vec3> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self { positions: vecs[..n].to_vec(), velocities: vecs[n..].to_vec(), time_index }
    }
}

/// Physical parameters of a simulation run.
///
/// `constant_force` and `dynamic_forces` are external forces per unit mass
/// (m/s²); vertex `i` receives `mᵢ (C + Dₙⁱ)` newtons during frame `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub log10_stretch: f64,
    pub log10_bend: f64,
    pub log10_shear: f64,
    pub constant_force: [f64; 3],
    /// `n_frames × n_vertices × 3`, flattened.
    #[serde(skip)]
    pub dynamic_forces: Vec<f64>,
    pub damping: f64,
    pub dt: f64,
    pub substeps_per_frame: usize,
}

impl SimParams {
    /// Initial values of the reconstruction (`D = 0`).
    pub fn initial(n_force_frames: usize, n_vertices: usize) -> Self {
        Self {
            log10_stretch: 200f64.log10(),
            log10_bend: -3.0,
            log10_shear: -4.0,
            constant_force: [0.0, -1.0, 0.0],
            dynamic_forces: vec![0.0; n_force_frames * n_vertices * 3],
            damping: DEFAULT_DAMPING,
            dt: DEFAULT_DT,
            substeps_per_frame: DEFAULT_SUBSTEPS,
        }
    }

    pub fn stiffness(&self) -> Stiffness {
        Stiffness::from_log10(self.log10_stretch, self.log10_bend, self.log10_shear)
    }

    pub fn n_force_frames(&self, n_vertices: usize) -> usize {
        self.dynamic_forces.len() / (3 * n_vertices)
    }

    pub fn dynamic_slice(&self, frame: usize, n_vertices: usize) -> &[f64] {
        &self.dynamic_forces[frame * 3 * n_vertices..(frame + 1) * 3 * n_vertices]
    }

    /// Newton forces on every vertex during `frame`.
    pub fn external_forces(&self, frame: usize, masses: &[f64]) -> Vec<Vec3> {
        let d = self.dynamic_slice(frame, masses.len());
        masses
            .iter()
            .enumerate()
            .map(|(i, &m)| std::array::from_fn(|k| m * (self.constant_force[k] + d[3 * i + k])))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !inside(self.log10_stretch, LOG10_STRETCH_RANGE)
            || !inside(self.log10_bend, LOG10_BEND_RANGE)
            || !inside(self.log10_shear, LOG10_SHEAR_RANGE)
        {
            return Err(Error::InvalidParameter(format!(
                "log-stiffness ({}, {}, {}) outside its box",
                self.log10_stretch, self.log10_bend, self.log10_shear
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!("damping {} not in (0, 1]", self.damping)));
        }
        if !(self.dt > 0.0) || self.substeps_per_frame == 0 {
            return Err(Error::InvalidParameter("dt and substeps must be positive".into()));
        }
        if self.constant_force.iter().chain(&self.dynamic_forces).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite force".into()));
        }
        Ok(())
    }
}
