//! Builds the differentiable graphs of the texture and reconstruction phases.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gradient::ops::{
    Energy, ForceRegularization, ImageLoss, Pow10, Render, SilhouetteLoss, Step, TextureSmoothness, VertexForces,
    WeightedSum,
};
use crate::gradient::{Gradients, Tape, Var};
use crate::objective::{LossTerms, LossWeights};
use crate::physics::{ClothModel, ClothState, SimParams};
use crate::render::{Camera, Surface, Texture};

/// Everything a reconstruction sees: template, camera and per-frame targets.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: Arc<ClothModel>,
    pub surface: Arc<Surface>,
    pub camera: Arc<Camera>,
    /// Per frame, row-major RGB in `[0, 1]`.
    pub target_rgb: Vec<Arc<Vec<f64>>>,
    pub target_mask: Vec<Arc<Vec<f64>>>,
}

impl Problem {
    pub fn new(
        model: ClothModel,
        surface: Surface,
        camera: Camera,
        target_rgb: Vec<Vec<f64>>,
        target_mask: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let np = camera.num_pixels();
        if target_rgb.is_empty() || target_rgb.len() != target_mask.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} RGB targets and {} masks",
                target_rgb.len(),
                target_mask.len()
            )));
        }
        if target_rgb.iter().any(|t| t.len() != 3 * np) || target_mask.iter().any(|t| t.len() != np) {
            return Err(Error::DimensionMismatch(format!("targets must match the {}x{} camera", camera.width, camera.height)));
        }
        Ok(Self {
            model: Arc::new(model),
            surface: Arc::new(surface),
            camera: Arc::new(camera),
            target_rgb: target_rgb.into_iter().map(Arc::new).collect(),
            target_mask: target_mask.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.target_rgb.len()
    }

    pub fn initial_state(&self) -> ClothState {
        self.model.rest_state()
    }
}

/// Parameter leaves of a reconstruction graph.
#[derive(Clone, Debug)]
pub struct SftVars {
    pub log_stiffness: Var,
    pub constant_force: Var,
    /// One leaf per active force slice.
    pub dynamic_forces: Vec<Var>,
}

/// Recorded reconstruction graph of the first `active_frames` frames.
pub struct SftGraph {
    pub tape: Tape,
    pub vars: SftVars,
    pub loss: Var,
    term_vars: [Var; 4],
    /// State nodes `[x; v]` of frames `0..active_frames`.
    pub states: Vec<Var>,
}

/// Gradients of the reconstruction loss grouped by parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SftGradients {
    pub log_stiffness: [f64; 3],
    pub constant_force: [f64; 3],
    /// Same layout as `SimParams::dynamic_forces`; zero on inactive slices.
    pub dynamic_forces: Vec<f64>,
}

impl SftGraph {
    pub fn loss_value(&self) -> f64 {
        self.tape.scalar(self.loss)
    }

    /// Nodes of the image, silhouette, energy and force terms.
    pub fn term_vars(&self) -> [Var; 4] {
        self.term_vars
    }

    pub fn terms(&self) -> LossTerms {
        let [image, silhouette, energy, force] = self.term_vars.map(|v| self.tape.scalar(v));
        LossTerms { image, silhouette, energy, force }
    }

    pub fn positions(&self, frame: usize) -> Vec<[f64; 3]> {
        let v = self.tape.value(self.states[frame]);
        v[..v.len() / 2].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    pub fn gradients(&self, total_dynamic: usize) -> Result<SftGradients> {
        let g: Gradients = self.tape.backward(self.loss)?;
        let three = |v: Var| {
            let d = g.dense(&self.tape, v);
            [d[0], d[1], d[2]]
        };
        let mut dynamic_forces = vec![0.0; total_dynamic];
        let mut offset = 0;
        for &v in &self.vars.dynamic_forces {
            let d = g.dense(&self.tape, v);
            dynamic_forces[offset..offset + d.len()].copy_from_slice(&d);
            offset += d.len();
        }
        Ok(SftGradients {
            log_stiffness: three(self.vars.log_stiffness),
            constant_force: three(self.vars.constant_force),
            dynamic_forces,
        })
    }
}

fn mean(tape: &mut Tape, terms: &[Var], scale: f64) -> Result<Var> {
    if terms.is_empty() {
        return Ok(tape.constant(vec![0.0]));
    }
    tape.apply(WeightedSum::new(vec![scale; terms.len()]), terms)
}

/// Records simulation, rendering and every loss term over the first
/// `active_frames` frames. Frame 0 is the template at rest.
pub fn build_sft_graph(
    problem: &Problem,
    params: &SimParams,
    texture: &Texture,
    weights: &LossWeights,
    active_frames: usize,
) -> Result<SftGraph> {
    params.validate()?;
    let nv = problem.model.num_vertices();
    if active_frames == 0 || active_frames > problem.n_frames() {
        return Err(Error::InvalidParameter(format!(
            "{active_frames} active frames for a {}-frame scene",
            problem.n_frames()
        )));
    }
    if params.n_force_frames(nv) + 1 < active_frames {
        return Err(Error::DimensionMismatch("not enough dynamic force slices".into()));
    }
    let mut tape = Tape::new();
    let log_stiffness = tape.leaf(vec![params.log10_stretch, params.log10_bend, params.log10_shear]);
    let stiffness = tape.apply(Pow10, &[log_stiffness])?;
    let frozen_stiffness = tape.stop_gradient(stiffness);
    let constant_force = tape.leaf(params.constant_force.to_vec());
    let dynamic_forces: Vec<Var> =
        (0..active_frames - 1).map(|n| tape.leaf(params.dynamic_slice(n, nv).to_vec())).collect();
    let texels = tape.constant(texture.texels.clone());
    let masses = Arc::new(problem.model.masses.clone());

    let mut states = vec![tape.constant(problem.initial_state().to_flat())];
    for &d in &dynamic_forces {
        let ext = tape.apply(VertexForces::newtons(masses.clone()), &[constant_force, d])?;
        let mut s = *states.last().unwrap();
        for _ in 0..params.substeps_per_frame {
            s = tape.apply(Step::new(problem.model.clone(), params.damping, params.dt), &[s, stiffness, ext])?;
        }
        states.push(s);
    }

    let (mut image, mut silhouette, mut energy) = (Vec::new(), Vec::new(), Vec::new());
    for (f, &s) in states.iter().enumerate() {
        let render = Render::new(problem.surface.clone(), problem.camera.clone(), texture.width, texture.height, texture.channels);
        let r = tape.apply(render, &[s, texels])?;
        image.push(tape.apply(ImageLoss::new(problem.target_rgb[f].clone()), &[r])?);
        silhouette.push(tape.apply(SilhouetteLoss::new(problem.target_mask[f].clone()), &[r])?);
        energy.push(tape.apply(Energy::new(problem.model.clone()), &[s, frozen_stiffness])?);
    }
    let eye = problem.camera.center();
    let mut force = Vec::new();
    for (n, &d) in dynamic_forces.iter().enumerate() {
        let f = tape.apply(VertexForces::per_unit_mass(), &[constant_force, d])?;
        force.push(tape.apply(ForceRegularization::new(eye), &[states[n], f])?);
    }
    let nf = active_frames as f64;
    let term_vars = [
        mean(&mut tape, &image, 1.0 / nf)?,
        mean(&mut tape, &silhouette, 1.0 / nf)?,
        mean(&mut tape, &energy, 1.0 / nf)?,
        mean(&mut tape, &force, 1.0 / (force.len() * nv).max(1) as f64)?,
    ];
    let loss = tape.apply(WeightedSum::new(vec![1.0, weights.silhouette, weights.energy, weights.force]), &term_vars)?;
    Ok(SftGraph {
        tape,
        vars: SftVars { log_stiffness, constant_force, dynamic_forces },
        loss,
        term_vars,
        states,
    })
}

/// Recorded texture-phase graph on frame 0.
pub struct TextureGraph {
    pub tape: Tape,
    pub texels: Var,
    pub loss: Var,
    pub image: Var,
    pub smoothness: Var,
}

impl TextureGraph {
    pub fn gradient(&self) -> Result<Vec<f64>> {
        let g = self.tape.backward(self.loss)?;
        Ok(g.dense(&self.tape, self.texels))
    }
}

pub fn build_texture_graph(problem: &Problem, texture: &Texture, weights: &LossWeights) -> Result<TextureGraph> {
    let mut tape = Tape::new();
    let texels = tape.leaf(texture.texels.clone());
    let state = tape.constant(problem.initial_state().to_flat());
    let render = Render::new(problem.surface.clone(), problem.camera.clone(), texture.width, texture.height, texture.channels);
    let r = tape.apply(render, &[state, texels])?;
    let image = tape.apply(ImageLoss::new(problem.target_rgb[0].clone()), &[r])?;
    let smoothness = tape.apply(TextureSmoothness::new(texture.width, texture.height, texture.channels), &[texels])?;
    let loss = tape.apply(WeightedSum::new(vec![1.0, weights.texture]), &[image, smoothness])?;
    Ok(TextureGraph { tape, texels, loss, image, smoothness })
}
