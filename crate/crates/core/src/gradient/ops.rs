//! Primitives of the reconstruction pipeline.
//!
//! States are stored flat as `[x; v]`; forces, positions and gradients are
//! flat `3 N` vectors.

use std::sync::Arc;

use super::{Op, OpContext};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::objective::{energy_gradient, image_loss, perpendicular_norm, silhouette_loss, texture_smoothness};
use crate::physics::{step_backward, step_with_cache, total_energy, unit_energies, ClothModel, ClothState, StepCache, Stiffness};
use crate::render::{rasterize, rasterize_backward, Camera, RenderOutput, Surface, Texture};

type Grads = Result<Vec<Option<Vec<f64>>>>;

fn vec3s(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn stiffness(v: &[f64]) -> Stiffness {
    Stiffness { stretch: v[0], bend: v[1], shear: v[2] }
}

pub struct StopGradient;

impl Op for StopGradient {
    fn name(&self) -> &'static str {
        "stop-gradient"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(inputs[0].to_vec())
    }
    fn backward(&self, _: &OpContext<'_>, _: &[f64]) -> Grads {
        Ok(vec![None])
    }
}

/// Elementwise `10^x`.
pub struct Pow10;

impl Op for Pow10 {
    fn name(&self) -> &'static str {
        "pow10"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(inputs[0].iter().map(|v| 10f64.powf(*v)).collect())
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        Ok(vec![Some(ctx.output.iter().zip(grad).map(|(y, g)| g * y * std::f64::consts::LN_10).collect())])
    }
}

/// `Σ wᵢ xᵢ` over scalar inputs.
pub struct WeightedSum {
    weights: Vec<f64>,
}

impl WeightedSum {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

impl Op for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted-sum"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        if inputs.len() != self.weights.len() || inputs.iter().any(|v| v.len() != 1) {
            return Err(Error::DimensionMismatch("weighted sum expects one weight per scalar input".into()));
        }
        Ok(vec![inputs.iter().zip(&self.weights).map(|(v, w)| w * v[0]).sum()])
    }
    fn backward(&self, _: &OpContext<'_>, grad: &[f64]) -> Grads {
        Ok(self.weights.iter().map(|w| Some(vec![w * grad[0]])).collect())
    }
}

/// Per-vertex force `mᵢ (C + Dᵢ)` from a shared `C` and per-vertex `D`;
/// without masses it yields the per-unit-mass values `C + Dᵢ`.
pub struct VertexForces {
    masses: Option<Arc<Vec<f64>>>,
}

impl VertexForces {
    pub fn newtons(masses: Arc<Vec<f64>>) -> Self {
        Self { masses: Some(masses) }
    }

    pub fn per_unit_mass() -> Self {
        Self { masses: None }
    }

    fn mass(&self, i: usize) -> f64 {
        self.masses.as_ref().map_or(1.0, |m| m[i])
    }
}

impl Op for VertexForces {
    fn name(&self) -> &'static str {
        "vertex-forces"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let (c, d) = (inputs[0], inputs[1]);
        if c.len() != 3 || d.len() % 3 != 0 || self.masses.as_ref().is_some_and(|m| 3 * m.len() != d.len()) {
            return Err(Error::DimensionMismatch("vertex forces".into()));
        }
        Ok(d.iter().enumerate().map(|(k, dv)| self.mass(k / 3) * (c[k % 3] + dv)).collect())
    }
    fn backward(&self, _: &OpContext<'_>, grad: &[f64]) -> Grads {
        let gd: Vec<f64> = grad.iter().enumerate().map(|(k, g)| self.mass(k / 3) * g).collect();
        let mut gc = vec![0.0; 3];
        for (k, g) in gd.iter().enumerate() {
            gc[k % 3] += g;
        }
        Ok(vec![Some(gc), Some(gd)])
    }
}

/// One implicit integration step: inputs `[state, (Y, B, S), external forces]`.
pub struct Step {
    model: Arc<ClothModel>,
    damping: f64,
    dt: f64,
    cache: Option<StepCache>,
}

impl Step {
    pub fn new(model: Arc<ClothModel>, damping: f64, dt: f64) -> Self {
        Self { model, damping, dt, cache: None }
    }
}

impl Op for Step {
    fn name(&self) -> &'static str {
        "implicit-step"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let state = ClothState::from_flat(inputs[0], 0);
        let (next, cache) =
            step_with_cache(&self.model, &state, &stiffness(inputs[1]), &vec3s(inputs[2]), self.damping, self.dt)?;
        self.cache = Some(cache);
        Ok(next.to_flat())
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        let state = ClothState::from_flat(ctx.inputs[0], 0);
        let n3 = grad.len() / 2;
        let cache = self.cache.as_ref().expect("forward ran before backward");
        let adj = step_backward(
            &self.model,
            &state,
            &stiffness(ctx.inputs[1]),
            cache,
            self.damping,
            self.dt,
            &grad[..n3],
            &grad[n3..],
        )?;
        let mut gs = adj.positions;
        gs.extend(adj.velocities);
        Ok(vec![Some(gs), Some(adj.stiffness.to_vec()), Some(adj.external)])
    }
}

/// Renders `[rgb; mask]` from a state (positions first) and texels.
pub struct Render {
    surface: Arc<Surface>,
    camera: Arc<Camera>,
    texture_size: (usize, usize, usize),
    output: Option<RenderOutput>,
}

impl Render {
    pub fn new(surface: Arc<Surface>, camera: Arc<Camera>, width: usize, height: usize, channels: usize) -> Self {
        Self { surface, camera, texture_size: (width, height, channels), output: None }
    }

    fn texture(&self, texels: &[f64]) -> Result<Texture> {
        let (w, h, c) = self.texture_size;
        Texture::new(w, h, c, texels.to_vec())
    }
}

impl Op for Render {
    fn name(&self) -> &'static str {
        "rasterize"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        let nv = self.surface.uvs.len();
        let positions = vec3s(&inputs[0][..3 * nv]);
        let out = rasterize(&positions, &self.surface, &self.texture(inputs[1])?, &self.camera);
        let mut v = out.rgb.clone();
        v.extend_from_slice(&out.mask);
        self.output = Some(out);
        Ok(v)
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        let out = self.output.as_ref().expect("forward ran before backward");
        let np = out.mask.len();
        let texture = self.texture(ctx.inputs[1])?;
        let g = rasterize_backward(out, &self.surface, &texture, &self.camera, &grad[..3 * np], &grad[3 * np..], ctx.needs[1]);
        let mut gs = vec![0.0; ctx.inputs[0].len()];
        for (k, v) in g.positions.iter().flatten().enumerate() {
            gs[k] = *v;
        }
        Ok(vec![Some(gs), g.texture])
    }
}

/// Image loss of a `[rgb; mask]` render against a fixed RGB target.
pub struct ImageLoss {
    target: Arc<Vec<f64>>,
}

impl ImageLoss {
    pub fn new(target: Arc<Vec<f64>>) -> Self {
        Self { target }
    }
}

impl Op for ImageLoss {
    fn name(&self) -> &'static str {
        "image-loss"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(vec![image_loss(&inputs[0][..self.target.len()], &self.target)?.0])
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        let n = self.target.len();
        let (_, g) = image_loss(&ctx.inputs[0][..n], &self.target)?;
        let mut full = vec![0.0; ctx.inputs[0].len()];
        for (a, b) in full.iter_mut().zip(g) {
            *a = b * grad[0];
        }
        Ok(vec![Some(full)])
    }
}

/// Silhouette loss of a `[rgb; mask]` render against a fixed mask.
pub struct SilhouetteLoss {
    target: Arc<Vec<f64>>,
}

impl SilhouetteLoss {
    pub fn new(target: Arc<Vec<f64>>) -> Self {
        Self { target }
    }

    fn mask<'a>(&self, render: &'a [f64]) -> &'a [f64] {
        &render[render.len() - self.target.len()..]
    }
}

impl Op for SilhouetteLoss {
    fn name(&self) -> &'static str {
        "silhouette-loss"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(vec![silhouette_loss(self.mask(inputs[0]), &self.target)?.0])
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        let (_, g) = silhouette_loss(self.mask(ctx.inputs[0]), &self.target)?;
        let offset = ctx.inputs[0].len() - self.target.len();
        let mut full = vec![0.0; ctx.inputs[0].len()];
        for (k, v) in g.into_iter().enumerate() {
            full[offset + k] = v * grad[0];
        }
        Ok(vec![Some(full)])
    }
}

/// Total internal energy of a state: inputs `[state, (Y, B, S)]`.
pub struct Energy {
    model: Arc<ClothModel>,
}

impl Energy {
    pub fn new(model: Arc<ClothModel>) -> Self {
        Self { model }
    }

    fn positions(&self, state: &[f64]) -> Vec<Vec3> {
        vec3s(&state[..3 * self.model.num_vertices()])
    }
}

impl Op for Energy {
    fn name(&self) -> &'static str {
        "energy"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(vec![total_energy(&self.positions(inputs[0]), &self.model.rest, &stiffness(inputs[1]))])
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        let x = self.positions(ctx.inputs[0]);
        let gs = ctx.needs[0].then(|| {
            let mut gs = vec![0.0; ctx.inputs[0].len()];
            let gx = energy_gradient(&self.model, &x, &stiffness(ctx.inputs[1]), grad[0]);
            for (k, v) in gx.iter().flatten().enumerate() {
                gs[k] = *v;
            }
            gs
        });
        let gk = ctx.needs[1].then(|| unit_energies(&x, &self.model.rest).iter().map(|e| e * grad[0]).collect());
        Ok(vec![gs, gk])
    }
}

/// `Σᵢ ‖Fᵢ⊥‖` over vertices, with `⊥` relative to the ray from `eye`:
/// inputs `[state, per-vertex forces]`.
pub struct ForceRegularization {
    eye: Vec3,
}

impl ForceRegularization {
    pub fn new(eye: Vec3) -> Self {
        Self { eye }
    }

    fn terms(&self, state: &[f64], forces: &[f64]) -> Result<Vec<(f64, Vec3, Vec3)>> {
        forces
            .chunks_exact(3)
            .zip(state.chunks_exact(3))
            .map(|(f, x)| perpendicular_norm([f[0], f[1], f[2]], std::array::from_fn(|k| x[k] - self.eye[k])))
            .collect()
    }
}

impl Op for ForceRegularization {
    fn name(&self) -> &'static str {
        "force-regularization"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(vec![self.terms(inputs[0], inputs[1])?.iter().map(|t| t.0).sum()])
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        let terms = self.terms(ctx.inputs[0], ctx.inputs[1])?;
        let mut gs = vec![0.0; ctx.inputs[0].len()];
        let mut gf = vec![0.0; ctx.inputs[1].len()];
        for (i, (_, a, b)) in terms.iter().enumerate() {
            for k in 0..3 {
                gf[3 * i + k] = grad[0] * a[k];
                gs[3 * i + k] = grad[0] * b[k];
            }
        }
        Ok(vec![Some(gs), Some(gf)])
    }
}

/// Finite-difference smoothness of a texture.
pub struct TextureSmoothness {
    width: usize,
    height: usize,
    channels: usize,
}

impl TextureSmoothness {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels }
    }

    fn texture(&self, texels: &[f64]) -> Result<Texture> {
        Texture::new(self.width, self.height, self.channels, texels.to_vec())
    }
}

impl Op for TextureSmoothness {
    fn name(&self) -> &'static str {
        "texture-smoothness"
    }
    fn forward(&mut self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(vec![texture_smoothness(&self.texture(inputs[0])?).0])
    }
    fn backward(&self, ctx: &OpContext<'_>, grad: &[f64]) -> Grads {
        let (_, g) = texture_smoothness(&self.texture(ctx.inputs[0])?);
        Ok(vec![Some(g.into_iter().map(|v| v * grad[0]).collect())])
    }
}
