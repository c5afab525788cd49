//! Texture-mapping and reconstruction phases.

mod adam;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, BETA1, BETA2, EPSILON};

use crate::error::{Error, Result};
use crate::gradient::{clip_to_norm, AutoClipper, AUTO_CLIP_PERCENTILE, FIXED_CLIP_NORM};
use crate::objective::{LossTerms, LossWeights};
use crate::physics::{
    simulate, ClothState, SimParams, DEFAULT_DAMPING, DEFAULT_DT, DEFAULT_SUBSTEPS, LOG10_BEND_RANGE, LOG10_SHEAR_RANGE,
    LOG10_STRETCH_RANGE,
};
use crate::pipeline::{build_sft_graph, build_texture_graph, Problem};
use crate::render::Texture;

/// Initial values and learning rates of every optimized quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamSpec {
    pub log10_stretch: f64,
    pub log10_bend: f64,
    pub log10_shear: f64,
    pub constant_force: [f64; 3],
    pub texture_init: f64,
    pub texture_width: usize,
    pub texture_height: usize,
    pub lr_stiffness: f64,
    pub lr_constant_force: f64,
    pub lr_dynamic_forces: f64,
    pub lr_texture: f64,
    pub damping: f64,
    pub dt: f64,
    pub substeps_per_frame: usize,
    pub clip_norm: f64,
    pub clip_percentile: f64,
}

impl Default for ParamSpec {
    fn default() -> Self {
        Self {
            log10_stretch: 200f64.log10(),
            log10_bend: -3.0,
            log10_shear: -4.0,
            constant_force: [0.0, -1.0, 0.0],
            texture_init: 0.5,
            texture_width: 64,
            texture_height: 64,
            lr_stiffness: 0.02,
            lr_constant_force: 0.1,
            lr_dynamic_forces: 0.2,
            lr_texture: 0.05,
            damping: DEFAULT_DAMPING,
            dt: DEFAULT_DT,
            substeps_per_frame: DEFAULT_SUBSTEPS,
            clip_norm: FIXED_CLIP_NORM,
            clip_percentile: AUTO_CLIP_PERCENTILE,
        }
    }
}

impl ParamSpec {
    pub fn initial_params(&self, n_frames: usize, n_vertices: usize) -> SimParams {
        SimParams {
            log10_stretch: self.log10_stretch,
            log10_bend: self.log10_bend,
            log10_shear: self.log10_shear,
            constant_force: self.constant_force,
            dynamic_forces: vec![0.0; n_frames.saturating_sub(1) * n_vertices * 3],
            damping: self.damping,
            dt: self.dt,
            substeps_per_frame: self.substeps_per_frame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_stiffness, self.lr_constant_force, self.lr_dynamic_forces, self.lr_texture];
        if lrs.iter().any(|lr| !(*lr >= 0.0) || !lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rates must be nonnegative, got {lrs:?}")));
        }
        if self.texture_width == 0 || self.texture_height == 0 || !(0.0..=1.0).contains(&self.texture_init) {
            return Err(Error::InvalidParameter("texture needs a positive size and an init value in [0, 1]".into()));
        }
        if !(self.clip_norm > 0.0) || !(0.0..=100.0).contains(&self.clip_percentile) {
            return Err(Error::InvalidParameter("clip norm must be positive and the percentile in [0, 100]".into()));
        }
        self.initial_params(0, 0).validate()
    }

    pub fn initial_texture(&self) -> Texture {
        Texture::constant(self.texture_width, self.texture_height, 3, self.texture_init)
    }
}

/// Progressive frame schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub initial_frames: usize,
    pub frames_added_every: usize,
    pub epochs_after_last_frame: usize,
    pub texture_phase_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { initial_frames: 3, frames_added_every: 5, epochs_after_last_frame: 200, texture_phase_epochs: 300 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.initial_frames == 0 || self.frames_added_every == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one initial frame and a positive step".into()));
        }
        Ok(())
    }

    pub fn active_frames(&self, epoch: usize, n_frames: usize) -> usize {
        (self.initial_frames + epoch / self.frames_added_every).min(n_frames)
    }

    pub fn total_epochs(&self, n_frames: usize) -> usize {
        self.frames_added_every * n_frames.saturating_sub(self.initial_frames) + self.epochs_after_last_frame
    }
}

/// Gradient norms of one epoch before clipping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub stiffness: f64,
    pub constant_force: f64,
    pub dynamic_forces: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub active_frames: usize,
    pub loss: f64,
    pub terms: LossTerms,
    pub log10_stretch: f64,
    pub log10_bend: f64,
    pub log10_shear: f64,
    pub constant_force: [f64; 3],
    pub grad_norms: GradNorms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureLog {
    pub epoch: usize,
    pub loss: f64,
    pub image: f64,
    pub smoothness: f64,
    pub grad_norm: f64,
}

/// Complete optimizer state of the reconstruction phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftState {
    pub epoch: usize,
    pub params: SimParams,
    pub dynamic_forces: Vec<f64>,
    pub adam: [Adam; 3],
    pub clippers: [AutoClipper; 3],
}

#[derive(Clone, Debug)]
pub struct SftResult {
    pub params: SimParams,
    /// All frames simulated with the final parameters.
    pub trajectory: Vec<ClothState>,
    pub log: Vec<EpochLog>,
}

#[derive(Clone, Debug)]
pub struct TextureResult {
    pub texture: Texture,
    pub log: Vec<TextureLog>,
}

/// Consecutive loss increases after which the texture phase gives up.
pub const DIVERGENCE_PATIENCE: usize = 50;

fn clip(grad: &mut [f64], clipper: &mut AutoClipper, max_norm: f64) -> f64 {
    let norm = clip_to_norm(grad, max_norm);
    clipper.clip(grad);
    norm
}

/// Fits the texture so the template rendering matches frame 0.
pub fn run_texture_phase(
    problem: &Problem,
    spec: &ParamSpec,
    schedule: &Schedule,
    weights: &LossWeights,
    mut on_epoch: impl FnMut(&TextureLog),
) -> Result<TextureResult> {
    spec.validate()?;
    weights.validate()?;
    let mut texture = spec.initial_texture();
    let mut adam = Adam::new(spec.lr_texture, texture.texels.len());
    let mut clipper = AutoClipper::new(spec.clip_percentile);
    let mut log = Vec::with_capacity(schedule.texture_phase_epochs);
    let mut previous = f64::INFINITY;
    let mut increases = 0;
    for epoch in 0..schedule.texture_phase_epochs {
        let graph = build_texture_graph(problem, &texture, weights)?;
        let loss = graph.tape.scalar(graph.loss);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("texture epoch {epoch}: loss {loss}")));
        }
        increases = if loss > previous { increases + 1 } else { 0 };
        if increases >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged(format!(
                "texture loss increased for {DIVERGENCE_PATIENCE} consecutive epochs (epoch {epoch}, loss {loss:e})"
            )));
        }
        previous = loss;
        let mut grad = graph.gradient()?;
        let grad_norm = clip(&mut grad, &mut clipper, spec.clip_norm);
        adam.step(&mut texture.texels, &grad);
        texture.clamp_unit();
        let entry = TextureLog {
            epoch,
            loss,
            image: graph.tape.scalar(graph.image),
            smoothness: graph.tape.scalar(graph.smoothness),
            grad_norm,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TextureResult { texture, log })
}

/// Clamps log-stiffnesses into their boxes.
pub fn project(params: &mut SimParams) {
    params.log10_stretch = params.log10_stretch.clamp(LOG10_STRETCH_RANGE.0, LOG10_STRETCH_RANGE.1);
    params.log10_bend = params.log10_bend.clamp(LOG10_BEND_RANGE.0, LOG10_BEND_RANGE.1);
    params.log10_shear = params.log10_shear.clamp(LOG10_SHEAR_RANGE.0, LOG10_SHEAR_RANGE.1);
}

impl SftState {
    pub fn new(spec: &ParamSpec, n_frames: usize, n_vertices: usize) -> Self {
        let params = spec.initial_params(n_frames, n_vertices);
        let nd = params.dynamic_forces.len();
        Self {
            epoch: 0,
            dynamic_forces: params.dynamic_forces.clone(),
            params,
            adam: [Adam::new(spec.lr_stiffness, 3), Adam::new(spec.lr_constant_force, 3), Adam::new(spec.lr_dynamic_forces, nd)],
            clippers: [
                AutoClipper::new(spec.clip_percentile),
                AutoClipper::new(spec.clip_percentile),
                AutoClipper::new(spec.clip_percentile),
            ],
        }
    }

    /// Parameters including the dynamic forces.
    pub fn full_params(&self) -> SimParams {
        let mut p = self.params.clone();
        p.dynamic_forces = self.dynamic_forces.clone();
        p
    }
}

/// Runs one reconstruction epoch in place and returns its log entry.
pub fn sft_epoch(
    problem: &Problem,
    texture: &Texture,
    weights: &LossWeights,
    schedule: &Schedule,
    clip_norm: f64,
    state: &mut SftState,
) -> Result<EpochLog> {
    let epoch = state.epoch;
    let active = schedule.active_frames(epoch, problem.n_frames());
    let params = state.full_params();
    let context = |e: Error| Error::Diverged(format!("epoch {epoch} ({active} active frames): {e}"));
    let graph = build_sft_graph(problem, &params, texture, weights, active).map_err(context)?;
    let loss = graph.loss_value();
    if !loss.is_finite() {
        return Err(context(Error::NonFinite(format!("loss {loss}"))));
    }
    let g = graph.gradients(params.dynamic_forces.len()).map_err(context)?;
    let mut gk = g.log_stiffness.to_vec();
    let mut gc = g.constant_force.to_vec();
    let mut gd = g.dynamic_forces;
    let grad_norms = GradNorms {
        stiffness: clip(&mut gk, &mut state.clippers[0], clip_norm),
        constant_force: clip(&mut gc, &mut state.clippers[1], clip_norm),
        dynamic_forces: clip(&mut gd, &mut state.clippers[2], clip_norm),
    };
    let mut k = [state.params.log10_stretch, state.params.log10_bend, state.params.log10_shear];
    state.adam[0].step(&mut k, &gk);
    [state.params.log10_stretch, state.params.log10_bend, state.params.log10_shear] = k;
    state.adam[1].step(&mut state.params.constant_force, &gc);
    state.adam[2].step(&mut state.dynamic_forces, &gd);
    project(&mut state.params);
    state.epoch += 1;
    Ok(EpochLog {
        epoch,
        active_frames: active,
        loss,
        terms: graph.terms(),
        log10_stretch: params.log10_stretch,
        log10_bend: params.log10_bend,
        log10_shear: params.log10_shear,
        constant_force: params.constant_force,
        grad_norms,
    })
}

/// Progressive reconstruction of stiffness and forces with the texture fixed.
/// `on_epoch` sees each log entry together with the state after the update.
pub fn run_sft_phase(
    problem: &Problem,
    texture: &Texture,
    spec: &ParamSpec,
    schedule: &Schedule,
    weights: &LossWeights,
    mut on_epoch: impl FnMut(&EpochLog, &SftState) -> Result<()>,
) -> Result<SftResult> {
    spec.validate()?;
    schedule.validate()?;
    weights.validate()?;
    let n_frames = problem.n_frames();
    let mut state = SftState::new(spec, n_frames, problem.model.num_vertices());
    let mut log = Vec::new();
    for _ in 0..schedule.total_epochs(n_frames) {
        let entry = sft_epoch(problem, texture, weights, schedule, spec.clip_norm, &mut state)?;
        on_epoch(&entry, &state)?;
        log.push(entry);
    }
    finish(problem, state, log)
}

/// Continues a run from a saved state.
pub fn resume_sft_phase(
    problem: &Problem,
    texture: &Texture,
    spec: &ParamSpec,
    schedule: &Schedule,
    weights: &LossWeights,
    mut state: SftState,
    mut on_epoch: impl FnMut(&EpochLog, &SftState) -> Result<()>,
) -> Result<SftResult> {
    let mut log = Vec::new();
    while state.epoch < schedule.total_epochs(problem.n_frames()) {
        let entry = sft_epoch(problem, texture, weights, schedule, spec.clip_norm, &mut state)?;
        on_epoch(&entry, &state)?;
        log.push(entry);
    }
    finish(problem, state, log)
}

fn finish(problem: &Problem, state: SftState, log: Vec<EpochLog>) -> Result<SftResult> {
    let params = state.full_params();
    let trajectory = simulate(&problem.model, &params, &problem.initial_state(), problem.n_frames() - 1)?;
    Ok(SftResult { params, trajectory, log })
}

/// Loss configurations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    NoSilhouette,
    NoForceReg,
    NoEnergyReg,
    NoBoth,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Full, Ablation::NoSilhouette, Ablation::NoForceReg, Ablation::NoEnergyReg, Ablation::NoBoth];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSilhouette => "no-sil",
            Ablation::NoForceReg => "no-reg-force",
            Ablation::NoEnergyReg => "no-reg-energy",
            Ablation::NoBoth => "no-both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown ablation '{s}'")))
    }

    pub fn weights(self, base: &LossWeights) -> LossWeights {
        let mut w = *base;
        match self {
            Ablation::Full => {}
            Ablation::NoSilhouette => w.silhouette = 0.0,
            Ablation::NoForceReg => w.force = 0.0,
            Ablation::NoEnergyReg => w.energy = 0.0,
            Ablation::NoBoth => {
                w.force = 0.0;
                w.energy = 0.0;
            }
        }
        w
    }
}

/// Runs the reconstruction once per configuration.
pub fn ablate(
    problem: &Problem,
    texture: &Texture,
    spec: &ParamSpec,
    schedule: &Schedule,
    base: &LossWeights,
    configs: &[Ablation],
) -> Result<Vec<(Ablation, LossWeights, SftResult)>> {
    configs
        .iter()
        .map(|&a| {
            let w = a.weights(base);
            run_sft_phase(problem, texture, spec, schedule, &w, |_, _| Ok(())).map(|r| (a, w, r))
        })
        .collect()
}
