//! Browser demo: generate a synthetic cloth scene, reconstruct it epoch by
//! epoch and compare the reconstruction with the ground truth.

use clothsft::geometry::Vec3;
use clothsft::objective::LossWeights;
use clothsft::optimizer::{run_texture_phase, sft_epoch, Ablation, ParamSpec, Schedule, SftState};
use clothsft::physics::simulate;
use clothsft::pipeline::Problem;
use clothsft::render::{rasterize, Texture};
use clothsft::scene::{evaluate, generate, summarize, GroundTruth, Scene, SceneConfig};
use wasm_bindgen::prelude::*;

fn js_error(e: clothsft::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A scene together with a reconstruction in progress.
#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    truth: GroundTruth,
    problem: Problem,
    texture: Texture,
    spec: ParamSpec,
    schedule: Schedule,
    weights: LossWeights,
    state: SftState,
    trajectory: Vec<Vec<Vec3>>,
    loss: f64,
}

#[wasm_bindgen]
impl Demo {
    /// Generates a small scene from a preset and fits the texture to its first frame.
    /// `ablation` is one of full, no-sil, no-reg-force, no-reg-energy, no-both.
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, wind_strength: f64, ablation: &str, seed: u64) -> Result<Demo, JsError> {
        let mut config = SceneConfig::preset(preset).map_err(js_error)?;
        config.rows = 7;
        config.cols = 7;
        config.n_frames = 12;
        config.width = 96;
        config.height = 96;
        config.focal = 144.0;
        config.points_per_frame = 500;
        config.wind.strength = wind_strength;
        config.seed = seed;
        let (scene, truth) = generate(&config).map_err(js_error)?;
        let problem = scene.problem().map_err(js_error)?;
        let spec = ParamSpec { dt: scene.frame_interval / ParamSpec::default().substeps_per_frame as f64, ..ParamSpec::default() };
        let schedule = Schedule::default();
        let weights = Ablation::parse(ablation).map_err(js_error)?.weights(&LossWeights::default());
        let texture = run_texture_phase(&problem, &spec, &schedule, &weights, |_| {}).map_err(js_error)?.texture;
        let state = SftState::new(&spec, problem.n_frames(), problem.model.num_vertices());
        let mut demo = Demo { scene, truth, problem, texture, spec, schedule, weights, state, trajectory: Vec::new(), loss: f64::NAN };
        demo.resimulate()?;
        Ok(demo)
    }

    fn resimulate(&mut self) -> Result<(), JsError> {
        let params = self.state.full_params();
        let states = simulate(&self.problem.model, &params, &self.problem.initial_state(), self.problem.n_frames() - 1)
            .map_err(js_error)?;
        self.trajectory = states.into_iter().map(|s| s.positions).collect();
        Ok(())
    }

    /// Runs up to `count` reconstruction epochs and returns the last loss.
    pub fn step(&mut self, count: usize) -> Result<f64, JsError> {
        let total = self.total_epochs();
        for _ in 0..count {
            if self.state.epoch >= total {
                break;
            }
            let log = sft_epoch(&self.problem, &self.texture, &self.weights, &self.schedule, self.spec.clip_norm, &mut self.state)
                .map_err(js_error)?;
            self.loss = log.loss;
        }
        self.resimulate()?;
        Ok(self.loss)
    }

    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.total_epochs(self.problem.n_frames())
    }

    pub fn active_frames(&self) -> usize {
        self.schedule.active_frames(self.state.epoch, self.problem.n_frames())
    }

    pub fn frames(&self) -> usize {
        self.problem.n_frames()
    }

    pub fn width(&self) -> usize {
        self.scene.camera.width
    }

    pub fn height(&self) -> usize {
        self.scene.camera.height
    }

    /// Current log10 stretch, bend and shear stiffness, followed by the ground truth.
    pub fn stiffness(&self) -> Vec<f64> {
        let (p, t) = (&self.state.params, &self.truth.params);
        vec![p.log10_stretch, p.log10_bend, p.log10_shear, t.log10_stretch, t.log10_bend, t.log10_shear]
    }

    /// Target image of a frame as RGBA bytes.
    pub fn target_image(&self, frame: usize) -> Vec<u8> {
        rgba(&self.scene.rgb[frame], &self.scene.mask[frame])
    }

    /// Current reconstruction of a frame rendered with the fitted texture, as RGBA bytes.
    pub fn reconstruction_image(&self, frame: usize) -> Vec<u8> {
        let out = rasterize(&self.trajectory[frame], &self.problem.surface, &self.texture, &self.scene.camera);
        rgba(&out.rgb, &out.mask)
    }

    /// Chamfer-L2, point-to-surface-L2 and depth error of the current reconstruction.
    pub fn metrics(&self) -> Result<Vec<f64>, JsError> {
        let frames = evaluate(&self.scene, &self.truth, &self.trajectory).map_err(js_error)?;
        let m = summarize(&frames).map_err(js_error)?;
        Ok(vec![m.cd2, m.p2s2, m.depth.unwrap_or(f64::NAN)])
    }
}

/// Composites RGB over a dark background using the coverage mask.
fn rgba(rgb: &[f64], mask: &[f64]) -> Vec<u8> {
    const BACKGROUND: f64 = 0.12;
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    rgb.chunks_exact(3)
        .zip(mask)
        .flat_map(|(c, &m)| [byte(c[0] + (1.0 - m) * BACKGROUND), byte(c[1] + (1.0 - m) * BACKGROUND), byte(c[2] + (1.0 - m) * BACKGROUND), 255])
        .collect()
}
