//! Synthetic scene generation and on-disk scene and result formats.

mod array;
mod eval;
mod image;
mod store;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use eval::{evaluate, summarize, FrameMetrics, SceneMetrics};
pub use array::{read_array, write_array, Array, ARRAY_MAGIC};
pub use image::{read_png, write_png, Pixels};
pub use store::{
    read_checkpoint, read_ground_truth, read_result, read_scene, write_checkpoint, write_epoch_log, write_ground_truth,
    write_result, write_scene, write_texture_log, Checkpoint, ResultDir, ResultMeta, SCHEMA_VERSION,
};

use crate::error::{Error, Result};
use crate::geometry::{build_template, top_row, ClothMesh, Vec3, DEFAULT_DENSITY};
use crate::metrics::{sample_surface, PointCloud};
use crate::physics::{simulate, ClothModel, SimParams};
use crate::pipeline::Problem;
use crate::render::{rasterize, Camera, Surface, Texture};

/// Frame interval of the captured videos in seconds.
pub const DEFAULT_FRAME_INTERVAL: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pinning {
    TopRow,
    TopCorners,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum WindDirection {
    /// Fixed world-space direction.
    Fixed { direction: Vec3 },
    /// Along the viewing direction, away from the camera.
    CameraAxis,
}

/// Per-unit-mass wind: a global direction and strength modulated by smooth
/// temporal value noise, plus optional independent per-vertex jitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindConfig {
    pub direction: WindDirection,
    /// Mean acceleration in m/s².
    pub strength: f64,
    /// Relative amplitude of the strength noise.
    pub strength_noise: f64,
    /// Amplitude of the direction noise (added before normalization).
    pub direction_noise: f64,
    /// Frames between noise lattice points.
    pub noise_period: f64,
    /// Per-vertex uniform jitter amplitude in m/s².
    pub jitter: f64,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self {
            direction: WindDirection::Fixed { direction: [1.0, 0.0, 0.6] },
            strength: 4.0,
            strength_noise: 0.5,
            direction_noise: 0.3,
            noise_period: 6.0,
            jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TextureSource {
    /// Colored checkerboard with `cells × cells` squares.
    Checker { cells: usize, size: usize },
    /// RGB or grayscale PNG file.
    Image { path: std::path::PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub rows: usize,
    pub cols: usize,
    /// Side length of the square cloth in meters.
    pub size: f64,
    pub pinning: Pinning,
    pub density: f64,
    pub log10_stretch: f64,
    pub log10_bend: f64,
    pub log10_shear: f64,
    /// Constant per-unit-mass force (gravity).
    pub constant_force: Vec3,
    pub wind: WindConfig,
    pub texture: TextureSource,
    pub n_frames: usize,
    pub frame_interval: f64,
    pub substeps_per_frame: usize,
    pub damping: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub camera_distance: f64,
    pub points_per_frame: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rows: 25,
            cols: 25,
            size: 0.4,
            pinning: Pinning::TopRow,
            density: DEFAULT_DENSITY,
            log10_stretch: 2.0,
            log10_bend: -3.0,
            log10_shear: -4.0,
            constant_force: [0.0, -9.81, 0.0],
            wind: WindConfig::default(),
            texture: TextureSource::Checker { cells: 8, size: 64 },
            n_frames: 30,
            frame_interval: DEFAULT_FRAME_INTERVAL,
            substeps_per_frame: 4,
            damping: crate::physics::DEFAULT_DAMPING,
            width: 256,
            height: 256,
            focal: 384.0,
            camera_distance: 1.0,
            points_per_frame: 2000,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Wind blowing approximately along the viewing direction.
    pub fn camera_axis() -> Self {
        Self {
            wind: WindConfig { direction: WindDirection::CameraAxis, strength: 6.0, direction_noise: 0.1, ..WindConfig::default() },
            ..Self::default()
        }
    }

    /// Cloth held by two corners under gusty oblique wind, which folds it strongly.
    pub fn crumple() -> Self {
        Self {
            pinning: Pinning::TopCorners,
            wind: WindConfig {
                direction: WindDirection::Fixed { direction: [1.0, 0.3, 1.0] },
                strength: 8.0,
                strength_noise: 0.8,
                direction_noise: 0.6,
                noise_period: 4.0,
                jitter: 2.0,
            },
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "camera-axis" => Ok(Self::camera_axis()),
            "crumple" => Ok(Self::crumple()),
            _ => Err(Error::InvalidParameter(format!("unknown scene preset '{name}'"))),
        }
    }

    pub fn dt(&self) -> f64 {
        self.frame_interval / self.substeps_per_frame as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.size, self.density, self.frame_interval, self.focal, self.camera_distance];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("size, density, frame interval, focal and distance must be positive".into()));
        }
        if self.n_frames < 2 || self.substeps_per_frame == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("need at least two frames, one substep and a non-empty image".into()));
        }
        if self.points_per_frame == 0 {
            return Err(Error::InvalidParameter("points_per_frame must be positive".into()));
        }
        if let TextureSource::Checker { cells, size } = self.texture {
            if cells == 0 || size == 0 {
                return Err(Error::InvalidParameter("checker texture needs positive cells and size".into()));
            }
        }
        let w = &self.wind;
        if ![w.strength, w.strength_noise, w.direction_noise, w.jitter].iter().all(|v| v.is_finite()) || !(w.noise_period > 0.0) {
            return Err(Error::InvalidParameter("wind parameters must be finite with a positive noise period".into()));
        }
        if let WindDirection::Fixed { direction } = w.direction {
            if direction.iter().all(|&c| c == 0.0) {
                return Err(Error::InvalidParameter("wind direction must be nonzero".into()));
            }
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        self.size / (self.cols.max(self.rows) - 1) as f64
    }

    pub fn template(&self) -> Result<ClothMesh> {
        let pinned = match self.pinning {
            Pinning::TopRow => top_row(self.cols),
            Pinning::TopCorners => vec![0, self.cols.saturating_sub(1)],
        };
        build_template(self.rows, self.cols, self.spacing(), &pinned)?.with_masses(self.density)
    }

    /// Camera on the +z side of the cloth looking at its center.
    pub fn camera(&self) -> Result<Camera> {
        let s = self.spacing();
        let center = [0.5 * s * (self.cols - 1) as f64, -0.5 * s * (self.rows - 1) as f64, 0.0];
        let eye = [center[0], center[1], self.camera_distance];
        Camera::look_at(eye, center, [0.0, 1.0, 0.0], self.focal, self.width, self.height)
    }
}

/// Colored checkerboard texture.
pub fn checker_texture(cells: usize, size: usize) -> Texture {
    const PALETTE: [[f64; 3]; 6] =
        [[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.2, 0.3, 0.9], [0.95, 0.85, 0.2], [0.85, 0.3, 0.85], [0.2, 0.85, 0.85]];
    let mut texels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (cx, cy) = (x * cells / size, y * cells / size);
            let color = if (cx + cy) % 2 == 0 { [0.95, 0.95, 0.95] } else { PALETTE[(cx + 2 * cy) % PALETTE.len()] };
            texels.extend_from_slice(&color);
        }
    }
    Texture { width: size, height: size, channels: 3, texels }
}

/// Smoothly interpolated random lattice values in `[-1, 1]`.
struct ValueNoise {
    knots: Vec<f64>,
    period: f64,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, n_frames: usize, period: f64) -> Self {
        let n = (n_frames as f64 / period).ceil() as usize + 2;
        Self { knots: (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect(), period }
    }

    fn at(&self, frame: usize) -> f64 {
        let t = frame as f64 / self.period;
        let k = t.floor() as usize;
        let f = t - k as f64;
        let s = f * f * (3.0 - 2.0 * f);
        self.knots[k] + s * (self.knots[k + 1] - self.knots[k])
    }
}

/// Per-unit-mass wind for every force slice, laid out like `SimParams::dynamic_forces`.
pub fn wind_forces(config: &SceneConfig, camera: &Camera, n_vertices: usize) -> Vec<f64> {
    let w = &config.wind;
    let slices = config.n_frames - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let strength = ValueNoise::new(&mut rng, slices, w.noise_period);
    let dir_noise: [ValueNoise; 3] = std::array::from_fn(|_| ValueNoise::new(&mut rng, slices, w.noise_period));
    let base = match w.direction {
        WindDirection::Fixed { direction } => direction,
        WindDirection::CameraAxis => camera.rotation[2],
    };
    let norm = |v: Vec3| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|c| c / n)
    };
    let base = norm(base);
    let mut forces = Vec::with_capacity(slices * n_vertices * 3);
    for n in 0..slices {
        let dir = norm(std::array::from_fn(|k| base[k] + w.direction_noise * dir_noise[k].at(n)));
        let s = w.strength * (1.0 + w.strength_noise * strength.at(n));
        for _ in 0..n_vertices {
            for d in dir {
                let jitter = if w.jitter > 0.0 { w.jitter * rng.gen_range(-1.0..=1.0) } else { 0.0 };
                forces.push(s * d + jitter);
            }
        }
    }
    forces
}

/// Quantizes to 8 bits the way targets are stored on disk.
pub fn quantize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect()
}

/// Reconstruction inputs: template, camera and per-frame targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub template: ClothMesh,
    pub camera: Camera,
    pub frame_interval: f64,
    /// Per frame, row-major RGB in `[0, 1]`.
    pub rgb: Vec<Vec<f64>>,
    pub mask: Vec<Vec<f64>>,
    /// Seed used to sample ground-truth point clouds, so evaluation can
    /// sample reconstructions the same way.
    pub sample_seed: u64,
    pub generator: Option<SceneConfig>,
}

impl Scene {
    pub fn n_frames(&self) -> usize {
        self.rgb.len()
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(
            ClothModel::new(&self.template)?,
            Surface::from_mesh(&self.template),
            self.camera.clone(),
            self.rgb.clone(),
            self.mask.clone(),
        )
    }

    /// Keeps only the first `n` frames.
    pub fn truncate(&mut self, n: usize) {
        self.rgb.truncate(n);
        self.mask.truncate(n);
    }
}

/// Data only evaluation may read.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub params: SimParams,
    pub trajectory: Vec<Vec<Vec3>>,
    pub points: Vec<PointCloud>,
    pub depth: Vec<Vec<f64>>,
    pub texture: Texture,
}

/// Seed of the point sample of one frame.
pub fn frame_seed(sample_seed: u64, frame: usize) -> u64 {
    sample_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(frame as u64)
}

pub fn load_texture(source: &TextureSource) -> Result<Texture> {
    match source {
        TextureSource::Checker { cells, size } => Ok(checker_texture(*cells, *size)),
        TextureSource::Image { path } => read_png(path)?.to_texture(),
    }
}

/// Forward-simulates the configured cloth and renders every frame.
pub fn generate(config: &SceneConfig) -> Result<(Scene, GroundTruth)> {
    config.validate()?;
    let template = config.template()?;
    let camera = config.camera()?;
    let texture = load_texture(&config.texture)?;
    let model = ClothModel::new(&template)?;
    let nv = model.num_vertices();
    let params = SimParams {
        log10_stretch: config.log10_stretch,
        log10_bend: config.log10_bend,
        log10_shear: config.log10_shear,
        constant_force: config.constant_force,
        dynamic_forces: wind_forces(config, &camera, nv),
        damping: config.damping,
        dt: config.dt(),
        substeps_per_frame: config.substeps_per_frame,
    };
    params.validate()?;
    let states = simulate(&model, &params, &model.rest_state(), config.n_frames - 1)?;
    let surface = Surface::from_mesh(&template);
    let triangles = template.triangles();
    let sample_seed = config.seed ^ 0x5A5A_0F0F;
    let (mut rgb, mut mask, mut depth, mut points, mut trajectory) = (vec![], vec![], vec![], vec![], vec![]);
    for (f, s) in states.iter().enumerate() {
        let out = rasterize(&s.positions, &surface, &texture, &camera);
        rgb.push(quantize(&out.rgb));
        mask.push(quantize(&out.mask));
        depth.push(out.depth);
        points.push(sample_surface(&s.positions, &triangles, config.points_per_frame, frame_seed(sample_seed, f))?);
        trajectory.push(s.positions.clone());
    }
    let scene = Scene {
        template,
        camera,
        frame_interval: config.frame_interval,
        rgb,
        mask,
        sample_seed,
        generator: Some(config.clone()),
    };
    Ok((scene, GroundTruth { params, trajectory, points, depth, texture }))
}
