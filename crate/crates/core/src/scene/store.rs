use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::array::{read_array, write_array, Array};
use super::image::{read_png, write_png, Pixels};
use super::{GroundTruth, Scene, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::{ClothMesh, Vec3};
use crate::metrics::PointCloud;
use crate::objective::LossWeights;
use crate::optimizer::{EpochLog, ParamSpec, Schedule, SftState, TextureLog};
use crate::physics::SimParams;
use crate::render::{Camera, Texture};

pub const SCHEMA_VERSION: u32 = 1;

const TEMPLATE: &str = "template.mesh";
const FRAMES: &str = "frames";
const GROUND_TRUTH: &str = "ground_truth";

#[derive(Serialize, Deserialize)]
struct SceneManifest {
    schema_version: u32,
    kind: String,
    n_frames: usize,
    frame_interval: f64,
    sample_seed: u64,
    template: String,
    camera: Camera,
    generator: Option<SceneConfig>,
}

#[derive(Serialize, Deserialize)]
struct TruthManifest {
    schema_version: u32,
    kind: String,
    params: SimParams,
}

/// Metadata of a reconstruction result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub schema_version: u32,
    pub kind: String,
    pub ablation: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub params: SimParams,
    pub weights: LossWeights,
    pub spec: ParamSpec,
    pub schedule: Schedule,
}

/// Everything `reconstruct` writes besides checkpoints.
#[derive(Clone, Debug)]
pub struct ResultDir {
    pub meta: ResultMeta,
    pub dynamic_forces: Vec<f64>,
    pub trajectory: Vec<Vec<Vec3>>,
    pub texture: Texture,
    pub log: Vec<EpochLog>,
    pub texture_log: Vec<TextureLog>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::schema(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::schema(path, e.message().to_string()))
}

fn check_header(path: &Path, version: u32, kind: &str, expected: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::schema(path, format!("schema_version {version}, expected {SCHEMA_VERSION}")));
    }
    if kind != expected {
        return Err(Error::schema(path, format!("kind '{kind}', expected '{expected}'")));
    }
    Ok(())
}

fn frame_path(dir: &Path, what: &str, frame: usize) -> PathBuf {
    dir.join(FRAMES).join(format!("{what}_{frame:04}.png"))
}

fn texture_array(t: &Texture) -> Array {
    Array { shape: vec![t.height, t.width, t.channels], data: t.texels.clone() }
}

fn array_texture(path: &Path, a: Array) -> Result<Texture> {
    match a.shape[..] {
        [h, w, c] => Texture::new(w, h, c, a.data),
        _ => Err(Error::schema(path, format!("texture must be h x w x c, got {:?}", a.shape))),
    }
}

/// Writes the reconstruction inputs: manifest, template and frame images.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    create_dir(&dir.join(FRAMES))?;
    let manifest = SceneManifest {
        schema_version: SCHEMA_VERSION,
        kind: "scene".into(),
        n_frames: scene.n_frames(),
        frame_interval: scene.frame_interval,
        sample_seed: scene.sample_seed,
        template: TEMPLATE.into(),
        camera: scene.camera.clone(),
        generator: scene.generator.clone(),
    };
    write_toml(&dir.join("scene.toml"), &manifest)?;
    scene.template.save(&dir.join(TEMPLATE))?;
    let (w, h) = (scene.camera.width, scene.camera.height);
    for (f, (rgb, mask)) in scene.rgb.iter().zip(&scene.mask).enumerate() {
        write_png(&frame_path(dir, "rgb", f), &Pixels::from_unit(w, h, 3, rgb)?)?;
        write_png(&frame_path(dir, "mask", f), &Pixels::from_unit(w, h, 1, mask)?)?;
    }
    Ok(())
}

pub fn read_scene(dir: &Path) -> Result<Scene> {
    let path = dir.join("scene.toml");
    let m: SceneManifest = read_toml(&path)?;
    check_header(&path, m.schema_version, &m.kind, "scene")?;
    m.camera.validate()?;
    let template = ClothMesh::load(&dir.join(&m.template))?;
    if template.masses.is_empty() {
        return Err(Error::schema(dir.join(&m.template), "template has no masses"));
    }
    let (mut rgb, mut mask) = (Vec::new(), Vec::new());
    for f in 0..m.n_frames {
        for (what, channels, out) in [("rgb", 3, &mut rgb), ("mask", 1, &mut mask)] {
            let p = frame_path(dir, what, f);
            let img = read_png(&p)?;
            if (img.width, img.height, img.channels) != (m.camera.width, m.camera.height, channels) {
                return Err(Error::schema(&p, format!("expected {}x{}x{channels}", m.camera.width, m.camera.height)));
            }
            out.push(img.to_unit());
        }
    }
    Ok(Scene {
        template,
        camera: m.camera,
        frame_interval: m.frame_interval,
        rgb,
        mask,
        sample_seed: m.sample_seed,
        generator: m.generator,
    })
}

/// Writes evaluation-only data under `ground_truth/`.
pub fn write_ground_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    let gt = dir.join(GROUND_TRUTH);
    create_dir(&gt)?;
    let manifest = TruthManifest { schema_version: SCHEMA_VERSION, kind: "ground-truth".into(), params: truth.params.clone() };
    write_toml(&gt.join("params.toml"), &manifest)?;
    let n = truth.trajectory.len();
    let nv = truth.trajectory.first().map_or(0, Vec::len);
    write_array(&gt.join("forces.arr"), &Array::new(vec![n.saturating_sub(1), nv, 3], truth.params.dynamic_forces.clone())?)?;
    write_array(&gt.join("trajectory.arr"), &Array::from_vec3s(&truth.trajectory)?)?;
    let points: Vec<Vec<Vec3>> = truth.points.iter().map(|p| p.points.clone()).collect();
    write_array(&gt.join("points.arr"), &Array::from_vec3s(&points)?)?;
    let np = truth.depth.first().map_or(0, Vec::len);
    write_array(&gt.join("depth.arr"), &Array::new(vec![n, np], truth.depth.concat())?)?;
    write_array(&gt.join("texture.arr"), &texture_array(&truth.texture))
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let gt = dir.join(GROUND_TRUTH);
    let path = gt.join("params.toml");
    let m: TruthManifest = read_toml(&path)?;
    check_header(&path, m.schema_version, &m.kind, "ground-truth")?;
    let mut params = m.params;
    params.dynamic_forces = read_array(&gt.join("forces.arr"))?.data;
    let trajectory = read_array(&gt.join("trajectory.arr"))?.to_vec3s()?;
    let points = read_array(&gt.join("points.arr"))?
        .to_vec3s()?
        .into_iter()
        .map(PointCloud::new)
        .collect::<Result<Vec<_>>>()?;
    let depth = read_array(&gt.join("depth.arr"))?.rows();
    let tex_path = gt.join("texture.arr");
    let texture = array_texture(&tex_path, read_array(&tex_path)?)?;
    if points.len() != trajectory.len() || depth.len() != trajectory.len() {
        return Err(Error::schema(&gt, "ground-truth arrays disagree on the frame count"));
    }
    Ok(GroundTruth { params, trajectory, points, depth, texture })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let header = [
        "epoch", "active_frames", "loss", "image", "silhouette", "energy", "force", "log10_stretch", "log10_bend",
        "log10_shear", "c_x", "c_y", "c_z", "grad_norm_stiffness", "grad_norm_constant_force", "grad_norm_dynamic_forces",
    ];
    write_csv(
        path,
        &header,
        log.iter().map(|e| {
            let mut row = vec![e.epoch.to_string(), e.active_frames.to_string()];
            let values = [
                e.loss,
                e.terms.image,
                e.terms.silhouette,
                e.terms.energy,
                e.terms.force,
                e.log10_stretch,
                e.log10_bend,
                e.log10_shear,
                e.constant_force[0],
                e.constant_force[1],
                e.constant_force[2],
                e.grad_norms.stiffness,
                e.grad_norms.constant_force,
                e.grad_norms.dynamic_forces,
            ];
            row.extend(values.iter().map(f64::to_string));
            row
        }),
    )
}

pub fn write_texture_log(path: &Path, log: &[TextureLog]) -> Result<()> {
    write_csv(
        path,
        &["epoch", "loss", "image", "smoothness", "grad_norm"],
        log.iter().map(|e| {
            vec![e.epoch.to_string(), e.loss.to_string(), e.image.to_string(), e.smoothness.to_string(), e.grad_norm.to_string()]
        }),
    )
}

pub fn write_result(dir: &Path, result: &ResultDir) -> Result<()> {
    create_dir(dir)?;
    write_toml(&dir.join("params.toml"), &result.meta)?;
    let n = result.trajectory.len();
    let nv = result.trajectory.first().map_or(0, Vec::len);
    write_array(&dir.join("forces.arr"), &Array::new(vec![n.saturating_sub(1), nv, 3], result.dynamic_forces.clone())?)?;
    write_array(&dir.join("trajectory.arr"), &Array::from_vec3s(&result.trajectory)?)?;
    let t = &result.texture;
    write_array(&dir.join("texture.arr"), &texture_array(t))?;
    write_png(&dir.join("texture.png"), &Pixels::from_unit(t.width, t.height, t.channels, &t.texels)?)?;
    write_epoch_log(&dir.join("log.csv"), &result.log)?;
    write_texture_log(&dir.join("texture_log.csv"), &result.texture_log)
}

/// Reads parameters, forces, trajectory and texture of a result (logs are not parsed).
pub fn read_result(dir: &Path) -> Result<ResultDir> {
    let path = dir.join("params.toml");
    let meta: ResultMeta = read_toml(&path)?;
    check_header(&path, meta.schema_version, &meta.kind, "result")?;
    let tex_path = dir.join("texture.arr");
    Ok(ResultDir {
        dynamic_forces: read_array(&dir.join("forces.arr"))?.data,
        trajectory: read_array(&dir.join("trajectory.arr"))?.to_vec3s()?,
        texture: array_texture(&tex_path, read_array(&tex_path)?)?,
        meta,
        log: Vec::new(),
        texture_log: Vec::new(),
    })
}

/// Optimizer state plus the fixed texture, enough to resume a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub state: SftState,
    pub texture: Texture,
}

pub fn write_checkpoint(path: &Path, state: &SftState, texture: &Texture) -> Result<()> {
    let c = Checkpoint { schema_version: SCHEMA_VERSION, state: state.clone(), texture: texture.clone() };
    let text = serde_json::to_string(&c).map_err(|e| Error::schema(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
    if c.schema_version != SCHEMA_VERSION {
        return Err(Error::schema(path, format!("schema_version {}, expected {SCHEMA_VERSION}", c.schema_version)));
    }
    Ok(c)
}
