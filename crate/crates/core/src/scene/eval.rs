use serde::{Deserialize, Serialize};

use super::{frame_seed, GroundTruth, Scene};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::metrics::{chamfer, depth_error, point_to_surface, sample_surface, Power};
use crate::render::{rasterize, Surface, Texture};

/// Metrics of one frame; `depth` is `None` when the depth maps do not overlap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub cd1: f64,
    pub cd2: f64,
    pub p2s1: f64,
    pub p2s2: f64,
    pub depth: Option<f64>,
}

/// Per-scene means; `depth` averages only frames where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub cd1: f64,
    pub cd2: f64,
    pub p2s1: f64,
    pub p2s2: f64,
    pub depth: Option<f64>,
}

/// Compares a reconstructed trajectory against the ground truth frame by frame.
pub fn evaluate(scene: &Scene, truth: &GroundTruth, trajectory: &[Vec<Vec3>]) -> Result<Vec<FrameMetrics>> {
    if trajectory.len() != truth.trajectory.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reconstructed frames for {} ground-truth frames",
            trajectory.len(),
            truth.trajectory.len()
        )));
    }
    let triangles = scene.template.triangles();
    let surface = Surface::from_mesh(&scene.template);
    let blank = Texture::constant(1, 1, 1, 0.0);
    trajectory
        .iter()
        .enumerate()
        .map(|(f, x)| {
            let gt = &truth.points[f];
            let seed = frame_seed(scene.sample_seed, f);
            let samples = sample_surface(x, &triangles, gt.len(), seed)?;
            let depth = rasterize(x, &surface, &blank, &scene.camera).depth;
            let depth = match depth_error(&truth.depth[f], &depth) {
                Ok(d) => Some(d),
                Err(Error::EmptyRoi) => None,
                Err(e) => return Err(e),
            };
            Ok(FrameMetrics {
                frame: f,
                cd1: chamfer(gt, &samples, Power::One),
                cd2: chamfer(gt, &samples, Power::Two),
                p2s1: point_to_surface(gt, x, &triangles, Power::One, seed)?,
                p2s2: point_to_surface(gt, x, &triangles, Power::Two, seed)?,
                depth,
            })
        })
        .collect()
}

pub fn summarize(frames: &[FrameMetrics]) -> Result<SceneMetrics> {
    if frames.is_empty() {
        return Err(Error::Empty("frame metrics"));
    }
    let n = frames.len() as f64;
    let mean = |f: fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
    let depths: Vec<f64> = frames.iter().filter_map(|m| m.depth).collect();
    Ok(SceneMetrics {
        cd1: mean(|m| m.cd1),
        cd2: mean(|m| m.cd2),
        p2s1: mean(|m| m.p2s1),
        p2s2: mean(|m| m.p2s2),
        depth: (!depths.is_empty()).then(|| depths.iter().sum::<f64>() / depths.len() as f64),
    })
}
