use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Pinhole camera in the OpenCV convention: x right, y down, z forward,
/// pixel centers at integer coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rows are the camera axes expressed in world coordinates.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

/// Pixel position together with camera-space depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub pixel: [f64; 2],
    pub depth: f64,
}

fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl Camera {
    /// Camera at `eye` looking at `target`; image y points against `up`.
    /// The principal point is the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let z = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
        let x = normalize(cross(z, up));
        if !x.iter().chain(&z).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("look_at with degenerate view direction".into()));
        }
        let y = cross(z, x);
        let rotation = [x, y, z];
        let translation = std::array::from_fn(|r| -(0..3).map(|c| rotation[r][c] * eye[c]).sum::<f64>());
        let cam = Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
            near: 1e-3,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.near > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera needs positive focal lengths, near plane and size".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        let (r, t) = (&self.rotation, &self.translation);
        std::array::from_fn(|c| -(0..3).map(|k| r[k][c] * t[k]).sum::<f64>())
    }

    /// Pinhole projection of a camera-space point; `None` in front of the near plane.
    pub fn project_camera(&self, q: Vec3) -> Option<Projected> {
        if !(q[2] >= self.near) {
            return None;
        }
        Some(Projected { pixel: [self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy], depth: q[2] })
    }

    pub fn project(&self, p: Vec3) -> Option<Projected> {
        self.project_camera(self.to_camera(p))
    }

    /// `∂pixel/∂q` for a camera-space point `q`.
    pub fn camera_jacobian(&self, q: Vec3) -> [[f64; 3]; 2] {
        let z = q[2];
        [
            [self.fx / z, 0.0, -self.fx * q[0] / (z * z)],
            [0.0, self.fy / z, -self.fy * q[1] / (z * z)],
        ]
    }

    /// `∂pixel/∂p` for a world-space point `p`.
    pub fn jacobian(&self, p: Vec3) -> [[f64; 3]; 2] {
        let j = self.camera_jacobian(self.to_camera(p));
        let r = &self.rotation;
        std::array::from_fn(|a| std::array::from_fn(|c| (0..3).map(|k| j[a][k] * r[k][c]).sum()))
    }

    /// Pulls a pixel-space gradient back to world space.
    pub fn pullback(&self, p: Vec3, g: [f64; 2]) -> Vec3 {
        let j = self.jacobian(p);
        std::array::from_fn(|c| j[0][c] * g[0] + j[1][c] * g[1])
    }
}
