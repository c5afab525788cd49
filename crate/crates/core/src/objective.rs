//! Loss and regularization terms of the texture and reconstruction phases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RestQuantities, Vec3};
use crate::physics::{total_energy, ClothModel, Stiffness};
use crate::render::Texture;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub texture: f64,
    pub silhouette: f64,
    pub energy: f64,
    pub force: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { texture: 1e-4, silhouette: 1.0, energy: 2.0, force: 2e-4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.texture, self.silhouette, self.energy, self.force];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("loss weights must be nonnegative, got {all:?}")));
        }
        Ok(())
    }
}

/// Unweighted reconstruction loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub image: f64,
    pub silhouette: f64,
    pub energy: f64,
    pub force: f64,
}

pub fn total_sft_loss(terms: &LossTerms, w: &LossWeights) -> f64 {
    terms.image + w.silhouette * terms.silhouette + w.energy * terms.energy + w.force * terms.force
}

pub fn total_tex_loss(image: f64, smoothness: f64, w: &LossWeights) -> f64 {
    image + w.texture * smoothness
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{what}: {} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

/// Mean over pixels of the squared RGB difference, and its gradient.
pub fn image_loss(rendered: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len(rendered, target, "image loss")?;
    if !rendered.len().is_multiple_of(3) || rendered.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} values is not an RGB image", rendered.len())));
    }
    mean_squared(rendered, target, rendered.len() / 3)
}

/// Mean over pixels of the squared mask difference, and its gradient.
pub fn silhouette_loss(rendered: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len(rendered, target, "silhouette loss")?;
    if rendered.is_empty() {
        return Err(Error::Empty("mask"));
    }
    mean_squared(rendered, target, rendered.len())
}

fn mean_squared(a: &[f64], b: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    let n = n as f64;
    let value = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    let grad = a.iter().zip(b).map(|(x, y)| 2.0 * (x - y) / n).collect();
    Ok((value, grad))
}

/// Mean internal energy over frames and its gradient with respect to each
/// frame's positions. The stiffness enters as a constant.
pub fn energy_regularization(model: &ClothModel, frames: &[Vec<Vec3>], k: &Stiffness) -> Result<(f64, Vec<Vec<Vec3>>)> {
    if frames.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let nf = frames.len() as f64;
    let value = frames.iter().map(|x| total_energy(x, &model.rest, k)).sum::<f64>() / nf;
    let grads = frames.iter().map(|x| energy_gradient(model, x, k, 1.0 / nf)).collect();
    Ok((value, grads))
}

pub fn mean_energy(rest: &RestQuantities, frames: &[Vec<Vec3>], k: &Stiffness) -> f64 {
    frames.iter().map(|x| total_energy(x, rest, k)).sum::<f64>() / frames.len() as f64
}

pub(crate) fn energy_gradient(model: &ClothModel, x: &[Vec3], k: &Stiffness, scale: f64) -> Vec<Vec3> {
    let [gy, gb, gs] = model.unit_gradients(x);
    (0..x.len())
        .map(|i| std::array::from_fn(|d| scale * (k.stretch * gy[i][d] + k.bend * gb[i][d] + k.shear * gs[i][d])))
        .collect()
}

/// Gradients of the force regularizer.
#[derive(Clone, Debug)]
pub struct ForceRegGradients {
    pub forces: Vec<Vec<Vec3>>,
    pub positions: Vec<Vec<Vec3>>,
}

/// Norm of the component of `force` orthogonal to `ray`, with gradients
/// with respect to both; zero gradient where that component vanishes.
pub fn perpendicular_norm(force: Vec3, ray: Vec3) -> Result<(f64, Vec3, Vec3)> {
    let dd = ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2];
    if !(dd > 0.0) {
        return Err(Error::InvalidParameter("zero-length viewing direction".into()));
    }
    let fd = force[0] * ray[0] + force[1] * ray[1] + force[2] * ray[2];
    let perp: Vec3 = std::array::from_fn(|k| force[k] - fd / dd * ray[k]);
    let r = (perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2]).sqrt();
    if r == 0.0 {
        return Ok((0.0, [0.0; 3], [0.0; 3]));
    }
    let gf = perp.map(|p| p / r);
    let gd = perp.map(|p| -fd / (r * dd) * p);
    Ok((r, gf, gd))
}

/// Mean over frames and vertices of the force component orthogonal to the
/// ray from `eye` to each vertex.
pub fn force_regularization(forces: &[Vec<Vec3>], positions: &[Vec<Vec3>], eye: Vec3) -> Result<(f64, ForceRegGradients)> {
    if forces.len() != positions.len() {
        return Err(Error::DimensionMismatch(format!("{} force frames for {} position frames", forces.len(), positions.len())));
    }
    if forces.is_empty() || forces[0].is_empty() {
        return Err(Error::Empty("forces"));
    }
    let nv = forces[0].len();
    let scale = 1.0 / (forces.len() * nv) as f64;
    let mut value = 0.0;
    let mut gf = Vec::with_capacity(forces.len());
    let mut gx = Vec::with_capacity(forces.len());
    for (fs, xs) in forces.iter().zip(positions) {
        if fs.len() != nv || xs.len() != nv {
            return Err(Error::DimensionMismatch("vertex count differs between frames".into()));
        }
        let mut gfn = Vec::with_capacity(nv);
        let mut gxn = Vec::with_capacity(nv);
        for (f, x) in fs.iter().zip(xs) {
            let ray = [x[0] - eye[0], x[1] - eye[1], x[2] - eye[2]];
            let (r, a, b) = perpendicular_norm(*f, ray)?;
            value += r;
            gfn.push(a.map(|v| v * scale));
            gxn.push(b.map(|v| v * scale));
        }
        gf.push(gfn);
        gx.push(gxn);
    }
    Ok((value * scale, ForceRegGradients { forces: gf, positions: gx }))
}

/// Mean L1 difference of horizontally adjacent texels plus that of
/// vertically adjacent texels, with its subgradient.
pub fn texture_smoothness(t: &Texture) -> (f64, Vec<f64>) {
    let (w, h, c) = (t.width, t.height, t.channels);
    let mut grad = vec![0.0; t.texels.len()];
    let mut value = 0.0;
    let at = |x: usize, y: usize, k: usize| (y * w + x) * c + k;
    let term = |pairs: usize, step: (usize, usize), grad: &mut Vec<f64>| {
        if pairs == 0 {
            return 0.0;
        }
        let n = pairs as f64;
        let mut sum = 0.0;
        for y in 0..h - step.1 {
            for x in 0..w - step.0 {
                for k in 0..c {
                    let (i, j) = (at(x, y, k), at(x + step.0, y + step.1, k));
                    let d = t.texels[j] - t.texels[i];
                    sum += d.abs();
                    let s = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                    grad[j] += s / n;
                    grad[i] -= s / n;
                }
            }
        }
        sum / n
    };
    value += term(h * (w - 1), (1, 0), &mut grad);
    value += term((h - 1) * w, (0, 1), &mut grad);
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_template;

    #[test]
    fn image_loss_examples() {
        let black = vec![0.0; 12];
        let white = vec![1.0; 12];
        assert_eq!(image_loss(&black, &black).unwrap().0, 0.0);
        assert_eq!(image_loss(&black, &white).unwrap().0, 3.0);
        let mut one = black.clone();
        one[3] = 0.5;
        assert_eq!(image_loss(&one, &black).unwrap().0, 0.0625);
        assert!(image_loss(&black, &white[..9]).is_err());
    }

    #[test]
    fn silhouette_loss_examples() {
        let full = vec![1.0; 8];
        let empty = vec![0.0; 8];
        let half: Vec<f64> = (0..8).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let comp: Vec<f64> = half.iter().map(|v| 1.0 - v).collect();
        assert_eq!(silhouette_loss(&full, &full).unwrap().0, 0.0);
        assert_eq!(silhouette_loss(&half, &comp).unwrap().0, 1.0);
        assert_eq!(silhouette_loss(&half, &empty).unwrap().0, 0.5);
    }

    #[test]
    fn force_regularization_examples() {
        let (v, _) = force_regularization(&[vec![[3.0, 4.0, 0.0]]], &[vec![[0.0, 0.0, 1.0]]], [0.0; 3]).unwrap();
        assert!((v - 5.0).abs() < 1e-15);
        let (v, _) = force_regularization(&[vec![[0.0, 0.0, 2.5]]], &[vec![[0.0, 0.0, 1.0]]], [0.0; 3]).unwrap();
        assert_eq!(v, 0.0);
        assert!(force_regularization(&[vec![[1.0, 0.0, 0.0]]], &[vec![[0.0; 3]]], [0.0; 3]).is_err());
    }

    #[test]
    fn perpendicular_norm_gradients_match_differences() {
        let f = [0.3, -1.2, 0.7];
        let d = [0.2, 0.5, 1.4];
        let (_, gf, gd) = perpendicular_norm(f, d).unwrap();
        let h = 1e-7;
        for k in 0..3 {
            let mut fp = f;
            let mut fm = f;
            fp[k] += h;
            fm[k] -= h;
            let fd = (perpendicular_norm(fp, d).unwrap().0 - perpendicular_norm(fm, d).unwrap().0) / (2.0 * h);
            assert!((fd - gf[k]).abs() < 1e-7);
            let mut dp = d;
            let mut dm = d;
            dp[k] += h;
            dm[k] -= h;
            let fd = (perpendicular_norm(f, dp).unwrap().0 - perpendicular_norm(f, dm).unwrap().0) / (2.0 * h);
            assert!((fd - gd[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn texture_smoothness_examples() {
        let constant = Texture::constant(4, 3, 3, 0.4);
        assert_eq!(texture_smoothness(&constant).0, 0.0);
        let pair = Texture::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(texture_smoothness(&pair).0, 1.0);
        let checker = Texture::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(texture_smoothness(&checker).0, 2.0);
        let single = Texture::new(1, 1, 3, vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(texture_smoothness(&single).0, 0.0);
    }

    #[test]
    fn energy_regularization_examples() {
        let mesh = build_template(2, 2, 1.0, &[]).unwrap().with_masses(0.1).unwrap();
        let model = ClothModel::new(&mesh).unwrap();
        let k = Stiffness { stretch: 200.0, bend: 1e-3, shear: 1e-4 };
        let (v, _) = energy_regularization(&model, &[mesh.rest_positions.clone(), mesh.rest_positions.clone()], &k).unwrap();
        assert_eq!(v, 0.0);
        // a single edge stretched by 10 %
        let two = build_template(2, 2, 1.0, &[]).unwrap();
        let mut rest = crate::geometry::rest_quantities(&two);
        rest.edges.truncate(1);
        rest.bend_pairs.clear();
        rest.shear_pairs.clear();
        let mut x = two.rest_positions.clone();
        x[1][0] = 1.1;
        assert!((mean_energy(&rest, &[x], &k) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights() {
        let w = LossWeights::default();
        let unit = LossTerms { image: 1.0, silhouette: 1.0, energy: 1.0, force: 1.0 };
        assert!((total_sft_loss(&unit, &w) - (1.0 + 1.0 + 2.0 + 2e-4)).abs() < 1e-15);
        assert_eq!(total_sft_loss(&LossTerms::default(), &w), 0.0);
        assert_eq!(total_tex_loss(0.5, 2.0, &w), 0.5 + 2e-4);
    }
}
