use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major texel grid; row 0 corresponds to `v = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub texels: Vec<f64>,
}

/// Four texel indices with their bilinear weights and the weight
/// derivatives with respect to `u` and `v`.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTap {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub d_du: [f64; 4],
    pub d_dv: [f64; 4],
}

impl BilinearTap {
    /// Interpolates `value(texel)`; written as nested lerps so constant
    /// regions reproduce their value exactly.
    pub fn apply(&self, value: impl Fn(usize) -> f64) -> f64 {
        let t = self.index.map(value);
        let fx = self.weight[1] + self.weight[3];
        let fy = self.weight[2] + self.weight[3];
        let top = t[0] + fx * (t[1] - t[0]);
        let bottom = t[2] + fx * (t[3] - t[2]);
        top + fy * (bottom - top)
    }
}

impl Texture {
    pub fn new(width: usize, height: usize, channels: usize, texels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::DimensionTooSmall { rows: height, cols: width });
        }
        if texels.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} texels for a {width}x{height}x{channels} texture",
                texels.len()
            )));
        }
        Ok(Self { width, height, channels, texels })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, texels: vec![value; width * height * channels] }
    }

    pub fn clamp_unit(&mut self) {
        for t in &mut self.texels {
            *t = t.clamp(0.0, 1.0);
        }
    }

    /// Clamp-to-edge bilinear lookup footprint; texel centers sit at `(k + 0.5) / size`.
    pub fn tap(&self, u: f64, v: f64) -> BilinearTap {
        let (w, h) = (self.width as f64, self.height as f64);
        let tx = u * w - 0.5;
        let ty = v * h - 0.5;
        let x0 = tx.floor();
        let y0 = ty.floor();
        let fx = tx - x0;
        let fy = ty - y0;
        let cx = |x: f64| x.clamp(0.0, w - 1.0) as usize;
        let cy = |y: f64| y.clamp(0.0, h - 1.0) as usize;
        let (xa, xb, ya, yb) = (cx(x0), cx(x0 + 1.0), cy(y0), cy(y0 + 1.0));
        let index = [ya * self.width + xa, ya * self.width + xb, yb * self.width + xa, yb * self.width + xb];
        let weight = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let d_du = [-(1.0 - fy) * w, (1.0 - fy) * w, -fy * w, fy * w];
        let d_dv = [-(1.0 - fx) * h, -fx * h, (1.0 - fx) * h, fx * h];
        BilinearTap { index, weight, d_du, d_dv }
    }

    pub fn sample(&self, u: f64, v: f64) -> Vec<f64> {
        let tap = self.tap(u, v);
        (0..self.channels).map(|c| tap.apply(|i| self.texels[i * self.channels + c])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texel_centers_are_exact() {
        let t = Texture::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((t.sample(0.25, 0.25)[0] - 0.1).abs() < 1e-15);
        assert!((t.sample(0.75, 0.75)[0] - 0.4).abs() < 1e-15);
        assert!((t.sample(0.5, 0.5)[0] - 0.25).abs() < 1e-15);
        // clamp to edge
        assert!((t.sample(0.0, 0.0)[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn weights_partition_unity_and_derivatives_match() {
        let t = Texture::new(5, 3, 1, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        for &(u, v) in &[(0.13, 0.71), (0.52, 0.47), (0.91, 0.07), (0.33, 0.4)] {
            let tap = t.tap(u, v);
            assert!((tap.weight.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let h = 1e-7;
            let du: f64 = (0..4).map(|k| tap.d_du[k] * t.texels[tap.index[k]]).sum();
            let fd = (t.sample(u + h, v)[0] - t.sample(u - h, v)[0]) / (2.0 * h);
            assert!((du - fd).abs() < 1e-6, "{du} {fd}");
            let dv: f64 = (0..4).map(|k| tap.d_dv[k] * t.texels[tap.index[k]]).sum();
            let fd = (t.sample(u, v + h)[0] - t.sample(u, v - h)[0]) / (2.0 * h);
            assert!((dv - fd).abs() < 1e-6);
        }
    }
}
