use serde::{Deserialize, Serialize};

pub const FIXED_CLIP_NORM: f64 = 1000.0;
pub const AUTO_CLIP_PERCENTILE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClipMode {
    Fixed(f64),
    Auto,
}

/// Rescales `grad` to at most `max_norm`; returns the norm before clipping.
pub fn clip_to_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|v| *v *= s);
    }
    norm
}

/// Linear-interpolated percentile of `values` (0–100).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Clips each gradient to a percentile of all norms seen so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoClipper {
    pub percentile: f64,
    pub history: Vec<f64>,
}

impl Default for AutoClipper {
    fn default() -> Self {
        Self::new(AUTO_CLIP_PERCENTILE)
    }
}

impl AutoClipper {
    pub fn new(percentile: f64) -> Self {
        Self { percentile, history: Vec::new() }
    }

    /// Records the norm of `grad`, then clips it; returns the threshold.
    pub fn clip(&mut self, grad: &mut [f64]) -> f64 {
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.history.push(norm);
        let threshold = percentile(&self.history, self.percentile);
        clip_to_norm(grad, threshold);
        threshold
    }
}
