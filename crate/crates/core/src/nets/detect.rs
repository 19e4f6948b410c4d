use super::HeadOutputs;
use crate::numkernel::Tensor;
use crate::{Error, Result};

/// Default heatmap threshold for a detection.
pub const DEFAULT_DET_THRESHOLD: f64 = 0.4;
/// Default cap on detections per class and frame.
pub const DEFAULT_MAX_K: usize = 32;

/// A heatmap peak with its regressed size and dynamic weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// `(x, y)` in output-grid cells.
    pub center: (f64, f64),
    /// `(h, w)` in output-grid cells.
    pub size: (f64, f64),
    pub confidence: f64,
    pub weights: Vec<f64>,
    pub class: usize,
    pub id: Option<u64>,
}

impl Detection {
    /// Grid cell of the center.
    pub fn cell(&self) -> (usize, usize) {
        (self.center.0.round() as usize, self.center.1.round() as usize)
    }
}

/// Local maxima of the heatmap at or above `threshold`, at most `max_k` per class,
/// ordered by confidence (ties: class, then row-major position).
///
/// A cell is a peak when it is `>=` every later neighbor and `>` every earlier
/// neighbor in row-major order, so a plateau yields its first cell only.
pub fn extract_detections(out: &HeadOutputs, threshold: f64, max_k: usize) -> Vec<Detection> {
    let y = &out.heatmap;
    let (classes, h, w) = y.dims3().expect("heatmap is C×H×W");
    let mut all = Vec::new();
    for c in 0..classes {
        let mut peaks = Vec::new();
        for cy in 0..h {
            for cx in 0..w {
                let v = y.at3(c, cy, cx);
                if v >= threshold && is_peak(y, c, cy, cx) {
                    peaks.push((v, cy, cx));
                }
            }
        }
        // Stable sort keeps row-major order among equal confidences.
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
        peaks.truncate(max_k);
        for (v, cy, cx) in peaks {
            all.push(Detection {
                center: (cx as f64, cy as f64),
                size: (out.size.at3(0, cy, cx), out.size.at3(1, cy, cx)),
                confidence: v,
                weights: fiber(&out.weights, cy, cx),
                class: c,
                id: None,
            });
        }
    }
    all.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    all
}

fn is_peak(y: &Tensor, c: usize, cy: usize, cx: usize) -> bool {
    let (_, h, w) = y.dims3().expect("rank 3");
    let v = y.at3(c, cy, cx);
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dy == 0 && dx == 0 {
                continue;
            }
            let (ny, nx) = (cy as isize + dy, cx as isize + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let n = y.at3(c, ny as usize, nx as usize);
            let earlier = (dy, dx) < (0, 0);
            if n > v || (earlier && n == v) {
                return false;
            }
        }
    }
    true
}

fn fiber(t: &Tensor, y: usize, x: usize) -> Vec<f64> {
    let (c, _, _) = t.dims3().expect("rank 3");
    (0..c).map(|ci| t.at3(ci, y, x)).collect()
}

/// The dynamic-weight vector at the grid cell nearest to `p = (x, y)`.
pub fn sample_weights(weights: &Tensor, p: (f64, f64)) -> Result<Vec<f64>> {
    let (_, h, w) = weights.dims3()?;
    let (x, y) = (p.0.round(), p.1.round());
    if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
        return Err(Error::InvalidArgument(format!("point ({}, {}) outside {w}×{h} grid", p.0, p.1)));
    }
    Ok(fiber(weights, y as usize, x as usize))
}
