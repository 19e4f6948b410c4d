//! Gaussian ground-truth rendering and the focal, size and total losses.
//!
//! Focal terms use α = 2, β = 4 and carry a leading minus so that each loss is
//! non-negative and minimized at the target.

use crate::numkernel::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
/// Predictions are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const PRED_EPS: f64 = 1e-6;
pub const DEFAULT_MIN_OVERLAP: f64 = 0.7;
pub const DEFAULT_SIZE_WEIGHT: f64 = 0.1;

/// CornerNet/CenterNet Gaussian radius for a box of `(h, w)`, floored and clamped to ≥ 1.
pub fn gaussian_radius(size: (f64, f64), min_overlap: f64) -> f64 {
    let (h, w) = size;
    let root = |a: f64, b: f64, c: f64| (b + (b * b - 4.0 * a * c).sqrt()) / 2.0;
    let r1 = root(1.0, h + w, w * h * (1.0 - min_overlap) / (1.0 + min_overlap));
    let r2 = root(4.0, 2.0 * (h + w), (1.0 - min_overlap) * w * h);
    let r3 = root(4.0 * min_overlap, -2.0 * min_overlap * (h + w), (min_overlap - 1.0) * w * h);
    r1.min(r2).min(r3).floor().max(1.0)
}

/// Max-composites `exp(−‖p − center‖² / 2σ²)`, σ = radius/3, onto an `H×W` map.
pub fn render_gaussian(target: &mut [f64], width: usize, height: usize, center: (usize, usize), radius: f64) -> Result<()> {
    if target.len() != width * height {
        return Err(Error::shape("render_gaussian", format!("map of {} cells is not {width}×{height}", target.len())));
    }
    let (cx, cy) = center;
    if cx >= width || cy >= height {
        return Err(Error::InvalidArgument(format!("center ({cx},{cy}) outside {width}×{height} grid")));
    }
    let sigma = radius / 3.0;
    let denom = 2.0 * sigma * sigma;
    for y in 0..height {
        let dy = y as f64 - cy as f64;
        for x in 0..width {
            let dx = x as f64 - cx as f64;
            let v = (-(dx * dx + dy * dy) / denom).exp();
            let cell = &mut target[y * width + x];
            if v > *cell {
                *cell = v;
            }
        }
    }
    Ok(())
}

/// Sum of focal terms and their gradient w.r.t. the (unclamped) predictions.
fn focal_terms(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for ((&p_raw, &t), g) in pred.iter().zip(target).zip(grad.iter_mut()) {
        let clamped = !(PRED_EPS..=1.0 - PRED_EPS).contains(&p_raw);
        let p = p_raw.clamp(PRED_EPS, 1.0 - PRED_EPS);
        let (l, d) = if t == 1.0 {
            let one_m = 1.0 - p;
            (-one_m.powi(FOCAL_ALPHA) * p.ln(), 2.0 * one_m * p.ln() - one_m * one_m / p)
        } else {
            let wgt = (1.0 - t).powi(FOCAL_BETA);
            let lg = (1.0 - p).ln();
            (-wgt * p.powi(FOCAL_ALPHA) * lg, -wgt * (2.0 * p * lg - p * p / (1.0 - p)))
        };
        loss += l;
        *g = if clamped { 0.0 } else { d };
    }
    (loss, grad)
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Focal terms of `sigmoid(z)` and their gradient w.r.t. the logits `z`.
///
/// Equal to the clamped form while `sigmoid(z)` lies in `[EPS, 1 − EPS]`;
/// beyond that the logs stay finite without clamping, so saturated outputs
/// still receive a gradient.
fn focal_terms_logits(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for ((&z, &t), g) in logits.iter().zip(target).zip(grad.iter_mut()) {
        let p = crate::numkernel::sigmoid(z);
        let q = 1.0 - p;
        if t == 1.0 {
            let ln_p = -softplus(-z);
            loss -= q * q * ln_p;
            *g = 2.0 * p * q * q * ln_p - q * q * q;
        } else {
            let wgt = (1.0 - t).powi(FOCAL_BETA);
            let ln_q = -softplus(z);
            loss -= wgt * p * p * ln_q;
            *g = -wgt * (2.0 * p * p * q * ln_q - p * p * p);
        }
    }
    (loss, grad)
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("prediction {:?} vs target {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Heatmap focal loss normalized by the object count `n` (at least 1).
pub fn heatmap_focal_loss_var(tape: &mut Tape, pred: Var, target: &Tensor, n: usize) -> Result<Var> {
    check_same_shape("heatmap_focal_loss", tape.value(pred), target)?;
    let norm = n.max(1) as f64;
    let (loss, mut grad) = focal_terms(tape.value(pred).data(), target.data());
    grad.iter_mut().for_each(|g| *g /= norm);
    tape.scalar_fn(pred, loss / norm, grad)
}

/// [`heatmap_focal_loss_var`] on pre-sigmoid logits.
pub fn heatmap_focal_loss_logits_var(tape: &mut Tape, logits: Var, target: &Tensor, n: usize) -> Result<Var> {
    check_same_shape("heatmap_focal_loss", tape.value(logits), target)?;
    let norm = n.max(1) as f64;
    let (loss, mut grad) = focal_terms_logits(tape.value(logits).data(), target.data());
    grad.iter_mut().for_each(|g| *g /= norm);
    tape.scalar_fn(logits, loss / norm, grad)
}

/// [`search_focal_loss_var`] on pre-sigmoid logits.
pub fn search_focal_loss_logits_var(tape: &mut Tape, logits: Var, target: &Tensor) -> Result<Var> {
    check_same_shape("search_focal_loss", tape.value(logits), target)?;
    let (loss, grad) = focal_terms_logits(tape.value(logits).data(), target.data());
    tape.scalar_fn(logits, loss, grad)
}

/// Unnormalized focal loss of one response map against its target.
pub fn search_focal_loss_var(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    check_same_shape("search_focal_loss", tape.value(pred), target)?;
    let (loss, grad) = focal_terms(tape.value(pred).data(), target.data());
    tape.scalar_fn(pred, loss, grad)
}

/// Sum of per-object search focal losses; `None` when there are no objects.
pub fn search_loss_var(tape: &mut Tape, pairs: &[(Var, &Tensor)]) -> Result<Option<Var>> {
    let mut total = None;
    for &(pred, target) in pairs {
        let l = search_focal_loss_var(tape, pred, target)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    Ok(total)
}

/// A size-regression target: grid cell `(x, y)` and `(h, w)` in cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeTarget {
    pub cell: (usize, usize),
    pub size: (f64, f64),
}

/// Mean L1 error of the size map at object centers.
pub fn size_loss_var(tape: &mut Tape, size_map: Var, objects: &[SizeTarget]) -> Result<Var> {
    let s = tape.value(size_map);
    let (c, h, w) = s.dims3()?;
    if c != 2 {
        return Err(Error::shape("size_loss", format!("size map needs 2 channels, got {c}")));
    }
    let mut grad = vec![0.0; s.numel()];
    let mut loss = 0.0;
    let norm = objects.len().max(1) as f64;
    for obj in objects {
        let (x, y) = obj.cell;
        if x >= w || y >= h {
            return Err(Error::InvalidArgument(format!("size target cell ({x},{y}) outside {w}×{h} grid")));
        }
        for (ch, want) in [(0, obj.size.0), (1, obj.size.1)] {
            let idx = (ch * h + y) * w + x;
            let diff = s.data()[idx] - want;
            loss += diff.abs();
            grad[idx] += diff.signum() * f64::from(diff != 0.0) / norm;
        }
    }
    tape.scalar_fn(size_map, loss / norm, grad)
}

/// Values of the three loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub heatmap: f64,
    pub search: f64,
    pub size: f64,
    pub total: f64,
}

/// `L_heatmap + L_search + λ_size · L_size` recorded on the tape.
pub fn total_loss_var(
    tape: &mut Tape,
    heatmap: Var,
    search: Option<Var>,
    size: Var,
    size_weight: f64,
) -> Result<(Var, LossParts)> {
    let weighted = tape.scale(size, size_weight);
    let mut total = tape.add(heatmap, weighted)?;
    if let Some(s) = search {
        total = tape.add(total, s)?;
    }
    let parts = LossParts {
        heatmap: tape.value(heatmap).item(),
        search: search.map_or(0.0, |s| tape.value(s).item()),
        size: tape.value(size).item(),
        total: tape.value(total).item(),
    };
    Ok((total, parts))
}

/// Plain-tensor heatmap focal loss.
pub fn heatmap_focal_loss(pred: &Tensor, target: &Tensor, n: usize) -> Result<f64> {
    let mut tape = Tape::inference();
    let p = tape.constant(pred.clone());
    let l = heatmap_focal_loss_var(&mut tape, p, target, n)?;
    Ok(tape.value(l).item())
}

/// Plain-tensor search focal loss over `H×W` (or `1×H×W`) maps.
pub fn search_focal_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut tape = Tape::inference();
    let p = tape.constant(pred.clone());
    let l = search_focal_loss_var(&mut tape, p, target)?;
    Ok(tape.value(l).item())
}

pub fn search_loss(pairs: &[(Tensor, Tensor)]) -> Result<f64> {
    pairs.iter().map(|(r, t)| search_focal_loss(r, t)).sum()
}

pub fn size_loss(size_map: &Tensor, objects: &[SizeTarget]) -> Result<f64> {
    let mut tape = Tape::inference();
    let s = tape.constant(size_map.clone());
    let l = size_loss_var(&mut tape, s, objects)?;
    Ok(tape.value(l).item())
}
