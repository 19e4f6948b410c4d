use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::motion_channels;
use crate::losses::{
    gaussian_radius, heatmap_focal_loss_logits_var, render_gaussian, search_focal_loss_logits_var, size_loss_var, total_loss_var,
    LossParts, SizeTarget, DEFAULT_MIN_OVERLAP, DEFAULT_SIZE_WEIGHT,
};
use crate::nets::{Frame, Head, Model, DOWNSAMPLE};
use crate::numkernel::{Sgd, Tape, Tensor, Var};
use crate::scenegen::{GtBox, Sequence};
use crate::searcher::search_logits_var;
use crate::{Error, Result};

/// Largest frame gap between the two images of a training pair.
pub const MAX_DELTA: usize = 3;

/// Draws the frame gap uniformly from `1..=MAX_DELTA`.
pub fn sample_delta(rng: &mut impl Rng) -> usize {
    rng.random_range(1..=MAX_DELTA)
}

/// A ground-truth object on the output grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtObject {
    pub id: u64,
    pub class: usize,
    /// `(x, y)` in cells.
    pub center: (f64, f64),
    /// `(h, w)` in cells.
    pub size: (f64, f64),
}

impl GtObject {
    /// Nearest cell, clamped into a `width×height` grid.
    pub fn cell(&self, width: usize, height: usize) -> (usize, usize) {
        let snap = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
        (snap(self.center.0, width), snap(self.center.1, height))
    }
}

/// Visible ground-truth boxes converted to grid units.
pub fn gt_objects(boxes: &[GtBox]) -> Vec<GtObject> {
    let r = DOWNSAMPLE as f64;
    boxes
        .iter()
        .filter(|b| b.visible)
        .map(|b| {
            let (cx, cy) = b.bbox.center();
            GtObject { id: b.id, class: b.class, center: (cx / r, cy / r), size: (b.bbox.height / r, b.bbox.width / r) }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr`; the rate follows a cosine from `lr` down to it.
    pub final_lr_frac: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
    pub size_weight: f64,
    pub min_overlap: f64,
    pub use_motion: bool,
    /// Jitter σ of the training motion center, as a fraction of the larger box side.
    pub jitter_frac: f64,
    /// Lower bound on the jitter σ, in cells.
    pub min_jitter: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr: 5e-3,
            final_lr_frac: 0.05,
            momentum: 0.9,
            clip_norm: 10.0,
            size_weight: DEFAULT_SIZE_WEIGHT,
            min_overlap: DEFAULT_MIN_OVERLAP,
            use_motion: true,
            jitter_frac: 0.05,
            min_jitter: 1.0,
            seed: 0,
        }
    }
}

/// Two frames of one sequence, `δ` apart, with their visible objects.
#[derive(Clone, Copy, Debug)]
pub struct TrainPair<'a> {
    pub prev: &'a Frame,
    pub cur: &'a Frame,
    pub prev_objects: &'a [GtObject],
    pub cur_objects: &'a [GtObject],
}

/// One SGD step on a frame pair; returns the loss terms before the update.
pub fn train_pair(
    model: &mut Model,
    opt: &mut Sgd,
    pair: &TrainPair<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossParts> {
    let parts = pair_gradients(model, pair, cfg, rng)?;
    let store = model.params_mut();
    if cfg.clip_norm > 0.0 {
        store.clip_grad_norm(cfg.clip_norm);
    }
    opt.step(store)?;
    Ok(parts)
}

/// Overwrites every parameter gradient with `∂L_total/∂param` for one frame pair.
pub fn pair_gradients(model: &mut Model, pair: &TrainPair<'_>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<LossParts> {
    let mut tape = Tape::new();
    let (total, parts) = record_pair_loss(&mut tape, model, pair, cfg, rng)?;
    let store = model.params_mut();
    store.zero_grads();
    tape.backward(total, store)?;
    Ok(parts)
}

/// The loss terms of one frame pair without touching gradients.
pub fn pair_loss(model: &Model, pair: &TrainPair<'_>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<LossParts> {
    record_pair_loss(&mut Tape::inference(), model, pair, cfg, rng).map(|(_, parts)| parts)
}

fn record_pair_loss(
    tape: &mut Tape,
    model: &Model,
    pair: &TrainPair<'_>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, LossParts)> {
    let (gw, gh) = pair.cur.grid_size();
    if pair.prev.grid_size() != (gw, gh) {
        return Err(Error::shape("train_pair", "frames differ in size"));
    }
    let classes = model.config().num_classes;
    if let Some(o) = pair.prev_objects.iter().chain(pair.cur_objects).find(|o| o.class >= classes) {
        return Err(Error::InvalidArgument(format!("object {} has class {} of {classes}", o.id, o.class)));
    }
    let plane = gw * gh;

    let px_prev = tape.constant(pair.prev.pixels().clone());
    let feat_prev = model.backbone_var(tape, px_prev)?;
    let theta_map = model.head_var(tape, Head::Controller, feat_prev)?;

    let px_cur = tape.constant(pair.cur.pixels().clone());
    let feat_cur = model.backbone_var(tape, px_cur)?;
    let heat = model.head_logits_var(tape, Head::Heatmap, feat_cur)?;
    let size = model.head_var(tape, Head::Size, feat_cur)?;
    let search = model.head_var(tape, Head::Search, feat_cur)?;

    let mut y_star = vec![0.0; classes * plane];
    let mut size_targets = Vec::with_capacity(pair.cur_objects.len());
    for o in pair.cur_objects {
        let cell = o.cell(gw, gh);
        let radius = gaussian_radius(o.size, cfg.min_overlap);
        render_gaussian(&mut y_star[o.class * plane..(o.class + 1) * plane], gw, gh, cell, radius)?;
        size_targets.push(SizeTarget { cell, size: o.size });
    }
    let y_star = Tensor::new(&[classes, gh, gw], y_star)?;
    let heat_loss = heatmap_focal_loss_logits_var(tape, heat, &y_star, pair.cur_objects.len())?;
    let size_loss = size_loss_var(tape, size, &size_targets)?;

    let mut search_loss = None;
    for o in pair.prev_objects {
        let (px, py) = o.cell(gw, gh);
        let theta = tape.fiber(theta_map, py, px)?;
        let cur = pair.cur_objects.iter().find(|c| c.id == o.id);
        let anchor = cur.unwrap_or(o);
        let sigma = cfg.min_jitter.max(cfg.jitter_frac * anchor.size.0.max(anchor.size.1));
        let jitter = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let m = (anchor.center.0 + jitter.sample(rng), anchor.center.1 + jitter.sample(rng));
        let mut r_star = vec![0.0; plane];
        if let Some(c) = cur {
            render_gaussian(&mut r_star, gw, gh, c.cell(gw, gh), gaussian_radius(c.size, cfg.min_overlap))?;
        }
        let r_star = Tensor::new(&[1, gh, gw], r_star)?;
        let o_map = tape.constant(motion_channels(m, gh, gw, cfg.use_motion));
        let f_tilde = tape.concat_channels(o_map, search)?;
        let logits = search_logits_var(tape, f_tilde, theta)?;
        let l = search_focal_loss_logits_var(tape, logits, &r_star)?;
        search_loss = Some(match search_loss {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }

    let (total, parts) = total_loss_var(tape, heat_loss, search_loss, size_loss, cfg.size_weight)?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    Ok((total, parts))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Epochs over every `(sequence, t ≥ 1)` in shuffled order, each paired with frame `t − δ`.
pub fn train(
    model: &mut Model,
    sequences: &[Sequence],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, usize, &LossParts),
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let objects: Vec<Vec<Vec<GtObject>>> =
        sequences.iter().map(|s| s.gt.frames.iter().map(|f| gt_objects(f)).collect()).collect();
    for (s, objs) in sequences.iter().zip(&objects) {
        if objs.len() != s.frames.len() {
            return Err(Error::InvalidArgument("ground truth and frames differ in length".into()));
        }
    }
    let mut samples: Vec<(usize, usize)> =
        sequences.iter().enumerate().flat_map(|(si, s)| (1..s.frames.len()).map(move |t| (si, t))).collect();
    let mut report = TrainReport::default();
    let total_steps = (cfg.epochs * samples.len()).max(2) - 1;
    for epoch in 0..cfg.epochs {
        samples.shuffle(&mut rng);
        let mut sum = 0.0;
        for (k, &(si, t)) in samples.iter().enumerate() {
            let delta = sample_delta(&mut rng).min(t);
            let seq = &sequences[si];
            let pair = TrainPair {
                prev: &seq.frames[t - delta],
                cur: &seq.frames[t],
                prev_objects: &objects[si][t - delta],
                cur_objects: &objects[si][t],
            };
            let progress = report.steps as f64 / total_steps as f64;
            opt.lr = cfg.lr * (cfg.final_lr_frac + (1.0 - cfg.final_lr_frac) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            let parts = train_pair(model, &mut opt, &pair, cfg, &mut rng)?;
            sum += parts.total;
            report.steps += 1;
            on_step(epoch, k, &parts);
        }
        report.epoch_losses.push(sum / samples.len().max(1) as f64);
    }
    Ok(report)
}
