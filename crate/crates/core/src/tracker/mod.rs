//! The online tracking loop and the two-frame training procedure.

mod hungarian;
mod train;

use serde::{Deserialize, Serialize};

use crate::motion::{build_motion_map, kf_init, kf_predict, kf_update, make_motion_aware, KalmanConfig, KalmanState};
use crate::nets::{extract_detections, Detection, Frame, HeadOutputs, Model, DEFAULT_DET_THRESHOLD, DEFAULT_MAX_K, DOWNSAMPLE};
use crate::numkernel::Tensor;
use crate::scenegen::{BBox, MotRecord};
use crate::searcher::{search, DynamicWeights, ResponseMap};
use crate::{Error, Result};

pub use hungarian::hungarian;
pub use train::{
    gt_objects, pair_gradients, pair_loss, sample_delta, train, train_pair, GtObject, TrainConfig, TrainPair, TrainReport, MAX_DELTA,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum heatmap confidence for a detection (and a birth).
    pub det_threshold: f64,
    /// Minimum response at a detection for a match.
    pub assoc_threshold: f64,
    /// Gate radius as a multiple of `max(track diagonal, 4 cells)`.
    pub gate_radius_factor: f64,
    pub max_misses: u32,
    pub max_k: usize,
    /// When false, the motion channels of the searcher input are zero.
    pub use_motion: bool,
    pub kalman: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            det_threshold: DEFAULT_DET_THRESHOLD,
            assoc_threshold: 0.3,
            gate_radius_factor: 2.0,
            max_misses: 5,
            max_k: DEFAULT_MAX_K,
            use_motion: true,
            kalman: KalmanConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.det_threshold) || !unit(self.assoc_threshold) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if !(self.gate_radius_factor > 0.0) || self.max_misses == 0 || self.max_k == 0 {
            return Err(Error::Config("gate factor, max_misses and max_k must be positive".into()));
        }
        Ok(())
    }
}

/// Minimum gate radius in cells.
const MIN_GATE_CELLS: f64 = 4.0;

/// A live identity. Positions and sizes are in grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    pub kalman: KalmanState,
    pub theta: DynamicWeights,
    pub last_center: (f64, f64),
    /// `(h, w)`.
    pub size: (f64, f64),
    pub class: usize,
    pub misses: u32,
    pub age: u32,
}

impl Track {
    fn gate(&self, factor: f64) -> f64 {
        factor * self.size.0.hypot(self.size.1).max(MIN_GATE_CELLS)
    }
}

/// One emitted box.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    /// Input-pixel box.
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameResult {
    pub frame_index: usize,
    pub tracks: Vec<TrackOutput>,
}

impl FrameResult {
    pub fn to_records(&self) -> Vec<MotRecord> {
        self.tracks
            .iter()
            .map(|t| MotRecord { frame: self.frame_index + 1, id: t.id, bbox: t.bbox, conf: t.score })
            .collect()
    }
}

/// Per-sequence tracker state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    pub tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl TrackState {
    pub fn new() -> Self {
        Self { tracks: Vec::new(), next_id: 1, last_frame: None }
    }
}

impl Default for TrackState {
    fn default() -> Self {
        Self::new()
    }
}

/// A live track's search outcome for the current frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchPeak {
    /// Response peak `(x, y)` in cells.
    pub loc: (f64, f64),
    /// Peak value.
    pub confidence: f64,
    pub response: ResponseMap,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Gated min-cost assignment with cost `1 − R_i(p_j)`; matches under the threshold are dropped.
///
/// Tracks are matched in a cascade by miss count: tracks seen in the previous frame
/// claim detections first, then tracks missed once, and so on. This keeps a briefly
/// lost track from trading a detection back and forth with its own replacement.
pub fn associate(tracks: &[Track], peaks: &[SearchPeak], detections: &[Detection], config: &TrackerConfig) -> Association {
    assert_eq!(tracks.len(), peaks.len(), "one peak per track");
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .zip(peaks)
        .map(|(t, pk)| {
            let gate = t.gate(config.gate_radius_factor);
            detections
                .iter()
                .map(|d| {
                    let dist = (pk.loc.0 - d.center.0).hypot(pk.loc.1 - d.center.1);
                    match pk.response.at_point(d.center) {
                        Some(r) if dist <= gate && d.class == t.class => 1.0 - r,
                        _ => f64::INFINITY,
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Association::default();
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut levels: Vec<u32> = tracks.iter().map(|t| t.misses).collect();
    levels.sort_unstable();
    levels.dedup();
    for level in levels {
        let rows: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].misses == level).collect();
        let cols: Vec<usize> = (0..detections.len()).filter(|&j| !det_used[j]).collect();
        let sub: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&j| cost[i][j]).collect()).collect();
        for (a, b) in hungarian(&sub) {
            let (i, j) = (rows[a], cols[b]);
            if 1.0 - cost[i][j] >= config.assoc_threshold {
                out.matches.push((i, j));
                track_used[i] = true;
                det_used[j] = true;
            }
        }
    }
    out.matches.sort_unstable();
    out.unmatched_tracks = (0..tracks.len()).filter(|&i| !track_used[i]).collect();
    out.unmatched_detections = (0..detections.len()).filter(|&j| !det_used[j]).collect();
    out
}

/// Motion map for a predicted center, or zeros when motion is disabled.
pub fn motion_channels(m: (f64, f64), height: usize, width: usize, use_motion: bool) -> Tensor {
    if use_motion {
        build_motion_map(m, height, width)
    } else {
        Tensor::zeros(&[2, height, width])
    }
}

/// Runs every live track's searcher on `search_features`.
pub fn search_tracks(
    predicted: &[(f64, f64)],
    tracks: &[Track],
    search_features: &Tensor,
    use_motion: bool,
) -> Result<Vec<SearchPeak>> {
    let (_, h, w) = search_features.dims3()?;
    tracks
        .iter()
        .zip(predicted)
        .map(|(t, &m)| {
            let f = make_motion_aware(search_features, &motion_channels(m, h, w, use_motion))?;
            let response = search(&f, &t.theta)?;
            let ((x, y), confidence) = response.find_peak();
            Ok(SearchPeak { loc: (x as f64, y as f64), confidence, response })
        })
        .collect()
}

fn output_box(center: (f64, f64), size: (f64, f64)) -> BBox {
    let r = DOWNSAMPLE as f64;
    let size = (size.0.max(0.0), size.1.max(0.0));
    BBox::from_center((center.0 * r, center.1 * r), (size.0 * r, size.1 * r))
}

/// Per-frame diagnostics from [`step_with_responses`].
#[derive(Clone, Debug, Default)]
pub struct StepDetail {
    /// `(track id, response map)` for every track alive before the frame.
    pub responses: Vec<(u64, ResponseMap)>,
}

/// Advances the tracker by one frame.
pub fn step(state: &mut TrackState, frame: &Frame, model: &Model, config: &TrackerConfig) -> Result<FrameResult> {
    step_with_responses(state, frame, model, config).map(|(r, _)| r)
}

/// [`step`], also returning every searched track's response map.
pub fn step_with_responses(
    state: &mut TrackState,
    frame: &Frame,
    model: &Model,
    config: &TrackerConfig,
) -> Result<(FrameResult, StepDetail)> {
    check_order(state, frame.index())?;
    let out = model.infer(frame)?;
    step_outputs(state, frame.index(), &out, config)
}

fn check_order(state: &TrackState, index: usize) -> Result<()> {
    match state.last_frame {
        Some(last) if index <= last => {
            Err(Error::InvalidArgument(format!("frame index {index} does not follow {last}")))
        }
        _ => Ok(()),
    }
}

/// The tracking update given the network outputs for frame `index`.
pub fn step_outputs(
    state: &mut TrackState,
    index: usize,
    out: &HeadOutputs,
    config: &TrackerConfig,
) -> Result<(FrameResult, StepDetail)> {
    check_order(state, index)?;
    let detections = extract_detections(out, config.det_threshold, config.max_k);

    let mut predicted_states = Vec::with_capacity(state.tracks.len());
    let mut predicted = Vec::with_capacity(state.tracks.len());
    for t in &state.tracks {
        let (s, m) = kf_predict(&t.kalman, &config.kalman)?;
        predicted_states.push(s);
        predicted.push(m);
    }
    let peaks = search_tracks(&predicted, &state.tracks, &out.search, config.use_motion)?;
    let assoc = associate(&state.tracks, &peaks, &detections, config);

    let mut result = FrameResult { frame_index: index, tracks: Vec::new() };
    let mut tracks = std::mem::take(&mut state.tracks);
    for (t, s) in tracks.iter_mut().zip(predicted_states) {
        t.kalman = s;
        t.age += 1;
    }
    for &(i, j) in &assoc.matches {
        let (t, d) = (&mut tracks[i], &detections[j]);
        t.kalman = kf_update(&t.kalman, d.center, &config.kalman)?;
        t.theta = DynamicWeights::new(d.weights.clone())?;
        t.last_center = d.center;
        t.size = d.size;
        t.misses = 0;
        result.tracks.push(TrackOutput { id: t.id, bbox: output_box(d.center, d.size), score: d.confidence });
    }
    for &i in &assoc.unmatched_tracks {
        tracks[i].misses += 1;
    }
    let detail = StepDetail { responses: tracks.iter().zip(peaks).map(|(t, p)| (t.id, p.response)).collect() };
    tracks.retain(|t| t.misses < config.max_misses);

    for &j in &assoc.unmatched_detections {
        let d = &detections[j];
        if d.confidence < config.det_threshold {
            continue;
        }
        let id = state.next_id;
        state.next_id += 1;
        tracks.push(Track {
            id,
            kalman: kf_init(d.center, &config.kalman),
            theta: DynamicWeights::new(d.weights.clone())?,
            last_center: d.center,
            size: d.size,
            class: d.class,
            misses: 0,
            age: 1,
        });
        result.tracks.push(TrackOutput { id, bbox: output_box(d.center, d.size), score: d.confidence });
    }
    state.tracks = tracks;
    state.last_frame = Some(index);
    result.tracks.sort_by_key(|t| t.id);
    Ok((result, detail))
}

/// Tracks a whole sequence from a fresh state.
pub fn track_sequence(frames: &[Frame], model: &Model, config: &TrackerConfig) -> Result<Vec<FrameResult>> {
    let mut state = TrackState::new();
    frames.iter().map(|f| step(&mut state, f, model, config)).collect()
}
