use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Frame;
use crate::numkernel::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::searcher::DYNAMIC_WEIGHT_LEN;
use crate::{Error, Result};

/// Channels of the search feature map F.
pub const SEARCH_CHANNELS: usize = 16;

const BACKBONE_STRIDES: [usize; 4] = [1, 2, 1, 2];

/// Prior bias of the heatmap logits; `sigmoid(-2.19) ≈ 0.1`.
pub const HEATMAP_PRIOR_BIAS: f64 = -2.19;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Output channels of the four 3×3 backbone convs.
    pub backbone_channels: [usize; 4],
    /// Width of the 3×3 conv opening every head.
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { num_classes: 1, backbone_channels: [16, 32, 32, 64], head_hidden: 32 }
    }
}

impl ModelConfig {
    pub fn feature_channels(&self) -> usize {
        self.backbone_channels[3]
    }

    pub fn head_channels(&self, head: Head) -> usize {
        match head {
            Head::Heatmap => self.num_classes,
            Head::Size => 2,
            Head::Search => SEARCH_CHANNELS,
            Head::Controller => DYNAMIC_WEIGHT_LEN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Heatmap,
    Size,
    Search,
    Controller,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Heatmap, Head::Size, Head::Search, Head::Controller];

    pub fn name(self) -> &'static str {
        match self {
            Head::Heatmap => "heatmap",
            Head::Size => "size",
            Head::Search => "search",
            Head::Controller => "controller",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

impl ConvLayer {
    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// The four map-valued outputs for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    /// `C×H×W`, post-sigmoid.
    pub heatmap: Tensor,
    /// `2×H×W`: height then width, in grid cells.
    pub size: Tensor,
    /// `16×H×W` search feature map.
    pub search: Tensor,
    /// `233×H×W` dynamic-weight map.
    pub weights: Tensor,
}

/// Shared backbone plus heatmap, size, search and controller heads.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    backbone: [ConvLayer; 4],
    heads: [[ConvLayer; 2]; 4],
}

impl Model {
    /// Fresh parameters: uniform in ±1/√fan_in, heatmap output bias at the prior.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.num_classes == 0 || config.head_hidden == 0 || config.backbone_channels.contains(&0) {
            return Err(Error::Config(format!("model widths must be positive: {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut c_in = 3;
        for (i, &c_out) in config.backbone_channels.iter().enumerate() {
            add_conv(&mut params, &mut rng, &format!("backbone.{i}"), c_in, c_out, 3)?;
            c_in = c_out;
        }
        for head in Head::ALL {
            let name = head.name();
            add_conv(&mut params, &mut rng, &format!("{name}.0"), config.feature_channels(), config.head_hidden, 3)?;
            add_conv(&mut params, &mut rng, &format!("{name}.1"), config.head_hidden, config.head_channels(head), 1)?;
        }
        let bias = params.id("heatmap.1.bias").expect("registered above");
        params.get_mut(bias).data_mut().fill(HEATMAP_PRIOR_BIAS);
        Self::from_params(params)
    }

    /// Rebuilds a model from named parameters, inferring widths from their shapes.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let shape_of = |name: &str| -> Result<Vec<usize>> {
            params
                .id(name)
                .map(|id| params.get(id).shape().to_vec())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
        };
        let mut backbone_channels = [0; 4];
        let mut c_in = 3;
        for (i, c) in backbone_channels.iter_mut().enumerate() {
            let s = shape_of(&format!("backbone.{i}.weight"))?;
            if s.len() != 4 || s[1] != c_in || s[2] != 3 || s[3] != 3 {
                return Err(Error::Checkpoint(format!("backbone.{i}.weight has shape {s:?}")));
            }
            *c = s[0];
            c_in = s[0];
        }
        let head_hidden = shape_of("heatmap.0.weight")?[0];
        let num_classes = shape_of("heatmap.1.weight")?[0];
        let config = ModelConfig { num_classes, backbone_channels, head_hidden };
        for head in Head::ALL {
            let n = head.name();
            let expect0 = [head_hidden, config.feature_channels(), 3, 3];
            let expect1 = [config.head_channels(head), head_hidden, 1, 1];
            for (layer, expect) in [(0, &expect0[..]), (1, &expect1[..])] {
                let s = shape_of(&format!("{n}.{layer}.weight"))?;
                if s != expect {
                    return Err(Error::Checkpoint(format!("{n}.{layer}.weight: expected {expect:?}, got {s:?}")));
                }
                let b = shape_of(&format!("{n}.{layer}.bias"))?;
                if b != [expect[0]] {
                    return Err(Error::Checkpoint(format!("{n}.{layer}.bias: expected [{}], got {b:?}", expect[0])));
                }
            }
        }
        let layer = |name: &str, stride, pad| ConvLayer {
            weight: params.id(&format!("{name}.weight")).expect("validated"),
            bias: params.id(&format!("{name}.bias")).expect("validated"),
            stride,
            pad,
        };
        let backbone = std::array::from_fn(|i| layer(&format!("backbone.{i}"), BACKBONE_STRIDES[i], 1));
        let heads = Head::ALL.map(|h| [layer(&format!("{}.0", h.name()), 1, 1), layer(&format!("{}.1", h.name()), 1, 0)]);
        Ok(Self { config, params, backbone, heads })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameter ids belonging to the backbone (`None`) or to one head.
    pub fn param_group(&self, head: Option<Head>) -> Vec<ParamId> {
        let layers: &[ConvLayer] = match head {
            None => &self.backbone,
            Some(h) => &self.heads[h as usize],
        };
        layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn backbone_var(&self, tape: &mut Tape, pixels: Var) -> Result<Var> {
        let (_, h, w) = tape.value(pixels).dims3()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape("backbone", format!("width {w} and height {h} must be multiples of 4")));
        }
        let mut x = pixels;
        for layer in &self.backbone {
            x = layer.apply(tape, &self.params, x)?;
            x = tape.relu(x);
        }
        Ok(x)
    }

    /// One head on a backbone feature map; the heatmap head ends in a sigmoid.
    pub fn head_var(&self, tape: &mut Tape, head: Head, features: Var) -> Result<Var> {
        let x = self.head_logits_var(tape, head, features)?;
        Ok(if head == Head::Heatmap { tape.sigmoid(x) } else { x })
    }

    /// [`Model::head_var`] without the heatmap sigmoid.
    pub fn head_logits_var(&self, tape: &mut Tape, head: Head, features: Var) -> Result<Var> {
        let [hidden, out] = &self.heads[head as usize];
        let x = hidden.apply(tape, &self.params, features)?;
        let x = tape.relu(x);
        out.apply(tape, &self.params, x)
    }

    pub fn backbone_forward(&self, frame: &Frame) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let x = tape.constant(frame.pixels().clone());
        let f = self.backbone_var(&mut tape, x)?;
        Ok(tape.take(f))
    }

    pub fn heads_forward(&self, features: &Tensor) -> Result<HeadOutputs> {
        let (c, _, _) = features.dims3()?;
        if c != self.config.feature_channels() {
            return Err(Error::shape(
                "heads",
                format!("feature channels: expected {}, got {c}", self.config.feature_channels()),
            ));
        }
        let mut tape = Tape::inference();
        let f = tape.constant(features.clone());
        let mut outs = Head::ALL.map(|_| None);
        for (slot, head) in outs.iter_mut().zip(Head::ALL) {
            let v = self.head_var(&mut tape, head, f)?;
            *slot = Some(tape.take(v));
        }
        let [heatmap, size, search, weights] = outs.map(|o| o.expect("filled"));
        Ok(HeadOutputs { heatmap, size, search, weights })
    }

    pub fn infer(&self, frame: &Frame) -> Result<HeadOutputs> {
        self.heads_forward(&self.backbone_forward(frame)?)
    }
}

fn add_conv(
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<()> {
    let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
    let mut uniform = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
    let w = Tensor::new(&[c_out, c_in, k, k], uniform(c_out * c_in * k * k))?;
    let b = Tensor::new(&[c_out], uniform(c_out))?;
    params.add(format!("{name}.weight"), w)?;
    params.add(format!("{name}.bias"), b)?;
    Ok(())
}
