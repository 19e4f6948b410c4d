//! The object-customized searcher: a three-layer 1×1 FCN whose parameters are
//! one object's dynamic-weight vector, run over a motion-aware feature map.

use crate::numkernel::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Channels of the motion-aware feature map: two motion offsets plus the search features.
pub const MOTION_AWARE_CHANNELS: usize = crate::nets::SEARCH_CHANNELS + 2;
const HIDDEN: usize = 8;

/// `(input channels, output channels)` of the three searcher layers.
const LAYERS: [(usize, usize); 3] = [(MOTION_AWARE_CHANNELS, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 1)];

/// Length of a dynamic-weight vector: 18·8+8 + 8·8+8 + 8+1.
pub const DYNAMIC_WEIGHT_LEN: usize = 233;

const _: () = {
    let mut total = 0;
    let mut i = 0;
    while i < LAYERS.len() {
        total += LAYERS[i].0 * LAYERS[i].1 + LAYERS[i].1;
        i += 1;
    }
    assert!(total == DYNAMIC_WEIGHT_LEN);
};

/// One object's searcher parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicWeights(Vec<f64>);

impl DynamicWeights {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        check_len(theta.len())?;
        Ok(Self(theta))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; DYNAMIC_WEIGHT_LEN])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_len(len: usize) -> Result<()> {
    if len != DYNAMIC_WEIGHT_LEN {
        return Err(Error::InvalidArgument(format!(
            "dynamic weights must have length {DYNAMIC_WEIGHT_LEN}, got {len}"
        )));
    }
    Ok(())
}

/// `(offset, weight shape, bias len)` per layer within the flat vector.
fn layout() -> [(usize, [usize; 4], usize); 3] {
    let mut offset = 0;
    LAYERS.map(|(cin, cout)| {
        let start = offset;
        offset += cin * cout + cout;
        (start, [cout, cin, 1, 1], cout)
    })
}

/// Splits a flat weight vector into three `(weight, bias)` 1×1-conv parameter sets.
pub fn unpack_weights(theta: &[f64]) -> Result<[(Tensor, Tensor); 3]> {
    check_len(theta.len())?;
    let mut out = Vec::with_capacity(3);
    for (start, wshape, blen) in layout() {
        let wlen: usize = wshape.iter().product();
        let w = Tensor::new(&wshape, theta[start..start + wlen].to_vec())?;
        let b = Tensor::new(&[blen], theta[start + wlen..start + wlen + blen].to_vec())?;
        out.push((w, b));
    }
    Ok(out.try_into().expect("three layers"))
}

/// Records `R = T(F̃; θ)` on the tape. `features` is 18×H×W, `theta` a 233-vector; returns 1×H×W.
pub fn search_var(tape: &mut Tape, features: Var, theta: Var) -> Result<Var> {
    let z = search_logits_var(tape, features, theta)?;
    Ok(tape.sigmoid(z))
}

/// [`search_var`] before the final sigmoid.
pub fn search_logits_var(tape: &mut Tape, features: Var, theta: Var) -> Result<Var> {
    let (c, _, _) = tape.value(features).dims3()?;
    if c != MOTION_AWARE_CHANNELS {
        return Err(Error::shape(
            "search",
            format!("input channels: expected {MOTION_AWARE_CHANNELS}, got {c}"),
        ));
    }
    check_len(tape.value(theta).numel())?;
    let mut x = features;
    for (i, (start, wshape, blen)) in layout().into_iter().enumerate() {
        let wlen: usize = wshape.iter().product();
        let w = tape.slice(theta, start, &wshape)?;
        let b = tape.slice(theta, start + wlen, &[blen])?;
        x = tape.conv2d(x, w, b, 1, 0)?;
        if i + 1 < LAYERS.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Per-object association map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ResponseMap {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (c, height, width) = t.dims3()?;
        if c != 1 {
            return Err(Error::shape("response map", format!("expected 1 channel, got {c}")));
        }
        Ok(Self { width, height, data: t.into_data() })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at the cell nearest to a real-valued grid point, `None` off-grid.
    pub fn at_point(&self, p: (f64, f64)) -> Option<f64> {
        let (x, y) = (p.0.round(), p.1.round());
        (x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64)
            .then(|| self.at(x as usize, y as usize))
    }

    /// Global argmax `((x, y), value)`; the first maximum in row-major order wins.
    pub fn find_peak(&self) -> ((usize, usize), f64) {
        let (mut best, mut best_v) = (0, f64::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        ((best % self.width, best / self.width), best_v)
    }

    /// Binary PGM (P5, maxval 255), pixel = round(255·R).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }
}

/// Runs one searcher over a motion-aware feature map.
pub fn search(features: &Tensor, theta: &DynamicWeights) -> Result<ResponseMap> {
    let mut tape = Tape::inference();
    let f = tape.constant(features.clone());
    let t = tape.constant(Tensor::new(&[DYNAMIC_WEIGHT_LEN], theta.0.clone())?);
    let r = search_var(&mut tape, f, t)?;
    ResponseMap::from_tensor(tape.take(r))
}

/// Independent searches, one per `(feature map, weights)` pair.
pub fn batch_search(features: &[Tensor], thetas: &[DynamicWeights]) -> Result<Vec<ResponseMap>> {
    if features.len() != thetas.len() {
        return Err(Error::InvalidArgument(format!(
            "batch_search: {} feature maps but {} weight vectors",
            features.len(),
            thetas.len()
        )));
    }
    features.iter().zip(thetas).map(|(f, t)| search(f, t)).collect()
}
