//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! Every op appends a node holding its output value. `backward` walks the tape
//! in reverse once, accumulates parameter gradients into the [`ParamStore`], and
//! clears the tape; a second call without a fresh forward pass is an error.

use super::conv::{self, ConvGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom, cols: Option<Vec<f64>> },
    Relu(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    /// Contiguous flat range of the input, reshaped.
    Slice { input: Var, start: usize },
    /// Channel fiber of a C×H×W input at one cell.
    Fiber { input: Var, y: usize, x: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    /// Scalar function of one input with its gradient precomputed during forward.
    ScalarFn { input: Var, local_grad: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records everything needed for [`Tape::backward`].
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true, consumed: false }
    }

    /// A forward-only tape: no backward caches are kept and `backward` is refused.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), recording: false, consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Moves a value out of the tape, leaving a placeholder. Intended for final outputs.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.recording });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.clear_grad();
        self.push(value, Op::Param(id), true)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::infer(self.value(input), self.value(weight), self.value(bias), stride, pad)?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        let keep = needs && self.recording && (self.needs(weight));
        let (out, cols) = conv::forward(self.value(input), self.value(weight), self.value(bias), &geom, keep);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom, cols }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(t.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::new(t.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid(x), needs)
    }

    /// Stacks `a` then `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat(a, b), needs))
    }

    /// Elements `[start, start + prod(shape))` of the flattened input, viewed as `shape`.
    pub fn slice(&mut self, input: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let src = self.value(input).data();
        if start + len > src.len() {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} exceeds length {}", start + len, src.len()),
            ));
        }
        let out = Tensor::new(shape, src[start..start + len].to_vec())?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Slice { input, start }, needs))
    }

    /// The `[C]` vector at cell `(y, x)` of a C×H×W input.
    pub fn fiber(&mut self, input: Var, y: usize, x: usize) -> Result<Var> {
        let t = self.value(input);
        let (c, h, w) = t.dims3()?;
        if y >= h || x >= w {
            return Err(Error::shape("fiber", format!("cell ({x},{y}) outside {w}×{h} grid")));
        }
        let data = (0..c).map(|ci| t.data()[(ci * h + y) * w + x]).collect();
        let out = Tensor::new(&[c], data)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Fiber { input, y, x }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    fn zip(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * factor).collect()).expect("same shape");
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, factor), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        let needs = self.needs(x);
        self.push(out, Op::Sum(x), needs)
    }

    /// Records a scalar `value = f(input)` whose gradient `∂f/∂input` the caller computed.
    pub fn scalar_fn(&mut self, input: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.value(input).numel() {
            return Err(Error::shape(
                "scalar_fn",
                format!("gradient length {} vs input length {}", local_grad.len(), self.value(input).numel()),
            ));
        }
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(value), Op::ScalarFn { input, local_grad }, needs))
    }

    /// Accumulates `∂loss/∂param` into every parameter reachable from `loss`, then clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("backward called twice; re-run the forward pass first".into()));
        }
        if !self.recording {
            return Err(Error::Tape("backward on an inference tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Tape(format!("loss must be scalar, got shape {:?}", self.value(loss).shape())));
        }
        self.consumed = true;
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, delta: &[f64], grads: &mut Vec<Option<Vec<f64>>>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(buf) => buf.iter_mut().zip(delta).for_each(|(b, d)| *b += d),
                    slot @ None => *slot = Some(delta.to_vec()),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let target = store.get_mut(*id).grad_or_zeros();
                    target.iter_mut().zip(&g).for_each(|(t, d)| *t += d);
                }
                Op::Conv2d { input, weight, bias, geom, cols } => {
                    let need = [self_needs(&nodes, *input), self_needs(&nodes, *weight), self_needs(&nodes, *bias)];
                    let cg = conv::backward(
                        &nodes[input.0].value,
                        &nodes[weight.0].value,
                        cols.as_deref(),
                        geom,
                        &g,
                        need,
                    );
                    if let Some(d) = cg.input {
                        acc(*input, &d, &mut grads);
                    }
                    if let Some(d) = cg.weight {
                        acc(*weight, &d, &mut grads);
                    }
                    if let Some(d) = cg.bias {
                        acc(*bias, &d, &mut grads);
                    }
                }
                Op::Relu(x) => {
                    let d: Vec<f64> = nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    acc(*x, &d, &mut grads);
                }
                Op::Sigmoid(x) => {
                    let d: Vec<f64> =
                        node.value.data().iter().zip(&g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                    acc(*x, &d, &mut grads);
                }
                Op::Concat(a, b) => {
                    let split = nodes[a.0].value.numel();
                    acc(*a, &g[..split], &mut grads);
                    acc(*b, &g[split..], &mut grads);
                }
                Op::Slice { input, start } => {
                    let mut d = vec![0.0; nodes[input.0].value.numel()];
                    d[*start..*start + g.len()].copy_from_slice(&g);
                    acc(*input, &d, &mut grads);
                }
                Op::Fiber { input, y, x } => {
                    let (_, h, w) = nodes[input.0].value.dims3()?;
                    let mut d = vec![0.0; nodes[input.0].value.numel()];
                    for (ci, gv) in g.iter().enumerate() {
                        d[(ci * h + y) * w + x] = *gv;
                    }
                    acc(*input, &d, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, &g, &mut grads);
                    acc(*b, &g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = nodes[b.0].value.data().iter().zip(&g).map(|(v, gv)| v * gv).collect();
                    let db: Vec<f64> = nodes[a.0].value.data().iter().zip(&g).map(|(v, gv)| v * gv).collect();
                    acc(*a, &da, &mut grads);
                    acc(*b, &db, &mut grads);
                }
                Op::Scale(x, f) => {
                    let d: Vec<f64> = g.iter().map(|v| v * f).collect();
                    acc(*x, &d, &mut grads);
                }
                Op::Sum(x) => {
                    let d = vec![g[0]; nodes[x.0].value.numel()];
                    acc(*x, &d, &mut grads);
                }
                Op::ScalarFn { input, local_grad } => {
                    let d: Vec<f64> = local_grad.iter().map(|v| v * g[0]).collect();
                    acc(*input, &d, &mut grads);
                }
            }
        }
        Ok(())
    }
}

fn self_needs(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].needs_grad
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    let out = tape.relu(v);
    tape.take(out)
}

pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    let out = tape.sigmoid(v);
    tape.take(out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if ha != hb {
        return Err(Error::shape("concat_channels", format!("height {ha} vs {hb}")));
    }
    if wa != wb {
        return Err(Error::shape("concat_channels", format!("width {wa} vs {wb}")));
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(&[ca + cb, ha, wa], data)
}

/// Pure forward convolution on plain tensors.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let geom = ConvGeom::infer(input, weight, bias, stride, pad)?;
    Ok(conv::forward(input, weight, bias, &geom, false).0)
}
