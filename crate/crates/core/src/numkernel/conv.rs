//! Cross-correlation kernels over `C×H×W` tensors, lowered to GEMM via im2col.

use super::Tensor;
use crate::{Error, Result};

/// Static description of one convolution call, validated against its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn infer(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (c_in, h, w) = input
            .dims3()
            .map_err(|_| Error::shape("conv2d", format!("input must be C×H×W, got {:?}", input.shape())))?;
        let [c_out, wc_in, kh, kw] = weight.shape()[..] else {
            return Err(Error::shape(
                "conv2d",
                format!("weight must be Cout×Cin×k×k, got {:?}", weight.shape()),
            ));
        };
        if wc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input channels: input has {c_in}, weight expects {wc_in}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be odd and square, got {kh}×{kw}")));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias length: expected [{c_out}], got {:?}", bias.shape()),
            ));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::InvalidArgument(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("height/width {h}×{w} with pad {pad} smaller than kernel {kh}"),
            ));
        }
        let h_out = (h + 2 * pad - kh) / stride + 1;
        let w_out = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { c_in, h, w, c_out, k: kh, stride, pad, h_out, w_out })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// A 1×1, stride-1, unpadded conv reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `C = A·B + beta·C` on row-major buffers; `a_t`/`b_t` read the stored operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let mut cols = vec![0.0; g.patch_len() * p];
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, grad_input: &mut [f64]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        let plane = &mut grad_input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass. Returns the output and, when `keep_cols`, the im2col matrix for backward.
pub(crate) fn forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    g: &ConvGeom,
    keep_cols: bool,
) -> (Tensor, Option<Vec<f64>>) {
    let p = g.positions();
    let mut out = vec![0.0; g.c_out * p];
    for (co, row) in out.chunks_exact_mut(p).enumerate() {
        row.fill(bias.data()[co]);
    }
    let cols = if g.is_pointwise() { None } else { Some(im2col(input.data(), g)) };
    let b = cols.as_deref().unwrap_or(input.data());
    gemm(g.c_out, g.patch_len(), p, weight.data(), false, b, false, 1.0, &mut out);
    let out = Tensor::new(&[g.c_out, g.h_out, g.w_out], out).expect("conv output shape");
    (out, if keep_cols { cols } else { None })
}

/// Gradients of a conv given the upstream gradient. `cols` is `None` for pointwise convs.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    input: &Tensor,
    weight: &Tensor,
    cols: Option<&[f64]>,
    g: &ConvGeom,
    grad_out: &[f64],
    need: [bool; 3],
) -> ConvGrads {
    let p = g.positions();
    let kk = g.patch_len();
    let cols = cols.unwrap_or(input.data());
    let input_grad = need[0].then(|| {
        if g.is_pointwise() {
            let mut gi = vec![0.0; kk * p];
            gemm(kk, g.c_out, p, weight.data(), true, grad_out, false, 0.0, &mut gi);
            gi
        } else {
            let mut dcols = vec![0.0; kk * p];
            gemm(kk, g.c_out, p, weight.data(), true, grad_out, false, 0.0, &mut dcols);
            let mut gi = vec![0.0; g.c_in * g.h * g.w];
            col2im(&dcols, g, &mut gi);
            gi
        }
    });
    let weight_grad = need[1].then(|| {
        let mut gw = vec![0.0; g.c_out * kk];
        gemm(g.c_out, p, kk, grad_out, false, cols, true, 0.0, &mut gw);
        gw
    });
    let bias_grad = need[2].then(|| grad_out.chunks_exact(p).map(|row| row.iter().sum()).collect());
    ConvGrads { input: input_grad, weight: weight_grad, bias: bias_grad }
}
