use crate::numkernel::Tensor;
use crate::{Error, Result};

/// Input-to-output grid downsampling ratio.
pub const DOWNSAMPLE: usize = 4;

/// One RGB image, channel-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    index: usize,
    pixels: Tensor,
}

impl Frame {
    pub fn new(index: usize, pixels: Tensor) -> Result<Self> {
        let (c, h, w) = pixels.dims3()?;
        if c != 3 {
            return Err(Error::shape("frame", format!("expected 3 color channels, got {c}")));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::shape(
                "frame",
                format!("width {w} and height {h} must be multiples of {DOWNSAMPLE}"),
            ));
        }
        Ok(Self { index, pixels })
    }

    /// Builds a frame from interleaved 8-bit RGB.
    pub fn from_rgb8(index: usize, width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::shape(
                "frame",
                format!("{width}×{height} RGB needs {} bytes, got {}", width * height * 3, rgb.len()),
            ));
        }
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        Self::new(index, Tensor::new(&[3, height, width], data)?)
    }

    /// Interleaved 8-bit RGB, rounding to the nearest level.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width() * self.height();
        let d = self.pixels.data();
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    /// `(width, height)` of the output grid.
    pub fn grid_size(&self) -> (usize, usize) {
        (self.width() / DOWNSAMPLE, self.height() / DOWNSAMPLE)
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }
}
