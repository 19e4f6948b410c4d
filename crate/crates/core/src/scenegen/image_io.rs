use std::path::Path;

use super::{BBox, GtBox};
use crate::nets::Frame;
use crate::tracker::FrameResult;
use crate::{Error, Result};

/// Track colors; an id's color is `PALETTE[palette_index(id)]`.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [170, 110, 40],
];

const GT_COLOR: [u8; 3] = [255, 255, 255];

pub fn palette_index(id: u64) -> usize {
    let h = id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ((h >> 32) % PALETTE.len() as u64) as usize
}

fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    std::fs::write(path, encode_ppm(frame.width(), frame.height(), &frame.to_rgb8())).map_err(|e| Error::io_at(path, e))
}

/// Reads a binary PPM as frame `index`.
pub fn read_ppm(path: &Path, index: usize) -> Result<Frame> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .with_guessed_format()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Frame::from_rgb8(index, w as usize, h as usize, img.as_raw())
}

fn draw_outline(rgb: &mut [u8], width: usize, height: usize, bbox: &BBox, color: [u8; 3]) {
    let x0 = bbox.left.round() as i64;
    let y0 = bbox.top.round() as i64;
    let x1 = (bbox.left + bbox.width).round() as i64 - 1;
    let y1 = (bbox.top + bbox.height).round() as i64 - 1;
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let i = 3 * (y as usize * width + x as usize);
            rgb[i..i + 3].copy_from_slice(&color);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

/// P6 image of `frame` with 1-px outlines: ground truth in white, results in their id color.
pub fn render_overlay(frame: &Frame, results: &FrameResult, gt: Option<&[GtBox]>) -> Vec<u8> {
    let (w, h) = (frame.width(), frame.height());
    let mut rgb = frame.to_rgb8();
    for g in gt.unwrap_or_default() {
        draw_outline(&mut rgb, w, h, &g.bbox, GT_COLOR);
    }
    for t in &results.tracks {
        draw_outline(&mut rgb, w, h, &t.bbox, PALETTE[palette_index(t.id)]);
    }
    encode_ppm(w, h, &rgb)
}
