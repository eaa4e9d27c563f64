//! 8-bit PNG previews: amplitude in gray over `[0, max]`, phase through a
//! warm colormap over `[-pi, pi]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::ComplexField;

fn encode(width: usize, height: usize, color: png::ColorType, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Invalid(format!("png header: {e}")))?;
        w.write_image_data(pixels)
            .map_err(|e| Error::Invalid(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn encode_gray_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!("{} gray pixels for {width}x{height}", pixels.len())));
    }
    encode(width, height, png::ColorType::Grayscale, pixels)
}

pub fn encode_rgb_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != 3 * width * height {
        return Err(Error::shape(format!("{} rgb bytes for {width}x{height}", pixels.len())));
    }
    encode(width, height, png::ColorType::Rgb, pixels)
}

fn quantize(t: f64) -> u8 {
    (t.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Black through red and orange to pale yellow, `t` in [0, 1].
pub fn warm_colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [
        quantize(3.0 * t),
        quantize(3.0 * t - 1.0),
        quantize(3.0 * t - 2.0),
    ]
}

pub fn amplitude_png(f: &ComplexField) -> Result<Vec<u8>> {
    f.ensure_finite()?;
    let max = f.max_amplitude();
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let px: Vec<u8> = f.data().iter().map(|z| quantize(z.norm() * scale)).collect();
    encode_gray_png(f.cols(), f.rows(), &px)
}

pub fn phase_png(f: &ComplexField) -> Result<Vec<u8>> {
    f.ensure_finite()?;
    let px: Vec<u8> = f
        .data()
        .iter()
        .flat_map(|z| warm_colormap((z.arg() + PI) / (2.0 * PI)))
        .collect();
    encode_rgb_png(f.cols(), f.rows(), &px)
}
