//! Image and label-map encoding. Decoding goes through the `image` crate;
//! the PGM writers are byte-exact so write→read→write is stable.

use std::io::Cursor;
use std::path::Path;

use defgrid_core::features::FeatureMap;
use defgrid_core::mask::Mask;
use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Result, WorkbenchError};

/// Largest accepted image side.
pub const MAX_SIDE: usize = 2048;

fn check_size(width: usize, height: usize) -> Result<()> {
    if width > MAX_SIDE || height > MAX_SIDE {
        return Err(WorkbenchError::TooLarge { width, height, limit: MAX_SIDE });
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| WorkbenchError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// PNG, PPM or PGM bytes as RGB features in `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<FeatureMap> {
    let rgb = image::load_from_memory(bytes)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    check_size(w, h)?;
    Ok(FeatureMap::from_rgb8(w, h, rgb.as_raw())?)
}

pub fn read_image(path: &Path) -> Result<FeatureMap> {
    decode_image(&read(path)?)
}

/// A label map as stored: raw grey values of an 8- or 16-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn to_mask(&self) -> Result<Mask> {
        Ok(Mask::from_labels(self.width, self.height, &self.labels)?)
    }
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let img = image::load_from_memory(bytes)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_size(w, h)?;
    let labels = match img {
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.to_luma16().into_raw().into_iter().map(u32::from).collect()
        }
        other => other.to_luma8().into_raw().into_iter().map(u32::from).collect(),
    };
    Ok(LabelMap { width: w, height: h, labels })
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    decode_labels(&read(path)?)
}

/// Binary 8-bit PGM (P5, maxval 255).
pub fn encode_pgm8(width: usize, height: usize, values: &[u8]) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "pgm extent");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples).
pub fn encode_pgm16(width: usize, height: usize, values: &[u16]) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "pgm extent");
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Segment ids as a 16-bit PGM.
pub fn encode_segmentation(width: usize, height: usize, ids: &[u32]) -> Result<Vec<u8>> {
    let narrow: Vec<u16> = ids
        .iter()
        .map(|&id| u16::try_from(id).map_err(|_| WorkbenchError::Usage(format!("segment id {id} exceeds 16 bits"))))
        .collect::<Result<_>>()?;
    Ok(encode_pgm16(width, height, &narrow))
}

fn encode_png(width: usize, height: usize, data: &[u8], color: ExtendedColorType) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(data, width as u32, height as u32, color)
        .expect("in-memory png encoding");
    out.into_inner()
}

pub fn encode_png_gray(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    encode_png(width, height, data, ExtendedColorType::L8)
}

pub fn encode_png_rgb(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    encode_png(width, height, data, ExtendedColorType::Rgb8)
}

/// Foreground 255, background 0.
pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    encode_png_gray(mask.width(), mask.height(), &mask.to_bytes())
}
