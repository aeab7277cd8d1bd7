//! Binary per-pixel masks.

use crate::error::{dims_mismatch, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("mask needs positive extent, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(dims_mismatch(width * height, data.len()));
        }
        Ok(Mask { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Mask::new(width, height, vec![false; width * height])
    }

    /// Non-zero labels are foreground.
    pub fn from_labels(width: usize, height: usize, labels: &[u32]) -> Result<Self> {
        Mask::new(width, height, labels.iter().map(|&l| l != 0).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Foreground pixels with a 4-neighbour inside the image that is background.
    pub fn boundary(&self) -> Vec<bool> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if !self.get(x, y) {
                    continue;
                }
                let bg = (x > 0 && !self.get(x - 1, y))
                    || (x + 1 < w && !self.get(x + 1, y))
                    || (y > 0 && !self.get(x, y - 1))
                    || (y + 1 < h && !self.get(x, y + 1));
                out[y * w + x] = bg;
            }
        }
        out
    }

    /// 0/255 bytes, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn check_extent(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(dims_mismatch(format!("{width}x{height}"), format!("{}x{}", self.width, self.height)));
        }
        Ok(())
    }
}
