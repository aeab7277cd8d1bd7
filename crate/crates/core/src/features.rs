use crate::error::{dims_mismatch, Error, Result};

/// What the channels of a [`FeatureMap`] hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelSemantics {
    /// Three channels, RGB in `[0, 1]`.
    Rgb,
    /// RGB followed by a one-hot class vector of `classes` channels.
    RgbOneHot { classes: usize },
    /// Anything else (pooled CNN features, energy maps, ...).
    Generic,
}

/// Per-pixel feature vectors on a row-major pixel lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    semantics: ChannelSemantics,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map needs positive extent and channels, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(dims_mismatch(width * height * channels, data.len()));
        }
        Ok(FeatureMap { width, height, channels, semantics: ChannelSemantics::Generic, data })
    }

    /// Interleaved 8-bit RGB, scaled to `[0, 1]`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        let data = rgb.iter().map(|&v| v as f64 / 255.0).collect();
        let mut map = FeatureMap::new(width, height, 3, data)?;
        map.semantics = ChannelSemantics::Rgb;
        Ok(map)
    }

    /// RGB values already in `[0, 1]`.
    pub fn from_rgb(width: usize, height: usize, rgb: Vec<f64>) -> Result<Self> {
        if rgb.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("RGB features must lie in [0, 1]".into()));
        }
        let mut map = FeatureMap::new(width, height, 3, rgb)?;
        map.semantics = ChannelSemantics::Rgb;
        Ok(map)
    }

    pub fn constant(width: usize, height: usize, value: &[f64]) -> Result<Self> {
        let data = value.iter().copied().cycle().take(width * height * value.len()).collect();
        FeatureMap::new(width, height, value.len(), data)
    }

    /// Append a one-hot encoding of `labels` (values `< classes`) to an RGB map.
    pub fn with_onehot(&self, labels: &[u32], classes: usize) -> Result<Self> {
        if self.semantics != ChannelSemantics::Rgb {
            return Err(Error::InvalidArgument("one-hot channels extend an RGB map".into()));
        }
        if labels.len() != self.pixel_count() {
            return Err(dims_mismatch(self.pixel_count(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {classes} classes")));
        }
        let channels = 3 + classes;
        let mut data = Vec::with_capacity(self.pixel_count() * channels);
        for (i, &label) in labels.iter().enumerate() {
            data.extend_from_slice(self.pixel(i));
            data.extend((0..classes).map(|c| if c == label as usize { 1.0 } else { 0.0 }));
        }
        Ok(FeatureMap {
            width: self.width,
            height: self.height,
            channels,
            semantics: ChannelSemantics::RgbOneHot { classes },
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn semantics(&self) -> ChannelSemantics {
        self.semantics
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Error unless the map covers exactly `width × height` pixels.
    pub fn check_extent(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(dims_mismatch(
                format!("{width}x{height}"),
                format!("{}x{}", self.width, self.height),
            ));
        }
        Ok(())
    }

    /// First three channels as 8-bit RGB (grey-replicated for 1 channel).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut out = Vec::with_capacity(self.pixel_count() * 3);
        for i in 0..self.pixel_count() {
            let px = self.pixel(i);
            if self.channels >= 3 {
                out.extend(px[..3].iter().map(|&v| q(v)));
            } else {
                out.extend([q(px[0]); 3]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onehot_appends_channels() {
        let rgb = FeatureMap::from_rgb8(2, 1, &[255, 0, 0, 0, 0, 255]).unwrap();
        let m = rgb.with_onehot(&[1, 0], 2).unwrap();
        assert_eq!(m.channels(), 5);
        assert_eq!(m.pixel(0), &[1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.pixel(1), &[0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(rgb.with_onehot(&[2, 0], 2).is_err());
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(FeatureMap::new(2, 2, 3, vec![0.0; 11]).is_err());
        assert!(FeatureMap::from_rgb(1, 1, vec![0.0, 1.5, 0.0]).is_err());
    }
}
