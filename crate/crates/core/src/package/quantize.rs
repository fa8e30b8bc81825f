//! Per-channel affine 8-bit quantization of a texel-major feature texture,
//! packed four channels per RGBA plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dequantization range of one channel: byte `q` maps to `min + q/255·(max − min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn step(&self) -> f64 {
        (self.max - self.min) / 255.0
    }

    pub fn encode(&self, v: f64) -> u8 {
        if self.max == self.min {
            return 0;
        }
        ((v - self.min) / (self.max - self.min) * 255.0).round().clamp(0.0, 255.0) as u8
    }

    pub fn decode(&self, q: u8) -> f64 {
        if q == 0 {
            self.min
        } else if q == 255 {
            self.max
        } else {
            self.min + q as f64 * self.step()
        }
    }
}

/// Quantized texture: `planes[p]` is an `R×R×4` RGBA byte buffer holding
/// channels `4p..4p+4`. Unused components of the last plane are 0, except
/// alpha which is 255 so the plane stays opaque.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTexture {
    pub resolution: usize,
    pub channels: usize,
    pub ranges: Vec<ChannelRange>,
    pub planes: Vec<Vec<u8>>,
}

pub fn plane_count(channels: usize) -> usize {
    channels.div_ceil(4)
}

pub fn quantize_texture(texels: &[f64], resolution: usize, channels: usize) -> Result<QuantizedTexture> {
    if channels == 0 || resolution == 0 {
        return Err(Error::validation("texture needs at least one channel and texel"));
    }
    let n = resolution * resolution;
    if texels.len() != n * channels {
        return Err(Error::validation(format!(
            "texture holds {} values, expected {}",
            texels.len(),
            n * channels
        )));
    }
    if let Some(i) = texels.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!(
            "non-finite value {} at texel {} channel {}",
            texels[i],
            i / channels,
            i % channels
        )));
    }
    let ranges: Vec<ChannelRange> = (0..channels)
        .map(|c| {
            let (lo, hi) = texels
                .iter()
                .skip(c)
                .step_by(channels)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            ChannelRange { min: lo, max: hi }
        })
        .collect();
    let mut planes = Vec::with_capacity(plane_count(channels));
    for p in 0..plane_count(channels) {
        let mut buf = vec![0u8; n * 4];
        for t in 0..n {
            for k in 0..4 {
                let c = 4 * p + k;
                buf[4 * t + k] = if c < channels {
                    ranges[c].encode(texels[t * channels + c])
                } else if k == 3 {
                    255
                } else {
                    0
                };
            }
        }
        planes.push(buf);
    }
    Ok(QuantizedTexture {
        resolution,
        channels,
        ranges,
        planes,
    })
}

impl QuantizedTexture {
    /// Texel-major float texture.
    pub fn dequantize(&self) -> Vec<f64> {
        let n = self.resolution * self.resolution;
        let mut out = vec![0.0; n * self.channels];
        for t in 0..n {
            for c in 0..self.channels {
                out[t * self.channels + c] = self.ranges[c].decode(self.planes[c / 4][4 * t + c % 4]);
            }
        }
        out
    }
}
