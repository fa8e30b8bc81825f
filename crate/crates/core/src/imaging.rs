//! Floating-point RGB image buffer plus PNG helpers.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with channel values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: [f64; 3]) -> Self {
        Image {
            width,
            height,
            data: vec![fill; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: [f64; 3]) {
        let w = self.width;
        self.data[(y * w + x) as usize] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width, self.height);
        for (i, px) in out.pixels_mut().enumerate() {
            let c = self.data[i];
            *px = image::Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]);
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Image {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    /// Snap every channel to the nearest 8-bit level.
    pub fn quantize_u8(&mut self) {
        for px in &mut self.data {
            for c in px.iter_mut() {
                *c = to_u8(*c) as f64 / 255.0;
            }
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::image(path, e))
}
