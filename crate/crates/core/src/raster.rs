//! Minimal raster type used throughout the pipeline.
//!
//! Pixel centers sit at integer coordinates; `(0, 0)` is the top-left pixel.
//! Intensities are `f32` in `[0, 1]`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{GestaltError, Result};

/// Luminance weights for RGB to grayscale conversion.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(GestaltError::InvalidArgument(format!(
                "{channels} channels; expected 1 or 3"
            )));
        }
        if data.len() != width * height * channels {
            return Err(GestaltError::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample; taps outside the image contribute 0.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let tap = |xx: i64, yy: i64| -> f32 {
            if xx < 0 || yy < 0 || xx >= self.width as i64 || yy >= self.height as i64 {
                0.0
            } else {
                self.get(xx as usize, yy as usize, c)
            }
        };
        let mut v = 0.0;
        // skip zero-weight taps so integer positions reproduce pixels exactly
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                v += wy * wx * tap(xi + dx, yi + dy);
            }
        }
        v
    }

    /// Bilinear sample with edge replication instead of zero fill.
    pub fn sample_bilinear_clamped(&self, x: f64, y: f64, c: usize) -> f32 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        self.sample_bilinear(xc, yc, c)
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(self.width - 1 - x, y, c));
                }
            }
        }
        out
    }

    /// SHA-256 over dimensions and grayscale pixel values.
    pub fn content_hash(&self) -> [u8; 32] {
        let g = self.to_grayscale();
        let mut h = Sha256::new();
        h.update((g.width as u64).to_le_bytes());
        h.update((g.height as u64).to_le_bytes());
        for v in &g.data {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }

    /// Decodes a PNG (gray, gray+alpha, RGB or RGBA) into `[0, 1]` values.
    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| GestaltError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let data = rgb.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
            Image::new(w, h, 3, data)
        } else {
            let l = img.to_luma8();
            let data = l.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
            Image::gray(w, h, data)
        }
    }

    /// Writes an 8-bit PNG, quantizing `[0, 1]` to `0..=255`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color).map_err(|e| {
            GestaltError::Image {
                path: path.to_path_buf(),
                msg: e.to_string(),
            }
        })
    }

    /// Rounds every value to the nearest `k / 255`, matching what a PNG
    /// round trip produces.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f32::from((v.clamp(0.0, 1.0) * 255.0).round() as u8) / 255.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_is_exact_at_pixel_centers_and_interpolates_between() {
        let img = Image::gray(2, 1, vec![0.2, 0.6]).unwrap();
        assert_eq!(img.sample_bilinear(0.0, 0.0, 0), 0.2);
        assert_eq!(img.sample_bilinear(1.0, 0.0, 0), 0.6);
        assert!((img.sample_bilinear(0.5, 0.0, 0) - 0.4).abs() < 1e-6);
        assert_eq!(img.sample_bilinear(-3.0, 0.0, 0), 0.0);
    }

    #[test]
    fn grayscale_uses_luma_weights() {
        let img = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((img.to_grayscale().data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn png_round_trip_matches_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::gray(3, 2, vec![0.0, 0.1, 0.5, 0.77, 0.999, 1.0]).unwrap();
        img.save_png(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap(), img.quantized());
    }
}
