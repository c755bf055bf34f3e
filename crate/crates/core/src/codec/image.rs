use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};

/// Pixel image in `[0,1]`, stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return invalid(format!("image {height}x{width}x{channels}"));
        }
        if data.len() != height * width * channels {
            return shape_err(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("pixel value {v} outside [0,1]"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, pixel: &[f64]) -> Result<Self> {
        let data = pixel.iter().copied().cycle().take(height * width * pixel.len()).collect();
        Self::new(height, width, pixel.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Mean of one channel.
    pub fn channel_mean(&self, channel: usize) -> f64 {
        let n = (self.height * self.width) as f64;
        self.data.iter().skip(channel).step_by(self.channels).sum::<f64>() / n
    }

    pub fn channel_std(&self, channel: usize) -> f64 {
        let mean = self.channel_mean(channel);
        let n = (self.height * self.width) as f64;
        let var = self
            .data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        if self.dims() != other.dims() {
            return shape_err(format!("compare {:?} with {:?}", self.dims(), other.dims()));
        }
        let n = self.data.len() as f64;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }

    /// 8-bit encoding with round-half-up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, channels, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
        image::save_buffer(path, &self.to_bytes(), self.width as u32, self.height as u32, color)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(source) => Error::Path { path: path.to_owned(), source },
            other => Error::Image(other),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color().channel_count() {
            1 | 2 => Self::from_bytes(h, w, 1, img.to_luma8().as_raw()),
            _ => Self::from_bytes(h, w, 3, img.to_rgb8().as_raw()),
        }
    }

    /// Places images side by side, separated by `gap` columns of white.
    pub fn strip(images: &[Image], gap: usize) -> Result<Image> {
        let Some(first) = images.first() else {
            return Err(Error::Empty("no images for strip".into()));
        };
        let (h, w, c) = first.dims();
        if images.iter().any(|im| im.dims() != (h, w, c)) {
            return shape_err("strip panels must share dimensions");
        }
        let total_w = images.len() * w + (images.len() - 1) * gap;
        let mut data = vec![1.0; h * total_w * c];
        for (k, im) in images.iter().enumerate() {
            let x0 = k * (w + gap);
            for r in 0..h {
                let dst = (r * total_w + x0) * c;
                data[dst..dst + w * c].copy_from_slice(&im.data[r * w * c..(r + 1) * w * c]);
            }
        }
        Image::new(h, total_w, c, data)
    }
}
