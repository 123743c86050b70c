//! Float images in `[C,H,W]` layout on the 0-255 scale.

use serde::{Deserialize, Serialize};

use crate::pnm::PnmImage;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Scales to `[0, 1]` for model input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.channels, self.height, self.width], self.data.iter().map(|v| v / 255.0).collect())
            .expect("image shape")
    }

    /// Rounds and clamps to 8-bit; 1 or 3 channels.
    pub fn to_pnm(&self) -> PnmImage {
        assert!(self.channels == 1 || self.channels == 3, "PNM needs 1 or 3 channels");
        let plane = self.height * self.width;
        let mut bytes = Vec::with_capacity(self.data.len());
        for p in 0..plane {
            for c in 0..self.channels {
                bytes.push(self.data[c * plane + p].round().clamp(0.0, 255.0) as u8);
            }
        }
        PnmImage { width: self.width, height: self.height, channels: self.channels, data: bytes }
    }

    pub fn from_pnm(img: &PnmImage) -> Self {
        let plane = img.width * img.height;
        let mut data = vec![0.0; plane * img.channels];
        for p in 0..plane {
            for c in 0..img.channels {
                data[c * plane + p] = f64::from(img.data[p * img.channels + c]);
            }
        }
        Self { channels: img.channels, height: img.height, width: img.width, data }
    }
}
