//! Interleaved `height x width x channels` images with `f32` samples.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Copy of the window with top-left corner `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Image {
        assert!(y0 + height <= self.height && x0 + width <= self.width);
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Image {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Bilinear resampling (pixel-centre aligned).
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let mut out = Image::new(height, width, self.channels);
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f32;
                for c in 0..self.channels {
                    let top = self.get(y0, x0, c) * (1.0 - tx) + self.get(y0, x1, c) * tx;
                    let bottom = self.get(y1, x0, c) * (1.0 - tx) + self.get(y1, x1, c) * tx;
                    out.set(y, x, c, top * (1.0 - ty) + bottom * ty);
                }
            }
        }
        out
    }

    /// Write this image as item `n` of a `(batch, c, h, w)` tensor buffer.
    pub fn write_chw<T: Real>(&self, dst: &mut [T]) {
        let plane = self.height * self.width;
        assert_eq!(dst.len(), plane * self.channels);
        for (i, px) in self.data.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                dst[c * plane + i] = T::lit(v as f64);
            }
        }
    }

    /// Stack same-sized images into a `(batch, c, h, w)` tensor.
    pub fn batch<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut t = Tensor::zeros(&[images.len(), c, h, w]);
        for (i, img) in images.iter().enumerate() {
            if (img.height, img.width, img.channels) != (h, w, c) {
                return Err(Error::Shape(format!(
                    "batch mixes {h}x{w}x{c} with {}x{}x{}",
                    img.height, img.width, img.channels
                )));
            }
            img.write_chw(t.item_mut(i));
        }
        Ok(t)
    }

    /// Item `n` of a `(batch, c, h, w)` tensor as an interleaved image.
    pub fn from_chw<T: Real>(t: &Tensor<T>, n: usize) -> Image {
        let (_, c, h, w) = t.dims4();
        let src = t.item(n);
        Image::from_fn(h, w, c, |y, x, ch| src[(ch * h + y) * w + x].to_f32().unwrap_or(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_round_trip() {
        let img = Image::from_fn(3, 2, 3, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let t: Tensor<f32> = Image::batch(&[&img, &img]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 3, 2]);
        assert_eq!(t.at4(1, 2, 1, 0), 102.0);
        assert_eq!(Image::from_chw(&t, 1), img);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = Image::from_fn(5, 7, 1, |_, _, _| 0.25);
        let r = img.resize(11, 3);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
