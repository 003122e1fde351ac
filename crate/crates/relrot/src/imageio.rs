//! PNG reading and writing for the two modalities.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use relrot_core::Image;

use crate::error::{AppError, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

/// 8-bit colour PNG as three channels in [0, 1].
pub fn read_color(path: &Path) -> Result<Image> {
    let rgb = open(path)?.into_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::from_vec(h as usize, w as usize, 3, data).map_err(AppError::data)
}

/// Raw depth: a 16-bit single-channel PNG, values kept in sensor units.
pub fn read_raw_depth(path: &Path) -> Result<Image> {
    let img = open(path)?;
    if !matches!(img, DynamicImage::ImageLuma16(_)) {
        return Err(AppError::Data(format!(
            "{}: raw depth must be a 16-bit single-channel PNG, found {:?}",
            path.display(),
            img.color()
        )));
    }
    let g = img.into_luma16();
    let (w, h) = g.dimensions();
    let data = g.into_raw().into_iter().map(f32::from).collect();
    Image::from_vec(h as usize, w as usize, 1, data).map_err(AppError::data)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a one- or three-channel image with values in [0, 1] as 8-bit PNG.
pub fn write_unit(img: &Image, path: &Path) -> Result<()> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let dynimg = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer matches image")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer matches image")),
        c => return Err(AppError::Data(format!("cannot write a {c}-channel image"))),
    };
    save(dynimg, path)
}

/// Write raw depth as a 16-bit single-channel PNG, rounding to whole units.
pub fn write_raw_depth(img: &Image, path: &Path) -> Result<()> {
    if img.channels() != 1 {
        return Err(AppError::Data("raw depth must have one channel".into()));
    }
    let vals: Vec<u16> = img.data().iter().map(|&v| v.round().clamp(0.0, 65535.0) as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, vals).expect("buffer matches image");
    save(DynamicImage::ImageLuma16(buf), path)
}

/// Write an 8-bit RGB buffer.
pub fn write_rgb(width: u32, height: u32, pixels: Vec<u8>, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(width, height, pixels)
        .ok_or_else(|| AppError::Data("pixel buffer does not match the image size".into()))?;
    save(DynamicImage::ImageRgb8(buf), path)
}
