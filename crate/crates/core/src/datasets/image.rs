use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height, width and channel count a backbone expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub const fn rgb(height: usize, width: usize) -> Self {
        InputShape {
            height,
            width,
            channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("input shape must have non-zero height and width".into()));
        }
        if self.channels != 3 {
            return Err(Error::Config(format!(
                "only 3-channel input shapes are supported, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

/// RGB image with values in `[0, 1]`, stored row-major as height × width × 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input("image has a zero dimension".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Input("image values must be finite and within [0, 1]".into()));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Builds an image from `f(x, y, channel)`, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + channel]
    }

    pub fn set(&mut self, x: usize, y: usize, channel: usize, value: f32) {
        self.data[(y * self.width + x) * 3 + channel] = value.clamp(0.0, 1.0);
    }

    pub fn has_shape(&self, shape: InputShape) -> bool {
        self.width == shape.width && self.height == shape.height
    }

    /// Bilinear resize of the whole image, no crop. Returns a copy unchanged
    /// when the size already matches.
    pub fn resized(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length checked at construction");
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        let data = out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image {
            width,
            height,
            data,
        }
    }

    /// Quantizes to 8-bit and writes a PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer length checked at construction");
        buf.save(path)
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
    }
}

/// Decodes an image file to RGB in `[0, 1]` and resizes it to `shape`.
/// Grayscale sources are replicated across the three channels.
pub fn load_image(path: &Path, shape: InputShape) -> Result<Image> {
    shape.validate()?;
    let unreadable = |e: std::io::Error| Error::Input(format!("cannot read {}: {e}", path.display()));
    let decoded = image::ImageReader::open(path)
        .map_err(unreadable)?
        .with_guessed_format()
        .map_err(unreadable)?
        .decode()
        .map_err(|e| Error::Input(format!("cannot decode {}: {e}", path.display())))?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::Input(format!("{} has a zero dimension", path.display())));
    }
    let rgb = decoded.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let image = Image::new(w, h, data)?;
    Ok(image.resized(shape.width, shape.height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    #[test]
    fn large_frame_resizes_to_input_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.png");
        Image::from_fn(640, 480, |x, y, c| ((x + y + c) % 255) as f32 / 255.0)
            .save_png(&path)
            .unwrap();
        let img = load_image(&path, InputShape::rgb(227, 227)).unwrap();
        assert_eq!((img.width(), img.height()), (227, 227));
        assert_eq!(img.data().len(), 227 * 227 * 3);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_size_preserves_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("same.png");
        let src = Image::from_fn(8, 6, |x, y, c| ((x * 31 + y * 7 + c * 50) % 256) as f32 / 255.0);
        src.save_png(&path).unwrap();
        let img = load_image(&path, InputShape::rgb(6, 8)).unwrap();
        for (a, b) in img.data().iter().zip(src.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn grayscale_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let gray = image::GrayImage::from_fn(5, 4, |x, y| image::Luma([(x * 40 + y * 10) as u8]));
        gray.save(&path).unwrap();
        let img = load_image(&path, InputShape::rgb(4, 5)).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                let r = img.get(x, y, 0);
                assert_eq!(r, img.get(x, y, 1));
                assert_eq!(r, img.get(x, y, 2));
                assert!((r - (x * 40 + y * 10) as f32 / 255.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unreadable_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not an image").unwrap();
        let e = load_image(&path, InputShape::rgb(4, 4)).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Input);
        let e = load_image(&dir.path().join("missing.png"), InputShape::rgb(4, 4)).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Input);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert_eq!(Image::new(0, 3, vec![]).unwrap_err().kind(), ErrorKind::Input);
    }
}
