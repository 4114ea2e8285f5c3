//! Interleaved RGB float images and 8-bit PNG conversion.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("buffer of {got} values does not match {width}x{height}x3")]
    BufferSize { width: u32, height: u32, got: usize },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("png decode error on {path}: {message}")]
    Decode { path: String, message: String },
    #[error("png encode error on {path}: {message}")]
    Encode { path: String, message: String },
}

/// Row-major `height × width × 3` image with channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn filled(width: u32, height: u32, rgb: [T; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self::filled(width, height, [T::zero(); 3])
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Result<Self, ImageError> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(ImageError::BufferSize { width, height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [T; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [T; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image<T>) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::ShapeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|v| v.cast()).collect() }
    }

    /// 8-bit quantization: clamp to `[0, 1]` then round to the nearest of 256 levels.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64_lossy();
                let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
                (x * 255.0).round() as u8
            })
            .collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self, ImageError> {
        let scale = T::one() / T::of(255.0);
        Self::from_vec(width, height, bytes.iter().map(|b| T::of(f64::from(*b)) * scale).collect())
    }

    /// The image as it reads back after an 8-bit round trip.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(self.width, self.height, &self.to_rgb8()).expect("same shape")
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        write_png_rgb8(path, self.width, self.height, &self.to_rgb8())
    }

    pub fn read_png(path: &Path) -> Result<Self, ImageError> {
        let (w, h, rgb) = read_png_rgb8(path)?;
        Self::from_rgb8(w, h, &rgb)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("in-memory png header");
            w.write_image_data(&self.to_rgb8()).expect("in-memory png data");
        }
        out
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io { path: path.display().to_string(), source }
}

pub fn write_png_rgb8(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<(), ImageError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| ImageError::Encode { path: path.display().to_string(), message: e.to_string() };
    let mut writer = enc.write_header().map_err(encode)?;
    writer.write_image_data(rgb).map_err(encode)?;
    writer.finish().map_err(encode)?;
    Ok(())
}

/// Decodes any 8/16-bit PNG into packed RGB8.
pub fn read_png_rgb8(path: &Path) -> Result<(u32, u32, Vec<u8>), ImageError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let decode = |m: String| ImageError::Decode { path: path.display().to_string(), message: m };
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| decode(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| decode("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(decode("unexpanded palette".into())),
    };
    let rgb = match channels {
        3 => buf,
        1 | 2 => buf.chunks_exact(channels).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        _ => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
    };
    Ok((info.width, info.height, rgb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_preserves_quantized_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::<f32>::zeros(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).fract();
        }
        let img = img.quantized();
        let path = dir.path().join("x.png");
        img.write_png(&path).unwrap();
        assert_eq!(Image::<f32>::read_png(&path).unwrap(), img);
    }

    #[test]
    fn quantization_clamps() {
        let img = Image::<f64>::from_vec(1, 1, vec![-0.5, 0.5, 7.0]).unwrap();
        assert_eq!(img.to_rgb8(), vec![0, 128, 255]);
    }

    #[test]
    fn wrong_buffer_size_is_rejected() {
        assert!(matches!(Image::<f32>::from_vec(2, 2, vec![0.0; 11]), Err(ImageError::BufferSize { .. })));
    }
}
