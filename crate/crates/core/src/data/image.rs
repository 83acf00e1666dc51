use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageFormat, ImageReader};

use super::{DataError, Result};
use crate::tensor::Tensor;

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DataError::InvalidImage(format!(
                "{width}×{height} has no pixels"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(DataError::InvalidImage(format!(
                "{width}×{height} RGB needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the `size×size` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height || width == 0 || height == 0 {
            return Err(DataError::InvalidImage(format!(
                "window {width}×{height} at ({x},{y}) outside {}×{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for row in y..y + height {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Self::new(width, height, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormatKind {
    Png,
    Ppm,
}

impl ImageFormatKind {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(Self::Png),
            Some("ppm") | Some("pnm") => Ok(Self::Ppm),
            _ => Err(DataError::UnknownFormat {
                path: path.to_path_buf(),
            }),
        }
    }
}

/// Reads a PNG or binary PPM. Gray and alpha variants are accepted and
/// expanded to RGB; anything wider than 8 bits per sample is rejected.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decode_err = |msg: String| DataError::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    if reader.format().is_none() {
        return Err(decode_err("unrecognized file signature".into()));
    }
    let decoded = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let rgb = match decoded {
        DynamicImage::ImageRgb8(buf) => buf,
        img @ (DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgba8(_)) => img.to_rgb8(),
        other => {
            return Err(DataError::UnsupportedDepth {
                path: path.to_path_buf(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    Image::new(w as usize, h as usize, rgb.into_raw())
}

/// Writes PNG or binary PPM (P6), chosen by extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let encode_err = |e: image::ImageError| DataError::Encode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let (w, h) = (img.width as u32, img.height as u32);
    let mut bytes = Vec::new();
    match ImageFormatKind::from_path(path)? {
        ImageFormatKind::Png => {
            image::write_buffer_with_format(
                &mut Cursor::new(&mut bytes),
                &img.data,
                w,
                h,
                ExtendedColorType::Rgb8,
                ImageFormat::Png,
            )
            .map_err(encode_err)?;
        }
        ImageFormatKind::Ppm => {
            PnmEncoder::new(&mut bytes)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .encode(img.data.as_slice(), w, h, ExtendedColorType::Rgb8)
                .map_err(encode_err)?;
        }
    }
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `3×H×W` tensor with samples scaled to `[0, 1]`.
pub fn image_to_tensor(img: &Image) -> Tensor {
    let plane = img.width * img.height;
    let mut out = vec![0.0; 3 * plane];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = f64::from(px[c]) / 255.0;
        }
    }
    Tensor::new([3, img.height, img.width], out).expect("extents validated by Image")
}

/// Clamps to `[0, 1]` and rounds half up to 8 bits.
pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    let (c, h, w) = t
        .dims3()
        .map_err(|e| DataError::InvalidImage(e.to_string()))?;
    if c != 3 {
        return Err(DataError::InvalidImage(format!(
            "expected 3 channels, got {c}"
        )));
    }
    let plane = h * w;
    let src = t.data();
    let mut data = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            data.push(quantize(src[ch * plane + i]));
        }
    }
    Image::new(w, h, data)
}

fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}
