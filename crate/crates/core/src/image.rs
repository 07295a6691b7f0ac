//! The image value type and PNG/JPEG file I/O.
//!
//! Pixels are stored planar (`C×H×W`) in `[0, 1]`. Conversion to the
//! generator's `[-1, 1]` range happens only at the model boundary through
//! [`Image::to_signed`] and [`Image::from_signed`].

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Gray,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Rgb => 3,
            ColorSpace::Gray => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
    color: ColorSpace,
}

impl Image {
    /// Validates shape, finiteness and the `[0, 1]` range.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        let color = match c {
            1 => ColorSpace::Gray,
            3 => ColorSpace::Rgb,
            _ => return Err(Error::shape(format!("images have 1 or 3 channels, got {c}"))),
        };
        if h == 0 || w == 0 {
            return Err(Error::shape(format!("empty image {h}x{w}")));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::arg(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image { data, color })
    }

    /// Builds an image from arbitrary finite data, clamping into `[0, 1]`.
    pub fn from_clamped(mut data: Array3<f64>) -> Self {
        let c = data.dim().0;
        assert!(c == 1 || c == 3, "images have 1 or 3 channels, got {c}");
        data.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        let color = if c == 1 { ColorSpace::Gray } else { ColorSpace::Rgb };
        Image { data, color }
    }

    pub fn constant(height: usize, width: usize, color: ColorSpace, value: f64) -> Self {
        Image::from_clamped(Array3::from_elem((color.channels(), height, width), value))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        color: ColorSpace,
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Self {
        Image::from_clamped(Array3::from_shape_fn((color.channels(), height, width), f))
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn color(&self) -> ColorSpace {
        self.color
    }

    /// Planar `C×H×W` pixel data.
    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[[c, y, x]]
    }

    /// Maps to the model range `[-1, 1]`.
    pub fn to_signed(&self) -> Array3<f64> {
        self.data.mapv(|v| v * 2.0 - 1.0)
    }

    /// Inverse of [`Image::to_signed`], clamping into `[0, 1]`.
    pub fn from_signed(data: &Array3<f64>) -> Self {
        Image::from_clamped(data.mapv(|v| (v + 1.0) * 0.5))
    }

    pub fn to_rgb(&self) -> Image {
        match self.color {
            ColorSpace::Rgb => self.clone(),
            ColorSpace::Gray => {
                let plane = self.data.index_axis(Axis(0), 0);
                let data = ndarray::stack![Axis(0), plane, plane, plane];
                Image {
                    data,
                    color: ColorSpace::Rgb,
                }
            }
        }
    }

    /// ITU-R BT.601 luma in byte range `[0, 255]`.
    pub fn luma_bytes(&self) -> Array2<f64> {
        match self.color {
            ColorSpace::Gray => self.data.index_axis(Axis(0), 0).mapv(|v| v * 255.0),
            ColorSpace::Rgb => {
                let r = self.data.index_axis(Axis(0), 0);
                let g = self.data.index_axis(Axis(0), 1);
                let b = self.data.index_axis(Axis(0), 2);
                let mut y = Array2::zeros(r.raw_dim());
                ndarray::Zip::from(&mut y)
                    .and(&r)
                    .and(&g)
                    .and(&b)
                    .for_each(|y, &r, &g, &b| *y = 255.0 * (0.299 * r + 0.587 * g + 0.114 * b));
                y
            }
        }
    }

    /// Largest centered square crop.
    pub fn center_crop_square(&self) -> Image {
        let (h, w) = (self.height(), self.width());
        let side = h.min(w);
        let (oy, ox) = ((h - side) / 2, (w - side) / 2);
        self.crop(oy, ox, side, side)
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Image {
        let data = self
            .data
            .slice(ndarray::s![.., y..y + h, x..x + w])
            .to_owned();
        Image {
            data,
            color: self.color,
        }
    }

    /// Bytes as written to disk: `round(v·255)`, interleaved.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, h, w) = self.data.dim();
        let mut out = Vec::with_capacity(c * h * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out.push(quantize(self.data[[ch, y, x]]));
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], height: usize, width: usize, color: ColorSpace) -> Result<Self> {
        let c = color.channels();
        if bytes.len() != c * height * width {
            return Err(Error::shape(format!(
                "expected {} bytes for {height}x{width}x{c}, got {}",
                c * height * width,
                bytes.len()
            )));
        }
        let data = Array3::from_shape_fn((c, height, width), |(ch, y, x)| {
            bytes[(y * width + x) * c + ch] as f64 / 255.0
        });
        Ok(Image { data, color })
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }
}

/// `round(v·255)` with clamping, so values a hair above 1 never wrap.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Round-trips an image through 8-bit quantization.
pub fn quantize_image(img: &Image) -> Image {
    Image {
        data: img.data.mapv(|v| quantize(v) as f64 / 255.0),
        color: img.color,
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected PNG or JPEG, detected {other:?}"),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let single_channel = matches!(
        decoded.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if single_channel {
        let buf = decoded.to_luma8();
        Image::from_bytes(buf.as_raw(), buf.height() as usize, buf.width() as usize, ColorSpace::Gray)
    } else {
        let buf = decoded.to_rgb8();
        Image::from_bytes(buf.as_raw(), buf.height() as usize, buf.width() as usize, ColorSpace::Rgb)
    }
}

/// Writes a PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let color = match img.color {
        ColorSpace::Rgb => image::ExtendedColorType::Rgb8,
        ColorSpace::Gray => image::ExtendedColorType::L8,
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&img.to_bytes(), img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out)
}

/// Lays panels out in a grid, `rows` × `cols`, all panels the same size.
pub fn grid(panels: &[Image], cols: usize) -> Result<Image> {
    let first = panels
        .first()
        .ok_or_else(|| Error::arg("grid needs at least one panel"))?;
    let (h, w) = (first.height(), first.width());
    if panels.iter().any(|p| p.height() != h || p.width() != w) {
        return Err(Error::shape("grid panels must share dimensions"));
    }
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols);
    let mut data = Array3::zeros((3, rows * h, cols * w));
    for (i, p) in panels.iter().enumerate() {
        let rgb = p.to_rgb();
        let (r, c) = (i / cols, i % cols);
        data.slice_mut(ndarray::s![.., r * h..(r + 1) * h, c * w..(c + 1) * w])
            .assign(rgb.data());
    }
    Ok(Image::from_clamped(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_extremes_normalize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = Image::from_fn(2, 2, ColorSpace::Rgb, |(_, y, _)| if y == 0 { 1.0 } else { 0.0 });
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.get(0, 0, 0), 1.0);
        assert_eq!(back.get(1, 1, 2), 0.0);
        assert_eq!(back.color(), ColorSpace::Rgb);
    }

    #[test]
    fn half_gray_quantizes_to_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        save_image(&Image::constant(4, 4, ColorSpace::Gray, 0.5), &path).unwrap();
        let raw = image::open(&path).unwrap().to_luma8();
        assert!(raw.as_raw().iter().all(|&b| b == 128));
        assert_eq!(load_image(&path).unwrap().color(), ColorSpace::Gray);
    }

    #[test]
    fn quantize_clamps() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.0 + 1e-7), 255);
        assert_eq!(quantize(-0.01), 0);
    }

    #[test]
    fn rejects_out_of_range_and_bad_channels() {
        assert!(Image::new(Array3::from_elem((3, 2, 2), 1.5)).is_err());
        assert!(Image::new(Array3::from_elem((2, 2, 2), 0.5)).is_err());
        assert!(Image::new(Array3::from_elem((3, 2, 2), f64::NAN)).is_err());
    }

    #[test]
    fn missing_and_bogus_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("nope.png")), Err(Error::Io { .. })));
        let bogus = dir.path().join("bogus.png");
        std::fs::write(&bogus, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&bogus), Err(Error::Format { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn png_round_trip_within_quantization(vals in proptest::collection::vec(0.0f64..=1.0, 3 * 5 * 7)) {
            let img = Image::new(Array3::from_shape_vec((3, 5, 7), vals).unwrap()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.png");
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            for (a, b) in img.data().iter().zip(back.data().iter()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }
}
