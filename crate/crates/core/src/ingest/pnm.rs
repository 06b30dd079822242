//! Binary PGM (P5) and PPM (P6) images.
//!
//! Reading accepts any maxval up to 65535 and `#` comments in the header.
//! Writing always produces 8-bit files; values in [0, 1] are quantized as
//! `floor(255 v + 0.5)`, so 0.5 becomes 128.

use std::fs;
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::grid::Grid;

/// 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(crate::error::shape(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        Self { height, width, pixels: vec![rgb; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// One channel scaled to [0, 1].
    pub fn channel(&self, c: usize) -> Grid {
        Grid::from_fn(self.height, self.width, |y, x| self.get(y, x)[c] as f64 / 255.0)
    }
}

/// A decoded PGM or PPM file.
#[derive(Clone, Debug, PartialEq)]
pub enum Image {
    Gray(Grid),
    Rgb(RgbImage),
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format { path: path.into(), offset, message: message.into() }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(format_err(path, 0, "expected magic number P5 or P6"));
    }
    if !bytes.get(2).is_some_and(|&b| b.is_ascii_whitespace() || b == b'#') {
        return Err(format_err(path, 2, "expected whitespace after the magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, pos, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| format_err(path, start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(path, pos, "expected one whitespace byte before the raster")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err(path, pos, "image has zero size"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, pos, format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header { magic: [bytes[0], bytes[1]], width, height, maxval, data_start: pos })
}

fn samples(path: &Path, bytes: &[u8], h: &Header, per_pixel: usize) -> Result<Vec<usize>> {
    let wide = h.maxval > 255;
    let n = h.width * h.height * per_pixel;
    let need = n * if wide { 2 } else { 1 };
    let raster = &bytes[h.data_start..];
    if raster.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("raster truncated: need {need} bytes, found {}", raster.len()),
        ));
    }
    let values: Vec<usize> = if wide {
        raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
    } else {
        raster[..need].iter().map(|&b| b as usize).collect()
    };
    if let Some(i) = values.iter().position(|&v| v > h.maxval) {
        let offset = h.data_start + i * if wide { 2 } else { 1 };
        return Err(format_err(path, offset, format!("sample exceeds maxval {}", h.maxval)));
    }
    Ok(values)
}

/// Reads a P5 or P6 file.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let h = parse_header(path, &bytes)?;
    if h.magic[1] == b'5' {
        let v = samples(path, &bytes, &h, 1)?;
        let data = v.iter().map(|&s| s as f64 / h.maxval as f64).collect();
        Ok(Image::Gray(Grid::new(h.height, h.width, data)?))
    } else {
        let v = samples(path, &bytes, &h, 3)?;
        let scale = |s: usize| -> u8 {
            if h.maxval == 255 {
                s as u8
            } else {
                quantize(s as f64 / h.maxval as f64)
            }
        };
        let pixels = v.chunks_exact(3).map(|c| [scale(c[0]), scale(c[1]), scale(c[2])]).collect();
        Ok(Image::Rgb(RgbImage::new(h.height, h.width, pixels)?))
    }
}

/// Reads a grayscale frame; values are `sample / maxval`.
pub fn load_gray(path: &Path) -> Result<Grid> {
    match load_image(path)? {
        Image::Gray(g) => Ok(g),
        Image::Rgb(_) => Err(format_err(path, 0, "expected a grayscale (P5) image, found P6")),
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    match load_image(path)? {
        Image::Rgb(img) => Ok(img),
        Image::Gray(_) => Err(format_err(path, 0, "expected a color (P6) image, found P5")),
    }
}

pub fn encode_pgm(grid: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.data().iter().map(|&v| quantize(v)));
    out
}

pub fn save_gray(grid: &Grid, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(grid)).map_err(io_err(path))
}

pub fn save_rgb(image: &RgbImage, path: &Path) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().flatten());
    fs::write(path, out).map_err(io_err(path))
}
