//! Grayscale frames in [0, 1] plus binary portable-graymap I/O.
//!
//! The in-memory pipeline stays in floats; 8-bit quantization happens only
//! when a frame is written to disk.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image size {width}x{height} is empty"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] += value;
    }

    pub fn clamp_intensities(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Nearest-pixel sample with coordinates clamped to the image bounds.
    #[inline]
    pub fn sample_nearest(&self, x: f64, y: f64) -> f64 {
        let xi = (x.round().max(0.0) as usize).min(self.width - 1);
        let yi = (y.round().max(0.0) as usize).min(self.height - 1);
        self.get(xi, yi)
    }

    /// Quantize to 8 bits, exactly as PGM output does.
    pub fn quantized(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Write as binary PGM (P5, maxval 255).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.quantized());
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Read a binary PGM written by [`write_pgm`]; intensities map back to
    /// v / 255.
    ///
    /// [`write_pgm`]: GrayImage::write_pgm
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let bad = |reason: &str| Error::ModelFormat {
            section: "pgm",
            reason: format!("{}: {reason}", path.display()),
        };

        let token = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
            let mut out = String::new();
            loop {
                let mut byte = [0u8; 1];
                reader
                    .read_exact(&mut byte)
                    .map_err(|e| Error::io(path, e))?;
                let ch = byte[0] as char;
                if ch == '#' {
                    let mut comment = String::new();
                    reader
                        .read_line(&mut comment)
                        .map_err(|e| Error::io(path, e))?;
                    continue;
                }
                if ch.is_ascii_whitespace() {
                    if out.is_empty() {
                        continue;
                    }
                    return Ok(out);
                }
                out.push(ch);
            }
        };

        if token(&mut reader)? != "P5" {
            return Err(bad("not a binary PGM"));
        }
        let width: usize = token(&mut reader)?.parse().map_err(|_| bad("bad width"))?;
        let height: usize = token(&mut reader)?.parse().map_err(|_| bad("bad height"))?;
        let maxval: usize = token(&mut reader)?.parse().map_err(|_| bad("bad maxval"))?;
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        let mut pixels = vec![0u8; width * height];
        reader
            .read_exact(&mut pixels)
            .map_err(|e| Error::io(path, e))?;
        let mut image = GrayImage::new(width, height)?;
        for (dst, &src) in image.data.iter_mut().zip(&pixels) {
            *dst = f64::from(src) / 255.0;
        }
        Ok(image)
    }
}
