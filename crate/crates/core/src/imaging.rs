//! Panorama buffers and the pixel primitives the augmentation effects build on.
//!
//! A [`Panorama`] covers 360° horizontally, so column arithmetic is taken
//! modulo the width everywhere: the left and right edges are neighbours.
//! All arithmetic runs in floating point and is written back to 8 bits with
//! round-half-to-even.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Row-major interleaved RGB, 8 bits per channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Panorama {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Panorama {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!(
                "panorama dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    /// Builds a panorama by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Applies a per-channel lookup table to every sample.
    pub fn map_lut(&self, lut: &[u8; 256]) -> Panorama {
        Panorama {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| lut[v as usize]).collect(),
        }
    }

    /// Applies `f` to every RGB triple.
    pub fn map_pixels(&self, mut f: impl FnMut([u8; 3]) -> [u8; 3]) -> Panorama {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for px in self.pixels.chunks_exact(3) {
            pixels.extend_from_slice(&f([px[0], px[1], px[2]]));
        }
        Panorama {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Luma (BT.601 weights) as f64, row-major, without rounding.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Panorama> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Panorama::new(w as usize, h as usize, img.into_raw())
    }

    /// Writes a lossless PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction");
        img.save_with_format(path, ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Rounds half to even and clamps to the 8-bit range.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

/// Saturating add of a signed delta to one channel value.
#[inline]
pub fn clamp_add(value: u8, delta: i32) -> u8 {
    (value as i32 + delta).clamp(0, 255) as u8
}

/// Hexcone RGB → HSV. Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;

    let hue = if chroma == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { chroma / max };
    (hue, sat, max)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let sat = sat.clamp(0.0, 1.0);
    let val = val.clamp(0.0, 1.0);
    let chroma = val * sat;
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = chroma * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = val - chroma;
    [
        to_u8((r + m) * 255.0),
        to_u8((g + m) * 255.0),
        to_u8((b + m) * 255.0),
    ]
}

/// Bilinear resize. Horizontally the signal is periodic: output column `x`
/// samples source phase `x * W / w`, interpolating across the seam.
/// Vertically the usual pixel-centre mapping with edge clamping is used.
pub fn resize(p: &Panorama, width: usize, height: usize) -> Result<Panorama> {
    if width == 0 || height == 0 {
        return Err(Error::arg(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    if width == p.width && height == p.height {
        return Ok(p.clone());
    }

    let sx = p.width as f64 / width as f64;
    let sy = p.height as f64 / height as f64;
    let columns: Vec<(usize, usize, f64)> = (0..width)
        .map(|x| {
            let u = x as f64 * sx;
            let x0 = u.floor() as usize % p.width;
            let x1 = (x0 + 1) % p.width;
            (x0, x1, u - u.floor())
        })
        .collect();

    let mut out = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (p.height - 1) as f64);
        let y0 = v.floor() as usize;
        let y1 = (y0 + 1).min(p.height - 1);
        let fy = v - y0 as f64;
        for &(x0, x1, fx) in &columns {
            let a = p.get(x0, y0);
            let b = p.get(x1, y0);
            let c = p.get(x0, y1);
            let d = p.get(x1, y1);
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                out.push(to_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Panorama::new(width, height, out)
}

/// Circular column shift: the column at `x` moves to `(x + shift) mod width`.
/// For a 360° panorama this is exactly a yaw rotation of the camera.
pub fn shift_columns(p: &Panorama, shift: i64) -> Panorama {
    let w = p.width;
    let s = shift.rem_euclid(w as i64) as usize;
    if s == 0 {
        return p.clone();
    }
    let mut pixels = vec![0u8; p.pixels.len()];
    let row_len = w * 3;
    for y in 0..p.height {
        let src = &p.pixels[y * row_len..(y + 1) * row_len];
        let dst = &mut pixels[y * row_len..(y + 1) * row_len];
        // dst[s..] = src[..w-s], dst[..s] = src[w-s..]
        dst[s * 3..].copy_from_slice(&src[..(w - s) * 3]);
        dst[..s * 3].copy_from_slice(&src[(w - s) * 3..]);
    }
    Panorama {
        width: w,
        height: p.height,
        pixels,
    }
}
