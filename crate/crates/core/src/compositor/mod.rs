//! Soft-mask compositing of a rendered face over its background frame.

mod pnm;

pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm};

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Length {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }
}

/// Single-channel mask with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Length {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(x) = data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Invalid(format!("mask sample {x} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Erosion radius and feather σ, both in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub radius: usize,
    pub sigma: f64,
}

impl MaskParams {
    /// Radius 4 and σ 3 at width 512, scaled linearly with the width.
    pub fn for_width(width: usize) -> Self {
        let s = width as f64 / 512.0;
        Self {
            radius: (4.0 * s).round() as usize,
            sigma: 3.0 * s,
        }
    }
}

/// Minimum over a `(2r+1)`-sample window along one axis; samples outside
/// the image count as 0.
fn min_pass(src: &[f64], w: usize, h: usize, r: usize, horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (pos, len) = if horizontal { (x, w) } else { (y, h) };
            if pos < r || pos + r >= len {
                continue;
            }
            let mut m = f64::INFINITY;
            for d in 0..=2 * r {
                let v = if horizontal {
                    src[y * w + x + d - r]
                } else {
                    src[(y + d - r) * w + x]
                };
                m = m.min(v);
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Erosion with a square structuring element of side `2·radius + 1`.
pub fn erode_mask(mask: &SoftMask, radius: usize) -> SoftMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let rows = min_pass(&mask.data, w, h, radius, true);
    SoftMask {
        width: w,
        height: h,
        data: min_pass(&rows, w, h, radius, false),
    }
}

/// Unnormalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Gaussian taps normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(sigma);
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Normalizes by dividing the weighted sum by the tap sum, so constant
/// 0 and 1 regions stay exactly 0 and 1.
fn blur_pass(src: &[f64], w: usize, h: usize, k: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let norm: f64 = k.iter().sum();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &t) in k.iter().enumerate() {
                let d = j as i64 - r;
                let v = if horizontal {
                    src[y * w + (x as i64 + d).clamp(0, w as i64 - 1) as usize]
                } else {
                    src[(y as i64 + d).clamp(0, h as i64 - 1) as usize * w + x]
                };
                acc += t * v;
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn feather_mask(mask: &SoftMask, sigma: f64) -> SoftMask {
    if sigma.is_nan() || sigma <= 0.0 || mask.data.is_empty() {
        return mask.clone();
    }
    let k = gaussian_taps(sigma);
    let (w, h) = (mask.width, mask.height);
    let rows = blur_pass(&mask.data, w, h, &k, true);
    let data = blur_pass(&rows, w, h, &k, false)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    SoftMask { width: w, height: h, data }
}

/// Erodes then feathers a binary face mask.
pub fn soft_mask(mask: &SoftMask, params: MaskParams) -> SoftMask {
    feather_mask(&erode_mask(mask, params.radius), params.sigma)
}

/// Per sample `round(m·fg + (1 − m)·bg)`, rounding half away from zero.
pub fn composite(fg: &ImageBuffer, bg: &ImageBuffer, mask: &SoftMask) -> Result<ImageBuffer> {
    let dims = (fg.width, fg.height);
    for other in [(bg.width, bg.height), (mask.width, mask.height)] {
        if other != dims {
            return Err(Error::Shape {
                op: "composite",
                lhs: dims,
                rhs: other,
            });
        }
    }
    let mut data = Vec::with_capacity(fg.data.len());
    for y in 0..fg.height {
        for x in 0..fg.width {
            let m = mask.at(x, y);
            for c in 0..3 {
                let i = (y * fg.width + x) * 3 + c;
                let v = m * fg.data[i] as f64 + (1.0 - m) * bg.data[i] as f64;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(ImageBuffer {
        width: fg.width,
        height: fg.height,
        data,
    })
}
