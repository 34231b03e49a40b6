//! The golden compositing scene and a direct 2D mask oracle.

use std::path::PathBuf;

use stylecycle::compositor::{composite, soft_mask, ImageBuffer, MaskParams, SoftMask};

pub const W: usize = 64;
pub const H: usize = 48;
pub const PARAMS: MaskParams = MaskParams { radius: 2, sigma: 1.5 };

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_composite.ppm")
}

/// Fixed foreground, background and binary ellipse mask.
pub fn scene() -> (ImageBuffer, ImageBuffer, SoftMask) {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut mask = Vec::new();
    for y in 0..H {
        for x in 0..W {
            fg.extend_from_slice(&[(x * 5) as u8, (y * 7) as u8, ((x * y) % 256) as u8]);
            let check = if (x / 4 + y / 4) % 2 == 0 { 220 } else { 35 };
            bg.extend_from_slice(&[check, 128, 255 - check]);
            let (dx, dy) = ((x as f64 - 31.5) / 26.0, (y as f64 - 23.5) / 18.0);
            mask.push(if dx * dx + dy * dy <= 1.0 { 1.0 } else { 0.0 });
        }
    }
    (
        ImageBuffer::new(W, H, fg).unwrap(),
        ImageBuffer::new(W, H, bg).unwrap(),
        SoftMask::new(W, H, mask).unwrap(),
    )
}

pub fn render() -> (ImageBuffer, SoftMask) {
    let (fg, bg, mask) = scene();
    let soft = soft_mask(&mask, PARAMS);
    (composite(&fg, &bg, &soft).unwrap(), soft)
}

/// Direct 2D erosion (zero outside the image) followed by a 2D Gaussian
/// (clamp-to-edge), written independently of the separable library passes.
pub fn oracle_mask(m: &SoftMask, p: MaskParams) -> Vec<f64> {
    let (w, h) = (m.width as i64, m.height as i64);
    let r = p.radius as i64;
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            m.data[(y * w + x) as usize]
        }
    };
    let mut eroded = vec![0.0; m.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut v = 1.0f64;
            for dy in -r..=r {
                for dx in -r..=r {
                    v = v.min(at(x + dx, y + dy));
                }
            }
            eroded[(y * w + x) as usize] = v;
        }
    }
    let s = p.sigma;
    if s <= 0.0 {
        return eroded;
    }
    let kr = (3.0 * s).ceil() as i64;
    let g = |d: i64| (-(d * d) as f64 / (2.0 * s * s)).exp();
    let norm: f64 = (-kr..=kr).map(g).sum();
    let mut out = vec![0.0; m.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -kr..=kr {
                for dx in -kr..=kr {
                    let xx = (x + dx).clamp(0, w - 1);
                    let yy = (y + dy).clamp(0, h - 1);
                    acc += g(dx) * g(dy) * eroded[(yy * w + xx) as usize];
                }
            }
            out[(y * w + x) as usize] = (acc / (norm * norm)).clamp(0.0, 1.0);
        }
    }
    out
}
