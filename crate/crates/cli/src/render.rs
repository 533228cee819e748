//! Equirectangular rendering of tessellated intensity values to binary PGM.

use anyhow::{bail, Result};
use sphericam_core::geometry::{direction_from_deg, Tessellation};

/// Fixed pixel-to-node mapping for one tessellation and image width; the
/// lookup is reused across frames.
pub struct Renderer {
    width: usize,
    height: usize,
    nearest: Vec<usize>,
}

impl Renderer {
    pub fn new(tess: &Tessellation, width: usize) -> Result<Renderer> {
        if width < 4 || width % 2 != 0 {
            bail!("render width {width} must be even and at least 4");
        }
        let height = width / 2;
        let mut nearest = Vec::with_capacity(width * height);
        for row in 0..height {
            let el = 90.0 - (row as f64 + 0.5) * 180.0 / height as f64;
            for col in 0..width {
                let az = -180.0 + (col as f64 + 0.5) * 360.0 / width as f64;
                nearest.push(tess.nearest(direction_from_deg(az, el)));
            }
        }
        Ok(Renderer {
            width,
            height,
            nearest,
        })
    }

    /// Renders one frame, normalized to its own maximum, with ground-truth
    /// directions stamped as 3x3 max-value dots.
    pub fn render(&self, values: &[f64], gt: &[(f64, f64)]) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.nearest.len());
        out.extend_from_slice(header.as_bytes());
        let start = out.len();
        let peak = values.iter().cloned().fold(0.0f64, f64::max);
        for &node in &self.nearest {
            let v = if peak > 0.0 {
                (values[node].max(0.0) / peak * 255.0).round() as u8
            } else {
                0
            };
            out.push(v);
        }
        for &(az, el) in gt {
            let (row, col) = self.pixel_of(az, el);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let r = row as i64 + dr;
                    // Azimuth wraps around the seam; elevation clamps at the
                    // poles.
                    let c = (col as i64 + dc).rem_euclid(self.width as i64);
                    if (0..self.height as i64).contains(&r) {
                        out[start + r as usize * self.width + c as usize] = 255;
                    }
                }
            }
        }
        out
    }

    fn pixel_of(&self, az_deg: f64, el_deg: f64) -> (usize, usize) {
        let az = (az_deg + 180.0).rem_euclid(360.0);
        let col = ((az / 360.0 * self.width as f64) as usize).min(self.width - 1);
        let row = (((90.0 - el_deg) / 180.0 * self.height as f64) as usize).min(self.height - 1);
        (row, col)
    }
}
