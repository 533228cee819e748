//! Direction-of-arrival extraction from intensity maps: band aggregation,
//! elevation taper, top-pixel selection, spherical K-means, and the
//! reject/merge heuristics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{great_circle_rad, normalize3, norm3, Tessellation};
use crate::imaging::IntensityMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoaEstimate {
    /// Unit direction vector.
    pub direction: [f64; 3],
    /// Mean intensity of the cluster the estimate came from.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoaFrame {
    pub frame_index: usize,
    pub estimates: Vec<DoaEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    /// Number of clusters sought per frame.
    pub k: usize,
    /// How many of the brightest pixels feed the clustering.
    pub top_pixels: usize,
    /// Tukey taper factor applied along elevation.
    pub taper_factor: f64,
    /// Clusters with a member farther than this from the centroid are dropped.
    pub reject_radius_deg: f64,
    /// Centroid pairs closer than this are merged.
    pub merge_radius_deg: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            k: 3,
            top_pixels: 15,
            taper_factor: 0.8,
            reject_radius_deg: 15.0,
            merge_radius_deg: 15.0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k > self.top_pixels {
            return Err(Error::InvalidInput(format!(
                "cluster count {} must lie in 1..={}",
                self.k, self.top_pixels
            )));
        }
        if !(0.0..=1.0).contains(&self.taper_factor) {
            return Err(Error::InvalidInput(format!(
                "taper factor {} outside [0, 1]",
                self.taper_factor
            )));
        }
        for (name, radius) in [
            ("reject radius", self.reject_radius_deg),
            ("merge radius", self.merge_radius_deg),
        ] {
            if !(radius > 0.0 && radius < 180.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} {radius} outside (0, 180)"
                )));
            }
        }
        Ok(())
    }
}

/// Mean across bands per tessellation point, negatives clipped to zero
/// afterwards (so opposing bands cancel rather than rectify).
pub fn aggregate_bands(map: &IntensityMap) -> Vec<f64> {
    let f = map.band_count() as f64;
    let n = map.node_count();
    let mut out = vec![0.0f64; n];
    for band in map.bands().rows() {
        for (acc, &v) in out.iter_mut().zip(band.iter()) {
            *acc += v;
        }
    }
    for acc in &mut out {
        *acc = (*acc / f).max(0.0);
    }
    out
}

/// Tukey window value at u in [0, 1] with taper factor `alpha` (flat middle,
/// cosine rolloff of total width alpha, zero at both ends).
fn tukey(u: f64, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return 1.0;
    }
    let edge = alpha / 2.0;
    if u < edge {
        0.5 * (1.0 + (std::f64::consts::PI * (2.0 * u / alpha - 1.0)).cos())
    } else if u > 1.0 - edge {
        0.5 * (1.0 + (std::f64::consts::PI * (2.0 * (1.0 - u) / alpha - 1.0)).cos())
    } else {
        1.0
    }
}

/// Scales each point by a Tukey profile in elevation, attenuating the poles.
pub fn apply_elevation_taper(x: &[f64], tess: &Tessellation, taper_factor: f64) -> Result<Vec<f64>> {
    if x.len() != tess.len() {
        return Err(Error::dims(
            "apply_elevation_taper",
            format!("{} values", tess.len()),
            format!("{}", x.len()),
        ));
    }
    if !(0.0..=1.0).contains(&taper_factor) {
        return Err(Error::InvalidInput(format!(
            "taper factor {taper_factor} outside [0, 1]"
        )));
    }
    Ok(x.iter()
        .zip(tess.elevations())
        .map(|(&v, &el)| {
            let u = (el + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI;
            v * tukey(u, taper_factor)
        })
        .collect())
}

struct Cluster {
    /// Intensity-weighted vector sum of the members.
    weighted_sum: [f64; 3],
    centroid: [f64; 3],
    intensity_sum: f64,
    member_count: usize,
    max_member_angle: f64,
}

/// Extracts up to `cfg.k` direction estimates from a tapered intensity
/// vector. Degenerate inputs (no positive pixels) yield an empty list, not an
/// error.
pub fn extract_doas(
    x: &[f64],
    tess: &Tessellation,
    cfg: &ExtractorConfig,
) -> Result<Vec<DoaEstimate>> {
    cfg.validate()?;
    if x.len() != tess.len() {
        return Err(Error::dims(
            "extract_doas",
            format!("{} values", tess.len()),
            format!("{}", x.len()),
        ));
    }

    // Top pixels by value, ties broken by lower index; only strictly positive
    // pixels participate.
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let members: Vec<usize> = order
        .into_iter()
        .take(cfg.top_pixels)
        .filter(|&i| x[i] > 0.0)
        .collect();
    if members.is_empty() {
        return Ok(Vec::new());
    }
    let k = cfg.k.min(members.len());
    let dirs: Vec<[f64; 3]> = members.iter().map(|&i| tess.direction(i)).collect();
    let weights: Vec<f64> = members.iter().map(|&i| x[i]).collect();

    // Farthest-point seeding from the brightest pixel.
    let mut centroids: Vec<[f64; 3]> = vec![dirs[0]];
    while centroids.len() < k {
        let far = dirs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let nearest = centroids
                    .iter()
                    .map(|c| great_circle_rad(*c, *d))
                    .fold(f64::INFINITY, f64::min);
                (i, nearest)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        centroids.push(dirs[far]);
    }

    // Lloyd iterations with great-circle assignment and normalized
    // intensity-weighted mean centroids; stops at an assignment fixpoint.
    let mut assignment = vec![usize::MAX; dirs.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, d) in dirs.iter().enumerate() {
            let nearest = centroids
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, great_circle_rad(*ctr, *d)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(c, _)| c)
                .unwrap();
            if assignment[i] != nearest {
                assignment[i] = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = [0.0f64; 3];
            for (i, d) in dirs.iter().enumerate() {
                if assignment[i] == c {
                    for (s, v) in sum.iter_mut().zip(d) {
                        *s += weights[i] * v;
                    }
                }
            }
            // Empty clusters and antipodal cancellations keep their previous
            // centroid.
            if norm3(sum) > 1e-12 {
                *centroid = normalize3(sum);
            }
        }
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    for (c, centroid) in centroids.iter().enumerate() {
        let mut cl = Cluster {
            weighted_sum: [0.0; 3],
            centroid: *centroid,
            intensity_sum: 0.0,
            member_count: 0,
            max_member_angle: 0.0,
        };
        for (i, d) in dirs.iter().enumerate() {
            if assignment[i] == c {
                for (s, v) in cl.weighted_sum.iter_mut().zip(d) {
                    *s += weights[i] * v;
                }
                cl.intensity_sum += weights[i];
                cl.member_count += 1;
                cl.max_member_angle = cl.max_member_angle.max(great_circle_rad(*centroid, *d));
            }
        }
        if cl.member_count > 0 {
            clusters.push(cl);
        }
    }

    // Reject clusters with a member beyond the radius.
    let reject_rad = cfg.reject_radius_deg.to_radians();
    clusters.retain(|cl| cl.max_member_angle <= reject_rad);

    // Merge the closest centroid pair until all pairs are separated.
    let merge_rad = cfg.merge_radius_deg.to_radians();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let d = great_circle_rad(clusters[i].centroid, clusters[j].centroid);
                if d < merge_rad && best.map_or(true, |(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let b = clusters.remove(j);
        let a = &mut clusters[i];
        let mut merged = [0.0f64; 3];
        for ((m, &ca), &cb) in merged.iter_mut().zip(&a.centroid).zip(&b.centroid) {
            *m = a.intensity_sum * ca + b.intensity_sum * cb;
        }
        a.centroid = normalize3(merged);
        for (s, v) in a.weighted_sum.iter_mut().zip(b.weighted_sum) {
            *s += v;
        }
        a.intensity_sum += b.intensity_sum;
        a.member_count += b.member_count;
    }

    Ok(clusters
        .into_iter()
        .map(|cl| DoaEstimate {
            direction: cl.centroid,
            confidence: cl.intensity_sum / cl.member_count as f64,
        })
        .collect())
}

/// Runs aggregation, taper, and extraction over a sequence of maps, keeping
/// frame alignment. Frames are independent and processed in parallel.
pub fn localize_recording(maps: &[IntensityMap], cfg: &ExtractorConfig) -> Result<Vec<DoaFrame>> {
    cfg.validate()?;
    maps.par_iter()
        .map(|map| {
            let x = aggregate_bands(map);
            let tapered = apply_elevation_taper(&x, map.tessellation(), cfg.taper_factor)?;
            Ok(DoaFrame {
                frame_index: map.frame_index,
                estimates: extract_doas(&tapered, map.tessellation(), cfg)?,
            })
        })
        .collect()
}
