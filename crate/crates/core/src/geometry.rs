//! Array geometries, the spherical pixel grid, and its graph Laplacian.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// One-based capsule indices of the near-tetrahedral Eigenmike subset.
pub const TETRAHEDRAL_CHANNELS: [usize; 4] = [6, 10, 22, 26];

pub const DEFAULT_TESSELLATION_POINTS: usize = 242;
pub const DEFAULT_KNN: usize = 8;

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize3(a: [f64; 3]) -> [f64; 3] {
    let n = norm3(a);
    if n == 0.0 {
        return a;
    }
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Unit direction for azimuth/elevation in radians (azimuth counterclockwise
/// from +x in the xy plane, elevation up from the plane).
pub fn direction_from_rad(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (ce, se) = (elevation.cos(), elevation.sin());
    [ce * azimuth.cos(), ce * azimuth.sin(), se]
}

pub fn direction_from_deg(azimuth_deg: f64, elevation_deg: f64) -> [f64; 3] {
    direction_from_rad(azimuth_deg.to_radians(), elevation_deg.to_radians())
}

/// (azimuth, elevation) in radians with azimuth in [-pi, pi) and elevation in
/// [-pi/2, pi/2]. The input need not be unit length.
pub fn azimuth_elevation_rad(dir: [f64; 3]) -> (f64, f64) {
    let n = norm3(dir);
    let z = if n == 0.0 { 0.0 } else { (dir[2] / n).clamp(-1.0, 1.0) };
    let mut az = dir[1].atan2(dir[0]);
    if az >= PI {
        az = -PI;
    }
    (az, z.asin())
}

pub fn azimuth_elevation_deg(dir: [f64; 3]) -> (f64, f64) {
    let (az, el) = azimuth_elevation_rad(dir);
    (az.to_degrees(), el.to_degrees())
}

/// Wraps an azimuth in degrees into [-180, 180).
pub fn wrap_azimuth_deg(az: f64) -> f64 {
    let w = (az + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can return the modulus itself when the dividend is a tiny
    // negative number, pushing w to exactly +180.
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Great-circle angle in radians between two directions, stable for nearly
/// parallel and nearly antipodal inputs.
pub fn great_circle_rad(a: [f64; 3], b: [f64; 3]) -> f64 {
    let u = normalize3(a);
    let v = normalize3(b);
    norm3(cross3(u, v)).atan2(dot3(u, v))
}

pub fn great_circle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    great_circle_rad(a, b).to_degrees()
}

#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    name: String,
    positions: Vec<[f64; 3]>,
    speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(name: impl Into<String>, positions: Vec<[f64; 3]>) -> Result<Self> {
        let name = name.into();
        if positions.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "array '{name}' needs at least 2 capsules, got {}",
                positions.len()
            )));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "array '{name}' capsule {} has non-finite coordinates",
                    i + 1
                )));
            }
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if positions[i] == positions[j] {
                    return Err(Error::InvalidInput(format!(
                        "array '{name}' capsules {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(ArrayGeometry {
            name,
            positions,
            speed_of_sound: SPEED_OF_SOUND,
        })
    }

    pub fn with_speed_of_sound(mut self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidInput(format!("speed of sound must be positive, got {c}")));
        }
        self.speed_of_sound = c;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channel_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn position(&self, channel: usize) -> [f64; 3] {
        self.positions[channel]
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }
}

/// The bundled 32-channel spherical array.
pub fn eigenmike_geometry() -> ArrayGeometry {
    static TABLE: &str = include_str!("../data/eigenmike32.txt");
    let positions = parse_capsule_table(TABLE).expect("bundled capsule table is well-formed");
    ArrayGeometry::new("eigenmike32", positions).expect("bundled capsule table is a valid array")
}

/// Parses a capsule coordinate table: one line per channel,
/// "index azimuth_deg elevation_deg radius_m", '#' comments and blank lines
/// allowed. Indices must run 1..=M in order.
pub fn parse_capsule_table(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut positions = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                line,
                format!("expected 4 fields (index azimuth elevation radius), got {}", fields.len()),
            ));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad channel index '{}'", fields[0])))?;
        if idx != positions.len() + 1 {
            return Err(Error::parse(
                line,
                format!("channel index {idx} out of order, expected {}", positions.len() + 1),
            ));
        }
        let mut nums = [0.0f64; 3];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| Error::parse(line, format!("bad number '{field}'")))?;
        }
        let (az, el, radius) = (nums[0], nums[1], nums[2]);
        if !(-90.0..=90.0).contains(&el) {
            return Err(Error::parse(line, format!("elevation {el} outside [-90, 90]")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::parse(line, format!("radius {radius} must be positive")));
        }
        let d = direction_from_deg(az, el);
        positions.push([d[0] * radius, d[1] * radius, d[2] * radius]);
    }
    Ok(positions)
}

/// Loads a capsule table from a file; the geometry is named after the file stem.
pub fn load_capsule_table(path: impl AsRef<Path>) -> Result<ArrayGeometry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let positions = parse_capsule_table(&text)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "array".to_string());
    ArrayGeometry::new(name, positions)
}

/// Selects channels by one-based index, preserving order. The subset is
/// recorded in the name label, e.g. "eigenmike32[6,10,22,26]".
pub fn subset_geometry(geom: &ArrayGeometry, one_based: &[usize]) -> Result<ArrayGeometry> {
    let m = geom.channel_count();
    let mut seen = vec![false; m];
    let mut positions = Vec::with_capacity(one_based.len());
    for &idx in one_based {
        if idx == 0 || idx > m {
            return Err(Error::ChannelOutOfRange { index: idx, count: m });
        }
        if seen[idx - 1] {
            return Err(Error::DuplicateChannel(idx));
        }
        seen[idx - 1] = true;
        positions.push(geom.position(idx - 1));
    }
    let label: Vec<String> = one_based.iter().map(|i| i.to_string()).collect();
    let name = format!("{}[{}]", geom.name(), label.join(","));
    ArrayGeometry::new(name, positions)?.with_speed_of_sound(geom.speed_of_sound())
}

/// The near-tetrahedral 4-channel subset of the bundled 32-channel array.
pub fn tetrahedral_subset(geom: &ArrayGeometry) -> Result<ArrayGeometry> {
    subset_geometry(geom, &TETRAHEDRAL_CHANNELS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tessellation {
    directions: Vec<[f64; 3]>,
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
}

impl Tessellation {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn direction(&self, i: usize) -> [f64; 3] {
        self.directions[i]
    }

    /// Azimuths in radians, in [-pi, pi).
    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    /// Elevations in radians, in [-pi/2, pi/2].
    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    /// Index of the tessellation point closest to `dir` (ties keep the lower
    /// index).
    pub fn nearest(&self, dir: [f64; 3]) -> usize {
        let u = normalize3(dir);
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, d) in self.directions.iter().enumerate() {
            let dot = dot3(*d, u);
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        best
    }
}

/// Deterministic Fibonacci spiral lattice with `n_points` near-uniform unit
/// directions.
pub fn build_tessellation(n_points: usize) -> Result<Tessellation> {
    if n_points < 12 {
        return Err(Error::InvalidInput(format!(
            "tessellation needs at least 12 points, got {n_points}"
        )));
    }
    let golden_angle = PI * (3.0 - 5.0f64.sqrt());
    let n = n_points as f64;
    let mut directions = Vec::with_capacity(n_points);
    let mut azimuths = Vec::with_capacity(n_points);
    let mut elevations = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let mut az = (i as f64 * golden_angle).rem_euclid(2.0 * PI);
        if az >= PI {
            az -= 2.0 * PI;
        }
        directions.push([r * az.cos(), r * az.sin(), z]);
        azimuths.push(az);
        elevations.push(z.asin());
    }
    Ok(Tessellation {
        directions,
        azimuths,
        elevations,
    })
}

/// Symmetric sparse matrix in per-row adjacency form (diagonal included).
#[derive(Debug, Clone)]
pub struct SparseSym {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSym {
    fn new(n: usize) -> Self {
        SparseSym { rows: vec![Vec::new(); n] }
    }

    fn push_sym(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i].push((j, v));
        if i != j {
            self.rows[j].push((i, v));
        }
    }

    fn sort_rows(&mut self) {
        for row in &mut self.rows {
            row.sort_by_key(|&(j, _)| j);
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(j, v) in row {
                acc += v * x[j];
            }
            out[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut dense = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                dense[[i, j]] = v;
            }
        }
        dense
    }
}

/// Graph Laplacian stack of the tessellation's symmetrized k-NN graph:
/// unnormalized L = D - W, symmetric normalized L_sym = I - D^-1/2 W D^-1/2,
/// and the Chebyshev-ready rescaling 2 L_sym / lambda_bound - I.
#[derive(Debug, Clone)]
pub struct GraphLaplacian {
    unnormalized: SparseSym,
    normalized: SparseSym,
    rescaled: SparseSym,
    lambda_bound: f64,
    bandwidth: f64,
    k_neighbors: usize,
}

impl GraphLaplacian {
    pub fn node_count(&self) -> usize {
        self.rescaled.dim()
    }

    pub fn unnormalized(&self) -> &SparseSym {
        &self.unnormalized
    }

    pub fn normalized(&self) -> &SparseSym {
        &self.normalized
    }

    pub fn rescaled(&self) -> &SparseSym {
        &self.rescaled
    }

    /// Gershgorin upper bound on the largest normalized-Laplacian eigenvalue,
    /// the divisor used in the rescaling.
    pub fn lambda_bound(&self) -> f64 {
        self.lambda_bound
    }

    /// Gaussian kernel bandwidth (mean k-NN great-circle distance).
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn k_neighbors(&self) -> usize {
        self.k_neighbors
    }

    pub fn apply_rescaled(&self, x: &[f64]) -> Vec<f64> {
        self.rescaled.matvec(x)
    }
}

pub fn build_graph_laplacian(tess: &Tessellation, k_neighbors: usize) -> Result<GraphLaplacian> {
    let n = tess.len();
    if k_neighbors < 1 || k_neighbors >= n {
        return Err(Error::InvalidInput(format!(
            "k_neighbors must be in 1..{n}, got {k_neighbors}"
        )));
    }

    // k nearest neighbours per node on great-circle distance; O(n^2) time,
    // O(n) scratch.
    let mut neighbor_sets: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut knn_distance_sum = 0.0;
    let mut scratch: Vec<(usize, f64)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        for j in 0..n {
            if j != i {
                scratch.push((j, great_circle_rad(tess.direction(i), tess.direction(j))));
            }
        }
        scratch.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scratch.truncate(k_neighbors);
        knn_distance_sum += scratch.iter().map(|&(_, d)| d).sum::<f64>();
        neighbor_sets.push(scratch.clone());
    }
    let bandwidth = knn_distance_sum / (n * k_neighbors) as f64;

    // Symmetrized edge union with Gaussian weights.
    let mut weights: std::collections::BTreeMap<(usize, usize), f64> = std::collections::BTreeMap::new();
    for (i, nb) in neighbor_sets.iter().enumerate() {
        for &(j, d) in nb {
            let key = (i.min(j), i.max(j));
            weights
                .entry(key)
                .or_insert_with(|| (-d * d / (2.0 * bandwidth * bandwidth)).exp());
        }
    }

    let mut degree = vec![0.0f64; n];
    for (&(i, j), &w) in &weights {
        degree[i] += w;
        degree[j] += w;
    }

    let mut unnormalized = SparseSym::new(n);
    let mut normalized = SparseSym::new(n);
    for i in 0..n {
        unnormalized.push_sym(i, i, degree[i]);
        normalized.push_sym(i, i, 1.0);
    }
    for (&(i, j), &w) in &weights {
        unnormalized.push_sym(i, j, -w);
        normalized.push_sym(i, j, -w / (degree[i] * degree[j]).sqrt());
    }
    unnormalized.sort_rows();
    normalized.sort_rows();

    // Gershgorin bound on the normalized Laplacian spectrum.
    let mut lambda_bound = 0.0f64;
    for i in 0..n {
        let row_sum: f64 = normalized
            .row(i)
            .iter()
            .map(|&(j, v)| if j == i { v } else { v.abs() })
            .sum();
        lambda_bound = lambda_bound.max(row_sum);
    }

    let mut rescaled = SparseSym::new(n);
    for i in 0..n {
        for &(j, v) in normalized.row(i) {
            if j < i {
                continue;
            }
            let scaled = 2.0 * v / lambda_bound - if i == j { 1.0 } else { 0.0 };
            rescaled.push_sym(i, j, scaled);
        }
    }
    rescaled.sort_rows();

    Ok(GraphLaplacian {
        unnormalized,
        normalized,
        rescaled,
        lambda_bound,
        bandwidth,
        k_neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigenmike_has_32_channels_on_a_common_sphere() {
        let g = eigenmike_geometry();
        assert_eq!(g.channel_count(), 32);
        let radii: Vec<f64> = g.positions().iter().map(|&p| norm3(p)).collect();
        let (lo, hi) = radii
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        assert!(hi - lo < 1e-9, "radius spread {}", hi - lo);
    }

    #[test]
    fn eigenmike_centroid_is_near_origin() {
        let g = eigenmike_geometry();
        let mut c = [0.0f64; 3];
        for p in g.positions() {
            for (acc, x) in c.iter_mut().zip(p) {
                *acc += x;
            }
        }
        for acc in c.iter_mut() {
            *acc /= 32.0;
        }
        assert!(norm3(c) < 1e-3, "centroid norm {}", norm3(c));
    }

    #[test]
    fn tetrahedral_subset_selects_channels_in_order() {
        let g = eigenmike_geometry();
        let sub = tetrahedral_subset(&g).unwrap();
        assert_eq!(sub.channel_count(), 4);
        assert_eq!(sub.position(0), g.position(5));
        assert_eq!(sub.position(1), g.position(9));
        assert_eq!(sub.position(2), g.position(21));
        assert_eq!(sub.position(3), g.position(25));
        assert_eq!(sub.name(), "eigenmike32[6,10,22,26]");
    }

    #[test]
    fn tetrahedral_subset_is_near_tetrahedral() {
        let sub = tetrahedral_subset(&eigenmike_geometry()).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let ang = great_circle_deg(sub.position(i), sub.position(j));
                assert!(
                    (ang - 109.47).abs() < 20.0,
                    "pair ({i},{j}) angle {ang} not near tetrahedral"
                );
            }
        }
    }

    #[test]
    fn subset_rejects_duplicate_and_out_of_range_indices() {
        let g = eigenmike_geometry();
        match subset_geometry(&g, &[1, 1, 2, 3]) {
            Err(Error::DuplicateChannel(1)) => {}
            other => panic!("expected duplicate-channel error, got {other:?}"),
        }
        match subset_geometry(&g, &[6, 10, 22, 33]) {
            Err(Error::ChannelOutOfRange { index: 33, count: 32 }) => {}
            other => panic!("expected out-of-range error, got {other:?}"),
        }
    }

    #[test]
    fn subset_with_identity_indices_is_idempotent() {
        let g = eigenmike_geometry();
        let once = tetrahedral_subset(&g).unwrap();
        let twice = subset_geometry(&once, &[1, 2, 3, 4]).unwrap();
        assert_eq!(once.positions(), twice.positions());
    }

    #[test]
    fn geometry_rejects_degenerate_inputs() {
        assert!(ArrayGeometry::new("one", vec![[0.0, 0.0, 0.0]]).is_err());
        assert!(ArrayGeometry::new(
            "dup",
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]
        )
        .is_err());
        assert!(ArrayGeometry::new("nan", vec![[f64::NAN, 0.0, 0.0], [0.0, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn capsule_table_errors_carry_line_numbers() {
        let text = "1 0 0 0.042\n2 10 95 0.042\n";
        match parse_capsule_table(text) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn tessellation_directions_are_unit_norm() {
        let t = build_tessellation(242).unwrap();
        assert_eq!(t.len(), 242);
        for d in t.directions() {
            assert_abs_diff_eq!(norm3(*d), 1.0, epsilon = 1e-12);
        }
        for (&az, &el) in t.azimuths().iter().zip(t.elevations()) {
            assert!((-PI..PI).contains(&az));
            assert!((-PI / 2.0..=PI / 2.0).contains(&el));
        }
    }

    #[test]
    fn tessellation_small_lattice_is_balanced() {
        let t = build_tessellation(12).unwrap();
        let mut mean = [0.0f64; 3];
        for d in t.directions() {
            for (acc, x) in mean.iter_mut().zip(d) {
                *acc += x / 12.0;
            }
        }
        assert!(norm3(mean) < 0.05, "mean direction norm {}", norm3(mean));
    }

    fn nearest_neighbor_spacings(t: &Tessellation) -> Vec<f64> {
        (0..t.len())
            .map(|i| {
                (0..t.len())
                    .filter(|&j| j != i)
                    .map(|j| great_circle_deg(t.direction(i), t.direction(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn tessellation_242_spacing_matches_grid_scale() {
        let t = build_tessellation(242).unwrap();
        let nn = nearest_neighbor_spacings(&t);
        let mean = nn.iter().sum::<f64>() / nn.len() as f64;
        assert!((11.0..=15.0).contains(&mean), "mean NN spacing {mean}");
        let min = nn.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = nn.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max <= 2.5 * min, "coverage ratio {max}/{min}");
    }

    #[test]
    fn tessellation_is_deterministic_and_rejects_small_n() {
        let a = build_tessellation(50).unwrap();
        let b = build_tessellation(50).unwrap();
        assert_eq!(a, b);
        assert!(build_tessellation(11).is_err());
    }

    #[test]
    fn laplacian_row_sums_vanish_before_normalization() {
        let t = build_tessellation(242).unwrap();
        let lap = build_graph_laplacian(&t, 8).unwrap();
        let ones = vec![1.0; 242];
        for v in lap.unnormalized().matvec(&ones) {
            assert!(v.abs() <= 1e-12, "row sum {v}");
        }
    }

    #[test]
    fn laplacian_matrices_are_exactly_symmetric() {
        let t = build_tessellation(12).unwrap();
        let lap = build_graph_laplacian(&t, 3).unwrap();
        for m in [lap.unnormalized(), lap.normalized(), lap.rescaled()] {
            let dense = m.to_dense();
            assert_eq!(dense, dense.t().to_owned(), "matrix != its transpose");
        }
    }

    #[test]
    fn normalized_laplacian_quadratic_forms_are_nonnegative() {
        let t = build_tessellation(242).unwrap();
        let lap = build_graph_laplacian(&t, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..242).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let lx = lap.normalized().matvec(&x);
            let quad: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
            assert!(quad >= -1e-9, "x^T L x = {quad}");
        }
    }

    #[test]
    fn rescaled_laplacian_spectral_radius_is_bounded() {
        let t = build_tessellation(242).unwrap();
        let lap = build_graph_laplacian(&t, 8).unwrap();
        let radius =
            crate::linalg::spectral_radius_symmetric(242, |x| lap.apply_rescaled(x), 500);
        assert!(radius <= 1.0 + 1e-6, "spectral radius {radius}");
    }

    #[test]
    fn laplacian_rejects_bad_neighbor_counts() {
        let t = build_tessellation(12).unwrap();
        assert!(build_graph_laplacian(&t, 0).is_err());
        assert!(build_graph_laplacian(&t, 12).is_err());
        assert!(build_graph_laplacian(&t, 3).is_ok());
    }

    #[test]
    fn great_circle_handles_extreme_angles() {
        let x = [1.0, 0.0, 0.0];
        assert_abs_diff_eq!(great_circle_rad(x, x), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(great_circle_rad(x, [-1.0, 0.0, 0.0]), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(great_circle_rad(x, [0.0, 1.0, 0.0]), PI / 2.0, epsilon = 1e-15);
        // Tiny separation stays well-conditioned.
        let near = normalize3([1.0, 1e-9, 0.0]);
        let ang = great_circle_rad(x, near);
        assert!(ang > 0.0 && ang < 2e-9);
    }

    #[test]
    fn azimuth_wrap_conventions() {
        assert_abs_diff_eq!(wrap_azimuth_deg(180.0), -180.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_azimuth_deg(-180.0), -180.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_azimuth_deg(540.0), -180.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_azimuth_deg(-190.0), 170.0, epsilon = 1e-12);
        let (az, _) = azimuth_elevation_rad([-1.0, -0.0, 0.0]);
        assert!(az < PI, "azimuth must stay in [-pi, pi), got {az}");
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn spherical_round_trip_recovers_angles(az in -180.0f64..180.0, el in -89.0f64..89.0) {
            let dir = direction_from_deg(az, el);
            prop_assert!((norm3(dir) - 1.0).abs() < 1e-12);
            let (az2, el2) = azimuth_elevation_deg(dir);
            prop_assert!((az2 - az).abs() < 1e-9, "azimuth {az} -> {az2}");
            prop_assert!((el2 - el).abs() < 1e-9, "elevation {el} -> {el2}");
        }

        #[test]
        fn wrapped_azimuth_is_in_range_and_angle_preserving(az in -1.0e4f64..1.0e4) {
            let w = wrap_azimuth_deg(az);
            prop_assert!((-180.0..180.0).contains(&w), "wrapped {az} to {w}");
            // Differs from the input by a whole number of turns.
            let turns = (az - w).rem_euclid(360.0);
            prop_assert!(turns < 1e-6 || (360.0 - turns) < 1e-6, "residual {turns}");
        }
    }
}
