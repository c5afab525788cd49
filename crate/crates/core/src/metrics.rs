//! Chamfer, point-to-surface and depth error metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Exponent applied to Euclidean distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Power {
    One,
    Two,
}

impl Power {
    pub fn new(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Power::One),
            2 => Ok(Power::Two),
            _ => Err(Error::InvalidParameter(format!("metric power must be 1 or 2, got {p}"))),
        }
    }

    /// Maps a squared distance to the powered distance.
    pub fn of_squared(self, d2: f64) -> f64 {
        match self {
            Power::One => d2.sqrt(),
            Power::Two => d2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point cloud coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn squared_distance(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Closest point on triangle `abc` to `p`, covering the vertex, edge and
/// interior regions.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return [a[0] + t * ac[0], a[1] + t * ac[1], a[2] + t * ac[2]];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [b[0] + t * (c[0] - b[0]), b[1] + t * (c[1] - b[1]), b[2] + t * (c[2] - b[2])];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w, a[2] + ab[2] * v + ac[2] * w]
}

pub fn point_triangle_squared_distance(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    squared_distance(p, closest_point_on_triangle(p, a, b, c))
}

/// Uniform grid over axis-aligned boxes for exact nearest-item queries.
struct Grid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl Grid {
    fn new(boxes: &[(Vec3, Vec3)]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (a, b) in boxes {
            for k in 0..3 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
            }
        }
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let diag = dot(extent, extent).sqrt();
        let target = (boxes.len() as f64).cbrt().max(1.0);
        let cell = if diag > 0.0 { diag / target } else { 1.0 };
        let dims = extent.map(|e| ((e / cell).floor() as usize + 1).min(256));
        let mut grid = Self { origin: lo, cell, dims, cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]] };
        for (i, (a, b)) in boxes.iter().enumerate() {
            let ca = grid.cell_of(*a);
            let cb = grid.cell_of(*b);
            for x in ca[0]..=cb[0] {
                for y in ca[1]..=cb[1] {
                    for z in ca[2]..=cb[2] {
                        let id = grid.flat([x, y, z]);
                        grid.cells[id].push(i as u32);
                    }
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: Vec3) -> [usize; 3] {
        let mut c = [0; 3];
        for k in 0..3 {
            let t = ((p[k] - self.origin[k]) / self.cell).floor();
            c[k] = if t.is_nan() || t < 0.0 { 0 } else { (t as usize).min(self.dims[k] - 1) };
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Minimum of `dist2(item)` over all items.
    fn nearest(&self, q: Vec3, dist2: impl Fn(usize) -> f64) -> f64 {
        let center = self.cell_of(q);
        let mut best = f64::INFINITY;
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        for r in 0..=max_ring {
            let lo: [usize; 3] = std::array::from_fn(|k| center[k].saturating_sub(r));
            let hi: [usize; 3] = std::array::from_fn(|k| (center[k] + r).min(self.dims[k] - 1));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let on_shell = [x, y, z].iter().zip(&center).any(|(&c, &m)| c.abs_diff(m) == r);
                        if !on_shell {
                            continue;
                        }
                        for &i in &self.cells[self.flat([x, y, z])] {
                            best = best.min(dist2(i as usize));
                        }
                    }
                }
            }
            // Distance from q to the unvisited part of the grid.
            let mut bound = f64::INFINITY;
            for k in 0..3 {
                if lo[k] > 0 {
                    bound = bound.min(q[k] - (self.origin[k] + lo[k] as f64 * self.cell));
                }
                if hi[k] + 1 < self.dims[k] {
                    bound = bound.min(self.origin[k] + (hi[k] + 1) as f64 * self.cell - q[k]);
                }
            }
            if bound == f64::INFINITY || (bound > 0.0 && best <= bound * bound) {
                break;
            }
        }
        best
    }
}

/// Mean powered distance from each query to its nearest reference point.
pub fn directed_chamfer(queries: &PointCloud, reference: &PointCloud, p: Power) -> f64 {
    let grid = Grid::new(&reference.points.iter().map(|&x| (x, x)).collect::<Vec<_>>());
    let sum: f64 = queries
        .points
        .iter()
        .map(|&q| p.of_squared(grid.nearest(q, |i| squared_distance(q, reference.points[i]))))
        .sum();
    sum / queries.len() as f64
}

/// Symmetric Chamfer distance.
pub fn chamfer(a: &PointCloud, b: &PointCloud, p: Power) -> f64 {
    directed_chamfer(b, a, p) + directed_chamfer(a, b, p)
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let n = cross(sub(b, a), sub(c, a));
    0.5 * dot(n, n).sqrt()
}

/// Area-weighted uniform samples on a triangle mesh.
pub fn sample_surface(positions: &[Vec3], triangles: &[[usize; 3]], n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points == 0 {
        return Err(Error::Empty("sample count"));
    }
    let mut cumulative = Vec::with_capacity(triangles.len());
    let mut total = 0.0;
    for t in triangles {
        total += triangle_area(positions[t[0]], positions[t[1]], positions[t[2]]);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidMesh("surface has zero total area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n_points)
        .map(|_| {
            let pick = rng.gen::<f64>() * total;
            let ti = cumulative.partition_point(|&c| c <= pick).min(triangles.len() - 1);
            let [a, b, c] = triangles[ti].map(|i| positions[i]);
            let r1 = rng.gen::<f64>().sqrt();
            let r2 = rng.gen::<f64>();
            let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
            std::array::from_fn(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    PointCloud::new(points)
}

/// Mean powered distance from each point to the nearest triangle.
pub fn cloud_to_surface(cloud: &PointCloud, positions: &[Vec3], triangles: &[[usize; 3]], p: Power) -> Result<f64> {
    if triangles.is_empty() {
        return Err(Error::Empty("triangle surface"));
    }
    let boxes: Vec<(Vec3, Vec3)> = triangles
        .iter()
        .map(|t| {
            let v = t.map(|i| positions[i]);
            (
                std::array::from_fn(|k| v[0][k].min(v[1][k]).min(v[2][k])),
                std::array::from_fn(|k| v[0][k].max(v[1][k]).max(v[2][k])),
            )
        })
        .collect();
    let grid = Grid::new(&boxes);
    let sum: f64 = cloud
        .points
        .iter()
        .map(|&q| {
            p.of_squared(grid.nearest(q, |i| {
                let [a, b, c] = triangles[i].map(|v| positions[v]);
                point_triangle_squared_distance(q, a, b, c)
            }))
        })
        .sum();
    Ok(sum / cloud.len() as f64)
}

/// Symmetric point-to-surface distance: surface samples (as many as the
/// cloud has points) to the cloud, plus cloud points to the nearest triangle.
pub fn point_to_surface(
    cloud: &PointCloud,
    positions: &[Vec3],
    triangles: &[[usize; 3]],
    p: Power,
    seed: u64,
) -> Result<f64> {
    let samples = sample_surface(positions, triangles, cloud.len(), seed)?;
    Ok(directed_chamfer(&samples, cloud, p) + cloud_to_surface(cloud, positions, triangles, p)?)
}

/// Mean absolute difference over pixels where both depths are finite.
pub fn depth_error(ground_truth: &[f64], reconstruction: &[f64]) -> Result<f64> {
    if ground_truth.len() != reconstruction.len() {
        return Err(Error::DimensionMismatch(format!(
            "depth maps of {} and {} pixels",
            ground_truth.len(),
            reconstruction.len()
        )));
    }
    let (sum, count) = ground_truth
        .iter()
        .zip(reconstruction)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + (a - b).abs(), n + 1));
    if count == 0 {
        return Err(Error::EmptyRoi);
    }
    Ok(sum / count as f64)
}

/// Mean of per-frame depth errors over frames with a non-empty overlap.
pub fn mean_depth_error<'a>(frames: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for (gt, r) in frames {
        match depth_error(gt, r) {
            Ok(e) => {
                sum += e;
                count += 1;
            }
            Err(Error::EmptyRoi) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::EmptyRoi);
    }
    Ok(sum / count as f64)
}
