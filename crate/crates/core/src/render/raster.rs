use super::{Camera, Texture};
use crate::geometry::{ClothMesh, Vec3};

/// Pixel value of `RenderRecord::triangle` where nothing was drawn.
pub const NO_TRIANGLE: u32 = u32::MAX;
/// Depth of background pixels.
pub const BACKGROUND_DEPTH: f64 = f64::INFINITY;

/// Triangle connectivity and per-vertex texture coordinates.
#[derive(Clone, Debug)]
pub struct Surface {
    pub triangles: Vec<[usize; 3]>,
    pub uvs: Vec<[f64; 2]>,
    /// Triangle across edge `(v[k], v[(k + 1) % 3])`.
    neighbors: Vec<[Option<usize>; 3]>,
}

impl Surface {
    pub fn new(triangles: Vec<[usize; 3]>, uvs: Vec<[f64; 2]>) -> Self {
        let mut owner = std::collections::HashMap::new();
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some(&(other, ok)) = owner.get(&key) {
                    neighbors[t][k] = Some(other);
                    let n: &mut [Option<usize>; 3] = &mut neighbors[other];
                    n[ok] = Some(t);
                } else {
                    owner.insert(key, (t, k));
                }
            }
        }
        Self { triangles, uvs, neighbors }
    }

    pub fn from_mesh(mesh: &ClothMesh) -> Self {
        Self::new(mesh.triangles(), mesh.uvs.clone())
    }
}

/// Rendered images plus everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major, three channels per pixel.
    pub rgb: Vec<f64>,
    pub mask: Vec<f64>,
    /// Camera-space depth; [`BACKGROUND_DEPTH`] on background.
    pub depth: Vec<f64>,
    pub record: RenderRecord,
}

#[derive(Clone, Debug)]
struct EdgePair {
    target: usize,
    source: usize,
    weight: f64,
    dweight_dt: f64,
    /// Direction from the near pixel to the far pixel along `axis` (±1).
    dir: f64,
    axis: usize,
    edge: [usize; 2],
    s: f64,
}

/// Coverage map and intermediates kept for gradient routing.
#[derive(Clone, Debug)]
pub struct RenderRecord {
    pub triangle: Vec<u32>,
    bary: Vec<[f64; 3]>,
    screen: Vec<Option<[f64; 2]>>,
    hard: Vec<[f64; 4]>,
    unclamped: Vec<[f64; 4]>,
    pairs: Vec<EdgePair>,
    positions: Vec<Vec3>,
}

impl RenderRecord {
    /// True when both renders used the same visible triangles and
    /// antialiasing edges, so the image is smooth between them.
    pub fn same_topology(&self, other: &RenderRecord) -> bool {
        self.triangle == other.triangle
            && self.pairs.len() == other.pairs.len()
            && self.pairs.iter().zip(&other.pairs).all(|(a, b)| {
                a.target == b.target && a.source == b.source && a.edge == b.edge && a.axis == b.axis
            })
    }
}

/// Gradients produced by [`rasterize_backward`].
#[derive(Clone, Debug)]
pub struct RenderGradients {
    pub positions: Vec<Vec3>,
    pub texture: Option<Vec<f64>>,
}

fn edge_fn(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Accumulates `g · ∂edge_fn(a, b, p)/∂(a, b)`.
fn edge_fn_backward(a: [f64; 2], b: [f64; 2], p: [f64; 2], g: f64, ga: &mut [f64; 2], gb: &mut [f64; 2]) {
    ga[0] += g * (b[1] - p[1]);
    ga[1] += g * (p[0] - b[0]);
    gb[0] += g * (p[1] - a[1]);
    gb[1] += g * (a[0] - p[0]);
}

fn texel(texture: &Texture, index: usize, channel: usize) -> f64 {
    let c = if texture.channels == 1 { 0 } else { channel };
    texture.texels[index * texture.channels + c]
}

fn sample_rgb(texture: &Texture, uv: [f64; 2]) -> [f64; 3] {
    let tap = texture.tap(uv[0], uv[1]);
    std::array::from_fn(|c| tap.apply(|i| texel(texture, i, c)))
}

/// Z-buffered rasterization of the textured surface at `positions`.
///
/// Texture coordinates are interpolated with screen-space barycentrics and
/// depth is interpolated perspective-correctly. Silhouette edges are
/// antialiased between neighbouring pixels so that colors and mask depend
/// continuously on the projected vertex positions.
pub fn rasterize(positions: &[Vec3], surface: &Surface, texture: &Texture, camera: &Camera) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let np = w * h;
    let projected: Vec<_> = positions.iter().map(|&p| camera.project(p)).collect();
    let screen: Vec<Option<[f64; 2]>> = projected.iter().map(|p| p.map(|p| p.pixel)).collect();
    let mut triangle = vec![NO_TRIANGLE; np];
    let mut bary = vec![[0.0; 3]; np];
    let mut depth = vec![BACKGROUND_DEPTH; np];
    let mut signed_area = vec![0.0; surface.triangles.len()];

    for (t, tri) in surface.triangles.iter().enumerate() {
        let (Some(va), Some(vb), Some(vc)) = (projected[tri[0]], projected[tri[1]], projected[tri[2]]) else {
            continue;
        };
        let (pa, pb, pc) = (va.pixel, vb.pixel, vc.pixel);
        let area = edge_fn(pa, pb, pc);
        signed_area[t] = area;
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_x = pa[0].min(pb[0]).min(pc[0]).ceil().max(0.0);
        let max_x = pa[0].max(pb[0]).max(pc[0]).floor().min(w as f64 - 1.0);
        let min_y = pa[1].min(pb[1]).min(pc[1]).ceil().max(0.0);
        let max_y = pa[1].max(pb[1]).max(pc[1]).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                let p = [x as f64, y as f64];
                let b = [edge_fn(pb, pc, p) / area, edge_fn(pc, pa, p) / area, edge_fn(pa, pb, p) / area];
                if b.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let z = 1.0 / (b[0] / va.depth + b[1] / vb.depth + b[2] / vc.depth);
                let k = y * w + x;
                if z < depth[k] {
                    depth[k] = z;
                    triangle[k] = t as u32;
                    bary[k] = b;
                }
            }
        }
    }

    let mut hard = vec![[0.0; 4]; np];
    for k in 0..np {
        if triangle[k] == NO_TRIANGLE {
            continue;
        }
        let tri = surface.triangles[triangle[k] as usize];
        let b = bary[k];
        let uv = std::array::from_fn(|d| (0..3).map(|i| b[i] * surface.uvs[tri[i]][d]).sum());
        let c = sample_rgb(texture, uv);
        hard[k] = [c[0], c[1], c[2], 1.0];
    }

    let silhouette = |t: usize, e: usize| match surface.neighbors[t][e] {
        None => true,
        Some(n) => signed_area[n] == 0.0 || signed_area[n].signum() != signed_area[t].signum()
            || surface.triangles[n].iter().any(|&v| screen[v].is_none()),
    };
    let mut pairs = Vec::new();
    for axis in 0..2 {
        let (xs, ys) = if axis == 0 { (w.saturating_sub(1), h) } else { (w, h.saturating_sub(1)) };
        for y in 0..ys {
            for x in 0..xs {
                let p = y * w + x;
                let q = if axis == 0 { p + 1 } else { p + w };
                let (tp, tq) = (triangle[p], triangle[q]);
                if tp == tq {
                    continue;
                }
                let (near, far) = if tp == NO_TRIANGLE {
                    (q, p)
                } else if tq == NO_TRIANGLE || depth[p] <= depth[q] {
                    (p, q)
                } else {
                    (q, p)
                };
                let t = triangle[near] as usize;
                let coord = |k: usize| [(k % w) as f64, (k / w) as f64];
                let (cn, cf) = (coord(near), coord(far));
                let other = 1 - axis;
                let line = cn[other];
                let dir = cf[axis] - cn[axis];
                let tri = surface.triangles[t];
                for e in 0..3 {
                    if !silhouette(t, e) {
                        continue;
                    }
                    let (va, vb) = (tri[e], tri[(e + 1) % 3]);
                    let (a, b) = (screen[va].unwrap(), screen[vb].unwrap());
                    if (a[other] - line) * (b[other] - line) >= 0.0 {
                        continue;
                    }
                    let s = (line - a[other]) / (b[other] - a[other]);
                    let cross = a[axis] + s * (b[axis] - a[axis]);
                    let frac = (cross - cn[axis]) / dir;
                    if !(0.0..=1.0).contains(&frac) {
                        continue;
                    }
                    let (target, source, weight, dweight_dt) =
                        if frac < 0.5 { (near, far, 0.5 - frac, -1.0) } else { (far, near, frac - 0.5, 1.0) };
                    pairs.push(EdgePair { target, source, weight, dweight_dt, dir, axis, edge: [va, vb], s });
                    break;
                }
            }
        }
    }

    let mut unclamped = hard.clone();
    for pr in &pairs {
        for c in 0..4 {
            unclamped[pr.target][c] += pr.weight * (hard[pr.source][c] - hard[pr.target][c]);
        }
    }
    let mut rgb = vec![0.0; 3 * np];
    let mut mask = vec![0.0; np];
    for k in 0..np {
        for c in 0..3 {
            rgb[3 * k + c] = unclamped[k][c].clamp(0.0, 1.0);
        }
        mask[k] = unclamped[k][3].clamp(0.0, 1.0);
    }
    RenderOutput {
        width: w,
        height: h,
        rgb,
        mask,
        depth,
        record: RenderRecord { triangle, bary, screen, hard, unclamped, pairs, positions: positions.to_vec() },
    }
}

/// Reverse pass of [`rasterize`] given gradients of the clamped `rgb` and `mask`.
pub fn rasterize_backward(
    output: &RenderOutput,
    surface: &Surface,
    texture: &Texture,
    camera: &Camera,
    grad_rgb: &[f64],
    grad_mask: &[f64],
    want_texture: bool,
) -> RenderGradients {
    let rec = &output.record;
    let np = output.width * output.height;
    let mut g4 = vec![[0.0; 4]; np];
    for k in 0..np {
        for c in 0..4 {
            let g = if c < 3 { grad_rgb[3 * k + c] } else { grad_mask[k] };
            let u = rec.unclamped[k][c];
            g4[k][c] = if (0.0..=1.0).contains(&u) { g } else { 0.0 };
        }
    }
    let nv = rec.positions.len();
    let mut gscreen = vec![[0.0; 2]; nv];
    let mut ghard = g4.clone();
    for pr in &rec.pairs {
        let g = g4[pr.target];
        let mut gt = 0.0;
        for c in 0..4 {
            ghard[pr.source][c] += pr.weight * g[c];
            ghard[pr.target][c] -= pr.weight * g[c];
            gt += pr.dweight_dt * g[c] * (rec.hard[pr.source][c] - rec.hard[pr.target][c]);
        }
        if gt == 0.0 {
            continue;
        }
        let gcross = gt / pr.dir;
        let (a, o) = (pr.axis, 1 - pr.axis);
        let pa = rec.screen[pr.edge[0]].unwrap();
        let pb = rec.screen[pr.edge[1]].unwrap();
        let s = pr.s;
        let span = pb[a] - pa[a];
        let rise = pb[o] - pa[o];
        gscreen[pr.edge[0]][a] += gcross * (1.0 - s);
        gscreen[pr.edge[1]][a] += gcross * s;
        gscreen[pr.edge[0]][o] += gcross * span * (s - 1.0) / rise;
        gscreen[pr.edge[1]][o] -= gcross * s * span / rise;
    }

    let mut gtex = want_texture.then(|| vec![0.0; texture.texels.len()]);
    for k in 0..np {
        let t = rec.triangle[k];
        if t == NO_TRIANGLE {
            continue;
        }
        let gc = [ghard[k][0], ghard[k][1], ghard[k][2]];
        if gc == [0.0; 3] {
            continue;
        }
        let tri = surface.triangles[t as usize];
        let b = rec.bary[k];
        let uv: [f64; 2] = std::array::from_fn(|d| (0..3).map(|i| b[i] * surface.uvs[tri[i]][d]).sum());
        let tap = texture.tap(uv[0], uv[1]);
        let (mut gu, mut gv) = (0.0, 0.0);
        for c in 0..3 {
            for j in 0..4 {
                let tv = texel(texture, tap.index[j], c);
                gu += gc[c] * tap.d_du[j] * tv;
                gv += gc[c] * tap.d_dv[j] * tv;
                if let Some(gt) = gtex.as_mut() {
                    let ch = if texture.channels == 1 { 0 } else { c };
                    gt[tap.index[j] * texture.channels + ch] += gc[c] * tap.weight[j];
                }
            }
        }
        let gb: [f64; 3] = std::array::from_fn(|i| gu * surface.uvs[tri[i]][0] + gv * surface.uvs[tri[i]][1]);
        let p = [(k % output.width) as f64, (k / output.width) as f64];
        let v: [[f64; 2]; 3] = std::array::from_fn(|i| rec.screen[tri[i]].unwrap());
        let area = edge_fn(v[0], v[1], v[2]);
        let mean: f64 = (0..3).map(|i| gb[i] * b[i]).sum();
        let ge: [f64; 3] = std::array::from_fn(|i| (gb[i] - mean) / area);
        let mut gv3 = [[0.0; 2]; 3];
        let [g0, g1, g2] = &mut gv3;
        edge_fn_backward(v[1], v[2], p, ge[0], g1, g2);
        edge_fn_backward(v[2], v[0], p, ge[1], g2, g0);
        edge_fn_backward(v[0], v[1], p, ge[2], g0, g1);
        for i in 0..3 {
            gscreen[tri[i]][0] += gv3[i][0];
            gscreen[tri[i]][1] += gv3[i][1];
        }
    }

    let positions = rec
        .positions
        .iter()
        .zip(&gscreen)
        .map(|(&x, &g)| if g == [0.0; 2] { [0.0; 3] } else { camera.pullback(x, g) })
        .collect();
    RenderGradients { positions, texture: gtex }
}
