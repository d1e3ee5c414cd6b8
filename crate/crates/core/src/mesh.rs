//! Triangle meshes and a z-buffered rasterizer for normal maps and silhouettes.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::math::Vec3;
use crate::par::par_map;

/// Faces with area at or below this are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriangleMesh {
            vertices,
            faces,
            normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!("face {fi} references vertex {bad} of {n}")));
            }
            if self.face_area(fi) <= MIN_FACE_AREA {
                return Err(Error::Geometry(format!("face {fi} is degenerate")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::Validation(format!("{} normals for {n} vertices", normals.len())));
            }
        }
        Ok(())
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Explicit normals if present, otherwise area-weighted face-normal averages.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        if let Some(n) = &self.normals {
            return n.clone();
        }
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            // cross product length is twice the area, so this is area weighting
            let n = (b - a).cross(&(c - a));
            for &i in f {
                acc[i] += n;
            }
        }
        acc.into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::zeros))
            .collect()
    }

    /// Every undirected edge with its incident face count.
    pub fn edge_counts(&self) -> std::collections::BTreeMap<(usize, usize), usize> {
        let mut edges = std::collections::BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }
}

/// Per-pixel visible face and perspective-correct barycentrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragments {
    pub width: usize,
    pub height: usize,
    pub face: Vec<Option<usize>>,
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl Fragments {
    pub fn coverage(&self) -> Plane {
        let mut p = Plane::new(self.width, self.height);
        for (v, f) in p.data.iter_mut().zip(&self.face) {
            *v = if f.is_some() { 1.0 } else { 0.0 };
        }
        p
    }
}

struct ScreenTri {
    p: [(f64, f64); 3],
    inv_z: [f64; 3],
    area2: f64,
    rows: (usize, usize),
    cols: (usize, usize),
}

fn setup_triangle(mesh: &TriangleMesh, face: usize, cam_pts: &[Vec3], camera: &Camera) -> Option<ScreenTri> {
    let idx = mesh.faces[face];
    let t = idx.map(|i| cam_pts[i]);
    // triangles crossing the near plane are dropped rather than clipped
    if t.iter().any(|v| v.z < camera.near || v.z > camera.far) {
        return None;
    }
    let p = t.map(|v| camera.project(&v));
    let area2 = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
    if area2 == 0.0 || !area2.is_finite() {
        return None;
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    let min_x = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
    let max_x = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let max_y = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (min_x - 0.5).ceil().max(0.0);
    let x1 = (max_x - 0.5).floor().min(w - 1.0);
    let y0 = (min_y - 0.5).ceil().max(0.0);
    let y1 = (max_y - 0.5).floor().min(h - 1.0);
    if x1 < x0 || y1 < y0 {
        return None;
    }
    Some(ScreenTri {
        p,
        inv_z: t.map(|v| 1.0 / v.z),
        area2,
        rows: (y0 as usize, y1 as usize),
        cols: (x0 as usize, x1 as usize),
    })
}

/// Z-buffers the mesh (double-sided) and records what each pixel sees.
pub fn rasterize_fragments(mesh: &TriangleMesh, camera: &Camera) -> Fragments {
    let (w, h) = (camera.width, camera.height);
    let cam_pts: Vec<Vec3> = mesh.vertices.iter().map(|v| camera.to_camera(v)).collect();
    let tris: Vec<Option<ScreenTri>> = (0..mesh.faces.len())
        .map(|f| setup_triangle(mesh, f, &cam_pts, camera))
        .collect();
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); h];
    for (fi, t) in tris.iter().enumerate() {
        if let Some(t) = t {
            for row in &mut by_row[t.rows.0..=t.rows.1] {
                row.push(fi);
            }
        }
    }
    let rows: Vec<usize> = (0..h).collect();
    let row_out = par_map(&rows, |&y| {
        let mut face = vec![None; w];
        let mut bary = vec![[0.0; 3]; w];
        let mut depth = vec![f64::INFINITY; w];
        let py = y as f64 + 0.5;
        for &fi in &by_row[y] {
            let t = tris[fi].as_ref().unwrap();
            for x in t.cols.0..=t.cols.1 {
                let px = x as f64 + 0.5;
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (py - a.1) - (px - a.0) * (b.1 - a.1);
                let l0 = edge(t.p[1], t.p[2]) / t.area2;
                let l1 = edge(t.p[2], t.p[0]) / t.area2;
                let l2 = edge(t.p[0], t.p[1]) / t.area2;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let inv = l0 * t.inv_z[0] + l1 * t.inv_z[1] + l2 * t.inv_z[2];
                let z = 1.0 / inv;
                let nearer = z < depth[x] || (z == depth[x] && face[x].is_some_and(|f| fi < f));
                if nearer {
                    depth[x] = z;
                    face[x] = Some(fi);
                    bary[x] = [l0 * t.inv_z[0] * z, l1 * t.inv_z[1] * z, l2 * t.inv_z[2] * z];
                }
            }
        }
        (face, bary, depth)
    });
    let mut out = Fragments {
        width: w,
        height: h,
        face: Vec::with_capacity(w * h),
        bary: Vec::with_capacity(w * h),
        depth: Vec::with_capacity(w * h),
    };
    for (f, b, d) in row_out {
        out.face.extend(f);
        out.bary.extend(b);
        out.depth.extend(d);
    }
    out
}

/// Camera-space normals; uncovered pixels hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub coverage: Vec<bool>,
}

impl NormalMap {
    pub fn empty(width: usize, height: usize) -> Self {
        NormalMap {
            width,
            height,
            normals: vec![Vec3::zeros(); width * height],
            coverage: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vec3> {
        let i = y * self.width + x;
        self.coverage[i].then_some(self.normals[i])
    }

    pub fn silhouette(&self) -> Plane {
        let mut p = Plane::new(self.width, self.height);
        for (v, &c) in p.data.iter_mut().zip(&self.coverage) {
            *v = if c { 1.0 } else { 0.0 };
        }
        p
    }
}

/// Normal map and binary silhouette of `mesh` seen from `camera`.
pub fn rasterize_mesh(mesh: &TriangleMesh, camera: &Camera) -> (NormalMap, Plane) {
    let frags = rasterize_fragments(mesh, camera);
    let world_normals = mesh.vertex_normals();
    let cam_normals: Vec<Vec3> = world_normals.iter().map(|n| camera.rotation * n).collect();
    let mut map = NormalMap::empty(frags.width, frags.height);
    for (i, face) in frags.face.iter().enumerate() {
        let Some(fi) = *face else { continue };
        let f = mesh.faces[fi];
        let b = frags.bary[i];
        let n = cam_normals[f[0]] * b[0] + cam_normals[f[1]] * b[1] + cam_normals[f[2]] * b[2];
        let n = n.try_normalize(1e-12).unwrap_or_else(|| {
            let [a, bb, c] = f.map(|k| mesh.vertices[k]);
            camera.rotation * (bb - a).cross(&(c - a)).normalize()
        });
        map.normals[i] = n;
        map.coverage[i] = true;
    }
    let sil = frags.coverage();
    (map, sil)
}

/// Interpolates a per-vertex attribute with perspective-correct barycentrics;
/// uncovered pixels get `background`.
pub fn interpolate_attribute(mesh: &TriangleMesh, frags: &Fragments, values: &[Vec3], background: Vec3) -> Vec<Vec3> {
    frags
        .face
        .iter()
        .zip(&frags.bary)
        .map(|(face, b)| match face {
            Some(fi) => {
                let f = mesh.faces[*fi];
                values[f[0]] * b[0] + values[f[1]] * b[1] + values[f[2]] * b[2]
            }
            None => background,
        })
        .collect()
}

/// Mean absolute per-channel difference over the union of both coverages.
pub fn compare_normal_maps(rendered: &NormalMap, predicted: &NormalMap) -> Result<f64> {
    if rendered.width != predicted.width || rendered.height != predicted.height {
        return Err(Error::arg(format!(
            "normal map sizes differ: {}x{} vs {}x{}",
            rendered.width, rendered.height, predicted.width, predicted.height
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..rendered.normals.len() {
        if !(rendered.coverage[i] || predicted.coverage[i]) {
            continue;
        }
        let a = if rendered.coverage[i] { rendered.normals[i] } else { Vec3::zeros() };
        let b = if predicted.coverage[i] { predicted.normals[i] } else { Vec3::zeros() };
        sum += (a - b).abs().sum();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / (3 * count) as f64 })
}

/// UV sphere with `stacks` latitude bands and `slices` longitude segments.
pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> TriangleMesh {
    let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
    for i in 1..stacks {
        let phi = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            let dir = Vec3::new(phi.sin() * theta.cos(), phi.cos(), phi.sin() * theta.sin());
            vertices.push(center + dir * radius);
        }
    }
    vertices.push(center - Vec3::new(0.0, radius, 0.0));
    let bottom = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j + 1), ring(1, j)]);
        faces.push([bottom, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    TriangleMesh {
        vertices,
        faces,
        normals: None,
    }
}
