//! Umbrella smoothing and discrete mean curvature.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::TriangleMesh;

fn vertex_neighbors(mesh: &TriangleMesh) -> Vec<Vec<usize>> {
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mesh.vertices.len()];
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            sets[a].insert(b);
            sets[b].insert(a);
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// `iterations` Jacobi steps of v ← v + λ(mean of neighbors − v).
pub fn laplacian_smooth(mesh: &TriangleMesh, lambda: f64, iterations: usize) -> Result<TriangleMesh> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::arg(format!("smoothing lambda must lie in (0, 1), got {lambda}")));
    }
    let mut out = mesh.clone();
    out.normals = None;
    if iterations == 0 {
        return Ok(out);
    }
    let nbrs = vertex_neighbors(mesh);
    for _ in 0..iterations {
        let prev = out.vertices.clone();
        for (i, n) in nbrs.iter().enumerate() {
            if n.is_empty() {
                continue;
            }
            let avg = n.iter().fold(Vec3::zeros(), |acc, &j| acc + prev[j]) / n.len() as f64;
            out.vertices[i] = prev[i] + lambda * (avg - prev[i]);
        }
    }
    Ok(out)
}

/// Umbrella smoothing where every shrinking step λ is followed by an
/// inflating step μ < −λ, which cancels the low-frequency shrinkage.
pub fn taubin_smooth(mesh: &TriangleMesh, lambda: f64, mu: f64, iterations: usize) -> Result<TriangleMesh> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::arg(format!("smoothing lambda must lie in (0, 1), got {lambda}")));
    }
    if !(mu < 0.0 && mu > -1.0) {
        return Err(Error::arg(format!("inflation mu must lie in (-1, 0), got {mu}")));
    }
    let mut out = mesh.clone();
    out.normals = None;
    let nbrs = vertex_neighbors(mesh);
    for _ in 0..iterations {
        for step in [lambda, mu] {
            let prev = out.vertices.clone();
            for (i, n) in nbrs.iter().enumerate() {
                if n.is_empty() {
                    continue;
                }
                let avg = n.iter().fold(Vec3::zeros(), |acc, &j| acc + prev[j]) / n.len() as f64;
                out.vertices[i] = prev[i] + step * (avg - prev[i]);
            }
        }
    }
    Ok(out)
}

/// |cotangent Laplacian| / 2 over the mixed Voronoi area; boundary vertices
/// take the largest value among their interior neighbors.
pub fn curvature_estimate(mesh: &TriangleMesh) -> Vec<f64> {
    let n = mesh.vertices.len();
    let mut lap = vec![Vec3::zeros(); n];
    let mut area = vec![0.0; n];
    for f in &mesh.faces {
        let p = f.map(|i| mesh.vertices[i]);
        let face_area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
        if face_area == 0.0 {
            continue;
        }
        let mut cot = [0.0; 3];
        let mut obtuse = None;
        for k in 0..3 {
            let (u, v) = (p[(k + 1) % 3] - p[k], p[(k + 2) % 3] - p[k]);
            cot[k] = u.dot(&v) / u.cross(&v).norm();
            if u.dot(&v) < 0.0 {
                obtuse = Some(k);
            }
        }
        for k in 0..3 {
            let (j, l) = ((k + 1) % 3, (k + 2) % 3);
            // the edge (j, l) opposite corner k carries cot k
            lap[f[j]] += cot[k] * (p[l] - p[j]);
            lap[f[l]] += cot[k] * (p[j] - p[l]);
        }
        for k in 0..3 {
            let (j, l) = ((k + 1) % 3, (k + 2) % 3);
            area[f[k]] += match obtuse {
                None => ((p[l] - p[k]).norm_squared() * cot[j] + (p[j] - p[k]).norm_squared() * cot[l]) / 8.0,
                Some(o) if o == k => face_area / 2.0,
                Some(_) => face_area / 4.0,
            };
        }
    }
    let mut h: Vec<f64> = (0..n)
        .map(|i| if area[i] > 0.0 { lap[i].norm() / (2.0 * area[i]) / 2.0 } else { 0.0 })
        .collect();

    let mut boundary = vec![false; n];
    for ((a, b), c) in mesh.edge_counts() {
        if c == 1 {
            boundary[a] = true;
            boundary[b] = true;
        }
    }
    if boundary.iter().any(|&b| b) {
        let nbrs = vertex_neighbors(mesh);
        let interior = h.clone();
        for i in (0..n).filter(|&i| boundary[i]) {
            h[i] = nbrs[i]
                .iter()
                .filter(|&&j| !boundary[j])
                .map(|&j| interior[j])
                .fold(0.0, f64::max);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::uv_sphere;
    use crate::reinit::delaunay::delaunay3d;
    use crate::reinit::alpha::alpha_shape_boundary;
    use crate::reinit::tests::fibonacci_sphere;

    fn tetrahedron() -> TriangleMesh {
        let s = 1.0 / 2f64.sqrt();
        TriangleMesh::new(
            vec![Vec3::new(1.0, 0.0, -s), Vec3::new(-1.0, 0.0, -s), Vec3::new(0.0, 1.0, s), Vec3::new(0.0, -1.0, s)],
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
        )
        .unwrap()
    }

    fn centroid(m: &TriangleMesh) -> Vec3 {
        m.vertices.iter().sum::<Vec3>() / m.vertices.len() as f64
    }

    #[test]
    fn zero_iterations_is_identity() {
        let t = tetrahedron();
        assert_eq!(laplacian_smooth(&t, 0.5, 0).unwrap().vertices, t.vertices);
        assert!(laplacian_smooth(&t, 1.0, 1).is_err());
    }

    #[test]
    fn tetrahedron_shrinks_about_a_fixed_centroid() {
        let t = tetrahedron();
        let c0 = centroid(&t);
        let s = laplacian_smooth(&t, 0.5, 3).unwrap();
        assert!((centroid(&s) - c0).norm() < 1e-12);
        for (a, b) in s.vertices.iter().zip(&t.vertices) {
            assert!((a - c0).norm() < (b - c0).norm());
        }
        assert_eq!(s.faces, t.faces);
    }

    #[test]
    fn ringed_vertex_moves_to_ring_average() {
        // hexagonal fan with a raised center
        let mut vertices = vec![Vec3::new(0.0, 0.0, 0.7)];
        for k in 0..6 {
            let a = std::f64::consts::PI / 3.0 * k as f64;
            vertices.push(Vec3::new(a.cos(), a.sin(), 0.2));
        }
        let faces = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let mesh = TriangleMesh::new(vertices, faces).unwrap();
        let lambda = 0.5;
        let s = laplacian_smooth(&mesh, lambda, 1).unwrap();
        let expect = Vec3::new(0.0, 0.0, 0.7) + lambda * (Vec3::new(0.0, 0.0, 0.2) - Vec3::new(0.0, 0.0, 0.7));
        assert!((s.vertices[0] - expect).norm() < 1e-15);
    }

    #[test]
    fn flat_grid_has_zero_curvature() {
        let n = 6;
        let vertices: Vec<Vec3> = (0..n * n).map(|i| Vec3::new((i % n) as f64 * 0.3, (i / n) as f64 * 0.2, 0.0)).collect();
        let mut faces = Vec::new();
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                let i = y * n + x;
                faces.push([i, i + 1, i + n + 1]);
                faces.push([i, i + n + 1, i + n]);
            }
        }
        let mesh = TriangleMesh::new(vertices, faces).unwrap();
        let h = curvature_estimate(&mesh);
        for (i, v) in h.iter().enumerate() {
            let (x, y) = (i % n, i / n);
            if x > 0 && y > 0 && x < n - 1 && y < n - 1 {
                assert!(v.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unit_sphere_has_unit_curvature_and_scales_inversely() {
        let pts = fibonacci_sphere(2000, 1.0);
        let shape = alpha_shape_boundary(&delaunay3d(&pts).unwrap(), 10.0).unwrap();
        let h = curvature_estimate(&shape.mesh);
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        assert!((mean - 1.0).abs() < 0.15, "mean curvature {mean}");
        assert!(h.iter().all(|v| (v - 1.0).abs() < 0.15));

        let big = TriangleMesh {
            vertices: shape.mesh.vertices.iter().map(|v| v * 2.0).collect(),
            ..shape.mesh.clone()
        };
        for (a, b) in curvature_estimate(&big).iter().zip(&h) {
            assert!((a * 2.0 - b).abs() < 1e-9 * b.max(1.0));
        }
        let uv = uv_sphere(Vec3::zeros(), 1.0, 30, 60);
        let h = curvature_estimate(&uv);
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        assert!((mean - 1.0).abs() < 0.15);
    }
}
