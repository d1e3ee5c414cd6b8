//! Alpha-shape boundary extraction from a Delaunay complex.

use std::collections::BTreeMap;

use super::delaunay::{triangle_circumradius, Tetrahedralization};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Boundary surface of an alpha shape.
#[derive(Debug, Clone)]
pub struct AlphaShapeResult {
    pub mesh: TriangleMesh,
    pub alpha: f64,
    /// Input point index of every mesh vertex.
    pub source: Vec<usize>,
    pub manifold: ManifoldReport,
    /// Input points that are a vertex of some kept tetrahedron.
    pub captured: usize,
}

/// Topological health of a triangle surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ManifoldReport {
    /// Edges not shared by exactly two faces.
    pub bad_edges: usize,
    /// Edges traversed twice in the same direction (inconsistent orientation).
    pub flipped_edges: usize,
    /// Vertices whose link is not a single cycle.
    pub bad_vertices: usize,
    /// V − E + F.
    pub euler: i64,
}

impl ManifoldReport {
    pub fn is_closed_manifold(&self) -> bool {
        self.bad_edges == 0 && self.flipped_edges == 0 && self.bad_vertices == 0
    }
}

pub fn check_manifold(mesh: &TriangleMesh) -> ManifoldReport {
    let edges = mesh.edge_counts();
    let bad_edges = edges.values().filter(|&&c| c != 2).count();
    let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    // link of vertex a in face (a, b, c) is the arc b → c
    let mut links: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mesh.vertices.len()];
    for f in &mesh.faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            links[f[k]].push((f[(k + 1) % 3], f[(k + 2) % 3]));
        }
    }
    let flipped_edges = directed.values().filter(|&&c| c > 1).count();
    let mut used = vec![false; mesh.vertices.len()];
    let mut bad_vertices = 0;
    for (v, arcs) in links.iter().enumerate() {
        if arcs.is_empty() {
            continue;
        }
        used[v] = true;
        let next: BTreeMap<usize, usize> = arcs.iter().copied().collect();
        if next.len() != arcs.len() {
            bad_vertices += 1;
            continue;
        }
        let start = arcs[0].0;
        let mut cur = start;
        let mut steps = 0;
        loop {
            match next.get(&cur) {
                Some(&n) => {
                    cur = n;
                    steps += 1;
                }
                None => break,
            }
            if cur == start || steps > arcs.len() {
                break;
            }
        }
        if cur != start || steps != arcs.len() {
            bad_vertices += 1;
        }
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    ManifoldReport {
        bad_edges,
        flipped_edges,
        bad_vertices,
        euler: v - edges.len() as i64 + mesh.faces.len() as i64,
    }
}

/// Carves from the outside every tetrahedron whose circumradius exceeds
/// `alpha`, entering only through faces whose circumradius also exceeds it,
/// and returns the surface between kept and carved space.
pub fn alpha_shape_boundary(tri: &Tetrahedralization, alpha: f64) -> Result<AlphaShapeResult> {
    if !(alpha > 0.0) {
        return Err(Error::arg(format!("alpha must be positive, got {alpha}")));
    }
    let n = tri.tets.len();
    let radius: Vec<f64> = (0..n).map(|t| tri.circumradius(t)).collect();
    let face_open = |t: usize, k: usize| {
        let [a, b, c] = tri.face(t, k).map(|i| tri.points[i]);
        triangle_circumradius(&a, &b, &c) > alpha
    };
    let mut exterior = vec![false; n];
    let mut stack = Vec::new();
    for t in 0..n {
        if radius[t] > alpha && (0..4).any(|k| tri.neighbors[t][k].is_none() && face_open(t, k)) {
            exterior[t] = true;
            stack.push(t);
        }
    }
    while let Some(t) = stack.pop() {
        for k in 0..4 {
            if let Some(nb) = tri.neighbors[t][k] {
                if !exterior[nb] && radius[nb] > alpha && face_open(t, k) {
                    exterior[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    if exterior.iter().all(|&e| e) {
        let largest = radius.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max);
        return Err(Error::EmptySurface {
            alpha,
            hint: format!("no tetrahedron survives; try an alpha above {largest:.4}"),
        });
    }
    let mut index = vec![usize::MAX; tri.points.len()];
    let mut source = Vec::new();
    let mut faces = Vec::new();
    let mut kept = vec![false; tri.points.len()];
    for t in 0..n {
        if exterior[t] {
            continue;
        }
        for &p in &tri.tets[t] {
            kept[p] = true;
        }
        for k in 0..4 {
            let outside = match tri.neighbors[t][k] {
                None => true,
                Some(nb) => exterior[nb],
            };
            if outside {
                let f = tri.face(t, k).map(|p| {
                    if index[p] == usize::MAX {
                        index[p] = source.len();
                        source.push(p);
                    }
                    index[p]
                });
                faces.push(f);
            }
        }
    }
    let mesh = TriangleMesh {
        vertices: source.iter().map(|&p| tri.points[p]).collect(),
        faces,
        normals: None,
    };
    let manifold = check_manifold(&mesh);
    Ok(AlphaShapeResult {
        mesh,
        alpha,
        source,
        manifold,
        captured: kept.iter().filter(|&&k| k).count(),
    })
}
