//! Curvature-weighted, spacing-controlled point sampling on a triangle mesh.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::math::Vec3;
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    pub target_count: usize,
    pub curvature_boost: f64,
    /// Minimum spacing as a fraction of √(area / target_count).
    pub min_spacing_factor: f64,
    pub smoothing_iterations: usize,
    pub smoothing_lambda: f64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            target_count: 1000,
            curvature_boost: 1.0,
            min_spacing_factor: 0.5,
            smoothing_iterations: 10,
            smoothing_lambda: 0.5,
        }
    }
}

/// Samples with the triangle and barycentric coordinates they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub triangles: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
    /// How many points short of `target_count` the spacing rule left us.
    pub shortfall: usize,
}

/// Per-triangle sampling density: area × (1 + boost · κ̄ / mean κ̄).
fn triangle_weights(mesh: &TriangleMesh, curvatures: &[f64], boost: f64) -> (Vec<f64>, f64) {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let total: f64 = areas.iter().sum();
    let kappa: Vec<f64> = mesh
        .faces
        .iter()
        .map(|f| f.iter().map(|&v| curvatures[v]).sum::<f64>() / 3.0)
        .collect();
    let mean = if total > 0.0 {
        areas.iter().zip(&kappa).map(|(a, k)| a * k).sum::<f64>() / total
    } else {
        0.0
    };
    let weights = areas
        .iter()
        .zip(&kappa)
        .map(|(a, k)| {
            let rel = if mean > 0.0 { k / mean } else { 0.0 };
            let base = if total > 0.0 { *a } else { 1.0 };
            base * (1.0 + boost * rel)
        })
        .collect();
    (weights, total)
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Weighted sample elimination down to `keep` points (survivor indices, ascending).
fn eliminate(points: &[Vec3], keep: usize, r_max: f64) -> Vec<usize> {
    let n = points.len();
    if n <= keep {
        return (0..n).collect();
    }
    let radius = 2.0 * r_max;
    let tree = KdTree::new(points);
    let neighbors: Vec<Vec<(usize, f64)>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if radius > 0.0 {
                tree.within(p, radius).into_iter().filter(|&(j, _)| j != i).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let contrib = |d: f64| (1.0 - d / radius).powi(8);
    let mut weight: Vec<f64> = neighbors
        .iter()
        .map(|nb| nb.iter().map(|&(_, d)| contrib(d)).sum())
        .collect();
    let mut heap: BinaryHeap<Entry> = (0..n).map(|i| Entry(weight[i], i)).collect();
    let mut alive = vec![true; n];
    let mut remaining = n;
    while remaining > keep {
        let Some(Entry(w, i)) = heap.pop() else { break };
        if !alive[i] || w.to_bits() != weight[i].to_bits() {
            continue;
        }
        alive[i] = false;
        remaining -= 1;
        for &(j, d) in &neighbors[i] {
            if alive[j] {
                weight[j] -= contrib(d);
                heap.push(Entry(weight[j], j));
            }
        }
    }
    (0..n).filter(|&i| alive[i]).collect()
}

pub fn resample_surface<R: Rng>(
    mesh: &TriangleMesh,
    curvatures: &[f64],
    config: &ResampleConfig,
    rng: &mut R,
) -> Result<SurfaceSamples> {
    if config.target_count < 4 {
        return Err(Error::arg(format!("target count {} is below 4", config.target_count)));
    }
    if mesh.faces.is_empty() {
        return Err(Error::Geometry("cannot sample a mesh without faces".into()));
    }
    if curvatures.len() != mesh.vertices.len() {
        return Err(Error::arg("one curvature value per vertex is required"));
    }
    let (weights, area) = triangle_weights(mesh, curvatures, config.curvature_boost.max(0.0));
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let candidates = 4 * config.target_count;
    let mut points = Vec::with_capacity(candidates);
    let mut tris = Vec::with_capacity(candidates);
    let mut barys = Vec::with_capacity(candidates);
    for _ in 0..candidates {
        let u = rng.gen::<f64>() * acc;
        let t = cumulative.partition_point(|&c| c <= u).min(weights.len() - 1);
        let s = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let b = [1.0 - s, s * (1.0 - r2), s * r2];
        let [p0, p1, p2] = mesh.faces[t].map(|i| mesh.vertices[i]);
        points.push(p0 * b[0] + p1 * b[1] + p2 * b[2]);
        tris.push(t);
        barys.push(b);
    }

    let target = config.target_count;
    let r_max = (area / (2.0 * 3f64.sqrt() * target as f64)).sqrt();
    let survivors = eliminate(&points, target, r_max);

    let min_spacing = config.min_spacing_factor.max(0.0) * (area / target as f64).sqrt();
    let surv_pts: Vec<Vec3> = survivors.iter().map(|&i| points[i]).collect();
    let tree = KdTree::new(&surv_pts);
    let mut accepted = vec![false; survivors.len()];
    let mut out = SurfaceSamples {
        points: Vec::new(),
        triangles: Vec::new(),
        barycentric: Vec::new(),
        shortfall: 0,
    };
    for (k, &i) in survivors.iter().enumerate() {
        let crowded = tree
            .within(&surv_pts[k], min_spacing)
            .iter()
            .any(|&(j, d)| j != k && accepted[j] && (d < min_spacing || d == 0.0));
        if crowded {
            continue;
        }
        accepted[k] = true;
        out.points.push(points[i]);
        out.triangles.push(tris[i]);
        out.barycentric.push(barys[i]);
    }
    out.shortfall = target.saturating_sub(out.points.len());
    Ok(out)
}
