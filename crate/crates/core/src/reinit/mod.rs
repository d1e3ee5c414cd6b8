//! Surface-guided re-initialization of a Gaussian cloud: mesh the means with
//! an alpha shape, smooth, resample uniformly with a curvature boost, and
//! rebuild Gaussians that inherit appearance from their old neighbors.

mod alpha;
mod delaunay;
mod regaussian;
mod resample;
mod smooth;

pub use alpha::{alpha_shape_boundary, check_manifold, AlphaShapeResult, ManifoldReport};
pub use delaunay::{circumsphere, delaunay3d, triangle_circumradius, Tetrahedralization};
pub use regaussian::{opacity_mass, random_unit_quaternion, re_gaussian};
pub use resample::{resample_surface, ResampleConfig, SurfaceSamples};
pub use smooth::{curvature_estimate, laplacian_smooth, taubin_smooth};

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::kdtree::KdTree;
use crate::math::Vec3;
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinitConfig {
    /// Fixed alpha; when absent, search upward from `alpha_factor` × median
    /// nearest-neighbor spacing.
    pub alpha: Option<f64>,
    pub alpha_factor: f64,
    /// Alpha is multiplied by this until the shape is acceptable.
    pub alpha_growth: f64,
    pub max_alpha_attempts: usize,
    /// Acceptable shapes keep at least this fraction of the points as
    /// vertices of surviving tetrahedra.
    pub min_captured: f64,
    /// Also demand a closed 2-manifold boundary.
    pub require_closed: bool,
    /// The search stops once the surface area changes by at most this
    /// fraction over one growth step.
    pub area_tolerance: f64,
    /// Output size; defaults to the input size.
    pub target_count: Option<usize>,
    pub curvature_boost: f64,
    pub min_spacing_factor: f64,
    pub smoothing_iterations: usize,
    pub smoothing_lambda: f64,
    /// Inflating counter-step after each smoothing step; `None` gives plain umbrella smoothing.
    pub smoothing_mu: Option<f64>,
    /// Neighbors consulted when inheriting opacity and color.
    pub knn: usize,
    pub seed: u64,
    /// Writes the alpha-shape and smoothed meshes as OBJ files here.
    pub dump_dir: Option<PathBuf>,
}

impl Default for ReinitConfig {
    fn default() -> Self {
        ReinitConfig {
            alpha: None,
            alpha_factor: 3.0,
            alpha_growth: 1.5,
            max_alpha_attempts: 40,
            min_captured: 0.95,
            require_closed: false,
            area_tolerance: 0.1,
            target_count: None,
            curvature_boost: 1.0,
            min_spacing_factor: 0.5,
            smoothing_iterations: 10,
            smoothing_lambda: 0.5,
            smoothing_mu: Some(-0.53),
            knn: 3,
            seed: 0,
            dump_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinitReport {
    pub old_count: usize,
    pub new_count: usize,
    pub alpha: f64,
    pub alpha_attempts: usize,
    /// Fraction of the input points captured by the alpha shape.
    pub captured: f64,
    /// Boundary edges not shared by exactly two faces, before smoothing.
    pub bad_edges: usize,
    pub bad_vertices: usize,
    pub euler: i64,
    pub surface_vertices: usize,
    pub surface_faces: usize,
    pub surface_area: f64,
    pub shortfall: usize,
    /// Coefficient of variation of nearest-neighbor distances.
    pub cov_before: f64,
    pub cov_after: f64,
    pub opacity_mass_before: f64,
    pub opacity_mass_after: f64,
}

/// Nearest-neighbor distances of every point to the rest of the set.
pub fn nn_distances(points: &[Vec3]) -> Vec<f64> {
    if points.len() < 2 {
        return Vec::new();
    }
    let tree = KdTree::new(points);
    points.iter().map(|p| tree.nearest(p, 2)[1].1).collect()
}

/// Standard deviation over mean of nearest-neighbor distances.
pub fn nn_distance_cov(points: &[Vec3]) -> f64 {
    let d = nn_distances(points);
    if d.is_empty() {
        return 0.0;
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// ASCII OBJ with `v` and `f` lines only.
pub fn mesh_to_obj(mesh: &TriangleMesh) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in &mesh.faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

/// Smallest alpha, growing geometrically from `start`, whose shape captures
/// enough points (and is closed, if required) and whose surface area changes
/// by at most `area_tolerance` at the next alpha. Manifold defects are
/// otherwise reported, not repaired.
fn search_alpha(tri: &Tetrahedralization, start: f64, cfg: &ReinitConfig) -> Result<(AlphaShapeResult, usize)> {
    let growth = cfg.alpha_growth.max(1.0 + 1e-6);
    let largest = (0..tri.tets.len())
        .map(|t| tri.circumradius(t))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max);
    let needed = cfg.min_captured * tri.points.len() as f64;
    let acceptable = |s: &AlphaShapeResult| {
        s.captured as f64 >= needed && (!cfg.require_closed || s.manifold.is_closed_manifold())
    };
    let mut alpha = start;
    let mut current = alpha_shape_boundary(tri, alpha);
    let mut fallback: Option<(AlphaShapeResult, usize)> = None;
    for attempt in 1..=cfg.max_alpha_attempts.max(1) {
        let beyond = alpha > largest;
        alpha *= growth;
        let next = alpha_shape_boundary(tri, alpha);
        if let Ok(shape) = &current {
            if acceptable(shape) {
                let area = shape.mesh.surface_area();
                if let Ok(n) = &next {
                    if (n.mesh.surface_area() - area).abs() <= cfg.area_tolerance * area {
                        return Ok((current?, attempt));
                    }
                }
                if fallback.is_none() || beyond {
                    fallback = Some((shape.clone(), attempt));
                }
            }
        }
        if beyond {
            break;
        }
        current = next;
    }
    match (fallback, current) {
        (Some(f), _) => Ok(f),
        (None, Err(e)) => Err(e),
        (None, Ok(shape)) => Err(Error::Geometry(format!(
            "no acceptable alpha up to {alpha}: captured {} of {} points, boundary {:?}",
            shape.captured,
            tri.points.len(),
            shape.manifold
        ))),
    }
}

pub fn reinitialize(cloud: &GaussianCloud, config: &ReinitConfig) -> Result<(GaussianCloud, ReinitReport)> {
    if cloud.len() < 4 {
        return Err(Error::arg(format!("re-initialization needs at least 4 points, got {}", cloud.len())));
    }
    if !(0.0..=1.0).contains(&config.min_captured) {
        return Err(Error::arg(format!("min_captured must lie in [0, 1], got {}", config.min_captured)));
    }
    let means = cloud.means();
    let tri = delaunay3d(&means).map_err(|e| e.in_stage("delaunay"))?;
    let start = match config.alpha {
        Some(a) => a,
        None => {
            let positive: Vec<f64> = nn_distances(&means).into_iter().filter(|d| *d > 0.0).collect();
            let spacing = if positive.is_empty() { 0.0 } else { median(positive) };
            config.alpha_factor * spacing.max(f64::MIN_POSITIVE)
        }
    };
    let (shape, attempts) = if config.alpha.is_some() {
        let s = alpha_shape_boundary(&tri, start).map_err(|e| e.in_stage("alpha shape"))?;
        (s, 1)
    } else {
        search_alpha(&tri, start, config).map_err(|e| e.in_stage("alpha shape"))?
    };
    let smoothed = match config.smoothing_mu {
        Some(mu) => taubin_smooth(&shape.mesh, config.smoothing_lambda, mu, config.smoothing_iterations),
        None => laplacian_smooth(&shape.mesh, config.smoothing_lambda, config.smoothing_iterations),
    }
    .map_err(|e| e.in_stage("smoothing"))?;
    if let Some(dir) = &config.dump_dir {
        for (name, mesh) in [("alpha_shape.obj", &shape.mesh), ("smoothed.obj", &smoothed)] {
            let path = dir.join(name);
            std::fs::write(&path, mesh_to_obj(mesh)).map_err(|e| Error::io(path, e))?;
        }
    }
    let curvature = curvature_estimate(&smoothed);
    let target = config.target_count.unwrap_or(cloud.len());
    let rcfg = ResampleConfig {
        target_count: target,
        curvature_boost: config.curvature_boost,
        min_spacing_factor: config.min_spacing_factor,
        smoothing_iterations: config.smoothing_iterations,
        smoothing_lambda: config.smoothing_lambda,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = resample_surface(&smoothed, &curvature, &rcfg, &mut rng).map_err(|e| e.in_stage("resampling"))?;
    let out = re_gaussian(&samples.points, cloud, config.knn, &mut rng).map_err(|e| e.in_stage("re-gaussian"))?;
    let report = ReinitReport {
        old_count: cloud.len(),
        new_count: out.len(),
        alpha: shape.alpha,
        alpha_attempts: attempts,
        captured: shape.captured as f64 / means.len() as f64,
        bad_edges: shape.manifold.bad_edges,
        bad_vertices: shape.manifold.bad_vertices,
        euler: shape.manifold.euler,
        surface_vertices: smoothed.vertices.len(),
        surface_faces: smoothed.faces.len(),
        surface_area: smoothed.surface_area(),
        shortfall: samples.shortfall,
        cov_before: nn_distance_cov(&means),
        cov_after: nn_distance_cov(&out.means()),
        opacity_mass_before: opacity_mass(cloud),
        opacity_mass_after: opacity_mass(&out),
    };
    Ok((out, report))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::gaussian::GaussianPoint;
    use rand::Rng;

    pub(crate) fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Vec3> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                Vec3::new(r * th.cos(), y, r * th.sin()) * radius
            })
            .collect()
    }

    pub(crate) fn median_nn(points: &[Vec3]) -> f64 {
        median(nn_distances(points))
    }

    pub(crate) fn nn_cov(points: &[Vec3]) -> f64 {
        nn_distance_cov(points)
    }

    fn cloud_from(points: &[Vec3], seed: u64) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = points
            .iter()
            .map(|p| {
                let rgb = Vec3::new(rng.gen(), rng.gen(), rng.gen());
                GaussianPoint::isotropic(*p, 0.02, rng.gen_range(0.3..0.9), rgb, 1)
            })
            .collect();
        GaussianCloud::from_points(1, pts).unwrap()
    }

    fn clustered_sphere(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                loop {
                    let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let len = v.norm();
                    if !(0.1..=1.0).contains(&len) {
                        continue;
                    }
                    let mut d = v / len;
                    if i % 10 != 0 {
                        d = d.abs();
                    }
                    break d;
                }
            })
            .collect()
    }

    #[test]
    fn clustered_sphere_becomes_uniform() {
        let pts = clustered_sphere(2000, 1);
        let cloud = cloud_from(&pts, 2);
        let (out, report) = reinitialize(&cloud, &ReinitConfig::default()).unwrap();
        assert!(report.cov_after < 0.3, "{report:?}");
        let d = nn_distances(&out.means());
        let spacing = d.iter().sum::<f64>() / d.len() as f64;
        let worst = out.points.iter().map(|p| (p.mu.norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 2.0 * spacing, "worst {worst} spacing {spacing} {report:?}");
        let expect = report.opacity_mass_before * report.new_count as f64 / report.old_count as f64;
        assert!((0.5 * expect..=2.0 * expect).contains(&report.opacity_mass_after));
    }

    /// Dart throwing on the unit sphere: random points kept only if no earlier
    /// point lies within `r`.
    fn poisson_disk_sphere(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 0.75 * (4.0 * std::f64::consts::PI / n as f64).sqrt();
        let mut pts: Vec<Vec3> = Vec::new();
        while pts.len() < n {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if !(0.1..=1.0).contains(&v.norm()) {
                continue;
            }
            let d = v.normalize();
            if pts.iter().all(|p| (p - d).norm() >= r) {
                pts.push(d);
            }
        }
        pts
    }

    #[test]
    fn uniform_sphere_stays_uniform() {
        let pts = poisson_disk_sphere(1500, 7);
        let cloud = cloud_from(&pts, 3);
        let (_, report) = reinitialize(&cloud, &ReinitConfig::default()).unwrap();
        assert!(report.cov_after <= report.cov_before + 0.05, "{report:?}");
    }

    #[test]
    fn plain_umbrella_smoothing_shrinks_coarse_regions() {
        let pts = clustered_sphere(2000, 1);
        let cloud = cloud_from(&pts, 2);
        let worst = |cfg: &ReinitConfig| {
            let (out, _) = reinitialize(&cloud, cfg).unwrap();
            out.points.iter().map(|p| (p.mu.norm() - 1.0).abs()).fold(0.0, f64::max)
        };
        let plain = worst(&ReinitConfig { smoothing_mu: None, ..Default::default() });
        let taubin = worst(&ReinitConfig::default());
        assert!(plain > 2.0 * taubin, "plain {plain} taubin {taubin}");
    }

    #[test]
    fn four_points_complete() {
        let pts = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let (out, report) = reinitialize(&cloud_from(&pts, 4), &ReinitConfig::default()).unwrap();
        assert_eq!(report.old_count, 4);
        assert!(!out.is_empty());
        assert!(reinitialize(&cloud_from(&pts[..3], 4), &ReinitConfig::default()).is_err());
    }

    #[test]
    fn seeded_reinit_is_bitwise_stable() {
        let cloud = cloud_from(&clustered_sphere(500, 5), 6);
        let cfg = ReinitConfig { seed: 9, ..Default::default() };
        assert_eq!(reinitialize(&cloud, &cfg).unwrap().0, reinitialize(&cloud, &cfg).unwrap().0);
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0)).collect();
        let err = reinitialize(&cloud_from(&pts, 1), &ReinitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "delaunay", .. }), "{err}");
    }

    #[test]
    fn obj_dump() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ReinitConfig { dump_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        reinitialize(&cloud_from(&fibonacci_sphere(200, 1.0), 1), &cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join("smoothed.obj")).unwrap();
        assert!(text.lines().all(|l| l.starts_with("v ") || l.starts_with("f ")));
        assert!(text.lines().any(|l| l.starts_with("f ")));
    }
}
