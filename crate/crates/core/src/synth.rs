//! Procedural test subjects: a two-link arm and a five-joint capsule figure,
//! with a textured renderer that produces ground-truth frames for them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::{GaussianCloud, GaussianPoint};
use crate::image::{Image, Plane};
use crate::kdtree::KdTree;
use crate::math::{Mat3, Vec3};
use crate::mesh::{interpolate_attribute, rasterize_fragments, rasterize_mesh, NormalMap, TriangleMesh};
use crate::skeleton::{deform_mesh, Pose, SkeletonAsset, SkinWeights};

/// Closed capsule around the segment `a`–`b`. `half_stacks` latitude bands per
/// hemispherical cap, `slices` around the axis; faces wind outward.
pub fn capsule_mesh(a: Vec3, b: Vec3, radius: f64, half_stacks: usize, slices: usize) -> TriangleMesh {
    let axis = (b - a).normalize();
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let v = axis.cross(&helper).normalize();
    let w = axis.cross(&v);
    // rings run from the pole behind `a` to the pole beyond `b`
    let mut rings: Vec<(Vec3, f64)> = (1..=half_stacks).map(|i| (a, 0.5 * PI * i as f64 / half_stacks as f64)).collect();
    rings.extend((half_stacks..2 * half_stacks).map(|i| (b, 0.5 * PI * i as f64 / half_stacks as f64)));
    let mut vertices = vec![a - axis * radius];
    for (c, phi) in &rings {
        for j in 0..slices {
            let th = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(c - axis * (radius * phi.cos()) + (v * th.cos() + w * th.sin()) * (radius * phi.sin()));
        }
    }
    vertices.push(b + axis * radius);
    let last = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + i * slices + j % slices;
    let n = rings.len();
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(0, j), ring(0, j + 1)]);
        faces.push([last, ring(n - 1, j + 1), ring(n - 1, j)]);
    }
    for i in 0..n - 1 {
        for j in 0..slices {
            let (p, q, r, s) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([p, r, s]);
            faces.push([p, s, q]);
        }
    }
    let mut mesh = TriangleMesh {
        vertices,
        faces,
        normals: None,
    };
    if signed_volume(&mesh) < 0.0 {
        mesh.faces.iter_mut().for_each(|f| f.swap(1, 2));
    }
    mesh
}

fn signed_volume(mesh: &TriangleMesh) -> f64 {
    mesh.faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i]);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

/// A rigid body part: capsule geometry bound entirely to one joint.
struct Part {
    a: Vec3,
    b: Vec3,
    radius: f64,
    joint: usize,
}

fn assemble(names: &[&str], parents: Vec<Option<usize>>, joints: Vec<Vec3>, parts: &[Part], detail: (usize, usize)) -> Result<SkeletonAsset> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut weights: Vec<SkinWeights> = Vec::new();
    for part in parts {
        let m = capsule_mesh(part.a, part.b, part.radius, detail.0, detail.1);
        let base = vertices.len();
        weights.extend(std::iter::repeat(vec![(part.joint, 1.0)]).take(m.vertices.len()));
        vertices.extend(m.vertices);
        faces.extend(m.faces.iter().map(|f| f.map(|i| i + base)));
    }
    SkeletonAsset::new(
        names.iter().map(|s| s.to_string()).collect(),
        parents,
        vec![Mat3::identity(); joints.len()],
        joints,
        vertices,
        faces,
        weights,
    )
}

/// Shoulder at the origin and elbow at (1, 0, 0); the arm lies along +x.
pub fn two_link_arm() -> Result<SkeletonAsset> {
    let elbow = Vec3::new(1.0, 0.0, 0.0);
    let parts = [
        Part {
            a: Vec3::zeros(),
            b: elbow,
            radius: 0.16,
            joint: 0,
        },
        Part {
            a: elbow,
            b: Vec3::new(2.0, 0.0, 0.0),
            radius: 0.13,
            joint: 1,
        },
    ];
    assemble(&["shoulder", "elbow"], vec![None, Some(0)], vec![Vec3::zeros(), elbow], &parts, (6, 24))
}

/// Camera looking along +z at the arm's plane, framing the arm in its
/// reference pose with some margin.
pub fn arm_camera(size: usize) -> Camera {
    let focal = size as f64 * 3.2 / 2.4;
    Camera::look_at(Vec3::new(0.8, 0.5, -3.2), Vec3::new(0.8, 0.5, 0.0), Vec3::y(), focal, size, size)
}

/// Ground-truth arm pose: shoulder raised, elbow bent, both about the view axis.
pub fn arm_pose(elbow_angle: f64) -> Pose {
    Pose::new(vec![Vec3::new(0.0, 0.0, 0.2), Vec3::new(0.0, 0.0, elbow_angle)], Vec3::zeros())
}

pub const FIGURE_JOINTS: [&str; 5] = ["torso", "left_arm", "right_arm", "left_leg", "right_leg"];

/// Five joints: a torso root with two arms and two legs, plus a head fixed
/// to the torso. Canonical pose is a T-pose facing −z.
pub fn capsule_figure() -> Result<SkeletonAsset> {
    let joints = vec![
        Vec3::new(0.0, 0.3, 0.0),
        Vec3::new(0.24, 0.62, 0.0),
        Vec3::new(-0.24, 0.62, 0.0),
        Vec3::new(0.11, -0.05, 0.0),
        Vec3::new(-0.11, -0.05, 0.0),
    ];
    let parts = [
        Part {
            a: Vec3::new(0.0, 0.0, 0.0),
            b: Vec3::new(0.0, 0.62, 0.0),
            radius: 0.2,
            joint: 0,
        },
        Part {
            a: Vec3::new(0.0, 0.98, 0.0),
            b: Vec3::new(0.0, 1.0, 0.0),
            radius: 0.15,
            joint: 0,
        },
        Part {
            a: joints[1],
            b: Vec3::new(0.86, 0.62, 0.0),
            radius: 0.07,
            joint: 1,
        },
        Part {
            a: joints[2],
            b: Vec3::new(-0.86, 0.62, 0.0),
            radius: 0.07,
            joint: 2,
        },
        Part {
            a: joints[3],
            b: Vec3::new(0.13, -0.82, 0.0),
            radius: 0.085,
            joint: 3,
        },
        Part {
            a: joints[4],
            b: Vec3::new(-0.13, -0.82, 0.0),
            radius: 0.085,
            joint: 4,
        },
    ];
    assemble(&FIGURE_JOINTS, vec![None, Some(0), Some(0), Some(0), Some(0)], joints, &parts, (6, 20))
}

/// Albedo of the figure at a canonical point: a hue per height band with
/// soft stripes.
pub fn figure_texture(p: &Vec3) -> Vec3 {
    let base = if p.y > 0.85 {
        Vec3::new(0.85, 0.7, 0.55)
    } else if p.y < -0.02 {
        Vec3::new(0.2, 0.3, 0.65)
    } else if p.x.abs() > 0.22 {
        Vec3::new(0.8, 0.55, 0.35)
    } else {
        Vec3::new(0.75, 0.2, 0.2)
    };
    let stripes = 0.5 + 0.5 * (2.0 * PI * (p.y * 4.0 + p.x * 1.5)).sin();
    let checker = 0.5 + 0.5 * (2.0 * PI * p.z * 3.0).cos();
    (base * (0.7 + 0.3 * stripes) + Vec3::repeat(0.1 * checker)).map(|c| c.clamp(0.0, 1.0))
}

/// One rendered frame of a synthetic subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub image: Image,
    pub silhouette: Plane,
    pub normals: NormalMap,
    pub camera: Camera,
    pub pose: Pose,
}

/// Renders the posed mesh with `texture` evaluated at canonical positions,
/// supersampled `ss`× per axis and box-filtered. Normals and silhouette are
/// taken at full resolution without supersampling.
pub fn render_textured(
    asset: &SkeletonAsset,
    pose: &Pose,
    camera: &Camera,
    ss: usize,
    texture: &dyn Fn(&Vec3) -> Vec3,
) -> Result<SyntheticFrame> {
    let posed = deform_mesh(asset, pose)?;
    let big = camera.scaled(ss);
    let frags = rasterize_fragments(&posed, &big);
    let canon = interpolate_attribute(&posed, &frags, &asset.vertices, Vec3::zeros());
    let mut hi = Image::new(big.width, big.height);
    for (i, (p, f)) in canon.iter().zip(&frags.face).enumerate() {
        if f.is_some() {
            hi.data[3 * i..3 * i + 3].copy_from_slice(texture(p).as_slice());
        }
    }
    let (normals, silhouette) = rasterize_mesh(&posed, camera);
    Ok(SyntheticFrame {
        image: hi.downsample(ss),
        silhouette,
        normals,
        camera: camera.clone(),
        pose: pose.clone(),
    })
}

/// Pose of the figure in frame `k`: limbs swing, the body turns slowly.
pub fn figure_pose(k: usize) -> Pose {
    let t = 2.0 * PI * k as f64 / 12.0;
    let rot = vec![
        Vec3::new(0.0, 0.3 * (0.5 * t).sin(), 0.0),
        Vec3::new(0.0, 0.3 * t.cos(), -0.5 + 0.45 * t.sin()),
        Vec3::new(0.0, -0.3 * t.cos(), 0.5 - 0.45 * (t + 1.0).sin()),
        Vec3::new(0.45 * t.sin(), 0.0, 0.1),
        Vec3::new(-0.45 * t.sin(), 0.0, -0.1),
    ];
    Pose::new(rot, Vec3::zeros())
}

/// Camera of frame `k` out of `n`, orbiting the figure at a slight elevation.
pub fn figure_camera(k: usize, n: usize, size: usize) -> Camera {
    let az = 2.0 * PI * k as f64 / n as f64;
    let eye = Vec3::new(3.6 * az.sin(), 0.7, -3.6 * az.cos());
    Camera::look_at(eye, Vec3::new(0.0, 0.15, 0.0), Vec3::y(), 1.4 * size as f64, size, size)
}

/// `n` ground-truth frames of the textured figure at `size`×`size`.
pub fn figure_frames(asset: &SkeletonAsset, n: usize, size: usize) -> Result<Vec<SyntheticFrame>> {
    (0..n)
        .map(|k| render_textured(asset, &figure_pose(k), &figure_camera(k, n, size), 3, &figure_texture))
        .collect()
}

/// Starting cloud on the canonical mesh: one Gaussian per vertex, grey,
/// opacity 0.1, sized by the distance to nearby vertices.
pub fn mesh_vertex_cloud(asset: &SkeletonAsset, sh_degree: u8, seed: u64) -> Result<GaussianCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = &asset.vertices;
    let tree = KdTree::new(verts);
    let mut points = Vec::with_capacity(verts.len());
    for v in verts {
        let nn = tree.nearest(v, 4);
        let d = nn.iter().skip(1).map(|&(_, d2)| d2.sqrt()).sum::<f64>() / (nn.len() - 1).max(1) as f64;
        // a tiny jitter keeps coincident pole and seam vertices apart
        let jitter = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 1e-4;
        points.push(GaussianPoint::isotropic(v + jitter, d.max(1e-3), 0.1, Vec3::repeat(0.5), sh_degree));
    }
    GaussianCloud::from_points(sh_degree, points)
}
