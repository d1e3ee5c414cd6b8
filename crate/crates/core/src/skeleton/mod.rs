//! Joint hierarchy, forward kinematics and linear blend skinning.

mod asset_file;
mod deform;
mod residual;

pub use asset_file::{parse_asset, read_asset, write_asset};
pub use deform::{deform_backward, deform_gaussians, DeformTape};
pub use residual::ResidualNet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::math::{affine, axis_angle_to_rotmat, rotation_part, translation_part, wrap_axis_angle, Mat3, Mat4, Vec3};
use crate::mesh::TriangleMesh;

/// Largest number of nonzero skin weights per vertex.
pub const MAX_INFLUENCES: usize = 8;

/// Sparse skinning row: (joint, weight) pairs.
pub type SkinWeights = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonAsset {
    pub joint_names: Vec<String>,
    /// Parent joint index, `None` for the root.
    pub parents: Vec<Option<usize>>,
    /// Orientation of each joint frame in canonical space.
    pub rest_rotations: Vec<Mat3>,
    /// Position of each joint in canonical space.
    pub rest_translations: Vec<Vec3>,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub skin_weights: Vec<SkinWeights>,
    order: Vec<usize>,
    depth: Vec<usize>,
}

impl SkeletonAsset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        rest_rotations: Vec<Mat3>,
        rest_translations: Vec<Vec3>,
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        skin_weights: Vec<SkinWeights>,
    ) -> Result<Self> {
        let k = parents.len();
        if k == 0 {
            return Err(Error::Validation("skeleton has no joints".into()));
        }
        if joint_names.len() != k || rest_rotations.len() != k || rest_translations.len() != k {
            return Err(Error::Validation("per-joint arrays differ in length".into()));
        }
        let (order, depth) = topological_order(&parents)?;
        for (j, r) in rest_rotations.iter().enumerate() {
            if (r.transpose() * r - Mat3::identity()).norm() > 1e-9 || r.determinant() < 0.0 {
                return Err(Error::Validation(format!("rest rotation of joint {j} is not a rotation")));
            }
        }
        let v = vertices.len();
        if skin_weights.len() != v {
            return Err(Error::Validation(format!("{} skin weight rows for {v} vertices", skin_weights.len())));
        }
        for (i, row) in skin_weights.iter().enumerate() {
            validate_row(row, k).map_err(|m| Error::Validation(format!("vertex {i}: {m}")))?;
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= v) {
                return Err(Error::Validation(format!("face {fi} references a vertex out of range")));
            }
        }
        Ok(SkeletonAsset {
            joint_names,
            parents,
            rest_rotations,
            rest_translations,
            vertices,
            faces,
            skin_weights,
            order,
            depth,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    /// Number of edges between each joint and the root.
    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    pub fn canonical_mesh(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
            normals: None,
        }
    }
}

fn validate_row(row: &SkinWeights, k: usize) -> std::result::Result<(), String> {
    if row.is_empty() || row.len() > MAX_INFLUENCES {
        return Err(format!("{} influences, expected 1..={MAX_INFLUENCES}", row.len()));
    }
    let mut sum = 0.0;
    for (i, &(j, w)) in row.iter().enumerate() {
        if j >= k {
            return Err(format!("joint {j} out of range"));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(format!("weight {w} on joint {j}"));
        }
        if row[..i].iter().any(|&(o, _)| o == j) {
            return Err(format!("joint {j} listed twice"));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(format!("weights sum to {sum}"));
    }
    Ok(())
}

/// Parents-before-children order and per-joint depth; rejects forests and cycles.
fn topological_order(parents: &[Option<usize>]) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = parents.len();
    let roots: Vec<usize> = (0..k).filter(|&j| parents[j].is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::Validation(format!("skeleton must have exactly one root, found {}", roots.len())));
    }
    let mut children = vec![Vec::new(); k];
    for (j, p) in parents.iter().enumerate() {
        if let Some(p) = *p {
            if p >= k {
                return Err(Error::Validation(format!("joint {j} has parent {p} out of range")));
            }
            children[p].push(j);
        }
    }
    let mut order = Vec::with_capacity(k);
    let mut depth = vec![0; k];
    let mut stack = vec![roots[0]];
    while let Some(j) = stack.pop() {
        order.push(j);
        for &c in children[j].iter().rev() {
            depth[c] = depth[j] + 1;
            stack.push(c);
        }
    }
    if order.len() != k {
        return Err(Error::Validation("joint hierarchy contains a cycle".into()));
    }
    Ok((order, depth))
}

/// Axis-angle rotation per joint plus a root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseSpec", into = "PoseSpec")]
pub struct Pose {
    rotations: Vec<Vec3>,
    root_translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseSpec {
    joint_rotations: Vec<[f64; 3]>,
    root_translation: [f64; 3],
}

impl TryFrom<PoseSpec> for Pose {
    type Error = Error;

    fn try_from(s: PoseSpec) -> Result<Self> {
        let rot: Vec<Vec3> = s.joint_rotations.iter().map(|r| Vec3::from(*r)).collect();
        if rot.iter().chain([&Vec3::from(s.root_translation)]).any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::Validation("pose contains non-finite values".into()));
        }
        Ok(Pose::new(rot, Vec3::from(s.root_translation)))
    }
}

impl From<Pose> for PoseSpec {
    fn from(p: Pose) -> Self {
        PoseSpec {
            joint_rotations: p.rotations.iter().map(|r| [r.x, r.y, r.z]).collect(),
            root_translation: [p.root_translation.x, p.root_translation.y, p.root_translation.z],
        }
    }
}

impl Pose {
    /// Rotations are wrapped to magnitude at most pi.
    pub fn new(rotations: Vec<Vec3>, root_translation: Vec3) -> Self {
        Pose {
            rotations: rotations.iter().map(wrap_axis_angle).collect(),
            root_translation,
        }
    }

    pub fn zero(joints: usize) -> Self {
        Pose::new(vec![Vec3::zeros(); joints], Vec3::zeros())
    }

    pub fn joint_count(&self) -> usize {
        self.rotations.len()
    }

    pub fn rotations(&self) -> &[Vec3] {
        &self.rotations
    }

    pub fn rotation(&self, joint: usize) -> Vec3 {
        self.rotations[joint]
    }

    pub fn set_rotation(&mut self, joint: usize, v: Vec3) {
        self.rotations[joint] = wrap_axis_angle(&v);
    }

    pub fn root_translation(&self) -> Vec3 {
        self.root_translation
    }

    pub fn set_root_translation(&mut self, t: Vec3) {
        self.root_translation = t;
    }

    /// Rotations flattened joint by joint, as fed to the residual network.
    pub fn flat_rotations(&self) -> Vec<f64> {
        self.rotations.iter().flat_map(|r| [r.x, r.y, r.z]).collect()
    }
}

/// Canonical-to-posed rigid transform of every joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransforms(pub Vec<Mat4>);

/// Rigid map rotating by `r` about the point `center`.
fn rotate_about(center: &Vec3, r: &Mat3) -> Mat4 {
    affine(r, &(center - r * center))
}

pub fn forward_kinematics(asset: &SkeletonAsset, pose: &Pose) -> Result<JointTransforms> {
    let k = asset.joint_count();
    if pose.joint_count() != k {
        return Err(Error::arg(format!("pose has {} joints, skeleton has {k}", pose.joint_count())));
    }
    let mut out = vec![Mat4::identity(); k];
    for &j in &asset.order {
        // the pose rotation is expressed in the joint's rest frame
        let rest = &asset.rest_rotations[j];
        let local = rotate_about(&asset.rest_translations[j], &axis_angle_to_rotmat(&(rest * pose.rotation(j))));
        out[j] = match asset.parents[j] {
            Some(p) => out[p] * local,
            None => {
                let t = pose.root_translation();
                if t == Vec3::zeros() {
                    local
                } else {
                    affine(&Mat3::identity(), &t) * local
                }
            }
        };
    }
    Ok(JointTransforms(out))
}

/// Copies the top-`p` skin weights of each position's nearest canonical vertex.
pub fn bind_skinning(asset: &SkeletonAsset, positions: &[Vec3], p: usize) -> Result<Vec<SkinWeights>> {
    if positions.is_empty() {
        return Err(Error::arg("no positions to bind"));
    }
    if p == 0 {
        return Err(Error::arg("influence count must be at least 1"));
    }
    if asset.vertices.is_empty() {
        return Err(Error::arg("skeleton has no vertices to bind to"));
    }
    let tree = KdTree::new(&asset.vertices);
    Ok(positions
        .iter()
        .map(|x| {
            let v = tree.nearest(x, 1)[0].0;
            top_weights(&asset.skin_weights[v], p)
        })
        .collect())
}

fn top_weights(row: &SkinWeights, p: usize) -> SkinWeights {
    let mut sorted = row.clone();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted.truncate(p);
    sorted.retain(|&(_, w)| w > 0.0);
    let sum: f64 = sorted.iter().map(|&(_, w)| w).sum();
    if sum == 0.0 {
        // all-zero row cannot occur for a validated asset; fall back to the first joint
        return vec![(row[0].0, 1.0)];
    }
    sorted.iter().map(|&(j, w)| (j, w / sum)).collect()
}

/// Weighted sum of joint transforms per point.
pub fn blend_transform(weights: &[SkinWeights], transforms: &JointTransforms) -> Vec<Mat4> {
    weights.iter().map(|row| blend_row(row, transforms)).collect()
}

fn blend_row(row: &SkinWeights, transforms: &JointTransforms) -> Mat4 {
    let first = &transforms.0[row[0].0];
    // a convex combination of identical matrices is that matrix; keep it bit-exact
    if row.iter().all(|&(j, _)| transforms.0[j] == *first) {
        return *first;
    }
    row.iter().fold(Mat4::zeros(), |acc, &(j, w)| acc + transforms.0[j] * w)
}

/// The canonical mesh posed by the asset's own skin weights.
pub fn deform_mesh(asset: &SkeletonAsset, pose: &Pose) -> Result<TriangleMesh> {
    let transforms = forward_kinematics(asset, pose)?;
    let vertices = asset
        .vertices
        .iter()
        .zip(&asset.skin_weights)
        .map(|(v, row)| {
            let a = blend_row(row, &transforms);
            rotation_part(&a) * v + translation_part(&a)
        })
        .collect();
    Ok(TriangleMesh {
        vertices,
        faces: asset.faces.clone(),
        normals: None,
    })
}
