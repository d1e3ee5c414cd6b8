//! Explicit Gaussian point set and its per-point math.

mod checkpoint;
pub mod sh;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use nalgebra::Quaternion;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::math::{quat_to_rotmat, sigmoid, Mat3, Vec3};

/// Clone offset as a fraction of the largest axis standard deviation.
pub const CLONE_STEP: f64 = 0.01;
/// Per-axis standard deviations of split children are divided by this.
pub const SPLIT_FACTOR: f64 = 1.6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPoint {
    /// Canonical-space mean.
    pub mu: Vec3,
    /// Rotation quaternion (w, x, y, z); kept at unit norm after every update.
    pub q: Quaternion<f64>,
    /// Per-axis log standard deviation.
    pub s: Vec3,
    /// Opacity logit.
    pub eta: f64,
    /// SH coefficients, coefficient-major with three channels each.
    pub f: Vec<f64>,
}

impl GaussianPoint {
    pub fn new(mu: Vec3, q: Quaternion<f64>, s: Vec3, eta: f64, f: Vec<f64>) -> Self {
        GaussianPoint { mu, q, s, eta, f }
    }

    /// Isotropic, identity-rotation point with a constant color.
    pub fn isotropic(mu: Vec3, sigma: f64, opacity: f64, rgb: Vec3, sh_degree: u8) -> Self {
        let mut f = vec![0.0; 3 * sh::coeff_count(sh_degree)];
        for c in 0..3 {
            f[c] = (rgb[c] - 0.5) / sh::SH_C0;
        }
        GaussianPoint {
            mu,
            q: Quaternion::identity(),
            s: Vec3::repeat(sigma.ln()),
            eta: crate::math::logit(opacity),
            f,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_rotmat(&self.q)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.eta)
    }

    pub fn scales(&self) -> Vec3 {
        self.s.map(f64::exp)
    }

    /// Σ = R·S·Sᵀ·Rᵀ with S = diag(exp(s)).
    pub fn covariance(&self) -> Mat3 {
        let m = self.rotation() * Mat3::from_diagonal(&self.scales());
        m * m.transpose()
    }

    /// Unnormalized density exp(-½ (x−μ)ᵀ Σ⁻¹ (x−μ)).
    pub fn density(&self, x: &Vec3) -> f64 {
        // Σ⁻¹ = R S⁻² Rᵀ, so the quadratic form is |S⁻¹ Rᵀ d|²
        let local = self.rotation().transpose() * (x - self.mu);
        let z = local.component_div(&self.scales());
        (-0.5 * z.norm_squared()).exp()
    }

    /// View-dependent color: SH sum plus 0.5, clamped to [0, 1].
    pub fn color(&self, sh_degree: u8, view_dir: &Vec3) -> Vec3 {
        (sh::eval_raw(sh_degree, &self.f, view_dir) + Vec3::repeat(0.5)).map(|c| c.clamp(0.0, 1.0))
    }
}

pub fn build_covariance(point: &GaussianPoint) -> Mat3 {
    point.covariance()
}

pub fn eval_gaussian(point: &GaussianPoint, x: &Vec3) -> f64 {
    point.density(x)
}

pub fn eval_sh_color(point: &GaussianPoint, sh_degree: u8, view_dir: &Vec3) -> Vec3 {
    point.color(sh_degree, view_dir)
}

/// Densification statistics for one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradAccum {
    /// Sum of positional-gradient magnitudes.
    pub norm_sum: f64,
    /// Sum of descent directions (negative positional gradients); clones move along it.
    pub direction: Vec3,
    pub count: u32,
}

impl GradAccum {
    pub fn record(&mut self, grad: &Vec3) {
        self.norm_sum += grad.norm();
        self.direction -= grad;
        self.count += 1;
    }

    pub fn mean_norm(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.norm_sum / self.count as f64
        }
    }
}

/// Optimizer-visible parameter blocks of a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    Sh,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::Scale,
        ParamGroup::Opacity,
        ParamGroup::Sh,
    ];

    pub fn stride(self, sh_degree: u8) -> usize {
        match self {
            ParamGroup::Position | ParamGroup::Scale => 3,
            ParamGroup::Rotation => 4,
            ParamGroup::Opacity => 1,
            ParamGroup::Sh => 3 * sh::coeff_count(sh_degree),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub points: Vec<GaussianPoint>,
    sh_degree: u8,
    pub grad_accum: Vec<GradAccum>,
}

impl GaussianCloud {
    pub fn new(sh_degree: u8) -> Result<Self> {
        if sh_degree > sh::MAX_DEGREE {
            return Err(Error::arg(format!("sh degree {sh_degree} exceeds 3")));
        }
        Ok(GaussianCloud {
            points: Vec::new(),
            sh_degree,
            grad_accum: Vec::new(),
        })
    }

    pub fn from_points(sh_degree: u8, points: Vec<GaussianPoint>) -> Result<Self> {
        let mut cloud = GaussianCloud::new(sh_degree)?;
        for p in points {
            cloud.push(p)?;
        }
        Ok(cloud)
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn coeffs_per_point(&self) -> usize {
        3 * sh::coeff_count(self.sh_degree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: GaussianPoint) -> Result<()> {
        if point.f.len() != self.coeffs_per_point() {
            return Err(Error::arg(format!(
                "point has {} SH values, cloud of degree {} needs {}",
                point.f.len(),
                self.sh_degree,
                self.coeffs_per_point()
            )));
        }
        self.points.push(point);
        self.grad_accum.push(GradAccum::default());
        Ok(())
    }

    pub fn means(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.mu).collect()
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.points.len() {
            return Err(Error::arg(format!(
                "index {index} out of range for cloud of {}",
                self.points.len()
            )));
        }
        Ok(())
    }

    /// Appends a copy of point `index`, offset along its accumulated descent
    /// direction by `CLONE_STEP · exp(max s)`. Returns the new index.
    pub fn clone_point(&mut self, index: usize) -> Result<usize> {
        self.check_index(index)?;
        let mut copy = self.points[index].clone();
        let dir = self.grad_accum[index].direction;
        let n = dir.norm();
        if n > 0.0 {
            copy.mu += dir / n * (CLONE_STEP * copy.s.max().exp());
        }
        self.points.push(copy);
        self.grad_accum.push(GradAccum::default());
        Ok(self.points.len() - 1)
    }

    /// Replaces point `index` by two children sampled from it, each with
    /// standard deviations divided by [`SPLIT_FACTOR`]. The first child takes
    /// the parent's slot, the second is appended.
    pub fn split_point<R: Rng>(&mut self, index: usize, rng: &mut R) -> Result<usize> {
        self.check_index(index)?;
        let parent = self.points[index].clone();
        let rot = parent.rotation();
        let scales = parent.scales();
        let shrink = SPLIT_FACTOR.ln();
        let mut children = [parent.clone(), parent.clone()];
        for child in children.iter_mut() {
            let z = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            child.mu = parent.mu + rot * z.component_mul(&scales);
            child.s = parent.s.map(|v| v - shrink);
        }
        let [first, second] = children;
        self.points[index] = first;
        self.grad_accum[index] = GradAccum::default();
        self.points.push(second);
        self.grad_accum.push(GradAccum::default());
        Ok(self.points.len() - 1)
    }

    /// Removes points with opacity below `threshold`, keeping survivor order.
    /// Returns, for each survivor, its index before pruning.
    pub fn prune(&mut self, threshold: f64) -> Vec<usize> {
        let keep: Vec<usize> = (0..self.points.len())
            .filter(|&i| self.points[i].opacity() >= threshold)
            .collect();
        if keep.len() == self.points.len() {
            return keep;
        }
        let points = std::mem::take(&mut self.points);
        let accum = std::mem::take(&mut self.grad_accum);
        let mut flags = vec![false; points.len()];
        for &i in &keep {
            flags[i] = true;
        }
        for ((p, a), keep) in points.into_iter().zip(accum).zip(flags) {
            if keep {
                self.points.push(p);
                self.grad_accum.push(a);
            }
        }
        keep
    }

    /// Exact k nearest points by mean position, ties broken by lower index.
    pub fn knn_query(&self, query: &Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if self.points.is_empty() {
            return Err(Error::arg("knn query on an empty cloud"));
        }
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        Ok(KdTree::new(&self.means()).nearest(query, k))
    }

    pub fn reset_grad_accum(&mut self) {
        self.grad_accum.iter_mut().for_each(|a| *a = GradAccum::default());
    }

    /// Renormalizes quaternions and clamps log-scales to `ln(scale_cap)`.
    pub fn project_constraints(&mut self, scale_cap: f64) {
        let max_log = scale_cap.ln();
        for p in &mut self.points {
            let n = p.q.norm();
            if n > 0.0 && n.is_finite() {
                p.q /= n;
            } else {
                p.q = Quaternion::identity();
            }
            p.s = p.s.map(|v| v.min(max_log));
        }
    }

    /// Copies one parameter block of every point into a flat vector.
    pub fn gather(&self, group: ParamGroup) -> Vec<f64> {
        let stride = group.stride(self.sh_degree);
        let mut out = Vec::with_capacity(stride * self.points.len());
        for p in &self.points {
            match group {
                ParamGroup::Position => out.extend_from_slice(p.mu.as_slice()),
                ParamGroup::Rotation => out.extend_from_slice(&[p.q.w, p.q.i, p.q.j, p.q.k]),
                ParamGroup::Scale => out.extend_from_slice(p.s.as_slice()),
                ParamGroup::Opacity => out.push(p.eta),
                ParamGroup::Sh => out.extend_from_slice(&p.f),
            }
        }
        out
    }

    pub fn scatter(&mut self, group: ParamGroup, values: &[f64]) -> Result<()> {
        let stride = group.stride(self.sh_degree);
        if values.len() != stride * self.points.len() {
            return Err(Error::arg(format!(
                "{group:?} block has {} values, expected {}",
                values.len(),
                stride * self.points.len()
            )));
        }
        for (p, v) in self.points.iter_mut().zip(values.chunks_exact(stride)) {
            match group {
                ParamGroup::Position => p.mu = Vec3::new(v[0], v[1], v[2]),
                ParamGroup::Rotation => p.q = Quaternion::new(v[0], v[1], v[2], v[3]),
                ParamGroup::Scale => p.s = Vec3::new(v[0], v[1], v[2]),
                ParamGroup::Opacity => p.eta = v[0],
                ParamGroup::Sh => p.f.copy_from_slice(v),
            }
        }
        Ok(())
    }
}
