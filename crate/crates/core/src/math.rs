//! Small rotation and matrix helpers shared by the geometry modules.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Rotation matrix of a (not necessarily unit) quaternion, normalized first.
pub fn quat_to_rotmat(q: &Quaternion<f64>) -> Mat3 {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw quaternion coordinates,
/// including the normalization step of [`quat_to_rotmat`].
pub fn rotmat_grad_to_quat(q: &Quaternion<f64>, g: &Mat3) -> Quaternion<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    // project out the radial component, then undo the 1/n scaling
    let dot = dw * w + dx * x + dy * y + dz * z;
    Quaternion::new(
        (dw - dot * w) / n,
        (dx - dot * x) / n,
        (dy - dot * y) / n,
        (dz - dot * z) / n,
    )
}

/// Quaternion (w, x, y, z) of a proper rotation matrix.
pub fn rotmat_to_quat(r: &Mat3) -> Quaternion<f64> {
    let rot = Rotation3::from_matrix_unchecked(*r);
    let uq = UnitQuaternion::from_rotation_matrix(&rot);
    uq.into_inner()
}

/// Rodrigues' formula; the zero vector maps to the identity exactly.
pub fn axis_angle_to_rotmat(v: &Vec3) -> Mat3 {
    let theta2 = v.norm_squared();
    if theta2 == 0.0 {
        return Mat3::identity();
    }
    let theta = theta2.sqrt();
    let k = Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    let (a, b) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Wraps an axis-angle vector so its magnitude is at most pi.
pub fn wrap_axis_angle(v: &Vec3) -> Vec3 {
    let theta = v.norm();
    if theta <= std::f64::consts::PI {
        return *v;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut wrapped = theta % two_pi;
    if wrapped > std::f64::consts::PI {
        wrapped -= two_pi;
    }
    v * (wrapped / theta)
}

/// Nearest rotation to `m` in the Frobenius sense (polar decomposition).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Mat3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    r
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

pub fn rotation_part(m: &Mat4) -> Mat3 {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

pub fn translation_part(m: &Mat4) -> Vec3 {
    Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
}

pub fn affine(rot: &Mat3, trans: &Vec3) -> Mat4 {
    let mut m = Mat4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot);
    m[(0, 3)] = trans.x;
    m[(1, 3)] = trans.y;
    m[(2, 3)] = trans.z;
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_gradient_matches_finite_differences() {
        let q = Quaternion::new(0.7, -0.2, 0.4, 0.3);
        let g = Mat3::new(0.3, -1.0, 0.5, 0.2, 0.8, -0.4, 1.1, 0.1, -0.6);
        let f = |q: &Quaternion<f64>| quat_to_rotmat(q).component_mul(&g).sum();
        let analytic = rotmat_grad_to_quat(&q, &g);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp.coords[k] += h;
            qm.coords[k] -= h;
            let fd = (f(&qp) - f(&qm)) / (2.0 * h);
            assert!((fd - analytic.coords[k]).abs() < 1e-8, "coord {k}: {fd} vs {}", analytic.coords[k]);
        }
    }

    #[test]
    fn rodrigues_matches_nalgebra() {
        let v = Vec3::new(0.3, -1.2, 0.5);
        let ours = axis_angle_to_rotmat(&v);
        let theirs = Rotation3::new(v).into_inner();
        assert!((ours - theirs).abs().max() < 1e-14);
        assert_eq!(axis_angle_to_rotmat(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn wrapping_keeps_the_rotation() {
        let v = Vec3::new(0.0, 0.0, 3.5 * std::f64::consts::PI);
        let w = wrap_axis_angle(&v);
        assert!(w.norm() <= std::f64::consts::PI + 1e-9);
        let d = axis_angle_to_rotmat(&v) - axis_angle_to_rotmat(&w);
        assert!(d.abs().max() < 1e-12);
    }

    #[test]
    fn polar_projection_recovers_rotation() {
        let r = axis_angle_to_rotmat(&Vec3::new(0.2, 0.9, -0.4));
        let blended = r * 0.7 + Mat3::identity() * 0.3;
        let p = nearest_rotation(&blended);
        assert!((p * p.transpose() - Mat3::identity()).abs().max() < 1e-12);
        assert!((p.determinant() - 1.0).abs() < 1e-12);
        assert!((nearest_rotation(&r) - r).abs().max() < 1e-12);
    }
}
