//! Binary checkpoint of a [`GaussianCloud`].
//!
//! Layout (all little-endian):
//!
//! | field       | type  |
//! |-------------|-------|
//! | magic       | `b"GSAV"` |
//! | version     | u32   |
//! | point count | u64   |
//! | sh_degree   | u8    |
//!
//! followed, per point, by f32 values in declaration order: `mu` (3),
//! `q` (4, w first), `s` (3), `eta` (1), `f` (3·(degree+1)²).
//! Values are stored as f32, so a cloud survives a write/read cycle bit-exactly
//! once its parameters are f32-representable, and bytes survive read/write always.

use std::io::{Read, Write};

use nalgebra::Quaternion;

use super::{sh, GaussianCloud, GaussianPoint};
use crate::error::{Error, Result};
use crate::math::Vec3;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSAV";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(cloud: &GaussianCloud, mut out: W) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(cloud.len() as u64).to_le_bytes())?;
    out.write_all(&[cloud.sh_degree()])?;
    let mut buf = Vec::with_capacity(4 * (11 + cloud.coeffs_per_point()));
    for p in &cloud.points {
        buf.clear();
        let q = [p.q.w, p.q.i, p.q.j, p.q.k];
        let values = p
            .mu
            .iter()
            .chain(q.iter())
            .chain(p.s.iter())
            .chain(std::iter::once(&p.eta))
            .chain(p.f.iter());
        for v in values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn truncated(what: &str) -> Error {
    Error::Format(format!("truncated checkpoint while reading {what}"))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<GaussianCloud> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a GSAV checkpoint".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(|_| truncated("version"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut long = [0u8; 8];
    input.read_exact(&mut long).map_err(|_| truncated("point count"))?;
    let count = u64::from_le_bytes(long) as usize;
    let mut byte = [0u8; 1];
    input.read_exact(&mut byte).map_err(|_| truncated("sh degree"))?;
    let degree = byte[0];
    if degree > sh::MAX_DEGREE {
        return Err(Error::Format(format!("sh degree {degree} out of range")));
    }
    let n_f = 3 * sh::coeff_count(degree);
    let per_point = 11 + n_f;
    let mut raw = vec![0u8; 4 * per_point];
    let mut cloud = GaussianCloud::new(degree)?;
    cloud.points.reserve(count);
    for i in 0..count {
        input
            .read_exact(&mut raw)
            .map_err(|_| truncated(&format!("point {i}")))?;
        let v: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        cloud.push(GaussianPoint {
            mu: Vec3::new(v[0], v[1], v[2]),
            q: Quaternion::new(v[3], v[4], v[5], v[6]),
            s: Vec3::new(v[7], v[8], v[9]),
            eta: v[10],
            f: v[11..].to_vec(),
        })?;
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).unwrap_or(0) != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(cloud)
}
