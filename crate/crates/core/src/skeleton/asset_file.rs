//! Line-oriented skeleton asset format.
//!
//! ```text
//! # comment
//! joint <name> <parent index or -1> <qw> <qx> <qy> <qz> <tx> <ty> <tz>
//! vertex <x> <y> <z>
//! face <a> <b> <c>
//! weight <vertex> <joint> <w>
//! ```
//!
//! Joints are numbered in file order, as are vertices and faces. Records may
//! appear in any order; blank lines and text after `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{SkeletonAsset, SkinWeights};
use crate::error::{Error, Result};
use crate::math::{rotmat_to_quat, Vec3};

pub fn read_asset(path: &Path) -> Result<SkeletonAsset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_asset(&text, path)
}

pub fn parse_asset(text: &str, path: &Path) -> Result<SkeletonAsset> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut names = Vec::new();
    let mut parents = Vec::new();
    let mut rotations = Vec::new();
    let mut translations = Vec::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut weights: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut joint_lines = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let kind = fields.next().unwrap();
        let rest: Vec<&str> = fields.collect();
        let nums = |expect: usize| -> Result<Vec<f64>> {
            if rest.len() != expect {
                return Err(err(line, format!("`{kind}` takes {expect} fields, found {}", rest.len())));
            }
            rest.iter()
                .map(|s| {
                    let v: f64 = s.parse().map_err(|_| err(line, format!("`{s}` is not a number")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(err(line, format!("`{s}` is not finite")))
                    }
                })
                .collect()
        };
        let index = |s: &str| -> Result<usize> { s.parse().map_err(|_| err(line, format!("`{s}` is not an index"))) };
        match kind {
            "joint" => {
                if rest.len() != 9 {
                    return Err(err(line, format!("`joint` takes 9 fields, found {}", rest.len())));
                }
                let name = rest[0].to_string();
                if names.contains(&name) {
                    return Err(err(line, format!("duplicate joint name `{name}`")));
                }
                let parent: i64 = rest[1].parse().map_err(|_| err(line, format!("`{}` is not a parent index", rest[1])))?;
                let v: Vec<f64> = rest[2..]
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| err(line, format!("`{s}` is not a number"))))
                    .collect::<Result<_>>()?;
                let q = Quaternion::new(v[0], v[1], v[2], v[3]);
                let norm = q.norm();
                if !(norm.is_finite() && (norm - 1.0).abs() < 1e-3) {
                    return Err(err(line, "rest rotation must be a unit quaternion".into()));
                }
                let parent = match parent {
                    -1 => None,
                    p if p >= 0 => Some(p as usize),
                    p => return Err(err(line, format!("invalid parent index {p}"))),
                };
                names.push(name);
                parents.push(parent);
                rotations.push(UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner());
                translations.push(Vec3::new(v[4], v[5], v[6]));
                joint_lines.push(line);
            }
            "vertex" => {
                let v = nums(3)?;
                vertices.push((Vec3::new(v[0], v[1], v[2]), line));
            }
            "face" => {
                if rest.len() != 3 {
                    return Err(err(line, format!("`face` takes 3 fields, found {}", rest.len())));
                }
                faces.push(([index(rest[0])?, index(rest[1])?, index(rest[2])?], line));
            }
            "weight" => {
                if rest.len() != 3 {
                    return Err(err(line, format!("`weight` takes 3 fields, found {}", rest.len())));
                }
                let w: f64 = rest[2].parse().map_err(|_| err(line, format!("`{}` is not a number", rest[2])))?;
                weights.push((line, index(rest[0])?, index(rest[1])?, w));
            }
            other => return Err(err(line, format!("unknown record `{other}`"))),
        }
    }

    let k = names.len();
    let last = text.lines().count().max(1);
    if k == 0 {
        return Err(err(last, "no joints defined".into()));
    }
    for (j, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            if *p >= k {
                return Err(err(joint_lines[j], format!("parent {p} does not exist")));
            }
            if *p == j {
                return Err(err(joint_lines[j], "joint is its own parent".into()));
            }
        }
    }
    if let Err(e) = super::topological_order(&parents) {
        // point at the first joint that never reaches the root
        let bad = (0..k).find(|&j| {
            let mut cur = j;
            for _ in 0..=k {
                match parents[cur] {
                    Some(p) => cur = p,
                    None => return false,
                }
            }
            true
        });
        let line = bad.map_or(joint_lines[0], |j| joint_lines[j]);
        return Err(err(line, e.to_string()));
    }
    let n = vertices.len();
    for (f, line) in &faces {
        if f.iter().any(|&i| i >= n) {
            return Err(err(*line, format!("face references a vertex beyond the {n} defined")));
        }
    }
    let mut rows: Vec<SkinWeights> = vec![Vec::new(); n];
    let mut row_lines = vec![0; n];
    for &(line, v, j, w) in &weights {
        if v >= n {
            return Err(err(line, format!("vertex {v} does not exist")));
        }
        if j >= k {
            return Err(err(line, format!("joint {j} does not exist")));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(err(line, format!("weight {w} must be nonnegative")));
        }
        if rows[v].iter().any(|&(o, _)| o == j) {
            return Err(err(line, format!("vertex {v} already has a weight for joint {j}")));
        }
        if w > 0.0 {
            rows[v].push((j, w));
        }
        row_lines[v] = line;
    }
    for (v, row) in rows.iter().enumerate() {
        let line = if row_lines[v] > 0 { row_lines[v] } else { vertices[v].1 };
        if row.is_empty() {
            return Err(err(line, format!("vertex {v} has no skin weights")));
        }
        if let Err(m) = super::validate_row(row, k) {
            return Err(err(line, format!("vertex {v}: {m}")));
        }
    }
    SkeletonAsset::new(
        names,
        parents,
        rotations,
        translations,
        vertices.into_iter().map(|v| v.0).collect(),
        faces.into_iter().map(|f| f.0).collect(),
        rows,
    )
}

pub fn write_asset(asset: &SkeletonAsset) -> String {
    let mut out = String::new();
    for j in 0..asset.joint_count() {
        let q = rotmat_to_quat(&asset.rest_rotations[j]);
        let t = asset.rest_translations[j];
        let parent = asset.parents[j].map_or(-1, |p| p as i64);
        writeln!(
            out,
            "joint {} {parent} {} {} {} {} {} {} {}",
            asset.joint_names[j], q.w, q.i, q.j, q.k, t.x, t.y, t.z
        )
        .unwrap();
    }
    for v in &asset.vertices {
        writeln!(out, "vertex {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in &asset.faces {
        writeln!(out, "face {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    for (v, row) in asset.skin_weights.iter().enumerate() {
        for (j, w) in row {
            writeln!(out, "weight {v} {j} {w}").unwrap();
        }
    }
    out
}
