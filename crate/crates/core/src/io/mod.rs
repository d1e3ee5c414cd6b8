//! Files on disk: images, datasets, poses, cameras, configs and logs.

mod config;
mod dataset;
mod pnm;

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use config::{load_config, PipelineConfig};
pub use dataset::{load_dataset, write_dataset, Dataset, FrameRecord, ManifestFrame, Manifest, DEFAULT_HELD_OUT_EVERY};
pub use pnm::{
    decode_pnm, dequantize, encode_pgm, encode_ppm, normal_map_from_image, normal_map_to_image, quantize, read_image,
    read_plane, write_image, write_plane, Raster,
};

use crate::camera::{Camera, CameraSpec};
use crate::error::{Error, Result};
use crate::gaussian::{read_checkpoint, write_checkpoint, GaussianCloud};
use crate::optim::LogEntry;
use crate::skeleton::{Pose, ResidualNet};

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::State(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    read_json(path)
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    write_json(path, pose)
}

/// A pose sequence file is a JSON array of poses.
pub fn read_pose_sequence(path: &Path) -> Result<Vec<Pose>> {
    read_json(path)
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let spec: CameraSpec = read_json(path)?;
    Camera::try_from(spec).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_json(path, &CameraSpec::from(camera))
}

pub fn read_cloud(path: &Path) -> Result<GaussianCloud> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_cloud(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(cloud, &mut buf).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &buf)
}

pub fn read_residual(path: &Path) -> Result<ResidualNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ResidualNet::from_json(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn write_residual(path: &Path, net: &ResidualNet) -> Result<()> {
    write_atomic(path, net.to_json().as_bytes())
}

/// One JSON object per line.
pub fn metrics_log_text(entries: &[LogEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|e| Error::State(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_metrics_log(text: &str) -> Result<Vec<LogEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: "metrics log".into(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/x"), b"").is_err());
    }

    #[test]
    fn pose_and_camera_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pose = Pose::new(vec![Vec3::new(0.1, -0.2, 0.3), Vec3::zeros()], Vec3::new(1.0, 2.0, 3.0));
        let p = dir.path().join("pose.json");
        write_pose(&p, &pose).unwrap();
        assert_eq!(read_pose(&p).unwrap(), pose);
        let cam = Camera::look_at(Vec3::new(0.3, 0.2, -3.0), Vec3::zeros(), Vec3::y(), 40.0, 32, 24);
        let c = dir.path().join("cam.json");
        write_camera(&c, &cam).unwrap();
        assert_eq!(read_camera(&c).unwrap(), cam);
    }

    #[test]
    fn malformed_pose_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.json");
        std::fs::write(&p, "{\n \"joint_rotations\": [[0, 0]],\n \"root_translation\": [0, 0, 0]\n}").unwrap();
        let err = read_pose(&p).unwrap_err();
        assert!(err.is_validation());
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn metrics_log_round_trips() {
        let entries = vec![
            LogEntry::Eval {
                step: 3,
                psnr: 21.5,
                views: 2,
            },
            LogEntry::Densify {
                step: 100,
                cloned: 1,
                split: 2,
                pruned: 3,
                cloud_size: 40,
            },
        ];
        let text = metrics_log_text(&entries).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_metrics_log(&text).unwrap(), entries);
    }
}
