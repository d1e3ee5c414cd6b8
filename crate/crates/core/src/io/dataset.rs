//! Posed image datasets described by a TOML manifest.
//!
//! ```toml
//! held_out_every = 10          # optional
//!
//! [[frames]]
//! id = 0
//! image = "images/0000.ppm"
//! silhouette = "masks/0000.pgm"
//! normals = "normals/0000.ppm"  # optional
//! pose = "poses/0000.json"
//! camera = { fx = 179.2, fy = 179.2, cx = 64.0, cy = 64.0, width = 128, height = 128, rotation = [[1, 0, 0], [0, 1, 0], [0, 0, 1]], translation = [0, 0, 3], near = 0.01, far = 100.0 }
//! ```
//!
//! Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pnm::{normal_map_from_image, normal_map_to_image, read_image, read_plane, write_image, write_plane};
use super::{read_pose, write_atomic, write_pose};
use crate::camera::{Camera, CameraSpec};
use crate::error::{Error, Result};
use crate::image::{Image, Plane};
use crate::mesh::NormalMap;
use crate::skeleton::Pose;

/// Frames at positions 0, n, 2n, … of the id order are held out.
pub const DEFAULT_HELD_OUT_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub id: u64,
    pub image: PathBuf,
    pub silhouette: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<PathBuf>,
    pub pose: PathBuf,
    pub camera: CameraSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// 0 holds nothing out.
    #[serde(default = "default_every")]
    pub held_out_every: usize,
    #[serde(default)]
    pub frames: Vec<ManifestFrame>,
}

fn default_every() -> usize {
    DEFAULT_HELD_OUT_EVERY
}

/// A fully decoded and validated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: u64,
    pub image: Image,
    pub silhouette: Plane,
    pub normals: Option<NormalMap>,
    pub pose: Pose,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    /// Ascending by id.
    pub frames: Vec<FrameRecord>,
    pub train: Vec<usize>,
    pub held_out: Vec<usize>,
}

impl Dataset {
    pub fn train_frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.train.iter().map(|&i| &self.frames[i])
    }

    pub fn held_out_frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.held_out.iter().map(|&i| &self.frames[i])
    }
}

fn load_frame(root: &Path, f: &ManifestFrame) -> Result<FrameRecord> {
    let camera = Camera::try_from(f.camera.clone())?;
    let image = read_image(&root.join(&f.image))?;
    let silhouette = read_plane(&root.join(&f.silhouette))?;
    let pose = read_pose(&root.join(&f.pose))?;
    let dims = (image.width, image.height);
    if (silhouette.width, silhouette.height) != dims {
        return Err(Error::Validation(format!(
            "image is {}x{} but silhouette is {}x{}",
            dims.0, dims.1, silhouette.width, silhouette.height
        )));
    }
    if (camera.width, camera.height) != dims {
        return Err(Error::Validation(format!(
            "image is {}x{} but camera is {}x{}",
            dims.0, dims.1, camera.width, camera.height
        )));
    }
    let normals = match &f.normals {
        Some(p) => {
            let img = read_image(&root.join(p))?;
            if (img.width, img.height) != dims {
                return Err(Error::Validation(format!(
                    "image is {}x{} but normal map is {}x{}",
                    dims.0, dims.1, img.width, img.height
                )));
            }
            Some(normal_map_from_image(&img, &silhouette)?)
        }
        None => None,
    };
    Ok(FrameRecord {
        id: f.id,
        image,
        silhouette,
        normals,
        pose,
        camera,
    })
}

/// Loads and checks every frame; any bad frame fails the whole load.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let parsed: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: manifest.to_path_buf(),
        line: e.span().map_or(0, |s| super::line_of(&text, s.start)),
        message: e.message().to_string(),
    })?;
    if parsed.frames.is_empty() {
        return Err(Error::Validation(format!("{}: no frames", manifest.display())));
    }
    let mut seen = HashSet::new();
    if let Some(f) = parsed.frames.iter().find(|f| !seen.insert(f.id)) {
        return Err(Error::Validation(format!("frame {}: duplicate id", f.id)));
    }
    let root = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut order: Vec<&ManifestFrame> = parsed.frames.iter().collect();
    order.sort_by_key(|f| f.id);
    let frames = order
        .iter()
        .map(|f| load_frame(&root, f).map_err(|e| Error::Validation(format!("frame {}: {e}", f.id))))
        .collect::<Result<Vec<_>>>()?;
    let every = parsed.held_out_every;
    let (held_out, train) = (0..frames.len()).partition(|i| every > 0 && i % every == 0);
    Ok(Dataset {
        root,
        frames,
        train,
        held_out,
    })
}

/// Writes `frames` as PPM/PGM/JSON files under `dir` plus `dir/manifest.toml`,
/// and returns the manifest path.
pub fn write_dataset(dir: &Path, frames: &[FrameRecord], held_out_every: usize) -> Result<PathBuf> {
    for sub in ["images", "masks", "normals", "poses"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest = Manifest {
        held_out_every,
        frames: Vec::new(),
    };
    for f in frames {
        let name = format!("{:04}", f.id);
        let entry = ManifestFrame {
            id: f.id,
            image: PathBuf::from(format!("images/{name}.ppm")),
            silhouette: PathBuf::from(format!("masks/{name}.pgm")),
            normals: f.normals.as_ref().map(|_| PathBuf::from(format!("normals/{name}.ppm"))),
            pose: PathBuf::from(format!("poses/{name}.json")),
            camera: CameraSpec::from(&f.camera),
        };
        write_image(&dir.join(&entry.image), &f.image)?;
        write_plane(&dir.join(&entry.silhouette), &f.silhouette)?;
        if let (Some(n), Some(p)) = (&f.normals, &entry.normals) {
            write_image(&dir.join(p), &normal_map_to_image(n))?;
        }
        write_pose(&dir.join(&entry.pose), &f.pose)?;
        manifest.frames.push(entry);
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::State(e.to_string()))?;
    let path = dir.join("manifest.toml");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn frame(id: u64, size: usize) -> FrameRecord {
        let camera = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y(), 20.0, size, size);
        let mut silhouette = Plane::new(size, size);
        silhouette.data[0] = 1.0;
        let mut normals = NormalMap::empty(size, size);
        normals.normals[0] = Vec3::new(0.0, 0.0, -1.0);
        normals.coverage[0] = true;
        FrameRecord {
            id,
            image: Image::filled(size, size, Vec3::new(0.2, 0.4, 0.6)),
            silhouette,
            normals: Some(normals),
            pose: Pose::new(vec![Vec3::new(0.1, 0.0, 0.0)], Vec3::zeros()),
            camera,
        }
    }

    #[test]
    fn written_dataset_loads_in_id_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[frame(7, 8), frame(2, 8), frame(5, 8)], 2).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.frames.iter().map(|f| f.id).collect::<Vec<_>>(), vec![2, 5, 7]);
        assert_eq!(ds.held_out, vec![0, 2]);
        assert_eq!(ds.train, vec![1]);
        let f = &ds.frames[0];
        assert_eq!(f.pose, frame(2, 8).pose);
        assert!(f.normals.as_ref().unwrap().coverage[0]);
        assert!((f.image.get(3, 3) - Vec3::new(51.0, 102.0, 153.0) / 255.0).norm() < 1e-12);
    }

    #[test]
    fn empty_manifest_has_no_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.toml");
        std::fs::write(&p, "").unwrap();
        let err = load_dataset(&p).unwrap_err();
        assert!(err.to_string().contains("no frames"), "{err}");
    }

    #[test]
    fn mismatched_mask_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[frame(1, 8), frame(3, 8)], 10).unwrap();
        write_plane(&dir.path().join("masks/0003.pgm"), &Plane::new(4, 4)).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.is_validation());
        let msg = err.to_string();
        assert!(msg.contains("frame 3") && msg.contains("silhouette"), "{msg}");
    }

    #[test]
    fn unknown_keys_and_duplicates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[frame(1, 4)], 10).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("colour = 1\n{text}")).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse { .. })));
        let doubled = format!("{text}\n{}", &text[text.find("[[frames]]").unwrap()..]);
        std::fs::write(&path, doubled).unwrap();
        assert!(load_dataset(&path).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn missing_file_fails_whole_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &[frame(1, 4), frame(2, 4)], 10).unwrap();
        std::fs::remove_file(dir.path().join("poses/0002.json")).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("frame 2"), "{err}");
    }
}
