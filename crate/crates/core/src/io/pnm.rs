//! Binary netpbm codecs: P6 for colour images, P5 for masks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Plane};
use crate::math::Vec3;
use crate::mesh::NormalMap;

use super::write_atomic;

/// Float sample to byte: round(clamp(v, 0, 1)·255), halves rounding up.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = header("P6", image.width, image.height);
    out.extend(image.data.iter().map(|&v| quantize(v)));
    out
}

pub fn encode_pgm(plane: &Plane) -> Vec<u8> {
    let mut out = header("P5", plane.width, plane.height);
    out.extend(plane.data.iter().map(|&v| quantize(v)));
    out
}

/// A decoded netpbm file.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bytes: Vec<u8>,
}

/// Parses a P5 or P6 file with maxval 255.
pub fn decode_pnm(data: &[u8]) -> Result<Raster> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match data.get(pos) {
                Some(b'#') => {
                    while data.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated netpbm header".into())),
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::Format(format!("netpbm magic {other:?}; only P5 and P6 are supported"))),
    };
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("bad netpbm {what} {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("netpbm maxval {maxval}; only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("netpbm image with zero size".into()));
    }
    // exactly one whitespace byte separates the header from the samples
    if !data.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(Error::Format("truncated netpbm header".into()));
    }
    pos += 1;
    let len = width * height * channels;
    let bytes = data
        .get(pos..pos + len)
        .ok_or_else(|| Error::Format(format!("truncated netpbm data: {} of {len} bytes", data.len() - pos)))?;
    Ok(Raster {
        width,
        height,
        channels,
        bytes: bytes.to_vec(),
    })
}

fn read_raster(path: &Path) -> Result<Raster> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&data).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads an RGB image; greyscale files are expanded to three channels.
pub fn read_image(path: &Path) -> Result<Image> {
    let r = read_raster(path)?;
    let mut img = Image::new(r.width, r.height);
    if r.channels == 3 {
        img.data = r.bytes.iter().map(|&b| dequantize(b)).collect();
    } else {
        img.data = r.bytes.iter().flat_map(|&b| [dequantize(b); 3]).collect();
    }
    Ok(img)
}

/// Reads a single-channel mask; colour files use their first channel.
pub fn read_plane(path: &Path) -> Result<Plane> {
    let r = read_raster(path)?;
    let mut p = Plane::new(r.width, r.height);
    p.data = r.bytes.iter().step_by(r.channels).map(|&b| dequantize(b)).collect();
    Ok(p)
}

fn check_extension(path: &Path, allowed: &[&str]) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if allowed.contains(&ext.as_str()) {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "{}: cannot write extension {ext:?}; expected one of {allowed:?}",
            path.display()
        )))
    }
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    check_extension(path, &["ppm"])?;
    write_atomic(path, &encode_ppm(image))
}

pub fn write_plane(path: &Path, plane: &Plane) -> Result<()> {
    check_extension(path, &["pgm"])?;
    write_atomic(path, &encode_pgm(plane))
}

/// Normal map stored as colour c = (n + 1) / 2; `coverage` marks the pixels
/// that hold a normal.
pub fn normal_map_from_image(image: &Image, coverage: &Plane) -> Result<NormalMap> {
    if (image.width, image.height) != (coverage.width, coverage.height) {
        return Err(Error::Validation(format!(
            "normal map is {}x{} but its silhouette is {}x{}",
            image.width, image.height, coverage.width, coverage.height
        )));
    }
    let mut map = NormalMap::empty(image.width, image.height);
    for i in 0..image.width * image.height {
        if coverage.data[i] >= 0.5 {
            let c = Vec3::new(image.data[3 * i], image.data[3 * i + 1], image.data[3 * i + 2]);
            let n = c * 2.0 - Vec3::repeat(1.0);
            let len = n.norm();
            if len > 0.0 {
                map.normals[i] = n / len;
                map.coverage[i] = true;
            }
        }
    }
    Ok(map)
}

pub fn normal_map_to_image(map: &NormalMap) -> Image {
    let mut img = Image::filled(map.width, map.height, Vec3::repeat(0.5));
    for (i, n) in map.normals.iter().enumerate() {
        if map.coverage[i] {
            img.data[3 * i..3 * i + 3].copy_from_slice(((n + Vec3::repeat(1.0)) * 0.5).as_slice());
        }
    }
    img
}
