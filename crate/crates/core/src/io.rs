//! File formats: OBJ meshes (with optional per-corner UVs), PFM float grids,
//! 8-bit PNG, plain-text camera/rig/pose files, a binary checkpoint
//! container, and line-delimited JSON logs.
//!
//! Text files print floats with Rust's shortest round-trip formatting and
//! the checkpoint stores raw little-endian f64 bits, so everything written
//! here reads back exactly.

use crate::img::Image;
use crate::mesh::Mesh;
use crate::render::Camera;
use crate::skinning::{Pose, Skeleton, SkinWeights};
use crate::{Mat3, Mat4, Vec2, Vec3};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {what}")]
    Malformed {
        file: String,
        line: usize,
        what: String,
    },
    #[error("{file}:{line}: face with {corners} corners; only triangles are supported")]
    NonTriangleFace {
        file: String,
        line: usize,
        corners: usize,
    },
    #[error("checkpoint magic mismatch; not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {got} unsupported (expected {expected})")]
    BadVersion { got: u32, expected: u32 },
    #[error("checkpoint is missing section {name}")]
    MissingSection { name: String },
    #[error("image has {channels} channels; expected 1 or 3")]
    BadChannelCount { channels: usize },
}

fn malformed(path: &Path, line: usize, what: impl Into<String>) -> IoError {
    IoError::Malformed {
        file: path.display().to_string(),
        line,
        what: what.into(),
    }
}

// ---------------------------------------------------------------- OBJ

/// Reads a triangle mesh. Vertex and texture indices are 1-based; comments,
/// normals, groups, and material statements are skipped. UVs are returned
/// when every face corner carries one.
pub fn read_obj(path: impl AsRef<Path>) -> Result<(Mesh, Option<Vec<[Vec2; 3]>>), IoError> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut face_uv_ids: Vec<Option<[usize; 3]>> = Vec::new();

    for (ln, line) in file.lines().enumerate() {
        let ln = ln + 1;
        let line = line?;
        let mut tokens = line.split_whitespace();
        let Some(head) = tokens.next() else { continue };
        match head {
            "v" => {
                let mut p = [0.0; 3];
                for q in &mut p {
                    *q = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| malformed(path, ln, "bad vertex"))?;
                }
                positions.push(Vec3::new(p[0], p[1], p[2]));
            }
            "vt" => {
                let mut p = [0.0; 2];
                for q in &mut p {
                    *q = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| malformed(path, ln, "bad texture coordinate"))?;
                }
                texcoords.push(Vec2::new(p[0], p[1]));
            }
            "f" => {
                let corners: Vec<&str> = tokens.collect();
                if corners.len() != 3 {
                    return Err(IoError::NonTriangleFace {
                        file: path.display().to_string(),
                        line: ln,
                        corners: corners.len(),
                    });
                }
                let mut vs = [0usize; 3];
                let mut ts = [None; 3];
                for (k, corner) in corners.iter().enumerate() {
                    let mut parts = corner.split('/');
                    let v: usize = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .filter(|&v| v >= 1 && v <= positions.len())
                        .ok_or_else(|| malformed(path, ln, "bad face vertex index"))?;
                    vs[k] = v - 1;
                    if let Some(t) = parts.next().filter(|t| !t.is_empty()) {
                        let t: usize = t
                            .parse()
                            .ok()
                            .filter(|&t| t >= 1 && t <= texcoords.len())
                            .ok_or_else(|| malformed(path, ln, "bad face texture index"))?;
                        ts[k] = Some(t - 1);
                    }
                }
                faces.push(vs);
                face_uv_ids.push(match ts {
                    [Some(a), Some(b), Some(c)] => Some([a, b, c]),
                    _ => None,
                });
            }
            _ => {}
        }
    }

    let uvs = if !face_uv_ids.is_empty() && face_uv_ids.iter().all(|t| t.is_some()) {
        Some(
            face_uv_ids
                .iter()
                .map(|t| {
                    let [a, b, c] = t.unwrap();
                    [texcoords[a], texcoords[b], texcoords[c]]
                })
                .collect(),
        )
    } else {
        None
    };
    Ok((Mesh::new(positions, faces), uvs))
}

/// Writes a triangle mesh, embedding per-corner UVs when given.
pub fn write_obj(
    path: impl AsRef<Path>,
    mesh: &Mesh,
    uvs: Option<&[[Vec2; 3]]>,
) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    match uvs {
        Some(uvs) => {
            assert_eq!(uvs.len(), mesh.num_faces());
            for tri in uvs {
                for c in tri {
                    writeln!(out, "vt {} {}", c.x, c.y)?;
                }
            }
            for (f, face) in mesh.faces.iter().enumerate() {
                writeln!(
                    out,
                    "f {}/{} {}/{} {}/{}",
                    face[0] + 1,
                    f * 3 + 1,
                    face[1] + 1,
                    f * 3 + 2,
                    face[2] + 1,
                    f * 3 + 3
                )?;
            }
        }
        None => {
            for face in &mesh.faces {
                writeln!(out, "f {} {} {}", face[0] + 1, face[1] + 1, face[2] + 1)?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- PFM

/// Reads a PFM float grid ("Pf" grayscale or "PF" color); rows are stored
/// bottom-to-top per the format, returned top-to-bottom.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image, IoError> {
    let path = path.as_ref();
    let mut file = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // Three whitespace-delimited header tokens: magic, "w h", scale.
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        file.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if !header.is_empty() {
                tokens.push(String::from_utf8_lossy(&header).into_owned());
                header.clear();
            }
        } else {
            header.push(byte[0]);
        }
    }
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(malformed(path, 1, format!("bad PFM magic {other:?}"))),
    };
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| malformed(path, 1, "bad width"))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| malformed(path, 1, "bad height"))?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| malformed(path, 1, "bad scale"))?;
    let little_endian = scale < 0.0;

    let mut raw = vec![0u8; width * height * channels * 4];
    file.read_exact(&mut raw)?;
    let mut img = Image::zeros(width, height, channels);
    for row in 0..height {
        let src_row = height - 1 - row;
        for col in 0..width {
            for c in 0..channels {
                let at = ((src_row * width + col) * channels + c) * 4;
                let bytes = [raw[at], raw[at + 1], raw[at + 2], raw[at + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(bytes)
                } else {
                    f32::from_be_bytes(bytes)
                };
                img.data[(row * width + col) * channels + c] = v as f64;
            }
        }
    }
    Ok(img)
}

/// Writes a 1- or 3-channel float grid as little-endian PFM.
pub fn write_pfm(path: impl AsRef<Path>, img: &Image) -> Result<(), IoError> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        channels => return Err(IoError::BadChannelCount { channels }),
    };
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width, img.height)?;
    for row in (0..img.height).rev() {
        for col in 0..img.width {
            for c in 0..img.channels {
                let v = img.data[(row * img.width + col) * img.channels + c] as f32;
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- PNG

/// Reads an 8-bit PNG; grayscale maps to 1 channel, color to 3 (alpha
/// dropped). Values land in [0, 1].
pub fn read_png(path: impl AsRef<Path>) -> Result<Image, IoError> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|e| malformed(path, 0, e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let img = match dynamic {
        image::DynamicImage::ImageLuma8(gray) => {
            let mut img = Image::zeros(w, h, 1);
            for (i, p) in gray.pixels().enumerate() {
                img.data[i] = p.0[0] as f64 / 255.0;
            }
            img
        }
        other => {
            let rgb = other.to_rgb8();
            let mut img = Image::zeros(w, h, 3);
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    img.data[i * 3 + c] = p.0[c] as f64 / 255.0;
                }
            }
            img
        }
    };
    Ok(img)
}

/// Writes a 1- or 3-channel image as 8-bit PNG, clamping to [0, 1].
pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<(), IoError> {
    let path = path.as_ref();
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (img.width as u32, img.height as u32);
    let result = match img.channels {
        1 => image::GrayImage::from_fn(w, h, |x, y| {
            image::Luma([quant(img.get(x as usize, y as usize, 0))])
        })
        .save(path),
        3 => image::RgbImage::from_fn(w, h, |x, y| {
            let px = |c| quant(img.get(x as usize, y as usize, c));
            image::Rgb([px(0), px(1), px(2)])
        })
        .save(path),
        channels => return Err(IoError::BadChannelCount { channels }),
    };
    result.map_err(|e| malformed(path, 0, e.to_string()))
}

// ------------------------------------------------------- camera / rig / poses

/// Camera as key-value lines: position, rotation (row-major), intrinsics.
pub fn write_camera(path: impl AsRef<Path>, cam: &Camera) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    let p = cam.position;
    writeln!(out, "position {} {} {}", p.x, p.y, p.z)?;
    write!(out, "rotation")?;
    for r in 0..3 {
        for c in 0..3 {
            write!(out, " {}", cam.rotation[(r, c)])?;
        }
    }
    writeln!(out)?;
    writeln!(out, "fx {}", cam.fx)?;
    writeln!(out, "fy {}", cam.fy)?;
    writeln!(out, "cx {}", cam.cx)?;
    writeln!(out, "cy {}", cam.cy)?;
    writeln!(out, "width {}", cam.width)?;
    writeln!(out, "height {}", cam.height)?;
    writeln!(out, "near {}", cam.near)?;
    Ok(())
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<Camera, IoError> {
    let path = path.as_ref();
    let mut cam = Camera {
        position: Vec3::zeros(),
        rotation: Mat3::identity(),
        fx: 0.0,
        fy: 0.0,
        cx: 0.0,
        cy: 0.0,
        width: 0,
        height: 0,
        near: 0.0,
    };
    let mut seen = 0;
    for (ln, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let ln = ln + 1;
        let line = line?;
        let mut tokens = line.split_whitespace();
        let Some(head) = tokens.next() else { continue };
        let mut vals = Vec::new();
        for t in tokens {
            vals.push(
                t.parse::<f64>()
                    .map_err(|_| malformed(path, ln, "bad number"))?,
            );
        }
        let need = |n: usize| -> Result<(), IoError> {
            if vals.len() == n {
                Ok(())
            } else {
                Err(malformed(path, ln, format!("expected {n} values")))
            }
        };
        match head {
            "position" => {
                need(3)?;
                cam.position = Vec3::new(vals[0], vals[1], vals[2]);
            }
            "rotation" => {
                need(9)?;
                cam.rotation = Mat3::from_fn(|r, c| vals[r * 3 + c]);
            }
            "fx" => {
                need(1)?;
                cam.fx = vals[0];
            }
            "fy" => {
                need(1)?;
                cam.fy = vals[0];
            }
            "cx" => {
                need(1)?;
                cam.cx = vals[0];
            }
            "cy" => {
                need(1)?;
                cam.cy = vals[0];
            }
            "width" => {
                need(1)?;
                cam.width = vals[0] as usize;
            }
            "height" => {
                need(1)?;
                cam.height = vals[0] as usize;
            }
            "near" => {
                need(1)?;
                cam.near = vals[0];
            }
            other => return Err(malformed(path, ln, format!("unknown key {other:?}"))),
        }
        seen += 1;
    }
    if seen < 9 {
        return Err(malformed(path, 0, "camera file is missing keys"));
    }
    Ok(cam)
}

/// Rig: one line per bone (parent index, -1 for roots, and the row-major
/// 4x4 rest transform), then optionally one `w` line per template vertex
/// with alternating bone/weight pairs.
pub fn write_rig(
    path: impl AsRef<Path>,
    skel: &Skeleton,
    weights: Option<&SkinWeights>,
) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "bones {}", skel.rest.len())?;
    for (b, rest) in skel.rest.iter().enumerate() {
        let parent = skel.parents[b].map(|p| p as i64).unwrap_or(-1);
        write!(out, "bone {b} parent {parent} rest")?;
        for r in 0..4 {
            for c in 0..4 {
                write!(out, " {}", rest[(r, c)])?;
            }
        }
        writeln!(out)?;
    }
    if let Some(weights) = weights {
        writeln!(out, "weights {}", weights.rows.len())?;
        for row in &weights.rows {
            write!(out, "w")?;
            for &(b, v) in row {
                write!(out, " {b} {v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn read_rig(path: impl AsRef<Path>) -> Result<(Skeleton, Option<SkinWeights>), IoError> {
    let path = path.as_ref();
    let mut rest = Vec::new();
    let mut parents = Vec::new();
    let mut declared = None;
    let mut declared_weights = None;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for (ln, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let ln = ln + 1;
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        match tokens[0] {
            "bones" => {
                declared = Some(
                    tokens
                        .get(1)
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| malformed(path, ln, "bad bone count"))?,
                );
            }
            "bone" => {
                if tokens.len() != 21 || tokens[2] != "parent" || tokens[4] != "rest" {
                    return Err(malformed(path, ln, "bad bone line"));
                }
                let parent: i64 = tokens[3]
                    .parse()
                    .map_err(|_| malformed(path, ln, "bad parent index"))?;
                parents.push(if parent < 0 {
                    None
                } else {
                    Some(parent as usize)
                });
                let mut vals = [0.0f64; 16];
                for (k, t) in tokens[5..21].iter().enumerate() {
                    vals[k] = t
                        .parse()
                        .map_err(|_| malformed(path, ln, "bad transform entry"))?;
                }
                rest.push(Mat4::from_fn(|r, c| vals[r * 4 + c]));
            }
            "weights" => {
                declared_weights = Some(
                    tokens
                        .get(1)
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| malformed(path, ln, "bad weight count"))?,
                );
            }
            "w" => {
                if tokens.len() % 2 != 1 {
                    return Err(malformed(path, ln, "bad weight row"));
                }
                let mut row = Vec::with_capacity(tokens.len() / 2);
                for pair in tokens[1..].chunks(2) {
                    let b: usize = pair[0]
                        .parse()
                        .map_err(|_| malformed(path, ln, "bad bone index"))?;
                    let v: f64 = pair[1]
                        .parse()
                        .map_err(|_| malformed(path, ln, "bad weight"))?;
                    row.push((b, v));
                }
                rows.push(row);
            }
            other => return Err(malformed(path, ln, format!("unknown key {other:?}"))),
        }
    }
    if let Some(d) = declared {
        if d != rest.len() {
            return Err(malformed(
                path,
                0,
                format!("declared {d} bones, found {}", rest.len()),
            ));
        }
    }
    if let Some(d) = declared_weights {
        if d != rows.len() {
            return Err(malformed(
                path,
                0,
                format!("declared {d} weight rows, found {}", rows.len()),
            ));
        }
    }
    let weights = if rows.is_empty() {
        None
    } else {
        Some(SkinWeights { rows })
    };
    Ok((Skeleton { rest, parents }, weights))
}

/// Poses as blocks: `frame t`, `root x y z`, then one `rot x y z` line per
/// bone (scaled axis-angle).
pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "frames {}", poses.len())?;
    for (t, pose) in poses.iter().enumerate() {
        writeln!(out, "frame {t}")?;
        let r = pose.root_translation;
        writeln!(out, "root {} {} {}", r.x, r.y, r.z)?;
        for rot in &pose.rotations {
            writeln!(out, "rot {} {} {}", rot.x, rot.y, rot.z)?;
        }
    }
    Ok(())
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>, IoError> {
    let path = path.as_ref();
    let mut poses: Vec<Pose> = Vec::new();
    for (ln, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let ln = ln + 1;
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let vec3 = |tokens: &[&str]| -> Result<Vec3, IoError> {
            if tokens.len() != 3 {
                return Err(malformed(path, ln, "expected 3 values"));
            }
            let mut v = [0.0; 3];
            for (k, t) in tokens.iter().enumerate() {
                v[k] = t
                    .parse()
                    .map_err(|_| malformed(path, ln, "bad number"))?;
            }
            Ok(Vec3::new(v[0], v[1], v[2]))
        };
        match tokens[0] {
            "frames" => {}
            "frame" => poses.push(Pose {
                rotations: Vec::new(),
                root_translation: Vec3::zeros(),
            }),
            "root" => {
                let pose = poses
                    .last_mut()
                    .ok_or_else(|| malformed(path, ln, "root before frame"))?;
                pose.root_translation = vec3(&tokens[1..])?;
            }
            "rot" => {
                let pose = poses
                    .last_mut()
                    .ok_or_else(|| malformed(path, ln, "rot before frame"))?;
                pose.rotations.push(vec3(&tokens[1..])?);
            }
            other => return Err(malformed(path, ln, format!("unknown key {other:?}"))),
        }
    }
    Ok(poses)
}

// ---------------------------------------------------------------- checkpoint

const CKPT_MAGIC: &[u8; 8] = b"WEFTCKPT";
const CKPT_VERSION: u32 = 1;

/// Named f64 tensors with shape headers in one binary file. Bytes round-trip
/// exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn add(&mut self, name: &str, dims: &[usize], data: Vec<f64>) {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        self.sections.push((name.to_string(), dims.to_vec(), data));
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64]), IoError> {
        self.sections
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, dims, data)| (dims.as_slice(), data.as_slice()))
            .ok_or_else(|| IoError::MissingSection {
                name: name.to_string(),
            })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CKPT_MAGIC)?;
        out.write_all(&CKPT_VERSION.to_le_bytes())?;
        out.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, dims, data) in &self.sections {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(dims.len() as u32).to_le_bytes())?;
            for &d in dims {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let mut file = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(IoError::BadMagic);
        }
        let mut u32buf = [0u8; 4];
        file.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CKPT_VERSION {
            return Err(IoError::BadVersion {
                got: version,
                expected: CKPT_VERSION,
            });
        }
        file.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            file.read_exact(&mut u32buf)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            let mut name = vec![0u8; name_len];
            file.read_exact(&mut name)?;
            let name = String::from_utf8_lossy(&name).into_owned();
            file.read_exact(&mut u32buf)?;
            let ndims = u32::from_le_bytes(u32buf) as usize;
            let mut dims = Vec::with_capacity(ndims);
            let mut u64buf = [0u8; 8];
            for _ in 0..ndims {
                file.read_exact(&mut u64buf)?;
                dims.push(u64::from_le_bytes(u64buf) as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                file.read_exact(&mut u64buf)?;
                data.push(f64::from_le_bytes(u64buf));
            }
            sections.push((name, dims, data));
        }
        Ok(Self { sections })
    }
}

// ---------------------------------------------------------------- jsonl

/// Append-only line-delimited JSON log.
pub struct JsonlLog {
    out: BufWriter<File>,
}

impl JsonlLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, IoError> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(&mut self, record: &impl serde::Serialize) -> Result<(), IoError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn obj_round_trips_exactly() {
        let dir = tmp();
        let path = dir.path().join("m.obj");
        let mesh = Mesh::new(
            vec![
                Vec3::new(0.1, -0.2, 0.3),
                Vec3::new(1.0 / 3.0, 0.0, 0.0),
                Vec3::new(0.0, 1e-17, 2.5),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let uvs = vec![
            [
                Vec2::new(0.125, 0.25),
                Vec2::new(0.5, 0.25),
                Vec2::new(0.125, 0.625),
            ],
            [
                Vec2::new(0.7, 0.7),
                Vec2::new(0.9, 0.7),
                Vec2::new(0.7, 0.9),
            ],
        ];
        write_obj(&path, &mesh, Some(&uvs)).unwrap();
        let (back, back_uvs) = read_obj(&path).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.faces, mesh.faces);
        assert_eq!(back_uvs.unwrap(), uvs);

        write_obj(&path, &mesh, None).unwrap();
        let (_, no_uvs) = read_obj(&path).unwrap();
        assert!(no_uvs.is_none());
    }

    #[test]
    fn obj_parser_skips_noise_and_rejects_quads() {
        let dir = tmp();
        let path = dir.path().join("m.obj");
        std::fs::write(
            &path,
            "# comment\n\no thing\nusemtl mat\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\ns off\nf 1//1 2//1 3//1\n",
        )
        .unwrap();
        let (mesh, uvs) = read_obj(&path).unwrap();
        assert_eq!(mesh.num_vertices(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
        assert!(uvs.is_none());

        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").unwrap();
        assert!(matches!(
            read_obj(&path),
            Err(IoError::NonTriangleFace { corners: 4, .. })
        ));

        std::fs::write(&path, "v 0 0 0\nf 1 2 3\n").unwrap();
        assert!(matches!(read_obj(&path), Err(IoError::Malformed { .. })));
    }

    #[test]
    fn pfm_round_trips_bitwise() {
        let dir = tmp();
        for channels in [1usize, 3] {
            let path = dir.path().join(format!("img{channels}.pfm"));
            let mut rng = StdRng::seed_from_u64(channels as u64);
            let mut img = Image::zeros(7, 5, channels);
            for v in &mut img.data {
                // f32-representable values round-trip bit for bit.
                *v = rng.gen_range(-10.0f32..10.0) as f64;
            }
            img.data[0] = f32::INFINITY as f64;
            write_pfm(&path, &img).unwrap();
            let back = read_pfm(&path).unwrap();
            assert_eq!(back.width, 7);
            assert_eq!(back.height, 5);
            assert_eq!(back.channels, channels);
            for (a, b) in back.data.iter().zip(&img.data) {
                assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
            }
        }
    }

    #[test]
    fn pfm_rejects_bad_magic() {
        let dir = tmp();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, "P6\n2 2\n-1.0\n").unwrap();
        assert!(matches!(read_pfm(&path), Err(IoError::Malformed { .. })));
    }

    #[test]
    fn png_round_trips_within_quantization() {
        let dir = tmp();
        for channels in [1usize, 3] {
            let path = dir.path().join(format!("img{channels}.png"));
            let mut rng = StdRng::seed_from_u64(7 + channels as u64);
            let mut img = Image::zeros(9, 4, channels);
            for v in &mut img.data {
                *v = rng.gen_range(0.0..1.0);
            }
            write_png(&path, &img).unwrap();
            let back = read_png(&path).unwrap();
            assert_eq!(back.channels, channels);
            for (a, b) in back.data.iter().zip(&img.data) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
        let bad = Image::zeros(2, 2, 4);
        assert!(matches!(
            write_png(dir.path().join("bad.png"), &bad),
            Err(IoError::BadChannelCount { channels: 4 })
        ));
    }

    #[test]
    fn camera_round_trips_exactly() {
        let dir = tmp();
        let path = dir.path().join("camera.txt");
        let cam = Camera::look_at(
            Vec3::new(0.1, 0.45, 2.2),
            Vec3::new(0.0, 0.45, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            300.0,
            300.0,
            256,
            256,
            0.01,
        );
        write_camera(&path, &cam).unwrap();
        let back = read_camera(&path).unwrap();
        assert_eq!(back.position, cam.position);
        assert_eq!(back.rotation, cam.rotation);
        assert_eq!(
            (back.fx, back.fy, back.cx, back.cy),
            (cam.fx, cam.fy, cam.cx, cam.cy)
        );
        assert_eq!((back.width, back.height), (cam.width, cam.height));
        assert_eq!(back.near, cam.near);
    }

    #[test]
    fn rig_and_poses_round_trip_exactly() {
        let dir = tmp();
        let rig_path = dir.path().join("rig.txt");
        let mut r0 = Mat4::identity();
        r0[(1, 3)] = 0.9;
        let mut r1 = Mat4::identity();
        r1[(1, 3)] = 0.45;
        r1[(0, 0)] = 0.999;
        let skel = Skeleton {
            rest: vec![r0, r1],
            parents: vec![None, Some(0)],
        };
        write_rig(&rig_path, &skel, None).unwrap();
        let (back, no_weights) = read_rig(&rig_path).unwrap();
        assert_eq!(back.rest, skel.rest);
        assert_eq!(back.parents, skel.parents);
        assert!(no_weights.is_none());

        let weights = SkinWeights {
            rows: vec![vec![(0, 1.0)], vec![(0, 0.25), (1, 0.75)]],
        };
        write_rig(&rig_path, &skel, Some(&weights)).unwrap();
        let (back, back_weights) = read_rig(&rig_path).unwrap();
        assert_eq!(back.rest, skel.rest);
        assert_eq!(back_weights.unwrap().rows, weights.rows);

        let poses_path = dir.path().join("poses.txt");
        let poses = vec![
            Pose {
                rotations: vec![Vec3::zeros(), Vec3::new(0.1, 0.0, -0.3)],
                root_translation: Vec3::new(0.0, 0.01, 0.0),
            },
            Pose {
                rotations: vec![Vec3::new(0.0, 0.5, 0.0), Vec3::new(0.2, 0.0, 0.0)],
                root_translation: Vec3::zeros(),
            },
        ];
        write_poses(&poses_path, &poses).unwrap();
        let back = read_poses(&poses_path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&poses) {
            assert_eq!(a.rotations, b.rotations);
            assert_eq!(a.root_translation, b.root_translation);
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tmp();
        let path = dir.path().join("state.ckpt");
        let mut rng = StdRng::seed_from_u64(11);
        let mut ckpt = Checkpoint::default();
        let jac: Vec<f64> = (0..4 * 9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        ckpt.add("static_field", &[4, 9], jac.clone());
        ckpt.add("mlp", &[17], (0..17).map(|_| rng.gen::<f64>()).collect());
        ckpt.add("empty", &[0], Vec::new());
        // Subnormals and negative zero must survive.
        ckpt.add("edge_cases", &[3], vec![f64::MIN_POSITIVE / 8.0, -0.0, 1e300]);
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.sections.len(), 4);
        for ((na, da, va), (nb, db, vb)) in back.sections.iter().zip(&ckpt.sections) {
            assert_eq!(na, nb);
            assert_eq!(da, db);
            assert_eq!(va.len(), vb.len());
            for (x, y) in va.iter().zip(vb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let (dims, data) = back.get("static_field").unwrap();
        assert_eq!(dims, &[4, 9]);
        assert_eq!(data, jac.as_slice());
        assert!(matches!(
            back.get("nope"),
            Err(IoError::MissingSection { .. })
        ));
    }

    #[test]
    fn checkpoint_rejects_foreign_files() {
        let dir = tmp();
        let path = dir.path().join("not.ckpt");
        std::fs::write(&path, b"OTHERFMT\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(IoError::BadMagic)));
        std::fs::write(&path, b"WEFTCKPT\x63\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(IoError::BadVersion { got: 99, .. })
        ));
    }

    #[test]
    fn jsonl_appends_parseable_lines() {
        let dir = tmp();
        let path = dir.path().join("log.jsonl");
        #[derive(serde::Serialize)]
        struct Row {
            epoch: usize,
            loss: f64,
        }
        let mut log = JsonlLog::create(&path).unwrap();
        log.append(&Row {
            epoch: 0,
            loss: 0.5,
        })
        .unwrap();
        log.append(&Row {
            epoch: 1,
            loss: 0.25,
        })
        .unwrap();
        drop(log);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["epoch"], 1);
        assert_eq!(v["loss"], 0.25);
    }
}
