//! File formats: float images, 8/16-bit previews, JSON documents and
//! observation-sequence directories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::scene::{Camera, Image, JointSpec};
use crate::sim::{Frame, ObservationSequence};

const GSIM_MAGIC: &[u8; 4] = b"GSIM";
/// Channels written per pixel: r, g, b, depth, alpha.
pub const GSIM_CHANNELS: u32 = 5;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "gt_thetas.json";

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Joint list file: either a bare array or an object with a `joints` field.
#[derive(Deserialize)]
#[serde(untagged)]
enum JointsDoc {
    Bare(Vec<JointSpec>),
    Wrapped { joints: Vec<JointSpec> },
}

pub fn read_joints(path: &Path) -> Result<Vec<JointSpec>> {
    let joints = match read_json::<JointsDoc>(path)? {
        JointsDoc::Bare(j) | JointsDoc::Wrapped { joints: j } => j,
    };
    for (i, j) in joints.iter().enumerate() {
        if !j.is_unit() {
            return Err(Error::part(i, Error::InvalidInput("joint axis is not unit-norm".into())));
        }
    }
    Ok(joints)
}

pub fn encode_gsim(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.len() * 4 * GSIM_CHANNELS as usize);
    out.extend_from_slice(GSIM_MAGIC);
    for v in [img.width as u32, img.height as u32, GSIM_CHANNELS] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..img.len() {
        let px = img.rgb[i];
        for v in [px[0], px[1], px[2], img.depth[i], img.alpha[i]] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes 3 (rgb), 4 (rgb, depth) or 5 (rgb, depth, alpha) channel data.
pub fn decode_gsim(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..4] != GSIM_MAGIC {
        return Err(Error::Format("missing GSIM header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, c) = (word(4), word(8), word(12));
    if !(3..=5).contains(&c) {
        return Err(Error::Format(format!("unsupported channel count {c}")));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4 * c))
        .ok_or_else(|| Error::Format("image too large".into()))?;
    if bytes.len() - 16 != expected {
        return Err(Error::Format(format!(
            "expected {expected} data bytes for {w}x{h}x{c}, found {}",
            bytes.len() - 16
        )));
    }
    let mut img = Image::new(w, h, [0.0; 3]);
    let data = &bytes[16..];
    let value = |k: usize| f32::from_le_bytes(data[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
    for i in 0..w * h {
        let b = i * c;
        img.rgb[i] = [value(b), value(b + 1), value(b + 2)];
        if c >= 4 {
            img.depth[i] = value(b + 3);
        }
        img.alpha[i] = if c == 5 { value(b + 4) } else { 1.0 };
    }
    img.validate()?;
    Ok(img)
}

pub fn write_gsim(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_gsim(img))?;
    Ok(())
}

pub fn read_gsim(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_gsim(&bytes)
}

/// Binary 8-bit RGB.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.rgb {
        out.extend(px.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

/// Binary 16-bit depth in millimeters (big-endian samples).
pub fn encode_depth_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for &d in &img.depth {
        let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn write_depth_pgm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_depth_pgm(img))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub time: f64,
    /// Articulation the robot commanded at this frame.
    pub commanded: Vec<f64>,
    /// One image path per camera, relative to the sequence directory.
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub cameras: Vec<Camera>,
    pub camera_ids: Vec<String>,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthSidecar {
    thetas: Vec<Vec<f64>>,
}

fn image_name(frame: usize, cam: usize) -> String {
    format!("frame{frame:03}_cam{cam}.gsim")
}

/// Writes a sequence as `manifest.json`, one GSIM per frame and camera, and
/// the true articulation values in a separate `gt_thetas.json`. With
/// `previews`, PPM and depth PGM files are written next to each GSIM.
pub fn write_sequence(dir: &Path, seq: &ObservationSequence, previews: bool) -> Result<()> {
    seq.validate()?;
    fs::create_dir_all(dir)?;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for (t, f) in seq.frames.iter().enumerate() {
        let mut names = Vec::with_capacity(f.images.len());
        for (c, img) in f.images.iter().enumerate() {
            let name = image_name(t, c);
            write_gsim(&dir.join(&name), img)?;
            if previews {
                let stem = name.trim_end_matches(".gsim");
                write_ppm(&dir.join(format!("{stem}.ppm")), img)?;
                write_depth_pgm(&dir.join(format!("{stem}_depth.pgm")), img)?;
            }
            names.push(name);
        }
        frames.push(ManifestFrame {
            time: f.time,
            commanded: f.commanded.0.clone(),
            images: names,
        });
    }
    let manifest = SequenceManifest {
        camera_ids: (0..seq.cameras.len()).map(|i| format!("cam{i}")).collect(),
        cameras: seq.cameras.clone(),
        frames,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let truth = TruthSidecar {
        thetas: seq.frames.iter().map(|f| f.truth.0.clone()).collect(),
    };
    write_json(&dir.join(TRUTH_FILE), &truth)
}

/// Reads a sequence directory. The true articulation values are only
/// loaded when `with_truth` is set; otherwise frames carry zero poses.
pub fn read_sequence(dir: &Path, with_truth: bool) -> Result<ObservationSequence> {
    let manifest: SequenceManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let truth = if with_truth {
        let t: TruthSidecar = read_json(&dir.join(TRUTH_FILE))?;
        if t.thetas.len() != manifest.frames.len() {
            return Err(Error::Format("truth sidecar frame count differs from manifest".into()));
        }
        Some(t.thetas)
    } else {
        None
    };
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, f) in manifest.frames.iter().enumerate() {
        let images = f
            .images
            .iter()
            .map(|name| read_gsim(&resolve(dir, name)))
            .collect::<Result<Vec<_>>>()?;
        let k = f.commanded.len();
        frames.push(Frame {
            time: f.time,
            commanded: Pose(f.commanded.clone()),
            truth: truth.as_ref().map_or_else(|| Pose::zeros(k), |t| Pose(t[i].clone())),
            images,
        });
    }
    let seq = ObservationSequence {
        frames,
        cameras: manifest.cameras,
    };
    seq.validate()?;
    for (f, frame) in seq.frames.iter().enumerate() {
        for (img, cam) in frame.images.iter().zip(&seq.cameras) {
            if img.width != cam.width || img.height != cam.height {
                return Err(Error::Dimension(format!("frame {f} image does not match its camera")));
            }
        }
    }
    Ok(seq)
}

fn resolve(dir: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
