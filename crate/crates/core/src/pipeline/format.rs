//! The `.v3dz` container for a sequence of clouds.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "V3DZ" | version u32 | header_len u32 | header JSON | header crc32
//! per frame: count u32 | background 3×f32 | count×14 f32 params | crc32 of the block
//! "V3DE" | crc32 of every preceding byte
//! ```
//!
//! Parameters are stored in [`Gaussian3D::to_params`] order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Provenance, Video3D};
use crate::camera::CameraManifest;
use crate::gaussian::{Gaussian3D, GaussianCloud, PARAMS_PER_GAUSSIAN};

pub const MAGIC: &[u8; 4] = b"V3DZ";
pub const TRAILER: &[u8; 4] = b"V3DE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a .v3dz file (bad magic)")]
    BadMagic,
    #[error("unsupported .v3dz version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("malformed .v3dz: {0}")]
    Malformed(String),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    frame_count: usize,
    params_per_gaussian: usize,
    param_order: Vec<String>,
    cameras: CameraManifest,
    provenance: Provenance,
}

fn param_order() -> Vec<String> {
    ["x", "y", "z", "qw", "qx", "qy", "qz", "log_sx", "log_sy", "log_sz", "opacity_logit", "r", "g", "b"]
        .map(String::from)
        .to_vec()
}

pub fn encode_video3d(video: &Video3D) -> Result<Vec<u8>, FormatError> {
    let header = Header {
        frame_count: video.clouds.len(),
        params_per_gaussian: PARAMS_PER_GAUSSIAN,
        param_order: param_order(),
        cameras: video.cameras.clone(),
        provenance: video.provenance.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
    for cloud in &video.clouds {
        let start = out.len();
        out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
        for c in cloud.background {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for g in &cloud.gaussians {
            for p in g.to_params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    out.extend_from_slice(TRAILER);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| FormatError::Malformed(format!("unexpected end of data in {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_video3d(bytes: &[u8]) -> Result<Video3D, FormatError> {
    let n = bytes.len().min(4);
    if bytes[..n] != MAGIC[..n] {
        return Err(FormatError::BadMagic);
    }
    // A prefix of a valid file is a truncated file.
    if bytes.len() < 8 {
        return Err(FormatError::Checksum("file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(FormatError::Version { found: version, expected: FORMAT_VERSION });
    }
    // Whole-file check first, so truncation and corruption anywhere are
    // reported as checksum failures.
    if bytes.len() < 16 {
        return Err(FormatError::Checksum("file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(FormatError::Checksum("file".into()));
    }
    if &body[body.len() - 4..] != TRAILER {
        return Err(FormatError::Malformed("missing trailer".into()));
    }
    let body = &body[..body.len() - 4];

    let mut r = Reader { bytes: body, pos: 8 };
    let len = r.u32("header length")? as usize;
    let json = r.take(len, "header")?;
    if crc32fast::hash(json) != r.u32("header checksum")? {
        return Err(FormatError::Checksum("header".into()));
    }
    let header: Header = serde_json::from_slice(json)?;
    if header.params_per_gaussian != PARAMS_PER_GAUSSIAN {
        return Err(FormatError::Malformed(format!(
            "{} parameters per gaussian, expected {PARAMS_PER_GAUSSIAN}",
            header.params_per_gaussian
        )));
    }

    let mut clouds = Vec::with_capacity(header.frame_count);
    for f in 0..header.frame_count {
        let start = r.pos;
        let what = format!("frame {f}");
        let n = r.u32(&what)? as usize;
        let mut background = [0.0f32; 3];
        for c in &mut background {
            *c = r.f32(&what)?;
        }
        let raw = r.take(n.saturating_mul(PARAMS_PER_GAUSSIAN * 4), &what)?;
        let block = &body[start..r.pos];
        if crc32fast::hash(block) != r.u32(&what)? {
            return Err(FormatError::Checksum(what));
        }
        let gaussians = raw
            .chunks_exact(PARAMS_PER_GAUSSIAN * 4)
            .map(|chunk| {
                let mut p = [0.0f32; PARAMS_PER_GAUSSIAN];
                for (dst, b) in p.iter_mut().zip(chunk.chunks_exact(4)) {
                    *dst = f32::from_le_bytes(b.try_into().expect("4 bytes"));
                }
                Gaussian3D::from_params(&p)
            })
            .collect();
        clouds.push(GaussianCloud::new(gaussians, background));
    }
    if r.pos != body.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Video3D { clouds, cameras: header.cameras, provenance: header.provenance })
}

pub fn save_video3d(video: &Video3D, path: &Path) -> Result<(), FormatError> {
    let bytes = encode_video3d(video)?;
    let io = |source| FormatError::Io { path: path.display().to_string(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    Ok(())
}

pub fn load_video3d(path: &Path) -> Result<Video3D, FormatError> {
    let bytes = std::fs::read(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
    decode_video3d(&bytes)
}
