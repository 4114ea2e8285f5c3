//! ASCII PLY export of a single cloud, for external point-cloud viewers.

use std::fmt::Write as _;

use thiserror::Error;

use crate::gaussian::{Gaussian3D, GaussianCloud};

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "red", "green", "blue", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Debug, Error, PartialEq)]
pub enum PlyError {
    #[error("not an ASCII PLY file")]
    NotPly,
    #[error("PLY header: {0}")]
    Header(String),
    #[error("PLY line {line}: {msg}")]
    Body { line: usize, msg: String },
}

/// Writes one vertex per Gaussian: position, RGB in [0, 1], opacity logit, log
/// scales and the (w, x, y, z) rotation. Values are printed in shortest
/// round-trip form, so parsing them back is exact.
pub fn write_ply_ascii(cloud: &GaussianCloud<f32>) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment vidsplat gaussian cloud\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for p in PROPERTIES {
        let _ = writeln!(out, "property float {p}");
    }
    out.push_str("end_header\n");
    for g in &cloud.gaussians {
        let v = [
            g.mean[0],
            g.mean[1],
            g.mean[2],
            g.color[0],
            g.color[1],
            g.color[2],
            g.opacity_logit,
            g.log_scale[0],
            g.log_scale[1],
            g.log_scale[2],
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
        ];
        let line: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses files written by [`write_ply_ascii`]. Property order is taken
/// from the header; the background is not stored and comes back black.
pub fn read_ply_ascii(text: &str) -> Result<GaussianCloud<f32>, PlyError> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        return Err(PlyError::NotPly);
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut ended = false;
    for (_, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", other, ..] => return Err(PlyError::Header(format!("unsupported format {other}"))),
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| PlyError::Header(format!("vertex count: {e}")))?)
            }
            ["property", "float", name] => props.push(name.to_string()),
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(PlyError::Header(format!("unexpected line '{line}'"))),
        }
    }
    if !ended {
        return Err(PlyError::Header("missing end_header".into()));
    }
    let count = count.ok_or_else(|| PlyError::Header("missing vertex element".into()))?;
    let slot = |name: &str| {
        props.iter().position(|p| p == name).ok_or_else(|| PlyError::Header(format!("missing property {name}")))
    };
    let idx: Vec<usize> = PROPERTIES.iter().map(|p| slot(p)).collect::<Result<_, _>>()?;

    let mut gaussians = Vec::with_capacity(count);
    for (n, line) in lines.take(count) {
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|w| w.parse::<f32>())
            .collect::<Result<_, _>>()
            .map_err(|e| PlyError::Body { line: n + 1, msg: e.to_string() })?;
        if vals.len() != props.len() {
            return Err(PlyError::Body {
                line: n + 1,
                msg: format!("{} values for {} properties", vals.len(), props.len()),
            });
        }
        let v = |k: usize| vals[idx[k]];
        gaussians.push(Gaussian3D {
            mean: [v(0), v(1), v(2)],
            color: [v(3), v(4), v(5)],
            opacity_logit: v(6),
            log_scale: [v(7), v(8), v(9)],
            rotation: [v(10), v(11), v(12), v(13)],
        });
    }
    if gaussians.len() != count {
        return Err(PlyError::Body { line: 0, msg: format!("expected {count} vertices, found {}", gaussians.len()) });
    }
    Ok(GaussianCloud::new(gaussians, [0.0; 3]))
}
