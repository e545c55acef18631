use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One exported field sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyVertex {
    pub position: [f32; 3],
    pub color: [f32; 3],
    pub sigma: f32,
}

const PROPERTIES: [&str; 7] = ["x", "y", "z", "r", "g", "b", "sigma"];

/// ASCII PLY 1.0 with float properties `x y z r g b sigma`; colours in `[0, 1]`.
pub fn write_ply(path: &Path, vertices: &[PlyVertex]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}",
        vertices.len()
    )?;
    for p in PROPERTIES {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "end_header")?;
    for v in vertices {
        let [x, y, z] = v.position;
        let [r, g, b] = v.color;
        writeln!(w, "{x} {y} {z} {r} {g} {b} {}", v.sigma)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads files written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<PlyVertex>> {
    let text = fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
    let bad = |reason: String| Error::data(path, reason);
    let mut lines = text.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format ascii 1.0") {
        return Err(bad("not an ASCII PLY 1.0 file".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| bad(e.to_string()))?)
            }
            ["property", "float", name] => props.push(name.to_string()),
            ["comment", ..] => {}
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    if props != PROPERTIES {
        return Err(bad(format!("unexpected properties {props:?}")));
    }
    let count = count.ok_or_else(|| bad("missing vertex element".into()))?;
    let mut out = Vec::with_capacity(count);
    for line in lines.take(count) {
        let v: Vec<f32> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("bad vertex line {line:?}: {e}")))?;
        if v.len() != 7 {
            return Err(bad(format!("vertex line has {} values", v.len())));
        }
        out.push(PlyVertex {
            position: [v[0], v[1], v[2]],
            color: [v[3], v[4], v[5]],
            sigma: v[6],
        });
    }
    if out.len() != count {
        return Err(bad(format!(
            "expected {count} vertices, found {}",
            out.len()
        )));
    }
    Ok(out)
}
