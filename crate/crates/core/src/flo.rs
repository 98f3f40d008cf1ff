//! Middlebury `.flo` optical-flow files.
//!
//! Layout: the four bytes `PIEH`, width and height as little-endian `i32`,
//! then row-major interleaved `(u, v)` pairs as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow_ops::{FlowField, FlowLevel};

const MAGIC: &[u8; 4] = b"PIEH";

pub fn write_flo<W: Write>(mut out: W, flow: &FlowField) -> Result<()> {
    let (h, w) = flow.dims();
    let mut buf = Vec::with_capacity(12 + 8 * h * w);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        buf.extend_from_slice(&(u as f32).to_le_bytes());
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_flo<R: Read>(mut input: R, level: FlowLevel) -> Result<FlowField> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::invalid(format!("malformed .flo data: {m}"));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing PIEH header"));
    }
    let word = |i: usize| i32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h) = (word(4), word(8));
    if w <= 0 || h <= 0 {
        return Err(bad("non-positive dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + 8 * w * h {
        return Err(bad("payload length does not match dimensions"));
    }
    let vals: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(FlowField::from_fn(level, h, w, |y, x| {
        let i = 2 * (y * w + x);
        (vals[i], vals[i + 1])
    }))
}

pub fn save_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_flo(std::io::BufWriter::new(file), flow)
}

pub fn load_flo(path: &Path, level: FlowLevel) -> Result<FlowField> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_flo(std::io::BufReader::new(file), level).map_err(|e| Error::file(path, e))
}

/// Hue ramps of the standard flow colour wheel: red-yellow, yellow-green,
/// green-cyan, cyan-blue, blue-magenta, magenta-red.
const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn wheel() -> Vec<[f64; 3]> {
    let mut colors = Vec::new();
    let ramps: [([f64; 3], [f64; 3]); 6] = [
        ([1.0, 0.0, 0.0], [1.0, 1.0, 0.0]),
        ([1.0, 1.0, 0.0], [0.0, 1.0, 0.0]),
        ([0.0, 1.0, 0.0], [0.0, 1.0, 1.0]),
        ([0.0, 1.0, 1.0], [0.0, 0.0, 1.0]),
        ([0.0, 0.0, 1.0], [1.0, 0.0, 1.0]),
        ([1.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
    ];
    for (n, (a, b)) in WHEEL_SEGMENTS.iter().zip(ramps) {
        for i in 0..*n {
            let t = i as f64 / *n as f64;
            colors.push([0, 1, 2].map(|k| a[k] + t * (b[k] - a[k])));
        }
    }
    colors
}

/// Colour-coded flow: hue from direction, saturation from magnitude
/// relative to the largest vector. Returns interleaved RGB bytes and that
/// largest magnitude.
pub fn flow_to_rgb(flow: &FlowField) -> (Vec<u8>, f64) {
    let colors = wheel();
    let ncols = colors.len() as f64;
    let max = flow
        .u()
        .iter()
        .zip(flow.v())
        .map(|(u, v)| u.hypot(*v))
        .fold(0.0, f64::max);
    let norm = if max > 0.0 { max } else { 1.0 };
    let mut out = Vec::with_capacity(3 * flow.u().len());
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        let (u, v) = (u / norm, v / norm);
        let rad = u.hypot(v).min(1.0);
        let angle = (-v).atan2(-u) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (ncols - 1.0);
        let k0 = fk.floor() as usize % colors.len();
        let k1 = (k0 + 1) % colors.len();
        let f = fk - fk.floor();
        for (a, b) in colors[k0].iter().zip(&colors[k1]) {
            let col = (1.0 - f) * a + f * b;
            let col = 1.0 - rad * (1.0 - col);
            out.push((255.0 * col).round() as u8);
        }
    }
    (out, max)
}

/// Writes the colour-coded flow as PNG; returns the normalising magnitude.
pub fn save_flow_png(path: &Path, flow: &FlowField) -> Result<f64> {
    let (rgb, max) = flow_to_rgb(flow);
    let (h, w) = flow.dims();
    image::RgbImage::from_raw(w as u32, h as u32, rgb)
        .expect("buffer sized to image")
        .save(path)
        .map_err(|e| Error::file(path, e))?;
    Ok(max)
}
