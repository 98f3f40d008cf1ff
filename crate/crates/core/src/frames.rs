//! Frame containers, colour conversion, sequence I/O and training patches.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// BT.601 studio-swing offsets and weights on [0,1]-normalised RGB.
const Y_OFFSET: f64 = 16.0 / 255.0;
const C_OFFSET: f64 = 128.0 / 255.0;
const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [65.481 / 255.0, 128.553 / 255.0, 24.966 / 255.0],
    [-37.797 / 255.0, -74.203 / 255.0, 112.0 / 255.0],
    [112.0 / 255.0, -93.786 / 255.0, -18.214 / 255.0],
];
/// Studio-swing luminance span, 219 codes out of 255.
const Y_SPAN: f64 = 219.0 / 255.0;

/// A single frame: luminance plus optional Cb/Cr planes, all in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    luma: Vec<f64>,
    chroma: Option<Vec<f64>>,
}

impl Frame {
    pub fn new(height: usize, width: usize, luma: Vec<f64>) -> Result<Self> {
        if luma.len() != height * width {
            return Err(Error::shape(format!(
                "luminance has {} samples, expected {height}x{width}",
                luma.len()
            )));
        }
        Ok(Self {
            height,
            width,
            luma,
            chroma: None,
        })
    }

    /// Frame with planar chroma `[cb..., cr...]`.
    pub fn with_chroma(
        height: usize,
        width: usize,
        luma: Vec<f64>,
        chroma: Vec<f64>,
    ) -> Result<Self> {
        let mut f = Self::new(height, width, luma)?;
        if chroma.len() != 2 * height * width {
            return Err(Error::shape("chroma planes do not match luminance"));
        }
        f.chroma = Some(chroma);
        Ok(f)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            luma: vec![value; height * width],
            chroma: None,
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut luma = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                luma.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            luma,
            chroma: None,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn luma(&self) -> &[f64] {
        &self.luma
    }

    pub fn luma_mut(&mut self) -> &mut [f64] {
        &mut self.luma
    }

    pub fn chroma(&self) -> Option<&[f64]> {
        self.chroma.as_deref()
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.luma[y * self.width + x]
    }

    pub fn luma_only(&self) -> Frame {
        Frame {
            chroma: None,
            ..self.clone()
        }
    }

    /// Checks that every sample is finite and inside [0,1].
    pub fn validate(&self) -> Result<()> {
        let planes = self.luma.iter().chain(self.chroma.iter().flatten());
        for &v in planes {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange(format!("sample {v} outside [0,1]")));
            }
        }
        Ok(())
    }

    /// Crops a `w x h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Frame> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h} at ({x},{y}) exceeds {}x{} frame",
                self.width, self.height
            )));
        }
        let crop_plane = |plane: &[f64]| -> Vec<f64> {
            (y..y + h)
                .flat_map(|row| plane[row * self.width + x..row * self.width + x + w].iter().copied())
                .collect()
        };
        let chroma = self.chroma.as_ref().map(|c| {
            let n = self.height * self.width;
            let mut out = crop_plane(&c[..n]);
            out.extend(crop_plane(&c[n..]));
            out
        });
        Ok(Frame {
            height: h,
            width: w,
            luma: crop_plane(&self.luma),
            chroma,
        })
    }

    /// Luminance mapped from studio-swing storage to the [0,1] network range.
    pub fn network_luma(&self) -> Vec<f64> {
        self.luma.iter().map(|&y| luma_to_network(y)).collect()
    }

    /// Builds a frame from network-range luminance.
    pub fn from_network(height: usize, width: usize, values: &[f64]) -> Result<Frame> {
        Frame::new(height, width, values.iter().map(|&v| luma_from_network(v)).collect())
    }

    /// Replaces the chroma planes.
    pub fn set_chroma(&mut self, chroma: Option<Vec<f64>>) -> Result<()> {
        if let Some(c) = &chroma {
            if c.len() != 2 * self.height * self.width {
                return Err(Error::shape("chroma planes do not match luminance"));
            }
        }
        self.chroma = chroma;
        Ok(())
    }
}

pub fn luma_to_network(y: f64) -> f64 {
    (y - Y_OFFSET) / Y_SPAN
}

pub fn luma_from_network(v: f64) -> f64 {
    v * Y_SPAN + Y_OFFSET
}

/// BT.601 studio-swing conversion of one RGB triple to (Y, Cb, Cr).
pub fn rgb_to_ycbcr(rgb: [f64; 3]) -> [f64; 3] {
    let m = &RGB_TO_YCBCR;
    let dot = |row: &[f64; 3]| row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
    [Y_OFFSET + dot(&m[0]), C_OFFSET + dot(&m[1]), C_OFFSET + dot(&m[2])]
}

/// Inverse of [`rgb_to_ycbcr`]; the result is not clamped.
pub fn ycbcr_to_rgb(ycc: [f64; 3]) -> [f64; 3] {
    let inv = invert3(&RGB_TO_YCBCR);
    let d = [ycc[0] - Y_OFFSET, ycc[1] - C_OFFSET, ycc[2] - C_OFFSET];
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(inv.iter()) {
        *o = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
    }
    out
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

/// Converts an interleaved `H x W x 3` RGB image into a frame with chroma.
pub fn rgb_to_luma(height: usize, width: usize, rgb: &[f64]) -> Result<Frame> {
    if rgb.len() != height * width * 3 {
        return Err(Error::shape(format!(
            "rgb buffer has {} samples, expected {height}x{width}x3",
            rgb.len()
        )));
    }
    if let Some(v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("rgb sample {v} outside [0,1]")));
    }
    let n = height * width;
    let mut luma = Vec::with_capacity(n);
    let mut chroma = vec![0.0; 2 * n];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        let [y, cb, cr] = rgb_to_ycbcr([px[0], px[1], px[2]]);
        luma.push(y);
        chroma[i] = cb;
        chroma[n + i] = cr;
    }
    Frame::with_chroma(height, width, luma, chroma)
}

/// Luminance of a gray level, identical to `rgb_to_luma` on `(g, g, g)`.
pub fn gray_to_luma(g: f64) -> f64 {
    rgb_to_ycbcr([g, g, g])[0]
}

/// Filename template with a single zero-padded index, e.g. `%08d.png`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTemplate {
    prefix: String,
    digits: usize,
    suffix: String,
}

impl Default for FrameTemplate {
    fn default() -> Self {
        Self::parse("%08d.png").expect("valid default template")
    }
}

impl FrameTemplate {
    pub fn parse(template: &str) -> Result<Self> {
        let start = template
            .find('%')
            .ok_or_else(|| Error::invalid(format!("template {template:?} has no %0Nd field")))?;
        let rest = &template[start + 1..];
        let end = rest
            .find('d')
            .ok_or_else(|| Error::invalid(format!("template {template:?} has no %0Nd field")))?;
        let width = &rest[..end];
        let digits = if width.is_empty() {
            0
        } else {
            width
                .trim_start_matches('0')
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad index width in {template:?}")))?
        };
        Ok(Self {
            prefix: template[..start].to_string(),
            digits,
            suffix: rest[end + 1..].to_string(),
        })
    }

    pub fn format(&self, index: usize) -> String {
        format!("{}{:0width$}{}", self.prefix, index, self.suffix, width = self.digits)
    }

    /// Index encoded in `name`, if it matches the template.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let mid = name.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        if mid.is_empty() || !mid.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        mid.parse().ok()
    }
}

/// Lists frame files in temporal order.
///
/// With a template, only matching names are kept and ordered by index;
/// without one, every `.png` is taken in lexical order.
pub fn list_frames(dir: &Path, template: Option<&FrameTemplate>) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::file(dir, "directory not found"));
    }
    let mut entries: Vec<(usize, String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            continue;
        };
        match template {
            Some(t) => {
                if let Some(idx) = t.index_of(&name) {
                    entries.push((idx, name, path));
                }
            }
            None => {
                if name.to_ascii_lowercase().ends_with(".png") {
                    entries.push((0, name, path));
                }
            }
        }
    }
    entries.sort();
    if entries.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    Ok(entries.into_iter().map(|(_, _, p)| p).collect())
}

/// Reads one 8-bit PNG (gray or RGB) into a frame.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb: Vec<f64> = img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect();
        rgb_to_luma(h, w, &rgb)
    } else {
        let luma = img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| gray_to_luma(v as f64 / 255.0))
            .collect();
        Frame::new(h, w, luma)
    }
}

/// Loads an ordered sequence of equally sized frames.
pub fn load_sequence(dir: &Path, template: Option<&FrameTemplate>) -> Result<Vec<Frame>> {
    let paths = list_frames(dir, template)?;
    let frames: Vec<Frame> = paths
        .par_iter()
        .map(|p| read_frame(p))
        .collect::<Result<_>>()?;
    let dims = frames[0].dims();
    for (f, p) in frames.iter().zip(&paths).skip(1) {
        if f.dims() != dims {
            return Err(Error::file(
                p,
                format!(
                    "dimension mismatch: {}x{} vs {}x{} of the first frame",
                    f.width, f.height, dims.1, dims.0
                ),
            ));
        }
    }
    Ok(frames)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a frame as 8-bit PNG: RGB when chroma is present, gray otherwise.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let (w, h) = (frame.width as u32, frame.height as u32);
    let result = match &frame.chroma {
        Some(c) => {
            let n = frame.height * frame.width;
            let mut buf = Vec::with_capacity(3 * n);
            for i in 0..n {
                let rgb = ycbcr_to_rgb([frame.luma[i], c[i], c[n + i]]);
                buf.extend(rgb.iter().map(|&v| to_u8(v)));
            }
            image::RgbImage::from_raw(w, h, buf)
                .expect("buffer sized to image")
                .save(path)
        }
        None => {
            let buf = frame.luma.iter().map(|&y| to_u8(luma_to_network(y))).collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("buffer sized to image")
                .save(path)
        }
    };
    result.map_err(|e| Error::file(path, e))
}

/// Ordered temporal window of `2N+1` frames centred on index `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClip {
    frames: Vec<Frame>,
    radius: usize,
}

impl FrameClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() || frames.len() % 2 == 0 {
            return Err(Error::invalid(format!(
                "clip length {} is not of the form 2N+1",
                frames.len()
            )));
        }
        let dims = frames[0].dims();
        if frames.iter().any(|f| f.dims() != dims) {
            return Err(Error::shape("clip frames differ in size"));
        }
        let radius = frames.len() / 2;
        Ok(Self { frames, radius })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn center_index(&self) -> usize {
        self.radius
    }

    pub fn center(&self) -> &Frame {
        &self.frames[self.radius]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Non-central frame indices in draft-cube order: `-N..-1, +1..+N`.
    pub fn neighbor_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.frames.len()).filter(move |&i| i != self.radius)
    }

    fn map(&self, f: impl Fn(&Frame) -> Result<Frame>) -> Result<FrameClip> {
        Ok(FrameClip {
            frames: self.frames.iter().map(f).collect::<Result<_>>()?,
            radius: self.radius,
        })
    }
}

/// One training example: an LR patch clip and the matching HR patch clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub lr: FrameClip,
    pub hr: FrameClip,
    /// LR top-left corner `(x, y)` the patch was cut from.
    pub offset: (usize, usize),
}

impl TrainingSample {
    pub fn hr_center(&self) -> &Frame {
        self.hr.center()
    }
}

/// Crops the LR patch at `offset` and the co-located HR patch at `s * offset`.
pub fn crop_patch_pair(
    lr: &FrameClip,
    hr: &FrameClip,
    patch: usize,
    scale: usize,
    offset: (usize, usize),
) -> Result<TrainingSample> {
    let (lh, lw) = lr.dims();
    let (hh, hw) = hr.dims();
    if hh != lh * scale || hw != lw * scale || hr.len() != lr.len() {
        return Err(Error::shape(format!(
            "HR clip {hw}x{hh} is not {scale}x the LR clip {lw}x{lh}"
        )));
    }
    if patch == 0 || patch > lh || patch > lw {
        return Err(Error::invalid(format!(
            "patch {patch} larger than {lw}x{lh} frame"
        )));
    }
    let (x, y) = offset;
    let hp = patch * scale;
    Ok(TrainingSample {
        lr: lr.map(|f| f.crop(x, y, patch, patch).map(|c| c.luma_only()))?,
        hr: hr.map(|f| {
            f.crop(x * scale, y * scale, hp, hp).map(|c| c.luma_only())
        })?,
        offset,
    })
}

/// Draws a patch offset uniformly over all valid positions and crops it.
pub fn sample_patch_pair<R: Rng + ?Sized>(
    lr: &FrameClip,
    hr: &FrameClip,
    patch: usize,
    scale: usize,
    rng: &mut R,
) -> Result<TrainingSample> {
    let (lh, lw) = lr.dims();
    if patch == 0 || patch > lh || patch > lw {
        return Err(Error::invalid(format!(
            "patch {patch} larger than {lw}x{lh} frame"
        )));
    }
    let x = rng.gen_range(0..=lw - patch);
    let y = rng.gen_range(0..=lh - patch);
    crop_patch_pair(lr, hr, patch, scale, (x, y))
}

/// The eight symmetries of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    /// Clockwise quarter turn: `(y, x) -> (x, H-1-y)`.
    Rot90,
    Rot180,
    Rot270,
    FlipHorizontal,
    FlipVertical,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipHorizontal,
        Dihedral::FlipVertical,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    pub fn inverse(self) -> Self {
        match self {
            Dihedral::Rot90 => Dihedral::Rot270,
            Dihedral::Rot270 => Dihedral::Rot90,
            other => other,
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(
            self,
            Dihedral::Rot90 | Dihedral::Rot270 | Dihedral::Transpose | Dihedral::AntiTranspose
        )
    }

    /// Output dimensions for an `h x w` input.
    pub fn output_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.swaps_axes() {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Where input pixel `(y, x)` of an `h x w` image lands.
    pub fn map_point(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Dihedral::Identity => (y, x),
            Dihedral::Rot90 => (x, h - 1 - y),
            Dihedral::Rot180 => (h - 1 - y, w - 1 - x),
            Dihedral::Rot270 => (w - 1 - x, y),
            Dihedral::FlipHorizontal => (y, w - 1 - x),
            Dihedral::FlipVertical => (h - 1 - y, x),
            Dihedral::Transpose => (x, y),
            Dihedral::AntiTranspose => (w - 1 - x, h - 1 - y),
        }
    }

    pub fn apply_plane(self, plane: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (_, ow) = self.output_dims(h, w);
        let mut out = vec![0.0; plane.len()];
        for y in 0..h {
            for x in 0..w {
                let (oy, ox) = self.map_point(y, x, h, w);
                out[oy * ow + ox] = plane[y * w + x];
            }
        }
        out
    }

    pub fn apply(self, frame: &Frame) -> Frame {
        let (h, w) = frame.dims();
        let (oh, ow) = self.output_dims(h, w);
        let chroma = frame.chroma.as_ref().map(|c| {
            let n = h * w;
            let mut out = self.apply_plane(&c[..n], h, w);
            out.extend(self.apply_plane(&c[n..], h, w));
            out
        });
        Frame {
            height: oh,
            width: ow,
            luma: self.apply_plane(&frame.luma, h, w),
            chroma,
        }
    }

    pub fn apply_clip(self, clip: &FrameClip) -> FrameClip {
        FrameClip {
            frames: clip.frames.iter().map(|f| self.apply(f)).collect(),
            radius: clip.radius,
        }
    }
}

/// Applies the same symmetry to every LR and HR frame of a sample.
pub fn augment(sample: &TrainingSample, choice: Dihedral) -> TrainingSample {
    TrainingSample {
        lr: choice.apply_clip(&sample.lr),
        hr: choice.apply_clip(&sample.hr),
        offset: sample.offset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |y, x| ((y * w + x) as f64) / ((h * w) as f64))
    }

    #[test]
    fn white_and_black_luma() {
        let white = rgb_to_luma(1, 1, &[1.0, 1.0, 1.0]).unwrap();
        assert!((white.at(0, 0) - 235.0 / 255.0).abs() < 1e-12);
        let black = rgb_to_luma(1, 1, &[0.0, 0.0, 0.0]).unwrap();
        assert!((black.at(0, 0) - 16.0 / 255.0).abs() < 1e-15);
        // chroma of neutral colours sits at the midpoint
        assert!((white.chroma().unwrap()[0] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn luma_is_monotone_in_gray() {
        let mut prev = f64::NEG_INFINITY;
        for g in 0..=255 {
            let y = gray_to_luma(g as f64 / 255.0);
            assert!(y > prev);
            prev = y;
        }
    }

    #[test]
    fn ycbcr_round_trip() {
        let rgb = [0.2, 0.7, 0.4];
        let back = ycbcr_to_rgb(rgb_to_ycbcr(rgb));
        for (a, b) in rgb.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rgb_out_of_range_rejected() {
        assert!(matches!(
            rgb_to_luma(1, 1, &[1.2, 0.0, 0.0]),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn template_parse_and_match() {
        let t = FrameTemplate::parse("frame_%04d.png").unwrap();
        assert_eq!(t.format(7), "frame_0007.png");
        assert_eq!(t.index_of("frame_0031.png"), Some(31));
        assert_eq!(t.index_of("frame_x031.png"), None);
        assert_eq!(FrameTemplate::default().format(3), "00000003.png");
    }

    #[test]
    fn patch_offsets_scale_to_hr() {
        let lr = FrameClip::new(vec![ramp(40, 40); 3]).unwrap();
        let hr = FrameClip::new(vec![ramp(160, 160); 3]).unwrap();
        let s = crop_patch_pair(&lr, &hr, 32, 4, (3, 5)).unwrap();
        assert_eq!(s.hr_center().dims(), (128, 128));
        assert_eq!(s.hr_center().at(0, 0), hr.center().at(20, 12));
        assert_eq!(s.lr.center().at(0, 0), lr.center().at(5, 3));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let lr = FrameClip::new(vec![ramp(40, 48); 3]).unwrap();
        let hr = FrameClip::new(vec![ramp(80, 96); 3]).unwrap();
        let a = sample_patch_pair(&lr, &hr, 16, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_patch_pair(&lr, &hr, 16, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_patch_rejected() {
        let lr = FrameClip::new(vec![ramp(32, 32)]).unwrap();
        let hr = FrameClip::new(vec![ramp(64, 64)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_patch_pair(&lr, &hr, 64, 2, &mut rng).is_err());
    }

    #[test]
    fn rot90_index_map() {
        let (h, w) = (3, 5);
        let f = ramp(h, w);
        let r = Dihedral::Rot90.apply(&f);
        assert_eq!(r.dims(), (w, h));
        for y in 0..h {
            for x in 0..w {
                assert_eq!(r.at(x, h - 1 - y), f.at(y, x));
            }
        }
    }

    #[test]
    fn dihedral_inverse_restores_bit_exact() {
        let f = ramp(4, 7);
        for g in Dihedral::ALL {
            assert_eq!(g.inverse().apply(&g.apply(&f)), f, "{g:?}");
        }
        let flipped = Dihedral::FlipHorizontal.apply(&f);
        assert_eq!(Dihedral::FlipHorizontal.apply(&flipped), f);
        assert_eq!(Dihedral::Identity.apply(&f), f);
    }

    #[test]
    fn clip_requires_odd_length() {
        assert!(FrameClip::new(vec![ramp(2, 2); 2]).is_err());
        let c = FrameClip::new(vec![ramp(2, 2); 5]).unwrap();
        assert_eq!(c.center_index(), 2);
        assert_eq!(c.neighbor_indices().collect::<Vec<_>>(), vec![0, 1, 3, 4]);
    }
}
