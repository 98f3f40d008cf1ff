//! Synthesis of low-resolution inputs from high-resolution frames.
//!
//! Two models are provided: bicubic downsampling with antialiasing (`BI`) and
//! Gaussian blur followed by decimation (`BD`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Frame;

/// Default blur width of the `BD` model, in HR pixels.
pub const DEFAULT_BD_SIGMA: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegradationModel {
    #[serde(rename = "BI", alias = "bi")]
    Bicubic,
    #[serde(rename = "BD", alias = "bd")]
    BlurDecimate,
}

impl FromStr for DegradationModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BI" => Ok(Self::Bicubic),
            "BD" => Ok(Self::BlurDecimate),
            _ => Err(Error::invalid(format!(
                "unknown degradation model {s:?} (expected BI or BD)"
            ))),
        }
    }
}

impl fmt::Display for DegradationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bicubic => "BI",
            Self::BlurDecimate => "BD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub model: DegradationModel,
    pub scale: usize,
    /// Gaussian standard deviation in HR pixels; `BD` only.
    pub sigma: f64,
    /// Truncation radius; `None` means `ceil(3 * sigma)`.
    pub kernel_radius: Option<usize>,
}

impl DegradationSpec {
    pub fn bicubic(scale: usize) -> Self {
        Self {
            model: DegradationModel::Bicubic,
            scale,
            sigma: DEFAULT_BD_SIGMA,
            kernel_radius: None,
        }
    }

    pub fn blur_decimate(scale: usize, sigma: Option<f64>) -> Self {
        Self {
            model: DegradationModel::BlurDecimate,
            scale,
            sigma: sigma.unwrap_or(DEFAULT_BD_SIGMA),
            kernel_radius: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::invalid(format!("scale {} must be >= 2", self.scale)));
        }
        if self.model == DegradationModel::BlurDecimate && !(self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma {} must be > 0", self.sigma)));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.kernel_radius
            .unwrap_or_else(|| (3.0 * self.sigma).ceil().max(1.0) as usize)
    }

    pub fn apply(&self, hr: &Frame) -> Result<Frame> {
        match self.model {
            DegradationModel::Bicubic => degrade_bi(hr, self.scale),
            DegradationModel::BlurDecimate => degrade_bd(hr, self),
        }
    }
}

/// Resampling ratio `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invalid("scale must be positive"));
        }
        Ok(Self { num, den })
    }

    pub fn up(factor: usize) -> Self {
        Self { num: factor, den: 1 }
    }

    pub fn down(factor: usize) -> Self {
        Self { num: 1, den: factor }
    }

    pub fn ratio(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Output length, rounded up as in the usual resize convention.
    pub fn output_len(self, len: usize) -> usize {
        (len * self.num).div_ceil(self.den)
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-sample source indices and normalised weights along one axis.
#[derive(Debug, Clone)]
struct Contributions {
    indices: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

fn contributions(in_len: usize, scale: Scale) -> Contributions {
    let out_len = scale.output_len(in_len);
    let s = scale.ratio();
    let antialias = s < 1.0;
    let (kscale, width) = if antialias { (s, 4.0 / s) } else { (1.0, 4.0) };
    let taps = width.ceil() as isize + 2;
    let mut indices = Vec::with_capacity(out_len);
    let mut weights = Vec::with_capacity(out_len);
    for i in 1..=out_len {
        // 1-based continuous source coordinate of output sample i
        let u = i as f64 / s + 0.5 * (1.0 - 1.0 / s);
        let left = (u - width / 2.0).floor() as isize;
        let mut idx = Vec::with_capacity(taps as usize);
        let mut wts = Vec::with_capacity(taps as usize);
        for t in 0..taps {
            let j = left + t;
            let w = kscale * cubic(kscale * (u - j as f64));
            if w != 0.0 {
                idx.push((j - 1).clamp(0, in_len as isize - 1) as usize);
                wts.push(w);
            }
        }
        let total: f64 = wts.iter().sum();
        wts.iter_mut().for_each(|w| *w /= total);
        indices.push(idx);
        weights.push(wts);
    }
    Contributions { indices, weights }
}

/// Separable bicubic resize of a single plane.
pub fn bicubic_resize_plane(
    plane: &[f64],
    height: usize,
    width: usize,
    scale: Scale,
) -> Result<(Vec<f64>, usize, usize)> {
    if height == 0 || width == 0 || plane.len() != height * width {
        return Err(Error::invalid("cannot resize an empty image"));
    }
    let out_w = scale.output_len(width);
    let out_h = scale.output_len(height);
    let cx = contributions(width, scale);
    let cy = contributions(height, scale);

    let mut rows = vec![0.0; height * out_w];
    for y in 0..height {
        let src = &plane[y * width..(y + 1) * width];
        for (x, (idx, wts)) in cx.indices.iter().zip(&cx.weights).enumerate() {
            rows[y * out_w + x] = idx.iter().zip(wts).map(|(&j, &w)| w * src[j]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, (idx, wts)) in cy.indices.iter().zip(&cy.weights).enumerate() {
        let dst = &mut out[y * out_w..(y + 1) * out_w];
        for (&j, &w) in idx.iter().zip(wts) {
            let src = &rows[j * out_w..(j + 1) * out_w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    Ok((out, out_h, out_w))
}

/// Bicubic resize of every plane of a frame.
pub fn bicubic_resize(frame: &Frame, scale: Scale) -> Result<Frame> {
    let (h, w) = frame.dims();
    let (luma, oh, ow) = bicubic_resize_plane(frame.luma(), h, w, scale)?;
    let mut out = Frame::new(oh, ow, luma)?;
    if let Some(c) = frame.chroma() {
        let n = h * w;
        let (mut cb, _, _) = bicubic_resize_plane(&c[..n], h, w, scale)?;
        let (cr, _, _) = bicubic_resize_plane(&c[n..], h, w, scale)?;
        cb.extend(cr);
        out.set_chroma(Some(cb))?;
    }
    Ok(out)
}

fn check_divisible(frame: &Frame, s: usize) -> Result<()> {
    let (h, w) = frame.dims();
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::shape(format!(
            "{w}x{h} frame is not divisible by scale {s}"
        )));
    }
    Ok(())
}

/// Bicubic (antialiased) downsampling by `s`.
pub fn degrade_bi(hr: &Frame, s: usize) -> Result<Frame> {
    check_divisible(hr, s)?;
    bicubic_resize(hr, Scale::down(s))
}

/// Normalised, truncated 1-D Gaussian taps for offsets `-r..=r`.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

fn blur_decimate_plane(plane: &[f64], h: usize, w: usize, taps: &[f64], s: usize) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let (oh, ow) = (h / s, w / s);
    // horizontal pass only on kept columns, vertical pass only on kept rows
    let mut cols = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            let x = (ox * s) as isize;
            cols[y * ow + ox] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| {
                    let xi = (x + t as isize - r).clamp(0, w as isize - 1) as usize;
                    k * plane[y * w + xi]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let y = (oy * s) as isize;
        for ox in 0..ow {
            out[oy * ow + ox] = taps
                .iter()
                .enumerate()
                .map(|(t, &k)| {
                    let yi = (y + t as isize - r).clamp(0, h as isize - 1) as usize;
                    k * cols[yi * ow + ox]
                })
                .sum();
        }
    }
    out
}

/// Gaussian blur, then keep pixels at indices `0, s, 2s, ...` on both axes.
pub fn degrade_bd(hr: &Frame, spec: &DegradationSpec) -> Result<Frame> {
    spec.validate()?;
    let s = spec.scale;
    check_divisible(hr, s)?;
    let taps = gaussian_taps(spec.sigma, spec.radius());
    let (h, w) = hr.dims();
    let luma = blur_decimate_plane(hr.luma(), h, w, &taps, s);
    let mut out = Frame::new(h / s, w / s, luma)?;
    if let Some(c) = hr.chroma() {
        let n = h * w;
        let mut cb = blur_decimate_plane(&c[..n], h, w, &taps, s);
        cb.extend(blur_decimate_plane(&c[n..], h, w, &taps, s));
        out.set_chroma(Some(cb))?;
    }
    Ok(out)
}
