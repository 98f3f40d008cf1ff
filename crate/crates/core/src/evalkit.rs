//! Quality metrics on luminance: PSNR, SSIM, flow end-point error and warp
//! residuals, plus per-sequence reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flow_ops::{warp, FlowField};
use crate::frames::Frame;

/// Frames dropped at each end of a sequence before aggregation.
pub const EXCLUDED_END_FRAMES: usize = 2;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Border removed on every side for scale `s`.
pub fn border_width(scale: usize) -> usize {
    6 + scale
}

/// Central luminance crop without the `6 + s` border.
pub fn crop_border(frame: &Frame, scale: usize) -> Result<Frame> {
    let b = border_width(scale);
    let (h, w) = frame.dims();
    if h <= 2 * b || w <= 2 * b {
        return Err(Error::shape(format!(
            "{w}x{h} frame is too small for a {b}-pixel border crop"
        )));
    }
    frame.crop(b, b, w - 2 * b, h - 2 * b).map(|f| f.luma_only())
}

fn same_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "frames differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.luma().len() as f64;
    Ok(a.luma().iter().zip(b.luma()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)` for unit peak; infinite for identical inputs.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable filtering with the SSIM window over fully covered positions.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            rows[y * ow + ox] = g.iter().zip(&line[ox..ox + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| g[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM over all window positions inside the frame.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!("{w}x{h} frame is smaller than the SSIM window")));
    }
    let g = gaussian_window();
    let (x, y) = (a.luma(), b.luma());
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let mxx = filter_valid(&prod(x, x), h, w, &g);
    let myy = filter_valid(&prod(y, y), h, w, &g);
    let mxy = filter_valid(&prod(x, y), h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n)
}

fn same_flow_dims(a: &FlowField, b: &FlowField) -> Result<()> {
    if a.dims() != b.dims() || a.level != b.level {
        return Err(Error::shape(format!(
            "flows differ: {:?} {:?} vs {:?} {:?}",
            a.level,
            a.dims(),
            b.level,
            b.dims()
        )));
    }
    Ok(())
}

/// Average end-point error.
pub fn epe(a: &FlowField, b: &FlowField) -> Result<f64> {
    same_flow_dims(a, b)?;
    let n = a.u().len() as f64;
    let total: f64 = (0..a.u().len())
        .map(|i| (a.u()[i] - b.u()[i]).hypot(a.v()[i] - b.v()[i]))
        .sum();
    Ok(total / n)
}

/// The flow with `border` pixels removed on every side.
pub fn crop_flow(flow: &FlowField, border: usize) -> Result<FlowField> {
    let (h, w) = flow.dims();
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::shape(format!("{w}x{h} flow is too small for a {border}-pixel crop")));
    }
    Ok(FlowField::from_fn(flow.level, h - 2 * border, w - 2 * border, |y, x| {
        flow.at(y + border, x + border)
    }))
}

/// RMSE between `warp(source, flow)` and `target`, skipping the outermost
/// pixel ring where clamped samples dominate.
pub fn warp_rmse(source: &Frame, target: &Frame, flow: &FlowField) -> Result<f64> {
    same_dims(source, target)?;
    if source.dims() != flow.dims() {
        return Err(Error::shape("flow and frames differ in size"));
    }
    let (h, w) = source.dims();
    if h < 3 || w < 3 {
        return Err(Error::shape("frames too small for warp RMSE"));
    }
    let warped = warp(source, flow)?;
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let d = warped.at(y, x) - target.at(y, x);
            sum += d * d;
        }
    }
    Ok((sum / ((h - 2) * (w - 2)) as f64).sqrt())
}

/// `|a - b|` scaled so the largest residual maps to full white.
pub fn error_map(a: &Frame, b: &Frame) -> Result<Frame> {
    same_dims(a, b)?;
    let r: Vec<f64> = a.luma().iter().zip(b.luma()).map(|(x, y)| (x - y).abs()).collect();
    let max = r.iter().cloned().fold(0.0, f64::max);
    let k = if max > 0.0 { 1.0 / max } else { 0.0 };
    let (h, w) = a.dims();
    Frame::from_network(h, w, &r.iter().map(|v| v * k).collect::<Vec<_>>())
}

/// Metrics of one evaluated frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr: f64,
    pub mse: f64,
    pub ssim: f64,
    pub epe: Option<f64>,
    pub warp_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scale: usize,
    pub border: usize,
    pub frames: Vec<FrameMetrics>,
    pub excluded: Vec<usize>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Decibels with `inf` for infinite values.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl EvalReport {
    /// Arithmetic mean of the per-frame PSNR values.
    pub fn mean_psnr(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.psnr)).unwrap_or(f64::NAN)
    }

    /// PSNR of the mean MSE over frames.
    pub fn aggregate_psnr(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.mse)).map_or(f64::NAN, psnr_from_mse)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.ssim)).unwrap_or(f64::NAN)
    }

    pub fn mean_epe(&self) -> Option<f64> {
        mean(self.frames.iter().filter_map(|f| f.epe))
    }

    pub fn mean_warp_rmse(&self) -> Option<f64> {
        mean(self.frames.iter().filter_map(|f| f.warp_rmse))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,psnr_db,ssim,epe,warp_rmse\n");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{}",
                f.index,
                format_db(f.psnr),
                f.ssim,
                format_opt(f.epe),
                format_opt(f.warp_rmse)
            );
        }
        let _ = writeln!(
            s,
            "mean,{},{:.6},{},{}",
            format_db(self.mean_psnr()),
            self.mean_ssim(),
            format_opt(self.mean_epe()),
            format_opt(self.mean_warp_rmse())
        );
        let _ = writeln!(s, "mse_aggregate,{},,,", format_db(self.aggregate_psnr()));
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6}  {:>9}  {:>7}  {:>8}  {:>9}", "frame", "PSNR(dB)", "SSIM", "EPE", "warp-RMSE");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{:>6}  {:>9}  {:>7.4}  {:>8}  {:>9}",
                f.index,
                format_db(f.psnr),
                f.ssim,
                format_opt(f.epe),
                format_opt(f.warp_rmse)
            );
        }
        let _ = writeln!(
            s,
            "mean PSNR {} dB (from mean MSE {} dB), mean SSIM {:.4}; border {} px; excluded frames {:?}",
            format_db(self.mean_psnr()),
            format_db(self.aggregate_psnr()),
            self.mean_ssim(),
            self.border,
            self.excluded
        );
        if let Some(e) = self.mean_epe() {
            let _ = writeln!(s, "mean EPE {e:.4} px");
        }
        if let Some(r) = self.mean_warp_rmse() {
            let _ = writeln!(s, "mean warp RMSE {r:.6}");
        }
        s
    }
}

/// Optional per-frame flow inputs: estimated flow, reference flow, and the
/// source/target frames for the warp residual.
#[derive(Debug, Clone, Default)]
pub struct FlowInputs<'a> {
    pub estimated: Option<&'a FlowField>,
    pub reference: Option<&'a FlowField>,
    pub source: Option<&'a Frame>,
    pub target: Option<&'a Frame>,
}

/// Evaluates a super-resolved sequence against ground truth, skipping the
/// first and last [`EXCLUDED_END_FRAMES`] frames. `flows`, when non-empty,
/// must have one entry per frame.
pub fn evaluate_sequence(sr: &[Frame], gt: &[Frame], scale: usize, flows: &[FlowInputs<'_>]) -> Result<EvalReport> {
    if sr.len() != gt.len() {
        return Err(Error::invalid(format!(
            "{} SR frames but {} ground-truth frames",
            sr.len(),
            gt.len()
        )));
    }
    if !flows.is_empty() && flows.len() != sr.len() {
        return Err(Error::invalid("flow inputs must cover every frame"));
    }
    let e = EXCLUDED_END_FRAMES;
    if sr.len() <= 2 * e {
        return Err(Error::invalid(format!(
            "{} frames leave nothing after excluding {e} at each end",
            sr.len()
        )));
    }
    let n = sr.len();
    let excluded: Vec<usize> = (0..e).chain(n - e..n).collect();
    let frames = (e..n - e)
        .map(|i| {
            let a = crop_border(&sr[i], scale)?;
            let b = crop_border(&gt[i], scale)?;
            let m = mse(&a, &b)?;
            let fl = flows.get(i).cloned().unwrap_or_default();
            let epe = match (fl.estimated, fl.reference) {
                (Some(x), Some(y)) => Some(epe(x, y)?),
                _ => None,
            };
            let warp_rmse = match (fl.source, fl.target, fl.estimated) {
                (Some(s), Some(t), Some(f)) => Some(warp_rmse(s, t, f)?),
                _ => None,
            };
            Ok(FrameMetrics {
                index: i,
                psnr: psnr_from_mse(m),
                mse: m,
                ssim: ssim(&a, &b)?,
                epe,
                warp_rmse,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        scale,
        border: border_width(scale),
        frames,
        excluded,
    })
}
