//! Flow-field algebra: backward warping, inter-level rescaling, folding of HR
//! flows into LR channel cubes, draft extraction and total variation.
//!
//! Flow vectors `(u, v)` are horizontal and vertical displacements in pixels
//! of the grid they are defined on. Warping is backward:
//! `out(p) = source(p + flow(p))`, sampled bilinearly with coordinates clamped
//! to the image rectangle.

use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::nn::ops::{pixel_shuffle, pixel_unshuffle, upsample_bilinear, upsample_bilinear_backward};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Pyramid level a flow field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowLevel {
    /// Half the LR resolution.
    HalfLr,
    Lr,
    Hr,
}

impl FlowLevel {
    fn finer(self) -> FlowLevel {
        match self {
            FlowLevel::HalfLr => FlowLevel::Lr,
            _ => FlowLevel::Hr,
        }
    }
}

/// Dense 2-vector field stored as planar `[u..., v...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub level: FlowLevel,
    field: Tensor<f64>,
}

impl FlowField {
    pub fn zeros(level: FlowLevel, height: usize, width: usize) -> Self {
        Self {
            level,
            field: Tensor::zeros(2, height, width),
        }
    }

    pub fn constant(level: FlowLevel, height: usize, width: usize, u: f64, v: f64) -> Self {
        Self::from_fn(level, height, width, |_, _| (u, v))
    }

    pub fn from_fn(
        level: FlowLevel,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut field = Tensor::zeros(2, height, width);
        let n = height * width;
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                field.data[y * width + x] = u;
                field.data[n + y * width + x] = v;
            }
        }
        Self { level, field }
    }

    pub fn from_tensor(level: FlowLevel, field: Tensor<f64>) -> Result<Self> {
        if field.channels != 2 {
            return Err(Error::shape(format!(
                "flow needs 2 channels, got {}",
                field.channels
            )));
        }
        Ok(Self { level, field })
    }

    pub fn height(&self) -> usize {
        self.field.height
    }

    pub fn width(&self) -> usize {
        self.field.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.field.height, self.field.width)
    }

    pub fn u(&self) -> &[f64] {
        self.field.plane(0)
    }

    pub fn v(&self) -> &[f64] {
        self.field.plane(1)
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width() + x;
        (self.u()[i], self.v()[i])
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.field
    }

    pub fn into_tensor(self) -> Tensor<f64> {
        self.field
    }
}

/// HR flow folded onto the LR grid: `2 s^2` channels, LR-pixel magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCube {
    pub scale: usize,
    cube: Tensor<f64>,
}

impl FlowCube {
    pub fn new(scale: usize, cube: Tensor<f64>) -> Result<Self> {
        if scale == 0 || cube.channels != 2 * scale * scale {
            return Err(Error::shape(format!(
                "flow cube has {} channels, expected 2*{scale}^2",
                cube.channels
            )));
        }
        Ok(Self { scale, cube })
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.cube
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.cube.height, self.cube.width)
    }

    /// Cube channel holding component `k` (0 = u, 1 = v) of sub-grid `(a, b)`.
    pub fn channel_index(scale: usize, a: usize, b: usize, k: usize) -> usize {
        2 * (a * scale + b) + k
    }
}

/// `s^2` warped copies of one LR frame, ordered by sub-grid `(a, b)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftSet {
    drafts: Tensor<f64>,
}

impl DraftSet {
    pub fn len(&self) -> usize {
        self.drafts.channels
    }

    pub fn is_empty(&self) -> bool {
        self.drafts.channels == 0
    }

    pub fn draft(&self, i: usize) -> &[f64] {
        self.drafts.plane(i)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.drafts.height, self.drafts.width)
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.drafts
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    inside_x: bool,
    inside_y: bool,
}

#[inline]
fn sample_point(px: f64, py: f64, h: usize, w: usize) -> Sample {
    let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
    let inside_x = (0.0..=wm).contains(&px);
    let inside_y = (0.0..=hm).contains(&py);
    let cx = px.clamp(0.0, wm);
    let cy = py.clamp(0.0, hm);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    Sample {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        fx: cx - x0 as f64,
        fy: cy - y0 as f64,
        inside_x,
        inside_y,
    }
}

/// Backward bilinear warp of one plane by planar flow components `u`, `v`.
pub fn warp_plane<T: Scalar>(source: &[T], u: &[T], v: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let s = sample_point(x as f64 + u[i].as_f64(), y as f64 + v[i].as_f64(), h, w);
            let (fx, fy) = (T::from_f64_lossy(s.fx), T::from_f64_lossy(s.fy));
            let top = source[s.y0 * w + s.x0] * (T::one() - fx) + source[s.y0 * w + s.x1] * fx;
            let bot = source[s.y1 * w + s.x0] * (T::one() - fx) + source[s.y1 * w + s.x1] * fx;
            out[i] = top * (T::one() - fy) + bot * fy;
        }
    }
    out
}

/// Gradients of [`warp_plane`]: returns `(d_u, d_v, d_source)`; the source
/// gradient is only computed when requested.
#[allow(clippy::type_complexity)]
pub fn warp_plane_backward<T: Scalar>(
    source: &[T],
    u: &[T],
    v: &[T],
    h: usize,
    w: usize,
    grad: &[T],
    need_source: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let n = h * w;
    let mut du = vec![T::zero(); n];
    let mut dv = vec![T::zero(); n];
    let mut dsrc = need_source.then(|| vec![T::zero(); n]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let g = grad[i];
            if g == T::zero() {
                continue;
            }
            let s = sample_point(x as f64 + u[i].as_f64(), y as f64 + v[i].as_f64(), h, w);
            let (fx, fy) = (T::from_f64_lossy(s.fx), T::from_f64_lossy(s.fy));
            let p00 = source[s.y0 * w + s.x0];
            let p01 = source[s.y0 * w + s.x1];
            let p10 = source[s.y1 * w + s.x0];
            let p11 = source[s.y1 * w + s.x1];
            if s.inside_x {
                du[i] = g * ((T::one() - fy) * (p01 - p00) + fy * (p11 - p10));
            }
            if s.inside_y {
                dv[i] = g * ((T::one() - fx) * (p10 - p00) + fx * (p11 - p01));
            }
            if let Some(d) = dsrc.as_mut() {
                d[s.y0 * w + s.x0] += g * (T::one() - fy) * (T::one() - fx);
                d[s.y0 * w + s.x1] += g * (T::one() - fy) * fx;
                d[s.y1 * w + s.x0] += g * fy * (T::one() - fx);
                d[s.y1 * w + s.x1] += g * fy * fx;
            }
        }
    }
    (du, dv, dsrc)
}

/// Warps `source` with `flow`: `out(p) = source(p + flow(p))`.
pub fn warp(source: &Frame, flow: &FlowField) -> Result<Frame> {
    if source.dims() != flow.dims() {
        return Err(Error::shape(format!(
            "frame {:?} and flow {:?} differ in size",
            source.dims(),
            flow.dims()
        )));
    }
    let (h, w) = source.dims();
    Frame::new(h, w, warp_plane(source.luma(), flow.u(), flow.v(), h, w))
}

/// Bilinear flow upsampling by `factor` with magnitudes multiplied by `factor`.
pub fn upscale_flow_tensor<T: Scalar>(flow: &Tensor<T>, factor: usize) -> Tensor<T> {
    let mut up = upsample_bilinear(flow, factor);
    up.scale(T::from_usize(factor).expect("small factor"));
    up
}

pub fn upscale_flow_tensor_backward<T: Scalar>(grad: &Tensor<T>, factor: usize) -> Tensor<T> {
    let mut d = upsample_bilinear_backward(grad, factor);
    d.scale(T::from_usize(factor).expect("small factor"));
    d
}

/// Doubles (or in general multiplies by `factor`) resolution and magnitude.
pub fn upscale_flow(flow: &FlowField, factor: usize) -> FlowField {
    FlowField {
        level: flow.level.finer(),
        field: upscale_flow_tensor(&flow.field, factor),
    }
}

/// Folds an HR flow tensor into `2 s^2` LR channels, dividing magnitudes by `s`.
pub fn space_to_depth_tensor<T: Scalar>(flow: &Tensor<T>, s: usize) -> Tensor<T> {
    let mut cube = pixel_unshuffle(flow, s);
    let k = T::from_usize(s).expect("small factor");
    cube.data.iter_mut().for_each(|v| *v /= k);
    cube
}

/// Adjoint of [`space_to_depth_tensor`].
pub fn space_to_depth_tensor_backward<T: Scalar>(grad: &Tensor<T>, s: usize) -> Tensor<T> {
    let mut d = pixel_shuffle(grad, s);
    let k = T::from_usize(s).expect("small factor");
    d.data.iter_mut().for_each(|v| *v /= k);
    d
}

pub fn space_to_depth(flow: &FlowField, s: usize) -> Result<FlowCube> {
    let (h, w) = flow.dims();
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::shape(format!(
            "{w}x{h} flow is not divisible by scale {s}"
        )));
    }
    FlowCube::new(s, space_to_depth_tensor(&flow.field, s))
}

/// Exact inverse of [`space_to_depth`], magnitudes multiplied back by `s`.
pub fn depth_to_space(cube: &FlowCube) -> FlowField {
    let s = cube.scale;
    let mut field = pixel_shuffle(&cube.cube, s);
    field.scale(s as f64);
    FlowField {
        level: FlowLevel::Hr,
        field,
    }
}

/// Warps `source` once per sub-grid flow slice of `cube` (`2 s^2` channels).
pub fn extract_drafts_tensor<T: Scalar>(source: &[T], cube: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (cube.height, cube.width);
    let count = cube.channels / 2;
    let mut out = Tensor::zeros(count, h, w);
    for j in 0..count {
        let warped = warp_plane(source, cube.plane(2 * j), cube.plane(2 * j + 1), h, w);
        out.plane_mut(j).copy_from_slice(&warped);
    }
    out
}

/// Gradient of [`extract_drafts_tensor`] with respect to the cube.
pub fn extract_drafts_tensor_backward<T: Scalar>(
    source: &[T],
    cube: &Tensor<T>,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (cube.height, cube.width);
    let mut dcube = Tensor::zeros(cube.channels, h, w);
    for j in 0..cube.channels / 2 {
        let (du, dv, _) = warp_plane_backward(
            source,
            cube.plane(2 * j),
            cube.plane(2 * j + 1),
            h,
            w,
            grad.plane(j),
            false,
        );
        dcube.plane_mut(2 * j).copy_from_slice(&du);
        dcube.plane_mut(2 * j + 1).copy_from_slice(&dv);
    }
    dcube
}

pub fn extract_drafts(source: &Frame, cube: &FlowCube) -> Result<DraftSet> {
    if source.dims() != cube.dims() {
        return Err(Error::shape(format!(
            "frame {:?} and flow cube {:?} differ in size",
            source.dims(),
            cube.dims()
        )));
    }
    Ok(DraftSet {
        drafts: extract_drafts_tensor(source.luma(), &cube.cube),
    })
}

/// Mean over pixels and components of `|dF/dx| + |dF/dy|` (forward
/// differences, zero past the last row/column) and its gradient.
pub fn total_variation_tensor<T: Scalar>(flow: &Tensor<T>) -> (T, Tensor<T>) {
    let (h, w) = (flow.height, flow.width);
    let count = T::from_usize(flow.data.len()).expect("size fits");
    let mut total = T::zero();
    let mut grad = Tensor::zeros(flow.channels, h, w);
    for c in 0..flow.channels {
        let f = flow.plane(c);
        let g = grad.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = f[i + 1] - f[i];
                    total += d.abs();
                    let sg = sign(d);
                    g[i + 1] += sg;
                    g[i] -= sg;
                }
                if y + 1 < h {
                    let d = f[i + w] - f[i];
                    total += d.abs();
                    let sg = sign(d);
                    g[i + w] += sg;
                    g[i] -= sg;
                }
            }
        }
    }
    grad.scale(T::one() / count);
    (total / count, grad)
}

/// Sign with `sign(0) = 0`.
#[inline]
pub(crate) fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn total_variation(flow: &FlowField) -> f64 {
    total_variation_tensor(&flow.field).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        let data = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Frame::new(h, w, data).unwrap()
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = random_frame(&mut rng, 5, 7);
        let out = warp(&f, &FlowField::zeros(FlowLevel::Lr, 5, 7)).unwrap();
        assert_eq!(out.luma(), f.luma());
    }

    #[test]
    fn unit_shift_repeats_last_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 4, 6);
        let out = warp(&f, &FlowField::constant(FlowLevel::Lr, 4, 6, 1.0, 0.0)).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.at(y, x), f.at(y, x + 1));
            }
            assert_eq!(out.at(y, 5), f.at(y, 5));
        }
    }

    #[test]
    fn half_pixel_shift_on_ramp() {
        let w = 8;
        let f = Frame::from_fn(3, w, |_, x| x as f64 / w as f64);
        let out = warp(&f, &FlowField::constant(FlowLevel::Lr, 3, w, 0.5, 0.0)).unwrap();
        for x in 0..w - 1 {
            let want = (f.at(1, x) + f.at(1, x + 1)) / 2.0;
            assert!((out.at(1, x) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_size_mismatch() {
        let f = Frame::filled(4, 4, 0.0);
        assert!(warp(&f, &FlowField::zeros(FlowLevel::Lr, 4, 5)).is_err());
    }

    #[test]
    fn upscale_doubles_constant_flow() {
        let f = upscale_flow(&FlowField::constant(FlowLevel::HalfLr, 3, 4, 1.0, 1.0), 2);
        assert_eq!(f.dims(), (6, 8));
        assert_eq!(f.level, FlowLevel::Lr);
        assert!(f.u().iter().chain(f.v()).all(|&v| v == 2.0));
        let z = upscale_flow(&FlowField::zeros(FlowLevel::HalfLr, 2, 2), 2);
        assert!(z.u().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upscale_linear_field() {
        let w = 6;
        let f = FlowField::from_fn(FlowLevel::HalfLr, 2, w, |_, x| (x as f64, 0.0));
        let up = upscale_flow(&f, 2);
        // interior samples (source coordinate within the last column)
        for x in 0..=2 * (w - 1) {
            let want = 2.0 * (x as f64 / 2.0);
            assert!((up.at(1, x).0 - want).abs() < 1e-10);
        }
    }

    #[test]
    fn space_to_depth_index_map() {
        let f = FlowField::from_fn(FlowLevel::Hr, 4, 4, |y, x| ((4 * y + x) as f64, 0.0));
        let cube = space_to_depth(&f, 2).unwrap();
        let c = FlowCube::channel_index(2, 0, 1, 0);
        assert_eq!(cube.tensor().plane(c)[0], 0.5);
        // (a=1, b=1, u) at LR (1, 0) -> HR (3, 1) = 13 / 2
        let c = FlowCube::channel_index(2, 1, 1, 0);
        assert_eq!(cube.tensor().plane(c)[2], 6.5);
        assert!(space_to_depth(&FlowField::zeros(FlowLevel::Hr, 5, 4), 2).is_err());
    }

    #[test]
    fn depth_to_space_hand_unrolled() {
        let data: Vec<f64> = (0..8 * 4).map(|v| v as f64).collect();
        let cube = FlowCube::new(2, Tensor::from_vec(8, 2, 2, data.clone()).unwrap()).unwrap();
        let f = depth_to_space(&cube);
        for y in 0..4 {
            for x in 0..4 {
                let (ly, a, lx, b) = (y / 2, y % 2, x / 2, x % 2);
                for k in 0..2 {
                    let c = 2 * (a * 2 + b) + k;
                    let want = 2.0 * data[c * 4 + ly * 2 + lx];
                    let got = if k == 0 { f.at(y, x).0 } else { f.at(y, x).1 };
                    assert_eq!(got, want);
                }
            }
        }
        assert!(FlowCube::new(2, Tensor::zeros(6, 2, 2)).is_err());
        let zero = depth_to_space(&FlowCube::new(3, Tensor::zeros(18, 2, 2)).unwrap());
        assert!(zero.u().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drafts_from_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_frame(&mut rng, 6, 6);
        for s in 2..=4 {
            let hr = FlowField::constant(FlowLevel::Hr, 6 * s, 6 * s, s as f64, 0.0);
            let drafts = extract_drafts(&src, &space_to_depth(&hr, s).unwrap()).unwrap();
            assert_eq!(drafts.len(), s * s);
            for j in 0..s * s {
                for y in 0..6 {
                    for x in 0..5 {
                        assert_eq!(drafts.draft(j)[y * 6 + x], src.at(y, x + 1));
                    }
                }
            }
        }
        let zero = FlowCube::new(2, Tensor::zeros(8, 2, 2)).unwrap();
        let tiny = random_frame(&mut rng, 2, 2);
        let d = extract_drafts(&tiny, &zero).unwrap();
        assert_eq!(d.dims(), (2, 2));
        assert!((0..4).all(|j| d.draft(j) == tiny.luma()));
    }

    #[test]
    fn total_variation_cases() {
        assert_eq!(total_variation(&FlowField::constant(FlowLevel::Lr, 4, 4, 2.0, -1.0)), 0.0);
        let ramp = FlowField::from_fn(FlowLevel::Lr, 4, 4, |_, x| (x as f64, 0.0));
        // brute force: 3 unit differences per row, 4 rows, over 2*16 entries
        let mut sum = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                let (u, _) = ramp.at(y, x);
                if x + 1 < 4 {
                    sum += (ramp.at(y, x + 1).0 - u).abs();
                }
                if y + 1 < 4 {
                    sum += (ramp.at(y + 1, x).0 - u).abs();
                }
            }
        }
        assert_eq!(total_variation(&ramp), sum / 32.0);
        assert_eq!(total_variation(&ramp), 12.0 / 32.0);
        let scaled = FlowField::from_fn(FlowLevel::Lr, 4, 4, |_, x| (-3.0 * x as f64, 0.0));
        assert!((total_variation(&scaled) - 3.0 * total_variation(&ramp)).abs() < 1e-15);
    }
}
