//! Parameter-free tensor operations and their adjoints.

use super::Tensor;
use crate::scalar::Scalar;

/// Leaky ReLU in place.
pub fn leaky_relu<T: Scalar>(x: &mut Tensor<T>, slope: T) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v *= slope;
        }
    }
}

/// Backpropagates through a leaky ReLU given its output (the sign of the
/// output equals the sign of the input for positive slopes).
pub fn leaky_relu_backward<T: Scalar>(output: &Tensor<T>, grad: &mut Tensor<T>, slope: T) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y < T::zero() {
            *g *= slope;
        }
    }
}

/// Interleaves `groups` equal channel groups: output channel `j * groups + g`
/// is input channel `g * (C / groups) + j`.
pub fn channel_shuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Tensor<T> {
    let per = x.channels / groups;
    let mut out = Tensor::zeros(x.channels, x.height, x.width);
    for g in 0..groups {
        for j in 0..per {
            out.plane_mut(j * groups + g).copy_from_slice(x.plane(g * per + j));
        }
    }
    out
}

pub fn channel_unshuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Tensor<T> {
    let per = x.channels / groups;
    let mut out = Tensor::zeros(x.channels, x.height, x.width);
    for g in 0..groups {
        for j in 0..per {
            out.plane_mut(g * per + j).copy_from_slice(x.plane(j * groups + g));
        }
    }
    out
}

/// Rearranges `C * s^2` channels at `h x w` into `C` channels at `sh x sw`.
///
/// Output `(k, s*y + a, s*x + b)` takes input channel `(a*s + b) * C + k`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let c = x.channels / (s * s);
    assert_eq!(c * s * s, x.channels, "channel count not divisible by s^2");
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (h * s, w * s);
    let mut out = Tensor::zeros(c, oh, ow);
    for a in 0..s {
        for b in 0..s {
            for k in 0..c {
                let src = x.plane((a * s + b) * c + k);
                let dst = out.plane_mut(k);
                for y in 0..h {
                    let row = &src[y * w..(y + 1) * w];
                    let base = (s * y + a) * ow + b;
                    for (xi, &v) in row.iter().enumerate() {
                        dst[base + s * xi] = v;
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let (oh, ow) = (x.height, x.width);
    assert!(oh % s == 0 && ow % s == 0, "spatial size not divisible by s");
    let (h, w, c) = (oh / s, ow / s, x.channels);
    let mut out = Tensor::zeros(c * s * s, h, w);
    for a in 0..s {
        for b in 0..s {
            for k in 0..c {
                let src = x.plane(k);
                let dst = out.plane_mut((a * s + b) * c + k);
                for y in 0..h {
                    let base = (s * y + a) * ow + b;
                    for xi in 0..w {
                        dst[y * w + xi] = src[base + s * xi];
                    }
                }
            }
        }
    }
    out
}

/// 2x2 average pooling (even spatial size required).
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height / 2, x.width / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let iw = x.width;
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xi in 0..w {
                let i = 2 * y * iw + 2 * xi;
                dst[y * w + xi] = (src[i] + src[i + 1] + src[i + iw] + src[i + iw + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(grad: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (grad.height, grad.width);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Tensor::zeros(grad.channels, 2 * h, 2 * w);
    let ow = 2 * w;
    for c in 0..grad.channels {
        let g = grad.plane(c).to_vec();
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xi in 0..w {
                let v = g[y * w + xi] * quarter;
                let i = 2 * y * ow + 2 * xi;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + ow] = v;
                dst[i + ow + 1] = v;
            }
        }
    }
    out
}

/// Bilinear sampling position: lower index, upper index and fraction.
#[inline]
fn taps(pos: f64, len: usize) -> (usize, usize, f64) {
    let p = pos.clamp(0.0, (len - 1) as f64);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, p - i0 as f64)
}

/// Bilinear upsampling by an integer factor, output sample `X` reading the
/// input at `X / factor` (clamped to the last sample).
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (h * factor, w * factor);
    let f = factor as f64;
    let ytaps: Vec<_> = (0..oh).map(|y| taps(y as f64 / f, h)).collect();
    let xtaps: Vec<_> = (0..ow).map(|xi| taps(xi as f64 / f, w)).collect();
    let mut out = Tensor::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for (y, &(y0, y1, fy)) in ytaps.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (xi, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[y * ow + xi] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample_bilinear_backward<T: Scalar>(grad: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (oh, ow) = (grad.height, grad.width);
    let (h, w) = (oh / factor, ow / factor);
    let f = factor as f64;
    let ytaps: Vec<_> = (0..oh).map(|y| taps(y as f64 / f, h)).collect();
    let xtaps: Vec<_> = (0..ow).map(|xi| taps(xi as f64 / f, w)).collect();
    let mut out = Tensor::zeros(grad.channels, h, w);
    for c in 0..grad.channels {
        let g = grad.plane(c);
        let dst = out.plane_mut(c);
        for (y, &(y0, y1, fy)) in ytaps.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (xi, &(x0, x1, fx)) in xtaps.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let v = g[y * ow + xi];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[y0 * w + x0] += top * (T::one() - fx);
                dst[y0 * w + x1] += top * fx;
                dst[y1 * w + x0] += bot * (T::one() - fx);
                dst[y1 * w + x1] += bot * fx;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn shuffle_four_channels_two_groups() {
        let x = seq(4, 1, 1);
        assert_eq!(channel_shuffle(&x, 2).data, vec![0.0, 2.0, 1.0, 3.0]);
        assert_eq!(channel_unshuffle(&channel_shuffle(&x, 2), 2), x);
    }

    #[test]
    fn pixel_shuffle_round_trip() {
        for s in 2..=4 {
            let x = seq(2 * s * s, 3, 2);
            let y = pixel_shuffle(&x, s);
            assert_eq!((y.channels, y.height, y.width), (2, 3 * s, 2 * s));
            assert_eq!(pixel_unshuffle(&y, s), x);
        }
    }

    #[test]
    fn upsample_adjoint() {
        let x = Tensor::from_vec(1, 3, 4, (0..12).map(|v| (v as f64).sin()).collect()).unwrap();
        let g = Tensor::from_vec(1, 6, 8, (0..48).map(|v| (v as f64 * 0.7).cos()).collect()).unwrap();
        let up = upsample_bilinear(&x, 2);
        let back = upsample_bilinear_backward(&g, 2);
        let lhs: f64 = up.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pool_adjoint() {
        let x = seq(2, 4, 6);
        let g = Tensor::from_vec(2, 2, 3, (0..12).map(|v| v as f64 * 0.1).collect()).unwrap();
        let lhs: f64 = avg_pool2(&x).data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&avg_pool2_backward(&g).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
