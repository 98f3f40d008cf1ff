use super::{join, Params, Tensor};
use crate::scalar::Scalar;

/// Dense 2-D convolution, stride 1, zero padding `kernel / 2`.
///
/// Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Saved forward state: the unfolded input (or the input itself for 1x1).
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    height: usize,
    width: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Tensor<T>) -> Vec<T> {
        let (h, w, k) = (x.height, x.width, self.kernel);
        if k == 1 {
            return x.data.clone();
        }
        let hw = h * w;
        let r = (k / 2) as isize;
        let mut cols = vec![T::zero(); self.patch_len() * hw];
        for c in 0..self.in_channels {
            let plane = x.plane(c);
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let row = ((c * k + ky) * k + kx) * hw;
                    let (x0, x1) = valid_range(w, dx);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst = &mut cols[row + y * w..row + (y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        dst[x0..x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize) -> Tensor<T> {
        let k = self.kernel;
        let mut out = Tensor::zeros(self.in_channels, h, w);
        if k == 1 {
            out.data.copy_from_slice(cols);
            return out;
        }
        let hw = h * w;
        let r = (k / 2) as isize;
        for c in 0..self.in_channels {
            let plane = out.plane_mut(c);
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let row = ((c * k + ky) * k + kx) * hw;
                    let (x0, x1) = valid_range(w, dx);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + y * w + x0..row + y * w + x1];
                        let sx0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let hw = x.plane_len();
        let cols = self.im2col(x);
        let kk = self.patch_len();
        let mut out = Tensor::zeros(self.out_channels, x.height, x.width);
        T::gemm(
            self.out_channels,
            kk,
            hw,
            &self.weight,
            (kk as isize, 1),
            &cols,
            (hw as isize, 1),
            T::zero(),
            &mut out.data,
        );
        for (o, &b) in self.bias.iter().enumerate() {
            if b != T::zero() {
                out.plane_mut(o).iter_mut().for_each(|v| *v += b);
            }
        }
        (
            out,
            ConvCache {
                cols,
                height: x.height,
                width: x.width,
            },
        )
    }

    /// Accumulates weight/bias gradients into `grads`; returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut Conv2d<T>,
        need_input: bool,
    ) -> Option<Tensor<T>> {
        let hw = cache.height * cache.width;
        let kk = self.patch_len();
        debug_assert_eq!(grad_out.data.len(), self.out_channels * hw);
        T::gemm(
            self.out_channels,
            hw,
            kk,
            &grad_out.data,
            (hw as isize, 1),
            &cache.cols,
            (1, hw as isize),
            T::one(),
            &mut grads.weight,
        );
        for (o, gb) in grads.bias.iter_mut().enumerate() {
            *gb += grad_out.plane(o).iter().copied().sum::<T>();
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * hw];
        T::gemm(
            kk,
            self.out_channels,
            hw,
            &self.weight,
            (1, kk as isize),
            &grad_out.data,
            (hw as isize, 1),
            T::zero(),
            &mut dcols,
        );
        Some(self.col2im(&dcols, cache.height, cache.width))
    }
}

/// Output columns `[x0, x1)` whose source `x + dx` lies inside `[0, w)`.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(x0 as isize) as usize;
    (x0.min(w), x1.min(w))
}

impl<T> Params<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        f(&join(prefix, "weight"), &shape, &self.weight);
        f(&join(prefix, "bias"), &[self.out_channels], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        f(&join(prefix, "weight"), &shape, &mut self.weight);
        f(&join(prefix, "bias"), &[self.out_channels], &mut self.bias);
    }
}

/// Per-channel 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv3x3<T> {
    pub channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct DepthwiseCache<T> {
    input: Tensor<T>,
}

impl<T: Scalar> DepthwiseConv3x3<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            weight: vec![T::zero(); channels * 9],
            bias: vec![T::zero(); channels],
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, DepthwiseCache<T>) {
        assert_eq!(x.channels, self.channels, "depthwise input channels");
        let (h, w) = (x.height, x.width);
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = x.plane(c);
            let dst = out.plane_mut(c);
            dst.iter_mut().for_each(|v| *v = self.bias[c]);
            for tap in 0..9 {
                let k = self.weight[c * 9 + tap];
                let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                let (x0, x1) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx0 = (x0 as isize + dx) as usize;
                    let s = &src[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                    let d = &mut dst[y * w + x0..y * w + x1];
                    for (dv, &sv) in d.iter_mut().zip(s) {
                        *dv += k * sv;
                    }
                }
            }
        }
        (out, DepthwiseCache { input: x.clone() })
    }

    pub fn backward(
        &self,
        cache: &DepthwiseCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut DepthwiseConv3x3<T>,
    ) -> Tensor<T> {
        let x = &cache.input;
        let (h, w) = (x.height, x.width);
        let mut dx_t = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = x.plane(c);
            let g = grad_out.plane(c);
            grads.bias[c] += g.iter().copied().sum::<T>();
            let dsrc = dx_t.plane_mut(c);
            for tap in 0..9 {
                let k = self.weight[c * 9 + tap];
                let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
                let (x0, x1) = valid_range(w, dx);
                let mut acc = T::zero();
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx0 = (x0 as isize + dx) as usize;
                    let srow = sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0);
                    let gs = &g[y * w + x0..y * w + x1];
                    for (&gv, &sv) in gs.iter().zip(&src[srow.clone()]) {
                        acc += gv * sv;
                    }
                    for (dv, &gv) in dsrc[srow].iter_mut().zip(gs) {
                        *dv += k * gv;
                    }
                }
                grads.weight[c * 9 + tap] += acc;
            }
        }
        dx_t
    }
}

impl<T> Params<T> for DepthwiseConv3x3<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f(&join(prefix, "weight"), &[self.channels, 1, 3, 3], &self.weight);
        f(&join(prefix, "bias"), &[self.channels], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        f(&join(prefix, "weight"), &[self.channels, 1, 3, 3], &mut self.weight);
        f(&join(prefix, "bias"), &[self.channels], &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (h, w, k) = (x.height, x.width, conv.kernel);
        let r = (k / 2) as isize;
        let mut out = Tensor::zeros(conv.out_channels, h, w);
        for o in 0..conv.out_channels {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = conv.bias[o];
                    for i in 0..conv.in_channels {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - r, xx + kx - r);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wi = ((o * conv.in_channels + i) * k + ky as usize) * k + kx as usize;
                                acc += conv.weight[wi] * x.plane(i)[sy as usize * w + sx as usize];
                            }
                        }
                    }
                    out.plane_mut(o)[y as usize * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [1, 3] {
            let mut conv = Conv2d::<f64>::new(3, 4, k);
            conv.weight.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            conv.bias.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            let x = random_tensor(&mut rng, 3, 5, 6);
            let (out, _) = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            for (a, b) in out.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is linear in x and in weights: check both adjoints
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3);
        conv.weight.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let x = random_tensor(&mut rng, 2, 4, 5);
        let g = random_tensor(&mut rng, 3, 4, 5);
        let (out, cache) = conv.forward(&x);
        let mut grads = Conv2d::new(2, 3, 3);
        let dx = conv.backward(&cache, &g, &mut grads, true).unwrap();
        let lhs: f64 = out.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w: f64 = conv.weight.iter().zip(&grads.weight).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn depthwise_matches_grouped_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dw = DepthwiseConv3x3::<f64>::new(2);
        dw.weight.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        dw.bias = vec![0.25, -0.5];
        let x = random_tensor(&mut rng, 2, 4, 3);
        let (out, cache) = dw.forward(&x);
        for c in 0..2 {
            let mut single = Conv2d::<f64>::new(1, 1, 3);
            single.weight.copy_from_slice(&dw.weight[c * 9..(c + 1) * 9]);
            single.bias[0] = dw.bias[c];
            let want = naive_conv(&single, &x.slice_channels(c, c + 1));
            for (a, b) in out.plane(c).iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let g = random_tensor(&mut rng, 2, 4, 3);
        let mut grads = DepthwiseConv3x3::new(2);
        let dx = dw.backward(&cache, &g, &mut grads);
        let lin: f64 = out
            .data
            .iter()
            .zip(&g.data)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            - (0..2).map(|c| dw.bias[c] * g.plane(c).iter().sum::<f64>()).sum::<f64>();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lin - rhs).abs() < 1e-10);
    }
}
