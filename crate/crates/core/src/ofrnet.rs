//! Optical-flow reconstruction network.
//!
//! A single recurrent module estimates flow at half LR resolution and again
//! at LR resolution (refining the upscaled coarse flow); its feature path is
//! then reused by an SR tail that predicts the flow at `s` times the LR
//! resolution. Each finer level predicts a residual on top of the bilinearly
//! upscaled flow of the previous level.

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::flow_ops::{
    upscale_flow_tensor, upscale_flow_tensor_backward, warp_plane, warp_plane_backward,
};
use crate::nn::ops::{avg_pool2, leaky_relu, leaky_relu_backward, pixel_shuffle, pixel_unshuffle};
use crate::nn::{join, BlockCache, Conv2d, ConvCache, EfficientResidualBlock, Params, Tensor};
use crate::scalar::Scalar;

/// Parameters shared by every pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentModule<T> {
    /// 3x3 conv from `[warped source, target, flow]` to the feature width.
    pub feature: Conv2d<T>,
    pub blocks: Vec<EfficientResidualBlock<T>>,
    /// 3x3 conv to two flow channels, no activation.
    pub flow: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct RecurrentCache<T> {
    feature: ConvCache<T>,
    feature_out: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    flow: Option<ConvCache<T>>,
}

impl<T: Scalar> RecurrentModule<T> {
    pub fn new(channels: usize, blocks: usize) -> Result<Self> {
        Ok(Self {
            feature: Conv2d::new(4, channels, 3),
            blocks: (0..blocks)
                .map(|_| EfficientResidualBlock::new(channels))
                .collect::<Result<_>>()?,
            flow: Conv2d::new(channels, 2, 3),
        })
    }

    /// Feature path only: conv + leaky ReLU + residual blocks.
    pub fn features(&self, input: &Tensor<T>, slope: T) -> (Tensor<T>, RecurrentCache<T>) {
        let (mut x, feature) = self.feature.forward(input);
        leaky_relu(&mut x, slope);
        let feature_out = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&x, slope);
            blocks.push(c);
            x = y;
        }
        (
            x,
            RecurrentCache {
                feature,
                feature_out,
                blocks,
                flow: None,
            },
        )
    }

    /// Full module: returns the estimated flow and the pre-estimation features.
    pub fn forward(&self, input: &Tensor<T>, slope: T) -> (Tensor<T>, Tensor<T>, RecurrentCache<T>) {
        let (features, mut cache) = self.features(input, slope);
        let (flow, fc) = self.flow.forward(&features);
        cache.flow = Some(fc);
        (flow, features, cache)
    }

    /// Backpropagates a feature gradient (plus a flow gradient when the flow
    /// head was used). Returns the input gradient when requested.
    pub fn backward(
        &self,
        cache: &RecurrentCache<T>,
        grad_flow: Option<&Tensor<T>>,
        grad_features: Option<Tensor<T>>,
        grads: &mut Self,
        slope: T,
        need_input: bool,
    ) -> Option<Tensor<T>> {
        let mut g = match (grad_flow, &cache.flow) {
            (Some(df), Some(fc)) => {
                let mut g = self
                    .flow
                    .backward(fc, df, &mut grads.flow, true)
                    .expect("input gradient requested");
                if let Some(extra) = &grad_features {
                    g.add_assign(extra);
                }
                g
            }
            _ => grad_features.expect("a gradient reaches the recurrent module"),
        };
        for (b, (c, gb)) in self
            .blocks
            .iter()
            .zip(cache.blocks.iter().zip(grads.blocks.iter_mut()))
            .rev()
        {
            g = b.backward(c, &g, gb, slope);
        }
        leaky_relu_backward(&cache.feature_out, &mut g, slope);
        self.feature
            .backward(&cache.feature, &g, &mut grads.feature, need_input)
    }
}

impl<T> Params<T> for RecurrentModule<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.feature.visit(&join(prefix, "feature"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.flow.visit(&join(prefix, "flow"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.feature.visit_mut(&join(prefix, "feature"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.flow.visit_mut(&join(prefix, "flow"), f);
    }
}

/// Flow reconstruction network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OfrNet<T> {
    pub scale: usize,
    pub slope: f64,
    pub recurrent: RecurrentModule<T>,
    pub sr_blocks: Vec<EfficientResidualBlock<T>>,
    /// 3x3 conv to `2 s^2` channels ahead of the pixel shuffle.
    pub sub_pixel: Conv2d<T>,
    /// Final 3x3 conv `2 -> 2` on the HR grid.
    pub hr_flow: Conv2d<T>,
}

/// Flows at the three pyramid levels, each `2 x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct OfrOutput<T> {
    pub half: Tensor<T>,
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
}

/// Gradients arriving at the three pyramid outputs.
#[derive(Debug, Clone)]
pub struct OfrGrad<T> {
    pub half: Option<Tensor<T>>,
    pub lr: Option<Tensor<T>>,
    pub hr: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct OfrCache<T> {
    source: Tensor<T>,
    level1: RecurrentCache<T>,
    upscaled: Tensor<T>,
    level2: RecurrentCache<T>,
    level2_shape: (usize, usize),
    lr_flow: Tensor<T>,
    level3: RecurrentCache<T>,
    sr_blocks: Vec<BlockCache<T>>,
    sub_pixel: ConvCache<T>,
    hr_flow: ConvCache<T>,
}

fn warp_tensor<T: Scalar>(source: &Tensor<T>, flow: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (source.height, source.width);
    let out = warp_plane(source.plane(0), flow.plane(0), flow.plane(1), h, w);
    Tensor::from_vec(1, h, w, out).expect("warp preserves size")
}

fn warp_tensor_flow_grad<T: Scalar>(source: &Tensor<T>, flow: &Tensor<T>, grad: &[T]) -> Tensor<T> {
    let (h, w) = (source.height, source.width);
    let (du, dv, _) = warp_plane_backward(source.plane(0), flow.plane(0), flow.plane(1), h, w, grad, false);
    let mut data = du;
    data.extend(dv);
    Tensor::from_vec(2, h, w, data).expect("warp preserves size")
}

impl<T: Scalar> OfrNet<T> {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        let c = cfg.channels;
        let s = cfg.scale;
        Ok(Self {
            scale: s,
            slope: cfg.slope,
            recurrent: RecurrentModule::new(c, cfg.recurrent_blocks)?,
            sr_blocks: (0..cfg.flow_sr_blocks)
                .map(|_| EfficientResidualBlock::new(c))
                .collect::<Result<_>>()?,
            sub_pixel: Conv2d::new(c, 2 * s * s, 3),
            hr_flow: Conv2d::new(2, 2, 3),
        })
    }

    fn slope_t(&self) -> T {
        T::from_f64_lossy(self.slope)
    }

    /// Estimates the flow from `source` (frame `i`) to `target` (frame `j`)
    /// at half-LR, LR and HR resolution. Both inputs are `1 x H x W`.
    pub fn forward(&self, source: &Tensor<T>, target: &Tensor<T>) -> Result<(OfrOutput<T>, OfrCache<T>)> {
        if !source.same_spatial(target) || source.channels != 1 || target.channels != 1 {
            return Err(Error::shape("flow network takes two equally sized single-channel frames"));
        }
        let (h, w) = (source.height, source.width);
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("LR size {w}x{h} must be even")));
        }
        let slope = self.slope_t();

        // level 1: half resolution, zero initial flow
        let src_half = avg_pool2(source);
        let tgt_half = avg_pool2(target);
        let zero = Tensor::zeros(2, h / 2, w / 2);
        let input1 = Tensor::concat(&[&src_half, &tgt_half, &zero])?;
        let (half, _, level1) = self.recurrent.forward(&input1, slope);

        // level 2: refine the upscaled flow at LR resolution
        let upscaled = upscale_flow_tensor(&half, 2);
        let warped = warp_tensor(source, &upscaled);
        let input2 = Tensor::concat(&[&warped, target, &upscaled])?;
        let (residual, _, level2) = self.recurrent.forward(&input2, slope);
        let mut lr = upscaled.clone();
        lr.add_assign(&residual);

        // level 3: shared feature path, then the flow SR tail
        let warped = warp_tensor(source, &lr);
        let input3 = Tensor::concat(&[&warped, target, &lr])?;
        let (mut x, level3) = self.recurrent.features(&input3, slope);
        let mut sr_blocks = Vec::with_capacity(self.sr_blocks.len());
        for b in &self.sr_blocks {
            let (y, c) = b.forward(&x, slope);
            sr_blocks.push(c);
            x = y;
        }
        let (sub, sub_pixel) = self.sub_pixel.forward(&x);
        let shuffled = pixel_shuffle(&sub, self.scale);
        let (mut hr, hr_flow) = self.hr_flow.forward(&shuffled);
        hr.add_assign(&upscale_flow_tensor(&lr, self.scale));

        Ok((
            OfrOutput {
                half,
                lr: lr.clone(),
                hr,
            },
            OfrCache {
                source: source.clone(),
                level1,
                upscaled,
                level2,
                level2_shape: (h, w),
                lr_flow: lr,
                level3,
                sr_blocks,
                sub_pixel,
                hr_flow,
            },
        ))
    }

    /// Accumulates parameter gradients for the given output gradients.
    pub fn backward(&self, cache: &OfrCache<T>, grad: OfrGrad<T>, grads: &mut Self) {
        let slope = self.slope_t();
        let (h, w) = cache.level2_shape;
        let s = self.scale;
        let mut d_lr = grad.lr.unwrap_or_else(|| Tensor::zeros(2, h, w));

        if let Some(d_hr) = grad.hr {
            d_lr.add_assign(&upscale_flow_tensor_backward(&d_hr, s));
            let d_shuffled = self
                .hr_flow
                .backward(&cache.hr_flow, &d_hr, &mut grads.hr_flow, true)
                .expect("input gradient requested");
            let d_sub = pixel_unshuffle(&d_shuffled, s);
            let mut g = self
                .sub_pixel
                .backward(&cache.sub_pixel, &d_sub, &mut grads.sub_pixel, true)
                .expect("input gradient requested");
            for (b, (c, gb)) in self
                .sr_blocks
                .iter()
                .zip(cache.sr_blocks.iter().zip(grads.sr_blocks.iter_mut()))
                .rev()
            {
                g = b.backward(c, &g, gb, slope);
            }
            let d_in3 = self
                .recurrent
                .backward(&cache.level3, None, Some(g), &mut grads.recurrent, slope, true)
                .expect("input gradient requested");
            d_lr.add_assign(&d_in3.slice_channels(2, 4));
            d_lr.add_assign(&warp_tensor_flow_grad(&cache.source, &cache.lr_flow, d_in3.plane(0)));
        }

        // level 2: lr = upscaled + residual
        let d_in2 = self
            .recurrent
            .backward(&cache.level2, Some(&d_lr), None, &mut grads.recurrent, slope, true)
            .expect("input gradient requested");
        let mut d_up = d_lr;
        d_up.add_assign(&d_in2.slice_channels(2, 4));
        d_up.add_assign(&warp_tensor_flow_grad(&cache.source, &cache.upscaled, d_in2.plane(0)));

        let mut d_half = upscale_flow_tensor_backward(&d_up, 2);
        if let Some(g) = grad.half {
            d_half.add_assign(&g);
        }
        self.recurrent
            .backward(&cache.level1, Some(&d_half), None, &mut grads.recurrent, slope, false);
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }
}

impl<T> Params<T> for OfrNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.recurrent.visit(&join(prefix, "recurrent"), f);
        self.sr_blocks.visit(&join(prefix, "sr_blocks"), f);
        self.sub_pixel.visit(&join(prefix, "sub_pixel"), f);
        self.hr_flow.visit(&join(prefix, "hr_flow"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.recurrent.visit_mut(&join(prefix, "recurrent"), f);
        self.sr_blocks.visit_mut(&join(prefix, "sr_blocks"), f);
        self.sub_pixel.visit_mut(&join(prefix, "sub_pixel"), f);
        self.hr_flow.visit_mut(&join(prefix, "hr_flow"), f);
    }
}

/// Runs the recurrent module on `[warped_source, target, flow_in]`.
pub fn recurrent_forward<T: Scalar>(
    target: &Tensor<T>,
    warped_source: &Tensor<T>,
    flow_in: &Tensor<T>,
    module: &RecurrentModule<T>,
    slope: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if flow_in.channels != 2 {
        return Err(Error::shape("recurrent module expects a 2-channel flow"));
    }
    let input = Tensor::concat(&[warped_source, target, flow_in])?;
    let (flow, features, _) = module.forward(&input, T::from_f64_lossy(slope));
    Ok((flow, features))
}

/// Exact scalar parameter count of the flow network.
pub fn count_params<T>(net: &OfrNet<T>) -> usize {
    net.num_params()
}
