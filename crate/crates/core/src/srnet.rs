//! Draft-cube assembly and the super-resolution network.

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::flow_ops::{
    extract_drafts_tensor, extract_drafts_tensor_backward, space_to_depth_tensor,
    space_to_depth_tensor_backward, FlowField,
};
use crate::frames::FrameClip;
use crate::nn::ops::{leaky_relu, leaky_relu_backward, pixel_shuffle, pixel_unshuffle};
use crate::nn::{join, BlockCache, Conv2d, ConvCache, EfficientResidualBlock, Params, Tensor};
use crate::scalar::Scalar;

/// Central LR frame followed by `s^2` motion-compensated drafts per neighbour
/// (neighbours ordered `-N..-1, +1..+N`).
#[derive(Debug, Clone, PartialEq)]
pub struct DraftCube<T> {
    pub scale: usize,
    pub radius: usize,
    pub cube: Tensor<T>,
}

/// Per-neighbour inputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DraftCubeCache<T> {
    sources: Vec<Tensor<T>>,
    flow_cubes: Vec<Tensor<T>>,
    scale: usize,
}

/// Builds the draft cube from the central frame and `(neighbour, HR flow)`
/// pairs, each HR flow mapping the neighbour onto the centre.
pub fn assemble_draft_cube_tensor<T: Scalar>(
    center: &Tensor<T>,
    neighbors: &[(&Tensor<T>, &Tensor<T>)],
    scale: usize,
) -> Result<(DraftCube<T>, DraftCubeCache<T>)> {
    if neighbors.is_empty() || neighbors.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "expected 2N neighbour flows, got {}",
            neighbors.len()
        )));
    }
    let (h, w) = (center.height, center.width);
    let mut parts = vec![center.clone()];
    let mut sources = Vec::with_capacity(neighbors.len());
    let mut flow_cubes = Vec::with_capacity(neighbors.len());
    for (frame, flow) in neighbors {
        if frame.height != h || frame.width != w || flow.height != h * scale || flow.width != w * scale {
            return Err(Error::shape(format!(
                "neighbour {}x{} / flow {}x{} inconsistent with {w}x{h} centre at scale {scale}",
                frame.width, frame.height, flow.width, flow.height
            )));
        }
        let cube = space_to_depth_tensor(flow, scale);
        parts.push(extract_drafts_tensor(frame.plane(0), &cube));
        sources.push((*frame).clone());
        flow_cubes.push(cube);
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Ok((
        DraftCube {
            scale,
            radius: neighbors.len() / 2,
            cube: Tensor::concat(&refs)?,
        },
        DraftCubeCache {
            sources,
            flow_cubes,
            scale,
        },
    ))
}

/// Gradients with respect to each neighbour's HR flow.
pub fn assemble_draft_cube_backward<T: Scalar>(
    cache: &DraftCubeCache<T>,
    grad: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let s2 = cache.scale * cache.scale;
    cache
        .sources
        .iter()
        .zip(&cache.flow_cubes)
        .enumerate()
        .map(|(i, (src, cube))| {
            let g = grad.slice_channels(1 + i * s2, 1 + (i + 1) * s2);
            let dcube = extract_drafts_tensor_backward(src.plane(0), cube, &g);
            space_to_depth_tensor_backward(&dcube, cache.scale)
        })
        .collect()
}

/// Draft cube of a clip given `2N` HR flows `F_{i -> centre}` in neighbour order.
pub fn assemble_draft_cube(clip: &FrameClip, hr_flows: &[FlowField], scale: usize) -> Result<DraftCube<f64>> {
    if hr_flows.len() != 2 * clip.radius() {
        return Err(Error::invalid(format!(
            "expected {} flows, got {}",
            2 * clip.radius(),
            hr_flows.len()
        )));
    }
    let (h, w) = clip.dims();
    let to_tensor = |f: &crate::frames::Frame| Tensor::from_vec(1, h, w, f.luma().to_vec());
    let center = to_tensor(clip.center())?;
    let frames: Vec<Tensor<f64>> = clip
        .neighbor_indices()
        .map(|i| to_tensor(&clip.frames()[i]))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&Tensor<f64>, &Tensor<f64>)> =
        frames.iter().zip(hr_flows.iter().map(|f| f.tensor())).collect();
    Ok(assemble_draft_cube_tensor(&center, &pairs, scale)?.0)
}

/// Super-resolution network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SrNet<T> {
    pub scale: usize,
    pub radius: usize,
    pub slope: f64,
    pub feature: Conv2d<T>,
    pub blocks: Vec<EfficientResidualBlock<T>>,
    /// 3x3 conv to `s^2` channels ahead of the pixel shuffle.
    pub sub_pixel: Conv2d<T>,
    /// Final 3x3 conv with a single kernel.
    pub output: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct SrCache<T> {
    feature: ConvCache<T>,
    feature_out: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    sub_pixel: ConvCache<T>,
    output: ConvCache<T>,
}

impl<T: Scalar> SrNet<T> {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        let c = cfg.channels;
        let s = cfg.scale;
        Ok(Self {
            scale: s,
            radius: cfg.radius,
            slope: cfg.slope,
            feature: Conv2d::new(cfg.cube_channels(), c, 3),
            blocks: (0..cfg.sr_blocks)
                .map(|_| EfficientResidualBlock::new(c))
                .collect::<Result<_>>()?,
            sub_pixel: Conv2d::new(c, s * s, 3),
            output: Conv2d::new(1, 1, 3),
        })
    }

    pub fn forward(&self, cube: &Tensor<T>) -> Result<(Tensor<T>, SrCache<T>)> {
        if cube.channels != self.feature.in_channels {
            return Err(Error::shape(format!(
                "draft cube has {} channels, network expects {}",
                cube.channels, self.feature.in_channels
            )));
        }
        let slope = T::from_f64_lossy(self.slope);
        let (mut x, feature) = self.feature.forward(cube);
        leaky_relu(&mut x, slope);
        let feature_out = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&x, slope);
            blocks.push(c);
            x = y;
        }
        let (sub, sub_pixel) = self.sub_pixel.forward(&x);
        let hr = pixel_shuffle(&sub, self.scale);
        let (out, output) = self.output.forward(&hr);
        Ok((
            out,
            SrCache {
                feature,
                feature_out,
                blocks,
                sub_pixel,
                output,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the draft-cube gradient.
    pub fn backward(&self, cache: &SrCache<T>, grad_out: &Tensor<T>, grads: &mut Self, need_input: bool) -> Option<Tensor<T>> {
        let slope = T::from_f64_lossy(self.slope);
        let d_hr = self
            .output
            .backward(&cache.output, grad_out, &mut grads.output, true)
            .expect("input gradient requested");
        let d_sub = pixel_unshuffle(&d_hr, self.scale);
        let mut g = self
            .sub_pixel
            .backward(&cache.sub_pixel, &d_sub, &mut grads.sub_pixel, true)
            .expect("input gradient requested");
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

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }
}

impl<T> Params<T> for SrNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.feature.visit(&join(prefix, "feature"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.sub_pixel.visit(&join(prefix, "sub_pixel"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.feature.visit_mut(&join(prefix, "feature"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.sub_pixel.visit_mut(&join(prefix, "sub_pixel"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Exact scalar parameter count of the SR network.
pub fn count_params_sr<T>(net: &SrNet<T>) -> usize {
    net.num_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_ops::FlowLevel;
    use crate::frames::Frame;
    use crate::nn::ParamInit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cube_channel_counts() {
        let f = Frame::from_fn(4, 4, |y, x| (y + x) as f64 / 8.0);
        for (s, want) in [(4, 33), (2, 9)] {
            let clip = FrameClip::new(vec![f.clone(); 3]).unwrap();
            let flows = vec![FlowField::zeros(FlowLevel::Hr, 4 * s, 4 * s); 2];
            let cube = assemble_draft_cube(&clip, &flows, s).unwrap();
            assert_eq!(cube.cube.channels, want);
            for c in 0..want {
                assert_eq!(cube.cube.plane(c), f.luma());
            }
        }
    }

    #[test]
    fn wrong_flow_count_rejected() {
        let f = Frame::filled(4, 4, 0.5);
        let clip = FrameClip::new(vec![f; 3]).unwrap();
        let flows = vec![FlowField::zeros(FlowLevel::Hr, 8, 8)];
        assert!(assemble_draft_cube(&clip, &flows, 2).is_err());
        let flows = vec![FlowField::zeros(FlowLevel::Hr, 6, 6); 2];
        assert!(assemble_draft_cube(&clip, &flows, 2).is_err());
    }

    #[test]
    fn output_shape_and_zero_network() {
        for s in 2..=4 {
            let cfg = NetworkConfig::desk(s).with_channels(8);
            let net = SrNet::<f32>::new(&cfg).unwrap();
            let cube = Tensor::zeros(cfg.cube_channels(), 5, 6);
            let (out, _) = net.forward(&cube).unwrap();
            assert_eq!((out.channels, out.height, out.width), (1, 5 * s, 6 * s));
            assert!(out.data.iter().all(|&v| v == 0.0));
        }
        let net = SrNet::<f32>::new(&NetworkConfig::desk(4)).unwrap();
        assert!(net.forward(&Tensor::zeros(9, 4, 4)).is_err());
    }

    #[test]
    fn counts_match_closed_form() {
        let block = |c: usize| {
            let h = c / 2;
            2 * (h * h + h) + 10 * h
        };
        let cfg = NetworkConfig::desk(4);
        let net = SrNet::<f32>::new(&cfg).unwrap();
        let want = (33 * 9 * 32 + 32) + 8 * block(32) + (32 * 9 * 16 + 16) + 10;
        assert_eq!(count_params_sr(&net), want);
        let paper = count_params_sr(&SrNet::<f32>::new(&NetworkConfig::paper(4)).unwrap());
        assert!((530_000..=650_000).contains(&paper), "{paper}");
    }

    #[test]
    fn neighbour_order_matters() {
        let cfg = NetworkConfig::desk(2).with_channels(8);
        let mut net = SrNet::<f64>::new(&cfg).unwrap();
        ParamInit { slope: 0.1 }.apply(&mut net, &mut ChaCha8Rng::seed_from_u64(3));
        let a = Tensor::from_vec(1, 4, 4, (0..16).map(|v| (v as f64 * 0.3).sin()).collect()).unwrap();
        let b = Tensor::from_vec(1, 4, 4, (0..16).map(|v| (v as f64 * 0.7).cos()).collect()).unwrap();
        let c = Tensor::from_vec(1, 4, 4, vec![0.5; 16]).unwrap();
        let z = Tensor::zeros(2, 8, 8);
        let (fwd, _) = assemble_draft_cube_tensor(&c, &[(&a, &z), (&b, &z)], 2).unwrap();
        let (rev, _) = assemble_draft_cube_tensor(&c, &[(&b, &z), (&a, &z)], 2).unwrap();
        let (o1, _) = net.forward(&fwd.cube).unwrap();
        let (o2, _) = net.forward(&rev.cube).unwrap();
        assert_ne!(o1, o2);
    }
}
