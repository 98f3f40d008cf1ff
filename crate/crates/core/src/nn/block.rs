use super::ops::{channel_shuffle, channel_unshuffle, leaky_relu, leaky_relu_backward};
use super::{join, Conv2d, ConvCache, DepthwiseCache, DepthwiseConv3x3, Params, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Split / transform / concat / shuffle block.
///
/// The first half of the channels passes through untouched; the second half
/// goes through pointwise conv + leaky ReLU, a 3x3 depthwise conv with no
/// activation, and another pointwise conv + leaky ReLU. The halves are then
/// concatenated and shuffled with two groups.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficientResidualBlock<T> {
    pub channels: usize,
    pub reduce: Conv2d<T>,
    pub depthwise: DepthwiseConv3x3<T>,
    pub expand: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    reduce: ConvCache<T>,
    reduce_out: Tensor<T>,
    depthwise: DepthwiseCache<T>,
    expand: ConvCache<T>,
    expand_out: Tensor<T>,
}

impl<T: Scalar> EfficientResidualBlock<T> {
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 {
            return Err(Error::invalid(format!(
                "residual block needs an even channel count, got {channels}"
            )));
        }
        let half = channels / 2;
        Ok(Self {
            channels,
            reduce: Conv2d::new(half, half, 1),
            depthwise: DepthwiseConv3x3::new(half),
            expand: Conv2d::new(half, half, 1),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, slope: T) -> (Tensor<T>, BlockCache<T>) {
        assert_eq!(x.channels, self.channels, "block input channels");
        let half = self.channels / 2;
        let passthrough = x.slice_channels(0, half);
        let branch = x.slice_channels(half, self.channels);

        let (mut a, reduce) = self.reduce.forward(&branch);
        leaky_relu(&mut a, slope);
        let (b, depthwise) = self.depthwise.forward(&a);
        let (mut c, expand) = self.expand.forward(&b);
        leaky_relu(&mut c, slope);

        let joined = Tensor::concat(&[&passthrough, &c]).expect("halves share spatial size");
        (
            channel_shuffle(&joined, 2),
            BlockCache {
                reduce,
                reduce_out: a,
                depthwise,
                expand,
                expand_out: c,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &BlockCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut Self,
        slope: T,
    ) -> Tensor<T> {
        let half = self.channels / 2;
        let joined = channel_unshuffle(grad_out, 2);
        let passthrough = joined.slice_channels(0, half);
        let mut dc = joined.slice_channels(half, self.channels);

        leaky_relu_backward(&cache.expand_out, &mut dc, slope);
        let db = self
            .expand
            .backward(&cache.expand, &dc, &mut grads.expand, true)
            .expect("input gradient requested");
        let mut da = self.depthwise.backward(&cache.depthwise, &db, &mut grads.depthwise);
        leaky_relu_backward(&cache.reduce_out, &mut da, slope);
        let dbranch = self
            .reduce
            .backward(&cache.reduce, &da, &mut grads.reduce, true)
            .expect("input gradient requested");
        Tensor::concat(&[&passthrough, &dbranch]).expect("halves share spatial size")
    }
}

impl<T> Params<T> for EfficientResidualBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.depthwise.visit(&join(prefix, "depthwise"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.depthwise.visit_mut(&join(prefix, "depthwise"), f);
        self.expand.visit_mut(&join(prefix, "expand"), f);
    }
}
