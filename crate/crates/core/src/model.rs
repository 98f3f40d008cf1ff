//! The joint flow + SR model: per-clip loss and gradient, and inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::degradation::{bicubic_resize, Scale};
use crate::error::{Error, Result};
use crate::flow_ops::{FlowField, FlowLevel};
use crate::frames::{Frame, FrameClip, TrainingSample};
use crate::nn::ops::avg_pool2;
use crate::nn::{join, ParamInit, Params, Tensor};
use crate::objective::{level_coefficients, level_loss_tensor, sr_loss_tensor, LossWeights};
use crate::ofrnet::{OfrGrad, OfrNet};
use crate::scalar::Scalar;
use crate::srnet::{assemble_draft_cube_backward, assemble_draft_cube_tensor, SrNet};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: NetworkConfig,
    pub ofr: OfrNet<T>,
    pub sr: SrNet<T>,
}

/// Loss components of one clip or one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub sr: f64,
    pub ofr: f64,
    pub total: f64,
}

/// A clip converted to network-range tensors; the centre is the middle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensors<T> {
    pub lr: Vec<Tensor<T>>,
    pub hr: Vec<Tensor<T>>,
}

pub(crate) fn frame_tensor<T: Scalar>(frame: &Frame) -> Tensor<T> {
    let (h, w) = frame.dims();
    Tensor::from_f64(1, h, w, &frame.network_luma()).expect("frame dims are consistent")
}

impl<T: Scalar> ClipTensors<T> {
    pub fn from_sample(sample: &TrainingSample) -> Self {
        Self {
            lr: sample.lr.frames().iter().map(frame_tensor).collect(),
            hr: sample.hr.frames().iter().map(frame_tensor).collect(),
        }
    }
}

impl<T: Scalar> Model<T> {
    /// All parameters zero.
    pub fn zeroed(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut m = Self {
            config,
            ofr: OfrNet::new(&config)?,
            sr: SrNet::new(&config)?,
        };
        m.fill_zero();
        Ok(m)
    }

    /// Seeded fan-in scaled initialisation.
    pub fn initialized(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParamInit { slope: config.slope }.apply(&mut m, &mut rng);
        Ok(m)
    }

    /// [`Model::initialized`], then the flow output layers set to zero and
    /// the SR output layers scaled by 0.1, so training starts from zero flow
    /// and a near-constant SR output.
    pub fn for_training(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut m = Self::initialized(config, seed)?;
        m.ofr.recurrent.flow.fill_zero();
        m.ofr.hr_flow.fill_zero();
        let k = T::from_f64_lossy(0.1);
        for conv in [&mut m.sr.sub_pixel, &mut m.sr.output] {
            conv.weight.iter_mut().for_each(|w| *w *= k);
        }
        Ok(m)
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }

    /// The same parameters in another precision.
    pub fn convert<U: Scalar>(&self) -> Result<Model<U>> {
        let mut m = Model::<U>::zeroed(self.config)?;
        let flat: Vec<U> = self.flatten().iter().map(|v| U::from_f64_lossy(v.as_f64())).collect();
        m.load_flat(&flat);
        Ok(m)
    }

    fn check_clip(&self, lr: &[Tensor<T>]) -> Result<usize> {
        let frames = self.config.frames();
        if lr.len() != frames {
            return Err(Error::invalid(format!(
                "model expects {frames} frames per clip, got {}",
                lr.len()
            )));
        }
        Ok(self.config.radius)
    }

    /// HR flows from every neighbour to the centre, in neighbour order.
    pub fn hr_flows(&self, lr: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let c = self.check_clip(lr)?;
        neighbors(lr.len(), c)
            .map(|i| Ok(self.ofr.forward(&lr[i], &lr[c])?.0.hr))
            .collect()
    }

    /// Network-range SR of the centre frame.
    pub fn super_resolve_tensors(&self, lr: &[Tensor<T>]) -> Result<Tensor<T>> {
        let c = self.check_clip(lr)?;
        let flows = self.hr_flows(lr)?;
        let pairs: Vec<(&Tensor<T>, &Tensor<T>)> =
            neighbors(lr.len(), c).map(|i| &lr[i]).zip(&flows).collect();
        let (cube, _) = assemble_draft_cube_tensor(&lr[c], &pairs, self.config.scale)?;
        Ok(self.sr.forward(&cube.cube)?.0)
    }

    /// HR flow `F_{source -> target}`.
    pub fn flow(&self, source: &Frame, target: &Frame) -> Result<FlowField> {
        let (out, _) = self.ofr.forward(&frame_tensor(source), &frame_tensor(target))?;
        FlowField::from_tensor(FlowLevel::Hr, out.hr.cast())
    }

    /// Super-resolves the centre of `clip`; chroma, when present, is
    /// upscaled bicubically.
    pub fn super_resolve(&self, clip: &FrameClip) -> Result<Frame> {
        let lr: Vec<Tensor<T>> = clip.frames().iter().map(frame_tensor).collect();
        let out = self.super_resolve_tensors(&lr)?;
        if out.data.iter().any(|v| !v.as_f64().is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                sr: f64::NAN,
                ofr: f64::NAN,
                total: f64::NAN,
            });
        }
        let mut frame = Frame::from_network(out.height, out.width, &out.to_f64())?;
        let center = clip.center();
        if center.chroma().is_some() {
            let up = bicubic_resize(center, Scale::up(self.config.scale))?;
            frame.set_chroma(up.chroma().map(|c| c.to_vec()))?;
        }
        Ok(frame)
    }

    /// Slides a `2N+1` window over `frames`; returns one SR frame per full
    /// window, i.e. for positions `N..len-N`.
    pub fn super_resolve_sequence(&self, frames: &[Frame]) -> Result<Vec<Frame>> {
        let t = self.config.frames();
        if frames.len() < t {
            return Err(Error::invalid(format!(
                "{} frames are fewer than the {t}-frame window",
                frames.len()
            )));
        }
        frames
            .windows(t)
            .map(|w| self.super_resolve(&FrameClip::new(w.to_vec())?))
            .collect()
    }

    /// Loss of one clip without gradients.
    pub fn loss(&self, clip: &ClipTensors<T>, weights: &LossWeights) -> Result<LossParts> {
        self.run(clip, weights, None)
    }

    /// Loss of one clip; parameter gradients are accumulated into `grads`.
    pub fn loss_and_grad(&self, clip: &ClipTensors<T>, weights: &LossWeights, grads: &mut Self) -> Result<LossParts> {
        self.run(clip, weights, Some(grads))
    }

    fn run(&self, clip: &ClipTensors<T>, weights: &LossWeights, grads: Option<&mut Self>) -> Result<LossParts> {
        let c = self.check_clip(&clip.lr)?;
        if clip.hr.len() != clip.lr.len() {
            return Err(Error::shape("LR and HR clips differ in length"));
        }
        let s = self.config.scale;
        let idx: Vec<usize> = neighbors(clip.lr.len(), c).collect();

        let mut outs = Vec::with_capacity(idx.len());
        for &i in &idx {
            outs.push(self.ofr.forward(&clip.lr[i], &clip.lr[c])?);
        }
        let pairs: Vec<(&Tensor<T>, &Tensor<T>)> =
            idx.iter().map(|&i| &clip.lr[i]).zip(outs.iter().map(|o| &o.0.hr)).collect();
        let (cube, cube_cache) = assemble_draft_cube_tensor(&clip.lr[c], &pairs, s)?;
        let (pred, sr_cache) = self.sr.forward(&cube.cube)?;
        if !pred.same_spatial(&clip.hr[c]) {
            return Err(Error::shape("HR centre does not match the SR output size"));
        }
        let (sr, d_pred) = sr_loss_tensor(&pred, &clip.hr[c]);

        let lambda3 = T::from_f64_lossy(weights.lambda3);
        let coef = level_coefficients(weights, c);
        let half_center = avg_pool2(&clip.lr[c]);
        let mut ofr = 0.0;
        let mut level_grads = Vec::with_capacity(idx.len());
        for (&i, (out, _)) in idx.iter().zip(&outs) {
            let (l3, d3) = level_loss_tensor(&clip.hr[i], &clip.hr[c], &out.hr, lambda3);
            let (l2, d2) = level_loss_tensor(&clip.lr[i], &clip.lr[c], &out.lr, lambda3);
            let (l1, d1) = level_loss_tensor(&avg_pool2(&clip.lr[i]), &half_center, &out.half, lambda3);
            ofr += coef[0] * l3.as_f64() + coef[1] * l2.as_f64() + coef[2] * l1.as_f64();
            level_grads.push([d3, d2, d1]);
        }
        let parts = LossParts {
            sr: sr.as_f64(),
            ofr,
            total: sr.as_f64() + weights.lambda4 * ofr,
        };

        let Some(grads) = grads else {
            return Ok(parts);
        };
        let d_cube = self
            .sr
            .backward(&sr_cache, &d_pred, &mut grads.sr, true)
            .expect("input gradient requested");
        let d_flows = assemble_draft_cube_backward(&cube_cache, &d_cube);
        let flow_loss_on = weights.lambda4 != 0.0;
        for (((_, cache), mut d_hr), [d3, mut d2, mut d1]) in outs.iter().zip(d_flows).zip(level_grads) {
            let (mut lr, mut half) = (None, None);
            if flow_loss_on {
                let k = |i: usize| T::from_f64_lossy(weights.lambda4 * coef[i]);
                let mut d3 = d3;
                d3.scale(k(0));
                d_hr.add_assign(&d3);
                d2.scale(k(1));
                d1.scale(k(2));
                lr = Some(d2);
                half = Some(d1);
            }
            self.ofr.backward(
                cache,
                OfrGrad {
                    half,
                    lr,
                    hr: Some(d_hr),
                },
                &mut grads.ofr,
            );
        }
        Ok(parts)
    }
}

fn neighbors(len: usize, center: usize) -> impl Iterator<Item = usize> {
    (0..len).filter(move |&i| i != center)
}

impl<T> Params<T> for Model<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.ofr.visit(&join(prefix, "ofr"), f);
        self.sr.visit(&join(prefix, "sr"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.ofr.visit_mut(&join(prefix, "ofr"), f);
        self.sr.visit_mut(&join(prefix, "sr"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        NetworkConfig::desk(2).with_channels(8)
    }

    fn clip(seed: u64) -> ClipTensors<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |h: usize, w: usize| {
            let d: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
            Tensor::from_vec(1, h, w, d).unwrap()
        };
        ClipTensors {
            lr: (0..3).map(|_| t(8, 8)).collect(),
            hr: (0..3).map(|_| t(16, 16)).collect(),
        }
    }

    #[test]
    fn names_are_unique_and_prefixed() {
        let m = Model::<f32>::zeroed(tiny()).unwrap();
        let mut names = Vec::new();
        m.visit("", &mut |n, _, _| names.push(n.to_string()));
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.iter().all(|n| n.starts_with("ofr.") || n.starts_with("sr.")));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = Model::<f32>::initialized(tiny(), 7).unwrap();
        let b = Model::<f32>::initialized(tiny(), 7).unwrap();
        let c = Model::<f32>::initialized(tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn loss_matches_grad_path_value() {
        let m = Model::<f64>::initialized(tiny(), 1).unwrap();
        let c = clip(3);
        let w = LossWeights::default();
        let mut g = m.zeros_like();
        let a = m.loss(&c, &w).unwrap();
        let b = m.loss_and_grad(&c, &w, &mut g).unwrap();
        assert_eq!(a, b);
        assert!((a.total - (a.sr + 0.01 * a.ofr)).abs() < 1e-15);
        assert!(g.flatten().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn window_count() {
        let m = Model::<f32>::zeroed(tiny()).unwrap();
        let frames: Vec<Frame> = (0..5).map(|i| Frame::filled(8, 8, 0.1 * i as f64 + 0.2)).collect();
        let out = m.super_resolve_sequence(&frames).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].dims(), (16, 16));
        assert!(m.super_resolve_sequence(&frames[..2]).is_err());
    }
}
