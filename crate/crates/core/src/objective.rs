//! Training objectives: MSE super-resolution loss, per-level photometric flow
//! losses with smoothness regularisation, and their weighted combination.
//!
//! Norms are averaged over elements so the weights do not depend on the
//! resolution of the level they apply to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow_ops::{sign, total_variation_tensor, warp_plane, warp_plane_backward, FlowField};
use crate::frames::Frame;
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the half-resolution level.
    pub lambda1: f64,
    /// Weight of the LR level.
    pub lambda2: f64,
    /// Smoothness weight inside every level loss.
    pub lambda3: f64,
    /// Weight of the flow loss in the total.
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.2,
            lambda3: 0.1,
            lambda4: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("loss weights must be >= 0: {all:?}")));
        }
        Ok(())
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn sr_loss_tensor<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (T, Tensor<T>) {
    let n = T::from_usize(pred.data.len()).expect("size fits");
    let two = T::one() + T::one();
    let mut grad = Tensor::zeros(pred.channels, pred.height, pred.width);
    let mut total = T::zero();
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        total += d * d;
        *g = two * d / n;
    }
    (total / n, grad)
}

pub fn sr_loss(prediction: &Frame, groundtruth: &Frame) -> Result<f64> {
    if prediction.dims() != groundtruth.dims() {
        return Err(Error::shape("prediction and groundtruth differ in size"));
    }
    let n = prediction.luma().len() as f64;
    Ok(prediction
        .luma()
        .iter()
        .zip(groundtruth.luma())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Photometric L1 residual of `warp(source, flow)` against `target` plus
/// `lambda3 * TV(flow)`; returns the loss and its gradient w.r.t. the flow.
pub fn level_loss_tensor<T: Scalar>(
    source: &Tensor<T>,
    target: &Tensor<T>,
    flow: &Tensor<T>,
    lambda3: T,
) -> (T, Tensor<T>) {
    let (h, w) = (flow.height, flow.width);
    let n = T::from_usize(h * w).expect("size fits");
    let warped = warp_plane(source.plane(0), flow.plane(0), flow.plane(1), h, w);
    let mut photometric = T::zero();
    let mut dwarp = vec![T::zero(); h * w];
    for ((d, &a), &b) in dwarp.iter_mut().zip(&warped).zip(target.plane(0)) {
        let r = a - b;
        photometric += r.abs();
        *d = sign(r) / n;
    }
    let (du, dv, _) = warp_plane_backward(source.plane(0), flow.plane(0), flow.plane(1), h, w, &dwarp, false);
    let (tv, mut grad) = total_variation_tensor(flow);
    grad.scale(lambda3);
    for (g, d) in grad.data.iter_mut().zip(du.into_iter().chain(dv)) {
        *g += d;
    }
    (photometric / n + lambda3 * tv, grad)
}

pub fn level_loss(source: &Frame, target: &Frame, flow: &FlowField, lambda3: f64) -> Result<f64> {
    if source.dims() != flow.dims() || target.dims() != flow.dims() {
        return Err(Error::shape("level loss inputs differ in size"));
    }
    let (h, w) = flow.dims();
    let s = Tensor::from_vec(1, h, w, source.luma().to_vec())?;
    let t = Tensor::from_vec(1, h, w, target.luma().to_vec())?;
    Ok(level_loss_tensor(&s, &t, flow.tensor(), lambda3).0)
}

/// Inputs of one level for one neighbour: the neighbour frame, the centre
/// frame and the estimated flow from the neighbour to the centre.
#[derive(Debug, Clone, Copy)]
pub struct LevelInputs<'a> {
    pub source: &'a Frame,
    pub target: &'a Frame,
    pub flow: &'a FlowField,
}

/// The three levels of one neighbour, finest first.
#[derive(Debug, Clone, Copy)]
pub struct NeighborLevels<'a> {
    pub hr: LevelInputs<'a>,
    pub lr: LevelInputs<'a>,
    pub half: LevelInputs<'a>,
}

/// Per-level coefficient of each neighbour's `(level 3, level 2, level 1)`
/// losses inside the flow loss for temporal radius `radius`.
pub fn level_coefficients(weights: &LossWeights, radius: usize) -> [f64; 3] {
    let k = 1.0 / (2 * radius) as f64;
    [k, weights.lambda2 * k, weights.lambda1 * k]
}

/// Combines per-neighbour `(level 3, level 2, level 1)` values, normalising
/// by the `2N` neighbours of a full window.
pub fn combine_levels(per_neighbor: &[[f64; 3]], weights: &LossWeights, radius: usize) -> f64 {
    let c = level_coefficients(weights, radius);
    per_neighbor
        .iter()
        .map(|l| c[0] * l[0] + c[1] * l[1] + c[2] * l[2])
        .sum()
}

/// Flow loss over the `2N` neighbours of a clip.
pub fn ofr_loss(neighbors: &[NeighborLevels<'_>], weights: &LossWeights, radius: usize) -> Result<f64> {
    if neighbors.len() != 2 * radius || radius == 0 {
        return Err(Error::invalid(format!(
            "{} neighbours supplied for radius {radius}",
            neighbors.len()
        )));
    }
    let per: Vec<[f64; 3]> = neighbors
        .iter()
        .map(|n| {
            let l = |i: &LevelInputs<'_>| level_loss(i.source, i.target, i.flow, weights.lambda3);
            Ok([l(&n.hr)?, l(&n.lr)?, l(&n.half)?])
        })
        .collect::<Result<_>>()?;
    Ok(combine_levels(&per, weights, radius))
}

pub fn total_loss(sr: f64, ofr: f64, weights: &LossWeights) -> f64 {
    sr + weights.lambda4 * ofr
}
