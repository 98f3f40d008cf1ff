#![allow(dead_code)]

use flowsr::nn::{Params, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let d = (0..c * h * w).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(c, h, w, d).unwrap()
}

/// `|a - n| / max(|a|, |n|)` over whole vectors; 0 when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at the coordinates `idx` of `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], idx: &[usize], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    idx.iter()
        .map(|&i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        (0..len).collect()
    } else {
        (0..count).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Per parameter group `(name, relative error)` of the analytic gradient
/// `grads` of `loss` at `model`, checked on up to `samples` entries each.
pub fn check_param_groups<P: Params<f64> + Clone>(
    model: &P,
    grads: &P,
    loss: impl Fn(&P) -> f64,
    samples: usize,
    h: f64,
    seed: u64,
) -> Vec<(String, f64)> {
    let mut groups = Vec::new();
    let mut offset = 0;
    model.visit("", &mut |name, _, d| {
        groups.push((name.to_string(), offset, d.len()));
        offset += d.len();
    });
    let flat = model.flatten();
    let g = grads.flatten();
    let mut r = rng(seed);
    let mut scratch = model.clone();
    groups
        .into_iter()
        .map(|(name, start, len)| {
            let idx: Vec<usize> = sample_indices(&mut r, len, samples).into_iter().map(|i| start + i).collect();
            let numeric = central_diff(
                |p| {
                    scratch.load_flat(p);
                    loss(&scratch)
                },
                &flat,
                &idx,
                h,
            );
            let analytic: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
            (name, rel_error(&analytic, &numeric))
        })
        .collect()
}
