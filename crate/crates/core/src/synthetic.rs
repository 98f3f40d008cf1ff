//! Procedural clips whose frames are exact sub-pixel translations of a
//! continuous texture, so the true optical flow is known.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::degradation::degrade_bi;
use crate::error::{Error, Result};
use crate::flow_ops::{FlowField, FlowLevel};
use crate::frames::{gray_to_luma, Frame};
use crate::trainer::SequencePair;

/// 64-bit mix of a lattice point and a seed.
fn hash(seed: u64, ix: i64, iy: i64) -> u64 {
    let mut z = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    (hash(seed, ix, iy) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

#[derive(Debug, Clone, PartialEq)]
struct Octave {
    seed: u64,
    spacing: f64,
    amplitude: f64,
}

impl Octave {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.spacing, y / self.spacing);
        let (ix, iy) = (gx.floor(), gy.floor());
        let (tx, ty) = (fade(gx - ix), fade(gy - iy));
        let (ix, iy) = (ix as i64, iy as i64);
        let v00 = lattice(self.seed, ix, iy);
        let v01 = lattice(self.seed, ix + 1, iy);
        let v10 = lattice(self.seed, ix, iy + 1);
        let v11 = lattice(self.seed, ix + 1, iy + 1);
        let top = v00 + tx * (v01 - v00);
        let bottom = v10 + tx * (v11 - v10);
        self.amplitude * (top + ty * (bottom - top))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Disk {
    cx: f64,
    cy: f64,
    radius: f64,
    amplitude: f64,
}

/// Multi-octave value noise plus soft-edged disks, defined on the plane in
/// HR pixel units with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    octaves: Vec<Octave>,
    disks: Vec<Disk>,
    /// Disk centres repeat with this period in both axes.
    period: f64,
    gain: f64,
}

impl Texture {
    /// `finest_spacing` is the lattice spacing of the highest octave in HR
    /// pixels; coarser octaves double it.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, finest_spacing: f64) -> Self {
        let octaves: Vec<Octave> = (0..4)
            .map(|k| Octave {
                seed: rng.gen(),
                spacing: finest_spacing * f64::from(1u32 << k),
                amplitude: 0.75f64.powi(3 - k),
            })
            .collect();
        let period = 64.0;
        let disks = (0..6)
            .map(|_| Disk {
                cx: rng.gen_range(0.0..period),
                cy: rng.gen_range(0.0..period),
                radius: rng.gen_range(2.0..10.0),
                amplitude: rng.gen_range(-0.6..0.6),
            })
            .collect();
        let gain = rng.gen_range(0.25..0.45);
        Self {
            octaves,
            disks,
            period,
            gain,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v: f64 = self.octaves.iter().map(|o| o.eval(x, y)).sum();
        for d in &self.disks {
            let wrap = |a: f64| a - self.period * (a / self.period).round();
            let r = (wrap(x - d.cx).powi(2) + wrap(y - d.cy).powi(2)).sqrt();
            // one-pixel wide smooth edge
            let t = (d.radius + 0.5 - r).clamp(0.0, 1.0);
            v += d.amplitude * t * t * (3.0 - 2.0 * t);
        }
        (0.5 + self.gain * v).clamp(0.0, 1.0)
    }
}

/// A clip translated by `shift` LR pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftClip {
    pub lr: Vec<Frame>,
    pub hr: Vec<Frame>,
    /// `(dx, dy)` in LR pixels per frame.
    pub shift: (f64, f64),
    pub scale: usize,
}

impl ShiftClip {
    /// Renders `frames` frames; frame `t` samples the texture at `p - t * shift`,
    /// so content moves by `shift` each frame. LR frames are bicubic
    /// downsamplings of the HR frames.
    pub fn render(texture: &Texture, frames: usize, lr_size: (usize, usize), scale: usize, shift: (f64, f64)) -> Result<Self> {
        if frames == 0 || lr_size.0 == 0 || lr_size.1 == 0 || scale == 0 {
            return Err(Error::invalid("empty synthetic clip"));
        }
        let (h, w) = (lr_size.0 * scale, lr_size.1 * scale);
        let s = scale as f64;
        let hr: Vec<Frame> = (0..frames)
            .map(|t| {
                let (ox, oy) = (t as f64 * shift.0 * s, t as f64 * shift.1 * s);
                Frame::from_fn(h, w, |y, x| gray_to_luma(texture.eval(x as f64 - ox, y as f64 - oy)))
            })
            .collect();
        let lr = hr.iter().map(|f| degrade_bi(f, scale)).collect::<Result<_>>()?;
        Ok(Self { lr, hr, shift, scale })
    }

    /// Exact HR flow from frame `source` to frame `target`, in HR pixels.
    pub fn hr_flow(&self, source: usize, target: usize) -> FlowField {
        let (h, w) = self.hr[0].dims();
        let k = (source as f64 - target as f64) * self.scale as f64;
        FlowField::constant(FlowLevel::Hr, h, w, k * self.shift.0, k * self.shift.1)
    }

    pub fn into_pair(self) -> SequencePair {
        SequencePair { lr: self.lr, hr: self.hr }
    }
}

/// Settings of a synthetic translation dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSet {
    pub clips: usize,
    pub frames: usize,
    pub lr_size: (usize, usize),
    pub scale: usize,
    /// Upper bound on the per-frame shift magnitude in LR pixels.
    pub max_shift: f64,
    /// Lattice spacing of the finest noise octave in HR pixels.
    pub finest_spacing: f64,
    pub seed: u64,
}

impl ShiftSet {
    /// Shifts are drawn uniformly over the disk of radius `max_shift`.
    pub fn generate(&self) -> Result<Vec<ShiftClip>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.clips)
            .map(|_| {
                let texture = Texture::random(&mut rng, self.finest_spacing);
                let r = self.max_shift * rng.gen_range(0.0f64..1.0).sqrt();
                let a = rng.gen_range(0.0..2.0 * PI);
                ShiftClip::render(&texture, self.frames, self.lr_size, self.scale, (r * a.cos(), r * a.sin()))
            })
            .collect()
    }
}
