//! Training-set augmentation.
//!
//! All methods grow a dataset of `N` samples to `N★` samples: the originals
//! come first, unchanged and in order, followed by `N★ − N` transformed
//! copies. Augmented sample `a` (0-based) is derived from original
//! `a mod N`, and its random draws come from substream `a` of the plan seed.
//!
//! - **phase**: one `θ_k ~ U[0, 2π)` per AP; every entry of AP `k` is
//!   multiplied by `e^{jθ_k}` (shared by all antennas and subcarriers).
//! - **amplitude**: one `P_k ~ U[−P★, P★]` dB per AP; every entry of AP `k`
//!   is scaled by `10^{P_k/20}`.
//! - **noise**: every entry gets an independent `CN(0, σ²)` draw added.
//!
//! Labels are always copied verbatim. The transforms are policy-free: keeping
//! augmented samples out of test sets is the caller's job.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiSample, Dataset, TensorDims};
use crate::rng::{substream, Purpose};
use crate::{Error, Result};

pub const DEFAULT_NOISE_VARIANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMethod {
    Phase,
    Amplitude,
    Noise,
}

impl AugmentMethod {
    pub fn name(self) -> &'static str {
        match self {
            AugmentMethod::Phase => "phase",
            AugmentMethod::Amplitude => "amplitude",
            AugmentMethod::Noise => "noise",
        }
    }

    fn purpose(self) -> Purpose {
        match self {
            AugmentMethod::Phase => Purpose::AugmentPhase,
            AugmentMethod::Amplitude => Purpose::AugmentAmplitude,
            AugmentMethod::Noise => Purpose::AugmentNoise,
        }
    }
}

impl fmt::Display for AugmentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(AugmentMethod::Phase),
            "amplitude" => Ok(AugmentMethod::Amplitude),
            "noise" => Ok(AugmentMethod::Noise),
            other => Err(Error::Config(format!("unknown augmentation method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub method: AugmentMethod,
    /// `N★`, the size of the augmented dataset.
    pub target_size: usize,
    /// `P★` in dB; required by the amplitude method.
    pub p_star_db: Option<f64>,
    pub noise_variance: f64,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn new(method: AugmentMethod, target_size: usize, seed: u64) -> Self {
        Self { method, target_size, p_star_db: None, noise_variance: DEFAULT_NOISE_VARIANCE, seed }
    }

    pub fn phase(target_size: usize, seed: u64) -> Self {
        Self::new(AugmentMethod::Phase, target_size, seed)
    }

    pub fn amplitude(target_size: usize, p_star_db: f64, seed: u64) -> Self {
        Self { p_star_db: Some(p_star_db), ..Self::new(AugmentMethod::Amplitude, target_size, seed) }
    }

    pub fn noise(target_size: usize, noise_variance: f64, seed: u64) -> Self {
        Self { noise_variance, ..Self::new(AugmentMethod::Noise, target_size, seed) }
    }

    /// `N★ = round(multiple · N)`.
    pub fn target_for_multiple(multiple: f64, source_len: usize) -> Result<usize> {
        if !(multiple >= 1.0) || !multiple.is_finite() {
            return Err(Error::Precondition(format!("multiple must be ≥ 1, got {multiple}")));
        }
        Ok((multiple * source_len as f64).round() as usize)
    }

    fn check(&self, source_len: usize) -> Result<()> {
        if source_len == 0 {
            return Err(Error::Precondition("cannot augment an empty dataset".into()));
        }
        if self.target_size < source_len {
            return Err(Error::Precondition(format!(
                "target size {} is smaller than the source size {source_len}",
                self.target_size
            )));
        }
        match self.method {
            AugmentMethod::Amplitude => match self.p_star_db {
                None => Err(Error::Config("amplitude augmentation needs P★ (p_star_db)".into())),
                Some(p) if !(p >= 0.0 && p.is_finite()) => {
                    Err(Error::Config(format!("P★ must be finite and ≥ 0 dB, got {p}")))
                }
                Some(_) => Ok(()),
            },
            AugmentMethod::Noise if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) => {
                Err(Error::Config(format!("noise variance must be ≥ 0, got {}", self.noise_variance)))
            }
            _ => Ok(()),
        }
    }
}

/// The random parameters behind one augmented sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Draws {
    /// Per-AP phase offsets `θ_k` in radians.
    Phase(Vec<f64>),
    /// Per-AP gains `P_k` in dB.
    Amplitude(Vec<f64>),
    /// Per-entry additive noise, canonical entry order.
    Noise(Vec<Complex64>),
}

/// Which original sample augmented sample `augmented_index` is built from.
pub fn source_index(augmented_index: usize, source_len: usize) -> usize {
    augmented_index % source_len
}

/// Replays the draws used for augmented sample `augmented_index`
/// (0-based among the `N★ − N` new samples).
pub fn draws(plan: &AugmentPlan, dims: &TensorDims, source_len: usize, augmented_index: usize) -> Result<Draws> {
    plan.check(source_len)?;
    let n_aug = plan.target_size - source_len;
    if augmented_index >= n_aug {
        return Err(Error::Precondition(format!(
            "augmented index {augmented_index} out of range, plan adds {n_aug} samples"
        )));
    }
    Ok(draw_unchecked(plan, dims, augmented_index))
}

fn draw_unchecked(plan: &AugmentPlan, dims: &TensorDims, augmented_index: usize) -> Draws {
    let mut rng = substream(plan.seed, plan.method.purpose(), augmented_index as u64);
    match plan.method {
        AugmentMethod::Phase => {
            Draws::Phase((0..dims.n_ap()).map(|_| rng.random::<f64>() * 2.0 * PI).collect())
        }
        AugmentMethod::Amplitude => {
            let p = plan.p_star_db.unwrap_or(0.0);
            Draws::Amplitude((0..dims.n_ap()).map(|_| (2.0 * rng.random::<f64>() - 1.0) * p).collect())
        }
        AugmentMethod::Noise => {
            let std = (plan.noise_variance / 2.0).sqrt();
            Draws::Noise(
                (0..dims.entries())
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(re * std, im * std)
                    })
                    .collect(),
            )
        }
    }
}

fn widen(z: Complex32) -> Complex64 {
    Complex64::new(z.re as f64, z.im as f64)
}

fn narrow(z: Complex64) -> Complex32 {
    Complex32::new(z.re as f32, z.im as f32)
}

/// Applies a set of draws to one source sample. Arithmetic is carried out
/// in f64 and rounded once to f32 storage.
pub fn apply_draws(source: &CsiSample, dims: &TensorDims, draws: &Draws) -> CsiSample {
    let block = dims.ap_block_len();
    let csi = match draws {
        Draws::Phase(thetas) => {
            let rot: Vec<Complex64> = thetas.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
            source.csi.iter().enumerate().map(|(k, &z)| narrow(widen(z) * rot[k / block])).collect()
        }
        Draws::Amplitude(gains_db) => {
            let lin: Vec<f64> = gains_db.iter().map(|&g| 10f64.powf(g / 20.0)).collect();
            source.csi.iter().enumerate().map(|(k, &z)| narrow(widen(z) * lin[k / block])).collect()
        }
        Draws::Noise(noise) => source.csi.iter().zip(noise).map(|(&z, n)| narrow(widen(z) + n)).collect(),
    };
    CsiSample::new(csi, source.label)
}

/// Grows `dataset` to `plan.target_size` samples with `plan.method`.
pub fn augment(dataset: &Dataset, plan: &AugmentPlan) -> Result<Dataset> {
    plan.check(dataset.len())?;
    let n = dataset.len();
    let dims = *dataset.dims();
    let extra: Vec<CsiSample> = (0..plan.target_size - n)
        .into_par_iter()
        .map(|a| {
            let d = draw_unchecked(plan, &dims, a);
            apply_draws(&dataset.samples()[source_index(a, n)], &dims, &d)
        })
        .collect();
    let mut samples = Vec::with_capacity(plan.target_size);
    samples.extend_from_slice(dataset.samples());
    samples.extend(extra);
    Ok(Dataset::new(dims, dataset.env_tag(), samples))
}

fn expect_method(plan: &AugmentPlan, method: AugmentMethod) -> Result<()> {
    if plan.method != method {
        return Err(Error::Config(format!("plan method is {}, expected {method}", plan.method)));
    }
    Ok(())
}

/// Independent per-AP phase shift augmentation.
pub fn augment_phase(dataset: &Dataset, plan: &AugmentPlan) -> Result<Dataset> {
    expect_method(plan, AugmentMethod::Phase)?;
    augment(dataset, plan)
}

/// Random per-AP amplitude augmentation.
pub fn augment_amplitude(dataset: &Dataset, plan: &AugmentPlan) -> Result<Dataset> {
    expect_method(plan, AugmentMethod::Amplitude)?;
    augment(dataset, plan)
}

/// Complex Gaussian noise-injection baseline.
pub fn augment_noise(dataset: &Dataset, plan: &AugmentPlan) -> Result<Dataset> {
    expect_method(plan, AugmentMethod::Noise)?;
    augment(dataset, plan)
}
