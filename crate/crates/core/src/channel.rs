//! Multipath OFDM channel simulator.
//!
//! Each UE–AP link is a superposition of multipath components
//! `h(f) = Σ α_l · a(φ_l, θ_l, f) · exp(−j2π f τ_l)`, observed with a unit
//! pilot and additive circularly symmetric Gaussian noise. Stored features
//! are therefore noisy channel estimates.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiSample, Dataset, Location, TensorDims};
use crate::rng::{substream, Purpose};
use crate::{Error, Result};

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mpc {
    pub alpha: Complex64,
    /// Delay in seconds.
    pub tau: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Complex element gain sampled on a regular `[azimuth][elevation][frequency]` grid.
///
/// Lookups snap to the nearest grid point on each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTable {
    pub azimuths: Vec<f64>,
    pub elevations: Vec<f64>,
    pub freqs: Vec<f64>,
    pub gains_re: Vec<f64>,
    pub gains_im: Vec<f64>,
}

fn nearest(grid: &[f64], v: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

impl PatternTable {
    fn validate(&self) -> Result<()> {
        let n = self.azimuths.len() * self.elevations.len() * self.freqs.len();
        if n == 0 || self.gains_re.len() != n || self.gains_im.len() != n {
            return Err(Error::Config(format!(
                "pattern table needs {n} > 0 gains, got {} re / {} im",
                self.gains_re.len(),
                self.gains_im.len()
            )));
        }
        Ok(())
    }

    pub fn gain(&self, azimuth: f64, elevation: f64, freq: f64) -> Complex64 {
        let a = nearest(&self.azimuths, azimuth);
        let e = nearest(&self.elevations, elevation);
        let f = nearest(&self.freqs, freq);
        let k = (a * self.elevations.len() + e) * self.freqs.len() + f;
        Complex64::new(self.gains_re[k], self.gains_im[k])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AntennaPattern {
    #[default]
    Isotropic,
    /// One table per RX element; element `j` uses `elements[j % len]`.
    Tabulated { elements: Vec<PatternTable> },
}

impl AntennaPattern {
    pub fn gain(&self, element: usize, azimuth: f64, elevation: f64, freq: f64) -> Complex64 {
        match self {
            AntennaPattern::Isotropic => Complex64::new(1.0, 0.0),
            AntennaPattern::Tabulated { elements } => {
                elements[element % elements.len()].gain(azimuth, elevation, freq)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AntennaPattern::Isotropic => Ok(()),
            AntennaPattern::Tabulated { elements } if elements.is_empty() => {
                Err(Error::Config("tabulated pattern without elements".into()))
            }
            AntennaPattern::Tabulated { elements } => elements.iter().try_for_each(PatternTable::validate),
        }
    }
}

/// Frequency response of element 0 of `pattern`.
pub fn channel_response(mpcs: &[Mpc], pattern: &AntennaPattern, freq: f64) -> Complex64 {
    channel_response_element(mpcs, pattern, 0, freq)
}

pub fn channel_response_element(mpcs: &[Mpc], pattern: &AntennaPattern, element: usize, freq: f64) -> Complex64 {
    mpcs.iter()
        .map(|p| {
            let a = pattern.gain(element, p.azimuth, p.elevation, freq);
            p.alpha * a * Complex64::from_polar(1.0, -2.0 * PI * freq * p.tau)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Area {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

fn default_env_tag() -> String {
    "synthetic".into()
}
fn default_tau_max() -> f64 {
    60e-9
}
fn default_decay() -> f64 {
    20e-9
}
fn default_path_loss_exponent() -> f64 {
    2.0
}
fn default_scatter_gain_db() -> f64 {
    -6.0
}
fn default_los() -> bool {
    true
}

/// Subcarrier frequencies, either listed or on a uniform grid around a center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subcarriers {
    List(Vec<f64>),
    Grid { center_hz: f64, spacing_hz: f64 },
}

/// Synthetic measurement campaign.
///
/// UE positions are uniform over `area`. Per (sample, AP) the channel has
/// an optional geometric LOS path (delay `d/c`, amplitude `(1 m / d)^(γ/2)`)
/// plus `L` scattered paths with excess delay `U[0, tau_max]`, power
/// `scatter_gain · (1 m / d)^γ · exp(−excess / decay)` and uniform phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dims: TensorDims,
    #[serde(default = "default_env_tag")]
    pub env_tag: String,
    pub ap_positions: Vec<[f64; 2]>,
    pub area: Area,
    pub subcarriers: Subcarriers,
    /// Inclusive range for the number of scattered paths.
    pub mpc_count: [usize; 2],
    pub noise_variance: f64,
    #[serde(default)]
    pub pattern: AntennaPattern,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_los")]
    pub los: bool,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_path_loss_exponent")]
    pub path_loss_exponent: f64,
    #[serde(default = "default_scatter_gain_db")]
    pub scatter_gain_db: f64,
}

impl Scenario {
    /// A square room with `n_ap` APs spread evenly on its walls and a
    /// 20 MHz baseband subcarrier grid.
    pub fn room(dims: TensorDims, side_m: f64, seed: u64) -> Scenario {
        let n_ap = dims.n_ap();
        let ap_positions = (0..n_ap)
            .map(|k| {
                // walk the perimeter starting at a corner
                let t = k as f64 / n_ap as f64 * 4.0;
                let (edge, frac) = (t.floor() as usize, t.fract());
                match edge {
                    0 => [frac * side_m, 0.0],
                    1 => [side_m, frac * side_m],
                    2 => [side_m - frac * side_m, side_m],
                    _ => [0.0, side_m - frac * side_m],
                }
            })
            .collect();
        Scenario {
            dims,
            env_tag: default_env_tag(),
            ap_positions,
            area: Area { x_min: 0.5, x_max: side_m - 0.5, y_min: 0.5, y_max: side_m - 0.5 },
            subcarriers: Subcarriers::Grid {
                center_hz: 0.0,
                spacing_hz: 20e6 / dims.n_subcarriers() as f64,
            },
            mpc_count: [2, 6],
            noise_variance: 0.0,
            pattern: AntennaPattern::Isotropic,
            seed,
            los: true,
            tau_max: default_tau_max(),
            decay: default_decay(),
            path_loss_exponent: default_path_loss_exponent(),
            scatter_gain_db: default_scatter_gain_db(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn subcarrier_freqs(&self) -> Vec<f64> {
        match &self.subcarriers {
            Subcarriers::List(v) => v.clone(),
            Subcarriers::Grid { center_hz, spacing_hz } => {
                let m = self.dims.n_subcarriers();
                (0..m)
                    .map(|i| center_hz + (i as f64 - (m as f64 - 1.0) / 2.0) * spacing_hz)
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ap_positions.len() != self.dims.n_ap() {
            return Err(Error::Config(format!(
                "{} AP positions for N_AP={}",
                self.ap_positions.len(),
                self.dims.n_ap()
            )));
        }
        let freqs = self.subcarrier_freqs();
        if freqs.len() != self.dims.n_subcarriers() {
            return Err(Error::Config(format!(
                "{} subcarrier frequencies for M={}",
                freqs.len(),
                self.dims.n_subcarriers()
            )));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) || freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config("subcarrier frequencies must be finite and strictly increasing".into()));
        }
        if !(self.area.width() > 0.0 && self.area.height() > 0.0) {
            return Err(Error::Config("area must have positive width and height".into()));
        }
        if self.mpc_count[0] > self.mpc_count[1] {
            return Err(Error::Config(format!("empty MPC count range {:?}", self.mpc_count)));
        }
        if !self.los && self.mpc_count[1] == 0 {
            return Err(Error::Config("NLOS scenario needs at least one scattered path".into()));
        }
        if !(self.noise_variance >= 0.0) || !(self.tau_max >= 0.0) || !(self.decay > 0.0) {
            return Err(Error::Config("noise_variance and tau_max must be ≥ 0, decay > 0".into()));
        }
        self.pattern.validate()
    }

    /// Average per-entry channel power `E|h|²`, estimated over noiseless draws.
    pub fn mean_signal_power(&self, n_probe: usize) -> f64 {
        let freqs = self.subcarrier_freqs();
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n_probe {
            let draw = draw_sample(self, i as u64);
            for mpcs in &draw.mpcs {
                for rx in 0..self.dims.n_rx() {
                    for &f in &freqs {
                        total += channel_response_element(mpcs, &self.pattern, rx, f).norm_sqr();
                        count += 1;
                    }
                }
            }
        }
        total / count.max(1) as f64
    }

    /// Sets the noise variance for the requested average SNR.
    pub fn with_snr_db(mut self, snr_db: f64) -> Scenario {
        let p = self.mean_signal_power(256);
        self.noise_variance = p / 10f64.powf(snr_db / 10.0);
        self
    }
}

/// The random draws behind one synthesized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub location: Location,
    /// Paths per AP.
    pub mpcs: Vec<Vec<Mpc>>,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn draw_with<R: Rng>(scenario: &Scenario, rng: &mut R) -> SampleDraw {
    let a = &scenario.area;
    let location = Location::new(uniform(rng, a.x_min, a.x_max), uniform(rng, a.y_min, a.y_max));
    let gamma = scenario.path_loss_exponent;
    let scatter_gain = 10f64.powf(scenario.scatter_gain_db / 10.0);
    let mpcs = scenario
        .ap_positions
        .iter()
        .map(|ap| {
            let (dx, dy) = (location.x - ap[0], location.y - ap[1]);
            let d = dx.hypot(dy).max(0.1);
            let tau0 = d / SPEED_OF_LIGHT;
            let path_gain = d.powf(-gamma);
            let mut paths = Vec::new();
            if scenario.los {
                paths.push(Mpc {
                    alpha: Complex64::new(path_gain.sqrt(), 0.0),
                    tau: tau0,
                    azimuth: dy.atan2(dx),
                    elevation: 0.0,
                });
            }
            let l = rng.random_range(scenario.mpc_count[0]..=scenario.mpc_count[1]);
            for _ in 0..l {
                let excess = uniform(rng, 0.0, scenario.tau_max);
                let power = scatter_gain * path_gain * (-excess / scenario.decay).exp();
                let phase = uniform(rng, 0.0, 2.0 * PI);
                paths.push(Mpc {
                    alpha: Complex64::from_polar(power.sqrt(), phase),
                    tau: tau0 + excess,
                    azimuth: uniform(rng, -PI, PI),
                    elevation: uniform(rng, -PI / 2.0, PI / 2.0),
                });
            }
            paths
        })
        .collect();
    SampleDraw { location, mpcs }
}

/// Location and paths of sample `index`, exactly as [`synthesize_dataset`] draws them.
pub fn draw_sample(scenario: &Scenario, index: u64) -> SampleDraw {
    let mut rng = substream(scenario.seed, Purpose::Synthesis, index);
    draw_with(scenario, &mut rng)
}

fn synthesize_sample(scenario: &Scenario, freqs: &[f64], index: u64) -> CsiSample {
    let mut rng = substream(scenario.seed, Purpose::Synthesis, index);
    let draw = draw_with(scenario, &mut rng);
    let dims = scenario.dims;
    let noise_std = (scenario.noise_variance / 2.0).sqrt();
    let mut csi = Vec::with_capacity(dims.entries());
    for mpcs in &draw.mpcs {
        for rx in 0..dims.n_rx() {
            for &f in freqs {
                let h = channel_response_element(mpcs, &scenario.pattern, rx, f);
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let y = h + Complex64::new(re, im) * noise_std;
                csi.push(Complex32::new(y.re as f32, y.im as f32));
            }
        }
    }
    CsiSample::new(csi, draw.location)
}

/// Draws `n_samples` labelled samples; sample `i` depends only on `(seed, i)`.
pub fn synthesize_dataset(scenario: &Scenario, n_samples: usize) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be positive".into()));
    }
    scenario.validate()?;
    let freqs = scenario.subcarrier_freqs();
    let samples: Vec<CsiSample> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| synthesize_sample(scenario, &freqs, i))
        .collect();
    Ok(Dataset::new(scenario.dims, scenario.env_tag.clone(), samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseDrift {
    #[default]
    None,
    /// Independent `U[0, 2π)` offset per AP.
    Uniform,
}

/// Transceiver impairments applied per sample and per AP.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NonidealityProfile {
    #[serde(default)]
    pub phase_drift: PhaseDrift,
    /// Half-width `G` of the uniform `[−G, G]` dB gain offset; `None` disables it.
    #[serde(default)]
    pub gain_drift_db: Option<f64>,
}

impl NonidealityProfile {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn phase() -> Self {
        Self { phase_drift: PhaseDrift::Uniform, gain_drift_db: None }
    }

    pub fn gain(max_db: f64) -> Self {
        Self { phase_drift: PhaseDrift::None, gain_drift_db: Some(max_db) }
    }

    pub fn validate(&self) -> Result<()> {
        match self.gain_drift_db {
            Some(g) if !(g >= 0.0 && g.is_finite()) => {
                Err(Error::Config(format!("gain drift must be finite and ≥ 0 dB, got {g}")))
            }
            _ => Ok(()),
        }
    }

    /// Short label used to tag report rows.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.phase_drift == PhaseDrift::Uniform {
            parts.push("phase-drift".to_string());
        }
        if let Some(g) = self.gain_drift_db {
            parts.push(format!("gain-drift-{g}dB"));
        }
        if parts.is_empty() {
            "clean".into()
        } else {
            parts.join("+")
        }
    }
}

/// Multiplies each AP block of every sample by `e^{jθ_k} · 10^{g_k/20}`.
pub fn apply_nonideality(dataset: &Dataset, profile: &NonidealityProfile, seed: u64) -> Result<Dataset> {
    profile.validate()?;
    let phase = profile.phase_drift == PhaseDrift::Uniform;
    let gain = profile.gain_drift_db;
    if !phase && gain.is_none() {
        return Ok(dataset.clone());
    }
    let dims = *dataset.dims();
    let samples = dataset
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = substream(seed, Purpose::Nonideality, i as u64);
            let thetas: Vec<f64> = (0..dims.n_ap())
                .map(|_| if phase { rng.random::<f64>() * 2.0 * PI } else { 0.0 })
                .collect();
            let gains_db: Vec<f64> = (0..dims.n_ap())
                .map(|_| match gain {
                    Some(g) => (2.0 * rng.random::<f64>() - 1.0) * g,
                    None => 0.0,
                })
                .collect();
            let block = dims.ap_block_len();
            let csi = s
                .csi
                .iter()
                .enumerate()
                .map(|(k, z)| {
                    let ap = k / block;
                    let factor = Complex64::from_polar(10f64.powf(gains_db[ap] / 20.0), thetas[ap]);
                    let y = Complex64::new(z.re as f64, z.im as f64) * factor;
                    Complex32::new(y.re as f32, y.im as f32)
                })
                .collect();
            CsiSample::new(csi, s.label)
        })
        .collect();
    Ok(Dataset::new(dims, dataset.env_tag(), samples))
}
