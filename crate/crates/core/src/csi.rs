//! CSI tensor data model.
//!
//! A sample holds one complex channel coefficient per (AP, RX antenna,
//! subcarrier), stored flat in `[ap][rx][subcarrier]` order so that each AP
//! owns one contiguous block of `n_rx * n_subcarriers` entries.

use std::fmt;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Complex channel coefficient (dimensionless linear gain).
pub type ComplexValue = Complex32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawDims")]
pub struct TensorDims {
    n_subcarriers: usize,
    n_rx: usize,
    n_ap: usize,
}

#[derive(Deserialize)]
struct RawDims {
    n_subcarriers: usize,
    n_rx: usize,
    n_ap: usize,
}

impl TryFrom<RawDims> for TensorDims {
    type Error = Error;

    fn try_from(raw: RawDims) -> Result<Self> {
        TensorDims::new(raw.n_subcarriers, raw.n_rx, raw.n_ap)
    }
}

impl TensorDims {
    pub fn new(n_subcarriers: usize, n_rx: usize, n_ap: usize) -> Result<Self> {
        if n_subcarriers == 0 || n_rx == 0 || n_ap == 0 {
            return Err(Error::Dimension(format!(
                "all dimensions must be positive, got M={n_subcarriers}, N_RX={n_rx}, N_AP={n_ap}"
            )));
        }
        Ok(Self { n_subcarriers, n_rx, n_ap })
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_ap(&self) -> usize {
        self.n_ap
    }

    /// Complex entries per sample, `M * N_RX * N_AP`.
    pub fn entries(&self) -> usize {
        self.n_subcarriers * self.n_rx * self.n_ap
    }

    /// Entries owned by a single AP, `M * N_RX`.
    pub fn ap_block_len(&self) -> usize {
        self.n_subcarriers * self.n_rx
    }

    /// Flat offset of `(ap, rx, subcarrier)` in canonical order.
    #[inline]
    pub fn index(&self, ap: usize, rx: usize, subcarrier: usize) -> usize {
        (ap * self.n_rx + rx) * self.n_subcarriers + subcarrier
    }
}

impl fmt::Display for TensorDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(M={}, N_RX={}, N_AP={})", self.n_subcarriers, self.n_rx, self.n_ap)
    }
}

/// UE position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub csi: Vec<ComplexValue>,
    pub label: Location,
}

impl CsiSample {
    pub fn new(csi: Vec<ComplexValue>, label: Location) -> Self {
        Self { csi, label }
    }

    /// The `M * N_RX` entries of one AP, laid out `[rx][subcarrier]`.
    pub fn slice_ap(&self, dims: &TensorDims, ap: usize) -> Result<&[ComplexValue]> {
        let range = ap_range(dims, ap, self.csi.len())?;
        Ok(&self.csi[range])
    }

    pub fn slice_ap_mut(&mut self, dims: &TensorDims, ap: usize) -> Result<&mut [ComplexValue]> {
        let range = ap_range(dims, ap, self.csi.len())?;
        Ok(&mut self.csi[range])
    }

    /// Overwrite one AP block; all other entries are left untouched.
    pub fn write_ap(&mut self, dims: &TensorDims, ap: usize, block: &[ComplexValue]) -> Result<()> {
        let dst = self.slice_ap_mut(dims, ap)?;
        if block.len() != dst.len() {
            return Err(Error::Dimension(format!(
                "AP block has {} entries, expected {}",
                block.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(block);
        Ok(())
    }

    pub fn get(&self, dims: &TensorDims, ap: usize, rx: usize, subcarrier: usize) -> ComplexValue {
        self.csi[dims.index(ap, rx, subcarrier)]
    }
}

fn ap_range(dims: &TensorDims, ap: usize, len: usize) -> Result<std::ops::Range<usize>> {
    if ap >= dims.n_ap() {
        return Err(Error::Dimension(format!(
            "AP index {ap} out of range for N_AP={}",
            dims.n_ap()
        )));
    }
    if len != dims.entries() {
        return Err(Error::Dimension(format!(
            "sample has {len} entries, dims {dims} require {}",
            dims.entries()
        )));
    }
    let block = dims.ap_block_len();
    Ok(ap * block..(ap + 1) * block)
}

/// One broken invariant found by [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `None` for dataset-level violations.
    pub sample: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sample {
            Some(i) => write!(f, "sample {i}, {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Ordered collection of labelled samples sharing one tensor shape.
///
/// Immutable once built; transforms produce new datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dims: TensorDims,
    env_tag: String,
    samples: Vec<CsiSample>,
}

impl Dataset {
    /// Builds without checking; use [`Dataset::validate`] or [`Dataset::check`].
    pub fn new(dims: TensorDims, env_tag: impl Into<String>, samples: Vec<CsiSample>) -> Self {
        Self { dims, env_tag: env_tag.into(), samples }
    }

    pub fn dims(&self) -> &TensorDims {
        &self.dims
    }

    pub fn env_tag(&self) -> &str {
        &self.env_tag
    }

    pub fn samples(&self) -> &[CsiSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<CsiSample> {
        self.samples
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(self.dims, self.env_tag.clone(), samples)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        if self.samples.is_empty() {
            violations.push(Violation {
                sample: None,
                field: "samples",
                message: "N ≥ 1 required, dataset is empty".into(),
            });
        }
        let expected = self.dims.entries();
        for (i, s) in self.samples.iter().enumerate() {
            if s.csi.len() != expected {
                violations.push(Violation {
                    sample: Some(i),
                    field: "csi",
                    message: format!("{} entries, dims {} require {expected}", s.csi.len(), self.dims),
                });
            }
            if let Some(pos) = s.csi.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
                violations.push(Violation {
                    sample: Some(i),
                    field: "csi",
                    message: format!("non-finite entry at flat index {pos}: {}", s.csi[pos]),
                });
            }
            if !s.label.is_finite() {
                violations.push(Violation {
                    sample: Some(i),
                    field: "label",
                    message: format!("non-finite location ({}, {})", s.label.x, s.label.y),
                });
            }
        }
        violations
    }

    /// [`Dataset::validate`] folded into an error carrying the first few violations.
    pub fn check(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            return Ok(());
        }
        let shown: Vec<String> = violations.iter().take(5).map(ToString::to_string).collect();
        Err(Error::Invalid(format!(
            "{} violation(s): {}",
            violations.len(),
            shown.join("; ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(dims: TensorDims, n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let csi = (0..dims.entries())
                    .map(|k| Complex32::new(k as f32, i as f32))
                    .collect();
                CsiSample::new(csi, Location::new(i as f64, -(i as f64)))
            })
            .collect();
        Dataset::new(dims, "synthetic", samples)
    }

    #[test]
    fn dims_reject_zero() {
        assert!(TensorDims::new(0, 1, 1).is_err());
        assert!(TensorDims::new(1, 0, 1).is_err());
        assert!(TensorDims::new(1, 1, 0).is_err());
        assert_eq!(TensorDims::new(234, 4, 4).unwrap().entries(), 3744);
    }

    #[test]
    fn conforming_dataset_is_ok() {
        let ds = dataset(TensorDims::new(4, 2, 3).unwrap(), 10);
        assert!(ds.validate().is_empty());
        assert!(ds.check().is_ok());
    }

    #[test]
    fn nan_imaginary_part_is_reported_at_its_sample() {
        let ds = dataset(TensorDims::new(4, 2, 3).unwrap(), 10);
        let mut samples = ds.into_samples();
        samples[7].csi[5].im = f32::NAN;
        let ds = Dataset::new(TensorDims::new(4, 2, 3).unwrap(), "x", samples);
        let v = ds.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].sample, Some(7));
        assert_eq!(v[0].field, "csi");
    }

    #[test]
    fn empty_dataset_is_reported() {
        let ds = Dataset::new(TensorDims::new(1, 1, 1).unwrap(), "x", vec![]);
        let v = ds.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].sample, None);
        assert!(v[0].message.contains("N ≥ 1"));
    }

    #[test]
    fn wrong_length_and_bad_label_are_reported() {
        let dims = TensorDims::new(2, 1, 1).unwrap();
        let ds = Dataset::new(
            dims,
            "x",
            vec![
                CsiSample::new(vec![Complex32::new(0.0, 0.0); 3], Location::new(0.0, 0.0)),
                CsiSample::new(vec![Complex32::new(0.0, 0.0); 2], Location::new(f64::INFINITY, 0.0)),
            ],
        );
        let v = ds.validate();
        assert_eq!(v.len(), 2);
        assert_eq!((v[0].sample, v[0].field), (Some(0), "csi"));
        assert_eq!((v[1].sample, v[1].field), (Some(1), "label"));
    }

    #[test]
    fn slice_ap_returns_only_that_ap() {
        let dims = TensorDims::new(2, 1, 2).unwrap();
        let s = CsiSample::new(
            (0..4).map(|k| Complex32::new(k as f32, 0.0)).collect(),
            Location::default(),
        );
        let block = s.slice_ap(&dims, 1).unwrap();
        assert_eq!(block, &[Complex32::new(2.0, 0.0), Complex32::new(3.0, 0.0)]);
        assert!(matches!(s.slice_ap(&dims, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn write_back_leaves_other_aps_bit_identical() {
        let dims = TensorDims::new(3, 2, 2).unwrap();
        let mut s = dataset(dims, 1).into_samples().remove(0);
        let before: Vec<(u32, u32)> = s
            .slice_ap(&dims, 0)
            .unwrap()
            .iter()
            .map(|z| (z.re.to_bits(), z.im.to_bits()))
            .collect();
        let mut block = s.slice_ap(&dims, 1).unwrap().to_vec();
        for z in &mut block {
            *z *= Complex32::new(0.0, 1.0);
        }
        s.write_ap(&dims, 1, &block).unwrap();
        let after: Vec<(u32, u32)> = s
            .slice_ap(&dims, 0)
            .unwrap()
            .iter()
            .map(|z| (z.re.to_bits(), z.im.to_bits()))
            .collect();
        assert_eq!(before, after);
        assert_eq!(s.slice_ap(&dims, 1).unwrap(), block.as_slice());
        assert!(s.write_ap(&dims, 0, &block[..2]).is_err());
    }

    #[test]
    fn ap_slices_partition_entries() {
        // brute-force enumeration over small shapes
        for m in 1..4 {
            for rx in 1..4 {
                for ap in 1..4 {
                    let dims = TensorDims::new(m, rx, ap).unwrap();
                    let s = CsiSample::new(
                        (0..dims.entries()).map(|k| Complex32::new(k as f32, 0.0)).collect(),
                        Location::default(),
                    );
                    let mut seen = vec![0usize; dims.entries()];
                    for k in 0..ap {
                        for z in s.slice_ap(&dims, k).unwrap() {
                            seen[z.re as usize] += 1;
                        }
                        for r in 0..rx {
                            for sc in 0..m {
                                let flat = dims.index(k, r, sc);
                                assert!(flat >= k * dims.ap_block_len());
                                assert!(flat < (k + 1) * dims.ap_block_len());
                            }
                        }
                    }
                    assert!(seen.iter().all(|&c| c == 1));
                }
            }
        }
    }
}
