#![allow(dead_code)]

use csi_aug::channel::Scenario;
use csi_aug::csi::{CsiSample, Dataset, Location, TensorDims};
use num_complex::Complex32;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dataset with entries uniform in `[-1, 1]²` and labels in `[0, 10]²`.
pub fn random_dataset(dims: TensorDims, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let csi = (0..dims.entries())
                .map(|_| Complex32::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
                .collect();
            CsiSample::new(csi, Location::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
        })
        .collect();
    Dataset::new(dims, "rand", samples)
}

pub fn dims_strategy(max_m: usize, max_r: usize, max_k: usize) -> impl Strategy<Value = TensorDims> {
    (1..=max_m, 1..=max_r, 1..=max_k).prop_map(|(m, r, k)| TensorDims::new(m, r, k).unwrap())
}

pub fn dataset_strategy(max_m: usize, max_r: usize, max_k: usize, max_n: usize) -> impl Strategy<Value = Dataset> {
    (dims_strategy(max_m, max_r, max_k), 1..=max_n, any::<u64>())
        .prop_map(|(dims, n, seed)| random_dataset(dims, n, seed))
}

pub fn same_bits(a: &Dataset, b: &Dataset) -> bool {
    a.dims() == b.dims()
        && a.env_tag() == b.env_tag()
        && a.len() == b.len()
        && a.samples().iter().zip(b.samples()).all(|(x, y)| sample_bits(x) == sample_bits(y))
}

pub fn sample_bits(s: &CsiSample) -> (Vec<(u32, u32)>, u64, u64) {
    (
        s.csi.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect(),
        s.label.x.to_bits(),
        s.label.y.to_bits(),
    )
}

/// Square 10 m room, four APs on the walls, 32 subcarriers, two antennas.
pub fn room_32_2_4(seed: u64) -> Scenario {
    Scenario::room(TensorDims::new(32, 2, 4).unwrap(), 10.0, seed)
}

/// Runs `f` inside a dedicated rayon pool.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}
