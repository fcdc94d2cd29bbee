//! Shared fixtures for the benchmarks.

use wildfire_core::synthetic::{generate, SyntheticSpec};
use wildfire_core::{PatchDataset, Tensor};

/// Deterministic values in [-1, 1) without pulling in an RNG.
pub fn filled(shape: &[usize], salt: u64) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let mut x = (i as u64 ^ salt).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        x ^= x >> 29;
        (x % 2000) as f64 / 1000.0 - 1.0
    })
}

pub fn patches(count: usize, size: usize) -> PatchDataset {
    generate(&SyntheticSpec::new(count, size, &["B3", "B6", "B7", "B9"], 17)).expect("synthetic patches")
}

/// Cirrus band of a synthetic patch as a float plane.
pub fn cirrus_plane(size: usize) -> Vec<f64> {
    let d = patches(1, size);
    let p = &d.patches[0];
    p.band_plane(p.band_index("B9").expect("B9 present"))
}
