//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a [`SeededRng`]: a ChaCha8
//! keystream keyed by a 64-bit seed and selected by a 64-bit stream index.
//! Gaussian variates use the ziggurat sampler of `rand_distr`, so a given
//! `(seed, stream)` pair produces the same sequence on every platform.
//! Independent substreams are derived with [`SeededRng::fork`], which lets
//! Monte Carlo trials run in any order without changing results.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::ComplexMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
}

impl SeededRng {
    /// Identifier recorded in manifests.
    pub const ALGORITHM: &'static str = "chacha8+ziggurat";

    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derives an independent substream identified by `label`.
    pub fn fork(&self, label: u64) -> Self {
        let stream = splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        Self {
            seed: self.seed,
            stream,
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Circularly-symmetric complex normal with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. `CN(0, 1)` entries, filled in column-major order.
pub fn complex_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    let mut m = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_normal(rng);
        }
    }
    m
}
