#![allow(dead_code)]

use ddsf_core::datamat::DataMatrices;
use ddsf_core::lti::{generate_experiment, ExperimentSpec, LtiSystem};
use ddsf_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random plant with `B_w = C = I`, entries of `A` in `[-r, r]` scaled so
/// the spectral radius is moderate, entries of `B` in `[-1, 1]`.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LtiSystem {
    let scale = 1.2 / (n as f64).sqrt();
    let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-scale..=scale));
    let b = Mat::from_fn(n, m, |_, _| rng.gen_range(-1.0..=1.0));
    LtiSystem::with_state_output(a, b, Mat::identity(n, n)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data(sys: &LtiSystem, horizon: usize, w_bar: f64, seed: u64) -> DataMatrices {
    let rec = generate_experiment(sys, &ExperimentSpec::new(horizon, 1.0, sys.m(), w_bar), seed).unwrap();
    DataMatrices::build(&rec).unwrap()
}
