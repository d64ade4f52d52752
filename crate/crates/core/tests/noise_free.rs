//! With noise-free, persistently exciting data the data-driven design must
//! recover the model-based optimum.

mod common;

use ddsf_core::datamat::{is_persistently_exciting, DATA_RANK_TOL};
use ddsf_core::noise::DisturbanceSet;
use ddsf_core::synth::{hinf_optimize, KnownMatrices, SynthOptions};
use ddsf_core::verify::{analysis_solver_options, nominal_hinf_baseline, ClosedLoop, hinf_norm_fast};
use ddsf_core::Error;
use rand::Rng;

const SET_BOUND: f64 = 1e-9;
const RELATIVE_GAP: f64 = 0.02;

#[test]
fn certified_level_matches_the_nominal_baseline() {
    let opts = SynthOptions { gamma_tol: 1e-3, ..SynthOptions::default() };
    let mut compared = 0;
    let mut seed = 0u64;
    while compared < 10 {
        seed += 1;
        assert!(seed < 40, "too few stabilizable systems");
        let mut rng = common::rng(seed);
        let (n, m) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
        let sys = common::random_plant(&mut rng, n, m);
        let nominal = match nominal_hinf_baseline(&sys, 1e-4, &analysis_solver_options()) {
            Ok(d) => d,
            Err(Error::Infeasible(_)) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        let horizon = n + m + 4;
        let dm = common::data(&sys, horizon, 0.0, seed);
        assert!(is_persistently_exciting(&dm, DATA_RANK_TOL));
        let set = DisturbanceSet::from_sigma_bound(SET_BOUND, n, horizon).unwrap();
        let r = hinf_optimize(&dm, &KnownMatrices::of(&sys), &set, (0.5 * nominal.gamma, 4.0 * nominal.gamma), &opts)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let gamma = r.gamma.unwrap();
        let gap = (gamma - nominal.gamma) / nominal.gamma;
        assert!(gap.abs() <= RELATIVE_GAP, "seed {seed}: data-driven {gamma}, nominal {}", nominal.gamma);
        let cl = ClosedLoop::of_system(&sys, &r.k).unwrap();
        assert!(hinf_norm_fast(&cl, 1e-8).unwrap() <= gamma * (1.0 + 1e-6));
        compared += 1;
    }
}
