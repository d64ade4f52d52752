//! Mixed design: without known states it is the plain performance design,
//! and with a known filter state its gain must satisfy the analysis LMI on
//! the exact plant.

mod common;

use ddsf_core::datamat::DataMatrices;
use ddsf_core::linalg::{self, Mat};
use ddsf_core::lti::{generate_experiment, ExperimentSpec, LtiSystem};
use ddsf_core::noise::DisturbanceSet;
use ddsf_core::synth::{
    mixed_synthesis, mixed_synthesis_at, quad_perf_synthesis, KnownMatrices, MixedSystem, PerformanceIndex,
    SynthOptions,
};
use ddsf_core::verify::{analysis_solver_options, nominal_hinf_baseline, quadratic_performance_analysis, ClosedLoop};
use ddsf_core::Error;
use rand::Rng;

/// Split a simulated full-state trajectory into the data-driven part (the
/// first `n` states) and the known part.
fn split(sys: &LtiSystem, n: usize, dm: DataMatrices) -> MixedSystem {
    let nt = sys.n() - n;
    let p_z = sys.p_z();
    let block = |m: &Mat, r: usize, rows: usize, c: usize, cols: usize| m.view((r, c), (rows, cols)).into_owned();
    MixedSystem {
        a2: block(&sys.a, 0, n, n, nt),
        a3: block(&sys.a, n, nt, 0, n),
        a4: block(&sys.a, n, nt, n, nt),
        b2: sys.b.rows(n, nt).into_owned(),
        b_w1: sys.b_w.rows(0, n).into_owned(),
        b_w2: sys.b_w.rows(n, nt).into_owned(),
        c1: block(&sys.c, 0, p_z, 0, n),
        c2: block(&sys.c, 0, p_z, n, nt),
        d_w: sys.d_w.clone(),
        d: sys.d.clone(),
        x_tilde: dm.x.rows(n, nt).into_owned(),
        data: DataMatrices::from_matrices(dm.x.rows(0, n).into_owned(), dm.x_plus.rows(0, n).into_owned(), dm.u)
            .unwrap(),
    }
}

#[test]
fn without_known_states_it_is_the_performance_design() {
    let opts = SynthOptions::default();
    let mut compared = 0;
    for seed in 0..20u64 {
        if compared == 5 {
            break;
        }
        let mut rng = common::rng(seed);
        let (n, m) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
        let sys = common::random_plant(&mut rng, n, m);
        let horizon = n + m + 5;
        let w_bar = rng.gen_range(0.001..0.02);
        let dm = common::data(&sys, horizon, w_bar, seed);
        let set = DisturbanceSet::from_sigma_bound(w_bar, n, horizon).unwrap();
        let plant = KnownMatrices::of(&sys);
        let perf = PerformanceIndex::hinf(rng.gen_range(3.0..10.0), n, n);
        let lambda = 10f64.powf(rng.gen_range(-2.0..2.0));
        let plain = quad_perf_synthesis(&dm, &plant, &set, &perf, lambda, &opts);
        let ms = split(&sys, n, dm);
        assert_eq!(ms.n_tilde(), 0);
        let mixed = mixed_synthesis_at(&ms, &set, &perf, lambda, &opts);
        match (plain, mixed) {
            (Ok(p), Ok(q)) => {
                assert_eq!(q.k2.shape(), (m, 0));
                let diff = (&p.k - &q.gain()).amax();
                assert!(diff <= 1e-6 * (1.0 + p.k.amax()), "seed {seed}: gains differ by {diff:e}");
                compared += 1;
            }
            (Err(Error::Infeasible(_)), Err(Error::Infeasible(_))) => {}
            (p, q) => panic!("seed {seed}: verdicts differ: {:?} vs {:?}", p.err(), q.err()),
        }
    }
    assert_eq!(compared, 5);
}

/// Benchmark plant in series with a known first-order filter on the first
/// state, the filter output fed back into the second state.
fn filtered_benchmark() -> LtiSystem {
    let base = LtiSystem::benchmark();
    let mut a = Mat::zeros(4, 4);
    a.view_mut((0, 0), (3, 3)).copy_from(&base.a);
    a[(1, 3)] = 0.3;
    a[(3, 0)] = 1.0;
    a[(3, 3)] = 0.6;
    let b = linalg::vstack(&[&base.b, &Mat::zeros(1, 2)]).unwrap();
    let b_w = linalg::vstack(&[&Mat::identity(3, 3), &Mat::zeros(1, 3)]).unwrap();
    let c = Mat::identity(4, 4);
    LtiSystem::new(a, b, b_w, c, Mat::zeros(4, 3), Mat::zeros(4, 2)).unwrap()
}

#[test]
fn known_filter_gain_passes_analysis_on_the_exact_plant() {
    let sys = filtered_benchmark();
    let nominal = nominal_hinf_baseline(&sys, 1e-3, &analysis_solver_options()).unwrap();
    // the block-diagonal Lyapunov certificate is conservative, the level
    // only needs to be reachable
    let gamma = 4.0 * nominal.gamma;
    let horizon = 12;
    let rec = generate_experiment(&sys, &ExperimentSpec::new(horizon, 1.0, 2, 0.0), 3).unwrap();
    let ms = split(&sys, 3, DataMatrices::build(&rec).unwrap());
    let set = DisturbanceSet::from_sigma_bound(1e-9, 3, horizon).unwrap();
    let perf = PerformanceIndex::hinf(gamma, 3, 4);
    let r = mixed_synthesis(&ms, &set, &perf, &SynthOptions::default()).unwrap();
    let k = r.gain();
    assert_eq!(k.shape(), (2, 4));
    let cl = ClosedLoop::of_system(&sys, &k).unwrap();
    let outcome = quadratic_performance_analysis(&cl, &perf, &analysis_solver_options()).unwrap();
    assert!(outcome.satisfied, "mixed gain misses gamma {gamma}");
}
