//! Every feasible synthesis outcome is re-checked here: the LMI is
//! re-assembled from the returned `(Y, M)` in a different block order and
//! its equilibrated eigenvalues are computed from scratch.

mod common;

use ddsf_core::datamat::DataMatrices;
use ddsf_core::linalg::{self, Mat};
use ddsf_core::lti::LtiSystem;
use ddsf_core::noise::DisturbanceSet;
use ddsf_core::sdp::SolverOptions;
use ddsf_core::synth::{hinf_optimize, stabilize, KnownMatrices, PerformanceIndex, SynthOptions, SynthesisResult};
use ddsf_core::verify::{hinf_norm_fast, ClosedLoop};
use ddsf_core::Error;
use rand::Rng;

/// Symmetric matrix from lower-triangle blocks at the given sizes.
fn blocks(sizes: &[usize], parts: &[(usize, usize, Mat)]) -> Mat {
    let offsets: Vec<usize> = sizes.iter().scan(0, |acc, &s| {
        let o = *acc;
        *acc += s;
        Some(o)
    }).collect();
    let total = sizes.iter().sum();
    let mut f = Mat::zeros(total, total);
    for (i, j, b) in parts {
        assert_eq!(b.shape(), (sizes[*i], sizes[*j]), "block ({i}, {j})");
        for r in 0..b.nrows() {
            for c in 0..b.ncols() {
                f[(offsets[*i] + r, offsets[*j] + c)] += b[(r, c)];
                if i != j {
                    f[(offsets[*j] + c, offsets[*i] + r)] += b[(r, c)];
                }
            }
        }
    }
    f
}

/// Largest eigenvalue of `D F D` with `D = |diag F0|^{-1/2}`.
fn equilibrated_margin(f: &Mat, f0: &Mat) -> f64 {
    let d: Vec<f64> = (0..f0.nrows())
        .map(|i| if f0[(i, i)].abs() > 0.0 { 1.0 / f0[(i, i)].abs().sqrt() } else { 1.0 })
        .collect();
    let g = Mat::from_fn(f.nrows(), f.ncols(), |r, c| d[r] * f[(r, c)] * d[c]);
    let g = (&g + g.transpose()) * 0.5;
    g.symmetric_eigenvalues().max()
}

/// Stabilization LMI in the order `[x+, x, w, data]`.
fn stabilization_lmi(y: &Mat, m: &Mat, dm: &DataMatrices, b_w: &Mat, set: &DisturbanceSet) -> Mat {
    let (n, h, m_w) = (y.nrows(), m.nrows(), b_w.ncols());
    blocks(
        &[n, n, m_w, h],
        &[
            (0, 0, -y),
            (0, 1, &dm.x_plus * m),
            (0, 2, b_w.clone()),
            (1, 1, -y),
            (2, 1, -(set.s_w() * m)),
            (2, 2, set.q_w().clone()),
            (3, 1, m.clone()),
            (3, 3, -set.r_w().clone().try_inverse().unwrap()),
        ],
    )
}

/// Performance LMI (invertible `R`) in the order `[x+, z, x, w, w_set, data]`.
fn performance_lmi(
    y: &Mat,
    m: &Mat,
    dm: &DataMatrices,
    plant: &KnownMatrices,
    set: &DisturbanceSet,
    perf: &PerformanceIndex,
    lambda: f64,
) -> Mat {
    let (n, h, m_w, p_z) = (y.nrows(), m.nrows(), plant.b_w.ncols(), plant.c.nrows());
    let cy = &plant.c * y + &plant.d * &dm.u * m;
    let t = plant.d_w.transpose() * &perf.r + &perf.s;
    let sd = &perf.s * &plant.d_w;
    let ww = &perf.q + &sd + sd.transpose() + plant.d_w.transpose() * &perf.r * &plant.d_w;
    blocks(
        &[n, p_z, n, m_w, m_w, h],
        &[
            (0, 0, -y),
            (0, 2, &dm.x_plus * m),
            (0, 3, plant.b_w.clone()),
            (0, 4, plant.b_w.clone()),
            (1, 1, -perf.r.clone().try_inverse().unwrap()),
            (1, 2, cy.clone()),
            (2, 2, -y),
            (3, 2, &t * &cy),
            (3, 3, ww),
            (4, 2, -(set.s_w() * m) * lambda),
            (4, 4, set.q_w() * lambda),
            (5, 2, m.clone()),
            (5, 5, -(set.r_w() * lambda).try_inverse().unwrap()),
        ],
    )
}

fn equality_residual(dm: &DataMatrices, r: &SynthesisResult) -> f64 {
    (&dm.x * &r.m - &r.y).amax() / (1.0 + r.y.amax())
}

/// Feasible, infeasible or undecided; anything else is a bug.
fn feasible(r: Result<SynthesisResult, Error>) -> Option<SynthesisResult> {
    match r {
        Ok(r) => Some(r),
        Err(Error::Infeasible(_) | Error::Inconclusive(_)) => None,
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn stabilization_certificates_hold() {
    let opts = SynthOptions::default();
    let eps = opts.solver.eps_strict;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = common::rng(seed);
        let (n, m) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
        let sys = common::random_plant(&mut rng, n, m);
        let horizon = n + m + rng.gen_range(1..=6);
        let w_bar = rng.gen_range(0.001..0.05);
        let dm = common::data(&sys, horizon, w_bar, seed);
        let set = DisturbanceSet::from_sigma_bound(w_bar, n, horizon).unwrap();
        let Some(r) = feasible(stabilize(&dm, &sys.b_w, &set, &opts)) else { continue };
        let f = stabilization_lmi(&r.y, &r.m, &dm, &sys.b_w, &set);
        let f0 = stabilization_lmi(&Mat::zeros(n, n), &Mat::zeros(horizon, n), &dm, &sys.b_w, &set);
        let margin = equilibrated_margin(&f, &f0);
        assert!(margin <= -eps / 2.0, "seed {seed}: margin {margin:e}");
        assert!(equality_residual(&dm, &r) <= 1e-6);
        assert!((&dm.u * &r.m * r.y.clone().try_inverse().unwrap() - &r.k).amax() <= 1e-9 * (1.0 + r.k.amax()));
        // the true plant is among the consistent ones
        assert!(linalg::spectral_radius(&(&sys.a + &sys.b * &r.k)).unwrap() < 1.0, "seed {seed}");
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} feasible designs");
}

fn performance_case(sys: &LtiSystem, plant: &KnownMatrices, horizon: usize, w_bar: f64, seed: u64, opts: &SynthOptions) -> bool {
    let (n, m_w, p_z) = (sys.n(), plant.b_w.ncols(), plant.c.nrows());
    let dm = common::data(sys, horizon, w_bar, seed);
    let set = DisturbanceSet::from_sigma_bound(w_bar, m_w, horizon).unwrap();
    let Some(r) = feasible(hinf_optimize(&dm, plant, &set, (0.5, 8.0), opts)) else { return false };
    let gamma = r.gamma.unwrap();
    let lambda = r.lambda.unwrap();
    let perf = PerformanceIndex::hinf(gamma, m_w, p_z);
    let f = performance_lmi(&r.y, &r.m, &dm, plant, &set, &perf, lambda);
    let f0 = performance_lmi(&Mat::zeros(n, n), &Mat::zeros(horizon, n), &dm, plant, &set, &perf, lambda);
    let margin = equilibrated_margin(&f, &f0);
    assert!(margin <= -opts.solver.eps_strict / 2.0, "seed {seed}: margin {margin:e}");
    assert!(equality_residual(&dm, &r) <= 1e-6);
    let cl = ClosedLoop::new(&sys.a + &sys.b * &r.k, plant.b_w.clone(), &plant.c + &plant.d * &r.k, plant.d_w.clone())
        .unwrap();
    let true_norm = hinf_norm_fast(&cl, 1e-8).unwrap();
    assert!(true_norm <= gamma * (1.0 + 1e-6), "seed {seed}: true norm {true_norm} above {gamma}");
    true
}

#[test]
fn performance_certificates_hold_on_the_benchmark() {
    let sys = LtiSystem::benchmark();
    let plant = KnownMatrices::of(&sys);
    let opts = SynthOptions::default();
    let feasible = (0..5u64).filter(|&s| performance_case(&sys, &plant, 20, 0.02, s, &opts)).count();
    assert!(feasible >= 4, "{feasible}/5 feasible");
}

#[test]
fn performance_certificates_hold_with_feedthrough() {
    let opts = SynthOptions {
        solver: SolverOptions::default(),
        gamma_tol: 5e-2,
        ..SynthOptions::default()
    };
    let mut checked = 0;
    for seed in 100..110u64 {
        let mut rng = common::rng(seed);
        let (n, m) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
        let sys = common::random_plant(&mut rng, n, m);
        let p_z = rng.gen_range(1..=2);
        let c = Mat::from_fn(p_z, n, |_, _| rng.gen_range(-1.0..1.0));
        let d = Mat::from_fn(p_z, m, |_, _| rng.gen_range(-0.3..0.3));
        let d_w = Mat::from_fn(p_z, n, |_, _| rng.gen_range(-0.2..0.2));
        let plant = KnownMatrices::new(sys.b_w.clone(), c.clone(), d_w.clone(), d.clone()).unwrap();
        let full = LtiSystem::new(sys.a.clone(), sys.b.clone(), sys.b_w.clone(), c, d_w, d).unwrap();
        if performance_case(&full, &plant, n + m + 6, 0.01, seed, &opts) {
            checked += 1;
        }
    }
    assert!(checked >= 5, "only {checked} feasible designs");
}
