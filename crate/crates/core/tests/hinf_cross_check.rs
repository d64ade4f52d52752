//! H-infinity norm: LMI bisection, frequency grid and the Hamiltonian
//! iteration must agree on random stable loops.

use ddsf_core::linalg::{self, Mat};
use ddsf_core::verify::{analysis_solver_options, hinf_norm_fast, hinf_norm_grid, hinf_norm_lmi, ClosedLoop, GRID_POINTS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AGREEMENT: f64 = 2e-3;

fn random_stable_loop(seed: u64) -> ClosedLoop {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let m_w = rng.gen_range(1..=3);
    let p_z = rng.gen_range(1..=3);
    let raw = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let rho = linalg::spectral_radius(&raw).unwrap().max(1e-3);
    let a = raw * (rng.gen_range(0.05..0.95) / rho);
    let b_w = Mat::from_fn(n, m_w, |_, _| rng.gen_range(-1.0..1.0));
    let c = Mat::from_fn(p_z, n, |_, _| rng.gen_range(-1.0..1.0));
    let d_w = Mat::from_fn(p_z, m_w, |_, _| if rng.gen_bool(0.5) { rng.gen_range(-0.5..0.5) } else { 0.0 });
    ClosedLoop::new(a, b_w, c, d_w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn lmi_grid_and_hamiltonian_agree(seed in any::<u64>()) {
        let cl = random_stable_loop(seed);
        let (grid, _) = hinf_norm_grid(&cl, GRID_POINTS).unwrap();
        let lmi = hinf_norm_lmi(&cl, 1e-4, &analysis_solver_options()).unwrap();
        let fast = hinf_norm_fast(&cl, 1e-6).unwrap();
        prop_assert!((lmi - grid).abs() <= AGREEMENT * grid.max(lmi), "LMI {lmi} grid {grid}");
        prop_assert!((fast - grid).abs() <= AGREEMENT * grid.max(fast), "Hamiltonian {fast} grid {grid}");
        // the grid only samples the response, so it cannot exceed the norm
        prop_assert!(grid <= fast * (1.0 + 1e-6) + 1e-12);
    }
}

#[test]
fn unstable_loops_have_no_norm() {
    let cl = ClosedLoop::new(
        Mat::from_row_slice(1, 1, &[1.01]),
        Mat::identity(1, 1),
        Mat::identity(1, 1),
        Mat::zeros(1, 1),
    )
    .unwrap();
    assert!(hinf_norm_grid(&cl, 64).is_err());
    assert!(hinf_norm_lmi(&cl, 1e-4, &analysis_solver_options()).is_err());
    assert!(hinf_norm_fast(&cl, 1e-6).is_err());
}
