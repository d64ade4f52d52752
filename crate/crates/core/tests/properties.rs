mod common;

use ddsf_core::datamat::{reconstruct_model, DataMatrices, DATA_RANK_TOL};
use ddsf_core::linalg::{self, Mat, Vector};
use ddsf_core::lti::{columns, generate_experiment, ExperimentSpec};
use ddsf_core::noise::{membership, DisturbanceSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Mat> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |v| Mat::from_vec(r, c, v))
    })
}

/// Low-rank product of two random factors.
fn low_rank() -> impl Strategy<Value = Mat> {
    (1..=6usize, 1..=14usize, 1..=3usize).prop_flat_map(|(r, c, k)| {
        (prop::collection::vec(-3.0..3.0f64, r * k), prop::collection::vec(-3.0..3.0f64, k * c))
            .prop_map(move |(a, b)| Mat::from_vec(r, k, a) * Mat::from_vec(k, c, b))
    })
}

proptest! {
    #[test]
    fn svd_reconstructs(m in matrix(6, 14)) {
        let d = linalg::svd(&m);
        let mut s = Mat::zeros(m.nrows(), m.ncols());
        for (i, &v) in d.s.iter().enumerate() {
            s[(i, i)] = v;
        }
        let scale = 1.0 + m.amax();
        prop_assert!((&d.u * s * d.v.transpose() - &m).amax() <= 1e-12 * scale);
        prop_assert!((d.u.transpose() * &d.u - Mat::identity(m.nrows(), m.nrows())).amax() < 1e-12);
        prop_assert!((d.v.transpose() * &d.v - Mat::identity(m.ncols(), m.ncols())).amax() < 1e-12);
        prop_assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pinv_penrose_conditions(m in prop_oneof![matrix(6, 14), low_rank()]) {
        let p = linalg::pinv(&m, 1e-10);
        let tol = 1e-8 * (1.0 + m.amax()) * (1.0 + p.amax());
        prop_assert!((&m * &p * &m - &m).amax() <= tol);
        prop_assert!((&p * &m * &p - &p).amax() <= tol);
        let mp = &m * &p;
        let pm = &p * &m;
        prop_assert!((&mp - mp.transpose()).amax() <= tol);
        prop_assert!((&pm - pm.transpose()).amax() <= tol);
    }

    #[test]
    fn kernel_is_orthonormal_and_complete(m in prop_oneof![matrix(6, 14), low_rank()]) {
        let tol = 1e-10;
        let k = linalg::kernel_basis(&m, tol);
        prop_assert_eq!(k.nrows(), m.ncols());
        prop_assert_eq!(k.ncols() + linalg::rank(&m, tol), m.ncols());
        prop_assert!((&m * &k).amax() <= 1e-9 * (1.0 + m.amax()));
        prop_assert!((k.transpose() * &k - Mat::identity(k.ncols(), k.ncols())).amax() < 1e-10);
    }

    #[test]
    fn hankel_entries(len in 2..12usize, dim in 1..3usize, depth in 1..4usize) {
        prop_assume!(depth <= len);
        let seq: Vec<Vector> = (0..len).map(|k| Vector::from_fn(dim, |i, _| (10 * k + i) as f64)).collect();
        let width = len - depth + 1;
        let h = linalg::hankel(&seq, 0, depth, width).unwrap();
        prop_assert_eq!(h.shape(), (depth * dim, width));
        for r in 0..depth {
            for c in 0..width {
                for i in 0..dim {
                    prop_assert_eq!(h[(r * dim + i, c)], seq[r + c][i]);
                }
            }
        }
    }

    #[test]
    fn spectral_radius_matches_similarity_oracle(
        eigs in prop::collection::vec(-1.5..1.5f64, 1..5),
        seed in any::<u64>(),
    ) {
        // T diag(eigs) T^-1 with a well-conditioned T = I + small
        let n = eigs.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Mat::identity(n, n) + Mat::from_fn(n, n, |_, _| rand::Rng::gen_range(&mut rng, -0.3..0.3));
        let m = &t * Mat::from_diagonal(&Vector::from_vec(eigs.clone())) * t.clone().try_inverse().unwrap();
        let exact = eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        prop_assert!((linalg::spectral_radius(&m).unwrap() - exact).abs() <= 1e-8 * (1.0 + exact));
    }

    #[test]
    fn sigma_bound_membership(w_bar in 0.01..2.0f64, rows in 1..4usize, cols in 1..8usize, seed in any::<u64>()) {
        let set = DisturbanceSet::from_sigma_bound(w_bar, rows, cols).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = set.sample(&mut rng, true).unwrap();
        prop_assert!(linalg::sigma_max(&w) <= w_bar * (1.0 + 1e-9));
        prop_assert!(membership(&w, &set, 1e-9).unwrap());
        let sm = linalg::sigma_max(&w);
        if sm > 0.0 {
            prop_assert!(!set.contains(&(&w * (1.01 * w_bar / sm))).unwrap());
        }
    }

    #[test]
    fn experiment_data_are_consistent(seed in any::<u64>(), n in 1..4usize, m in 1..3usize, horizon in 1..15usize) {
        let mut rng = common::rng(seed);
        let sys = common::random_plant(&mut rng, n, m);
        let rec = generate_experiment(&sys, &ExperimentSpec::new(horizon, 1.0, m, 0.1), seed).unwrap();
        let dm = DataMatrices::build(&rec).unwrap();
        prop_assert!(dm.overlap_holds());
        prop_assert!(rec.inputs.iter().all(|u| u.amax() <= 1.0));
        let w = columns(rec.true_disturbance.as_ref().unwrap(), n);
        prop_assert!(w.norm() <= 0.1 * (1.0 + 1e-12));
        let resid = &dm.x_plus - &sys.a * &dm.x - &sys.b * &dm.u - &w;
        prop_assert!(resid.amax() <= 1e-9 * (1.0 + dm.x_plus.amax()));
        if horizon >= n + m {
            let model = reconstruct_model(&dm, &sys.b_w, &w);
            if dm.rank(DATA_RANK_TOL) == n + m {
                let scale = 1.0 + dm.x_plus.amax();
                prop_assert!((&model.a - &sys.a).amax() <= 1e-6 * scale);
                prop_assert!((&model.b - &sys.b).amax() <= 1e-6 * scale);
            }
        }
    }
}
