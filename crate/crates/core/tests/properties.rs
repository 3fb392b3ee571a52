//! Property tests for the numeric building blocks.

use proptest::prelude::*;

use rofu::linalg::{self, Matrix, PsdInverseState};
use rofu::models::ParamVector;
use rofu::rofu::{combine_bonus, select_action, ucb1_value, ArmStats};
use rofu::verify::dense_inverse;

fn vectors(dim: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), 0..count)
}

proptest! {
    #[test]
    fn design_inverse_stays_positive_definite(lambda in 0.1..5.0f64, updates in vectors(4, 30), probe in prop::collection::vec(-2.0..2.0f64, 4)) {
        let mut state = PsdInverseState::scaled_identity(4, lambda).unwrap();
        for u in &updates {
            state.rank1_update(u).unwrap();
        }
        let q = state.quad_form(&probe).unwrap();
        prop_assert!(q >= 0.0);
        let norm_sq = linalg::dot(&probe, &probe);
        // Z >= lambda I, so v' Z^-1 v <= |v|^2 / lambda.
        prop_assert!(q <= norm_sq / lambda * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn incremental_inverse_matches_dense_inverse(updates in vectors(3, 15)) {
        let mut state = PsdInverseState::scaled_identity(3, 1.0).unwrap();
        for u in &updates {
            state.rank1_update(u).unwrap();
        }
        let dense = dense_inverse(state.matrix());
        let dense = Matrix::from_rows(&dense).unwrap();
        prop_assert!(state.inverse().frobenius_distance(&dense) <= 1e-8);
    }

    #[test]
    fn psd_solve_residual_is_small(updates in vectors(5, 12), b in prop::collection::vec(-5.0..5.0f64, 5)) {
        let mut a = Matrix::identity(5);
        for u in &updates {
            a.add_outer(u, 1.0);
        }
        let x = linalg::psd_solve(&a, &b).unwrap();
        let ax = a.mul_vec(&x).unwrap();
        let residual = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(residual <= 1e-8);
    }

    #[test]
    fn select_action_is_shift_invariant(ucbs in prop::collection::vec(-1e3..1e3f64, 1..20), shift in -10.0..10.0f64) {
        let arm = select_action(&ucbs).unwrap();
        prop_assert!(ucbs.iter().all(|&u| u <= ucbs[arm]));
        prop_assert!(ucbs[..arm].iter().all(|&u| u < ucbs[arm]));
        let shifted: Vec<f64> = ucbs.iter().map(|u| u + shift).collect();
        let again = select_action(&shifted).unwrap();
        prop_assert_eq!(shifted[again], shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn ucb_never_below_base(base in -10.0..10.0f64, optimistic in -10.0..10.0f64, b in 0.05..1.0f64) {
        let est = combine_bonus(base, optimistic, b);
        prop_assert!(est.bonus >= 0.0);
        prop_assert!(est.ucb >= est.base_value);
        if optimistic <= base {
            prop_assert_eq!(est.bonus, 0.0);
        }
    }

    #[test]
    fn ucb1_bonus_shrinks_with_pulls(n in 1u64..10_000, t in 2.0..1e6f64, mean in -1.0..1.0f64) {
        let a = ArmStats { pulls: n, reward_sum: mean * n as f64 };
        let b = ArmStats { pulls: n + 1, reward_sum: mean * (n + 1) as f64 };
        let ea = ucb1_value(&a, t).unwrap();
        let eb = ucb1_value(&b, t).unwrap();
        prop_assert!(eb.bonus < ea.bonus);
        prop_assert!(ucb1_value(&a, t * 2.0).unwrap().bonus > ea.bonus);
    }

    #[test]
    fn param_bytes_round_trip(values in prop::collection::vec(prop::num::f64::ANY, 0..64)) {
        let p = ParamVector::from(values.clone());
        let back = ParamVector::from_bytes(&p.to_bytes()).unwrap();
        prop_assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
