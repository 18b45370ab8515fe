mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn hankel_invariants(seed in any::<u64>()) {
        if let Err(msg) = check_hankel(seed) {
            prop_assert!(false, "{}", msg);
        }
    }

    #[test]
    fn hessian_positive_definite(seed in any::<u64>()) {
        let lam = min_hessian_eigenvalue(seed);
        prop_assert!(lam > 0.0, "min eigenvalue {lam}");
    }

    #[test]
    fn kkt_of_oracle_and_regions(seed in any::<u64>()) {
        let case = explicit_case(seed, 20);
        let (oracle, explicit) = kkt_residuals(&case);
        prop_assert!(oracle <= KKT_TOL, "oracle KKT {oracle:e}");
        prop_assert!(explicit <= KKT_TOL, "region KKT {explicit:e}");
    }

    #[test]
    fn law_is_continuous(seed in any::<u64>()) {
        let case = explicit_case(seed, 8);
        let gap = continuity_gap(&case);
        prop_assert!(gap <= CONTINUITY_TOL, "jump {gap:e}");
    }

    #[test]
    fn enumeration_agrees_with_solver(seed in any::<u64>()) {
        let gap = enumeration_gap(seed);
        prop_assert!(gap <= ENUMERATION_TOL, "gap {gap:e}");
    }
}
