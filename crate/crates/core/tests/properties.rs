mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scenario_bounds_are_ordered(k in arb_kernel()) {
        balance_ordering(&k)?;
    }

    #[test]
    fn more_capacity_never_reads_more(k in arb_kernel(), g in arb_grid()) {
        capacity_ladder(&k, &g)?;
    }

    #[test]
    fn evasion_policies_are_ordered(k in arb_kernel(), g in arb_grid()) {
        policy_ordering(&k, &g)?;
    }

    #[test]
    fn decompositions_cover_the_mesh(p in 1usize..600, extra in 0usize..20_000) {
        decomposition(p, p + extra)?;
    }

    #[test]
    fn counts_are_deterministic(k in arb_kernel()) {
        let a = stencil_traffic::derive_stream_counts(&k).unwrap();
        let b = stencil_traffic::derive_stream_counts(&k.clone()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.n_arrays >= a.wr.max(a.rd_lcf));
    }

    #[test]
    fn balance_is_linear_in_element_size(k in arb_kernel()) {
        let c = stencil_traffic::derive_stream_counts(&k).unwrap();
        for wa in [stencil_traffic::WaPolicy::FullWa, stencil_traffic::WaPolicy::NoWa] {
            let four = stencil_traffic::code_balance(&c, stencil_traffic::LcState::Broken, &wa, 4).unwrap();
            let eight = stencil_traffic::code_balance(&c, stencil_traffic::LcState::Broken, &wa, 8).unwrap();
            prop_assert_eq!(2.0 * four, eight);
        }
    }

    #[test]
    fn halo_overhead_decreases(inner in 1usize..100_000) {
        let d = stencil_traffic::decomp::halo_read_overhead;
        prop_assert!(d(inner + 1, 1, 8) < d(inner, 1, 8));
    }
}
