#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use stencil_traffic::{Access, ArrayDecl, GridSpec, KernelSpec, KernelSuite};

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

pub fn shipped_suite() -> KernelSuite {
    KernelSuite::load(repo_path("data/cloverleaf_tiny.json")).unwrap()
}

/// One row of the reference table.
#[derive(Debug, Clone, serde::Deserialize)]
pub struct TableRow {
    pub kernel: String,
    pub n_arrays: u32,
    pub rd_lcf: u32,
    pub rd_lcb: u32,
    pub wr: u32,
    pub rdwr: u32,
    pub flops_per_it: u32,
    pub min: f64,
    pub lcf_wa: f64,
    pub lcb: f64,
    pub max: f64,
    pub meas_1: f64,
}

pub fn reference_rows() -> Vec<TableRow> {
    csv::Reader::from_path(repo_path("reference/bounds.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Read,
    Write,
    ReadWrite,
}

pub const ARRAYS: [&str; 4] = ["a0", "a1", "a2", "a3"];

pub fn random_arrays() -> Vec<ArrayDecl> {
    ARRAYS.iter().map(|n| ArrayDecl::new(*n, "g")).collect()
}

/// Small random stencils. Written arrays are read at most at the written
/// element itself, so no line is re-read after a non-temporal store.
pub fn arb_kernel() -> impl Strategy<Value = KernelSpec> {
    let role = prop_oneof![Just(Role::Read), Just(Role::Write), Just(Role::ReadWrite)];
    let offsets = prop::collection::vec((-2i32..=2, -2i32..=2), 1..4);
    prop::collection::vec((role, offsets), 1..=4)
        .prop_flat_map(|arrays| (Just(arrays), 0u32..20))
        .prop_map(|(arrays, flops)| {
            let mut accesses = Vec::new();
            for (i, (role, offsets)) in arrays.into_iter().enumerate() {
                let name = ARRAYS[i];
                match role {
                    Role::Read => {
                        for (dj, dk) in offsets {
                            let a = Access::read(name, dj, dk);
                            if !accesses.contains(&a) {
                                accesses.push(a);
                            }
                        }
                    }
                    Role::Write => accesses.push(Access::write(name, 0, 0)),
                    Role::ReadWrite => {
                        accesses.push(Access::read(name, 0, 0));
                        accesses.push(Access::write(name, 0, 0));
                    }
                }
            }
            KernelSpec::new("random", accesses, flops)
        })
}

pub fn arb_grid() -> impl Strategy<Value = GridSpec> {
    (1usize..48, 1usize..10).prop_map(|(n, m)| GridSpec::new("g", n, m).with_halo(2))
}

use stencil_traffic::balance::{code_balance, scenario_table, LcState, WaPolicy};
use stencil_traffic::cachesim::{measure_traffic, CacheLevelConfig, WritePolicySim};
use stencil_traffic::decomp::{factorize_ranks, is_prime, local_extents, Decomposition};
use stencil_traffic::derive_stream_counts;

pub fn balance_ordering(kernel: &KernelSpec) -> Result<(), TestCaseError> {
    let t = scenario_table(kernel, 8).unwrap();
    let [min, lcf_wa, lcb, max] = t.bytes();
    prop_assert!(min <= lcf_wa && lcf_wa <= max, "{t:?}");
    prop_assert!(min <= lcb && lcb <= max, "{t:?}");
    let c = derive_stream_counts(kernel).unwrap();
    prop_assert!(c.rd_lcf <= c.rd_lcb);
    prop_assert!(c.rdwr <= c.rd_lcf.min(c.wr));
    let mut last = 0.0;
    for f in [1.0, 1.1, 1.2, 1.5, 2.0] {
        let b = code_balance(
            &c,
            LcState::Fulfilled,
            &WaPolicy::Phenomenological { factor: f },
            8,
        )
        .unwrap();
        prop_assert!(b >= last);
        last = b;
    }
    prop_assert_eq!(last, lcf_wa);
    Ok(())
}

/// Read traffic never grows with the capacity of a fully associative LRU.
pub fn capacity_ladder(kernel: &KernelSpec, grid: &GridSpec) -> Result<(), TestCaseError> {
    let arrays = random_arrays();
    let mut last = u64::MAX;
    for lines in [1, 2, 3, 4, 8, 16, 32, 64, 256, 4096] {
        let t = measure_traffic(
            kernel,
            grid,
            &arrays,
            &[CacheLevelConfig::lines(lines)],
            WritePolicySim::AlwaysAllocate,
        )
        .unwrap();
        prop_assert!(
            t.read_bytes <= last,
            "{lines} lines: {} > {last}",
            t.read_bytes
        );
        last = t.read_bytes;
    }
    Ok(())
}

/// NtBypass <= AutoClaim <= AlwaysAllocate on reads, equal writes, with a
/// cache large enough for the whole working set.
pub fn policy_ordering(kernel: &KernelSpec, grid: &GridSpec) -> Result<(), TestCaseError> {
    let arrays = random_arrays();
    let levels = [CacheLevelConfig::lines(4096)];
    let run = |p| measure_traffic(kernel, grid, &arrays, &levels, p).unwrap();
    let aa = run(WritePolicySim::AlwaysAllocate);
    let claim = run(WritePolicySim::auto_claim(true));
    let nt = run(WritePolicySim::NtBypass);
    prop_assert!(nt.read_bytes <= claim.read_bytes, "{nt:?} {claim:?}");
    prop_assert!(claim.read_bytes <= aa.read_bytes, "{claim:?} {aa:?}");
    prop_assert_eq!(claim.write_bytes, aa.write_bytes);
    prop_assert_eq!(nt.write_bytes, aa.write_bytes);
    Ok(())
}

pub fn decomposition(p: usize, extent: usize) -> Result<(), TestCaseError> {
    let (px, py) = factorize_ranks(p);
    prop_assert_eq!(px * py, p);
    if is_prime(p) && p > 2 {
        prop_assert_eq!(py, 1);
    }
    let d = Decomposition::new(p, extent, extent).unwrap();
    for list in [&d.local_inner_widths, &d.local_outer_heights] {
        prop_assert_eq!(list.iter().sum::<usize>(), extent);
        let lo = *list.iter().min().unwrap();
        let hi = *list.iter().max().unwrap();
        prop_assert!(hi - lo <= 1);
        prop_assert!(list.windows(2).all(|w| w[0] >= w[1]));
    }
    prop_assert_eq!(local_extents(extent, px).unwrap(), d.local_inner_widths);
    Ok(())
}
