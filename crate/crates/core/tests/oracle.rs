//! The simulator as an independent oracle for the analytic bounds.

mod common;

use common::*;
use stencil_traffic::cachesim::{
    lc_fitting_capacity, measure_balance, CacheLevelConfig, WritePolicySim,
};
use stencil_traffic::{derive_stream_counts, scenario_table, KernelSpec};

const N: usize = 256;

fn within(sim: f64, model: f64, pct: f64) -> bool {
    ((sim - model) / model).abs() * 100.0 <= pct
}

/// Distinct (array, row) streams the kernel touches per iteration.
fn concurrent_streams(k: &KernelSpec) -> usize {
    let mut rows: Vec<(&str, i32)> = k
        .accesses
        .iter()
        .map(|a| (a.array.as_str(), a.dk))
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

#[test]
fn fitting_cache_reproduces_lcf_wa() {
    let suite = shipped_suite();
    for k in &suite.kernels {
        let grid = suite.grid_for(k).unwrap().resized(N, N);
        let cache = [CacheLevelConfig::fully_associative(lc_fitting_capacity(
            k, &grid,
        ))];
        let sim = measure_balance(
            k,
            &grid,
            &suite.arrays,
            &cache,
            WritePolicySim::AlwaysAllocate,
        )
        .unwrap();
        let t = scenario_table(k, 8).unwrap();
        // edge rows and columns cost about 2/N extra at this size
        assert!(
            within(sim, t.lcf_wa.bytes_per_it, 3.0),
            "{}: {sim} vs {}",
            k.name,
            t.lcf_wa.bytes_per_it
        );
        let claimed = measure_balance(
            k,
            &grid,
            &suite.arrays,
            &cache,
            WritePolicySim::auto_claim(true),
        )
        .unwrap();
        // partial lines at unaligned row ends are filled, about one per row
        let slack = 64.0 * derive_stream_counts(k).unwrap().wr as f64 / N as f64;
        assert!(claimed >= t.min.bytes_per_it, "{}: {claimed}", k.name);
        assert!(
            claimed <= t.min.bytes_per_it * 1.03 + slack,
            "{}: {claimed}",
            k.name
        );
    }
}

#[test]
fn cache_of_a_few_lines_per_stream_reproduces_max() {
    // enough lines to keep every concurrently touched row segment, not
    // enough to keep any row
    let suite = shipped_suite();
    for k in &suite.kernels {
        let grid = suite.grid_for(k).unwrap().resized(N, N);
        let lines = 4 * concurrent_streams(k);
        let sim = measure_balance(
            k,
            &grid,
            &suite.arrays,
            &[CacheLevelConfig::lines(lines)],
            WritePolicySim::AlwaysAllocate,
        )
        .unwrap();
        let t = scenario_table(k, 8).unwrap();
        assert!(
            within(sim, t.max.bytes_per_it, 3.0),
            "{}: {sim} vs {}",
            k.name,
            t.max.bytes_per_it
        );
    }
}

#[test]
fn nt_stores_drop_write_allocates() {
    let suite = shipped_suite();
    for name in ["am04", "am02", "ac03"] {
        let k = suite.kernel(name).unwrap();
        let grid = suite.grid_for(k).unwrap().resized(N, N);
        let cache = [CacheLevelConfig::fully_associative(lc_fitting_capacity(
            k, &grid,
        ))];
        let nt =
            measure_balance(k, &grid, &suite.arrays, &cache, WritePolicySim::NtBypass).unwrap();
        let t = scenario_table(k, 8).unwrap();
        let c = derive_stream_counts(k).unwrap();
        // unaligned row ends leave partial lines that still pay a fill
        assert!(nt >= t.min.bytes_per_it, "{name}");
        let slack = 2.0 * 64.0 * c.wr as f64 / N as f64;
        assert!(nt <= t.min.bytes_per_it * 1.03 + slack, "{name}: {nt}");
    }
}

#[test]
fn layer_condition_breaks_when_rows_do_not_fit() {
    let suite = shipped_suite();
    let k = suite.kernel("am04").unwrap();
    let grid = suite.grid_for(k).unwrap().resized(N, N);
    let row = grid.row_stride() * 8;
    let run = |bytes: usize| {
        measure_balance(
            k,
            &grid,
            &suite.arrays,
            &[CacheLevelConfig::fully_associative(bytes / 64 * 64)],
            WritePolicySim::AlwaysAllocate,
        )
        .unwrap()
    };
    assert!(within(run(6 * row), 24.0, 3.0));
    assert!(within(run(row / 4), 32.0, 3.0));
}
