//! Analytic code-balance model.
//!
//! Everything here works in elements per loop iteration and is scaled by the
//! element size at the end. A "write-allocate candidate" is a written array
//! that is not also read at the written location: its store misses trigger a
//! line fill unless some evasion mechanism claims the line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{derive_stream_counts, KernelSpec, Mode};

/// Per-iteration element counts of a loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StreamCounts {
    pub n_arrays: u32,
    pub rd_lcf: u32,
    pub rd_lcb: u32,
    pub wr: u32,
    pub rdwr: u32,
}

impl StreamCounts {
    /// Written streams that pay a write-allocate unless it is evaded.
    pub fn wa_candidates(&self) -> u32 {
        self.wr - self.rdwr
    }

    pub fn check(&self) -> Result<()> {
        if self.rdwr > self.wr || self.rdwr > self.rd_lcf || self.rd_lcf > self.rd_lcb {
            return Err(Error::InvalidArgument(format!(
                "inconsistent stream counts {self:?}"
            )));
        }
        Ok(())
    }

    fn reads(&self, lc: LcState) -> u32 {
        match lc {
            LcState::Fulfilled => self.rd_lcf,
            LcState::Broken => self.rd_lcb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LcState {
    Fulfilled,
    Broken,
}

impl fmt::Display for LcState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LcState::Fulfilled => "fulfilled",
            LcState::Broken => "broken",
        })
    }
}

/// How write-allocates on candidate streams are paid.
///
/// Factors are traffic ratios per store stream: 1.0 evades every
/// write-allocate, 2.0 evades none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WaPolicy {
    FullWa,
    NoWa,
    /// A residual fraction `factor - 1` of the write-allocates survives.
    Phenomenological {
        factor: f64,
    },
    /// Non-temporal stores on one stream, automatic evasion on the others.
    NtPlusSpecI2M {
        nt: f64,
        speci2m: f64,
    },
}

impl WaPolicy {
    pub fn check(&self) -> Result<()> {
        let ok = |f: f64| (1.0..=2.0).contains(&f);
        let valid = match *self {
            WaPolicy::FullWa | WaPolicy::NoWa => true,
            WaPolicy::Phenomenological { factor } => ok(factor),
            WaPolicy::NtPlusSpecI2M { nt, speci2m } => ok(nt) && ok(speci2m),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidPolicy(format!(
                "{self:?}: factors must lie in [1.0, 2.0]"
            )))
        }
    }

    /// Write-allocated elements per iteration for `candidates` streams.
    pub fn write_allocates(&self, candidates: u32) -> f64 {
        let n = candidates as f64;
        match *self {
            WaPolicy::FullWa => n,
            WaPolicy::NoWa => 0.0,
            WaPolicy::Phenomenological { factor } => (factor - 1.0) * n,
            WaPolicy::NtPlusSpecI2M { nt, speci2m } => {
                if candidates >= 1 {
                    (nt - 1.0) + (speci2m - 1.0) * (n - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether the policy relies on automatic (hardware) evasion.
    pub fn is_automatic(&self) -> bool {
        matches!(
            self,
            WaPolicy::Phenomenological { .. } | WaPolicy::NtPlusSpecI2M { .. }
        )
    }
}

impl fmt::Display for WaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaPolicy::FullWa => f.write_str("full-wa"),
            WaPolicy::NoWa => f.write_str("no-wa"),
            WaPolicy::Phenomenological { factor } => write!(f, "speci2m({factor})"),
            WaPolicy::NtPlusSpecI2M { nt, speci2m } => write!(f, "nt({nt})+speci2m({speci2m})"),
        }
    }
}

/// Memory traffic of one iteration split by origin, in elements.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ElementTraffic {
    pub reads: f64,
    pub writes: f64,
    pub write_allocates: f64,
}

impl ElementTraffic {
    pub fn new(counts: &StreamCounts, lc: LcState, wa: &WaPolicy) -> Self {
        Self {
            reads: counts.reads(lc) as f64,
            writes: counts.wr as f64,
            write_allocates: wa.write_allocates(counts.wa_candidates()),
        }
    }

    pub fn total(&self) -> f64 {
        self.reads + self.writes + self.write_allocates
    }

    pub fn bytes(&self, element_size: usize) -> f64 {
        self.total() * element_size as f64
    }
}

/// Bytes per iteration for the given layer-condition state and policy.
pub fn code_balance(
    counts: &StreamCounts,
    lc: LcState,
    wa: &WaPolicy,
    element_size: usize,
) -> Result<f64> {
    counts.check()?;
    wa.check()?;
    Ok(ElementTraffic::new(counts, lc, wa).bytes(element_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceScenario {
    pub lc: LcState,
    pub wa: WaPolicy,
    pub bytes_per_it: f64,
    pub flops_per_it: u32,
}

impl BalanceScenario {
    /// Flops per byte.
    pub fn intensity(&self) -> f64 {
        self.flops_per_it as f64 / self.bytes_per_it
    }

    pub fn code_balance(&self) -> f64 {
        self.bytes_per_it
    }
}

/// The four corners of the (layer condition, write-allocate) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioTable {
    pub min: BalanceScenario,
    pub lcf_wa: BalanceScenario,
    pub lcb: BalanceScenario,
    pub max: BalanceScenario,
}

impl ScenarioTable {
    pub fn bytes(&self) -> [f64; 4] {
        [
            self.min.bytes_per_it,
            self.lcf_wa.bytes_per_it,
            self.lcb.bytes_per_it,
            self.max.bytes_per_it,
        ]
    }
}

pub fn scenario(
    kernel: &KernelSpec,
    lc: LcState,
    wa: WaPolicy,
    element_size: usize,
) -> Result<BalanceScenario> {
    let counts = derive_stream_counts(kernel)?;
    Ok(BalanceScenario {
        lc,
        wa,
        bytes_per_it: code_balance(&counts, lc, &wa, element_size)?,
        flops_per_it: kernel.flops_per_it,
    })
}

pub fn scenario_table(kernel: &KernelSpec, element_size: usize) -> Result<ScenarioTable> {
    use LcState::*;
    Ok(ScenarioTable {
        min: scenario(kernel, Fulfilled, WaPolicy::NoWa, element_size)?,
        lcf_wa: scenario(kernel, Fulfilled, WaPolicy::FullWa, element_size)?,
        lcb: scenario(kernel, Broken, WaPolicy::NoWa, element_size)?,
        max: scenario(kernel, Broken, WaPolicy::FullWa, element_size)?,
    })
}

/// Scaling behavior across a node, keyed by evadable write streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ScalingClass {
    /// One evadable write stream: strong prime-number effect.
    I,
    /// Two or more evadable write streams.
    II,
    /// Nothing to evade: flat code balance.
    III,
}

impl fmt::Display for ScalingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingClass::I => "i",
            ScalingClass::II => "ii",
            ScalingClass::III => "iii",
        })
    }
}

pub fn classify(counts: &StreamCounts) -> ScalingClass {
    match counts.wa_candidates() {
        0 => ScalingClass::III,
        1 => ScalingClass::I,
        _ => ScalingClass::II,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerConditionReport {
    /// Bytes each multi-row array needs resident, in first-access order.
    pub per_array: Vec<(String, u64)>,
    pub total_required: u64,
    pub effective_cache: u64,
    pub status: LcState,
}

impl LayerConditionReport {
    /// Each array checked on its own against the whole effective cache.
    pub fn per_array_status(&self) -> LcState {
        if self
            .per_array
            .iter()
            .all(|&(_, bytes)| bytes < self.effective_cache)
        {
            LcState::Fulfilled
        } else {
            LcState::Broken
        }
    }
}

/// Evaluates the layer condition of `kernel` for rows of `inner_extent`
/// elements against `effective_cache` bytes shared by all arrays.
pub fn layer_condition(
    kernel: &KernelSpec,
    inner_extent: usize,
    element_size: usize,
    effective_cache: u64,
) -> Result<LayerConditionReport> {
    if inner_extent == 0 || element_size == 0 {
        return Err(Error::InvalidArgument(
            "layer condition needs positive extents".into(),
        ));
    }
    if effective_cache == 0 {
        return Err(Error::InvalidArgument(
            "effective cache size must be positive".into(),
        ));
    }
    let mut rows: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
    for a in kernel.accesses.iter().filter(|a| a.mode == Mode::Read) {
        rows.entry(&a.array).or_default().insert(a.dk);
    }
    let per_array: Vec<(String, u64)> = kernel
        .arrays()
        .into_iter()
        .filter_map(|name| {
            let n = rows.get(name).map_or(0, |r| r.len());
            (n >= 2).then(|| (name.to_string(), (n * inner_extent * element_size) as u64))
        })
        .collect();
    let total_required = per_array.iter().map(|&(_, b)| b).sum();
    let status = if total_required < effective_cache {
        LcState::Fulfilled
    } else {
        LcState::Broken
    };
    Ok(LayerConditionReport {
        per_array,
        total_required,
        effective_cache,
        status,
    })
}

/// Half-cache heuristic: only half of a cache share is usable for keeping
/// rows resident.
pub fn effective_cache(cache_share: u64) -> u64 {
    cache_share / 2
}

/// Smallest cache share for which `rows` rows of `inner_extent` elements
/// fit into the effective (halved) cache.
pub fn lc_cache_threshold(rows: usize, inner_extent: usize, element_size: usize) -> u64 {
    2 * (rows * inner_extent * element_size) as u64
}
