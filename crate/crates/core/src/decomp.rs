//! Two-dimensional domain decomposition and the halo traffic it adds.
//!
//! Ranks are factored the way CloverLeaf does it: the smallest divisor `c`
//! of `p` whose split `(p / c) x c` is no more elongated than the mesh
//! becomes the outer (y) count. Prime counts admit no such split and are cut
//! along the inner (x) dimension only, which makes local rows short.

use serde::Serialize;

use crate::balance::{layer_condition, ElementTraffic, LcState, StreamCounts, WaPolicy};
use crate::error::{Error, Result};
use crate::kernel::{derive_stream_counts, GridSpec, KernelSpec};
use crate::roofline::MachineModel;

/// `(px, py)` for a square mesh; `px` cuts the inner dimension.
pub fn factorize_ranks(p: usize) -> (usize, usize) {
    factorize_ranks_for_mesh(p, 1, 1)
}

pub fn factorize_ranks_for_mesh(p: usize, mesh_x: usize, mesh_y: usize) -> (usize, usize) {
    let p = p.max(1);
    let ratio = mesh_x as f64 / mesh_y as f64;
    let split = (1..=p)
        .filter(|c| p.is_multiple_of(*c))
        .find(|&c| (p / c) as f64 / c as f64 <= ratio);
    match split {
        Some(c) if c != p => (p / c, c),
        _ if ratio >= 1.0 => (p, 1),
        _ => (1, p),
    }
}

pub fn is_prime(n: usize) -> bool {
    n >= 2
        && (2..)
            .take_while(|d| d * d <= n)
            .all(|d| !n.is_multiple_of(d))
}

/// Splits `extent` into `parts` chunks differing by at most one element,
/// larger chunks first.
pub fn local_extents(extent: usize, parts: usize) -> Result<Vec<usize>> {
    if parts == 0 || extent < parts {
        return Err(Error::InvalidArgument(format!(
            "cannot split {extent} elements into {parts} parts"
        )));
    }
    let base = extent / parts;
    let rem = extent % parts;
    Ok((0..parts).map(|i| base + usize::from(i < rem)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decomposition {
    pub p: usize,
    pub px: usize,
    pub py: usize,
    pub local_inner_widths: Vec<usize>,
    pub local_outer_heights: Vec<usize>,
}

impl Decomposition {
    pub fn new(p: usize, mesh_x: usize, mesh_y: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("need at least one rank".into()));
        }
        let (px, py) = factorize_ranks_for_mesh(p, mesh_x, mesh_y);
        Ok(Self {
            p,
            px,
            py,
            local_inner_widths: local_extents(mesh_x, px)?,
            local_outer_heights: local_extents(mesh_y, py)?,
        })
    }

    pub fn min_inner_width(&self) -> usize {
        *self.local_inner_widths.iter().min().unwrap()
    }
}

/// Fraction of a row's read volume spent on `extra_lines` additional cache
/// lines of `line_elems` elements.
pub fn halo_read_overhead(inner: usize, extra_lines: usize, line_elems: usize) -> f64 {
    let extra = (extra_lines * line_elems) as f64;
    extra / (inner as f64 + extra)
}

/// Global problem and memory layout for a rank sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SweepConfig {
    /// Square mesh edge length.
    pub extent: usize,
    pub halo_lo: usize,
    pub halo_hi: usize,
    pub element_size: usize,
    pub line_size: usize,
}

impl SweepConfig {
    /// Layout of `grid` (its inner-dimension halos and element size), square
    /// mesh of its inner extent.
    pub fn from_grid(grid: &GridSpec) -> Self {
        Self {
            extent: grid.inner_extent,
            halo_lo: grid.halo_lo[0],
            halo_hi: grid.halo_hi[0],
            element_size: grid.element_size,
            line_size: 64,
        }
    }

    /// Rows of `width` elements start and end on line boundaries.
    pub fn rows_aligned(&self, width: usize) -> bool {
        let line = self.line_size;
        let e = self.element_size;
        (self.halo_lo * e).is_multiple_of(line)
            && ((width + self.halo_lo + self.halo_hi) * e).is_multiple_of(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LcMode {
    /// Check the layer condition at the local row width against the
    /// machine's effective cache per process.
    Evaluate,
    Fixed(LcState),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PolicyChoice {
    Fixed(WaPolicy),
    /// Write-allocates below the machine's activation core count,
    /// phenomenological evasion above it.
    Automatic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankPrediction {
    pub p: usize,
    pub px: usize,
    pub py: usize,
    pub inner_width: usize,
    pub prime: bool,
    pub lc: LcState,
    pub policy: WaPolicy,
    pub read_overhead: f64,
    pub write_overhead: f64,
    /// Elements per iteration after decomposition overheads.
    pub traffic: ElementTraffic,
    pub bytes_per_it: f64,
}

/// Bytes per iteration of `kernel` on `p` ranks.
///
/// Read streams grow by one extra line per local row once the inner
/// dimension is cut. Write-allocate candidates additionally pay a fill for
/// the partially written line at each row boundary when rows are not
/// line-aligned, whatever the evasion policy.
pub fn predict_rank(
    kernel: &KernelSpec,
    counts: &StreamCounts,
    cfg: &SweepConfig,
    machine: &MachineModel,
    p: usize,
    lc_mode: LcMode,
    policy: PolicyChoice,
) -> Result<RankPrediction> {
    let d = Decomposition::new(p, cfg.extent, cfg.extent)?;
    let width = d.min_inner_width();
    let lc = match lc_mode {
        LcMode::Fixed(lc) => lc,
        LcMode::Evaluate => {
            layer_condition(
                kernel,
                width,
                cfg.element_size,
                machine.effective_cache_per_process(p),
            )?
            .status
        }
    };
    let mut wa = match policy {
        PolicyChoice::Fixed(wa) => wa,
        PolicyChoice::Automatic => machine.automatic_policy(p),
    };
    if let Some(over) = kernel.wa_override {
        if wa.is_automatic() {
            wa = over;
        }
    }
    wa.check()?;

    let line_elems = cfg.line_size / cfg.element_size;
    let (read_overhead, write_overhead) = if d.px > 1 {
        let r = halo_read_overhead(width, 1, line_elems);
        (r, if cfg.rows_aligned(width) { 0.0 } else { r })
    } else {
        (0.0, 0.0)
    };
    let base = ElementTraffic::new(counts, lc, &wa);
    let traffic = ElementTraffic {
        reads: base.reads * (1.0 + read_overhead),
        writes: base.writes,
        write_allocates: base.write_allocates + counts.wa_candidates() as f64 * write_overhead,
    };
    Ok(RankPrediction {
        p,
        px: d.px,
        py: d.py,
        inner_width: width,
        prime: is_prime(p),
        lc,
        policy: wa,
        read_overhead,
        write_overhead,
        traffic,
        bytes_per_it: traffic.bytes(cfg.element_size),
    })
}

pub fn predict_rank_sweep(
    kernel: &KernelSpec,
    cfg: &SweepConfig,
    ranks: impl IntoIterator<Item = usize>,
    machine: &MachineModel,
    lc_mode: LcMode,
    policy: PolicyChoice,
) -> Result<Vec<RankPrediction>> {
    let counts = derive_stream_counts(kernel)?;
    ranks
        .into_iter()
        .map(|p| predict_rank(kernel, &counts, cfg, machine, p, lc_mode, policy))
        .collect()
}
