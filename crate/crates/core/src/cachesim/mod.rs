//! Trace-driven simulation of an inclusive, write-back cache hierarchy with
//! write-allocate evasion.
//!
//! Traffic is only counted between the last level and memory. Dirty state is
//! tracked at the last level; evicting a line there back-invalidates the
//! levels above.

mod lru;
pub mod trace;

use std::collections::VecDeque;

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{Access, ArrayDecl, GridSpec, KernelSpec, Mode};
use lru::{Evicted, LruStore};
pub use trace::{gen_trace, read_trace, write_trace, KernelTrace, TraceEvent};

pub const DEFAULT_LINE_SIZE: usize = 64;
pub const DEFAULT_CLAIM_WINDOW: usize = 64;
const MAX_LINE_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Associativity {
    Full,
    Ways(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheLevelConfig {
    pub capacity: usize,
    pub line_size: usize,
    pub associativity: Associativity,
}

impl CacheLevelConfig {
    pub fn fully_associative(capacity: usize) -> Self {
        Self {
            capacity,
            line_size: DEFAULT_LINE_SIZE,
            associativity: Associativity::Full,
        }
    }

    pub fn set_associative(capacity: usize, ways: usize) -> Self {
        Self {
            capacity,
            line_size: DEFAULT_LINE_SIZE,
            associativity: Associativity::Ways(ways),
        }
    }

    /// A fully associative level holding `lines` lines.
    pub fn lines(lines: usize) -> Self {
        Self::fully_associative(lines * DEFAULT_LINE_SIZE)
    }

    pub fn line_count(&self) -> usize {
        self.capacity / self.line_size
    }

    fn check(&self) -> Result<()> {
        if !self.line_size.is_power_of_two() || self.line_size > MAX_LINE_SIZE {
            return Err(Error::InvalidCache(format!(
                "line size {} must be a power of two <= {MAX_LINE_SIZE}",
                self.line_size
            )));
        }
        if self.capacity == 0 || !self.capacity.is_multiple_of(self.line_size) {
            return Err(Error::InvalidCache(format!(
                "capacity {} must be a positive multiple of the line size {}",
                self.capacity, self.line_size
            )));
        }
        if let Associativity::Ways(w) = self.associativity {
            if w == 0 || !self.line_count().is_multiple_of(w) {
                return Err(Error::InvalidCache(format!(
                    "{} lines cannot be split into {w}-way sets",
                    self.line_count()
                )));
            }
        }
        Ok(())
    }

    fn build(&self) -> LruStore {
        match self.associativity {
            Associativity::Full => LruStore::fully_associative(self.line_count()),
            Associativity::Ways(w) => LruStore::set_associative(self.line_count(), w),
        }
    }
}

/// How store misses are served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WritePolicySim {
    /// A store miss fills the line from memory first.
    AlwaysAllocate,
    /// Store misses bypass the caches through write-combining; full lines go
    /// straight to memory, partial lines cost one line of read traffic.
    NtBypass,
    /// Store misses are watched by a FIFO window of `buffer_lines` lines; a
    /// line fully written while in the window is claimed without a fill.
    AutoClaim { buffer_lines: usize, active: bool },
}

impl WritePolicySim {
    pub fn auto_claim(active: bool) -> Self {
        WritePolicySim::AutoClaim {
            buffer_lines: DEFAULT_CLAIM_WINDOW,
            active,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MemTraffic {
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub wa_avoided_bytes: u64,
    pub iterations: u64,
}

impl MemTraffic {
    pub fn total_bytes(&self) -> u64 {
        self.read_bytes + self.write_bytes
    }

    pub fn bytes_per_iteration(&self) -> f64 {
        self.total_bytes() as f64 / self.iterations as f64
    }
}

/// Store misses awaiting completion under `AutoClaim`.
#[derive(Debug, Default)]
struct ClaimWindow {
    capacity: usize,
    pending: FxHashMap<u64, (u128, u64)>,
    order: VecDeque<(u64, u64)>,
    seq: u64,
}

impl ClaimWindow {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Default::default()
        }
    }

    fn contains(&self, line: u64) -> bool {
        self.pending.contains_key(&line)
    }

    fn remove(&mut self, line: u64) -> bool {
        self.pending.remove(&line).is_some()
    }

    /// Adds bytes to a pending line; true once the line is complete (it is
    /// then dropped from the window).
    fn merge(&mut self, line: u64, mask: u128, full: u128) -> bool {
        if let Some((m, _)) = self.pending.get_mut(&line) {
            *m |= mask;
            if *m == full {
                self.pending.remove(&line);
                return true;
            }
        }
        false
    }

    /// Starts tracking a line; returns a line pushed out incomplete.
    fn push(&mut self, line: u64, mask: u128) -> Option<u64> {
        self.seq += 1;
        self.pending.insert(line, (mask, self.seq));
        self.order.push_back((line, self.seq));
        let mut spilled = None;
        if self.pending.len() > self.capacity {
            while let Some((old, seq)) = self.order.pop_front() {
                if self.pending.get(&old).is_some_and(|&(_, s)| s == seq) {
                    self.pending.remove(&old);
                    spilled = Some(old);
                    break;
                }
            }
        }
        if self.order.len() > 4 * self.capacity + 64 {
            let pending = &self.pending;
            self.order
                .retain(|(l, s)| pending.get(l).is_some_and(|&(_, ps)| ps == *s));
        }
        spilled
    }

    fn drain(&mut self) -> usize {
        let n = self.pending.len();
        self.pending.clear();
        self.order.clear();
        n
    }
}

/// A single-threaded simulation instance.
#[derive(Debug)]
pub struct Simulator {
    levels: Vec<LruStore>,
    line_size: u64,
    line_shift: u32,
    full_mask: u128,
    access_size: u64,
    policy: WritePolicySim,
    window: ClaimWindow,
    nt_pending: FxHashMap<u64, u128>,
    read_lines: u64,
    write_lines: u64,
    claimed_lines: u64,
}

impl Simulator {
    /// `levels` run from the core outwards; the last one talks to memory.
    pub fn new(
        levels: &[CacheLevelConfig],
        policy: WritePolicySim,
        access_size: usize,
    ) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::InvalidCache("at least one cache level is required".into()))?;
        for level in levels {
            level.check()?;
            if level.line_size != first.line_size {
                return Err(Error::InvalidCache(
                    "all levels must share one line size".into(),
                ));
            }
        }
        if access_size == 0 || access_size > first.line_size {
            return Err(Error::InvalidCache(format!(
                "access size {access_size} must lie in 1..={}",
                first.line_size
            )));
        }
        let window = match policy {
            WritePolicySim::AutoClaim { buffer_lines, .. } => {
                if buffer_lines == 0 {
                    return Err(Error::InvalidCache(
                        "claim window needs at least one line".into(),
                    ));
                }
                ClaimWindow::new(buffer_lines)
            }
            _ => ClaimWindow::new(0),
        };
        let line_size = first.line_size as u64;
        Ok(Self {
            levels: levels.iter().map(CacheLevelConfig::build).collect(),
            line_size,
            line_shift: line_size.trailing_zeros(),
            full_mask: if line_size == 128 {
                u128::MAX
            } else {
                (1u128 << line_size) - 1
            },
            access_size: access_size as u64,
            policy,
            window,
            nt_pending: FxHashMap::default(),
            read_lines: 0,
            write_lines: 0,
            claimed_lines: 0,
        })
    }

    pub fn access(&mut self, event: TraceEvent) {
        let end = event.address + self.access_size;
        let mut addr = event.address;
        while addr < end {
            let line = addr >> self.line_shift;
            let line_end = (line + 1) << self.line_shift;
            let stop = end.min(line_end);
            let lo = addr - (line << self.line_shift);
            let len = stop - addr;
            let mask = if len == 128 {
                u128::MAX
            } else {
                ((1u128 << len) - 1) << lo
            };
            match event.mode {
                Mode::Read => self.read(line),
                Mode::Write => self.write(line, mask),
            }
            addr = stop;
        }
    }

    /// Flushes pending state and dirty lines and returns the traffic.
    pub fn finish(mut self) -> MemTraffic {
        // incomplete claims must be filled before they can be written back
        self.read_lines += self.window.drain() as u64;
        let partial = self.nt_pending.len() as u64;
        self.read_lines += partial;
        self.write_lines += partial;
        self.nt_pending.clear();
        let llc = self.levels.len() - 1;
        self.write_lines += self.levels[llc].drain_dirty();
        MemTraffic {
            read_bytes: self.read_lines * self.line_size,
            write_bytes: self.write_lines * self.line_size,
            wa_avoided_bytes: self.claimed_lines * self.line_size,
            iterations: 0,
        }
    }

    fn llc(&self) -> usize {
        self.levels.len() - 1
    }

    /// Brings a line into every level; true on a hit anywhere. Misses are
    /// not charged here.
    fn fetch(&mut self, line: u64) -> bool {
        let llc = self.llc();
        let hit_level = (0..=llc).find(|&i| self.levels[i].touch(line));
        let fill_from = match hit_level {
            Some(i) => i,
            None => {
                if let Some(victim) = self.levels[llc].insert(line, false) {
                    self.evict_from_llc(victim);
                }
                llc
            }
        };
        for i in 0..fill_from {
            // upper levels drop clean copies silently; dirtiness lives in the LLC
            self.levels[i].insert(line, false);
        }
        hit_level.is_some()
    }

    fn evict_from_llc(&mut self, victim: Evicted) {
        let llc = self.llc();
        for i in 0..llc {
            self.levels[i].remove(victim.line);
        }
        if self.window.remove(victim.line) {
            // never completed: merge with memory before writing back
            self.read_lines += 1;
        }
        if victim.dirty {
            self.write_lines += 1;
        }
    }

    fn read(&mut self, line: u64) {
        if self.nt_pending.remove(&line).is_some() {
            self.read_lines += 1;
            self.write_lines += 1;
        }
        if self.fetch(line) {
            if self.window.remove(line) {
                self.read_lines += 1;
            }
        } else {
            self.read_lines += 1;
        }
    }

    fn write(&mut self, line: u64, mask: u128) {
        let llc = self.llc();
        match self.policy {
            WritePolicySim::AlwaysAllocate | WritePolicySim::AutoClaim { active: false, .. } => {
                if !self.fetch(line) {
                    self.read_lines += 1;
                }
                self.levels[llc].mark_dirty(line);
            }
            WritePolicySim::NtBypass => {
                if self.levels[llc].contains(line) {
                    self.fetch(line);
                    self.levels[llc].mark_dirty(line);
                } else {
                    let m = self.nt_pending.entry(line).or_insert(0);
                    *m |= mask;
                    if *m == self.full_mask {
                        self.nt_pending.remove(&line);
                        self.write_lines += 1;
                    }
                }
            }
            WritePolicySim::AutoClaim { active: true, .. } => {
                if self.fetch(line) {
                    if self.window.contains(line) && self.window.merge(line, mask, self.full_mask) {
                        self.claimed_lines += 1;
                    }
                } else if mask == self.full_mask {
                    self.claimed_lines += 1;
                } else if self.window.push(line, mask).is_some() {
                    self.read_lines += 1;
                }
                self.levels[llc].mark_dirty(line);
            }
        }
    }
}

/// Replays `events` through a fresh hierarchy.
pub fn simulate(
    events: impl IntoIterator<Item = TraceEvent>,
    levels: &[CacheLevelConfig],
    policy: WritePolicySim,
    access_size: usize,
) -> Result<MemTraffic> {
    let mut sim = Simulator::new(levels, policy, access_size)?;
    for e in events {
        sim.access(e);
    }
    Ok(sim.finish())
}

/// Simulated memory traffic of one sweep of `kernel` over `grid`.
pub fn measure_traffic(
    kernel: &KernelSpec,
    grid: &GridSpec,
    arrays: &[ArrayDecl],
    levels: &[CacheLevelConfig],
    policy: WritePolicySim,
) -> Result<MemTraffic> {
    let trace = gen_trace(kernel, grid, arrays)?;
    let mut traffic = simulate(&trace, levels, policy, trace.element_size())?;
    traffic.iterations = trace.iterations();
    Ok(traffic)
}

/// Simulated bytes per iteration of one sweep.
pub fn measure_balance(
    kernel: &KernelSpec,
    grid: &GridSpec,
    arrays: &[ArrayDecl],
    levels: &[CacheLevelConfig],
    policy: WritePolicySim,
) -> Result<f64> {
    Ok(measure_traffic(kernel, grid, arrays, levels, policy)?.bytes_per_iteration())
}

/// A cache comfortably above the kernel's layer-condition requirement on
/// `grid`: twice the rows spanned by every array, rounded up to lines.
pub fn lc_fitting_capacity(kernel: &KernelSpec, grid: &GridSpec) -> usize {
    let mut span: FxHashMap<&str, (i32, i32)> = FxHashMap::default();
    for a in &kernel.accesses {
        let e = span.entry(&a.array).or_insert((a.dk, a.dk));
        e.0 = e.0.min(a.dk);
        e.1 = e.1.max(a.dk);
    }
    let rows: usize = span.values().map(|(lo, hi)| (hi - lo + 2) as usize).sum();
    let bytes = 2 * rows * grid.row_stride() * grid.element_size;
    bytes.div_ceil(DEFAULT_LINE_SIZE) * DEFAULT_LINE_SIZE
}

const EXPERIMENT_CACHE: usize = 1 << 20;

/// Ratio of memory traffic to explicitly stored bytes for `streams`
/// interleaved store streams of `volume` bytes in total.
pub fn store_ratio(streams: usize, policy: WritePolicySim, volume: u64) -> Result<f64> {
    if streams == 0 {
        return Err(Error::InvalidArgument(
            "need at least one store stream".into(),
        ));
    }
    // whole lines per stream so aligned streams never leave partial lines
    let per_stream = (volume / (64 * streams as u64)) as usize * 8;
    if per_stream == 0 {
        return Err(Error::InvalidArgument(format!(
            "volume of {volume} bytes is too small for {streams} streams"
        )));
    }
    let names: Vec<String> = (0..streams).map(|s| format!("s{s}")).collect();
    let kernel = KernelSpec::new(
        "store",
        names
            .iter()
            .map(|n| Access::write(n.as_str(), 0, 0))
            .collect(),
        0,
    );
    let arrays: Vec<_> = names
        .iter()
        .map(|n| ArrayDecl::new(n.as_str(), "g"))
        .collect();
    let grid = GridSpec::new("g", per_stream, 1);
    let traffic = measure_traffic(
        &kernel,
        &grid,
        &arrays,
        &[CacheLevelConfig::fully_associative(EXPERIMENT_CACHE)],
        policy,
    )?;
    let stored = (per_stream * streams * 8) as f64;
    Ok(traffic.total_bytes() as f64 / stored)
}

/// Read-to-write volume ratio of a strip-mined copy `a = b`: rows of
/// `inner` elements, each preceded by `halo` skipped elements, until
/// `total_bytes` have been copied.
pub fn halo_copy_experiment(
    inner: usize,
    halo: usize,
    total_bytes: u64,
    policy: WritePolicySim,
) -> Result<f64> {
    if inner == 0 {
        return Err(Error::InvalidArgument(
            "copy rows need at least one element".into(),
        ));
    }
    let row_bytes = (inner * 8) as u64;
    let rows = total_bytes.div_ceil(row_bytes).max(1) as usize;
    let mut grid = GridSpec::new("g", inner, rows);
    grid.halo_lo = [halo, 0];
    let kernel = KernelSpec::new(
        "copy",
        vec![Access::read("b", 0, 0), Access::write("a", 0, 0)],
        0,
    );
    let arrays = [ArrayDecl::new("b", "g"), ArrayDecl::new("a", "g")];
    let t = measure_traffic(
        &kernel,
        &grid,
        &arrays,
        &[CacheLevelConfig::fully_associative(EXPERIMENT_CACHE)],
        policy,
    )?;
    Ok(t.read_bytes as f64 / t.write_bytes as f64)
}
