//! Kernel intermediate representation: grids, arrays and the per-iteration
//! accesses of a two-dimensional stencil loop nest.
//!
//! The inner index `j` is the contiguous dimension (column-major layout), the
//! outer index `k` strides over rows. Offsets of an [`Access`] are relative to
//! the loop indices.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::balance::{StreamCounts, WaPolicy};
use crate::error::{Error, Result};

/// Largest stencil offset accepted by default validation.
pub const DEFAULT_MAX_OFFSET: i32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Read,
    Write,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Read => f.write_str("read"),
            Mode::Write => f.write_str("write"),
        }
    }
}

fn default_element_size() -> usize {
    8
}

fn default_alignment() -> usize {
    64
}

/// A two-dimensional grid with halo padding.
///
/// `halo_lo` and `halo_hi` are indexed `[j, k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub name: String,
    pub inner_extent: usize,
    pub outer_extent: usize,
    #[serde(default)]
    pub halo_lo: [usize; 2],
    #[serde(default)]
    pub halo_hi: [usize; 2],
    #[serde(default = "default_element_size")]
    pub element_size: usize,
}

impl GridSpec {
    pub fn new(name: impl Into<String>, inner_extent: usize, outer_extent: usize) -> Self {
        Self {
            name: name.into(),
            inner_extent,
            outer_extent,
            halo_lo: [0, 0],
            halo_hi: [0, 0],
            element_size: 8,
        }
    }

    pub fn with_halo(mut self, halo: usize) -> Self {
        self.halo_lo = [halo, halo];
        self.halo_hi = [halo, halo];
        self
    }

    pub fn with_element_size(mut self, element_size: usize) -> Self {
        self.element_size = element_size;
        self
    }

    /// Same halos and element size, different interior.
    pub fn resized(&self, inner_extent: usize, outer_extent: usize) -> Self {
        Self {
            inner_extent,
            outer_extent,
            ..self.clone()
        }
    }

    /// Allocated elements per row, halos included.
    pub fn row_stride(&self) -> usize {
        self.halo_lo[0] + self.inner_extent + self.halo_hi[0]
    }

    pub fn allocated_rows(&self) -> usize {
        self.halo_lo[1] + self.outer_extent + self.halo_hi[1]
    }

    pub fn allocated_bytes(&self) -> u64 {
        (self.row_stride() * self.allocated_rows() * self.element_size) as u64
    }

    pub fn check(&self) -> Result<()> {
        if self.inner_extent == 0 || self.outer_extent == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid `{}` has a zero extent ({}x{})",
                self.name, self.inner_extent, self.outer_extent
            )));
        }
        if !matches!(self.element_size, 4 | 8) {
            return Err(Error::InvalidGrid(format!(
                "grid `{}`: element size must be 4 or 8 bytes, got {}",
                self.name, self.element_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub grid: String,
    #[serde(default = "default_alignment")]
    pub base_alignment: usize,
}

impl ArrayDecl {
    pub fn new(name: impl Into<String>, grid: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            grid: grid.into(),
            base_alignment: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Access {
    pub array: String,
    pub dj: i32,
    pub dk: i32,
    pub mode: Mode,
}

impl Access {
    pub fn read(array: impl Into<String>, dj: i32, dk: i32) -> Self {
        Self {
            array: array.into(),
            dj,
            dk,
            mode: Mode::Read,
        }
    }

    pub fn write(array: impl Into<String>, dj: i32, dk: i32) -> Self {
        Self {
            array: array.into(),
            dj,
            dk,
            mode: Mode::Write,
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}(j{:+},k{:+})",
            self.mode, self.array, self.dj, self.dk
        )
    }
}

/// Inclusive loop bounds relative to the interior: the loop runs from
/// `lo` to `extent - 1 + hi`. `{0, 0}` sweeps exactly the interior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopRange {
    pub lo: i64,
    pub hi: i64,
}

impl LoopRange {
    pub fn bounds(&self, extent: usize) -> (i64, i64) {
        (self.lo, extent as i64 - 1 + self.hi)
    }

    pub fn trip_count(&self, extent: usize) -> u64 {
        let (lo, hi) = self.bounds(extent);
        if hi < lo {
            0
        } else {
            (hi - lo + 1) as u64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    pub accesses: Vec<Access>,
    #[serde(default)]
    pub flops_per_it: u32,
    #[serde(default)]
    pub loop_j: LoopRange,
    #[serde(default)]
    pub loop_k: LoopRange,
    /// Replaces the automatic write-allocate evasion policy for this loop,
    /// for loops where the hardware mechanism is known not to engage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wa_override: Option<WaPolicy>,
}

impl KernelSpec {
    pub fn new(name: impl Into<String>, accesses: Vec<Access>, flops_per_it: u32) -> Self {
        Self {
            name: name.into(),
            accesses,
            flops_per_it,
            loop_j: LoopRange::default(),
            loop_k: LoopRange::default(),
            wa_override: None,
        }
    }

    /// Array names in order of first appearance.
    pub fn arrays(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.accesses
            .iter()
            .map(|a| a.array.as_str())
            .filter(|name| seen.insert(*name))
            .collect()
    }

    pub fn iterations(&self, grid: &GridSpec) -> u64 {
        self.loop_j.trip_count(grid.inner_extent) * self.loop_k.trip_count(grid.outer_extent)
    }

    /// Checks the invariants that do not depend on a surrounding suite.
    pub fn validate(&self) -> Vec<Diagnostic> {
        self.validate_with(DEFAULT_MAX_OFFSET)
    }

    pub fn validate_with(&self, max_offset: i32) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.accesses.is_empty() {
            out.push(self.diag(None, DiagnosticKind::NoAccesses));
        }
        let mut seen = HashSet::new();
        let mut write_offsets: BTreeMap<&str, (i32, i32)> = BTreeMap::new();
        for (idx, access) in self.accesses.iter().enumerate() {
            if access.dj.abs() > max_offset || access.dk.abs() > max_offset {
                out.push(self.diag(Some(idx), DiagnosticKind::OffsetTooLarge { max_offset }));
            }
            if !seen.insert(access) {
                out.push(self.diag(Some(idx), DiagnosticKind::DuplicateAccess));
            }
            if access.mode == Mode::Write {
                match write_offsets.get(access.array.as_str()) {
                    Some(&first) if first != (access.dj, access.dk) => {
                        out.push(self.diag(Some(idx), DiagnosticKind::MultipleWriteOffsets));
                    }
                    Some(_) => {}
                    None => {
                        write_offsets.insert(&access.array, (access.dj, access.dk));
                    }
                }
            }
        }
        out
    }

    fn diag(&self, access: Option<usize>, kind: DiagnosticKind) -> Diagnostic {
        Diagnostic {
            kernel: self.name.clone(),
            access: access.map(|i| (i, self.accesses[i].clone())),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagnosticKind {
    NoAccesses,
    DuplicateAccess,
    MultipleWriteOffsets,
    OffsetTooLarge { max_offset: i32 },
    UndeclaredArray,
    UndeclaredGrid { array: String, grid: String },
    DuplicateName { what: &'static str, name: String },
    BadAlignment { array: String, alignment: usize },
    BadGrid(String),
}

/// One violated invariant, naming the kernel and, when applicable, the
/// offending access by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kernel: String,
    pub access: Option<(usize, Access)>,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.kind {
            DiagnosticKind::NoAccesses => "kernel has no accesses".to_string(),
            DiagnosticKind::DuplicateAccess => "duplicate access".to_string(),
            DiagnosticKind::MultipleWriteOffsets => {
                "array is written at more than one offset".to_string()
            }
            DiagnosticKind::OffsetTooLarge { max_offset } => {
                format!("offset exceeds the stencil radius limit of {max_offset}")
            }
            DiagnosticKind::UndeclaredArray => "array is not declared".to_string(),
            DiagnosticKind::UndeclaredGrid { array, grid } => {
                format!("array `{array}` refers to undeclared grid `{grid}`")
            }
            DiagnosticKind::DuplicateName { what, name } => {
                format!("duplicate {what} name `{name}`")
            }
            DiagnosticKind::BadAlignment { array, alignment } => format!(
                "array `{array}`: base alignment {alignment} is not a power of two >= element size"
            ),
            DiagnosticKind::BadGrid(msg) => msg.clone(),
        };
        match &self.access {
            Some((idx, access)) => write!(f, "{}: access #{idx} ({access}): {what}", self.kernel),
            None => write!(f, "{}: {what}", self.kernel),
        }
    }
}

/// A kernel-suite document: grids, arrays and the kernels that access them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelSuite {
    #[serde(default)]
    pub grids: Vec<GridSpec>,
    #[serde(default)]
    pub arrays: Vec<ArrayDecl>,
    #[serde(default)]
    pub kernels: Vec<KernelSpec>,
}

impl KernelSuite {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serializes")
    }

    pub fn kernel(&self, name: &str) -> Result<&KernelSpec> {
        self.kernels
            .iter()
            .find(|k| k.name == name)
            .ok_or_else(|| Error::UnknownKernel(name.to_string()))
    }

    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn grid(&self, name: &str) -> Option<&GridSpec> {
        self.grids.iter().find(|g| g.name == name)
    }

    /// The grid shared by the kernel's arrays (the first one referenced).
    pub fn grid_for(&self, kernel: &KernelSpec) -> Result<&GridSpec> {
        let first = kernel
            .accesses
            .first()
            .ok_or_else(|| Error::InvalidKernel {
                kernel: kernel.name.clone(),
                diagnostics: kernel.validate(),
            })?;
        let array = self
            .array(&first.array)
            .ok_or_else(|| Error::UnknownArray(first.array.clone()))?;
        self.grid(&array.grid)
            .ok_or_else(|| Error::InvalidGrid(format!("undeclared grid `{}`", array.grid)))
    }

    /// Suite-level checks: declarations, name uniqueness, alignment.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let suite = "<suite>".to_string();
        let mut out = Vec::new();
        let mut names = HashSet::new();
        for grid in &self.grids {
            if !names.insert(&grid.name) {
                out.push(Diagnostic {
                    kernel: suite.clone(),
                    access: None,
                    kind: DiagnosticKind::DuplicateName {
                        what: "grid",
                        name: grid.name.clone(),
                    },
                });
            }
            if let Err(e) = grid.check() {
                out.push(Diagnostic {
                    kernel: suite.clone(),
                    access: None,
                    kind: DiagnosticKind::BadGrid(e.to_string()),
                });
            }
        }
        let mut names = HashSet::new();
        for array in &self.arrays {
            if !names.insert(&array.name) {
                out.push(Diagnostic {
                    kernel: suite.clone(),
                    access: None,
                    kind: DiagnosticKind::DuplicateName {
                        what: "array",
                        name: array.name.clone(),
                    },
                });
            }
            match self.grid(&array.grid) {
                None => out.push(Diagnostic {
                    kernel: suite.clone(),
                    access: None,
                    kind: DiagnosticKind::UndeclaredGrid {
                        array: array.name.clone(),
                        grid: array.grid.clone(),
                    },
                }),
                Some(grid) => {
                    let a = array.base_alignment;
                    if !a.is_power_of_two() || a < grid.element_size {
                        out.push(Diagnostic {
                            kernel: suite.clone(),
                            access: None,
                            kind: DiagnosticKind::BadAlignment {
                                array: array.name.clone(),
                                alignment: a,
                            },
                        });
                    }
                }
            }
        }
        let mut names = HashSet::new();
        for kernel in &self.kernels {
            if !names.insert(&kernel.name) {
                out.push(Diagnostic {
                    kernel: suite.clone(),
                    access: None,
                    kind: DiagnosticKind::DuplicateName {
                        what: "kernel",
                        name: kernel.name.clone(),
                    },
                });
            }
            out.extend(self.validate_kernel(kernel));
        }
        out
    }

    /// Kernel checks plus "every referenced array is declared".
    pub fn validate_kernel(&self, kernel: &KernelSpec) -> Vec<Diagnostic> {
        let mut out = kernel.validate();
        for (idx, access) in kernel.accesses.iter().enumerate() {
            if self.array(&access.array).is_none() {
                out.push(kernel.diag(Some(idx), DiagnosticKind::UndeclaredArray));
            }
        }
        out
    }
}

/// Derives the per-iteration stream counts of a kernel.
///
/// Reads are counted per array: one leading-edge stream when layer
/// conditions hold, one stream per distinct row (`dk`) when they are broken.
/// A written array contributes one element per iteration; it counts as
/// read-and-write only if it is also read at exactly the written offset.
pub fn derive_stream_counts(kernel: &KernelSpec) -> Result<StreamCounts> {
    let diagnostics = kernel.validate();
    if !diagnostics.is_empty() {
        return Err(Error::InvalidKernel {
            kernel: kernel.name.clone(),
            diagnostics,
        });
    }

    let mut read_rows: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
    let mut read_points: HashSet<(&str, i32, i32)> = HashSet::new();
    let mut writes: BTreeMap<&str, (i32, i32)> = BTreeMap::new();
    let mut arrays = BTreeSet::new();
    for a in &kernel.accesses {
        arrays.insert(a.array.as_str());
        match a.mode {
            Mode::Read => {
                read_rows.entry(&a.array).or_default().insert(a.dk);
                read_points.insert((&a.array, a.dj, a.dk));
            }
            Mode::Write => {
                writes.insert(&a.array, (a.dj, a.dk));
            }
        }
    }

    let rdwr = writes
        .iter()
        .filter(|(name, &(dj, dk))| read_points.contains(&(**name, dj, dk)))
        .count();

    Ok(StreamCounts {
        n_arrays: arrays.len() as u32,
        rd_lcf: read_rows.len() as u32,
        rd_lcb: read_rows.values().map(|rows| rows.len() as u32).sum(),
        wr: writes.len() as u32,
        rdwr: rdwr as u32,
    })
}
