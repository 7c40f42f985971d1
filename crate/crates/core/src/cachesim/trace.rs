//! Address traces of a kernel sweep and their binary dump format.
//!
//! A dumped trace is a plain sequence of 9-byte little-endian records:
//! `u64` byte address followed by a `u8` mode (0 = read, 1 = write).

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::kernel::{ArrayDecl, GridSpec, KernelSpec, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub address: u64,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy)]
struct ResolvedAccess {
    base: u64,
    dj: i64,
    dk: i64,
    mode: Mode,
}

/// The access stream of one kernel sweep over a grid.
///
/// Iterates `k` outer and `j` inner, both ascending; within an iteration all
/// reads come first (in declaration order), then all writes.
#[derive(Debug, Clone)]
pub struct KernelTrace {
    accesses: Vec<ResolvedAccess>,
    j_bounds: (i64, i64),
    k_bounds: (i64, i64),
    row_stride: i64,
    halo_j: i64,
    halo_k: i64,
    element_size: u64,
    bases: Vec<(String, u64)>,
}

impl KernelTrace {
    pub fn element_size(&self) -> usize {
        self.element_size as usize
    }

    pub fn iterations(&self) -> u64 {
        let span = |(lo, hi): (i64, i64)| if hi < lo { 0 } else { (hi - lo + 1) as u64 };
        span(self.j_bounds) * span(self.k_bounds)
    }

    pub fn len(&self) -> u64 {
        self.iterations() * self.accesses.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Base address of each array, in layout order.
    pub fn array_bases(&self) -> &[(String, u64)] {
        &self.bases
    }

    pub fn events(&self) -> TraceIter<'_> {
        TraceIter {
            trace: self,
            j: self.j_bounds.0,
            k: self.k_bounds.0,
            idx: 0,
            done: self.iterations() == 0,
        }
    }

    fn address(&self, a: &ResolvedAccess, j: i64, k: i64) -> u64 {
        let row = k + a.dk + self.halo_k;
        let col = j + a.dj + self.halo_j;
        a.base + (row * self.row_stride + col) as u64 * self.element_size
    }
}

impl<'a> IntoIterator for &'a KernelTrace {
    type Item = TraceEvent;
    type IntoIter = TraceIter<'a>;

    fn into_iter(self) -> Self::IntoIter {
        self.events()
    }
}

pub struct TraceIter<'a> {
    trace: &'a KernelTrace,
    j: i64,
    k: i64,
    idx: usize,
    done: bool,
}

impl Iterator for TraceIter<'_> {
    type Item = TraceEvent;

    fn next(&mut self) -> Option<TraceEvent> {
        if self.done {
            return None;
        }
        let t = self.trace;
        let a = &t.accesses[self.idx];
        let event = TraceEvent {
            address: t.address(a, self.j, self.k),
            mode: a.mode,
        };
        self.idx += 1;
        if self.idx == t.accesses.len() {
            self.idx = 0;
            self.j += 1;
            if self.j > t.j_bounds.1 {
                self.j = t.j_bounds.0;
                self.k += 1;
                self.done = self.k > t.k_bounds.1;
            }
        }
        Some(event)
    }
}

fn align_up(x: u64, align: u64) -> u64 {
    x.div_ceil(align) * align
}

/// Builds the trace of `kernel` sweeping `grid`.
///
/// Every array the kernel touches gets the shape of `grid`; arrays are laid
/// out back to back in the order of `arrays`, each base aligned to its
/// declared alignment.
pub fn gen_trace(
    kernel: &KernelSpec,
    grid: &GridSpec,
    arrays: &[ArrayDecl],
) -> Result<KernelTrace> {
    grid.check()?;
    let diagnostics = kernel.validate();
    if !diagnostics.is_empty() {
        return Err(Error::InvalidKernel {
            kernel: kernel.name.clone(),
            diagnostics,
        });
    }
    let used = kernel.arrays();
    for name in &used {
        if !arrays.iter().any(|a| a.name == *name) {
            return Err(Error::UnknownArray(name.to_string()));
        }
    }

    let mut bases = Vec::new();
    let mut next = 0u64;
    for decl in arrays.iter().filter(|a| used.contains(&a.name.as_str())) {
        let align = decl.base_alignment.max(1) as u64;
        let base = align_up(next, align);
        bases.push((decl.name.clone(), base));
        next = base + grid.allocated_bytes();
    }
    let base_of = |name: &str| {
        bases
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, b)| b)
            .unwrap()
    };

    let j_bounds = kernel.loop_j.bounds(grid.inner_extent);
    let k_bounds = kernel.loop_k.bounds(grid.outer_extent);
    let j_ok = (
        -(grid.halo_lo[0] as i64),
        (grid.inner_extent + grid.halo_hi[0]) as i64 - 1,
    );
    let k_ok = (
        -(grid.halo_lo[1] as i64),
        (grid.outer_extent + grid.halo_hi[1]) as i64 - 1,
    );

    let ordered = kernel
        .accesses
        .iter()
        .filter(|a| a.mode == Mode::Read)
        .chain(kernel.accesses.iter().filter(|a| a.mode == Mode::Write));
    let mut accesses = Vec::with_capacity(kernel.accesses.len());
    for a in ordered {
        let (dj, dk) = (a.dj as i64, a.dk as i64);
        if j_bounds.0 <= j_bounds.1 && k_bounds.0 <= k_bounds.1 {
            let corners = [(j_bounds.0, k_bounds.0), (j_bounds.1, k_bounds.1)];
            for (j, k) in corners {
                let (jj, kk) = (j + dj, k + dk);
                if jj < j_ok.0 || jj > j_ok.1 || kk < k_ok.0 || kk > k_ok.1 {
                    return Err(Error::OutOfBounds {
                        kernel: kernel.name.clone(),
                        array: a.array.clone(),
                        dj: a.dj,
                        dk: a.dk,
                        j,
                        k,
                    });
                }
            }
        }
        accesses.push(ResolvedAccess {
            base: base_of(&a.array),
            dj,
            dk,
            mode: a.mode,
        });
    }

    Ok(KernelTrace {
        accesses,
        j_bounds,
        k_bounds,
        row_stride: grid.row_stride() as i64,
        halo_j: grid.halo_lo[0] as i64,
        halo_k: grid.halo_lo[1] as i64,
        element_size: grid.element_size as u64,
        bases,
    })
}

pub const RECORD_BYTES: usize = 9;

/// Writes events as binary records; returns the number written.
pub fn write_trace<W: Write>(
    events: impl IntoIterator<Item = TraceEvent>,
    out: W,
) -> io::Result<u64> {
    let mut out = io::BufWriter::new(out);
    let mut n = 0;
    for e in events {
        let mut rec = [0u8; RECORD_BYTES];
        rec[..8].copy_from_slice(&e.address.to_le_bytes());
        rec[8] = match e.mode {
            Mode::Read => 0,
            Mode::Write => 1,
        };
        out.write_all(&rec)?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Streams binary records back as events.
pub fn read_trace<R: Read>(input: R) -> TraceReader<R> {
    TraceReader {
        input: io::BufReader::new(input),
        record: 0,
    }
}

pub struct TraceReader<R> {
    input: io::BufReader<R>,
    record: u64,
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut rec = [0u8; RECORD_BYTES];
        let mut filled = 0;
        while filled < RECORD_BYTES {
            match self.input.read(&mut rec[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Some(Err(e.into())),
            }
        }
        if filled == 0 {
            return None;
        }
        let record = self.record;
        self.record += 1;
        if filled < RECORD_BYTES {
            return Some(Err(Error::Trace(format!(
                "record {record} is truncated ({filled} of {RECORD_BYTES} bytes)"
            ))));
        }
        let address = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let mode = match rec[8] {
            0 => Mode::Read,
            1 => Mode::Write,
            other => {
                return Some(Err(Error::Trace(format!(
                    "record {record} has unknown mode byte {other}"
                ))))
            }
        };
        Some(Ok(TraceEvent { address, mode }))
    }
}
