//! Report assembly behind the command-line front end: measurement ingestion,
//! the per-command computations and their text or CSV rendering.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{
    classify, layer_condition, scenario_table, LcState, ScalingClass, ScenarioTable, StreamCounts,
    WaPolicy,
};
use crate::cachesim::{
    gen_trace, halo_copy_experiment, simulate, store_ratio, write_trace, CacheLevelConfig,
    MemTraffic, WritePolicySim,
};
use crate::decomp::{is_prime, predict_rank, LcMode, PolicyChoice, SweepConfig};
use crate::error::{Error, Result};
use crate::kernel::{derive_stream_counts, KernelSpec, KernelSuite};
use crate::roofline::MachineModel;

pub const MEASUREMENT_COLUMNS: [&str; 7] = [
    "kernel",
    "ranks",
    "read_gbytes",
    "write_gbytes",
    "call_count",
    "timesteps",
    "grid_points",
];

/// Memory volumes of one loop as reported by a profiling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub kernel: String,
    pub ranks: usize,
    pub read_gbytes: f64,
    pub write_gbytes: f64,
    pub call_count: u64,
    pub timesteps: u64,
    pub grid_points: u64,
}

impl MeasurementRecord {
    pub fn iterations(&self) -> f64 {
        self.call_count as f64 * self.timesteps as f64 * self.grid_points as f64
    }

    pub fn bytes_per_iteration(&self) -> f64 {
        (self.read_gbytes + self.write_gbytes) * 1e9 / self.iterations()
    }

    fn check(&self, record: usize) -> Result<()> {
        let bad = |message: String| Err(Error::Measurement { record, message });
        if self.ranks == 0 || self.call_count == 0 || self.timesteps == 0 || self.grid_points == 0 {
            return bad("ranks, call_count, timesteps and grid_points must be positive".into());
        }
        if !(self.read_gbytes >= 0.0 && self.write_gbytes >= 0.0) {
            return bad("data volumes must be non-negative numbers".into());
        }
        if !self.bytes_per_iteration().is_finite() {
            return bad("balance is not finite".into());
        }
        Ok(())
    }
}

/// Parses a measurement CSV. The header must name every column of
/// [`MEASUREMENT_COLUMNS`]; extra columns are ignored.
pub fn read_measurements<R: Read>(input: R) -> Result<Vec<MeasurementRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    if let Some(missing) = MEASUREMENT_COLUMNS
        .iter()
        .find(|c| !headers.iter().any(|h| h == **c))
    {
        return Err(Error::MissingColumn(missing.to_string()));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<MeasurementRecord>().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| Error::Measurement {
            record,
            message: e.to_string(),
        })?;
        row.check(record)?;
        out.push(row);
    }
    Ok(out)
}

pub fn load_measurements(path: impl AsRef<Path>) -> Result<Vec<MeasurementRecord>> {
    read_measurements(File::open(path)?)
}

/// Which model balance a command reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    Min,
    LcfWa,
    Lcb,
    Max,
    /// Every evadable stream at the machine's automatic evasion ratio.
    Speci2m,
    /// One non-temporal stream, the others at the automatic evasion ratio.
    NtSpeci2m,
    /// Write-allocates below the machine's activation core count, automatic
    /// evasion above it.
    Auto,
}

impl Scenario {
    pub const NAMES: [&'static str; 7] = [
        "min",
        "lcf-wa",
        "lcb",
        "max",
        "speci2m",
        "nt-speci2m",
        "auto",
    ];

    pub fn lc_mode(self) -> LcMode {
        match self {
            Scenario::Min | Scenario::LcfWa => LcMode::Fixed(LcState::Fulfilled),
            Scenario::Lcb | Scenario::Max => LcMode::Fixed(LcState::Broken),
            _ => LcMode::Evaluate,
        }
    }

    pub fn policy(self, machine: &MachineModel) -> PolicyChoice {
        match self {
            Scenario::Min | Scenario::Lcb => PolicyChoice::Fixed(WaPolicy::NoWa),
            Scenario::LcfWa | Scenario::Max => PolicyChoice::Fixed(WaPolicy::FullWa),
            Scenario::Speci2m => PolicyChoice::Fixed(WaPolicy::Phenomenological {
                factor: machine.speci2m_factor,
            }),
            Scenario::NtSpeci2m => PolicyChoice::Fixed(machine.nt_policy()),
            Scenario::Auto => PolicyChoice::Automatic,
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "min" => Scenario::Min,
            "lcf-wa" => Scenario::LcfWa,
            "lcb" => Scenario::Lcb,
            "max" => Scenario::Max,
            "speci2m" => Scenario::Speci2m,
            "nt-speci2m" => Scenario::NtSpeci2m,
            "auto" => Scenario::Auto,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scenario `{s}` (expected one of {})",
                    Scenario::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            Scenario::Min => 0,
            Scenario::LcfWa => 1,
            Scenario::Lcb => 2,
            Scenario::Max => 3,
            Scenario::Speci2m => 4,
            Scenario::NtSpeci2m => 5,
            Scenario::Auto => 6,
        };
        f.write_str(Scenario::NAMES[i])
    }
}

/// `always-allocate`, `nt`, `auto-claim` or `auto-claim-inactive`.
pub fn parse_write_policy(name: &str, window: usize) -> Result<WritePolicySim> {
    Ok(match name {
        "always-allocate" => WritePolicySim::AlwaysAllocate,
        "nt" => WritePolicySim::NtBypass,
        "auto-claim" => WritePolicySim::AutoClaim {
            buffer_lines: window,
            active: true,
        },
        "auto-claim-inactive" => WritePolicySim::AutoClaim {
            buffer_lines: window,
            active: false,
        },
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown write policy `{name}` (expected always-allocate, nt, auto-claim or auto-claim-inactive)"
            )))
        }
    })
}

/// Parses `n`, `a..b` or `a..=b`; both range forms include `b`.
pub fn parse_range(s: &str) -> Result<RangeInclusive<usize>> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad range `{s}`")))
    };
    let range = match s.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.strip_prefix('=').unwrap_or(b))?,
        None => {
            let n = num(s)?;
            n..=n
        }
    };
    if range.is_empty() {
        return Err(Error::InvalidArgument(format!("empty range `{s}`")));
    }
    Ok(range)
}

/// Plain aligned text or CSV.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&self.headers);
        for row in &self.rows {
            line(row);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn render(&self, csv: bool) -> String {
        if csv {
            self.to_csv()
        } else {
            self.to_text()
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn checked_suite(suite: &KernelSuite) -> Result<()> {
    let diagnostics = suite.validate();
    match diagnostics.first() {
        None => Ok(()),
        Some(first) => Err(Error::InvalidKernel {
            kernel: first.kernel.clone(),
            diagnostics,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeRow {
    pub kernel: String,
    pub counts: StreamCounts,
    pub flops_per_it: u32,
    pub scenarios: ScenarioTable,
    pub class: ScalingClass,
    /// Layer condition of a single process on the full grid.
    pub lc_single: Option<LcState>,
}

pub fn analyze(suite: &KernelSuite, machine: Option<&MachineModel>) -> Result<Vec<AnalyzeRow>> {
    checked_suite(suite)?;
    suite
        .kernels
        .iter()
        .map(|k| {
            let grid = suite.grid_for(k)?;
            let counts = derive_stream_counts(k)?;
            let lc_single = match machine {
                Some(m) => Some(
                    layer_condition(
                        k,
                        grid.inner_extent,
                        grid.element_size,
                        m.effective_cache_per_process(1),
                    )?
                    .status,
                ),
                None => None,
            };
            Ok(AnalyzeRow {
                kernel: k.name.clone(),
                counts,
                flops_per_it: k.flops_per_it,
                scenarios: scenario_table(k, grid.element_size)?,
                class: classify(&counts),
                lc_single,
            })
        })
        .collect()
}

pub fn analyze_table(rows: &[AnalyzeRow]) -> Table {
    let mut t = Table::new(&[
        "kernel", "arrays", "rd_lcf", "rd_lcb", "wr", "rdwr", "flops", "min", "lcf_wa", "lcb",
        "max", "class", "lc_1",
    ]);
    for r in rows {
        let c = &r.counts;
        let mut row = vec![
            r.kernel.clone(),
            c.n_arrays.to_string(),
            c.rd_lcf.to_string(),
            c.rd_lcb.to_string(),
            c.wr.to_string(),
            c.rdwr.to_string(),
            r.flops_per_it.to_string(),
        ];
        row.extend(r.scenarios.bytes().iter().map(|b| format!("{b}")));
        row.push(r.class.to_string());
        row.push(r.lc_single.map_or("-".into(), |s| s.to_string()));
        t.push(row);
    }
    t
}

/// Where the simulated cache comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CacheMode {
    /// One fully associative level the size of a single process's
    /// effective cache.
    Effective,
    /// The machine's L1, L2 and L3, fully associative.
    Levels,
}

impl FromStr for CacheMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "effective" => Ok(CacheMode::Effective),
            "levels" => Ok(CacheMode::Levels),
            _ => Err(Error::InvalidArgument(format!(
                "unknown cache mode `{s}` (expected effective or levels)"
            ))),
        }
    }
}

impl CacheMode {
    pub fn levels(self, machine: &MachineModel) -> Vec<CacheLevelConfig> {
        let round = |b: u64| (b as usize / 64).max(1) * 64;
        match self {
            CacheMode::Effective => vec![CacheLevelConfig::fully_associative(round(
                machine.effective_cache_per_process(1),
            ))],
            CacheMode::Levels => [machine.cache_l1, machine.cache_l2, machine.cache_l3]
                .into_iter()
                .map(|b| CacheLevelConfig::fully_associative(round(b)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateRow {
    pub kernel: String,
    pub lc: LcState,
    pub analytic: f64,
    pub outcome: std::result::Result<MemTraffic, String>,
}

impl SimulateRow {
    pub fn simulated(&self) -> Option<f64> {
        self.outcome
            .as_ref()
            .ok()
            .map(MemTraffic::bytes_per_iteration)
    }

    /// Signed deviation of the simulation from the analytic value, percent.
    pub fn delta_pct(&self) -> Option<f64> {
        self.simulated()
            .map(|s| (s - self.analytic) / self.analytic * 100.0)
    }
}

/// Write-allocate policy the analytic model assumes for a simulated policy.
pub fn analytic_policy(policy: WritePolicySim) -> WaPolicy {
    match policy {
        WritePolicySim::AlwaysAllocate | WritePolicySim::AutoClaim { active: false, .. } => {
            WaPolicy::FullWa
        }
        WritePolicySim::NtBypass | WritePolicySim::AutoClaim { active: true, .. } => WaPolicy::NoWa,
    }
}

/// Simulates one sweep of every kernel on an `n` x `n` interior and sets
/// it against the analytic balance for the simulated cache. Kernels run
/// concurrently; rows keep suite order.
pub fn simulate_suite(
    suite: &KernelSuite,
    n: usize,
    levels: &[CacheLevelConfig],
    policy: WritePolicySim,
) -> Result<Vec<SimulateRow>> {
    if n == 0 {
        return Err(Error::InvalidGrid(
            "simulation grid must be at least 1x1".into(),
        ));
    }
    checked_suite(suite)?;
    let llc = levels
        .last()
        .ok_or_else(|| Error::InvalidCache("at least one cache level is required".into()))?
        .capacity as u64;
    let wa = analytic_policy(policy);
    suite
        .kernels
        .par_iter()
        .map(|k| {
            let grid = suite.grid_for(k)?.resized(n, n);
            let counts = derive_stream_counts(k)?;
            let lc = layer_condition(k, n, grid.element_size, llc)?.status;
            let analytic = crate::balance::code_balance(&counts, lc, &wa, grid.element_size)?;
            let outcome = crate::cachesim::measure_traffic(k, &grid, &suite.arrays, levels, policy)
                .map_err(|e| e.to_string());
            Ok(SimulateRow {
                kernel: k.name.clone(),
                lc,
                analytic,
                outcome,
            })
        })
        .collect()
}

pub fn simulate_table(rows: &[SimulateRow]) -> Table {
    let mut t = Table::new(&[
        "kernel",
        "lc",
        "analytic",
        "simulated",
        "delta_pct",
        "read_b_it",
        "write_b_it",
        "avoided_b_it",
    ]);
    for r in rows {
        let mut row = vec![r.kernel.clone(), r.lc.to_string(), num(r.analytic)];
        match &r.outcome {
            Ok(m) => {
                let per = |b: u64| num(b as f64 / m.iterations as f64);
                row.extend([
                    num(m.bytes_per_iteration()),
                    num(r.delta_pct().unwrap()),
                    per(m.read_bytes),
                    per(m.write_bytes),
                    per(m.wa_avoided_bytes),
                ]);
            }
            Err(e) => {
                row.push(format!("error: {e}"));
                row.extend(std::iter::repeat_n(String::from("-"), 4));
            }
        }
        t.push(row);
    }
    t
}

/// Writes one `<kernel>.trace` file per kernel into `dir`.
pub fn dump_traces(suite: &KernelSuite, n: usize, dir: &Path) -> Result<Vec<(String, u64)>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for k in &suite.kernels {
        let grid = suite.grid_for(k)?.resized(n, n);
        let trace = gen_trace(k, &grid, &suite.arrays)?;
        let file = BufWriter::new(File::create(dir.join(format!("{}.trace", k.name)))?);
        out.push((k.name.clone(), write_trace(&trace, file)?));
    }
    Ok(out)
}

/// Replays a dumped trace.
pub fn replay_trace(
    path: &Path,
    levels: &[CacheLevelConfig],
    policy: WritePolicySim,
    access_size: usize,
) -> Result<MemTraffic> {
    let events = crate::cachesim::read_trace(std::io::BufReader::new(File::open(path)?))
        .collect::<Result<Vec<_>>>()?;
    simulate(events, levels, policy, access_size)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kernel: String,
    pub p: usize,
    pub bytes_per_it: f64,
    pub prime: bool,
    pub px: usize,
    pub py: usize,
    pub inner_width: usize,
}

pub fn prime_sweep(
    suite: &KernelSuite,
    machine: &MachineModel,
    ranks: RangeInclusive<usize>,
    scenario: Scenario,
) -> Result<Vec<SweepRow>> {
    checked_suite(suite)?;
    if *ranks.start() == 0 {
        return Err(Error::InvalidArgument("rank counts start at 1".into()));
    }
    let mut out = Vec::new();
    for k in &suite.kernels {
        let cfg = SweepConfig::from_grid(suite.grid_for(k)?);
        let counts = derive_stream_counts(k)?;
        for p in ranks.clone() {
            let r = predict_rank(
                k,
                &counts,
                &cfg,
                machine,
                p,
                scenario.lc_mode(),
                scenario.policy(machine),
            )?;
            out.push(SweepRow {
                kernel: k.name.clone(),
                p,
                bytes_per_it: r.bytes_per_it,
                prime: is_prime(p),
                px: r.px,
                py: r.py,
                inner_width: r.inner_width,
            });
        }
    }
    Ok(out)
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&[
        "kernel",
        "p",
        "bytes_per_it",
        "prime",
        "px",
        "py",
        "inner_width",
    ]);
    for r in rows {
        t.push(vec![
            r.kernel.clone(),
            r.p.to_string(),
            format!("{:.4}", r.bytes_per_it),
            r.prime.to_string(),
            r.px.to_string(),
            r.py.to_string(),
            r.inner_width.to_string(),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub kernel: String,
    pub ranks: usize,
    pub measured: f64,
    pub model: f64,
    /// `(model - measured) / measured`, percent.
    pub error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub mean_abs_error_pct: f64,
    pub max_abs_error_pct: f64,
}

/// Sets measured balances against the model at each record's rank count.
pub fn compare(
    suite: &KernelSuite,
    machine: &MachineModel,
    records: &[MeasurementRecord],
    scenario: Scenario,
) -> Result<CompareReport> {
    checked_suite(suite)?;
    let rows = records
        .iter()
        .map(|rec| {
            let k: &KernelSpec = suite.kernel(&rec.kernel)?;
            let cfg = SweepConfig::from_grid(suite.grid_for(k)?);
            let counts = derive_stream_counts(k)?;
            let model = predict_rank(
                k,
                &counts,
                &cfg,
                machine,
                rec.ranks,
                scenario.lc_mode(),
                scenario.policy(machine),
            )?
            .bytes_per_it;
            let measured = rec.bytes_per_iteration();
            Ok(CompareRow {
                kernel: rec.kernel.clone(),
                ranks: rec.ranks,
                measured,
                model,
                error_pct: (model - measured) / measured * 100.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let abs: Vec<f64> = rows.iter().map(|r| r.error_pct.abs()).collect();
    let mean_abs_error_pct = if abs.is_empty() {
        0.0
    } else {
        abs.iter().sum::<f64>() / abs.len() as f64
    };
    Ok(CompareReport {
        mean_abs_error_pct,
        max_abs_error_pct: abs.iter().copied().fold(0.0, f64::max),
        rows,
    })
}

pub fn compare_table(report: &CompareReport) -> Table {
    let mut t = Table::new(&["kernel", "ranks", "measured", "model", "error_pct"]);
    for r in &report.rows {
        t.push(vec![
            r.kernel.clone(),
            r.ranks.to_string(),
            num(r.measured),
            num(r.model),
            format!("{:+.2}", r.error_pct),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreRatioRow {
    pub streams: usize,
    pub ratio: f64,
}

pub fn store_ratios(
    streams: RangeInclusive<usize>,
    policy: WritePolicySim,
    volume: u64,
) -> Result<Vec<StoreRatioRow>> {
    streams
        .map(|n| {
            Ok(StoreRatioRow {
                streams: n,
                ratio: store_ratio(n, policy, volume)?,
            })
        })
        .collect()
}

pub fn store_ratio_table(rows: &[StoreRatioRow]) -> Table {
    let mut t = Table::new(&["streams", "ratio"]);
    for r in rows {
        t.push(vec![r.streams.to_string(), format!("{:.4}", r.ratio)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HaloCopyRow {
    pub inner: usize,
    pub halo: usize,
    pub ratio: f64,
}

pub fn halo_copy(
    inners: &[usize],
    halos: RangeInclusive<usize>,
    total_bytes: u64,
    policy: WritePolicySim,
) -> Result<Vec<HaloCopyRow>> {
    let cases: Vec<(usize, usize)> = inners
        .iter()
        .flat_map(|&i| halos.clone().map(move |h| (i, h)))
        .collect();
    cases
        .into_par_iter()
        .map(|(inner, halo)| {
            Ok(HaloCopyRow {
                inner,
                halo,
                ratio: halo_copy_experiment(inner, halo, total_bytes, policy)?,
            })
        })
        .collect()
}

pub fn halo_copy_table(rows: &[HaloCopyRow]) -> Table {
    let mut t = Table::new(&["inner", "halo", "read_write_ratio"]);
    for r in rows {
        t.push(vec![
            r.inner.to_string(),
            r.halo.to_string(),
            format!("{:.4}", r.ratio),
        ]);
    }
    t
}
