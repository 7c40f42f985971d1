use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stencil_traffic::cachesim::{CacheLevelConfig, DEFAULT_CLAIM_WINDOW};
use stencil_traffic::report::{self, CacheMode, Scenario};
use stencil_traffic::{KernelSuite, MachineModel};

#[derive(Parser)]
#[command(version, about = "Memory-traffic models for stencil loop nests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream counts, code-balance bounds and scaling class per kernel.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        csv: bool,
    },
    /// Replay every kernel through the cache simulator.
    Simulate(SimulateArgs),
    /// Predicted bytes per iteration across rank counts (CSV).
    PrimeSweep {
        #[command(flatten)]
        inputs: Inputs,
        /// Rank counts, `a..b` inclusive.
        #[arg(long, default_value = "1..72", value_parser = parse_range)]
        ranks: std::ops::RangeInclusive<usize>,
        #[arg(long, default_value = "auto", value_parser = parse_scenario)]
        scenario: Scenario,
    },
    /// Measured balances from a CSV against the model.
    Compare {
        #[command(flatten)]
        inputs: Inputs,
        /// CSV with columns kernel,ranks,read_gbytes,write_gbytes,call_count,timesteps,grid_points.
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, default_value = "auto", value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long)]
        csv: bool,
        /// Exit with 1 if the mean absolute error exceeds --tolerance.
        #[arg(long)]
        check: bool,
        /// Percent.
        #[arg(long, default_value_t = 10.0)]
        tolerance: f64,
    },
    /// Memory traffic over stored volume for interleaved store streams.
    StoreRatio {
        #[arg(long, default_value = "1..3", value_parser = parse_range)]
        streams: std::ops::RangeInclusive<usize>,
        /// Shorthand for `--policy nt`.
        #[arg(long)]
        nt: bool,
        #[arg(long, default_value = "always-allocate")]
        policy: String,
        #[arg(long, default_value_t = DEFAULT_CLAIM_WINDOW)]
        window: usize,
        /// Bytes stored in total.
        #[arg(long, default_value_t = 64 << 20)]
        volume: u64,
        #[arg(long)]
        csv: bool,
    },
    /// Read/write ratio of a row-wise copy with skipped halo elements.
    HaloCopy {
        #[arg(long, value_delimiter = ',', default_value = "216,530,1920")]
        inner: Vec<usize>,
        #[arg(long, default_value = "0..17", value_parser = parse_range)]
        halo: std::ops::RangeInclusive<usize>,
        #[arg(long, default_value = "auto-claim")]
        policy: String,
        #[arg(long, default_value_t = DEFAULT_CLAIM_WINDOW)]
        window: usize,
        /// Bytes copied per case.
        #[arg(long, default_value_t = 16 << 20)]
        bytes: u64,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args)]
struct Inputs {
    #[arg(long, default_value = "data/cloverleaf_tiny.json")]
    suite: PathBuf,
    #[arg(long, default_value = "data/icx_8360y.json")]
    machine: PathBuf,
}

impl Inputs {
    fn load(&self) -> Result<(KernelSuite, MachineModel)> {
        Ok((load_suite(&self.suite)?, load_machine(&self.machine)?))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Interior edge length of the simulated grid.
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    #[arg(long, default_value = "always-allocate")]
    policy: String,
    #[arg(long, default_value_t = DEFAULT_CLAIM_WINDOW)]
    window: usize,
    #[arg(long, default_value = "effective", value_parser = parse_cache_mode)]
    cache_mode: CacheMode,
    /// Only this kernel.
    #[arg(long)]
    kernel: Option<String>,
    /// Write one binary trace per kernel into this directory and exit.
    #[arg(long)]
    dump_traces: Option<PathBuf>,
    /// Simulate a previously dumped trace file instead of the suite.
    #[arg(long, conflicts_with = "dump_traces")]
    replay: Option<PathBuf>,
    #[arg(long)]
    csv: bool,
    /// Exit with 1 if any kernel deviates by more than --tolerance.
    #[arg(long)]
    check: bool,
    /// Percent.
    #[arg(long, default_value_t = 2.0)]
    tolerance: f64,
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>, String> {
    report::parse_range(s).map_err(|e| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: stencil_traffic::Error| e.to_string())
}

fn parse_cache_mode(s: &str) -> Result<CacheMode, String> {
    s.parse().map_err(|e: stencil_traffic::Error| e.to_string())
}

fn load_suite(path: &PathBuf) -> Result<KernelSuite> {
    KernelSuite::load(path).with_context(|| format!("loading kernel suite {}", path.display()))
}

fn load_machine(path: &PathBuf) -> Result<MachineModel> {
    MachineModel::load(path).with_context(|| format!("loading machine {}", path.display()))
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    CheckFailed(String),
}

fn simulate(args: SimulateArgs) -> Result<Status> {
    let (mut suite, machine) = args.inputs.load()?;
    if args.grid == 0 {
        bail!("--grid must be at least 1");
    }
    if let Some(name) = &args.kernel {
        let k = suite.kernel(name)?.clone();
        suite.kernels = vec![k];
    }
    let policy = report::parse_write_policy(&args.policy, args.window)?;
    let levels: Vec<CacheLevelConfig> = args.cache_mode.levels(&machine);

    if let Some(dir) = &args.dump_traces {
        for (name, n) in report::dump_traces(&suite, args.grid, dir)? {
            println!("{name}: {n} events");
        }
        return Ok(Status::Ok);
    }
    if let Some(path) = &args.replay {
        let t = report::replay_trace(path, &levels, policy, 8)?;
        println!(
            "read_bytes={} write_bytes={} wa_avoided_bytes={}",
            t.read_bytes, t.write_bytes, t.wa_avoided_bytes
        );
        return Ok(Status::Ok);
    }

    let rows = report::simulate_suite(&suite, args.grid, &levels, policy)?;
    print!("{}", report::simulate_table(&rows).render(args.csv));
    for r in &rows {
        if let Err(e) = &r.outcome {
            eprintln!("warning: {}: {e}", r.kernel);
        }
    }
    if args.check {
        let bad: Vec<&str> = rows
            .iter()
            .filter(|r| r.delta_pct().is_none_or(|d| d.abs() > args.tolerance))
            .map(|r| r.kernel.as_str())
            .collect();
        if !bad.is_empty() {
            return Ok(Status::CheckFailed(format!(
                "outside {}%: {}",
                args.tolerance,
                bad.join(", ")
            )));
        }
    }
    Ok(Status::Ok)
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Analyze { inputs, csv } => {
            let suite = load_suite(&inputs.suite)?;
            let machine = load_machine(&inputs.machine)?;
            let rows = report::analyze(&suite, Some(&machine))?;
            print!("{}", report::analyze_table(&rows).render(csv));
        }
        Command::Simulate(args) => return simulate(args),
        Command::PrimeSweep {
            inputs,
            ranks,
            scenario,
        } => {
            let (suite, machine) = inputs.load()?;
            let rows = report::prime_sweep(&suite, &machine, ranks, scenario)?;
            print!("{}", report::sweep_table(&rows).to_csv());
        }
        Command::Compare {
            inputs,
            measurements,
            scenario,
            csv,
            check,
            tolerance,
        } => {
            let (suite, machine) = inputs.load()?;
            let records = report::load_measurements(&measurements)
                .with_context(|| format!("reading {}", measurements.display()))?;
            let rep = report::compare(&suite, &machine, &records, scenario)?;
            print!("{}", report::compare_table(&rep).render(csv));
            if !csv {
                println!(
                    "mean abs error {:.2}%, max {:.2}% ({scenario})",
                    rep.mean_abs_error_pct, rep.max_abs_error_pct
                );
            }
            if check && rep.mean_abs_error_pct > tolerance {
                return Ok(Status::CheckFailed(format!(
                    "mean abs error {:.2}% exceeds {tolerance}%",
                    rep.mean_abs_error_pct
                )));
            }
        }
        Command::StoreRatio {
            streams,
            nt,
            policy,
            window,
            volume,
            csv,
        } => {
            let policy = if nt { "nt" } else { policy.as_str() };
            let policy = report::parse_write_policy(policy, window)?;
            let rows = report::store_ratios(streams, policy, volume)?;
            print!("{}", report::store_ratio_table(&rows).render(csv));
        }
        Command::HaloCopy {
            inner,
            halo,
            policy,
            window,
            bytes,
            csv,
        } => {
            let policy = report::parse_write_policy(&policy, window)?;
            let rows = report::halo_copy(&inner, halo, bytes, policy)?;
            print!("{}", report::halo_copy_table(&rows).render(csv));
        }
    }
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
