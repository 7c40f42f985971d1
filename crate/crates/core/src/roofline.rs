//! Machine model and Roofline predictions with per-domain bandwidth
//! saturation under compact pinning.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::balance::{BalanceScenario, WaPolicy};
use crate::error::{Error, Result};
use crate::kernel::{GridSpec, KernelSpec};

/// A shared-memory node. Bandwidth saturates per ccNUMA domain; the L3 is
/// shared per socket, L1 and L2 are private.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineModel {
    pub name: String,
    /// flop/s per core.
    pub peak_flops_per_core: f64,
    /// Saturated memory bandwidth of one domain, bytes/s.
    pub mem_bw_per_domain: f64,
    pub cores_per_domain: usize,
    pub domains_per_node: usize,
    pub sockets_per_node: usize,
    /// Cores needed to reach `mem_bw_per_domain`.
    pub saturating_cores: f64,
    pub cache_l1: u64,
    pub cache_l2: u64,
    /// Per socket.
    pub cache_l3: u64,
    pub clock_hz: f64,
    /// Store-traffic ratio left by automatic write-allocate evasion.
    pub speci2m_factor: f64,
    /// Store-traffic ratio left by non-temporal stores.
    pub nt_factor: f64,
    /// Cores per domain from which automatic evasion is assumed to engage.
    pub speci2m_activation_cores: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl MachineModel {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&std::fs::read_to_string(path)?, path)
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("peak_flops_per_core", self.peak_flops_per_core),
            ("mem_bw_per_domain", self.mem_bw_per_domain),
            ("saturating_cores", self.saturating_cores),
            ("clock_hz", self.clock_hz),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidMachine(format!("{field} must be positive")));
            }
        }
        let counts = [
            ("cores_per_domain", self.cores_per_domain as u64),
            ("domains_per_node", self.domains_per_node as u64),
            ("sockets_per_node", self.sockets_per_node as u64),
            ("cache_l1", self.cache_l1),
            ("cache_l2", self.cache_l2),
            ("cache_l3", self.cache_l3),
            (
                "speci2m_activation_cores",
                self.speci2m_activation_cores as u64,
            ),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::InvalidMachine(format!("{field} must be positive")));
            }
        }
        if self.saturating_cores > self.cores_per_domain as f64 {
            return Err(Error::InvalidMachine(
                "saturating_cores exceeds cores_per_domain".into(),
            ));
        }
        if !self.domains_per_node.is_multiple_of(self.sockets_per_node) {
            return Err(Error::InvalidMachine(
                "domains must divide evenly among sockets".into(),
            ));
        }
        for (field, f) in [
            ("speci2m_factor", self.speci2m_factor),
            ("nt_factor", self.nt_factor),
        ] {
            if !(1.0..=2.0).contains(&f) {
                return Err(Error::InvalidMachine(format!("{field} must lie in [1, 2]")));
            }
        }
        Ok(())
    }

    pub fn cores_per_node(&self) -> usize {
        self.cores_per_domain * self.domains_per_node
    }

    pub fn cores_per_socket(&self) -> usize {
        self.cores_per_node() / self.sockets_per_node
    }

    /// Cache bytes available to each of `ranks` compactly pinned processes:
    /// the private L2 plus an equal share of the L3 of every socket in use.
    pub fn cache_share_per_process(&self, ranks: usize) -> u64 {
        let ranks = ranks.max(1);
        let sockets = ranks
            .div_ceil(self.cores_per_socket())
            .min(self.sockets_per_node) as u64;
        (ranks as u64 * self.cache_l2 + sockets * self.cache_l3) / ranks as u64
    }

    /// Half of the per-process cache share.
    pub fn effective_cache_per_process(&self, ranks: usize) -> u64 {
        crate::balance::effective_cache(self.cache_share_per_process(ranks))
    }

    /// Sustained bandwidth of `cores` compactly pinned cores: domains fill
    /// one after another, each ramping linearly up to saturation.
    pub fn effective_bandwidth(&self, cores: usize) -> f64 {
        let mut left = cores;
        let mut bw = 0.0;
        for _ in 0..self.domains_per_node {
            if left == 0 {
                break;
            }
            let here = left.min(self.cores_per_domain);
            bw += (here as f64 / self.saturating_cores).min(1.0) * self.mem_bw_per_domain;
            left -= here;
        }
        bw
    }

    /// Evasion policy for a run on `cores` cores: automatic evasion only
    /// once enough cores draw bandwidth in the first domain.
    pub fn automatic_policy(&self, cores: usize) -> WaPolicy {
        if cores >= self.speci2m_activation_cores {
            WaPolicy::Phenomenological {
                factor: self.speci2m_factor,
            }
        } else {
            WaPolicy::FullWa
        }
    }

    pub fn nt_policy(&self) -> WaPolicy {
        WaPolicy::NtPlusSpecI2M {
            nt: self.nt_factor,
            speci2m: self.speci2m_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bound {
    Memory,
    Core,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Memory => "memory",
            Bound::Core => "core",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    /// flop/s.
    pub performance: f64,
    pub bound: Bound,
    pub bandwidth: f64,
    pub peak: f64,
}

/// `P = min(P_max, I * b_S)` for `cores` cores.
pub fn roofline_predict(intensity: f64, machine: &MachineModel, cores: usize) -> Prediction {
    let cores = cores.max(1);
    let peak = cores as f64 * machine.peak_flops_per_core;
    let bandwidth = machine.effective_bandwidth(cores);
    let memory = if intensity.is_infinite() {
        f64::INFINITY
    } else {
        intensity * bandwidth
    };
    if memory < peak {
        Prediction {
            performance: memory,
            bound: Bound::Memory,
            bandwidth,
            peak,
        }
    } else {
        Prediction {
            performance: peak,
            bound: Bound::Core,
            bandwidth,
            peak,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeEstimate {
    pub seconds: f64,
    pub bound: Bound,
    pub iterations: u64,
}

/// Time for one sweep of `kernel` over `grid`: the slower of data transfer
/// and arithmetic.
pub fn kernel_runtime(
    kernel: &KernelSpec,
    grid: &GridSpec,
    machine: &MachineModel,
    cores: usize,
    scenario: &BalanceScenario,
) -> RuntimeEstimate {
    let cores = cores.max(1);
    let iterations = kernel.iterations(grid);
    let n = iterations as f64;
    let memory = n * scenario.bytes_per_it / machine.effective_bandwidth(cores);
    let core = n * kernel.flops_per_it as f64 / (cores as f64 * machine.peak_flops_per_core);
    if memory >= core {
        RuntimeEstimate {
            seconds: memory,
            bound: Bound::Memory,
            iterations,
        }
    } else {
        RuntimeEstimate {
            seconds: core,
            bound: Bound::Core,
            iterations,
        }
    }
}
