//! Analytical stacked-DRAM timing, energy and refresh derating.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwspec::DramStackSpec;

pub const MIN_TEMP_C: f64 = -40.0;
pub const MAX_TEMP_C: f64 = 125.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemError {
    #[error("memory request must move at least one bit")]
    EmptyRequest,
    #[error("memory request must target at least one bank")]
    NoBanks,
    #[error("temperature {0} C outside [-40, 125]")]
    TempOutOfRange(f64),
    #[error("refresh stall at {temp_c} C: derate {derate} >= 1")]
    RefreshStall { temp_c: f64, derate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemRequest {
    data_bits: u64,
    access: Access,
    target_banks: u32,
}

impl MemRequest {
    pub fn new(data_bits: u64, access: Access, target_banks: u32) -> Result<Self, MemError> {
        if data_bits == 0 {
            return Err(MemError::EmptyRequest);
        }
        if target_banks == 0 {
            return Err(MemError::NoBanks);
        }
        Ok(MemRequest {
            data_bits,
            access,
            target_banks,
        })
    }

    pub fn data_bits(&self) -> u64 {
        self.data_bits
    }

    pub fn access(&self) -> Access {
        self.access
    }

    pub fn target_banks(&self) -> u32 {
        self.target_banks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemCost {
    pub commands: u64,
    /// Seconds.
    pub latency: f64,
    /// Joules.
    pub energy: f64,
    /// Bytes per second.
    pub effective_bw: f64,
}

/// Commands per bank channel, assuming an even spread over `target_banks`.
pub fn mem_commands(req: &MemRequest, d: &DramStackSpec) -> u64 {
    let banks = req.target_banks.min(d.total_banks()).max(1) as u64;
    let per_cmd = banks * d.n_io_bits as u64 * d.burst_len as u64;
    req.data_bits.div_ceil(per_cmd).max(1)
}

/// Number of halvings of the refresh interval at `temp_c`.
pub fn refresh_bin(d: &DramStackSpec, temp_c: f64) -> u32 {
    let over = ((temp_c - d.retention_base_temp_c) / 10.0).ceil();
    if over > 0.0 {
        over as u32
    } else {
        0
    }
}

/// Fraction of DRAM time lost to refresh at `temp_c`.
pub fn refresh_derate(d: &DramStackSpec, temp_c: f64) -> f64 {
    derate_for_bin(d, refresh_bin(d, temp_c))
}

pub fn derate_for_bin(d: &DramStackSpec, bin: u32) -> f64 {
    let t_rfi = d.t_rfi_base_ns * 2f64.powi(-(bin.min(1000) as i32));
    d.t_rfc_ns / t_rfi
}

fn check_temp(temp_c: f64) -> Result<(), MemError> {
    if !(MIN_TEMP_C..=MAX_TEMP_C).contains(&temp_c) {
        return Err(MemError::TempOutOfRange(temp_c));
    }
    Ok(())
}

pub fn mem_access_time(
    req: &MemRequest,
    d: &DramStackSpec,
    temp_c: f64,
) -> Result<MemCost, MemError> {
    check_temp(temp_c)?;
    let derate = refresh_derate(d, temp_c);
    if derate >= 1.0 {
        return Err(MemError::RefreshStall { temp_c, derate });
    }
    Ok(cost_at_derate(req, d, derate))
}

/// Cost with a precomputed derate (< 1); used on hot paths that cache the
/// refresh bin.
pub fn cost_at_derate(req: &MemRequest, d: &DramStackSpec, derate: f64) -> MemCost {
    let n_cmd = mem_commands(req, d);
    let fixed_ns = d.t_rcd_ns + d.t_cas_ns + d.t_rp_ns + d.tsv_delay_ns;
    let burst_ns = d.burst_len as f64 * n_cmd as f64 / d.io_clock_hz * 1e9;
    let latency = (fixed_ns + burst_ns) * 1e-9 / (1.0 - derate);
    let energy = req.data_bits as f64 * d.energy_per_bit_pj * 1e-12
        + n_cmd as f64 * derate * d.refresh_energy_per_cmd_pj * 1e-12;
    MemCost {
        commands: n_cmd,
        latency,
        energy,
        effective_bw: req.data_bits as f64 / 8.0 / latency,
    }
}

/// Latency in seconds of moving `bits` over `banks` channels at a given
/// derate; zero bits cost nothing.
pub fn transfer_latency(bits: f64, banks: u32, d: &DramStackSpec, derate: f64) -> f64 {
    if bits <= 0.0 {
        return 0.0;
    }
    let req = MemRequest {
        data_bits: bits.ceil() as u64,
        access: Access::Read,
        target_banks: banks.max(1),
    };
    cost_at_derate(&req, d, derate).latency
}

/// DRAM energy in joules for `bits` at a given derate.
pub fn transfer_energy(bits: f64, banks: u32, d: &DramStackSpec, derate: f64) -> f64 {
    if bits <= 0.0 {
        return 0.0;
    }
    let req = MemRequest {
        data_bits: bits.ceil() as u64,
        access: Access::Read,
        target_banks: banks.max(1),
    };
    cost_at_derate(&req, d, derate).energy
}
