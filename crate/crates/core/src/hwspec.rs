//! Hardware description types: DRAM stacks, PEs, chiplets, the package
//! mesh and the served model, plus the derived peak metrics every other
//! module consumes.
//!
//! All configuration files are JSON with units spelled out in field names
//! (`t_rcd_ns`, `io_clock_hz`, ...). Top-level files carry `"schema": 1` and
//! unknown fields are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::thermal::CoolingSpec;

pub const SCHEMA_VERSION: u32 = 1;

const GIB: u64 = 1 << 30;
const MIB: f64 = (1u64 << 20) as f64;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpecError {
    #[error(
        "area exceeded on chiplet `{chiplet}`: {area_mm2:.1} mm2 > budget {budget_mm2:.1} mm2"
    )]
    AreaExceeded {
        chiplet: String,
        area_mm2: f64,
        budget_mm2: f64,
    },
    #[error("power exceeded on `{chiplet}`: {power_w:.1} W > limit {limit_w:.1} W")]
    PowerExceeded {
        chiplet: String,
        power_w: f64,
        limit_w: f64,
    },
    #[error("inconsistent capacity on `{chiplet}`: {reason}")]
    InconsistentCapacity { chiplet: String, reason: String },
    #[error("invalid field on `{chiplet}`: {reason}")]
    InvalidField { chiplet: String, reason: String },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config `{path}`: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("config `{path}` has schema {found}, expected {expected}")]
    Schema {
        path: String,
        found: u32,
        expected: u32,
    },
}

/// A validation failure carrying every violated invariant, not just the first.
#[derive(Debug, Error, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<SpecError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "{} violation(s): {}", self.0.len(), parts.join("; "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramStackSpec {
    pub n_layer: u32,
    /// Banks per layer.
    pub n_bank: u32,
    /// Data bits per bank channel.
    pub n_io_bits: u32,
    pub burst_len: u32,
    pub page_size_bytes: u64,
    pub capacity_bytes: u64,
    pub bank_capacity_bytes: u64,
    pub t_rcd_ns: f64,
    pub t_cas_ns: f64,
    pub t_rp_ns: f64,
    pub t_rfc_ns: f64,
    /// Refresh interval at or below `retention_base_temp_c`.
    pub t_rfi_base_ns: f64,
    pub io_clock_hz: f64,
    pub energy_per_bit_pj: f64,
    pub retention_base_temp_c: f64,
    pub tsv_delay_ns: f64,
    #[serde(default)]
    pub refresh_energy_per_cmd_pj: f64,
}

impl DramStackSpec {
    pub fn total_banks(&self) -> u32 {
        self.n_layer * self.n_bank
    }

    /// Peak stack bandwidth in bytes/s.
    pub fn peak_bw(&self) -> f64 {
        self.total_banks() as f64 * self.n_io_bits as f64 * self.io_clock_hz / 8.0
    }

    /// Bandwidth of `banks` bank channels in bytes/s.
    pub fn banks_bw(&self, banks: u32) -> f64 {
        banks as f64 * self.n_io_bits as f64 * self.io_clock_hz / 8.0
    }

    fn check(&self, name: &str, out: &mut Vec<SpecError>) {
        let bad = |reason: &str| SpecError::InvalidField {
            chiplet: name.to_string(),
            reason: reason.to_string(),
        };
        if self.n_layer == 0 || self.n_bank == 0 || self.n_io_bits == 0 || self.burst_len == 0 {
            out.push(bad("DRAM counts must be >= 1"));
        }
        if self.capacity_bytes == 0 || self.bank_capacity_bytes == 0 {
            out.push(SpecError::InconsistentCapacity {
                chiplet: name.to_string(),
                reason: "zero DRAM capacity".into(),
            });
        } else if self.total_banks() as u64 * self.bank_capacity_bytes != self.capacity_bytes {
            out.push(SpecError::InconsistentCapacity {
                chiplet: name.to_string(),
                reason: format!(
                    "capacity {} B != {} layers x {} banks x {} B",
                    self.capacity_bytes, self.n_layer, self.n_bank, self.bank_capacity_bytes
                ),
            });
        }
        if !(self.t_rfc_ns < self.t_rfi_base_ns) {
            out.push(bad("t_rfc_ns must be below t_rfi_base_ns"));
        }
        if !(self.energy_per_bit_pj > 0.0) {
            out.push(bad("energy_per_bit_pj must be positive"));
        }
        if !(self.io_clock_hz > 0.0) {
            out.push(bad("io_clock_hz must be positive"));
        }
        for (v, f) in [
            (self.t_rcd_ns, "t_rcd_ns"),
            (self.t_cas_ns, "t_cas_ns"),
            (self.t_rp_ns, "t_rp_ns"),
            (self.tsv_delay_ns, "tsv_delay_ns"),
            (self.refresh_energy_per_cmd_pj, "refresh_energy_per_cmd_pj"),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                out.push(bad(&format!("{f} must be finite and >= 0")));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeSpec {
    pub n_core: u32,
    pub sa_rows: u32,
    pub sa_cols: u32,
    pub base_sa_rows: u32,
    /// SRAM buffer per core.
    pub sram_capacity_bytes: u64,
    pub sram_banks: u32,
    /// Vector register count; doubles as the VPU lane count.
    pub vector_regs: u32,
    pub noc_flit_bits: u32,
    /// DRAM bank channels (memory controllers) owned by this PE.
    pub n_mc: u32,
    #[serde(default = "default_pj_per_flop")]
    pub pj_per_flop: f64,
    #[serde(default = "default_sram_pj_per_bit")]
    pub sram_pj_per_bit: f64,
}

fn default_pj_per_flop() -> f64 {
    0.5
}

fn default_sram_pj_per_bit() -> f64 {
    0.05
}

impl PeSpec {
    pub fn n_base_sas(&self) -> u32 {
        self.sa_rows / self.base_sa_rows.max(1)
    }

    fn check(&self, name: &str, out: &mut Vec<SpecError>) {
        let bad = |reason: &str| SpecError::InvalidField {
            chiplet: name.to_string(),
            reason: reason.to_string(),
        };
        if self.n_core == 0 || self.sa_rows == 0 || self.sa_cols == 0 || self.base_sa_rows == 0 {
            out.push(bad("PE counts must be >= 1"));
        } else if !self.sa_rows.is_multiple_of(self.base_sa_rows) {
            out.push(bad("base_sa_rows must divide sa_rows"));
        }
        if self.sram_capacity_bytes == 0 {
            out.push(bad("sram_capacity_bytes must be > 0"));
        }
        if self.n_mc == 0 {
            out.push(bad("n_mc must be >= 1"));
        }
        if self.vector_regs == 0 {
            out.push(bad("vector_regs must be >= 1"));
        }
        if !(self.pj_per_flop >= 0.0) || !(self.sram_pj_per_bit >= 0.0) {
            out.push(bad("energy constants must be >= 0"));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Prefill,
    Decode,
}

/// Per-component area and power constants standing in for a physical
/// estimator. Defaults are calibrated so the reference prefill chiplet lands
/// at ~546 mm2 and ~438 W peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TechParams {
    pub mm2_per_mac: f64,
    pub mm2_per_mib_sram: f64,
    pub mm2_per_core: f64,
    pub mm2_per_pe: f64,
    pub mm2_per_mc: f64,
    /// Nameplate static/uncore power per PE.
    pub pe_static_w: f64,
    /// Logic leakage per PE at the 65 C reference point.
    pub pe_leak_w: f64,
    pub dram_layer_static_w: f64,
    /// Refresh power per chiplet at or below the retention base temperature.
    pub refresh_power_w: f64,
    pub sram_w_per_mib: f64,
}

impl Default for TechParams {
    fn default() -> Self {
        TechParams {
            mm2_per_mac: 0.0012,
            mm2_per_mib_sram: 2.0,
            mm2_per_core: 0.2,
            mm2_per_pe: 2.0,
            mm2_per_mc: 0.08,
            pe_static_w: 7.3,
            pe_leak_w: 2.0,
            dram_layer_static_w: 5.0,
            refresh_power_w: 2.0,
            sram_w_per_mib: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipletSpec {
    pub role: Role,
    /// (rows, cols) of PEs.
    pub pe_grid: (u32, u32),
    pub pe: PeSpec,
    pub dram: DramStackSpec,
    pub clock_hz: f64,
    pub area_budget_mm2: f64,
    pub tdp_w: f64,
    #[serde(default = "one")]
    pub flops_calibration: f64,
    #[serde(default)]
    pub tech: TechParams,
}

fn one() -> f64 {
    1.0
}

impl ChipletSpec {
    pub fn n_pe(&self) -> u32 {
        self.pe_grid.0 * self.pe_grid.1
    }

    /// DRAM capacity local to one PE.
    pub fn pe_capacity_bytes(&self) -> f64 {
        self.dram.capacity_bytes as f64 / self.n_pe().max(1) as f64
    }

    pub fn area_mm2(&self) -> f64 {
        let t = &self.tech;
        let macs = self.pe.sa_rows as f64 * self.pe.sa_cols as f64;
        let sram_mib = self.pe.sram_capacity_bytes as f64 / MIB;
        let per_core = macs * t.mm2_per_mac + sram_mib * t.mm2_per_mib_sram + t.mm2_per_core;
        let per_pe =
            self.pe.n_core as f64 * per_core + t.mm2_per_pe + self.pe.n_mc as f64 * t.mm2_per_mc;
        self.n_pe() as f64 * per_pe
    }

    /// Nameplate peak power: every unit busy at full rate.
    pub fn peak_power_w(&self) -> f64 {
        let t = &self.tech;
        let flops = self.peak_flops();
        let compute = flops * self.pe.pj_per_flop * 1e-12;
        let dram = self.dram.peak_bw() * 8.0 * self.dram.energy_per_bit_pj * 1e-12;
        let sram_mib =
            self.n_pe() as f64 * self.pe.n_core as f64 * self.pe.sram_capacity_bytes as f64 / MIB;
        compute
            + dram
            + self.n_pe() as f64 * t.pe_static_w
            + self.dram.n_layer as f64 * t.dram_layer_static_w
            + sram_mib * t.sram_w_per_mib
    }

    pub fn peak_flops(&self) -> f64 {
        self.n_pe() as f64
            * self.pe.n_core as f64
            * 2.0
            * self.pe.sa_rows as f64
            * self.pe.sa_cols as f64
            * self.clock_hz
            * self.flops_calibration
    }

    fn check(&self, name: &str, out: &mut Vec<SpecError>) {
        if self.pe_grid.0 == 0 || self.pe_grid.1 == 0 {
            out.push(SpecError::InvalidField {
                chiplet: name.into(),
                reason: "pe_grid must be at least 1x1".into(),
            });
        }
        if !(self.clock_hz > 0.0) || !(self.flops_calibration > 0.0) {
            out.push(SpecError::InvalidField {
                chiplet: name.into(),
                reason: "clock and calibration must be positive".into(),
            });
        }
        self.pe.check(name, out);
        self.dram.check(name, out);
        if self.pe.n_mc as u64 * self.n_pe() as u64 > self.dram.total_banks() as u64 {
            out.push(SpecError::InconsistentCapacity {
                chiplet: name.into(),
                reason: format!(
                    "{} PEs x {} MCs exceed {} DRAM banks",
                    self.n_pe(),
                    self.pe.n_mc,
                    self.dram.total_banks()
                ),
            });
        }
        let area = self.area_mm2();
        if area > self.area_budget_mm2 {
            out.push(SpecError::AreaExceeded {
                chiplet: name.into(),
                area_mm2: area,
                budget_mm2: self.area_budget_mm2,
            });
        }
        let power = self.peak_power_w();
        if power > self.tdp_w {
            out.push(SpecError::PowerExceeded {
                chiplet: name.into(),
                power_w: power,
                limit_w: self.tdp_w,
            });
        }
    }

    /// Full invariant check for a standalone chiplet.
    pub fn validate(&self, name: &str) -> Result<(), ValidationErrors> {
        let mut out = Vec::new();
        self.check(name, &mut out);
        if out.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(out))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipletMetrics {
    pub peak_flops: f64,
    pub peak_bw: f64,
    pub capacity: f64,
    pub peak_power: f64,
    pub area_mm2: f64,
    /// peak_flops / peak_bw, in FLOP/byte.
    pub arithmetic_intensity_knee: f64,
}

pub fn derive_chiplet_metrics(c: &ChipletSpec) -> ChipletMetrics {
    let peak_flops = c.peak_flops();
    let peak_bw = c.dram.peak_bw();
    ChipletMetrics {
        peak_flops,
        peak_bw,
        capacity: c.dram.capacity_bytes as f64,
        peak_power: c.peak_power_w(),
        area_mm2: c.area_mm2(),
        arithmetic_intensity_knee: peak_flops / peak_bw,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub name: String,
    pub kind: String,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub schema: u32,
    pub chiplet_types: BTreeMap<String, ChipletSpec>,
    pub placement: Vec<Placement>,
    pub nop_bandwidth_bytes_per_s: f64,
    pub noc_bandwidth_bytes_per_s: f64,
    pub alpha_noc_s_per_byte: f64,
    pub alpha_nop_s_per_byte: f64,
    pub beta_noc_s_per_hop: f64,
    pub beta_nop_s_per_hop: f64,
    /// NoC hops spent reaching the die-to-die port on each chiplet crossing.
    #[serde(default = "default_edge_hops")]
    pub edge_hops: u32,
    #[serde(default = "default_noc_pj")]
    pub noc_pj_per_byte_hop: f64,
    #[serde(default = "default_nop_pj")]
    pub nop_pj_per_byte_hop: f64,
    pub rack_power_limit_w: f64,
    pub cooling: CoolingSpec,
}

fn default_edge_hops() -> u32 {
    1
}

fn default_noc_pj() -> f64 {
    0.8
}

fn default_nop_pj() -> f64 {
    4.0
}

/// One placed chiplet with its resolved spec.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChipletInstance {
    pub name: String,
    pub kind: String,
    pub pos: (u32, u32),
    pub spec: ChipletSpec,
    pub metrics: ChipletMetrics,
}

/// A system whose invariants hold, with derived metrics populated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedSystem {
    pub spec: SystemSpec,
    pub chiplets: Vec<ChipletInstance>,
    /// Largest PE grid extent, used as the chiplet pitch in global coordinates.
    pub pitch: (u32, u32),
    pub total_peak_power: f64,
    pub total_area_mm2: f64,
}

impl ValidatedSystem {
    pub fn chiplets_with_role(&self, role: Role) -> Vec<usize> {
        self.chiplets
            .iter()
            .enumerate()
            .filter(|(_, c)| c.spec.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn chiplet_at(&self, pos: (u32, u32)) -> Option<usize> {
        self.chiplets.iter().position(|c| c.pos == pos)
    }

    pub fn total_capacity(&self) -> f64 {
        self.chiplets.iter().map(|c| c.metrics.capacity).sum()
    }
}

pub fn validate_system(spec: &SystemSpec) -> Result<ValidatedSystem, ValidationErrors> {
    let mut errs = Vec::new();
    if spec.placement.is_empty() {
        errs.push(SpecError::InconsistentCapacity {
            chiplet: "system".into(),
            reason: "empty mesh".into(),
        });
        return Err(ValidationErrors(errs));
    }
    for (v, f) in [
        (spec.nop_bandwidth_bytes_per_s, "nop_bandwidth_bytes_per_s"),
        (spec.noc_bandwidth_bytes_per_s, "noc_bandwidth_bytes_per_s"),
    ] {
        if !(v > 0.0) {
            errs.push(SpecError::InvalidField {
                chiplet: "system".into(),
                reason: format!("{f} must be positive"),
            });
        }
    }
    for (v, f) in [
        (spec.alpha_noc_s_per_byte, "alpha_noc_s_per_byte"),
        (spec.alpha_nop_s_per_byte, "alpha_nop_s_per_byte"),
        (spec.beta_noc_s_per_hop, "beta_noc_s_per_hop"),
        (spec.beta_nop_s_per_hop, "beta_nop_s_per_hop"),
    ] {
        if !(v >= 0.0) {
            errs.push(SpecError::InvalidField {
                chiplet: "system".into(),
                reason: format!("{f} must be >= 0"),
            });
        }
    }
    for (name, c) in &spec.chiplet_types {
        c.check(name, &mut errs);
    }
    let mut chiplets = Vec::with_capacity(spec.placement.len());
    let mut seen = std::collections::BTreeSet::new();
    for p in &spec.placement {
        if !seen.insert((p.x, p.y)) {
            errs.push(SpecError::InvalidField {
                chiplet: p.name.clone(),
                reason: format!("placement ({}, {}) already occupied", p.x, p.y),
            });
        }
        match spec.chiplet_types.get(&p.kind) {
            Some(c) => chiplets.push(ChipletInstance {
                name: p.name.clone(),
                kind: p.kind.clone(),
                pos: (p.x, p.y),
                spec: c.clone(),
                metrics: derive_chiplet_metrics(c),
            }),
            None => errs.push(SpecError::InvalidField {
                chiplet: p.name.clone(),
                reason: format!("unknown chiplet type `{}`", p.kind),
            }),
        }
    }
    let total_peak_power: f64 = chiplets.iter().map(|c| c.metrics.peak_power).sum();
    if !chiplets.is_empty() && total_peak_power > spec.rack_power_limit_w {
        errs.push(SpecError::PowerExceeded {
            chiplet: "system".into(),
            power_w: total_peak_power,
            limit_w: spec.rack_power_limit_w,
        });
    }
    if !errs.is_empty() {
        return Err(ValidationErrors(errs));
    }
    let pitch = chiplets.iter().fold((1, 1), |acc, c| {
        (acc.0.max(c.spec.pe_grid.1), acc.1.max(c.spec.pe_grid.0))
    });
    let total_area_mm2 = chiplets.iter().map(|c| c.metrics.area_mm2).sum();
    Ok(ValidatedSystem {
        spec: spec.clone(),
        chiplets,
        pitch,
        total_peak_power,
        total_area_mm2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttnVariant {
    #[serde(rename = "MHA")]
    Mha,
    #[serde(rename = "GQA")]
    Gqa,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub schema: u32,
    pub name: String,
    pub n_layers: u32,
    pub n_heads: u32,
    pub n_kv_heads: u32,
    pub d_head: u32,
    pub d_model: u32,
    pub d_ffn: u32,
    pub attn_variant: AttnVariant,
    pub dtype_bytes: u32,
    /// Gated FFN (three projection matrices instead of two).
    #[serde(default)]
    pub ffn_gated: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut out = Vec::new();
        let bad = |r: &str| SpecError::InvalidField {
            chiplet: format!("model {}", self.name),
            reason: r.into(),
        };
        if self.n_layers == 0
            || self.n_heads == 0
            || self.n_kv_heads == 0
            || self.d_head == 0
            || self.d_ffn == 0
        {
            out.push(bad("model dimensions must be >= 1"));
        } else {
            if self.attn_variant == AttnVariant::Mha && self.n_kv_heads != self.n_heads {
                out.push(bad("MHA requires n_kv_heads == n_heads"));
            }
            if !self.n_heads.is_multiple_of(self.n_kv_heads) {
                out.push(bad("n_kv_heads must divide n_heads"));
            }
            if self.d_model != self.n_heads * self.d_head {
                out.push(bad("d_model must equal n_heads x d_head"));
            }
        }
        if self.dtype_bytes == 0 {
            out.push(bad("dtype_bytes must be >= 1"));
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(out))
        }
    }

    pub fn layer_weight_elems(&self) -> u64 {
        let dm = self.d_model as u64;
        let qkv = dm * (self.n_heads as u64 + 2 * self.n_kv_heads as u64) * self.d_head as u64;
        let o = self.n_heads as u64 * self.d_head as u64 * dm;
        let ffn = (if self.ffn_gated { 3 } else { 2 }) * dm * self.d_ffn as u64;
        qkv + o + ffn
    }

    pub fn layer_weight_bytes(&self) -> f64 {
        (self.layer_weight_elems() * self.dtype_bytes as u64) as f64
    }

    pub fn weight_bytes(&self) -> f64 {
        self.layer_weight_bytes() * self.n_layers as f64
    }

    /// KV-cache bytes for one token in one layer (keys and values).
    pub fn kv_bytes_per_token_layer(&self) -> f64 {
        2.0 * self.n_kv_heads as f64 * self.d_head as f64 * self.dtype_bytes as f64
    }

    /// 2 x layers x kv_heads x d_head x seq x dtype.
    pub fn kv_bytes(&self, seq: u64) -> f64 {
        self.kv_bytes_per_token_layer() * self.n_layers as f64 * seq as f64
    }

    pub fn tiny() -> Self {
        ModelSpec {
            schema: SCHEMA_VERSION,
            name: "tiny".into(),
            n_layers: 2,
            n_heads: 2,
            n_kv_heads: 2,
            d_head: 4,
            d_model: 8,
            d_ffn: 16,
            attn_variant: AttnVariant::Mha,
            dtype_bytes: 2,
            ffn_gated: false,
        }
    }

    pub fn qwq_32b() -> Self {
        ModelSpec {
            schema: SCHEMA_VERSION,
            name: "qwq-32b".into(),
            n_layers: 64,
            n_heads: 40,
            n_kv_heads: 8,
            d_head: 128,
            d_model: 5120,
            d_ffn: 27648,
            attn_variant: AttnVariant::Gqa,
            dtype_bytes: 2,
            ffn_gated: true,
        }
    }

    /// QwQ attention/FFN geometry truncated to 12 layers so a whole model
    /// fits an 8-PE group (16 GB of PE-local DRAM on the reference chiplets).
    pub fn qwq_class() -> Self {
        ModelSpec {
            name: "qwq-class-12l".into(),
            n_layers: 12,
            ..Self::qwq_32b()
        }
    }

    pub fn gpt3_13b() -> Self {
        ModelSpec {
            schema: SCHEMA_VERSION,
            name: "gpt3-13b".into(),
            n_layers: 40,
            n_heads: 40,
            n_kv_heads: 40,
            d_head: 128,
            d_model: 5120,
            d_ffn: 20480,
            attn_variant: AttnVariant::Mha,
            dtype_bytes: 2,
            ffn_gated: false,
        }
    }

    pub fn llama3_70b() -> Self {
        ModelSpec {
            schema: SCHEMA_VERSION,
            name: "llama3-70b".into(),
            n_layers: 80,
            n_heads: 64,
            n_kv_heads: 8,
            d_head: 128,
            d_model: 8192,
            d_ffn: 28672,
            attn_variant: AttnVariant::Gqa,
            dtype_bytes: 2,
            ffn_gated: true,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "qwq-32b" => Some(Self::qwq_32b()),
            "qwq-class" | "qwq-class-12l" => Some(Self::qwq_class()),
            "gpt3-13b" => Some(Self::gpt3_13b()),
            "llama3-70b" => Some(Self::llama3_70b()),
            _ => None,
        }
    }
}

/// Rejects a model whose weights exceed the total DRAM of the system.
pub fn check_model_fits(sys: &ValidatedSystem, model: &ModelSpec) -> Result<(), ValidationErrors> {
    let cap = sys.total_capacity();
    let w = model.weight_bytes();
    if w > cap {
        return Err(ValidationErrors(vec![SpecError::InconsistentCapacity {
            chiplet: "system".into(),
            reason: format!(
                "model `{}` weights {:.3e} B exceed total capacity {:.3e} B",
                model.name, w, cap
            ),
        }]));
    }
    Ok(())
}

pub fn default_pc() -> ChipletSpec {
    ChipletSpec {
        role: Role::Prefill,
        pe_grid: (4, 4),
        pe: PeSpec {
            n_core: 16,
            sa_rows: 32,
            sa_cols: 32,
            base_sa_rows: 8,
            sram_capacity_bytes: 256 * 1024,
            sram_banks: 16,
            vector_regs: 64,
            noc_flit_bits: 512,
            n_mc: 16,
            pj_per_flop: default_pj_per_flop(),
            sram_pj_per_bit: default_sram_pj_per_bit(),
        },
        dram: DramStackSpec {
            n_layer: 4,
            n_bank: 64,
            n_io_bits: 256,
            burst_len: 8,
            page_size_bytes: 2048,
            capacity_bytes: 32 * GIB,
            bank_capacity_bytes: 32 * GIB / 256,
            t_rcd_ns: 2.5,
            t_cas_ns: 2.5,
            t_rp_ns: 2.5,
            t_rfc_ns: 130.65,
            t_rfi_base_ns: 3900.0,
            io_clock_hz: 1.3e9,
            energy_per_bit_pj: 0.7,
            retention_base_temp_c: 85.0,
            tsv_delay_ns: 0.5,
            refresh_energy_per_cmd_pj: 0.0,
        },
        clock_hz: 800e6,
        area_budget_mm2: 600.0,
        tdp_w: 450.0,
        flops_calibration: 1.0,
        tech: TechParams::default(),
    }
}

pub fn default_dc() -> ChipletSpec {
    let pc = default_pc();
    ChipletSpec {
        role: Role::Decode,
        pe_grid: (4, 8),
        pe: PeSpec {
            n_core: 8,
            sram_capacity_bytes: 128 * 1024,
            n_mc: 32,
            ..pc.pe
        },
        dram: DramStackSpec {
            n_layer: 8,
            n_bank: 128,
            capacity_bytes: 64 * GIB,
            bank_capacity_bytes: 64 * GIB / 1024,
            io_clock_hz: 0.8e9,
            ..pc.dram
        },
        area_budget_mm2: 620.0,
        tdp_w: 650.0,
        tech: TechParams {
            dram_layer_static_w: 4.0,
            ..TechParams::default()
        },
        ..pc
    }
}

/// Five prefill and four decode chiplets on a 3x3 package mesh.
pub fn default_system() -> SystemSpec {
    let mut types = BTreeMap::new();
    types.insert("PC".to_string(), default_pc());
    types.insert("DC".to_string(), default_dc());
    let layout = [
        ("PC", 0, 0),
        ("PC", 1, 0),
        ("PC", 2, 0),
        ("PC", 0, 1),
        ("PC", 1, 1),
        ("DC", 2, 1),
        ("DC", 0, 2),
        ("DC", 1, 2),
        ("DC", 2, 2),
    ];
    let mut n_pc = 0;
    let mut n_dc = 0;
    let placement = layout
        .iter()
        .map(|&(kind, x, y)| {
            let idx = if kind == "PC" {
                n_pc += 1;
                n_pc
            } else {
                n_dc += 1;
                n_dc
            };
            Placement {
                name: format!("{kind}{idx}"),
                kind: kind.into(),
                x,
                y,
            }
        })
        .collect();
    SystemSpec {
        schema: SCHEMA_VERSION,
        chiplet_types: types,
        placement,
        nop_bandwidth_bytes_per_s: 800e9,
        noc_bandwidth_bytes_per_s: 200e9,
        alpha_noc_s_per_byte: 1.0 / 200e9,
        alpha_nop_s_per_byte: 1.0 / 800e9,
        beta_noc_s_per_hop: 1e-9,
        beta_nop_s_per_hop: 4e-9,
        edge_hops: default_edge_hops(),
        noc_pj_per_byte_hop: default_noc_pj(),
        nop_pj_per_byte_hop: default_nop_pj(),
        rack_power_limit_w: 10_000.0,
        cooling: CoolingSpec::default(),
    }
}

/// A system made of one chiplet type at a single package position.
pub fn single_chiplet_system(c: ChipletSpec) -> SystemSpec {
    let mut types = BTreeMap::new();
    types.insert("C".to_string(), c);
    SystemSpec {
        chiplet_types: types,
        placement: vec![Placement {
            name: "C1".into(),
            kind: "C".into(),
            x: 0,
            y: 0,
        }],
        ..default_system()
    }
}

trait Schema {
    fn schema(&self) -> u32;
}

impl Schema for SystemSpec {
    fn schema(&self) -> u32 {
        self.schema
    }
}

impl Schema for ModelSpec {
    fn schema(&self) -> u32 {
        self.schema
    }
}

fn load_json<T: serde::de::DeserializeOwned + Schema>(path: &Path) -> Result<T, ConfigError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: p.clone(),
        source,
    })?;
    let v: T = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: p.clone(),
        source,
    })?;
    if v.schema() != SCHEMA_VERSION {
        return Err(ConfigError::Schema {
            path: p,
            found: v.schema(),
            expected: SCHEMA_VERSION,
        });
    }
    Ok(v)
}

pub fn load_system(path: &Path) -> Result<SystemSpec, ConfigError> {
    load_json(path)
}

pub fn load_model(path: &Path) -> Result<ModelSpec, ConfigError> {
    load_json(path)
}

/// Chiplet files have no schema wrapper; they are plain `ChipletSpec` JSON.
pub fn load_chiplet(path: &Path) -> Result<ChipletSpec, ConfigError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: p.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: p, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_system_is_valid() {
        let sys = validate_system(&default_system()).expect("valid");
        assert_eq!(sys.chiplets_with_role(Role::Prefill).len(), 5);
        assert_eq!(sys.chiplets_with_role(Role::Decode).len(), 4);
    }

    #[test]
    fn empty_mesh_is_inconsistent() {
        let mut s = default_system();
        s.placement.clear();
        let e = validate_system(&s).unwrap_err();
        assert!(
            matches!(&e.0[0], SpecError::InconsistentCapacity { reason, .. } if reason == "empty mesh")
        );
    }

    #[test]
    fn tdp_violation_names_chiplet() {
        let mut s = default_system();
        s.chiplet_types.get_mut("PC").unwrap().tdp_w = 1.0;
        let e = validate_system(&s).unwrap_err();
        let hit = e.0.iter().find_map(|e| match e {
            SpecError::PowerExceeded {
                chiplet, power_w, ..
            } => Some((chiplet.clone(), *power_w)),
            _ => None,
        });
        let (name, p) = hit.expect("power error");
        assert_eq!(name, "PC");
        assert_relative_eq!(p, 438.0, max_relative = 0.01);
    }

    #[test]
    fn validation_reports_all_violations() {
        let mut s = default_system();
        let pc = s.chiplet_types.get_mut("PC").unwrap();
        pc.tdp_w = 1.0;
        pc.area_budget_mm2 = 1.0;
        pc.dram.capacity_bytes += 1;
        let e = validate_system(&s).unwrap_err();
        assert!(e
            .0
            .iter()
            .any(|e| matches!(e, SpecError::PowerExceeded { .. })));
        assert!(e
            .0
            .iter()
            .any(|e| matches!(e, SpecError::AreaExceeded { .. })));
        assert!(e
            .0
            .iter()
            .any(|e| matches!(e, SpecError::InconsistentCapacity { .. })));
    }

    #[test]
    fn reference_peak_flops() {
        let m = derive_chiplet_metrics(&default_pc());
        assert_relative_eq!(m.peak_flops, 419.43e12, max_relative = 1e-4);
        assert!((m.peak_flops - 400e12).abs() / 400e12 < 0.05);
        assert_relative_eq!(m.arithmetic_intensity_knee, m.peak_flops / m.peak_bw);
    }

    #[test]
    fn peak_bw_substitution() {
        let mut d = default_pc().dram;
        d.n_layer = 4;
        d.n_bank = 32;
        d.n_io_bits = 128;
        d.io_clock_hz = 800e6;
        assert_relative_eq!(d.peak_bw(), 1.6384e12, max_relative = 1e-9);
    }

    #[test]
    fn identity_flops() {
        let mut c = default_pc();
        c.pe_grid = (1, 1);
        c.pe.n_core = 1;
        c.pe.sa_rows = 1;
        c.pe.sa_cols = 1;
        c.pe.base_sa_rows = 1;
        c.clock_hz = 1.0;
        assert_eq!(derive_chiplet_metrics(&c).peak_flops, 2.0);
    }

    #[test]
    fn reference_area_and_bw() {
        let pc = derive_chiplet_metrics(&default_pc());
        let dc = derive_chiplet_metrics(&default_dc());
        assert_relative_eq!(pc.area_mm2, 546.0, max_relative = 0.01);
        assert_relative_eq!(pc.peak_bw, 10.6e12, max_relative = 0.01);
        assert_relative_eq!(dc.peak_bw, 26.2e12, max_relative = 0.01);
        assert_relative_eq!(dc.peak_power, 638.0, max_relative = 0.005);
    }

    #[test]
    fn model_invariants() {
        for m in [
            ModelSpec::tiny(),
            ModelSpec::qwq_32b(),
            ModelSpec::gpt3_13b(),
            ModelSpec::llama3_70b(),
        ] {
            m.validate().unwrap();
        }
        let mut bad = ModelSpec::tiny();
        bad.n_kv_heads = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oversized_model_rejected() {
        let sys = validate_system(&single_chiplet_system(default_pc())).unwrap();
        assert!(check_model_fits(&sys, &ModelSpec::llama3_70b()).is_err());
        assert!(check_model_fits(&sys, &ModelSpec::qwq_class()).is_ok());
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(default_system()).unwrap();
        v.as_object_mut().unwrap().insert("bogus".into(), 1.into());
        assert!(serde_json::from_value::<SystemSpec>(v).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn json_round_trip(cores in 1u32..64, layers in 1u32..8, tdp in 1.0f64..2000.0) {
                let mut s = default_system();
                let pc = s.chiplet_types.get_mut("PC").unwrap();
                pc.pe.n_core = cores;
                pc.dram.n_layer = layers;
                pc.tdp_w = tdp;
                let text = serde_json::to_string(&s).unwrap();
                let back: SystemSpec = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(back, s);
            }

            #[test]
            fn metrics_monotone(cores in 1u32..32, layers in 1u32..8) {
                let mut a = default_pc();
                a.pe.n_core = cores;
                a.dram.n_layer = layers;
                a.dram.capacity_bytes = a.dram.total_banks() as u64 * a.dram.bank_capacity_bytes;
                let mut b = a.clone();
                b.pe.n_core += 1;
                let mut c = a.clone();
                c.dram.n_layer += 1;
                c.dram.capacity_bytes = c.dram.total_banks() as u64 * c.dram.bank_capacity_bytes;
                let (ma, mb, mc) = (derive_chiplet_metrics(&a), derive_chiplet_metrics(&b), derive_chiplet_metrics(&c));
                prop_assert!(mb.peak_flops >= ma.peak_flops);
                prop_assert!(mc.peak_bw >= ma.peak_bw);
                prop_assert!(mc.capacity >= ma.capacity);
            }
        }
    }
}
