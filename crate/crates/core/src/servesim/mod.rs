//! Discrete-event simulation of prefill/decode disaggregated serving.
//!
//! Prefill batches flow through their pipeline stages; KV for each layer is
//! shipped to the decode stage that owns it; decode replicas keep one
//! micro-batch per stage in flight and admit requests at iteration
//! boundaries. All timing comes from the operator cost models.

mod engine;
mod roofline;
mod trace;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commmodel::MeshCoord;
use crate::compmodel::GemmShape;
use crate::d3flow::FlowError;
use crate::memmodel::MemError;
use crate::workload::{OpClass, Phase};

pub use engine::simulate;
pub use roofline::{
    effective_bw, roofline_check, RooflineEntry, RooflineReport, ROOFLINE_TOLERANCE,
};
pub use trace::{gen_trace, Request, Trace, TraceConfig, TraceSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown trace source '{0}'")]
    UnknownSource(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("request {request} needs {need_tokens} KV tokens but the largest decode replica holds {capacity_tokens}")]
    KvOverflow {
        request: u64,
        need_tokens: u64,
        capacity_tokens: u64,
    },
    #[error("plan does not match system/model: {0}")]
    PlanMismatch(String),
    #[error("{count} operator(s) exceed the roofline; worst {worst}")]
    RooflineViolation { count: usize, worst: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Mem(#[from] MemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingMode {
    /// Requests join and leave a decode micro-batch at every iteration.
    Continuous,
    /// A micro-batch admits new requests only once it has fully drained.
    Static,
}

/// When the KV of a layer becomes eligible to leave the prefill PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvSendPoint {
    QkvComplete,
    /// Optimistic: overlaps the transfer with the QKV projection itself.
    QkvStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub mode: BatchingMode,
    /// Prompt tokens per prefill batch; a longer single prompt runs alone.
    pub max_prefill_tokens: u64,
    /// Requests per decode micro-batch.
    pub max_decode_batch: usize,
    /// Decode contexts are rounded up to a multiple of this for costing.
    pub ctx_bucket: u64,
    pub kv_send: KvSendPoint,
    /// Keep per-PE intervals and KV transfers; op records are always kept.
    pub record_activity: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: BatchingMode::Continuous,
            max_prefill_tokens: 8192,
            max_decode_batch: 32,
            ctx_bucket: 16,
            kv_send: KvSendPoint::QkvComplete,
            record_activity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub id: u64,
    pub arrival: f64,
    pub input_len: u64,
    pub output_len: u64,
    pub ttft: f64,
    /// Mean gap between consecutive output tokens; 0 for single-token outputs.
    pub tbt_mean: f64,
    /// `ttft` plus the sum of all decode gaps.
    pub e2e: f64,
    /// Absolute time of the last token.
    pub finish: f64,
    pub decode_replica: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingMetrics {
    /// In trace order.
    pub requests: Vec<RequestMetrics>,
    /// Trace start to last token, seconds.
    pub makespan: f64,
    pub tokens: u64,
    /// Output tokens per second over the makespan.
    pub tpt: f64,
    pub dynamic_energy_j: f64,
    pub static_energy_j: f64,
    /// Coolant pump energy; only the thermal loop fills this in.
    pub pump_energy_j: f64,
    pub energy_j: f64,
    pub tokens_per_joule: f64,
    pub mean_ttft: f64,
    pub p99_ttft: f64,
    pub mean_tbt: f64,
    pub mean_e2e: f64,
    /// Admissions deferred because no decode replica had KV room.
    pub kv_blocked: u64,
    pub prefill_batches: u64,
    pub decode_iterations: u64,
}

impl ServingMetrics {
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        for r in &self.requests {
            w.serialize(r).map_err(|e| SimError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityKind {
    Compute,
    Mem,
    Comm,
    Idle,
}

impl ActivityKind {
    fn name(self) -> &'static str {
        match self {
            ActivityKind::Compute => "compute",
            ActivityKind::Mem => "mem",
            ActivityKind::Comm => "comm",
            ActivityKind::Idle => "idle",
        }
    }
}

/// Busy time of one PE. Intervals of a PE never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub pe: MeshCoord,
    pub start: f64,
    pub end: f64,
    pub kind: ActivityKind,
    pub energy: f64,
}

/// A point-to-point transfer (KV or activations) between PEs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub src: MeshCoord,
    pub dst: MeshCoord,
    pub start: f64,
    pub end: f64,
    pub bytes: f64,
    pub energy: f64,
}

/// Aggregate of identical per-PE GEMM executions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub phase: Phase,
    /// Index into the system's chiplet list.
    pub chiplet: usize,
    pub class: OpClass,
    pub shape: GemmShape,
    pub derate: f64,
    pub flops: f64,
    pub min_bytes: f64,
    pub latency: f64,
    pub active_cores: u32,
    /// Per-PE executions.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivityTrace {
    pub intervals: Vec<Interval>,
    pub transfers: Vec<Transfer>,
    pub ops: Vec<OpRecord>,
    pub makespan: f64,
}

fn pe_label(pe: &MeshCoord) -> String {
    format!("{}.{}/{}.{}", pe.chiplet.0, pe.chiplet.1, pe.pe.0, pe.pe.1)
}

impl ActivityTrace {
    pub fn busy_time(&self, pe: &MeshCoord) -> f64 {
        self.intervals
            .iter()
            .filter(|i| i.pe == *pe)
            .map(|i| i.end - i.start)
            .sum()
    }

    /// Dynamic energy of PE intervals plus transfers whose source sits on
    /// each chiplet position.
    pub fn energy_by_chiplet(&self) -> std::collections::BTreeMap<(u32, u32), f64> {
        let mut out = std::collections::BTreeMap::new();
        for i in &self.intervals {
            *out.entry(i.pe.chiplet).or_insert(0.0) += i.energy;
        }
        for t in &self.transfers {
            *out.entry(t.src.chiplet).or_insert(0.0) += t.energy;
        }
        out
    }

    pub fn dynamic_energy(&self) -> f64 {
        self.intervals.iter().map(|i| i.energy).sum::<f64>()
            + self.transfers.iter().map(|t| t.energy).sum::<f64>()
    }

    /// `pe,start_s,end_s,kind,energy_j`, with idle gaps filled in up to the
    /// makespan for every PE that was ever busy.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", path.display()));
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "pe,start_s,end_s,kind,energy_j").map_err(io)?;
        let mut by_pe: std::collections::BTreeMap<MeshCoord, Vec<&Interval>> = Default::default();
        for i in &self.intervals {
            by_pe.entry(i.pe).or_default().push(i);
        }
        for (pe, mut ivs) in by_pe {
            ivs.sort_by(|a, b| a.start.total_cmp(&b.start));
            let label = pe_label(&pe);
            let mut t = 0.0;
            for i in ivs {
                if i.start > t {
                    writeln!(f, "{label},{t},{},idle,0", i.start).map_err(io)?;
                }
                writeln!(
                    f,
                    "{label},{},{},{},{}",
                    i.start,
                    i.end,
                    i.kind.name(),
                    i.energy
                )
                .map_err(io)?;
                t = i.end;
            }
            if self.makespan > t {
                writeln!(f, "{label},{t},{},idle,0", self.makespan).map_err(io)?;
            }
        }
        f.flush().map_err(io)
    }
}
