//! Post-hoc roofline audit of every simulated GEMM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ActivityTrace, SimError};
use crate::compmodel::GemmShape;
use crate::hwspec::{ChipletSpec, ValidatedSystem};
use crate::memmodel::transfer_latency;
use crate::workload::{OpClass, Phase};

/// Relative slack allowed above the roofline.
pub const ROOFLINE_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineEntry {
    pub phase: Phase,
    pub class: OpClass,
    pub shape: GemmShape,
    pub chiplet: usize,
    /// FLOPs per DRAM byte, against the compulsory traffic.
    pub ai: f64,
    pub achieved_flops: f64,
    /// min(compute peak of the active cores, ai x effective bandwidth).
    pub bound: f64,
    pub count: u64,
}

impl RooflineEntry {
    pub fn ratio(&self) -> f64 {
        self.achieved_flops / self.bound
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RooflineReport {
    pub entries: Vec<RooflineEntry>,
    /// (min, max) arithmetic intensity per phase.
    pub ai_by_phase: BTreeMap<Phase, (f64, f64)>,
}

/// Sustained bandwidth (bytes/s) of `banks` channels at `derate`.
pub fn effective_bw(spec: &ChipletSpec, banks: u32, derate: f64) -> f64 {
    const PROBE_BITS: f64 = (1u64 << 40) as f64;
    PROBE_BITS / 8.0 / transfer_latency(PROBE_BITS, banks, &spec.dram, derate)
}

pub fn roofline_check(
    activity: &ActivityTrace,
    sys: &ValidatedSystem,
) -> Result<RooflineReport, SimError> {
    let mut report = RooflineReport::default();
    let mut bad = Vec::new();
    for op in &activity.ops {
        if op.latency <= 0.0 || op.flops <= 0.0 {
            continue;
        }
        let spec = &sys.chiplets[op.chiplet].spec;
        let peak = op.active_cores as f64
            * 2.0
            * spec.pe.sa_rows as f64
            * spec.pe.sa_cols as f64
            * spec.clock_hz;
        let ai = op.flops / op.min_bytes;
        let bound = peak.min(ai * effective_bw(spec, spec.pe.n_mc, op.derate));
        let e = RooflineEntry {
            phase: op.phase,
            class: op.class,
            shape: op.shape,
            chiplet: op.chiplet,
            ai,
            achieved_flops: op.flops / op.latency,
            bound,
            count: op.count,
        };
        let r = report
            .ai_by_phase
            .entry(op.phase)
            .or_insert((f64::INFINITY, 0.0));
        r.0 = r.0.min(ai);
        r.1 = r.1.max(ai);
        if e.ratio() > 1.0 + ROOFLINE_TOLERANCE {
            bad.push(report.entries.len());
        }
        report.entries.push(e);
    }
    if let Some(&worst) = bad.iter().max_by(|&&a, &&b| {
        report.entries[a]
            .ratio()
            .total_cmp(&report.entries[b].ratio())
    }) {
        let w = &report.entries[worst];
        return Err(SimError::RooflineViolation {
            count: bad.len(),
            worst: format!(
                "{:?} {}x{}x{} at {:.4}x the bound",
                w.class,
                w.shape.m,
                w.shape.n,
                w.shape.k,
                w.ratio()
            ),
        });
    }
    Ok(report)
}
