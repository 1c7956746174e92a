//! Exhaustive intra-PE dataflow search over tile sizes and SRAM reuse
//! policies.
//!
//! A policy stages some operand tiles in the core's SRAM buffer and streams
//! the rest straight from stacked DRAM. Streams are double-buffered against
//! the array, so each tile step costs `max(compute, stream)`; staged tiles
//! are loaded up front and do not overlap.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compmodel::{gemm_cycles, CompError, GemmShape, Tile};
use crate::hwspec::{ChipletSpec, DramStackSpec, PeSpec};
use crate::memmodel::{self, MemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("no feasible (tiling, policy) pair for {m}x{n}x{k} with {s_buf} B of SRAM")]
    NoFeasibleMapping { m: u64, n: u64, k: u64, s_buf: u64 },
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Comp(#[from] CompError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReusePolicy {
    /// Input tile staged; weights and partial outputs streamed.
    #[serde(rename = "IRU")]
    Iru,
    /// Weight tile staged; inputs and partial outputs streamed.
    #[serde(rename = "WRU")]
    Wru,
    /// Output tile accumulated in SRAM; inputs and weights streamed.
    #[serde(rename = "ORU")]
    Oru,
    /// All three tiles staged; nothing streamed.
    #[serde(rename = "ARU")]
    Aru,
}

impl ReusePolicy {
    pub const ALL: [ReusePolicy; 4] = [
        ReusePolicy::Iru,
        ReusePolicy::Wru,
        ReusePolicy::Oru,
        ReusePolicy::Aru,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ReusePolicy::Iru => "IRU",
            ReusePolicy::Wru => "WRU",
            ReusePolicy::Oru => "ORU",
            ReusePolicy::Aru => "ARU",
        }
    }

    /// SRAM elements held by this policy.
    pub fn footprint_elems(&self, t: &Tile) -> u64 {
        let a = t.t_m * t.t_k;
        let b = t.t_n * t.t_k;
        let c = t.t_m * t.t_n;
        match self {
            ReusePolicy::Iru => a,
            ReusePolicy::Wru => b,
            ReusePolicy::Oru => c,
            ReusePolicy::Aru => a + b + c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileMapping {
    pub t_m: u64,
    pub t_n: u64,
    pub t_k: u64,
    pub policy: ReusePolicy,
}

impl TileMapping {
    pub fn tile(&self) -> Tile {
        Tile {
            t_m: self.t_m,
            t_n: self.t_n,
            t_k: self.t_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileGrid {
    /// Powers of two up to each dimension, plus the dimension itself.
    #[default]
    Pow2,
    AllDivisors,
}

fn candidates(dim: u64, grid: TileGrid) -> Vec<u64> {
    let mut v: Vec<u64> = match grid {
        TileGrid::Pow2 => std::iter::successors(Some(1u64), |x| x.checked_mul(2))
            .take_while(|&x| x <= dim)
            .collect(),
        TileGrid::AllDivisors => (1..=dim).filter(|d| dim.is_multiple_of(*d)).collect(),
    };
    if v.last() != Some(&dim) {
        v.push(dim);
    }
    v
}

/// Candidate tiles in lexicographic `(t_m, t_n, t_k)` order.
pub fn enumerate_tilings(shape: &GemmShape, grid: TileGrid) -> Vec<Tile> {
    let (cm, cn, ck) = (
        candidates(shape.m, grid),
        candidates(shape.n, grid),
        candidates(shape.k, grid),
    );
    let mut out = Vec::with_capacity(cm.len() * cn.len() * ck.len());
    for &t_m in &cm {
        for &t_n in &cn {
            for &t_k in &ck {
                out.push(Tile { t_m, t_n, t_k });
            }
        }
    }
    out
}

pub fn feasible_policies(t: &Tile, s_buf: u64, dtype_bytes: u32) -> Vec<ReusePolicy> {
    ReusePolicy::ALL
        .into_iter()
        .filter(|p| p.footprint_elems(t).saturating_mul(dtype_bytes as u64) <= s_buf)
        .collect()
}

/// Everything the cost model needs besides the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchContext {
    pub pe: PeSpec,
    pub dram: DramStackSpec,
    pub clock_hz: f64,
    /// SRAM bytes available to the kernel.
    pub s_buf: u64,
    /// Bank channels serving the kernel.
    pub target_banks: u32,
    /// Number of cores concurrently contending for those banks.
    pub share: f64,
    pub dtype_bytes: u32,
    pub derate: f64,
    pub grid: TileGrid,
}

impl SearchContext {
    /// One core of a PE with the PE's banks to itself.
    pub fn single_core(c: &ChipletSpec, dtype_bytes: u32, temp_c: f64) -> Result<Self, MemError> {
        let derate = checked_derate(&c.dram, temp_c)?;
        Ok(SearchContext {
            pe: c.pe.clone(),
            dram: c.dram.clone(),
            clock_hz: c.clock_hz,
            s_buf: c.pe.sram_capacity_bytes,
            target_banks: c.pe.n_mc,
            share: 1.0,
            dtype_bytes,
            derate,
            grid: TileGrid::Pow2,
        })
    }
}

pub fn checked_derate(d: &DramStackSpec, temp_c: f64) -> Result<f64, MemError> {
    if !(memmodel::MIN_TEMP_C..=memmodel::MAX_TEMP_C).contains(&temp_c) {
        return Err(MemError::TempOutOfRange(temp_c));
    }
    let derate = memmodel::refresh_derate(d, temp_c);
    if derate >= 1.0 {
        return Err(MemError::RefreshStall { temp_c, derate });
    }
    Ok(derate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateCost {
    pub mapping: TileMapping,
    /// Seconds.
    pub latency: f64,
    /// Joules.
    pub energy: f64,
    pub compute_latency: f64,
    pub dram_bits: f64,
}

impl CandidateCost {
    fn order(&self, o: &Self) -> Ordering {
        self.latency
            .total_cmp(&o.latency)
            .then(self.energy.total_cmp(&o.energy))
            .then(
                (self.mapping.t_m, self.mapping.t_n, self.mapping.t_k).cmp(&(
                    o.mapping.t_m,
                    o.mapping.t_n,
                    o.mapping.t_k,
                )),
            )
            .then(self.mapping.policy.cmp(&o.mapping.policy))
    }
}

/// Per-instance DRAM traffic of one operand class, in elements.
struct Traffic {
    /// Streamed elements, overlapped with compute.
    stream: f64,
    /// Staged loads as (events, elements per event).
    staged: [(f64, f64); 3],
    staged_elems: f64,
}

fn traffic(s: &GemmShape, t: &Tile, policy: ReusePolicy) -> Traffic {
    let (m, n, k) = (s.m as f64, s.n as f64, s.k as f64);
    let mt = s.m.div_ceil(t.t_m) as f64;
    let nt = s.n.div_ceil(t.t_n) as f64;
    let kt = s.k.div_ceil(t.t_k) as f64;
    let steps = mt * nt * kt;
    let a_once = m * k;
    let b_once = k * n;
    // Partial sums leave and re-enter the array once per extra K tile.
    let c_partial = m * n * (2.0 * kt - 1.0);
    let a_per_n = m * k * nt;
    let b_per_m = k * n * mt;
    let none = (0.0, 0.0);
    let (stream, staged) = match policy {
        ReusePolicy::Iru => (
            b_per_m + c_partial,
            [(mt * kt, a_once / (mt * kt)), none, none],
        ),
        ReusePolicy::Wru => (
            a_per_n + c_partial,
            [(nt * kt, b_once / (nt * kt)), none, none],
        ),
        ReusePolicy::Oru => (
            a_per_n + b_per_m,
            [(mt * nt, m * n / (mt * nt)), none, none],
        ),
        ReusePolicy::Aru => (
            0.0,
            [
                (steps, a_per_n / steps),
                (steps, b_per_m / steps),
                (mt * nt, m * n / (mt * nt)),
            ],
        ),
    };
    let staged_elems = staged.iter().map(|(e, x)| e * x).sum();
    Traffic {
        stream,
        staged,
        staged_elems,
    }
}

/// Cost of one (tile, policy) pair. The pair is assumed feasible.
pub fn evaluate(
    shape: &GemmShape,
    mapping: &TileMapping,
    ctx: &SearchContext,
) -> Result<CandidateCost, FlowError> {
    let tile = mapping.tile();
    let comp = gemm_cycles(shape, &tile, &ctx.pe, ctx.pe.pj_per_flop)?;
    let compute_latency = comp.cycles as f64 / ctx.clock_hz;
    let tr = traffic(shape, &tile, mapping.policy);
    let batch = shape.batch as f64;
    let dt_bits = 8.0 * ctx.dtype_bytes as f64;
    let steps = (shape.m.div_ceil(tile.t_m)
        * shape.n.div_ceil(tile.t_n)
        * shape.k.div_ceil(tile.t_k)) as f64
        * batch;
    let mem = |bits: f64| {
        memmodel::transfer_latency(bits * ctx.share, ctx.target_banks, &ctx.dram, ctx.derate)
    };

    let stream_bits = tr.stream * batch * dt_bits;
    let compute_step = compute_latency / steps;
    let stream_step = mem(stream_bits / steps);
    let mut latency = steps * compute_step.max(stream_step);
    for (events, elems) in tr.staged {
        if events > 0.0 && elems > 0.0 {
            latency += events * batch * mem(elems * dt_bits);
        }
    }
    let staged_bits = tr.staged_elems * batch * dt_bits;
    let dram_bits = stream_bits + staged_bits;
    let energy = memmodel::transfer_energy(dram_bits, ctx.target_banks, &ctx.dram, ctx.derate)
        + comp.energy
        + staged_bits * 2.0 * ctx.pe.sram_pj_per_bit * 1e-12;
    Ok(CandidateCost {
        mapping: *mapping,
        latency,
        energy,
        compute_latency,
        dram_bits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataflowResult {
    pub shape: GemmShape,
    pub best: TileMapping,
    /// Seconds.
    pub latency: f64,
    /// Joules.
    pub energy: f64,
    pub compute_latency: f64,
    pub dram_bits: f64,
    /// Tilings times policies.
    pub search_space_size: u64,
    /// Feasible pairs actually costed.
    pub evaluated: u64,
}

impl DataflowResult {
    pub fn edp(&self) -> f64 {
        self.latency * self.energy
    }
}

/// Best mapping over all feasible pairs, optionally restricted to one
/// policy. Candidates are costed in parallel; the reduction is a total order,
/// so the answer does not depend on scheduling.
pub fn search_with(
    shape: &GemmShape,
    ctx: &SearchContext,
    only: Option<ReusePolicy>,
) -> Result<DataflowResult, FlowError> {
    let tiles = enumerate_tilings(shape, ctx.grid);
    let space = tiles.len() as u64 * ReusePolicy::ALL.len() as u64;
    let per_tile: Vec<Result<(Option<CandidateCost>, u64), FlowError>> = tiles
        .par_iter()
        .map(|t| {
            let mut best: Option<CandidateCost> = None;
            let mut n = 0;
            for p in feasible_policies(t, ctx.s_buf, ctx.dtype_bytes) {
                if only.is_some_and(|o| o != p) {
                    continue;
                }
                let m = TileMapping {
                    t_m: t.t_m,
                    t_n: t.t_n,
                    t_k: t.t_k,
                    policy: p,
                };
                let c = evaluate(shape, &m, ctx)?;
                n += 1;
                if best.is_none_or(|b| c.order(&b) == Ordering::Less) {
                    best = Some(c);
                }
            }
            Ok((best, n))
        })
        .collect();
    let mut best: Option<CandidateCost> = None;
    let mut evaluated = 0;
    for r in per_tile {
        let (c, n) = r?;
        evaluated += n;
        if let Some(c) = c {
            if best.is_none_or(|b| c.order(&b) == Ordering::Less) {
                best = Some(c);
            }
        }
    }
    let b = best.ok_or(FlowError::NoFeasibleMapping {
        m: shape.m,
        n: shape.n,
        k: shape.k,
        s_buf: ctx.s_buf,
    })?;
    Ok(DataflowResult {
        shape: *shape,
        best: b.mapping,
        latency: b.latency,
        energy: b.energy,
        compute_latency: b.compute_latency,
        dram_bits: b.dram_bits,
        search_space_size: space,
        evaluated,
    })
}

/// Single-core search on a chiplet's PE at temperature `temp_c`.
pub fn search(
    shape: &GemmShape,
    chiplet: &ChipletSpec,
    dtype_bytes: u32,
    temp_c: f64,
) -> Result<DataflowResult, FlowError> {
    let ctx = SearchContext::single_core(chiplet, dtype_bytes, temp_c)?;
    search_with(shape, &ctx, None)
}

/// Every feasible pair in enumeration order, for reports.
pub fn evaluate_all(
    shape: &GemmShape,
    ctx: &SearchContext,
) -> Result<Vec<CandidateCost>, FlowError> {
    let mut out = Vec::new();
    for t in enumerate_tilings(shape, ctx.grid) {
        for p in feasible_policies(&t, ctx.s_buf, ctx.dtype_bytes) {
            out.push(evaluate(
                shape,
                &TileMapping {
                    t_m: t.t_m,
                    t_n: t.t_n,
                    t_k: t.t_k,
                    policy: p,
                },
                ctx,
            )?);
        }
    }
    Ok(out)
}
