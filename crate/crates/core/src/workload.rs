//! Transformer layers as operator lists, and per-PE operator costs.
//!
//! A layer sharded over `tp` PEs gives each PE `ceil(heads / tp)` query
//! heads, `ceil(kv_heads / tp)` KV heads and `ceil(d_ffn / tp)` FFN columns.
//! Projections and FFN are batched over all tokens in flight; attention is
//! issued per request.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::commmodel::{collective_cost, CollectiveKind, CommParams, MeshCoord};
use crate::compmodel::{vpu_cycles, GemmShape};
use crate::d3flow::{search_with, FlowError, SearchContext, TileGrid};
use crate::hwspec::{ChipletSpec, ModelSpec};
use crate::util::config_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Qkv,
    Logit,
    Softmax,
    Attend,
    OProj,
    FfnUp,
    Act,
    FfnDown,
    Norm,
    AllReduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Work {
    Gemm(GemmShape),
    /// Elementwise vector work, in elements.
    Vector(u64),
    /// All-reduce payload in bytes.
    AllReduce(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerOp {
    pub class: OpClass,
    pub work: Work,
}

/// Per-PE slice of a layer under tensor parallelism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shard {
    pub heads: u64,
    pub kv_heads: u64,
    /// Query heads per KV head on this PE.
    pub group: u64,
    pub ffn: u64,
}

pub fn shard(model: &ModelSpec, tp: u32) -> Shard {
    let tp = tp.max(1) as u64;
    let heads = (model.n_heads as u64).div_ceil(tp);
    let kv_heads = (model.n_kv_heads as u64).div_ceil(tp);
    Shard {
        heads,
        kv_heads,
        group: heads.div_ceil(kv_heads),
        ffn: (model.d_ffn as u64).div_ceil(tp),
    }
}

fn gemm(class: OpClass, m: u64, n: u64, k: u64, batch: u64) -> LayerOp {
    let shape = GemmShape::batched(m.max(1), n.max(1), k.max(1), batch.max(1))
        .expect("dimensions clamped to >= 1");
    LayerOp {
        class,
        work: Work::Gemm(shape),
    }
}

fn dense_ops(model: &ModelSpec, tp: u32, tokens: u64, attention: Vec<LayerOp>) -> Vec<LayerOp> {
    let s = shard(model, tp);
    let dm = model.d_model as u64;
    let dh = model.d_head as u64;
    let ar_bytes = (tokens * dm * model.dtype_bytes as u64) as f64;
    let up = if model.ffn_gated { 2 * s.ffn } else { s.ffn };
    let mut ops = vec![gemm(
        OpClass::Qkv,
        tokens,
        (s.heads + 2 * s.kv_heads) * dh,
        dm,
        1,
    )];
    ops.extend(attention);
    ops.push(gemm(OpClass::OProj, tokens, dm, s.heads * dh, 1));
    if tp > 1 {
        ops.push(LayerOp {
            class: OpClass::AllReduce,
            work: Work::AllReduce(ar_bytes),
        });
    }
    ops.push(gemm(OpClass::FfnUp, tokens, up, dm, 1));
    ops.push(LayerOp {
        class: OpClass::Act,
        work: Work::Vector(tokens * s.ffn),
    });
    ops.push(gemm(OpClass::FfnDown, tokens, dm, s.ffn, 1));
    if tp > 1 {
        ops.push(LayerOp {
            class: OpClass::AllReduce,
            work: Work::AllReduce(ar_bytes),
        });
    }
    ops.push(LayerOp {
        class: OpClass::Norm,
        work: Work::Vector(2 * tokens * dm),
    });
    ops
}

/// One layer of prefill over requests with prompt lengths `lens`.
pub fn prefill_layer_ops(model: &ModelSpec, tp: u32, lens: &[u64]) -> Vec<LayerOp> {
    let s = shard(model, tp);
    let dh = model.d_head as u64;
    let mut attn = Vec::new();
    for &l in lens {
        attn.push(gemm(OpClass::Logit, l * s.group, l, dh, s.kv_heads));
        attn.push(LayerOp {
            class: OpClass::Softmax,
            work: Work::Vector(s.heads * l * l),
        });
        attn.push(gemm(OpClass::Attend, l * s.group, dh, l, s.kv_heads));
    }
    dense_ops(model, tp, lens.iter().sum(), attn)
}

/// One layer of a decode step; `contexts` are the cached lengths (including
/// the token being generated).
pub fn decode_layer_ops(model: &ModelSpec, tp: u32, contexts: &[u64]) -> Vec<LayerOp> {
    let s = shard(model, tp);
    let dh = model.d_head as u64;
    let mut attn = Vec::new();
    for &c in contexts {
        attn.push(gemm(OpClass::Logit, s.group, c, dh, s.kv_heads));
        attn.push(LayerOp {
            class: OpClass::Softmax,
            work: Work::Vector(s.heads * c),
        });
        attn.push(gemm(OpClass::Attend, s.group, dh, c, s.kv_heads));
    }
    dense_ops(model, tp, contexts.len() as u64, attn)
}

/// How a GEMM is spread over the cores of one PE.
pub fn core_split(shape: &GemmShape, n_core: u32) -> (GemmShape, u32) {
    let cores = n_core.max(1) as u64;
    if shape.batch > 1 {
        let active = cores.min(shape.batch);
        let per = shape.batch.div_ceil(active);
        let s = GemmShape {
            batch: per,
            ..*shape
        };
        (s, shape.batch.div_ceil(per) as u32)
    } else {
        let per = shape.n.div_ceil(cores.min(shape.n));
        let s = GemmShape::batched(shape.m, per, shape.k, 1).expect("non-empty");
        (s, shape.n.div_ceil(per) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    /// Seconds.
    pub latency: f64,
    /// Joules spent by one PE.
    pub energy: f64,
    /// FLOPs executed by one PE.
    pub flops: f64,
    /// Lower bound on DRAM bytes touched by one PE.
    pub min_bytes: f64,
    pub dram_bits: f64,
    pub compute_latency: f64,
    pub active_cores: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct OpKey {
    shape: GemmShape,
    chiplet: u64,
    derate_bits: u64,
    grid: TileGrid,
}

/// Memo of per-PE GEMM costs shared by simulations, mapping and DSE.
#[derive(Debug, Default)]
pub struct OpCache {
    map: RwLock<HashMap<OpKey, OpCost>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl OpCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

/// A chiplet type as seen by the operator coster.
#[derive(Debug, Clone, PartialEq)]
pub struct PeCoster {
    pub chiplet: ChipletSpec,
    pub key: u64,
    pub dtype_bytes: u32,
    pub grid: TileGrid,
}

impl PeCoster {
    pub fn new(chiplet: &ChipletSpec, dtype_bytes: u32) -> Self {
        let h = config_hash(chiplet);
        PeCoster {
            chiplet: chiplet.clone(),
            key: u64::from_str_radix(&h[..16], 16).expect("hex digest"),
            dtype_bytes,
            grid: TileGrid::Pow2,
        }
    }

    pub fn context(&self, share: u32, derate: f64) -> SearchContext {
        let c = &self.chiplet;
        SearchContext {
            pe: c.pe.clone(),
            dram: c.dram.clone(),
            clock_hz: c.clock_hz,
            s_buf: c.pe.sram_capacity_bytes,
            target_banks: c.pe.n_mc,
            share: share as f64,
            dtype_bytes: self.dtype_bytes,
            derate,
            grid: self.grid,
        }
    }

    /// Cost of a PE-level GEMM: the best dataflow per core, cores in
    /// parallel sharing the PE's banks.
    pub fn gemm(
        &self,
        shape: &GemmShape,
        derate: f64,
        cache: &OpCache,
    ) -> Result<OpCost, FlowError> {
        let key = OpKey {
            shape: *shape,
            chiplet: self.key,
            derate_bits: derate.to_bits(),
            grid: self.grid,
        };
        if let Some(c) = cache.map.read().get(&key) {
            cache.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(*c);
        }
        cache.misses.fetch_add(1, Ordering::Relaxed);
        let (core_shape, active) = core_split(shape, self.chiplet.pe.n_core);
        let r = search_with(&core_shape, &self.context(active, derate), None)?;
        let cost = OpCost {
            latency: r.latency,
            energy: r.energy * active as f64,
            flops: shape.flops(),
            min_bytes: shape.min_bytes(self.dtype_bytes),
            dram_bits: r.dram_bits * active as f64,
            compute_latency: r.compute_latency,
            active_cores: active,
        };
        cache.map.write().insert(key, cost);
        Ok(cost)
    }

    /// Elementwise work split evenly over the cores' vector units.
    pub fn vector(&self, elements: u64) -> OpCost {
        let pe = &self.chiplet.pe;
        let per_core = elements.div_ceil(pe.n_core.max(1) as u64);
        let latency = vpu_cycles(per_core, pe) as f64 / self.chiplet.clock_hz;
        OpCost {
            latency,
            energy: elements as f64 * pe.pj_per_flop * 1e-12,
            flops: 0.0,
            min_bytes: 0.0,
            dram_bits: 0.0,
            compute_latency: latency,
            active_cores: pe.n_core.min(elements.max(1) as u32),
        }
    }
}

/// A TP group as placed on the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPlace<'a> {
    pub pes: &'a [MeshCoord],
    pub center: MeshCoord,
    pub comm: &'a CommParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    /// Seconds for the whole layer on the group.
    pub latency: f64,
    /// Offset of QKV completion from layer start.
    pub qkv_latency: f64,
    pub compute_latency: f64,
    pub comm_latency: f64,
    /// Joules across all PEs of the group.
    pub energy: f64,
    pub comm_energy: f64,
    /// Per-op (class, per-PE cost) for GEMMs, in issue order.
    pub gemms: Vec<(OpClass, GemmShape, OpCost)>,
}

/// Sequential cost of one layer on a TP group.
pub fn layer_cost(
    ops: &[LayerOp],
    coster: &PeCoster,
    group: &GroupPlace<'_>,
    derate: f64,
    cache: &OpCache,
) -> Result<LayerCost, FlowError> {
    let tp = group.pes.len() as f64;
    let mut lc = LayerCost {
        latency: 0.0,
        qkv_latency: 0.0,
        compute_latency: 0.0,
        comm_latency: 0.0,
        energy: 0.0,
        comm_energy: 0.0,
        gemms: Vec::new(),
    };
    for op in ops {
        match op.work {
            Work::Gemm(s) => {
                let c = coster.gemm(&s, derate, cache)?;
                lc.compute_latency += c.latency;
                lc.energy += c.energy * tp;
                lc.gemms.push((op.class, s, c));
            }
            Work::Vector(n) => {
                let c = coster.vector(n);
                lc.compute_latency += c.latency;
                lc.energy += c.energy * tp;
            }
            Work::AllReduce(bytes) => {
                let c = collective_cost(
                    CollectiveKind::AllReduce,
                    group.pes,
                    &group.center,
                    bytes,
                    group.comm,
                )
                .expect("TP groups are non-empty");
                lc.comm_latency += c.latency;
                lc.comm_energy += c.energy;
            }
        }
        if op.class == OpClass::Qkv {
            lc.qkv_latency = lc.compute_latency;
        }
    }
    lc.latency = lc.compute_latency + lc.comm_latency;
    lc.energy += lc.comm_energy;
    Ok(lc)
}
