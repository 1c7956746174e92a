//! Cycle and utilization model for the matrix unit (a systolic array split
//! into row-partitioned baseSAs) and the vector unit, plus a shared lookup
//! table of costs keyed by shape, tile and PE configuration.
//!
//! Array timing is output-stationary: every tile pass fills `rows` rows,
//! streams `t_k` operands and drains across `sa_cols` columns, costing
//! `rows + sa_cols + t_k - 1` cycles. A tile larger than the array is folded
//! into `ceil(t_m / rows) * ceil(t_n / sa_cols)` passes.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwspec::PeSpec;
use crate::util::config_hash;

/// Row counts at or below this are treated as matrix-vector work.
pub const GEMV_MAX_ROWS: u64 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompError {
    #[error("GEMM dimensions must be >= 1 (got {m}x{n}x{k}, batch {batch})")]
    EmptyShape { m: u64, n: u64, k: u64, batch: u64 },
    #[error("tile {t_m}x{t_n}x{t_k} does not fit shape {m}x{n}x{k}")]
    InfeasibleTiling {
        t_m: u64,
        t_n: u64,
        t_k: u64,
        m: u64,
        n: u64,
        k: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "GEMM")]
    Gemm,
    #[serde(rename = "GEMV")]
    Gemv,
}

/// `batch` independent `m x k` by `k x n` products sharing one kernel
/// launch (attention heads, requests).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    #[serde(default = "one")]
    pub batch: u64,
    pub kind: OpKind,
}

fn one() -> u64 {
    1
}

impl GemmShape {
    pub fn new(m: u64, n: u64, k: u64) -> Result<Self, CompError> {
        Self::batched(m, n, k, 1)
    }

    pub fn batched(m: u64, n: u64, k: u64, batch: u64) -> Result<Self, CompError> {
        if m == 0 || n == 0 || k == 0 || batch == 0 {
            return Err(CompError::EmptyShape { m, n, k, batch });
        }
        let kind = if m <= GEMV_MAX_ROWS {
            OpKind::Gemv
        } else {
            OpKind::Gemm
        };
        Ok(GemmShape {
            m,
            n,
            k,
            batch,
            kind,
        })
    }

    pub fn flops(&self) -> f64 {
        2.0 * self.batch as f64 * self.m as f64 * self.n as f64 * self.k as f64
    }

    /// Minimum bytes touched: each operand read once and the output written
    /// once.
    pub fn min_bytes(&self, dtype_bytes: u32) -> f64 {
        self.batch as f64
            * (self.m * self.k + self.k * self.n + self.m * self.n) as f64
            * dtype_bytes as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tile {
    pub t_m: u64,
    pub t_n: u64,
    pub t_k: u64,
}

impl Tile {
    pub fn whole(s: &GemmShape) -> Self {
        Tile {
            t_m: s.m,
            t_n: s.n,
            t_k: s.k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeCost {
    pub cycles: u64,
    /// Fraction of MAC slots doing useful work while operands stream.
    pub utilization: f64,
    /// Joules.
    pub energy: f64,
    /// baseSAs given to each instance.
    pub base_sas_per_instance: u32,
}

impl ComputeCost {
    /// Cycle-equivalents charged at full-array occupancy.
    pub fn effective_cycles(&self) -> f64 {
        self.cycles as f64 / self.utilization
    }
}

/// Row utilization of the array when `active_base_sas` baseSAs each hold an
/// independent block of `shape.m` rows.
pub fn sa_utilization(shape: &GemmShape, pe: &PeSpec, active_base_sas: u32) -> f64 {
    let active = active_base_sas.clamp(1, pe.n_base_sas().max(1)) as f64;
    let rows = shape.m.min(pe.base_sa_rows as u64) as f64;
    (active * rows / pe.sa_rows as f64).min(1.0)
}

/// Sum over the tiles of one dimension of `ceil(tile_extent / fold)`.
fn folds(dim: u64, tile: u64, fold: u64) -> u64 {
    let full = dim / tile;
    let rem = dim % tile;
    full * tile.div_ceil(fold) + if rem > 0 { rem.div_ceil(fold) } else { 0 }
}

pub fn gemm_cycles(
    shape: &GemmShape,
    tile: &Tile,
    pe: &PeSpec,
    pj_per_flop: f64,
) -> Result<ComputeCost, CompError> {
    let s = shape;
    if tile.t_m == 0
        || tile.t_n == 0
        || tile.t_k == 0
        || tile.t_m > s.m
        || tile.t_n > s.n
        || tile.t_k > s.k
    {
        return Err(CompError::InfeasibleTiling {
            t_m: tile.t_m,
            t_n: tile.t_n,
            t_k: tile.t_k,
            m: s.m,
            n: s.n,
            k: s.k,
        });
    }
    let rows = pe.sa_rows as u64;
    let cols = pe.sa_cols as u64;
    let base = pe.base_sa_rows as u64;
    let n_base = (rows / base).max(1);
    let k_tiles = s.k.div_ceil(tile.t_k);
    let fold_n = folds(s.n, tile.t_n, cols);

    // Instances run side by side on disjoint baseSA groups. Pick the group
    // size maximizing utilization (fewest streaming slots), then fewest cycles.
    let mut best: Option<(u64, u64, u32)> = None;
    for g in 1..=n_base {
        let conc = if s.batch == 1 {
            1
        } else {
            (n_base / g).min(s.batch)
        };
        if conc == 1 && g != n_base {
            continue;
        }
        let rows_eff = if conc == 1 { rows } else { g * base };
        let waves = s.batch.div_ceil(conc);
        let passes = folds(s.m, tile.t_m, rows_eff) * fold_n;
        let slots = waves * passes * s.k;
        let cycles = waves * passes * (k_tiles * (rows_eff + cols - 1) + s.k);
        let cand = (slots, cycles, g as u32);
        if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
            best = Some(cand);
        }
    }
    let (slots, cycles, g) = best.expect("at least the monolithic configuration exists");
    let macs = s.batch as f64 * s.m as f64 * s.n as f64 * s.k as f64;
    let utilization = (macs / (slots as f64 * rows as f64 * cols as f64)).min(1.0);
    Ok(ComputeCost {
        cycles,
        utilization,
        energy: s.flops() * pj_per_flop * 1e-12,
        base_sas_per_instance: g,
    })
}

/// Elementwise vector work: one element per lane per cycle.
pub fn vpu_cycles(elements: u64, pe: &PeSpec) -> u64 {
    elements.div_ceil(pe.vector_regs.max(1) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MappingKey {
    pub shape: GemmShape,
    pub tile: Tile,
    pub pe_hash: u64,
}

pub fn pe_hash(pe: &PeSpec) -> u64 {
    let h = config_hash(pe);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Thread-safe memo of [`gemm_cycles`]. Values are pure functions of the key,
/// so concurrent inserts of the same key are benign.
#[derive(Debug, Default)]
pub struct ComputeLut {
    map: RwLock<HashMap<MappingKey, ComputeCost>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Serialize, Deserialize)]
struct LutFile {
    config_hash: String,
    entries: Vec<(MappingKey, ComputeCost)>,
}

impl ComputeLut {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(
        &self,
        shape: &GemmShape,
        tile: &Tile,
        pe: &PeSpec,
    ) -> Result<ComputeCost, CompError> {
        let key = MappingKey {
            shape: *shape,
            tile: *tile,
            pe_hash: pe_hash(pe),
        };
        self.get_or_compute_keyed(key, pe)
    }

    /// As [`Self::get_or_compute`] with the PE hash precomputed by the caller.
    pub fn get_or_compute_keyed(
        &self,
        key: MappingKey,
        pe: &PeSpec,
    ) -> Result<ComputeCost, CompError> {
        if let Some(c) = self.map.read().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(*c);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let c = gemm_cycles(&key.shape, &key.tile, pe, pe.pj_per_flop)?;
        self.map.write().insert(key, c);
        Ok(c)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.map.write().clear();
    }

    /// Writes entries sorted by key so the file is byte-stable.
    pub fn save(&self, path: &Path, config_hash: &str) -> std::io::Result<()> {
        let mut entries: Vec<_> = self.map.read().iter().map(|(k, v)| (*k, *v)).collect();
        entries.sort_by_key(|(k, _)| (k.pe_hash, k.shape, k.tile));
        let f = LutFile {
            config_hash: config_hash.to_string(),
            entries,
        };
        std::fs::write(path, serde_json::to_vec(&f).map_err(std::io::Error::other)?)
    }

    /// Loads a cache file; a file written for another configuration is
    /// ignored and reported as `Ok(false)`.
    pub fn load(&self, path: &Path, config_hash: &str) -> std::io::Result<bool> {
        let f: LutFile =
            serde_json::from_slice(&std::fs::read(path)?).map_err(std::io::Error::other)?;
        if f.config_hash != config_hash {
            return Ok(false);
        }
        self.map.write().extend(f.entries);
        Ok(true)
    }
}
