//! Chiplet-level sweep: stratified samples of the parameter table, packaging
//! filter, and per-capacity Pareto fronts over (peak FLOPS, peak DRAM
//! bandwidth, peak power).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{near_pareto, pareto_indices, Dir, DseError};
use crate::hwspec::{default_pc, derive_chiplet_metrics, ChipletMetrics, ChipletSpec};
use crate::util::rng_for;

const GIB: u64 = 1 << 30;

/// Discrete value sets per chiplet parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamDomain {
    pub dram_io_bits: Vec<u32>,
    pub dram_capacity_gib: Vec<u32>,
    pub dram_layers: Vec<u32>,
    pub dram_banks: Vec<u32>,
    pub page_size_bytes: Vec<u32>,
    pub cores: Vec<u32>,
    pub pes: Vec<u32>,
    pub sram_banks: Vec<u32>,
    pub sram_kib: Vec<u32>,
    pub sa_rows: Vec<u32>,
    pub base_sa_rows: Vec<u32>,
    pub sa_cols: Vec<u32>,
    pub vector_regs: Vec<u32>,
    pub noc_flit_bits: Vec<u32>,
    pub nop_channels: Vec<u32>,
}

impl Default for ParamDomain {
    fn default() -> Self {
        ParamDomain {
            dram_io_bits: vec![32, 64, 128, 256, 512],
            dram_capacity_gib: vec![1, 2, 4, 8, 16, 32],
            dram_layers: vec![1, 2, 3, 4, 5],
            dram_banks: vec![8, 16, 32, 64, 128],
            page_size_bytes: vec![1024, 2048, 4096, 8192],
            cores: vec![1, 2, 4, 8, 10, 16, 24, 32],
            pes: vec![4, 6, 8, 9, 10, 12, 16, 18, 20, 24, 25],
            sram_banks: vec![4, 8, 16, 32],
            sram_kib: vec![64, 128, 256, 512, 1024, 2048],
            sa_rows: vec![16, 32, 64, 128],
            base_sa_rows: vec![1, 2, 4, 8, 16],
            sa_cols: vec![16, 32, 64, 128],
            vector_regs: vec![16, 32, 64, 128],
            noc_flit_bits: vec![128, 256, 512, 1024, 2048],
            nop_channels: vec![2, 4, 6, 8, 10, 12],
        }
    }
}

/// One concrete value per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamChoice {
    pub dram_io_bits: u32,
    pub dram_capacity_gib: u32,
    pub dram_layers: u32,
    pub dram_banks: u32,
    pub page_size_bytes: u32,
    pub cores: u32,
    pub pes: u32,
    pub sram_banks: u32,
    pub sram_kib: u32,
    pub sa_rows: u32,
    pub base_sa_rows: u32,
    pub sa_cols: u32,
    pub vector_regs: u32,
    pub noc_flit_bits: u32,
    /// Carried into system assembly; does not enter chiplet objectives.
    pub nop_channels: u32,
}

impl ParamDomain {
    fn dims(&self) -> [(&'static str, &Vec<u32>); 15] {
        [
            ("dram_io_bits", &self.dram_io_bits),
            ("dram_capacity_gib", &self.dram_capacity_gib),
            ("dram_layers", &self.dram_layers),
            ("dram_banks", &self.dram_banks),
            ("page_size_bytes", &self.page_size_bytes),
            ("cores", &self.cores),
            ("pes", &self.pes),
            ("sram_banks", &self.sram_banks),
            ("sram_kib", &self.sram_kib),
            ("sa_rows", &self.sa_rows),
            ("base_sa_rows", &self.base_sa_rows),
            ("sa_cols", &self.sa_cols),
            ("vector_regs", &self.vector_regs),
            ("noc_flit_bits", &self.noc_flit_bits),
            ("nop_channels", &self.nop_channels),
        ]
    }

    /// Number of distinct parameter combinations.
    pub fn size(&self) -> u128 {
        self.dims().iter().map(|(_, v)| v.len() as u128).product()
    }

    fn choice(&self, idx: &[usize; 15]) -> ParamChoice {
        let d = self.dims();
        let v = |i: usize| d[i].1[idx[i]];
        ParamChoice {
            dram_io_bits: v(0),
            dram_capacity_gib: v(1),
            dram_layers: v(2),
            dram_banks: v(3),
            page_size_bytes: v(4),
            cores: v(5),
            pes: v(6),
            sram_banks: v(7),
            sram_kib: v(8),
            sa_rows: v(9),
            base_sa_rows: v(10),
            sa_cols: v(11),
            vector_regs: v(12),
            noc_flit_bits: v(13),
            nop_channels: v(14),
        }
    }

    /// Every combination in odometer order (last parameter fastest).
    fn enumerate(&self) -> Vec<ParamChoice> {
        let lens: Vec<usize> = self.dims().iter().map(|(_, v)| v.len()).collect();
        let mut idx = [0usize; 15];
        let mut out = Vec::new();
        'outer: loop {
            out.push(self.choice(&idx));
            for d in (0..15).rev() {
                idx[d] += 1;
                if idx[d] < lens[d] {
                    continue 'outer;
                }
                idx[d] = 0;
            }
            return out;
        }
    }

    /// Latin-hypercube style: each parameter's range is cut into `n` strata
    /// visited once each in a seeded random order.
    fn stratified(&self, n: usize, seed: u64) -> Vec<ParamChoice> {
        let mut rng = rng_for(seed, "dse/chiplet/sample");
        let dims = self.dims();
        let mut columns: Vec<Vec<usize>> = Vec::with_capacity(15);
        for (_, vals) in dims.iter() {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            columns.push(
                perm.into_iter()
                    .map(|s| {
                        let u: f64 = rng.random();
                        (((s as f64 + u) / n as f64) * vals.len() as f64)
                            .floor()
                            .min(vals.len() as f64 - 1.0) as usize
                    })
                    .collect(),
            );
        }
        (0..n)
            .map(|i| {
                let mut idx = [0usize; 15];
                for (d, c) in columns.iter().enumerate() {
                    idx[d] = c[i];
                }
                self.choice(&idx)
            })
            .collect()
    }
}

fn pe_grid(n: u32) -> (u32, u32) {
    let rows = (1..=n)
        .filter(|r| n.is_multiple_of(*r) && r * r <= n)
        .max()
        .unwrap_or(1);
    (rows, n / rows)
}

impl ParamChoice {
    /// Chiplet spec with this choice applied to `template`. DRAM channels
    /// are split evenly over PEs; capacity is rounded down to whole banks.
    pub fn to_spec(&self, template: &ChipletSpec) -> ChipletSpec {
        let mut c = template.clone();
        c.pe_grid = pe_grid(self.pes);
        c.dram.n_io_bits = self.dram_io_bits;
        c.dram.n_layer = self.dram_layers;
        c.dram.n_bank = self.dram_banks;
        c.dram.page_size_bytes = self.page_size_bytes as u64;
        let banks = self.dram_layers as u64 * self.dram_banks as u64;
        c.dram.bank_capacity_bytes = self.dram_capacity_gib as u64 * GIB / banks;
        c.dram.capacity_bytes = c.dram.bank_capacity_bytes * banks;
        c.pe.n_core = self.cores;
        c.pe.sram_banks = self.sram_banks;
        c.pe.sram_capacity_bytes = self.sram_kib as u64 * 1024;
        c.pe.sa_rows = self.sa_rows;
        c.pe.base_sa_rows = self.base_sa_rows;
        c.pe.sa_cols = self.sa_cols;
        c.pe.vector_regs = self.vector_regs;
        c.pe.noc_flit_bits = self.noc_flit_bits;
        c.pe.n_mc = (banks / self.pes.max(1) as u64).max(1) as u32;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChipletDseConfig {
    pub budget_samples: usize,
    /// Relative slack defining near-Pareto membership.
    pub eps: f64,
    pub seed: u64,
    /// Technology, clocks, timing and budgets shared by every candidate.
    pub template: ChipletSpec,
}

impl Default for ChipletDseConfig {
    fn default() -> Self {
        ChipletDseConfig {
            budget_samples: 200,
            eps: 0.05,
            seed: 0,
            template: default_pc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipletPoint {
    pub id: usize,
    pub params: ParamChoice,
    pub spec: ChipletSpec,
    /// Present for feasible points only.
    pub metrics: Option<ChipletMetrics>,
    pub infeasible: Option<String>,
    pub pareto: bool,
    pub near_pareto: bool,
}

impl ChipletPoint {
    /// (peak FLOP/s up, peak bytes/s up, peak watts down).
    pub fn objectives(&self) -> Option<Vec<f64>> {
        self.metrics
            .as_ref()
            .map(|m| vec![m.peak_flops, m.peak_bw, m.peak_power])
    }
}

pub const CHIPLET_DIRS: [Dir; 3] = [Dir::Max, Dir::Max, Dir::Min];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipletDseResult {
    /// Deduplicated samples in draw order.
    pub points: Vec<ChipletPoint>,
    /// Capacity (GiB) to Pareto point ids.
    pub fronts: BTreeMap<u32, Vec<usize>>,
    /// Capacity (GiB) to near-Pareto point ids (a superset of the front).
    pub near: BTreeMap<u32, Vec<usize>>,
}

/// Samples `budget_samples` configurations (all of them if the domain is
/// that small), drops those violating area, power or consistency limits,
/// and extracts fronts per DRAM capacity.
pub fn chiplet_dse(
    domain: &ParamDomain,
    cfg: &ChipletDseConfig,
) -> Result<ChipletDseResult, DseError> {
    if let Some((name, _)) = domain.dims().iter().find(|(_, v)| v.is_empty()) {
        return Err(DseError::EmptyDomain(name.to_string()));
    }
    if cfg.budget_samples == 0 {
        return Err(DseError::EmptyDomain("budget_samples is 0".into()));
    }
    let choices = if domain.size() <= cfg.budget_samples as u128 {
        domain.enumerate()
    } else {
        let mut seen = BTreeSet::new();
        domain
            .stratified(cfg.budget_samples, cfg.seed)
            .into_iter()
            .filter(|c| seen.insert(*c))
            .collect()
    };
    let mut points: Vec<ChipletPoint> = choices
        .into_iter()
        .enumerate()
        .map(|(id, params)| {
            let spec = params.to_spec(&cfg.template);
            let check = if params.base_sa_rows > params.sa_rows {
                Err("baseSA taller than the array".to_string())
            } else {
                spec.validate("candidate").map_err(|e| e.to_string())
            };
            let (metrics, infeasible) = match check {
                Ok(()) => (Some(derive_chiplet_metrics(&spec)), None),
                Err(e) => (None, Some(e)),
            };
            ChipletPoint {
                id,
                params,
                spec,
                metrics,
                infeasible,
                pareto: false,
                near_pareto: false,
            }
        })
        .collect();
    let mut by_cap: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for p in points.iter().filter(|p| p.metrics.is_some()) {
        by_cap
            .entry(p.params.dram_capacity_gib)
            .or_default()
            .push(p.id);
    }
    let mut fronts = BTreeMap::new();
    let mut near = BTreeMap::new();
    for (cap, ids) in by_cap {
        let objs: Vec<Vec<f64>> = ids
            .iter()
            .map(|&i| points[i].objectives().expect("feasible"))
            .collect();
        let f = pareto_indices(&objs, &CHIPLET_DIRS);
        let n = near_pareto(&objs, &CHIPLET_DIRS, &f, cfg.eps);
        let f: Vec<usize> = f.into_iter().map(|k| ids[k]).collect();
        let n: Vec<usize> = n.into_iter().map(|k| ids[k]).collect();
        for &i in &f {
            points[i].pareto = true;
        }
        for &i in &n {
            points[i].near_pareto = true;
        }
        fronts.insert(cap, f);
        near.insert(cap, n);
    }
    Ok(ChipletDseResult {
        points,
        fronts,
        near,
    })
}

#[derive(Serialize)]
struct FrontRow {
    capacity_gib: u32,
    id: usize,
    pareto: bool,
    peak_tflops: f64,
    peak_bw_tbs: f64,
    peak_power_w: f64,
    area_mm2: f64,
    dram_io_bits: u32,
    dram_layers: u32,
    dram_banks: u32,
    page_size_bytes: u32,
    cores: u32,
    pes: u32,
    sram_banks: u32,
    sram_kib: u32,
    sa_rows: u32,
    base_sa_rows: u32,
    sa_cols: u32,
    vector_regs: u32,
    noc_flit_bits: u32,
    nop_channels: u32,
}

impl ChipletDseResult {
    /// Near-Pareto points (front members flagged) per capacity.
    pub fn write_pareto_csv(&self, path: &Path) -> Result<(), DseError> {
        let io = |e: csv::Error| DseError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for (cap, ids) in &self.near {
            for &i in ids {
                let p = &self.points[i];
                let m = p.metrics.as_ref().expect("front points are feasible");
                let c = &p.params;
                w.serialize(FrontRow {
                    capacity_gib: *cap,
                    id: i,
                    pareto: p.pareto,
                    peak_tflops: m.peak_flops / 1e12,
                    peak_bw_tbs: m.peak_bw / 1e12,
                    peak_power_w: m.peak_power,
                    area_mm2: p.spec.area_mm2(),
                    dram_io_bits: c.dram_io_bits,
                    dram_layers: c.dram_layers,
                    dram_banks: c.dram_banks,
                    page_size_bytes: c.page_size_bytes,
                    cores: c.cores,
                    pes: c.pes,
                    sram_banks: c.sram_banks,
                    sram_kib: c.sram_kib,
                    sa_rows: c.sa_rows,
                    base_sa_rows: c.base_sa_rows,
                    sa_cols: c.sa_cols,
                    vector_regs: c.vector_regs,
                    noc_flit_bits: c.noc_flit_bits,
                    nop_channels: c.nop_channels,
                })
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| DseError::Io(e.to_string()))
    }

    /// Front members as chiplet specs, best peak FLOPS first (prefill
    /// candidates) or best bandwidth first (decode candidates).
    pub fn candidates(&self, by_bandwidth: bool, limit: usize) -> Vec<ChipletSpec> {
        let mut ids: Vec<usize> = self.fronts.values().flatten().copied().collect();
        let key = |i: &usize| {
            let m = self.points[*i].metrics.as_ref().expect("feasible");
            if by_bandwidth {
                m.peak_bw
            } else {
                m.peak_flops
            }
        };
        ids.sort_by(|a, b| key(b).total_cmp(&key(a)).then(a.cmp(b)));
        ids.into_iter()
            .take(limit)
            .map(|i| self.points[i].spec.clone())
            .collect()
    }
}
