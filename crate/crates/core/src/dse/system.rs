//! System-level search: PC/DC chiplet types, counts, package layout and
//! per-phase (tp, pp) mappings, each candidate simulated to a thermal fixed
//! point and checked against service limits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DseError, SloSpec};
use crate::hwspec::{
    default_dc, default_pc, default_system, validate_system, ChipletSpec, ModelSpec, Placement,
    Role, SystemSpec,
};
use crate::parmap::{build_pd_plan, PlanConfig};
use crate::servesim::{gen_trace, SimConfig, SimError, Trace, TraceConfig, TraceSource};
use crate::thermal::{thermal_fixed_point, FixedPointConfig, ThermalError};
use crate::util::rng_for;
use crate::workload::OpCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// All PC chiplets first in row-major order, then all DC chiplets.
    PcFirst,
    /// PC and DC alternate while both remain.
    Interleaved,
}

/// Limits a candidate can violate, ordered by how early they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Packaging,
    Power,
    Mapping,
    KvCapacity,
    Thermal,
    Ttft,
    Tbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    /// Index into [`SystemSpace::pc_types`].
    pub pc: usize,
    /// Index into [`SystemSpace::dc_types`].
    pub dc: usize,
    pub n_pc: u32,
    pub n_dc: u32,
    pub layout: Layout,
    pub pre: (usize, usize),
    pub dec: (usize, usize),
}

/// Cartesian product of system choices. Candidate ids are mixed-radix
/// indices with the mapping varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpace {
    pub pc_types: Vec<ChipletSpec>,
    pub dc_types: Vec<ChipletSpec>,
    pub n_pc: Vec<u32>,
    pub n_dc: Vec<u32>,
    pub layouts: Vec<Layout>,
    /// (prefill (tp, pp), decode (tp, pp)) pairs.
    pub mappings: Vec<((usize, usize), (usize, usize))>,
    pub max_chiplets: u32,
    /// Interconnect, cooling and rack parameters shared by every candidate.
    pub base: SystemSpec,
}

impl SystemSpace {
    fn radices(&self) -> [usize; 6] {
        [
            self.pc_types.len(),
            self.dc_types.len(),
            self.n_pc.len(),
            self.n_dc.len(),
            self.layouts.len(),
            self.mappings.len(),
        ]
    }

    pub fn size(&self) -> usize {
        self.radices().iter().product()
    }

    pub fn check(&self) -> Result<(), DseError> {
        let names = [
            "pc_types", "dc_types", "n_pc", "n_dc", "layouts", "mappings",
        ];
        if let Some(k) = self.radices().iter().position(|&r| r == 0) {
            return Err(DseError::InvalidSpace(format!("{} is empty", names[k])));
        }
        if self.n_pc.contains(&0) || self.n_dc.contains(&0) {
            return Err(DseError::InvalidSpace(
                "chiplet counts must be at least 1".into(),
            ));
        }
        if self
            .mappings
            .iter()
            .any(|(p, d)| p.0 == 0 || p.1 == 0 || d.0 == 0 || d.1 == 0)
        {
            return Err(DseError::InvalidSpace(
                "tp and pp must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn candidate(&self, id: usize) -> Candidate {
        let r = self.radices();
        let mut digits = [0usize; 6];
        let mut rest = id;
        for k in (0..6).rev() {
            digits[k] = rest % r[k];
            rest /= r[k];
        }
        let (pre, dec) = self.mappings[digits[5]];
        Candidate {
            id,
            pc: digits[0],
            dc: digits[1],
            n_pc: self.n_pc[digits[2]],
            n_dc: self.n_dc[digits[3]],
            layout: self.layouts[digits[4]],
            pre,
            dec,
        }
    }

    fn digits(&self, c: &Candidate) -> [usize; 6] {
        let pos = |v: &[u32], x: u32| {
            v.iter()
                .position(|&y| y == x)
                .expect("value from this space")
        };
        [
            c.pc,
            c.dc,
            pos(&self.n_pc, c.n_pc),
            pos(&self.n_dc, c.n_dc),
            self.layouts
                .iter()
                .position(|&l| l == c.layout)
                .expect("value from this space"),
            self.mappings
                .iter()
                .position(|&m| m == (c.pre, c.dec))
                .expect("value from this space"),
        ]
    }

    fn id_of(&self, digits: &[usize; 6]) -> usize {
        self.radices()
            .iter()
            .zip(digits)
            .fold(0, |acc, (r, d)| acc * r + d)
    }

    /// Package for `c` on the smallest square-ish mesh that fits it.
    pub fn build_system(&self, c: &Candidate) -> SystemSpec {
        let mut spec = self.base.clone();
        let mut pc = self.pc_types[c.pc].clone();
        pc.role = Role::Prefill;
        let mut dc = self.dc_types[c.dc].clone();
        dc.role = Role::Decode;
        spec.chiplet_types = BTreeMap::from([("PC".to_string(), pc), ("DC".to_string(), dc)]);
        let n = c.n_pc + c.n_dc;
        let width = (1..=n).find(|w| w * w >= n).unwrap_or(1);
        let kinds: Vec<&str> = match c.layout {
            Layout::PcFirst => std::iter::repeat_n("PC", c.n_pc as usize)
                .chain(std::iter::repeat_n("DC", c.n_dc as usize))
                .collect(),
            Layout::Interleaved => {
                let (mut p, mut d) = (c.n_pc, c.n_dc);
                let mut out = Vec::new();
                while p + d > 0 {
                    if p > 0 && (out.last() != Some(&"PC") || d == 0) {
                        out.push("PC");
                        p -= 1;
                    } else {
                        out.push("DC");
                        d -= 1;
                    }
                }
                out
            }
        };
        let mut counts = BTreeMap::new();
        spec.placement = kinds
            .iter()
            .enumerate()
            .map(|(i, kind)| {
                let k = counts.entry(*kind).or_insert(0);
                *k += 1;
                Placement {
                    name: format!("{kind}{k}"),
                    kind: kind.to_string(),
                    x: i as u32 % width,
                    y: i as u32 / width,
                }
            })
            .collect();
        spec
    }

    /// 2 PC types x 2 DC types x 2 mappings on one PC and one DC chiplet,
    /// small enough to evaluate exhaustively.
    pub fn toy() -> SystemSpace {
        let mut pc = default_pc();
        pc.pe_grid = (2, 2);
        let mut pc_fast = pc.clone();
        pc_fast.clock_hz *= 1.25;
        let mut dc = default_dc();
        dc.pe_grid = (2, 2);
        let mut dc_slow = dc.clone();
        dc_slow.clock_hz *= 0.75;
        SystemSpace {
            pc_types: vec![pc, pc_fast],
            dc_types: vec![dc, dc_slow],
            n_pc: vec![1],
            n_dc: vec![1],
            layouts: vec![Layout::PcFirst],
            mappings: vec![((2, 1), (2, 1)), ((4, 1), (1, 2))],
            max_chiplets: 9,
            base: default_system(),
        }
    }

    /// Counts, layouts and mappings around the default 3x3 package, for the
    /// given chiplet types.
    pub fn around_default(pc_types: Vec<ChipletSpec>, dc_types: Vec<ChipletSpec>) -> SystemSpace {
        let tp = [1usize, 2, 4, 8];
        let pp = [1usize, 2, 4];
        let mut mappings = Vec::new();
        for &pt in &tp {
            for &dt in &tp {
                for &dp in &pp {
                    mappings.push(((pt, 1), (dt, dp)));
                }
            }
        }
        SystemSpace {
            pc_types,
            dc_types,
            n_pc: (1..=6).collect(),
            n_dc: (1..=6).collect(),
            layouts: vec![Layout::PcFirst, Layout::Interleaved],
            mappings,
            max_chiplets: 9,
            base: default_system(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemDseConfig {
    pub slo: SloSpec,
    /// Maximum number of candidates evaluated.
    pub budget: usize,
    pub seed: u64,
    /// Rank by throughput per nameplate watt instead of simulated energy.
    pub nameplate: bool,
    /// Candidates proposed per search round; fixed so results do not depend
    /// on the worker count.
    pub batch: usize,
    /// Initial annealing temperature, relative to the incumbent score.
    pub anneal_t0: f64,
    pub plan: PlanConfig,
    pub sim: SimConfig,
    pub fixed_point: FixedPointConfig,
}

impl Default for SystemDseConfig {
    fn default() -> Self {
        SystemDseConfig {
            slo: SloSpec::default(),
            budget: 64,
            seed: 0,
            nameplate: false,
            batch: 8,
            anneal_t0: 0.1,
            plan: PlanConfig::default(),
            sim: SimConfig::default(),
            fixed_point: FixedPointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub candidate: Candidate,
    /// Ranking score; present only when every constraint holds.
    pub objective: Option<f64>,
    pub tokens_per_joule: f64,
    pub tpt: f64,
    pub nameplate_w: f64,
    pub mean_ttft: f64,
    pub mean_tbt: f64,
    pub t_max_c: f64,
    pub kv_capacity_bytes: f64,
    /// Relative amount by which each violated constraint is exceeded;
    /// infinite for structural failures.
    pub violations: BTreeMap<Constraint, f64>,
    pub note: Option<String>,
}

impl CandidateEval {
    fn new(candidate: Candidate) -> Self {
        CandidateEval {
            candidate,
            objective: None,
            tokens_per_joule: 0.0,
            tpt: 0.0,
            nameplate_w: 0.0,
            mean_ttft: f64::NAN,
            mean_tbt: f64::NAN,
            t_max_c: f64::NAN,
            kv_capacity_bytes: 0.0,
            violations: BTreeMap::new(),
            note: None,
        }
    }

    fn fail(mut self, c: Constraint, note: String) -> Self {
        self.violations.insert(c, f64::INFINITY);
        self.note = Some(note);
        self
    }

    pub fn feasible(&self) -> bool {
        self.objective.is_some()
    }

    /// The most violated constraint.
    pub fn binding(&self) -> Option<Constraint> {
        self.violations
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| *c)
    }

    /// Feasible designs score their objective; infeasible ones score below
    /// every feasible design, less so the smaller the violation.
    fn search_score(&self) -> f64 {
        match self.objective {
            Some(o) => o,
            None => {
                let v = self.violations.values().copied().fold(0.0, f64::max);
                -1.0 - v.min(1e6)
            }
        }
    }
}

fn over(value: f64, limit: f64) -> Option<f64> {
    (value > limit).then(|| (value - limit) / limit.abs().max(f64::MIN_POSITIVE))
}

/// Builds, maps, simulates and checks one candidate. Never fails: problems
/// are recorded as violations.
pub fn evaluate_candidate(
    space: &SystemSpace,
    c: &Candidate,
    model: &ModelSpec,
    trace: &Trace,
    cfg: &SystemDseConfig,
) -> CandidateEval {
    let mut ev = CandidateEval::new(*c);
    if c.n_pc + c.n_dc > space.max_chiplets {
        let note = format!(
            "{} chiplets exceed the package limit of {}",
            c.n_pc + c.n_dc,
            space.max_chiplets
        );
        return ev.fail(Constraint::Packaging, note);
    }
    let mut spec = space.build_system(c);
    spec.cooling.t_limit_c = cfg.slo.t_limit_c;
    let sys = match validate_system(&spec) {
        Ok(s) => s,
        Err(e) => return ev.fail(Constraint::Packaging, e.to_string()),
    };
    ev.nameplate_w = sys.total_peak_power;
    if let Some(v) = over(ev.nameplate_w, cfg.slo.p_rack_w) {
        ev.violations.insert(Constraint::Power, v);
    }
    let cache = OpCache::new();
    let plan = match build_pd_plan(&sys, model, c.pre, c.dec, &cfg.plan, &cache) {
        Ok(p) => p,
        Err(e) => return ev.fail(Constraint::Mapping, e.to_string()),
    };
    let decode_dram: f64 = sys
        .chiplets
        .iter()
        .filter(|ch| ch.spec.role == Role::Decode)
        .map(|ch| ch.spec.dram.capacity_bytes as f64)
        .sum();
    ev.kv_capacity_bytes = decode_dram - plan.decode.pipelines.len() as f64 * model.weight_bytes();
    if ev.kv_capacity_bytes < cfg.slo.kv_budget_bytes {
        let v = (cfg.slo.kv_budget_bytes - ev.kv_capacity_bytes) / cfg.slo.kv_budget_bytes;
        ev.violations.insert(Constraint::KvCapacity, v);
    }
    let fp = match thermal_fixed_point(
        &sys,
        model,
        &plan,
        trace,
        &cfg.sim,
        &cfg.fixed_point,
        &cache,
    ) {
        Ok(fp) => fp,
        Err(ThermalError::Sim(e @ SimError::KvOverflow { .. })) => {
            return ev.fail(Constraint::KvCapacity, e.to_string())
        }
        Err(e @ ThermalError::NonConvergence { .. }) => {
            return ev.fail(Constraint::Thermal, e.to_string())
        }
        Err(e) => return ev.fail(Constraint::Mapping, e.to_string()),
    };
    ev.tokens_per_joule = fp.metrics.tokens_per_joule;
    ev.tpt = fp.metrics.tpt;
    ev.mean_ttft = fp.metrics.mean_ttft;
    ev.mean_tbt = fp.metrics.mean_tbt;
    ev.t_max_c = fp.state.max_c();
    for (k, v) in [
        (Constraint::Thermal, over(ev.t_max_c, cfg.slo.t_limit_c)),
        (Constraint::Ttft, over(ev.mean_ttft, cfg.slo.ttft_max)),
        (Constraint::Tbt, over(ev.mean_tbt, cfg.slo.tbt_max)),
    ] {
        if let Some(v) = v {
            ev.violations.insert(k, v);
        }
    }
    if ev.violations.is_empty() {
        ev.objective = Some(if cfg.nameplate {
            ev.tpt / ev.nameplate_w
        } else {
            ev.tokens_per_joule
        });
    }
    ev
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDseResult {
    pub space_size: usize,
    pub exhaustive: bool,
    /// Every evaluated candidate, by id.
    pub evals: Vec<CandidateEval>,
    /// Feasible candidate ids, best objective first, ties by id.
    pub ranking: Vec<usize>,
}

impl SystemDseResult {
    pub fn eval(&self, id: usize) -> Option<&CandidateEval> {
        self.evals
            .binary_search_by_key(&id, |e| e.candidate.id)
            .ok()
            .map(|i| &self.evals[i])
    }

    pub fn best(&self) -> Option<&CandidateEval> {
        self.ranking.first().and_then(|&id| self.eval(id))
    }

    pub fn write_ranking_csv(&self, path: &Path) -> Result<(), DseError> {
        #[derive(Serialize)]
        struct Row {
            rank: usize,
            id: usize,
            pc_type: usize,
            dc_type: usize,
            n_pc: u32,
            n_dc: u32,
            layout: Layout,
            prefill_tp: usize,
            prefill_pp: usize,
            decode_tp: usize,
            decode_pp: usize,
            objective: f64,
            tokens_per_joule: f64,
            tpt: f64,
            nameplate_w: f64,
            mean_ttft_s: f64,
            mean_tbt_s: f64,
            t_max_c: f64,
        }
        let io = |e: csv::Error| DseError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for (rank, &id) in self.ranking.iter().enumerate() {
            let e = self.eval(id).expect("ranked ids were evaluated");
            let c = &e.candidate;
            w.serialize(Row {
                rank: rank + 1,
                id,
                pc_type: c.pc,
                dc_type: c.dc,
                n_pc: c.n_pc,
                n_dc: c.n_dc,
                layout: c.layout,
                prefill_tp: c.pre.0,
                prefill_pp: c.pre.1,
                decode_tp: c.dec.0,
                decode_pp: c.dec.1,
                objective: e.objective.expect("ranked ids are feasible"),
                tokens_per_joule: e.tokens_per_joule,
                tpt: e.tpt,
                nameplate_w: e.nameplate_w,
                mean_ttft_s: e.mean_ttft,
                mean_tbt_s: e.mean_tbt,
                t_max_c: e.t_max_c,
            })
            .map_err(io)?;
        }
        w.flush().map_err(|e| DseError::Io(e.to_string()))
    }
}

/// Ranking of feasible evaluations, best objective first, ties by id.
pub(crate) fn rank(evals: &[CandidateEval]) -> Vec<usize> {
    let mut ranked: Vec<&CandidateEval> = evals.iter().filter(|e| e.feasible()).collect();
    ranked.sort_by(|a, b| {
        b.objective
            .unwrap()
            .total_cmp(&a.objective.unwrap())
            .then(a.candidate.id.cmp(&b.candidate.id))
    });
    ranked.iter().map(|e| e.candidate.id).collect()
}

/// Evaluates exactly `min(budget, |space|)` candidates: all of them when
/// the budget allows, otherwise PD-balanced seeds followed by annealed
/// single-parameter moves in fixed-size batches. Batches are evaluated in
/// parallel on the current rayon pool; results do not depend on its size.
pub fn system_dse(
    space: &SystemSpace,
    model: &ModelSpec,
    trace: &Trace,
    cfg: &SystemDseConfig,
) -> Result<SystemDseResult, DseError> {
    space.check()?;
    if cfg.budget == 0 || cfg.batch == 0 {
        return Err(DseError::InvalidSpace(
            "budget and batch must be positive".into(),
        ));
    }
    let size = space.size();
    let eval_all = |ids: &[usize]| -> Vec<CandidateEval> {
        ids.par_iter()
            .map(|&id| evaluate_candidate(space, &space.candidate(id), model, trace, cfg))
            .collect()
    };
    let mut done: BTreeMap<usize, CandidateEval> = BTreeMap::new();
    let exhaustive = size <= cfg.budget;
    if exhaustive {
        let ids: Vec<usize> = (0..size).collect();
        done.extend(ids.iter().copied().zip(eval_all(&ids)));
    } else {
        let mut rng = rng_for(cfg.seed, "dse/system");
        let (mean_in, mean_out) = trace.mean_lengths();
        let pc_share = mean_in / (mean_in + mean_out).max(f64::MIN_POSITIVE);
        let mut seeds: Vec<usize> = (0..size)
            .filter(|&id| {
                let c = space.candidate(id);
                let n = (c.n_pc + c.n_dc) as f64;
                (c.n_pc as f64 - pc_share * n).abs() <= 1.0 && c.n_pc + c.n_dc <= space.max_chiplets
            })
            .collect();
        seeds.shuffle(&mut rng);
        seeds.truncate(cfg.batch.min(cfg.budget));
        while seeds.len() < cfg.batch.min(cfg.budget) {
            let id = rng.random_range(0..size);
            if !seeds.contains(&id) {
                seeds.push(id);
            }
        }
        seeds.sort_unstable();
        done.extend(seeds.iter().copied().zip(eval_all(&seeds)));
        let mut current = done
            .values()
            .max_by(|a, b| {
                a.search_score()
                    .total_cmp(&b.search_score())
                    .then(b.candidate.id.cmp(&a.candidate.id))
            })
            .expect("seeded")
            .candidate
            .id;
        let radices = space.radices();
        while done.len() < cfg.budget {
            let want = cfg.batch.min(cfg.budget - done.len());
            let mut batch = BTreeSet::new();
            let base = space.digits(&space.candidate(current));
            let mut tries = 0;
            while batch.len() < want {
                tries += 1;
                let id = if tries <= 20 * want {
                    let mut d = base;
                    let k = rng.random_range(0..6);
                    if radices[k] == 1 {
                        continue;
                    }
                    d[k] = (d[k] + rng.random_range(1..radices[k])) % radices[k];
                    space.id_of(&d)
                } else {
                    rng.random_range(0..size)
                };
                if !done.contains_key(&id) {
                    batch.insert(id);
                }
            }
            let ids: Vec<usize> = batch.into_iter().collect();
            let evals = eval_all(&ids);
            let temp = cfg.anneal_t0 * (1.0 - done.len() as f64 / cfg.budget as f64);
            done.extend(ids.iter().copied().zip(evals));
            for id in &ids {
                let e = &done[id];
                let cur = done[&current].search_score();
                let delta = e.search_score() - cur;
                let scale = cur.abs().max(f64::MIN_POSITIVE) * temp;
                let u: f64 = rng.random();
                if delta > 0.0 || (scale > 0.0 && u < (delta / scale).exp()) {
                    current = *id;
                }
            }
        }
    }
    let evals: Vec<CandidateEval> = done.into_values().collect();
    let ranking = rank(&evals);
    if ranking.is_empty() {
        let mut histogram = BTreeMap::new();
        for e in &evals {
            if let Some(c) = e.binding() {
                *histogram.entry(c).or_insert(0) += 1;
            }
        }
        return Err(DseError::NoFeasibleDesign {
            evaluated: evals.len(),
            histogram,
        });
    }
    Ok(SystemDseResult {
        space_size: size,
        exhaustive,
        evals,
        ranking,
    })
}

/// Short synthetic trace for quick system evaluations.
pub fn quick_trace(seed: u64) -> Trace {
    gen_trace(
        TraceSource::Code,
        50.0,
        12,
        seed,
        &TraceConfig {
            max_len: 256,
            ..Default::default()
        },
    )
    .expect("valid synthetic trace")
}
