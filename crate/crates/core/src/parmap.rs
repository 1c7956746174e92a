//! Parallel mapping: tensor-parallel grouping of PEs, pipeline-stage
//! placement onto groups, and prefill/decode plans over disjoint PE pools.
//!
//! Grouping minimizes `J = sum_k D_k + w_inter * sum_k dist(c_k, c_{k+1})`
//! where `D_k` is the bounding-box span of group `k` in global PE
//! coordinates, `c_k` its box midpoint, and the chain order of groups is
//! itself optimized.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commmodel::{center_member, transfer_cost, CommParams, MeshCoord};
use crate::d3flow::FlowError;
use crate::hwspec::{ModelSpec, Role, ValidatedSystem};
use crate::util::rng_for;
use crate::workload::{
    decode_layer_ops, layer_cost, prefill_layer_ops, GroupPlace, OpCache, PeCoster, Phase,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("cannot form groups of {tp} from {pes} PEs")]
    Infeasible { pes: usize, tp: usize },
    #[error("{stages} stages but only {groups} groups available")]
    TooManyStages { stages: usize, groups: usize },
    #[error("{phase} group {group} needs {need_bytes:.3e} B but holds {have_bytes:.3e} B")]
    CapacityExceeded {
        phase: String,
        group: usize,
        need_bytes: f64,
        have_bytes: f64,
    },
    #[error("no PEs available for {0}")]
    NoPool(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpGroup {
    pub pes: Vec<MeshCoord>,
    /// Bounding-box midpoint in global PE coordinates (half-integer).
    pub center: (f64, f64),
    /// Member closest to `center`; root of the group's collectives.
    pub center_pe: MeshCoord,
    /// Bounding-box span `(max_x - min_x) + (max_y - min_y)`.
    pub span: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpGrouping {
    pub tp: usize,
    /// In optimized chain order.
    pub groups: Vec<TpGroup>,
    pub objective: f64,
    /// False when the search hit its node budget before proving optimality.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupingConfig {
    pub w_inter: f64,
    pub node_budget: u64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            w_inter: 0.1,
            node_budget: 2_000_000,
        }
    }
}

type Pt = (i64, i64);

#[derive(Clone, Copy)]
struct BBox {
    x0: i64,
    x1: i64,
    y0: i64,
    y1: i64,
    size: usize,
}

impl BBox {
    fn new(p: Pt) -> Self {
        BBox {
            x0: p.0,
            x1: p.0,
            y0: p.1,
            y1: p.1,
            size: 1,
        }
    }

    fn with(&self, p: Pt) -> Self {
        BBox {
            x0: self.x0.min(p.0),
            x1: self.x1.max(p.0),
            y0: self.y0.min(p.1),
            y1: self.y1.max(p.1),
            size: self.size + 1,
        }
    }

    fn span(&self) -> i64 {
        (self.x1 - self.x0) + (self.y1 - self.y0)
    }

    fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }
}

/// Smallest span any `n` distinct grid points can have.
fn min_span(n: usize) -> i64 {
    (1..=n)
        .map(|w| (w - 1 + n.div_ceil(w) - 1) as i64)
        .min()
        .unwrap_or(0)
}

fn l1(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Shortest open path through all centers, with the visiting order.
/// Exact (Held-Karp) up to 12 centers, nearest-neighbour beyond.
pub fn best_chain(centers: &[(f64, f64)]) -> (f64, Vec<usize>) {
    let k = centers.len();
    if k <= 1 {
        return (0.0, (0..k).collect());
    }
    if k > 12 {
        let mut best = (f64::INFINITY, Vec::new());
        for start in 0..k {
            let mut seen = vec![false; k];
            let mut order = vec![start];
            seen[start] = true;
            let mut len = 0.0;
            for _ in 1..k {
                let last = *order.last().unwrap();
                let (j, d) = (0..k)
                    .filter(|&j| !seen[j])
                    .map(|j| (j, l1(centers[last], centers[j])))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .unwrap();
                seen[j] = true;
                order.push(j);
                len += d;
            }
            if len < best.0 {
                best = (len, order);
            }
        }
        return best;
    }
    let full = 1usize << k;
    let mut dp = vec![f64::INFINITY; full * k];
    let mut parent = vec![usize::MAX; full * k];
    for i in 0..k {
        dp[(1 << i) * k + i] = 0.0;
    }
    for mask in 1..full {
        for last in 0..k {
            let cur = dp[mask * k + last];
            if mask & (1 << last) == 0 || !cur.is_finite() {
                continue;
            }
            for nxt in 0..k {
                if mask & (1 << nxt) != 0 {
                    continue;
                }
                let nm = mask | (1 << nxt);
                let v = cur + l1(centers[last], centers[nxt]);
                if v < dp[nm * k + nxt] {
                    dp[nm * k + nxt] = v;
                    parent[nm * k + nxt] = last;
                }
            }
        }
    }
    let last_mask = full - 1;
    let (mut cur, len) = (0..k)
        .map(|i| (i, dp[last_mask * k + i]))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .unwrap();
    let mut order = vec![cur];
    let mut mask = last_mask;
    while parent[mask * k + cur] != usize::MAX {
        let p = parent[mask * k + cur];
        mask &= !(1 << cur);
        cur = p;
        order.push(cur);
    }
    order.reverse();
    (len, order)
}

fn objective(boxes: &[BBox], w_inter: f64) -> (f64, Vec<usize>) {
    let spans: i64 = boxes.iter().map(|b| b.span()).sum();
    if w_inter == 0.0 {
        return (spans as f64, (0..boxes.len()).collect());
    }
    let centers: Vec<_> = boxes.iter().map(|b| b.center()).collect();
    let (len, order) = best_chain(&centers);
    (spans as f64 + w_inter * len, order)
}

struct Bnb<'a> {
    pts: &'a [Pt],
    tp: usize,
    k: usize,
    spare: usize,
    w_inter: f64,
    floor: i64,
    budget: u64,
    nodes: u64,
    best: f64,
    best_assign: Vec<usize>,
    assign: Vec<usize>,
    boxes: Vec<BBox>,
    skipped: usize,
}

const UNASSIGNED: usize = usize::MAX;

impl Bnb<'_> {
    fn bound(&self) -> f64 {
        let open: i64 = self.boxes.iter().map(|b| b.span().max(self.floor)).sum();
        (open + (self.k - self.boxes.len()) as i64 * self.floor) as f64
    }

    fn dfs(&mut self, i: usize) {
        self.nodes += 1;
        if self.nodes > self.budget {
            return;
        }
        let remaining = self.pts.len() - i;
        let needed: usize = self.boxes.iter().map(|b| self.tp - b.size).sum::<usize>()
            + (self.k - self.boxes.len()) * self.tp;
        if needed > remaining || self.bound() >= self.best - 1e-9 {
            return;
        }
        if i == self.pts.len() {
            let (j, _) = objective(&self.boxes, self.w_inter);
            if j < self.best - 1e-9 {
                self.best = j;
                self.best_assign = self.assign.clone();
            }
            return;
        }
        let p = self.pts[i];
        for g in 0..self.boxes.len() {
            if self.boxes[g].size < self.tp {
                let saved = self.boxes[g];
                self.boxes[g] = saved.with(p);
                self.assign[i] = g;
                self.dfs(i + 1);
                self.boxes[g] = saved;
            }
        }
        if self.boxes.len() < self.k {
            self.boxes.push(BBox::new(p));
            self.assign[i] = self.boxes.len() - 1;
            self.dfs(i + 1);
            self.boxes.pop();
        }
        if self.skipped < self.spare {
            self.skipped += 1;
            self.assign[i] = UNASSIGNED;
            self.dfs(i + 1);
            self.skipped -= 1;
        }
        self.assign[i] = UNASSIGNED;
    }
}

fn boxes_of(pts: &[Pt], assign: &[usize], k: usize) -> Vec<BBox> {
    let mut boxes: Vec<Option<BBox>> = vec![None; k];
    for (p, &g) in pts.iter().zip(assign) {
        if g != UNASSIGNED {
            boxes[g] = Some(boxes[g].map_or(BBox::new(*p), |b| b.with(*p)));
        }
    }
    boxes
        .into_iter()
        .map(|b| b.expect("every group filled"))
        .collect()
}

/// Row-major block tilings of the pool's bounding grid, plus plain chunking
/// in sorted order; the best of these seeds the exact search.
fn greedy_assign(pts: &[Pt], tp: usize, k: usize, w_inter: f64) -> Vec<usize> {
    let mut cands: Vec<Vec<usize>> = Vec::new();
    let chunk = |order: &[usize]| {
        let mut a = vec![UNASSIGNED; pts.len()];
        for (n, &i) in order.iter().take(k * tp).enumerate() {
            a[i] = n / tp;
        }
        a
    };
    let idx: Vec<usize> = (0..pts.len()).collect();
    cands.push(chunk(&idx));
    let mut by_col = idx.clone();
    by_col.sort_by_key(|&i| (pts[i].0, pts[i].1));
    cands.push(chunk(&by_col));
    for w in 1..=tp {
        if !tp.is_multiple_of(w) {
            continue;
        }
        let h = (tp / w) as i64;
        let w = w as i64;
        let mut order = idx.clone();
        order.sort_by_key(|&i| {
            let (x, y) = pts[i];
            (y.div_euclid(h), x.div_euclid(w), y, x)
        });
        cands.push(chunk(&order));
    }
    cands
        .into_iter()
        .map(|a| {
            let j = objective(&boxes_of(pts, &a, k), w_inter).0;
            (j, a)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, a)| a)
        .expect("at least one candidate")
}

/// Groups `pes` into `floor(P / tp)` TP groups minimizing the span/chain
/// objective. PEs left over when `tp` does not divide `P` stay idle.
pub fn tp_group(
    pes: &[MeshCoord],
    tp: usize,
    cfg: &GroupingConfig,
    comm: &CommParams,
) -> Result<TpGrouping, MapError> {
    if tp == 0 || pes.len() < tp {
        return Err(MapError::Infeasible { pes: pes.len(), tp });
    }
    let mut sorted: Vec<MeshCoord> = pes.to_vec();
    sorted.sort_by_key(|c| {
        let g = c.global(comm.pitch);
        (g.1, g.0)
    });
    let pts: Vec<Pt> = sorted.iter().map(|c| c.global(comm.pitch)).collect();
    let k = pts.len() / tp;
    let incumbent = greedy_assign(&pts, tp, k, cfg.w_inter);
    let mut bnb = Bnb {
        pts: &pts,
        tp,
        k,
        spare: pts.len() - k * tp,
        w_inter: cfg.w_inter,
        floor: min_span(tp),
        budget: cfg.node_budget,
        nodes: 0,
        best: objective(&boxes_of(&pts, &incumbent, k), cfg.w_inter).0,
        best_assign: incumbent,
        assign: vec![UNASSIGNED; pts.len()],
        boxes: Vec::new(),
        skipped: 0,
    };
    bnb.dfs(0);
    let exact = bnb.nodes <= bnb.budget;
    let boxes = boxes_of(&pts, &bnb.best_assign, k);
    let (j, order) = objective(&boxes, cfg.w_inter);
    let groups = order
        .iter()
        .map(|&g| {
            let members: Vec<MeshCoord> = sorted
                .iter()
                .zip(&bnb.best_assign)
                .filter(|(_, &a)| a == g)
                .map(|(c, _)| *c)
                .collect();
            let b = boxes[g];
            TpGroup {
                center_pe: center_member(&members, comm).expect("non-empty group"),
                pes: members,
                center: b.center(),
                span: b.span() as u32,
            }
        })
        .collect();
    Ok(TpGrouping {
        tp,
        groups,
        objective: j,
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealConfig {
    /// Initial temperature as a fraction of the greedy objective.
    pub t0_frac: f64,
    pub cooling: f64,
    pub iters_per_temp: u32,
    /// Stop once the temperature falls below this fraction of the greedy objective.
    pub t_min_frac: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            t0_frac: 0.05,
            cooling: 0.95,
            iters_per_temp: 200,
            t_min_frac: 1e-5,
        }
    }
}

/// A stage-placement problem in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementProblem {
    /// `stage_cost[s][g]`: latency of stage `s` on group `g`.
    pub stage_cost: Vec<Vec<f64>>,
    /// `transfer[a][b]`: latency of moving a stage boundary from group `a` to `b`.
    pub transfer: Vec<Vec<f64>>,
    /// Groups that may host stages, ordered by ascending span.
    pub available: Vec<usize>,
}

impl PlacementProblem {
    pub fn objective(&self, assign: &[usize]) -> f64 {
        let mut j: f64 = assign
            .iter()
            .enumerate()
            .map(|(s, &g)| self.stage_cost[s][g])
            .sum();
        for w in assign.windows(2) {
            j += self.transfer[w[0]][w[1]];
        }
        j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlacement {
    pub stage_to_group: Vec<usize>,
    pub objective: f64,
    pub initial_objective: f64,
}

/// Simulated annealing over injective stage-to-group maps, started from
/// the greedy assignment (stage `s` on the `s`-th smallest-span group).
/// Returns the best assignment visited, so it never loses to the start.
pub fn anneal_stages(
    p: &PlacementProblem,
    n_stages: usize,
    cfg: &AnnealConfig,
    seed: u64,
) -> Result<StagePlacement, MapError> {
    if n_stages == 0 || n_stages > p.available.len() {
        return Err(MapError::TooManyStages {
            stages: n_stages,
            groups: p.available.len(),
        });
    }
    let mut cur: Vec<usize> = p.available[..n_stages].to_vec();
    let mut cur_j = p.objective(&cur);
    let initial = cur_j;
    let mut best = (cur_j, cur.clone());
    if p.available.len() > 1 {
        let mut rng = rng_for(seed, "place_stages");
        let mut t = cfg.t0_frac * initial.abs().max(1e-30);
        let t_min = cfg.t_min_frac * initial.abs().max(1e-30);
        while t > t_min {
            for _ in 0..cfg.iters_per_temp {
                let s = rng.random_range(0..n_stages);
                let g = p.available[rng.random_range(0..p.available.len())];
                if g == cur[s] {
                    continue;
                }
                let mut next = cur.clone();
                if let Some(o) = cur.iter().position(|&x| x == g) {
                    next.swap(s, o);
                } else {
                    next[s] = g;
                }
                let nj = p.objective(&next);
                let d = nj - cur_j;
                if d <= 0.0 || rng.random::<f64>() < (-d / t).exp() {
                    cur = next;
                    cur_j = nj;
                    if cur_j < best.0 {
                        best = (cur_j, cur.clone());
                    }
                }
            }
            t *= cfg.cooling;
        }
    }
    Ok(StagePlacement {
        stage_to_group: best.1,
        objective: best.0,
        initial_objective: initial,
    })
}

/// Stage placement for layer-balanced stages on a grouping.
///
/// `layer_costs` are per-layer compute latencies on one group; every layer
/// adds two all-reduces of `act_bytes` on its group, and each stage boundary
/// moves `act_bytes` between group centers.
pub fn place_stages(
    grouping: &TpGrouping,
    n_stages: usize,
    layer_costs: &[f64],
    act_bytes: f64,
    comm: &CommParams,
    cfg: &AnnealConfig,
    seed: u64,
) -> Result<StagePlacement, MapError> {
    let n_groups = grouping.groups.len();
    if n_stages == 0 || n_stages > n_groups {
        return Err(MapError::TooManyStages {
            stages: n_stages,
            groups: n_groups,
        });
    }
    let split = split_layers(layer_costs.len() as u32, n_stages as u32);
    let problem = placement_problem(
        grouping,
        &split,
        layer_costs,
        act_bytes,
        comm,
        &(0..n_groups).collect::<Vec<_>>(),
    );
    anneal_stages(&problem, n_stages, cfg, seed)
}

pub(crate) fn placement_problem(
    grouping: &TpGrouping,
    split: &[(u32, u32)],
    layer_costs: &[f64],
    act_bytes: f64,
    comm: &CommParams,
    available: &[usize],
) -> PlacementProblem {
    use crate::commmodel::{collective_cost, CollectiveKind};
    let n = grouping.groups.len();
    let ar: Vec<f64> = grouping
        .groups
        .iter()
        .map(|g| {
            collective_cost(
                CollectiveKind::AllReduce,
                &g.pes,
                &g.center_pe,
                act_bytes,
                comm,
            )
            .map_or(0.0, |c| c.latency)
        })
        .collect();
    let stage_cost = split
        .iter()
        .map(|&(a, b)| {
            let compute: f64 = layer_costs[a as usize..b as usize].iter().sum();
            (0..n)
                .map(|g| compute + 2.0 * (b - a) as f64 * ar[g])
                .collect()
        })
        .collect();
    let transfer = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    transfer_cost(
                        &grouping.groups[a].center_pe,
                        &grouping.groups[b].center_pe,
                        act_bytes,
                        comm,
                    )
                    .latency
                })
                .collect()
        })
        .collect();
    let mut avail = available.to_vec();
    avail.sort_by_key(|&g| (grouping.groups[g].span, g));
    PlacementProblem {
        stage_cost,
        transfer,
        available: avail,
    }
}

/// Contiguous, balanced layer ranges `[start, end)`; earlier stages take the
/// remainder.
pub fn split_layers(n_layers: u32, pp: u32) -> Vec<(u32, u32)> {
    let pp = pp.max(1);
    let base = n_layers / pp;
    let extra = n_layers % pp;
    let mut out = Vec::with_capacity(pp as usize);
    let mut start = 0;
    for s in 0..pp {
        let len = base + u32::from(s < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub grouping: GroupingConfig,
    pub anneal: AnnealConfig,
    pub seed: u64,
    /// Prompt length used to cost prefill layers during placement.
    pub prefill_ref_len: u64,
    /// Context length and batch used to cost decode layers during placement.
    pub decode_ref_ctx: u64,
    pub decode_ref_batch: u64,
    /// KV tokens each stage must be able to hold on top of its weights.
    pub min_kv_tokens: u64,
    /// Temperature at which layer costs are evaluated.
    pub temp_c: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            grouping: GroupingConfig::default(),
            anneal: AnnealConfig::default(),
            seed: 0,
            prefill_ref_len: 2048,
            decode_ref_ctx: 2048,
            decode_ref_batch: 16,
            min_kv_tokens: 8192,
            temp_c: 65.0,
        }
    }
}

/// One phase's mapping: TP groups, pipeline replicas and layer ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub phase: Phase,
    pub tp: usize,
    pub pp: usize,
    pub groups: Vec<TpGroup>,
    /// Per data-parallel replica, the group hosting each stage.
    pub pipelines: Vec<Vec<usize>>,
    /// `[start, end)` layers of each stage.
    pub layer_split: Vec<(u32, u32)>,
    /// (prefill PE, decode PE) pairs holding the same head shard.
    pub kv_peer: Vec<(MeshCoord, MeshCoord)>,
    pub objective: f64,
    pub grouping_exact: bool,
}

impl MappingPlan {
    pub fn validate(&self, n_layers: u32) -> Result<(), String> {
        let covered: u32 = self.layer_split.iter().map(|(a, b)| b - a).sum();
        if self.layer_split.len() != self.pp || covered != n_layers {
            return Err(format!(
                "layer split covers {covered} of {n_layers} layers over {} stages",
                self.layer_split.len()
            ));
        }
        if self.layer_split.windows(2).any(|w| w[0].1 != w[1].0)
            || self.layer_split.first().is_some_and(|s| s.0 != 0)
        {
            return Err("layer ranges must be contiguous from 0".into());
        }
        let mut used = std::collections::BTreeSet::new();
        for p in &self.pipelines {
            if p.len() != self.pp {
                return Err("pipeline length differs from pp".into());
            }
            for &g in p {
                if g >= self.groups.len() || !used.insert(g) {
                    return Err(format!("group {g} missing or used twice"));
                }
            }
        }
        if self.groups.iter().any(|g| g.pes.len() != self.tp) {
            return Err("group size differs from tp".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdPlan {
    pub prefill: MappingPlan,
    pub decode: MappingPlan,
    /// Both phases run on the same PEs (system without separate pools).
    pub shared_pool: bool,
}

/// All PEs of chiplets with `role`, in placement order.
pub fn role_pool(sys: &ValidatedSystem, role: Role) -> Vec<MeshCoord> {
    let mut out = Vec::new();
    for c in sys.chiplets.iter().filter(|c| c.spec.role == role) {
        let (rows, cols) = c.spec.pe_grid;
        for y in 0..rows {
            for x in 0..cols {
                out.push(MeshCoord::new(c.pos, (x, y)));
            }
        }
    }
    out
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Prefill => "prefill",
        Phase::Decode => "decode",
    }
}

/// Inputs shared by plan construction for one phase.
pub struct PhaseInputs<'a> {
    pub sys: &'a ValidatedSystem,
    pub model: &'a ModelSpec,
    pub pool: &'a [MeshCoord],
    pub phase: Phase,
    pub cfg: &'a PlanConfig,
    pub cache: &'a OpCache,
}

fn pool_coster(inp: &PhaseInputs<'_>) -> Result<(PeCoster, f64, f64), MapError> {
    let first = inp
        .pool
        .first()
        .ok_or_else(|| MapError::NoPool(phase_name(inp.phase).into()))?;
    let idx = inp
        .sys
        .chiplet_at(first.chiplet)
        .expect("pool PEs sit on placed chiplets");
    let spec = &inp.sys.chiplets[idx].spec;
    let derate =
        crate::d3flow::checked_derate(&spec.dram, inp.cfg.temp_c).map_err(FlowError::from)?;
    Ok((
        PeCoster::new(spec, inp.model.dtype_bytes),
        derate,
        spec.pe_capacity_bytes(),
    ))
}

/// Per-layer compute latency on one group at the phase's reference load.
pub fn reference_layer_cost(
    inp: &PhaseInputs<'_>,
    tp: usize,
    batch: &[u64],
    group: &TpGroup,
    comm: &CommParams,
) -> Result<crate::workload::LayerCost, MapError> {
    let (coster, derate, _) = pool_coster(inp)?;
    let ops = match inp.phase {
        Phase::Prefill => prefill_layer_ops(inp.model, tp as u32, batch),
        Phase::Decode => decode_layer_ops(inp.model, tp as u32, batch),
    };
    let place = GroupPlace {
        pes: &group.pes,
        center: group.center_pe,
        comm,
    };
    Ok(layer_cost(&ops, &coster, &place, derate, inp.cache)?)
}

fn reference_batch(inp: &PhaseInputs<'_>) -> Vec<u64> {
    match inp.phase {
        Phase::Prefill => vec![inp.cfg.prefill_ref_len],
        Phase::Decode => vec![inp.cfg.decode_ref_ctx; inp.cfg.decode_ref_batch as usize],
    }
}

/// Plan for one phase with an existing grouping.
pub fn plan_phase(
    inp: &PhaseInputs<'_>,
    grouping: &TpGrouping,
    pp: usize,
    batch: &[u64],
) -> Result<MappingPlan, MapError> {
    let comm = CommParams::from_system(inp.sys);
    let tp = grouping.tp;
    let n_groups = grouping.groups.len();
    if pp == 0 || pp > n_groups {
        return Err(MapError::TooManyStages {
            stages: pp,
            groups: n_groups,
        });
    }
    let (_, _, pe_cap) = pool_coster(inp)?;
    let split = split_layers(inp.model.n_layers, pp as u32);
    let max_layers = split.iter().map(|(a, b)| b - a).max().unwrap_or(0) as f64;
    let need = max_layers
        * (inp.model.layer_weight_bytes()
            + inp.cfg.min_kv_tokens as f64 * inp.model.kv_bytes_per_token_layer());
    let have = tp as f64 * pe_cap;
    if need > have {
        return Err(MapError::CapacityExceeded {
            phase: phase_name(inp.phase).into(),
            group: 0,
            need_bytes: need,
            have_bytes: have,
        });
    }
    let lc = reference_layer_cost(inp, tp, batch, &grouping.groups[0], &comm)?;
    let layer_costs = vec![lc.compute_latency; inp.model.n_layers as usize];
    let tokens: u64 = match inp.phase {
        Phase::Prefill => batch.iter().sum(),
        Phase::Decode => batch.len() as u64,
    };
    let act_bytes = (tokens * inp.model.d_model as u64 * inp.model.dtype_bytes as u64) as f64;
    let mut available: Vec<usize> = (0..n_groups).collect();
    let mut pipelines = Vec::new();
    let mut objective = 0.0;
    while available.len() >= pp {
        let problem =
            placement_problem(grouping, &split, &layer_costs, act_bytes, &comm, &available);
        let seed = crate::util::derive_seed(
            inp.cfg.seed,
            &format!("{}/{}", phase_name(inp.phase), pipelines.len()),
        );
        let placed = anneal_stages(&problem, pp, &inp.cfg.anneal, seed)?;
        available.retain(|g| !placed.stage_to_group.contains(g));
        if pipelines.is_empty() {
            objective = placed.objective;
        }
        pipelines.push(placed.stage_to_group);
    }
    Ok(MappingPlan {
        phase: inp.phase,
        tp,
        pp,
        groups: grouping.groups.clone(),
        pipelines,
        layer_split: split,
        kv_peer: Vec::new(),
        objective,
        grouping_exact: grouping.exact,
    })
}

/// Pairs prefill TP rank `r` with the decode rank holding the same heads,
/// replica `i` feeding decode replica `i mod n_decode`.
fn kv_pairs(pre: &MappingPlan, dec: &MappingPlan) -> Vec<(MeshCoord, MeshCoord)> {
    let mut out = Vec::new();
    if dec.pipelines.is_empty() {
        return out;
    }
    for (i, p) in pre.pipelines.iter().enumerate() {
        let d = &dec.pipelines[i % dec.pipelines.len()];
        let src = &pre.groups[p[0]].pes;
        let dst = &dec.groups[d[0]].pes;
        let ranks = src.len().max(dst.len());
        for r in 0..ranks {
            let a = src[r * src.len() / ranks];
            let b = dst[r * dst.len() / ranks];
            if !out.contains(&(a, b)) {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn build_pd_plan(
    sys: &ValidatedSystem,
    model: &ModelSpec,
    pre: (usize, usize),
    dec: (usize, usize),
    cfg: &PlanConfig,
    cache: &OpCache,
) -> Result<PdPlan, MapError> {
    let comm = CommParams::from_system(sys);
    let mut pre_pool = role_pool(sys, Role::Prefill);
    let mut dec_pool = role_pool(sys, Role::Decode);
    let shared = pre_pool.is_empty() || dec_pool.is_empty();
    if pre_pool.is_empty() {
        pre_pool = dec_pool.clone();
    } else if dec_pool.is_empty() {
        dec_pool = pre_pool.clone();
    }
    let build = |pool: &[MeshCoord],
                 phase: Phase,
                 (tp, pp): (usize, usize)|
     -> Result<MappingPlan, MapError> {
        let inp = PhaseInputs {
            sys,
            model,
            pool,
            phase,
            cfg,
            cache,
        };
        let grouping = tp_group(pool, tp, &cfg.grouping, &comm)?;
        plan_phase(&inp, &grouping, pp, &reference_batch(&inp))
    };
    let mut p = build(&pre_pool, Phase::Prefill, pre)?;
    let mut d = build(&dec_pool, Phase::Decode, dec)?;
    let pairs = kv_pairs(&p, &d);
    p.kv_peer = pairs.clone();
    d.kv_peer = pairs;
    Ok(PdPlan {
        prefill: p,
        decode: d,
        shared_pool: shared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingScore {
    pub tp: usize,
    pub pp: usize,
    /// Prefill: estimated single-request TTFT (s, lower is better).
    /// Decode: tokens/s per PE (higher is better).
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdChoice {
    pub prefill: MappingScore,
    pub decode: MappingScore,
    pub evaluated: Vec<(Phase, MappingScore)>,
}

pub const TP_CANDIDATES: [usize; 4] = [1, 2, 4, 8];
pub const PP_CANDIDATES: [usize; 3] = [1, 2, 4];

/// Chooses (tp, pp) per phase for a workload with the given mean prompt and
/// output lengths: prefill minimizes single-request latency, decode
/// maximizes per-PE token throughput with the KV pool it leaves.
pub fn search_pd_mapping(
    sys: &ValidatedSystem,
    model: &ModelSpec,
    mean_in: f64,
    mean_out: f64,
    cfg: &PlanConfig,
    cache: &OpCache,
) -> Result<PdChoice, MapError> {
    let comm = CommParams::from_system(sys);
    let mut pre_pool = role_pool(sys, Role::Prefill);
    let mut dec_pool = role_pool(sys, Role::Decode);
    if pre_pool.is_empty() {
        pre_pool = dec_pool.clone();
    } else if dec_pool.is_empty() {
        dec_pool = pre_pool.clone();
    }
    let prompt = mean_in.round().max(1.0) as u64;
    let ctx = (mean_in + mean_out / 2.0).round().max(1.0) as u64;
    let mut evaluated = Vec::new();
    let mut best_pre: Option<MappingScore> = None;
    let mut best_dec: Option<MappingScore> = None;
    for &tp in &TP_CANDIDATES {
        for (phase, pool) in [(Phase::Prefill, &pre_pool), (Phase::Decode, &dec_pool)] {
            if pool.len() < tp {
                continue;
            }
            let grouping = tp_group(pool, tp, &cfg.grouping, &comm)?;
            let inp = PhaseInputs {
                sys,
                model,
                pool,
                phase,
                cfg,
                cache,
            };
            for &pp in &PP_CANDIDATES {
                let score = match phase {
                    Phase::Prefill => match plan_phase(&inp, &grouping, pp, &[prompt]) {
                        Ok(plan) => plan.objective,
                        Err(_) => continue,
                    },
                    Phase::Decode => {
                        let (_, _, pe_cap) = pool_coster(&inp)?;
                        let layers = split_layers(model.n_layers, pp as u32)[0];
                        let stage_layers = (layers.1 - layers.0) as f64;
                        let free = tp as f64 * pe_cap - stage_layers * model.layer_weight_bytes();
                        let per_req =
                            stage_layers * model.kv_bytes_per_token_layer() * (mean_in + mean_out);
                        let fit = (free / per_req / pp as f64).floor();
                        let batch = fit.min(cfg.decode_ref_batch as f64);
                        if batch < 1.0 {
                            continue;
                        }
                        let b = vec![ctx; batch as usize];
                        match plan_phase(&inp, &grouping, pp, &b) {
                            Ok(plan) => pp as f64 * batch / plan.objective / (tp * pp) as f64,
                            Err(_) => continue,
                        }
                    }
                };
                let s = MappingScore { tp, pp, score };
                evaluated.push((phase, s.clone()));
                match phase {
                    Phase::Prefill => {
                        if best_pre.as_ref().is_none_or(|b| s.score < b.score) {
                            best_pre = Some(s);
                        }
                    }
                    Phase::Decode => {
                        if best_dec.as_ref().is_none_or(|b| s.score > b.score) {
                            best_dec = Some(s);
                        }
                    }
                }
            }
        }
    }
    let prefill = best_pre.ok_or_else(|| MapError::NoPool("prefill (no feasible tp/pp)".into()))?;
    let decode = best_dec.ok_or_else(|| MapError::NoPool("decode (no feasible tp/pp)".into()))?;
    Ok(PdChoice {
        prefill,
        decode,
        evaluated,
    })
}
