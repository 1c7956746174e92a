//! Event loop and resource bookkeeping.
//!
//! Every PE is a FIFO resource: a stage reserves all PEs of its TP group from
//! `max(ready, free)` until it completes, so groups shared between phases
//! serialize. Each PE also owns one outgoing DMA port for KV and activation
//! transfers, reserved the same way.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use super::{
    ActivityKind, ActivityTrace, BatchingMode, Interval, KvSendPoint, OpRecord, RequestMetrics,
    ServingMetrics, SimConfig, SimError, Trace, Transfer,
};
use crate::commmodel::{transfer_cost, CommParams, MeshCoord};
use crate::compmodel::GemmShape;
use crate::d3flow::checked_derate;
use crate::hwspec::{ModelSpec, ValidatedSystem};
use crate::parmap::{MappingPlan, PdPlan};
use crate::thermal::static_power;
use crate::workload::{
    decode_layer_ops, layer_cost, prefill_layer_ops, GroupPlace, LayerCost, OpCache, OpClass,
    PeCoster, Phase,
};

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrival(usize),
    PrefillDone {
        rep: usize,
        stage: usize,
        batch: usize,
    },
    DecodeReady(usize),
    DecodeDone {
        rep: usize,
        mb: usize,
        stage: usize,
    },
}

struct Entry {
    time: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Entry {
    /// Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, o: &Self) -> Ordering {
        o.time.total_cmp(&self.time).then(o.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct Queue {
    heap: BinaryHeap<Entry>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time: f64, ev: Ev) {
        self.heap.push(Entry {
            time,
            seq: self.seq,
            ev,
        });
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<(f64, Ev)> {
        self.heap.pop().map(|e| (e.time, e.ev))
    }
}

#[derive(Debug, Clone)]
struct Group {
    pes: Vec<MeshCoord>,
    center: MeshCoord,
    chiplet: usize,
    derate: f64,
    /// Resource index of each PE.
    res: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct ReqState {
    replica: usize,
    /// KV tokens reserved on the decode replica.
    need: u64,
    emitted: u64,
    first: f64,
    last: f64,
    gaps: f64,
    kv_done: f64,
    finish: Option<f64>,
    deferred: bool,
}

#[derive(Debug, Clone, Default)]
struct MicroBatch {
    reqs: Vec<usize>,
    running: bool,
}

#[derive(Debug, Clone)]
struct DecodeRep {
    free: u64,
    waiting: VecDeque<usize>,
    mbs: Vec<MicroBatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct OpKey {
    phase: Phase,
    chiplet: usize,
    class: OpClass,
    shape: GemmShape,
    derate_bits: u64,
}

struct Engine<'a> {
    model: &'a ModelSpec,
    plan: &'a PdPlan,
    cfg: &'a SimConfig,
    cache: &'a OpCache,
    trace: &'a Trace,
    comm: CommParams,
    costers: Vec<PeCoster>,
    pgroups: Vec<Group>,
    dgroups: Vec<Group>,
    pe_free: Vec<f64>,
    port_free: Vec<f64>,
    pe_index: HashMap<MeshCoord, usize>,
    q: Queue,
    st: Vec<ReqState>,
    pending: VecDeque<usize>,
    stage0_busy: Vec<bool>,
    batches: Vec<Vec<usize>>,
    drep: Vec<DecodeRep>,
    act: ActivityTrace,
    op_index: HashMap<OpKey, usize>,
    dyn_energy: f64,
    kv_blocked: u64,
    decode_iters: u64,
}

fn build_groups(
    plan: &MappingPlan,
    sys: &ValidatedSystem,
    temps: &[f64],
    pe_index: &mut HashMap<MeshCoord, usize>,
    comm: &CommParams,
) -> Result<Vec<Group>, SimError> {
    let mut out = Vec::with_capacity(plan.groups.len());
    for g in &plan.groups {
        let mut chiplets = Vec::new();
        for pe in &g.pes {
            let idx = sys
                .chiplet_at(pe.chiplet)
                .ok_or_else(|| SimError::PlanMismatch(format!("no chiplet at {:?}", pe.chiplet)))?;
            let (rows, cols) = sys.chiplets[idx].spec.pe_grid;
            if pe.pe.0 >= cols || pe.pe.1 >= rows {
                return Err(SimError::PlanMismatch(format!(
                    "PE {:?} outside its chiplet",
                    pe.pe
                )));
            }
            chiplets.push(idx);
        }
        let chiplet = *chiplets
            .first()
            .ok_or_else(|| SimError::PlanMismatch("empty TP group".into()))?;
        let temp = chiplets
            .iter()
            .map(|&i| temps[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let derate = checked_derate(&sys.chiplets[chiplet].spec.dram, temp)?;
        let res = g
            .pes
            .iter()
            .map(|pe| {
                let n = pe_index.len();
                *pe_index.entry(*pe).or_insert(n)
            })
            .collect();
        let center = crate::commmodel::center_member(&g.pes, comm).expect("non-empty group");
        out.push(Group {
            pes: g.pes.clone(),
            center,
            chiplet,
            derate,
            res,
        });
    }
    Ok(out)
}

/// Largest number of KV tokens every stage of decode replica `rep` can hold.
fn replica_kv_tokens(
    sys: &ValidatedSystem,
    model: &ModelSpec,
    plan: &MappingPlan,
    groups: &[Group],
    rep: usize,
) -> u64 {
    let mut cap = u64::MAX;
    for (stage, &gi) in plan.pipelines[rep].iter().enumerate() {
        let (a, b) = plan.layer_split[stage];
        let layers = (b - a) as f64;
        if layers == 0.0 {
            continue;
        }
        let have: f64 = groups[gi]
            .pes
            .iter()
            .map(|pe| {
                sys.chiplets[sys.chiplet_at(pe.chiplet).expect("checked")]
                    .spec
                    .pe_capacity_bytes()
            })
            .sum();
        let free = have - layers * model.layer_weight_bytes();
        let tokens = (free / (layers * model.kv_bytes_per_token_layer()))
            .floor()
            .max(0.0);
        cap = cap.min(tokens as u64);
    }
    cap
}

/// Runs `trace` through the plan at fixed per-chiplet temperatures (indexed
/// like `sys.chiplets`).
pub fn simulate(
    sys: &ValidatedSystem,
    model: &ModelSpec,
    plan: &PdPlan,
    trace: &Trace,
    cfg: &SimConfig,
    temps: &[f64],
    cache: &OpCache,
) -> Result<(ServingMetrics, ActivityTrace), SimError> {
    if temps.len() != sys.chiplets.len() {
        return Err(SimError::PlanMismatch(format!(
            "{} temperatures for {} chiplets",
            temps.len(),
            sys.chiplets.len()
        )));
    }
    for p in [&plan.prefill, &plan.decode] {
        p.validate(model.n_layers).map_err(SimError::PlanMismatch)?;
        if p.pipelines.is_empty() {
            return Err(SimError::PlanMismatch(
                "a phase has no pipeline replica".into(),
            ));
        }
    }
    if cfg.max_decode_batch == 0 || cfg.max_prefill_tokens == 0 {
        return Err(SimError::PlanMismatch(
            "batch limits must be positive".into(),
        ));
    }
    let comm = CommParams::from_system(sys);
    let mut pe_index = HashMap::new();
    let pgroups = build_groups(&plan.prefill, sys, temps, &mut pe_index, &comm)?;
    let dgroups = build_groups(&plan.decode, sys, temps, &mut pe_index, &comm)?;
    let caps: Vec<u64> = (0..plan.decode.pipelines.len())
        .map(|d| replica_kv_tokens(sys, model, &plan.decode, &dgroups, d))
        .collect();
    let max_cap = caps.iter().copied().max().unwrap_or(0);
    let mut st = vec![ReqState::default(); trace.requests.len()];
    for (s, r) in st.iter_mut().zip(&trace.requests) {
        s.need = r.input_len + r.output_len;
        if s.need > max_cap {
            return Err(SimError::KvOverflow {
                request: r.id,
                need_tokens: s.need,
                capacity_tokens: max_cap,
            });
        }
    }
    let n_pe = pe_index.len();
    let mut e = Engine {
        model,
        plan,
        cfg,
        cache,
        trace,
        comm,
        costers: sys
            .chiplets
            .iter()
            .map(|c| PeCoster::new(&c.spec, model.dtype_bytes))
            .collect(),
        pgroups,
        dgroups,
        pe_free: vec![0.0; n_pe],
        port_free: vec![0.0; n_pe],
        pe_index,
        q: Queue::default(),
        st,
        pending: VecDeque::new(),
        stage0_busy: vec![false; plan.prefill.pipelines.len()],
        batches: Vec::new(),
        drep: caps
            .iter()
            .map(|&c| DecodeRep {
                free: c,
                waiting: VecDeque::new(),
                mbs: vec![MicroBatch::default(); plan.decode.pp],
            })
            .collect(),
        act: ActivityTrace::default(),
        op_index: HashMap::new(),
        dyn_energy: 0.0,
        kv_blocked: 0,
        decode_iters: 0,
    };
    for (i, r) in trace.requests.iter().enumerate() {
        e.q.push(r.arrival, Ev::Arrival(i));
    }
    while let Some((now, ev)) = e.q.pop() {
        e.handle(now, ev)?;
    }
    e.finish(sys, temps)
}

impl Engine<'_> {
    fn handle(&mut self, now: f64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Arrival(r) => {
                self.pending.push_back(r);
                self.try_admit(now)
            }
            Ev::PrefillDone { rep, stage, batch } => self.prefill_done(now, rep, stage, batch),
            Ev::DecodeReady(r) => {
                let d = self.st[r].replica;
                self.drep[d].waiting.push_back(r);
                self.fill_idle(d, now)
            }
            Ev::DecodeDone { rep, mb, stage } => self.decode_done(now, rep, mb, stage),
        }
    }

    /// Decode replica with the most free KV room that fits `need`.
    fn pick_decode(&self, need: u64) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, d) in self.drep.iter().enumerate() {
            if d.free >= need && best.is_none_or(|b| d.free > self.drep[b].free) {
                best = Some(i);
            }
        }
        best
    }

    /// FCFS admission into idle prefill replicas.
    fn try_admit(&mut self, now: f64) -> Result<(), SimError> {
        while !self.pending.is_empty() {
            let Some(rep) = self.stage0_busy.iter().position(|b| !b) else {
                break;
            };
            let mut batch = Vec::new();
            let mut tokens = 0;
            while let Some(&r) = self.pending.front() {
                let len = self.trace.requests[r].input_len;
                if !batch.is_empty() && tokens + len > self.cfg.max_prefill_tokens {
                    break;
                }
                let need = self.st[r].need;
                let Some(d) = self.pick_decode(need) else {
                    if batch.is_empty() && !self.st[r].deferred {
                        self.st[r].deferred = true;
                        self.kv_blocked += 1;
                    }
                    break;
                };
                self.drep[d].free -= need;
                self.st[r].replica = d;
                self.pending.pop_front();
                batch.push(r);
                tokens += len;
            }
            if batch.is_empty() {
                break;
            }
            self.stage0_busy[rep] = true;
            self.batches.push(batch);
            self.start_prefill(rep, 0, self.batches.len() - 1, now)?;
        }
        Ok(())
    }

    /// Reserves a group for `layers` layers of `ops`; returns (start, end, per-layer cost).
    fn run_stage(
        &mut self,
        phase: Phase,
        gi: usize,
        layers: u32,
        lens: &[u64],
        ready: f64,
    ) -> Result<(f64, f64, LayerCost), SimError> {
        let g = match phase {
            Phase::Prefill => self.pgroups[gi].clone(),
            Phase::Decode => self.dgroups[gi].clone(),
        };
        let tp = g.pes.len() as u32;
        let ops = match phase {
            Phase::Prefill => prefill_layer_ops(self.model, tp, lens),
            Phase::Decode => decode_layer_ops(self.model, tp, lens),
        };
        let place = GroupPlace {
            pes: &g.pes,
            center: g.center,
            comm: &self.comm,
        };
        let lc = layer_cost(&ops, &self.costers[g.chiplet], &place, g.derate, self.cache)?;
        let n = layers as f64;
        let start = g.res.iter().map(|&r| self.pe_free[r]).fold(ready, f64::max);
        let end = start + n * lc.latency;
        for &r in &g.res {
            self.pe_free[r] = end;
        }
        self.dyn_energy += n * lc.energy;
        for (class, shape, cost) in &lc.gemms {
            let key = OpKey {
                phase,
                chiplet: g.chiplet,
                class: *class,
                shape: *shape,
                derate_bits: g.derate.to_bits(),
            };
            let idx = *self.op_index.entry(key).or_insert_with(|| {
                self.act.ops.push(OpRecord {
                    phase,
                    chiplet: g.chiplet,
                    class: *class,
                    shape: *shape,
                    derate: g.derate,
                    flops: cost.flops,
                    min_bytes: cost.min_bytes,
                    latency: cost.latency,
                    active_cores: cost.active_cores,
                    count: 0,
                });
                self.act.ops.len() - 1
            });
            self.act.ops[idx].count += layers as u64 * tp as u64;
        }
        if self.cfg.record_activity && layers > 0 {
            let mem: f64 = lc
                .gemms
                .iter()
                .map(|(_, _, c)| (c.latency - c.compute_latency).max(0.0))
                .sum();
            let kind = if mem > 0.5 * lc.compute_latency {
                ActivityKind::Mem
            } else {
                ActivityKind::Compute
            };
            let split = start + n * lc.compute_latency;
            let per_pe = 1.0 / tp as f64;
            for pe in &g.pes {
                self.act.intervals.push(Interval {
                    pe: *pe,
                    start,
                    end: split,
                    kind,
                    energy: n * (lc.energy - lc.comm_energy) * per_pe,
                });
                if end > split {
                    self.act.intervals.push(Interval {
                        pe: *pe,
                        start: split,
                        end,
                        kind: ActivityKind::Comm,
                        energy: n * lc.comm_energy * per_pe,
                    });
                }
            }
        }
        Ok((start, end, lc))
    }

    /// Reserves `src`'s DMA port; returns the arrival time at `dst`.
    fn send(&mut self, src: MeshCoord, dst: MeshCoord, bytes: f64, ready: f64) -> f64 {
        if src == dst || bytes <= 0.0 {
            return ready;
        }
        let c = transfer_cost(&src, &dst, bytes, &self.comm);
        let port = self.pe_index[&src];
        let start = ready.max(self.port_free[port]);
        let end = start + c.latency;
        self.port_free[port] = end;
        self.dyn_energy += c.energy;
        if self.cfg.record_activity {
            self.act.transfers.push(Transfer {
                src,
                dst,
                start,
                end,
                bytes,
                energy: c.energy,
            });
        }
        end
    }

    fn activation_hop(
        &mut self,
        phase: Phase,
        from: usize,
        to: usize,
        tokens: u64,
        ready: f64,
    ) -> f64 {
        let groups = match phase {
            Phase::Prefill => &self.pgroups,
            Phase::Decode => &self.dgroups,
        };
        let (a, b) = (groups[from].center, groups[to].center);
        let bytes = (tokens * self.model.d_model as u64 * self.model.dtype_bytes as u64) as f64;
        self.send(a, b, bytes, ready)
    }

    fn start_prefill(
        &mut self,
        rep: usize,
        stage: usize,
        batch: usize,
        ready: f64,
    ) -> Result<(), SimError> {
        let plan = &self.plan.prefill;
        let gi = plan.pipelines[rep][stage];
        let (l0, l1) = plan.layer_split[stage];
        let reqs = self.batches[batch].clone();
        let lens: Vec<u64> = reqs
            .iter()
            .map(|&r| self.trace.requests[r].input_len)
            .collect();
        let (start, end, lc) = self.run_stage(Phase::Prefill, gi, l1 - l0, &lens, ready)?;
        let offset = match self.cfg.kv_send {
            KvSendPoint::QkvComplete => lc.qkv_latency,
            KvSendPoint::QkvStart => 0.0,
        };
        for l in l0..l1 {
            let t = start + (l - l0) as f64 * lc.latency + offset;
            for &r in &reqs {
                self.send_kv(gi, r, l, t);
            }
        }
        self.q.push(end, Ev::PrefillDone { rep, stage, batch });
        Ok(())
    }

    /// Ships layer `layer` of request `r`'s KV rank-by-rank to the decode
    /// group that owns that layer.
    fn send_kv(&mut self, pgi: usize, r: usize, layer: u32, ready: f64) {
        let dplan = &self.plan.decode;
        let stage = dplan
            .layer_split
            .iter()
            .position(|&(a, b)| a <= layer && layer < b)
            .expect("split covers all layers");
        let dgi = dplan.pipelines[self.st[r].replica][stage];
        let src = self.pgroups[pgi].pes.clone();
        let dst = self.dgroups[dgi].pes.clone();
        let ranks = src.len().max(dst.len());
        let bytes = self.model.kv_bytes_per_token_layer() * self.trace.requests[r].input_len as f64
            / ranks as f64;
        for k in 0..ranks {
            let done = self.send(
                src[k * src.len() / ranks],
                dst[k * dst.len() / ranks],
                bytes,
                ready,
            );
            self.st[r].kv_done = self.st[r].kv_done.max(done);
        }
    }

    fn prefill_done(
        &mut self,
        now: f64,
        rep: usize,
        stage: usize,
        batch: usize,
    ) -> Result<(), SimError> {
        let pp = self.plan.prefill.pp;
        if stage == 0 {
            self.stage0_busy[rep] = false;
        }
        if stage + 1 < pp {
            let tokens: u64 = self.batches[batch]
                .iter()
                .map(|&r| self.trace.requests[r].input_len)
                .sum();
            let p = &self.plan.prefill.pipelines[rep];
            let ready = self.activation_hop(Phase::Prefill, p[stage], p[stage + 1], tokens, now);
            self.start_prefill(rep, stage + 1, batch, ready)?;
        } else {
            for r in self.batches[batch].clone() {
                let s = &mut self.st[r];
                s.first = now;
                s.last = now;
                s.emitted = 1;
                if self.trace.requests[r].output_len == 1 {
                    self.complete(r, now);
                } else {
                    let t = now.max(self.st[r].kv_done);
                    self.q.push(t, Ev::DecodeReady(r));
                }
            }
        }
        self.try_admit(now)
    }

    fn complete(&mut self, r: usize, now: f64) {
        let s = &mut self.st[r];
        s.finish = Some(now);
        self.drep[s.replica].free += s.need;
    }

    fn top_up(&mut self, d: usize, mb: usize) {
        let cap = self.cfg.max_decode_batch;
        let rep = &mut self.drep[d];
        while rep.mbs[mb].reqs.len() < cap {
            let Some(r) = rep.waiting.pop_front() else {
                break;
            };
            rep.mbs[mb].reqs.push(r);
        }
    }

    fn fill_idle(&mut self, d: usize, now: f64) -> Result<(), SimError> {
        for mb in 0..self.drep[d].mbs.len() {
            if self.drep[d].waiting.is_empty() {
                break;
            }
            if !self.drep[d].mbs[mb].running {
                self.top_up(d, mb);
                self.drep[d].mbs[mb].running = true;
                self.start_decode(d, mb, 0, now)?;
            }
        }
        Ok(())
    }

    fn start_decode(
        &mut self,
        d: usize,
        mb: usize,
        stage: usize,
        ready: f64,
    ) -> Result<(), SimError> {
        let gi = self.plan.decode.pipelines[d][stage];
        let (l0, l1) = self.plan.decode.layer_split[stage];
        let bucket = self.cfg.ctx_bucket.max(1);
        let ctx: Vec<u64> = self.drep[d].mbs[mb]
            .reqs
            .iter()
            .map(|&r| {
                (self.trace.requests[r].input_len + self.st[r].emitted).div_ceil(bucket) * bucket
            })
            .collect();
        let (_, end, _) = self.run_stage(Phase::Decode, gi, l1 - l0, &ctx, ready)?;
        self.q.push(end, Ev::DecodeDone { rep: d, mb, stage });
        Ok(())
    }

    fn decode_done(&mut self, now: f64, d: usize, mb: usize, stage: usize) -> Result<(), SimError> {
        if stage + 1 < self.plan.decode.pp {
            let tokens = self.drep[d].mbs[mb].reqs.len() as u64;
            let p = &self.plan.decode.pipelines[d];
            let ready = self.activation_hop(Phase::Decode, p[stage], p[stage + 1], tokens, now);
            return self.start_decode(d, mb, stage + 1, ready);
        }
        self.decode_iters += 1;
        let reqs = std::mem::take(&mut self.drep[d].mbs[mb].reqs);
        let mut keep = Vec::with_capacity(reqs.len());
        for r in reqs {
            let s = &mut self.st[r];
            s.emitted += 1;
            s.gaps += now - s.last;
            s.last = now;
            if s.emitted == self.trace.requests[r].output_len {
                self.complete(r, now);
            } else {
                keep.push(r);
            }
        }
        self.drep[d].mbs[mb].reqs = keep;
        if self.cfg.mode == BatchingMode::Continuous || self.drep[d].mbs[mb].reqs.is_empty() {
            self.top_up(d, mb);
        }
        if self.drep[d].mbs[mb].reqs.is_empty() {
            self.drep[d].mbs[mb].running = false;
        } else {
            self.start_decode(d, mb, 0, now)?;
        }
        self.try_admit(now)
    }

    fn finish(
        mut self,
        sys: &ValidatedSystem,
        temps: &[f64],
    ) -> Result<(ServingMetrics, ActivityTrace), SimError> {
        let mut requests = Vec::with_capacity(self.st.len());
        for (s, r) in self.st.iter().zip(&self.trace.requests) {
            let finish = s.finish.ok_or_else(|| {
                SimError::PlanMismatch(format!("request {} never completed", r.id))
            })?;
            let ttft = s.first - r.arrival;
            let tbt_mean = if r.output_len > 1 {
                s.gaps / (r.output_len - 1) as f64
            } else {
                0.0
            };
            requests.push(RequestMetrics {
                id: r.id,
                arrival: r.arrival,
                input_len: r.input_len,
                output_len: r.output_len,
                ttft,
                tbt_mean,
                e2e: ttft + s.gaps,
                finish,
                decode_replica: s.replica,
            });
        }
        let makespan = requests.iter().map(|r| r.finish).fold(0.0, f64::max);
        let tokens: u64 = requests.iter().map(|r| r.output_len).sum();
        let static_w: f64 = sys
            .chiplets
            .iter()
            .zip(temps)
            .map(|(c, &t)| static_power(&c.spec, sys.spec.cooling.leakage_model, t).total())
            .sum();
        let static_energy_j = static_w * makespan;
        let energy_j = self.dyn_energy + static_energy_j;
        let n = requests.len().max(1) as f64;
        let mut ttfts: Vec<f64> = requests.iter().map(|r| r.ttft).collect();
        ttfts.sort_by(f64::total_cmp);
        let p99 = ttfts
            .get(((0.99 * ttfts.len() as f64).ceil() as usize).saturating_sub(1))
            .copied()
            .unwrap_or(0.0);
        let multi: Vec<&RequestMetrics> = requests.iter().filter(|r| r.output_len > 1).collect();
        let metrics = ServingMetrics {
            makespan,
            tokens,
            tpt: if makespan > 0.0 {
                tokens as f64 / makespan
            } else {
                0.0
            },
            dynamic_energy_j: self.dyn_energy,
            static_energy_j,
            pump_energy_j: 0.0,
            energy_j,
            tokens_per_joule: if energy_j > 0.0 {
                tokens as f64 / energy_j
            } else {
                0.0
            },
            mean_ttft: requests.iter().map(|r| r.ttft).sum::<f64>() / n,
            p99_ttft: p99,
            mean_tbt: multi.iter().map(|r| r.tbt_mean).sum::<f64>() / multi.len().max(1) as f64,
            mean_e2e: requests.iter().map(|r| r.e2e).sum::<f64>() / n,
            kv_blocked: self.kv_blocked,
            prefill_batches: self.batches.len() as u64,
            decode_iterations: self.decode_iters,
            requests,
        };
        self.act.makespan = makespan;
        Ok((metrics, self.act))
    }
}
