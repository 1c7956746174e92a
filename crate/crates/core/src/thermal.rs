//! Power traces, a compact RC thermal network, and the temperature/performance
//! fixed point (leakage and DRAM refresh both grow with temperature).

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hwspec::{ChipletSpec, ModelSpec, ValidatedSystem};
use crate::memmodel::{derate_for_bin, refresh_derate};
use crate::parmap::PdPlan;
use crate::servesim::{simulate, ActivityTrace, ServingMetrics, SimConfig, SimError, Trace};
use crate::workload::OpCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageModel {
    /// 1 + 0.005 (T - 65): +20% over 40 C.
    Linear,
    /// exp(k (T - 65)) with k chosen so that +40 C gives +20%.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowLevel {
    /// Multiplier on the cold-plate resistance.
    pub resistance_scale: f64,
    pub pump_power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoolingSpec {
    pub ambient_c: f64,
    /// Cold plate to coolant, per chiplet column.
    pub r_coldplate_c_per_w: f64,
    /// Through one DRAM die, per chiplet column.
    pub r_dram_layer_c_per_w: f64,
    /// Hybrid bond between logic die and the first DRAM die.
    pub r_bond_c_per_w: f64,
    /// Interposer spreading between the logic dies of adjacent chiplets.
    pub r_lateral_c_per_w: f64,
    pub c_logic_j_per_c: f64,
    pub c_dram_layer_j_per_c: f64,
    /// Ordered from lowest to highest flow.
    pub flow_levels: Vec<FlowLevel>,
    pub t_limit_c: f64,
    pub leakage_model: LeakageModel,
    /// Resistances are placeholders, not fitted to a measured package.
    pub calibration_required: bool,
}

impl Default for CoolingSpec {
    fn default() -> Self {
        CoolingSpec {
            ambient_c: 45.0,
            r_coldplate_c_per_w: 0.06,
            r_dram_layer_c_per_w: 0.012,
            r_bond_c_per_w: 0.01,
            r_lateral_c_per_w: 0.5,
            c_logic_j_per_c: 2.0,
            c_dram_layer_j_per_c: 0.5,
            flow_levels: vec![
                FlowLevel {
                    resistance_scale: 1.0,
                    pump_power_w: 5.0,
                },
                FlowLevel {
                    resistance_scale: 0.75,
                    pump_power_w: 10.0,
                },
                FlowLevel {
                    resistance_scale: 0.5,
                    pump_power_w: 20.0,
                },
            ],
            t_limit_c: 95.0,
            leakage_model: LeakageModel::Linear,
            calibration_required: true,
        }
    }
}

/// Leakage multiplier relative to the 65 C reference.
pub fn leakage_factor(model: LeakageModel, temp_c: f64) -> f64 {
    let dt = temp_c - LEAK_REF_C;
    match model {
        LeakageModel::Linear => (1.0 + LEAK_SLOPE * dt).max(0.0),
        LeakageModel::Exponential => {
            ((1.0 + LEAK_SLOPE * LEAK_CAL_SPAN_C).ln() / LEAK_CAL_SPAN_C * dt).exp()
        }
    }
}

const LEAK_REF_C: f64 = 65.0;
const LEAK_SLOPE: f64 = 0.005;
const LEAK_CAL_SPAN_C: f64 = 40.0;

/// Temperature-dependent idle power of one chiplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticPower {
    /// PE logic and SRAM leakage.
    pub logic_w: f64,
    /// DRAM peripheral static power, all layers.
    pub dram_w: f64,
    pub refresh_w: f64,
}

impl StaticPower {
    pub fn total(&self) -> f64 {
        self.logic_w + self.dram_w + self.refresh_w
    }
}

/// Leakage of one idle PE (logic plus its SRAM) at 65 C.
pub fn pe_leak_base_w(spec: &ChipletSpec) -> f64 {
    let sram_mib = spec.pe.n_core as f64 * spec.pe.sram_capacity_bytes as f64 / (1024.0 * 1024.0);
    spec.tech.pe_leak_w + sram_mib * spec.tech.sram_w_per_mib
}

/// Refresh power scales with the refresh duty cycle relative to its value
/// at or below the retention base temperature.
pub fn static_power(spec: &ChipletSpec, model: LeakageModel, temp_c: f64) -> StaticPower {
    let base = derate_for_bin(&spec.dram, 0);
    let duty = if base > 0.0 {
        refresh_derate(&spec.dram, temp_c) / base
    } else {
        1.0
    };
    StaticPower {
        logic_w: spec.n_pe() as f64 * pe_leak_base_w(spec) * leakage_factor(model, temp_c),
        dram_w: spec.dram.n_layer as f64 * spec.tech.dram_layer_static_w,
        refresh_w: spec.tech.refresh_power_w * duty,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermalError {
    #[error("thermal network is singular: {0}")]
    SingularNetwork(String),
    #[error("invalid cooling spec: {0}")]
    InvalidCooling(String),
    #[error("no convergence after {iterations} iterations; max |dT| per iteration: {history:?}")]
    NonConvergence {
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CoolingSpec {
    pub fn validate(&self) -> Result<(), ThermalError> {
        let bad = |m: &str| Err(ThermalError::InvalidCooling(m.into()));
        let rs = [
            self.r_coldplate_c_per_w,
            self.r_dram_layer_c_per_w,
            self.r_bond_c_per_w,
            self.r_lateral_c_per_w,
        ];
        if rs.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(ThermalError::SingularNetwork(
                "resistances must be positive and finite".into(),
            ));
        }
        if !(self.c_logic_j_per_c > 0.0) || !(self.c_dram_layer_j_per_c > 0.0) {
            return bad("heat capacities must be positive");
        }
        if self.flow_levels.is_empty() {
            return bad("at least one flow level is required");
        }
        for w in self.flow_levels.windows(2) {
            if !(w[1].resistance_scale < w[0].resistance_scale)
                || !(w[1].pump_power_w > w[0].pump_power_w)
            {
                return bad("flow levels must lower resistance and raise pump power in order");
            }
        }
        if self
            .flow_levels
            .iter()
            .any(|l| !(l.resistance_scale > 0.0) || !(l.pump_power_w >= 0.0))
        {
            return bad("resistance scales must be positive and pump power non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Logic,
    /// Counted from the die bonded to logic (0) towards the cold plate.
    DramLayer(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    /// Index into the system's chiplet list.
    pub chiplet: usize,
    pub kind: BlockKind,
}

/// Thermal blocks of every chiplet: logic first, then its DRAM dies.
pub fn blocks(sys: &ValidatedSystem) -> Vec<BlockId> {
    let mut out = Vec::new();
    for (i, c) in sys.chiplets.iter().enumerate() {
        out.push(BlockId {
            chiplet: i,
            kind: BlockKind::Logic,
        });
        for l in 0..c.spec.dram.n_layer {
            out.push(BlockId {
                chiplet: i,
                kind: BlockKind::DramLayer(l),
            });
        }
    }
    out
}

pub fn block_label(sys: &ValidatedSystem, b: &BlockId) -> String {
    let name = &sys.chiplets[b.chiplet].name;
    match b.kind {
        BlockKind::Logic => format!("{name}.logic"),
        BlockKind::DramLayer(l) => format!("{name}.dram{l}"),
    }
}

/// Binned power per block. Dynamic activity energy lands on the logic die
/// of the chiplet that spent it; DRAM static and refresh power are spread
/// evenly over the DRAM dies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub blocks: Vec<BlockId>,
    pub bin_s: f64,
    /// Covered time; the last bin may be partial.
    pub duration_s: f64,
    /// `[block][bin]` watts.
    pub dynamic_w: Vec<Vec<f64>>,
    /// Per block, constant over the run.
    pub static_w: Vec<f64>,
    pub pump_w: f64,
}

impl PowerTrace {
    pub fn n_bins(&self) -> usize {
        self.dynamic_w.first().map_or(0, Vec::len)
    }

    pub fn bin_width(&self, bin: usize) -> f64 {
        (self.duration_s - bin as f64 * self.bin_s)
            .min(self.bin_s)
            .max(0.0)
    }

    /// Time-averaged watts per block.
    pub fn mean_w(&self) -> Vec<f64> {
        (0..self.blocks.len())
            .map(|b| {
                if self.duration_s <= 0.0 {
                    return self.static_w[b];
                }
                let e: f64 = (0..self.n_bins())
                    .map(|i| self.dynamic_w[b][i] * self.bin_width(i))
                    .sum();
                e / self.duration_s + self.static_w[b]
            })
            .collect()
    }

    /// Integral of all block power plus pump power over the run.
    pub fn energy_j(&self) -> f64 {
        let blocks: f64 = self.mean_w().iter().sum::<f64>() * self.duration_s;
        blocks + self.pump_w * self.duration_s
    }
}

fn deposit(bins: &mut [f64], bin_s: f64, start: f64, end: f64, energy: f64) {
    if bins.is_empty() || energy == 0.0 {
        return;
    }
    let last = bins.len() - 1;
    if end <= start {
        bins[((start / bin_s) as usize).min(last)] += energy;
        return;
    }
    let rate = energy / (end - start);
    let first = ((start / bin_s) as usize).min(last);
    for (i, slot) in bins.iter_mut().enumerate().skip(first) {
        let (a, b) = (
            i as f64 * bin_s,
            if i == last {
                f64::INFINITY
            } else {
                (i + 1) as f64 * bin_s
            },
        );
        let overlap = end.min(b) - start.max(a);
        if overlap > 0.0 {
            *slot += rate * overlap;
        }
        if b >= end {
            break;
        }
    }
}

/// Power per block from an activity trace at fixed chiplet temperatures.
pub fn power_from_activity(
    activity: &ActivityTrace,
    sys: &ValidatedSystem,
    temps: &[f64],
    cooling: &CoolingSpec,
    bin_s: f64,
) -> PowerTrace {
    let blocks = blocks(sys);
    let duration = activity.makespan.max(0.0);
    let n_bins = if duration > 0.0 {
        (duration / bin_s).ceil().max(1.0) as usize
    } else {
        0
    };
    let logic_of: Vec<usize> = {
        let mut v = vec![0; sys.chiplets.len()];
        for (i, b) in blocks.iter().enumerate() {
            if b.kind == BlockKind::Logic {
                v[b.chiplet] = i;
            }
        }
        v
    };
    let pos_to_chiplet: std::collections::HashMap<(u32, u32), usize> = sys
        .chiplets
        .iter()
        .enumerate()
        .map(|(i, c)| (c.pos, i))
        .collect();
    let mut energy = vec![vec![0.0; n_bins]; blocks.len()];
    for iv in &activity.intervals {
        let b = logic_of[pos_to_chiplet[&iv.pe.chiplet]];
        deposit(&mut energy[b], bin_s, iv.start, iv.end, iv.energy);
    }
    for t in &activity.transfers {
        let b = logic_of[pos_to_chiplet[&t.src.chiplet]];
        deposit(&mut energy[b], bin_s, t.start, t.end, t.energy);
    }
    let trace_bin = |i: usize| (duration - i as f64 * bin_s).min(bin_s);
    let dynamic_w = energy
        .into_iter()
        .map(|bins| {
            bins.into_iter()
                .enumerate()
                .map(|(i, e)| if e == 0.0 { 0.0 } else { e / trace_bin(i) })
                .collect()
        })
        .collect();
    let static_w = blocks
        .iter()
        .map(|b| {
            let spec = &sys.chiplets[b.chiplet].spec;
            let sp = static_power(spec, cooling.leakage_model, temps[b.chiplet]);
            match b.kind {
                BlockKind::Logic => sp.logic_w,
                BlockKind::DramLayer(_) => (sp.dram_w + sp.refresh_w) / spec.dram.n_layer as f64,
            }
        })
        .collect();
    PowerTrace {
        blocks,
        bin_s,
        duration_s: duration,
        dynamic_w,
        static_w,
        pump_w: 0.0,
    }
}

/// Conductance network over [`blocks`]: `G T = P + g_amb T_amb`.
#[derive(Debug, Clone)]
struct Network {
    g: DMatrix<f64>,
    /// Conductance from each node straight to the coolant.
    g_amb: DVector<f64>,
    cap: DVector<f64>,
}

fn network(
    sys: &ValidatedSystem,
    blocks: &[BlockId],
    cooling: &CoolingSpec,
    level: usize,
) -> Result<Network, ThermalError> {
    cooling.validate()?;
    let scale = cooling
        .flow_levels
        .get(level)
        .ok_or_else(|| ThermalError::InvalidCooling(format!("flow level {level} does not exist")))?
        .resistance_scale;
    let n = blocks.len();
    let mut g = DMatrix::zeros(n, n);
    let mut g_amb = DVector::zeros(n);
    let mut cap = DVector::zeros(n);
    let index: std::collections::HashMap<BlockId, usize> =
        blocks.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let mut link = |a: usize, b: usize, r: f64| {
        let c = 1.0 / r;
        g[(a, a)] += c;
        g[(b, b)] += c;
        g[(a, b)] -= c;
        g[(b, a)] -= c;
    };
    for (i, c) in sys.chiplets.iter().enumerate() {
        let logic = index[&BlockId {
            chiplet: i,
            kind: BlockKind::Logic,
        }];
        cap[logic] = cooling.c_logic_j_per_c;
        let layers = c.spec.dram.n_layer;
        let mut below = logic;
        for l in 0..layers {
            let d = index[&BlockId {
                chiplet: i,
                kind: BlockKind::DramLayer(l),
            }];
            cap[d] = cooling.c_dram_layer_j_per_c;
            link(
                below,
                d,
                if l == 0 {
                    cooling.r_bond_c_per_w
                } else {
                    cooling.r_dram_layer_c_per_w
                },
            );
            below = d;
        }
        g_amb[below] += 1.0 / (cooling.r_coldplate_c_per_w * scale);
        for (j, o) in sys.chiplets.iter().enumerate().skip(i + 1) {
            if c.pos.0.abs_diff(o.pos.0) + c.pos.1.abs_diff(o.pos.1) == 1 {
                let other = index[&BlockId {
                    chiplet: j,
                    kind: BlockKind::Logic,
                }];
                link(logic, other, cooling.r_lateral_c_per_w);
            }
        }
    }
    for i in 0..n {
        g[(i, i)] += g_amb[i];
    }
    Ok(Network { g, g_amb, cap })
}

/// Temperatures of every block, plus the flow level that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub blocks: Vec<BlockId>,
    pub temps_c: Vec<f64>,
    pub ambient_c: f64,
    pub flow_level: usize,
}

impl ThermalState {
    pub fn max_c(&self) -> f64 {
        self.temps_c.iter().copied().fold(self.ambient_c, f64::max)
    }

    /// Hottest block of each chiplet; this is the temperature the cost
    /// models see.
    pub fn chiplet_temps(&self, n_chiplets: usize) -> Vec<f64> {
        let mut out = vec![self.ambient_c; n_chiplets];
        for (b, &t) in self.blocks.iter().zip(&self.temps_c) {
            out[b.chiplet] = out[b.chiplet].max(t);
        }
        out
    }
}

/// Steady-state temperatures for time-averaged block power `power_w`.
pub fn solve_steady(
    sys: &ValidatedSystem,
    power_w: &[f64],
    cooling: &CoolingSpec,
    level: usize,
) -> Result<ThermalState, ThermalError> {
    let blocks = blocks(sys);
    if power_w.len() != blocks.len() || power_w.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(ThermalError::SingularNetwork(format!(
            "{} non-negative powers for {} blocks",
            power_w.len(),
            blocks.len()
        )));
    }
    let net = network(sys, &blocks, cooling, level)?;
    let rhs = DVector::from_iterator(blocks.len(), power_w.iter().copied())
        + &net.g_amb * cooling.ambient_c;
    let t = net
        .g
        .lu()
        .solve(&rhs)
        .filter(|t| t.iter().all(|x| x.is_finite()))
        .ok_or_else(|| ThermalError::SingularNetwork("conductance matrix has no inverse".into()))?;
    Ok(ThermalState {
        blocks,
        temps_c: t.iter().copied().collect(),
        ambient_c: cooling.ambient_c,
        flow_level: level,
    })
}

/// Block temperatures at the end of every power bin, by explicit Euler
/// from `start` with sub-steps short enough to stay stable.
pub fn solve_transient(
    sys: &ValidatedSystem,
    power: &PowerTrace,
    cooling: &CoolingSpec,
    level: usize,
    start: &ThermalState,
) -> Result<Vec<Vec<f64>>, ThermalError> {
    let net = network(sys, &power.blocks, cooling, level)?;
    let n = power.blocks.len();
    if start.temps_c.len() != n {
        return Err(ThermalError::SingularNetwork(
            "initial state has the wrong number of blocks".into(),
        ));
    }
    let tau = (0..n)
        .map(|i| net.cap[i] / net.g[(i, i)])
        .fold(f64::INFINITY, f64::min);
    let mut t = DVector::from_iterator(n, start.temps_c.iter().copied());
    let amb = &net.g_amb * cooling.ambient_c;
    let mut out = Vec::with_capacity(power.n_bins());
    for bin in 0..power.n_bins() {
        let width = power.bin_width(bin);
        let steps = (width / (0.5 * tau)).ceil().max(1.0) as usize;
        let dt = width / steps as f64;
        let p = DVector::from_iterator(
            n,
            (0..n).map(|b| power.dynamic_w[b][bin] + power.static_w[b]),
        );
        for _ in 0..steps {
            let flow = &p + &amb - &net.g * &t;
            t += flow.component_div(&net.cap) * dt;
        }
        out.push(t.iter().copied().collect());
    }
    Ok(out)
}

/// `block,time_s,power_w,temp_c`, one row per block per bin (time at bin end).
pub fn write_power_csv(
    sys: &ValidatedSystem,
    power: &PowerTrace,
    temps: &[Vec<f64>],
    path: &std::path::Path,
) -> Result<(), ThermalError> {
    use std::io::Write;
    let io = |e: std::io::Error| ThermalError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "block,time_s,power_w,temp_c").map_err(io)?;
    for (b, id) in power.blocks.iter().enumerate() {
        let label = block_label(sys, id);
        for (bin, row) in temps.iter().enumerate() {
            let t_end = bin as f64 * power.bin_s + power.bin_width(bin);
            writeln!(
                f,
                "{label},{t_end},{},{}",
                power.dynamic_w[b][bin] + power.static_w[b],
                row[b]
            )
            .map_err(io)?;
        }
    }
    f.flush().map_err(io)
}

/// Lowest flow level whose steady state stays within the limit, or the
/// highest level if none does (flagged by the returned bool).
pub fn pick_flow_level(
    sys: &ValidatedSystem,
    power_w: &[f64],
    cooling: &CoolingSpec,
) -> Result<(ThermalState, bool), ThermalError> {
    let mut last = None;
    for level in 0..cooling.flow_levels.len() {
        let s = solve_steady(sys, power_w, cooling, level)?;
        if s.max_c() <= cooling.t_limit_c {
            return Ok((s, false));
        }
        last = Some(s);
    }
    Ok((
        last.ok_or_else(|| ThermalError::InvalidCooling("no flow levels".into()))?,
        true,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointConfig {
    pub max_iters: usize,
    /// Converged once no chiplet temperature moves by this much.
    pub tol_c: f64,
    /// Fraction of the solved temperature change applied per iteration.
    pub relaxation: f64,
    pub bin_s: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            max_iters: 20,
            tol_c: 0.5,
            relaxation: 0.5,
            bin_s: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    /// From the last simulation; energy includes pump energy.
    pub metrics: ServingMetrics,
    pub activity: ActivityTrace,
    /// Steady solve of the last simulation's power.
    pub state: ThermalState,
    pub power: PowerTrace,
    /// Per-chiplet temperatures the last simulation ran at.
    pub used_temps: Vec<f64>,
    /// Largest chiplet temperature change per iteration.
    pub history: Vec<f64>,
    /// Flow level chosen per iteration.
    pub flow_levels: Vec<usize>,
    /// No flow level kept the hottest block within the limit.
    pub limit_exceeded: bool,
}

/// Iterates simulate -> power -> steady solve until chiplet temperatures
/// settle, starting from ambient.
pub fn thermal_fixed_point(
    sys: &ValidatedSystem,
    model: &ModelSpec,
    plan: &PdPlan,
    trace: &Trace,
    sim: &SimConfig,
    fp: &FixedPointConfig,
    cache: &OpCache,
) -> Result<FixedPointResult, ThermalError> {
    let cooling = &sys.spec.cooling;
    cooling.validate()?;
    if !(fp.bin_s > 0.0) || !(fp.relaxation > 0.0 && fp.relaxation <= 1.0) || fp.max_iters == 0 {
        return Err(ThermalError::InvalidCooling(
            "bin width, relaxation in (0, 1] and iterations must be positive".into(),
        ));
    }
    let sim = SimConfig {
        record_activity: true,
        ..*sim
    };
    let n = sys.chiplets.len();
    let mut temps = vec![cooling.ambient_c; n];
    let mut history = Vec::new();
    let mut flow_levels = Vec::new();
    for _ in 0..fp.max_iters {
        let (mut metrics, activity) = simulate(sys, model, plan, trace, &sim, &temps, cache)?;
        let mut power = power_from_activity(&activity, sys, &temps, cooling, fp.bin_s);
        let (state, limit_exceeded) = pick_flow_level(sys, &power.mean_w(), cooling)?;
        power.pump_w = cooling.flow_levels[state.flow_level].pump_power_w;
        flow_levels.push(state.flow_level);
        let solved = state.chiplet_temps(n);
        let delta = solved
            .iter()
            .zip(&temps)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        history.push(delta);
        if delta < fp.tol_c {
            metrics.pump_energy_j = power.pump_w * metrics.makespan;
            metrics.energy_j += metrics.pump_energy_j;
            metrics.tokens_per_joule = if metrics.energy_j > 0.0 {
                metrics.tokens as f64 / metrics.energy_j
            } else {
                0.0
            };
            return Ok(FixedPointResult {
                metrics,
                activity,
                state,
                power,
                used_temps: temps,
                history,
                flow_levels,
                limit_exceeded,
            });
        }
        for (t, s) in temps.iter_mut().zip(&solved) {
            *t += fp.relaxation * (s - *t);
        }
    }
    Err(ThermalError::NonConvergence {
        iterations: fp.max_iters,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commmodel::MeshCoord;
    use crate::hwspec::{
        default_dc, default_pc, default_system, single_chiplet_system, validate_system, Placement,
    };
    use crate::parmap::{build_pd_plan, PlanConfig};
    use crate::servesim::{gen_trace, Interval, TraceConfig, TraceSource};

    fn one_chiplet(mut c: ChipletSpec, layers: u32, cooling: CoolingSpec) -> ValidatedSystem {
        c.dram.n_layer = layers;
        c.dram.capacity_bytes = c.dram.total_banks() as u64 * c.dram.bank_capacity_bytes;
        let mut spec = single_chiplet_system(c);
        spec.cooling = cooling;
        validate_system(&spec).unwrap()
    }

    fn logic_only(sys: &ValidatedSystem, w: f64) -> Vec<f64> {
        blocks(sys)
            .iter()
            .map(|b| if b.kind == BlockKind::Logic { w } else { 0.0 })
            .collect()
    }

    #[test]
    fn leakage_calibration() {
        for m in [LeakageModel::Linear, LeakageModel::Exponential] {
            assert!((leakage_factor(m, 65.0) - 1.0).abs() < 1e-12);
            assert!((leakage_factor(m, 105.0) - 1.2).abs() < 1e-12);
            assert!(leakage_factor(m, 90.0) > leakage_factor(m, 80.0));
        }
    }

    #[test]
    fn idle_pe_draws_leak_base() {
        let pc = default_pc();
        let s = static_power(&pc, LeakageModel::Linear, 65.0);
        assert!((s.logic_w - pc.n_pe() as f64 * pe_leak_base_w(&pc)).abs() < 1e-9);
        let hot = static_power(&pc, LeakageModel::Linear, 105.0);
        assert!((hot.logic_w / s.logic_w - 1.2).abs() < 1e-12);
        assert!(hot.refresh_w > s.refresh_w);
    }

    #[test]
    fn zero_power_is_ambient() {
        let sys = validate_system(&default_system()).unwrap();
        let st = solve_steady(&sys, &vec![0.0; blocks(&sys).len()], &sys.spec.cooling, 0).unwrap();
        assert!(st.temps_c.iter().all(|t| (t - 45.0).abs() < 1e-9));
    }

    #[test]
    fn single_column_hand_solve() {
        let cooling = CoolingSpec {
            r_coldplate_c_per_w: 0.4,
            r_bond_c_per_w: 0.1,
            ..Default::default()
        };
        let mut pc = default_pc();
        pc.pe_grid = (1, 1);
        let sys = one_chiplet(pc, 1, cooling.clone());
        let st = solve_steady(&sys, &logic_only(&sys, 100.0), &cooling, 0).unwrap();
        assert!((st.temps_c[0] - 95.0).abs() < 1e-9);
        assert!((st.temps_c[1] - 85.0).abs() < 1e-9);
        let faster = solve_steady(&sys, &logic_only(&sys, 100.0), &cooling, 2).unwrap();
        assert!((faster.temps_c[0] - (45.0 + 100.0 * (0.2 + 0.1))).abs() < 1e-9);
    }

    #[test]
    fn taller_stack_runs_hotter() {
        let c = CoolingSpec::default();
        let pc = one_chiplet(default_pc(), 4, c.clone());
        let dc = one_chiplet(default_dc(), 8, c.clone());
        let tp = solve_steady(&pc, &logic_only(&pc, 150.0), &c, 0)
            .unwrap()
            .max_c();
        let td = solve_steady(&dc, &logic_only(&dc, 150.0), &c, 0)
            .unwrap()
            .max_c();
        // Hand solve: 150 W through bond, n-1 layer gaps and the cold plate.
        assert!((tp - (45.0 + 150.0 * (0.01 + 3.0 * 0.012 + 0.06))).abs() < 1e-9);
        assert!((td - (45.0 + 150.0 * (0.01 + 7.0 * 0.012 + 0.06))).abs() < 1e-9);
        assert!(td >= tp);
    }

    #[test]
    fn bad_resistance_is_singular() {
        let c = CoolingSpec {
            r_lateral_c_per_w: -1.0,
            ..Default::default()
        };
        let sys = one_chiplet(default_pc(), 4, CoolingSpec::default());
        assert!(matches!(
            solve_steady(&sys, &logic_only(&sys, 1.0), &c, 0),
            Err(ThermalError::SingularNetwork(_))
        ));
    }

    fn synthetic_activity(scale: f64) -> ActivityTrace {
        let pe = MeshCoord::new((0, 0), (0, 0));
        ActivityTrace {
            intervals: vec![
                Interval {
                    pe,
                    start: 0.0,
                    end: 0.015,
                    kind: crate::servesim::ActivityKind::Compute,
                    energy: 3.0 * scale,
                },
                Interval {
                    pe,
                    start: 0.02,
                    end: 0.02,
                    kind: crate::servesim::ActivityKind::Comm,
                    energy: 1.0 * scale,
                },
            ],
            transfers: vec![],
            ops: vec![],
            makespan: 0.025,
        }
    }

    #[test]
    fn dynamic_power_is_linear_and_conserved() {
        let sys = one_chiplet(default_pc(), 4, CoolingSpec::default());
        let c = CoolingSpec::default();
        let temps = [65.0];
        let p1 = power_from_activity(&synthetic_activity(1.0), &sys, &temps, &c, 0.01);
        let p2 = power_from_activity(&synthetic_activity(2.0), &sys, &temps, &c, 0.01);
        assert_eq!(p1.n_bins(), 3);
        assert!((p1.dynamic_w[0][0] - 200.0).abs() < 1e-9);
        assert!((p1.dynamic_w[0][1] - 100.0).abs() < 1e-9);
        assert!((p1.dynamic_w[0][2] - 200.0).abs() < 1e-9);
        for bin in 0..3 {
            assert!((p2.dynamic_w[0][bin] - 2.0 * p1.dynamic_w[0][bin]).abs() < 1e-9);
        }
        let static_w: f64 = p1.static_w.iter().sum();
        assert!((p1.energy_j() - (4.0 + static_w * 0.025)).abs() < 1e-9);
    }

    #[test]
    fn transient_settles_to_steady() {
        let c = CoolingSpec::default();
        let sys = one_chiplet(default_pc(), 4, c.clone());
        let n = blocks(&sys).len();
        let power = PowerTrace {
            blocks: blocks(&sys),
            bin_s: 1.0,
            duration_s: 20.0,
            dynamic_w: (0..n)
                .map(|b| vec![if b == 0 { 80.0 } else { 0.0 }; 20])
                .collect(),
            static_w: vec![0.0; n],
            pump_w: 0.0,
        };
        let steady = solve_steady(&sys, &power.mean_w(), &c, 0).unwrap();
        let start = ThermalState {
            temps_c: vec![45.0; n],
            ..steady.clone()
        };
        let traj = solve_transient(&sys, &power, &c, 0, &start).unwrap();
        assert_eq!(traj.len(), 20);
        assert!(traj[0][0] < traj[19][0]);
        for (a, b) in traj[19].iter().zip(&steady.temps_c) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    fn small_pd(cooling: CoolingSpec) -> ValidatedSystem {
        let mut spec = default_system();
        for c in spec.chiplet_types.values_mut() {
            c.pe_grid = (2, 2);
        }
        spec.placement = vec![
            Placement {
                name: "PC1".into(),
                kind: "PC".into(),
                x: 0,
                y: 0,
            },
            Placement {
                name: "DC1".into(),
                kind: "DC".into(),
                x: 1,
                y: 0,
            },
        ];
        spec.cooling = cooling;
        validate_system(&spec).unwrap()
    }

    fn run_fp(sys: &ValidatedSystem) -> Result<FixedPointResult, ThermalError> {
        let m = ModelSpec::tiny();
        let cache = OpCache::new();
        let plan = build_pd_plan(sys, &m, (2, 1), (2, 1), &PlanConfig::default(), &cache).unwrap();
        let t = gen_trace(
            TraceSource::Code,
            2000.0,
            30,
            5,
            &TraceConfig {
                max_len: 256,
                ..Default::default()
            },
        )
        .unwrap();
        thermal_fixed_point(
            sys,
            &m,
            &plan,
            &t,
            &SimConfig::default(),
            &FixedPointConfig {
                bin_s: 1e-4,
                ..Default::default()
            },
            &cache,
        )
    }

    #[test]
    fn fixed_point_is_consistent() {
        let hot = CoolingSpec {
            r_coldplate_c_per_w: 0.5,
            t_limit_c: 70.0,
            ..Default::default()
        };
        let sys = small_pd(hot.clone());
        let r = run_fp(&sys).unwrap();
        assert!(r.history.len() > 1 && r.history.len() <= 20);
        assert!(r.history.last().unwrap() < &0.5);
        let solved = r.state.chiplet_temps(sys.chiplets.len());
        for (u, s) in r.used_temps.iter().zip(&solved) {
            assert!((u - s).abs() < 0.5);
        }
        let m = &r.metrics;
        let books = m.dynamic_energy_j + m.static_energy_j + m.pump_energy_j;
        assert!((r.power.energy_j() - books).abs() <= 1e-3 * books);
        assert!((m.energy_j - books).abs() <= 1e-9 * books);
        // Chosen level is the first meeting the limit.
        let mean = r.power.mean_w();
        for lvl in 0..r.state.flow_level {
            assert!(solve_steady(&sys, &mean, &hot, lvl).unwrap().max_c() > hot.t_limit_c);
        }
        if !r.limit_exceeded {
            assert!(r.state.max_c() <= hot.t_limit_c);
        }
        // Damped iteration contracts once it gets going.
        assert!(
            r.history.windows(2).skip(1).all(|w| w[1] <= w[0]),
            "{:?}",
            r.history
        );
    }

    #[test]
    fn near_zero_resistance_pins_ambient() {
        let cold = CoolingSpec {
            r_coldplate_c_per_w: 1e-9,
            r_dram_layer_c_per_w: 1e-9,
            r_bond_c_per_w: 1e-9,
            ..Default::default()
        };
        let r = run_fp(&small_pd(cold)).unwrap();
        assert_eq!(r.history.len(), 1);
        assert!(r.state.temps_c.iter().all(|t| (t - 45.0).abs() < 1e-3));
    }
}
