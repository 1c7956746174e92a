//! Alpha-beta communication costs on the two-level mesh (PE network inside a
//! chiplet, package network between chiplets) and star collectives.
//!
//! PE positions are flattened into one global grid: `chiplet * pitch + pe`,
//! where `pitch` is the largest PE grid in the system. Crossing a chiplet
//! boundary costs one package hop plus `edge_hops` on-chip hops to reach the
//! die-to-die port.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwspec::ValidatedSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("collective over an empty group")]
    EmptyGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeshCoord {
    /// (x, y) on the package mesh.
    pub chiplet: (u32, u32),
    /// (x, y) within the chiplet: x is the column, y the row.
    pub pe: (u32, u32),
}

impl MeshCoord {
    pub fn new(chiplet: (u32, u32), pe: (u32, u32)) -> Self {
        MeshCoord { chiplet, pe }
    }

    pub fn global(&self, pitch: (u32, u32)) -> (i64, i64) {
        (
            (self.chiplet.0 * pitch.0 + self.pe.0) as i64,
            (self.chiplet.1 * pitch.1 + self.pe.1) as i64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Noc,
    Nop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollectiveKind {
    Multicast,
    Reduce,
    /// Always lowered to a reduce followed by a multicast.
    AllReduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommParams {
    pub alpha_noc: f64,
    pub alpha_nop: f64,
    pub beta_noc: f64,
    pub beta_nop: f64,
    pub edge_hops: u32,
    pub noc_pj_per_byte_hop: f64,
    pub nop_pj_per_byte_hop: f64,
    pub pitch: (u32, u32),
}

impl CommParams {
    pub fn from_system(sys: &ValidatedSystem) -> Self {
        let s = &sys.spec;
        CommParams {
            alpha_noc: s.alpha_noc_s_per_byte,
            alpha_nop: s.alpha_nop_s_per_byte,
            beta_noc: s.beta_noc_s_per_hop,
            beta_nop: s.beta_nop_s_per_hop,
            edge_hops: s.edge_hops,
            noc_pj_per_byte_hop: s.noc_pj_per_byte_hop,
            nop_pj_per_byte_hop: s.nop_pj_per_byte_hop,
            pitch: sys.pitch,
        }
    }

    fn alpha(&self, crosses: bool) -> f64 {
        if crosses {
            self.alpha_noc.max(self.alpha_nop)
        } else {
            self.alpha_noc
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommCost {
    /// Seconds.
    pub latency: f64,
    /// Joules.
    pub energy: f64,
}

impl std::ops::Add for CommCost {
    type Output = CommCost;
    fn add(self, o: CommCost) -> CommCost {
        CommCost {
            latency: self.latency + o.latency,
            energy: self.energy + o.energy,
        }
    }
}

pub fn link_delay(msg_bytes: f64, hops: u32, level: Level, p: &CommParams) -> f64 {
    let (a, b) = match level {
        Level::Noc => (p.alpha_noc, p.beta_noc),
        Level::Nop => (p.alpha_nop, p.beta_nop),
    };
    a * msg_bytes + b * hops as f64
}

/// `(noc_hops, nop_hops)` between two PEs.
pub fn manhattan(a: &MeshCoord, b: &MeshCoord, p: &CommParams) -> (u32, u32) {
    let nop = a.chiplet.0.abs_diff(b.chiplet.0) + a.chiplet.1.abs_diff(b.chiplet.1);
    if nop == 0 {
        return (a.pe.0.abs_diff(b.pe.0) + a.pe.1.abs_diff(b.pe.1), 0);
    }
    let (ga, gb) = (a.global(p.pitch), b.global(p.pitch));
    let l1 = ((ga.0 - gb.0).abs() + (ga.1 - gb.1).abs()) as u32;
    (l1 - nop + nop * p.edge_hops, nop)
}

fn hop_delay(noc: u32, nop: u32, p: &CommParams) -> f64 {
    p.beta_noc * noc as f64 + p.beta_nop * nop as f64
}

fn hop_energy(msg_bytes: f64, noc: u32, nop: u32, p: &CommParams) -> f64 {
    msg_bytes * (noc as f64 * p.noc_pj_per_byte_hop + nop as f64 * p.nop_pj_per_byte_hop) * 1e-12
}

/// Point-to-point transfer of `msg_bytes` from `a` to `b`.
pub fn transfer_cost(a: &MeshCoord, b: &MeshCoord, msg_bytes: f64, p: &CommParams) -> CommCost {
    if a == b {
        return CommCost::default();
    }
    let (noc, nop) = manhattan(a, b, p);
    CommCost {
        latency: p.alpha(nop > 0) * msg_bytes + hop_delay(noc, nop, p),
        energy: hop_energy(msg_bytes, noc, nop, p),
    }
}

/// Star reduce or multicast rooted at `center`: the center port serializes
/// one stream per other member, and the farthest member sets the hop term:
/// `alpha * m * (|G| - 1) + max_member(beta_noc * noc + beta_nop * nop)`.
fn star(group: &[MeshCoord], center: &MeshCoord, msg_bytes: f64, p: &CommParams) -> CommCost {
    let mut worst = 0.0f64;
    let mut crosses = false;
    let mut energy = 0.0;
    for g in group {
        let (noc, nop) = manhattan(g, center, p);
        worst = worst.max(hop_delay(noc, nop, p));
        crosses |= nop > 0;
        energy += hop_energy(msg_bytes, noc, nop, p);
    }
    let others = group.len().saturating_sub(1) as f64;
    CommCost {
        latency: p.alpha(crosses) * msg_bytes * others + worst,
        energy,
    }
}

pub fn collective_cost(
    kind: CollectiveKind,
    group: &[MeshCoord],
    center: &MeshCoord,
    msg_bytes: f64,
    p: &CommParams,
) -> Result<CommCost, CommError> {
    if group.is_empty() {
        return Err(CommError::EmptyGroup);
    }
    if group.len() == 1 {
        return Ok(CommCost::default());
    }
    let one = star(group, center, msg_bytes, p);
    Ok(match kind {
        CollectiveKind::Reduce | CollectiveKind::Multicast => one,
        CollectiveKind::AllReduce => one + one,
    })
}

/// Member closest (global L1) to the midpoint of the group's bounding box;
/// ties go to the earliest member.
pub fn center_member(group: &[MeshCoord], p: &CommParams) -> Option<MeshCoord> {
    let gs: Vec<(i64, i64)> = group.iter().map(|g| g.global(p.pitch)).collect();
    let (x0, x1) = (gs.iter().map(|g| g.0).min()?, gs.iter().map(|g| g.0).max()?);
    let (y0, y1) = (gs.iter().map(|g| g.1).min()?, gs.iter().map(|g| g.1).max()?);
    // Doubled coordinates keep the half-integer midpoint exact.
    let (cx, cy) = (x0 + x1, y0 + y1);
    let best = gs
        .iter()
        .enumerate()
        .min_by_key(|(i, g)| ((2 * g.0 - cx).abs() + (2 * g.1 - cy).abs(), *i))?;
    Some(group[best.0])
}
