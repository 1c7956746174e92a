//! Two-level design-space exploration: chiplet configurations ranked by
//! Pareto dominance per DRAM capacity, then whole systems assembled from
//! chiplet candidates, simulated under SLOs and ranked by tokens per joule.

mod chiplet;
mod system;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chiplet::{
    chiplet_dse, ChipletDseConfig, ChipletDseResult, ChipletPoint, ParamChoice, ParamDomain,
    CHIPLET_DIRS,
};
pub use system::{
    evaluate_candidate, quick_trace, system_dse, Candidate, CandidateEval, Constraint, Layout,
    SystemDseConfig, SystemDseResult, SystemSpace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DseError {
    #[error("parameter domain is empty: {0}")]
    EmptyDomain(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("no feasible design among {evaluated} evaluated; binding constraints: {histogram:?}")]
    NoFeasibleDesign {
        evaluated: usize,
        histogram: BTreeMap<Constraint, usize>,
    },
    #[error("i/o: {0}")]
    Io(String),
}

/// Service-level and safety limits a system design must meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SloSpec {
    /// Mean time to first token, seconds.
    pub ttft_max: f64,
    /// Mean time between tokens, seconds.
    pub tbt_max: f64,
    pub t_limit_c: f64,
    /// Nameplate power of the whole rack.
    pub p_rack_w: f64,
    /// DRAM left for KV after weights, bytes.
    pub kv_budget_bytes: f64,
}

impl Default for SloSpec {
    fn default() -> Self {
        SloSpec {
            ttft_max: 2.0,
            tbt_max: 0.1,
            t_limit_c: 95.0,
            p_rack_w: 10_000.0,
            kv_budget_bytes: 8.0 * (1u64 << 30) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dir {
    Max,
    Min,
}

/// `a` is at least as good as `b` everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64], dirs: &[Dir]) -> bool {
    let mut strict = false;
    for ((x, y), d) in a.iter().zip(b).zip(dirs) {
        let (x, y) = match d {
            Dir::Max => (*x, *y),
            Dir::Min => (-*x, -*y),
        };
        if x < y {
            return false;
        }
        strict |= x > y;
    }
    strict
}

/// Indices of non-dominated points, ascending. Points are visited in
/// lexicographic best-first order, so only earlier front members can
/// dominate the current one.
pub fn pareto_indices(points: &[Vec<f64>], dirs: &[Dir]) -> Vec<usize> {
    let key = |p: &Vec<f64>| -> Vec<f64> {
        p.iter()
            .zip(dirs)
            .map(|(x, d)| if *d == Dir::Max { -*x } else { *x })
            .collect()
    };
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(&points[a]), key(&points[b]));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(a.cmp(&b))
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front
            .iter()
            .any(|&f| dominates(&points[f], &points[i], dirs))
        {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

/// Points within a relative `eps` of some front member on every objective.
pub fn near_pareto(points: &[Vec<f64>], dirs: &[Dir], front: &[usize], eps: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            front.iter().any(|&f| {
                points[i]
                    .iter()
                    .zip(&points[f])
                    .zip(dirs)
                    .all(|((x, y), d)| match d {
                        Dir::Max => *x >= y * (1.0 - eps),
                        Dir::Min => *x <= y * (1.0 + eps),
                    })
            })
        })
        .collect()
}
