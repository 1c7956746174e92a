//! Criteria 1 to 5: dataflow search, TP grouping, stage placement, and the
//! temperature calibration.

use std::time::Instant;

use lamosim::commmodel::{CommParams, MeshCoord};
use lamosim::compmodel::GemmShape;
use lamosim::d3flow::{
    evaluate, search_with, CandidateCost, ReusePolicy, SearchContext, TileMapping,
};
use lamosim::hwspec::{default_dc, default_pc, default_system, validate_system, ModelSpec};
use lamosim::memmodel::refresh_derate;
use lamosim::parmap::{anneal_stages, tp_group, AnnealConfig, GroupingConfig, PlacementProblem};
use lamosim::servesim::effective_bw;
use lamosim::thermal::{leakage_factor, LeakageModel};
use lamosim::util::rng_for;
use lamosim::workload::{decode_layer_ops, prefill_layer_ops, Work};
use rand::Rng;

use crate::{ensure, Check};

/// Nested loops over the power-of-two grid with the documented tie-break:
/// latency, energy, tile, policy.
fn brute_dataflow(
    s: &GemmShape,
    ctx: &SearchContext,
    only: Option<ReusePolicy>,
) -> Option<CandidateCost> {
    let grid = |d: u64| {
        let mut v: Vec<u64> = (0..64).map(|e| 1u64 << e).take_while(|&x| x <= d).collect();
        if v.last() != Some(&d) {
            v.push(d);
        }
        v
    };
    let mut best: Option<CandidateCost> = None;
    for tm in grid(s.m) {
        for tn in grid(s.n) {
            for tk in grid(s.k) {
                for (rank, p) in ReusePolicy::ALL.into_iter().enumerate() {
                    if only.is_some_and(|o| o != p) {
                        continue;
                    }
                    let (a, b, c) = (tm * tk, tn * tk, tm * tn);
                    let elems = [a, b, c, a + b + c][rank];
                    if elems * ctx.dtype_bytes as u64 > ctx.s_buf {
                        continue;
                    }
                    let m = TileMapping {
                        t_m: tm,
                        t_n: tn,
                        t_k: tk,
                        policy: p,
                    };
                    let cost = evaluate(s, &m, ctx).expect("feasible pair costs");
                    let better = best.as_ref().is_none_or(|b| {
                        let key = |c: &CandidateCost| {
                            (
                                c.latency,
                                c.energy,
                                c.mapping.t_m,
                                c.mapping.t_n,
                                c.mapping.t_k,
                                c.mapping.policy,
                            )
                        };
                        key(&cost).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Less)
                    });
                    if better {
                        best = Some(cost);
                    }
                }
            }
        }
    }
    best
}

pub fn d3_optimality() -> Check {
    let t = Instant::now();
    let mut rng = rng_for(2024, "acceptance/d3");
    let base = SearchContext::single_core(&default_pc(), 2, 65.0).map_err(|e| e.to_string())?;
    let mut infeasible = 0;
    for i in 0..50 {
        let d = |r: &mut rand_chacha::ChaCha8Rng| 1u64 << r.random_range(0..=9);
        let s = GemmShape::new(d(&mut rng), d(&mut rng), d(&mut rng)).unwrap();
        let mut ctx = base.clone();
        ctx.s_buf = 1 << rng.random_range(6..=18);
        match (search_with(&s, &ctx, None), brute_dataflow(&s, &ctx, None)) {
            (Ok(r), Some(b)) => {
                ensure(r.best == b.mapping, || {
                    format!("shape {i} {s:?}: {:?} vs {:?}", r.best, b.mapping)
                })?;
                ensure(
                    r.latency.to_bits() == b.latency.to_bits()
                        && r.energy.to_bits() == b.energy.to_bits(),
                    || format!("shape {i}: cost differs"),
                )?;
            }
            (Err(_), None) => infeasible += 1,
            (r, b) => {
                return Err(format!(
                    "shape {i} {s:?}: search {:?} vs brute {:?}",
                    r.map(|x| x.best),
                    b.map(|x| x.mapping)
                ))
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s (limit 10 s)"))?;
    Ok(format!(
        "50 shapes ({infeasible} without a feasible tile) match exactly in {secs:.2} s"
    ))
}

pub fn d3_dominance() -> Check {
    let model = ModelSpec::qwq_class();
    let pc = SearchContext::single_core(&default_pc(), model.dtype_bytes, 65.0)
        .map_err(|e| e.to_string())?;
    let dc = SearchContext::single_core(&default_dc(), model.dtype_bytes, 65.0)
        .map_err(|e| e.to_string())?;
    let mut cases: Vec<(GemmShape, SearchContext, bool)> = Vec::new();
    for seq in [64u64, 512, 2048, 8192] {
        for op in prefill_layer_ops(&model, 8, &[seq]) {
            if let Work::Gemm(s) = op.work {
                cases.push((s, pc.clone(), false));
            }
        }
    }
    let mut tight = dc.clone();
    tight.s_buf = 16 << 10;
    for b in [1u64, 4, 16, 32] {
        for op in decode_layer_ops(&model, 4, &vec![2048; b as usize]) {
            if let Work::Gemm(s) = op.work {
                cases.push((s, dc.clone(), true));
                cases.push((s, tight.clone(), true));
            }
        }
    }
    let mut strict = 0;
    for (s, ctx, decode) in &cases {
        let best = search_with(s, ctx, None).map_err(|e| format!("{s:?}: {e}"))?;
        for p in ReusePolicy::ALL {
            let Ok(fixed) = search_with(s, ctx, Some(p)) else {
                continue;
            };
            ensure(best.latency <= fixed.latency, || {
                format!("{s:?}: {} worse than {} only", best.latency, p.name())
            })?;
        }
        if *decode && ctx.s_buf == tight.s_buf {
            if let Ok(aru) = search_with(s, ctx, Some(ReusePolicy::Aru)) {
                if best.latency < aru.latency {
                    strict += 1;
                }
            }
        }
    }
    ensure(strict >= 1, || {
        "no strict improvement over ARU-only on any constrained decode case".into()
    })?;
    Ok(format!("{} GEMMs never lose to a fixed policy; {strict} constrained decode cases beat ARU-only strictly", cases.len()))
}

/// Minimum span-plus-chain objective over every choice of floor(P/tp)
/// disjoint groups, by explicit enumeration.
fn brute_grouping(pts: &[(i64, i64)], tp: usize, w: f64) -> f64 {
    fn span_center(g: &[(i64, i64)]) -> (i64, (f64, f64)) {
        let (x0, x1) = (
            g.iter().map(|p| p.0).min().unwrap(),
            g.iter().map(|p| p.0).max().unwrap(),
        );
        let (y0, y1) = (
            g.iter().map(|p| p.1).min().unwrap(),
            g.iter().map(|p| p.1).max().unwrap(),
        );
        (
            x1 - x0 + y1 - y0,
            ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0),
        )
    }
    fn chain(c: &[(f64, f64)]) -> f64 {
        fn go(
            c: &[(f64, f64)],
            used: &mut Vec<bool>,
            last: usize,
            n: usize,
            acc: f64,
            best: &mut f64,
        ) {
            if n == c.len() {
                *best = best.min(acc);
                return;
            }
            for i in 0..c.len() {
                if !used[i] {
                    used[i] = true;
                    let d = (c[i].0 - c[last].0).abs() + (c[i].1 - c[last].1).abs();
                    go(c, used, i, n + 1, acc + d, best);
                    used[i] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        for s in 0..c.len() {
            let mut used = vec![false; c.len()];
            used[s] = true;
            go(c, &mut used, s, 1, 0.0, &mut best);
        }
        if c.is_empty() {
            0.0
        } else {
            best
        }
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        pts: &[(i64, i64)],
        used: &mut Vec<bool>,
        tp: usize,
        k: usize,
        spare: usize,
        groups: &mut Vec<Vec<(i64, i64)>>,
        w: f64,
        best: &mut f64,
    ) {
        let Some(first) = used.iter().position(|u| !u) else {
            if groups.len() == k {
                let sc: Vec<_> = groups.iter().map(|g| span_center(g)).collect();
                let spans: i64 = sc.iter().map(|x| x.0).sum();
                let centers: Vec<_> = sc.iter().map(|x| x.1).collect();
                *best = best.min(spans as f64 + w * chain(&centers));
            }
            return;
        };
        used[first] = true;
        if spare > 0 {
            rec(pts, used, tp, k, spare - 1, groups, w, best);
        }
        if groups.len() < k {
            let rest: Vec<usize> = (first + 1..pts.len()).filter(|&i| !used[i]).collect();
            let mut combos: Vec<Vec<usize>> = vec![vec![]];
            for _ in 0..tp - 1 {
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        let start = c
                            .last()
                            .map_or(0, |&l| rest.iter().position(|&r| r == l).unwrap() + 1);
                        rest[start..].iter().map(move |&r| {
                            let mut d = c.clone();
                            d.push(r);
                            d
                        })
                    })
                    .collect();
            }
            for c in combos {
                for &i in &c {
                    used[i] = true;
                }
                let mut g = vec![pts[first]];
                g.extend(c.iter().map(|&i| pts[i]));
                groups.push(g);
                rec(pts, used, tp, k, spare, groups, w, best);
                groups.pop();
                for &i in &c {
                    used[i] = false;
                }
            }
        }
        used[first] = false;
    }
    let k = pts.len() / tp;
    let mut best = f64::INFINITY;
    rec(
        pts,
        &mut vec![false; pts.len()],
        tp,
        k,
        pts.len() - k * tp,
        &mut Vec::new(),
        w,
        &mut best,
    );
    best
}

pub fn tp_exactness() -> Check {
    let t = Instant::now();
    let comm = CommParams::from_system(&validate_system(&default_system()).unwrap());
    let mut n = 0;
    for rows in 1..=9u32 {
        for cols in 1..=9u32 {
            if rows * cols > 9 || rows * cols < 2 {
                continue;
            }
            let pes: Vec<MeshCoord> = (0..rows)
                .flat_map(|y| (0..cols).map(move |x| MeshCoord::new((0, 0), (x, y))))
                .collect();
            let pts: Vec<(i64, i64)> = pes.iter().map(|p| p.global(comm.pitch)).collect();
            for tp in [2usize, 3] {
                if pes.len() < tp {
                    continue;
                }
                for w in [0.0, 0.1, 1.0] {
                    let g = tp_group(
                        &pes,
                        tp,
                        &GroupingConfig {
                            w_inter: w,
                            ..Default::default()
                        },
                        &comm,
                    )
                    .map_err(|e| e.to_string())?;
                    let b = brute_grouping(&pts, tp, w);
                    ensure(g.exact && (g.objective - b).abs() < 1e-9, || {
                        format!(
                            "{rows}x{cols} tp={tp} w={w}: {} vs exhaustive {b}",
                            g.objective
                        )
                    })?;
                    n += 1;
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s (limit 60 s)"))?;
    Ok(format!(
        "{n} mesh/tp/weight cases equal the exhaustive minimum in {secs:.2} s"
    ))
}

fn brute_placement(p: &PlacementProblem, n: usize) -> f64 {
    fn rec(p: &PlacementProblem, n: usize, cur: &mut Vec<usize>, best: &mut f64) {
        if cur.len() == n {
            *best = best.min(p.objective(cur));
            return;
        }
        for &g in &p.available {
            if !cur.contains(&g) {
                cur.push(g);
                rec(p, n, cur, best);
                cur.pop();
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(p, n, &mut Vec::new(), &mut best);
    best
}

pub fn placement_quality() -> Check {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for groups in 2..=8usize {
        for stages in 1..=groups.min(4) {
            let mut rng = rng_for(groups as u64 * 10 + stages as u64, "acceptance/placement");
            // Groups on a small grid: transfers grow with distance, stage
            // costs vary by group.
            let pos: Vec<(f64, f64)> = (0..groups)
                .map(|_| (rng.random_range(0..4) as f64, rng.random_range(0..4) as f64))
                .collect();
            let transfer = pos
                .iter()
                .map(|a| {
                    pos.iter()
                        .map(|b| 1e-4 * ((a.0 - b.0).abs() + (a.1 - b.1).abs()))
                        .collect()
                })
                .collect();
            let stage_cost = (0..stages)
                .map(|_| (0..groups).map(|_| rng.random_range(1e-3..2e-3)).collect())
                .collect();
            let p = PlacementProblem {
                stage_cost,
                transfer,
                available: (0..groups).collect(),
            };
            let oracle = brute_placement(&p, stages);
            for seed in 0..20 {
                let sa = anneal_stages(&p, stages, &AnnealConfig::default(), seed)
                    .map_err(|e| e.to_string())?;
                let gap = (sa.objective - oracle) / oracle;
                worst = worst.max(gap);
                ensure(gap <= 0.01, || {
                    format!(
                        "{groups} groups, {stages} stages, seed {seed}: gap {:.3}%",
                        100.0 * gap
                    )
                })?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} runs, worst gap {:.4}%", 100.0 * worst))
}

pub fn refresh_and_leakage() -> Check {
    let dram = default_pc().dram;
    let (cold, hot) = (refresh_derate(&dram, 65.0), refresh_derate(&dram, 105.0));
    let drop = 1.0 - (1.0 - hot) / (1.0 - cold);
    let k = cold / 0.05;
    let formula = 1.0 - (1.0 - 0.20 * k) / (1.0 - 0.05 * k);
    ensure((drop - formula).abs() < 1e-12, || {
        format!("drop {drop} differs from closed form {formula}")
    })?;
    ensure((drop - 0.10).abs() <= 0.01, || {
        format!("bandwidth drop {:.2}% outside 10% +/- 1%", 100.0 * drop)
    })?;
    // Same ratio through the probe the roofline audit uses.
    let pc = default_pc();
    let probe = 1.0 - effective_bw(&pc, pc.pe.n_mc, hot) / effective_bw(&pc, pc.pe.n_mc, cold);
    ensure((probe - drop).abs() <= 1e-6, || {
        format!("measured drop {probe} vs {drop}")
    })?;
    let mut leak = Vec::new();
    for m in [LeakageModel::Linear, LeakageModel::Exponential] {
        let up = leakage_factor(m, 105.0) / leakage_factor(m, 65.0) - 1.0;
        ensure((up - 0.20).abs() <= 0.005, || {
            format!("{m:?} leakage +{:.2}% outside 20% +/- 0.5%", 100.0 * up)
        })?;
        leak.push(up);
    }
    Ok(format!(
        "k={k:.2}: bandwidth drop {:.2}% at 105 C; leakage +{:.2}% linear, +{:.2}% exponential",
        100.0 * drop,
        100.0 * leak[0],
        100.0 * leak[1]
    ))
}
