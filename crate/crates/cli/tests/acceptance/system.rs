//! Criteria 6 to 11: serving simulation, mapping, thermal loop, DSE and
//! reproducibility, on the default and toy configurations.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lamosim::compmodel::vpu_cycles;
use lamosim::d3flow::{search_with, SearchContext, TileGrid};
use lamosim::dse::{
    chiplet_dse, evaluate_candidate, system_dse, ChipletDseConfig, ParamDomain, SloSpec,
    SystemDseConfig, SystemSpace,
};
use lamosim::hwspec::{
    default_dc, default_pc, default_system, derive_chiplet_metrics, single_chiplet_system,
    validate_system, ModelSpec, Role, ValidatedSystem,
};
use lamosim::memmodel::{refresh_bin, refresh_derate};
use lamosim::parmap::{build_pd_plan, search_pd_mapping, PdPlan, PlanConfig};
use lamosim::servesim::{
    gen_trace, roofline_check, simulate, BatchingMode, Request, SimConfig, Trace, TraceConfig,
    TraceSource,
};
use lamosim::thermal::{
    blocks, leakage_factor, solve_steady, thermal_fixed_point, BlockKind, FixedPointConfig,
};
use lamosim::workload::{core_split, prefill_layer_ops, OpCache, Work};

use crate::{ensure, Check};

fn default_sys() -> ValidatedSystem {
    validate_system(&default_system()).expect("default system validates")
}

fn default_plan(sys: &ValidatedSystem, model: &ModelSpec) -> Result<PdPlan, String> {
    build_pd_plan(
        sys,
        model,
        (8, 1),
        (4, 2),
        &PlanConfig::default(),
        &OpCache::new(),
    )
    .map_err(|e| e.to_string())
}

fn synthetic(src: TraceSource, n: usize) -> Trace {
    gen_trace(src, 4.0, n, 7, &TraceConfig::default()).expect("valid trace")
}

pub fn roofline_consistency() -> Check {
    let sys = default_sys();
    let model = ModelSpec::qwq_class();
    let plan = default_plan(&sys, &model)?;
    let temps = vec![65.0; sys.chiplets.len()];
    let mut out = Vec::new();
    for src in TraceSource::SYNTHETIC {
        let t = synthetic(src, 200);
        let (_, act) = simulate(
            &sys,
            &model,
            &plan,
            &t,
            &SimConfig::default(),
            &temps,
            &OpCache::new(),
        )
        .map_err(|e| format!("{}: {e}", src.name()))?;
        let rep = roofline_check(&act, &sys).map_err(|e| format!("{}: {e}", src.name()))?;
        let worst = rep.entries.iter().map(|e| e.ratio()).fold(0.0, f64::max);
        out.push(format!(
            "{} {} op classes, max achieved/bound {worst:.3}",
            src.name(),
            rep.entries.len()
        ));
    }
    Ok(format!("zero violations; {}", out.join("; ")))
}

/// Prefill latency of one request composed from per-op searches, without
/// the simulator's layer costing.
fn hand_prefill(sys: &ValidatedSystem, model: &ModelSpec, len: u64) -> f64 {
    let c = &sys.chiplets[0].spec;
    let derate = refresh_derate(&c.dram, 65.0);
    let mut layer = 0.0;
    for op in prefill_layer_ops(model, 1, &[len]) {
        layer += match op.work {
            Work::Gemm(s) => {
                let (core, active) = core_split(&s, c.pe.n_core);
                let ctx = SearchContext {
                    pe: c.pe.clone(),
                    dram: c.dram.clone(),
                    clock_hz: c.clock_hz,
                    s_buf: c.pe.sram_capacity_bytes,
                    target_banks: c.pe.n_mc,
                    share: active as f64,
                    dtype_bytes: model.dtype_bytes,
                    derate,
                    grid: TileGrid::Pow2,
                };
                search_with(&core, &ctx, None).expect("feasible").latency
            }
            Work::Vector(n) => {
                vpu_cycles(n.div_ceil(c.pe.n_core as u64), &c.pe) as f64 / c.clock_hz
            }
            Work::AllReduce(_) => unreachable!("no collectives at tp 1"),
        };
    }
    layer * model.n_layers as f64
}

pub fn serving_semantics() -> Check {
    let model = ModelSpec::tiny();
    let mut pc = default_pc();
    pc.pe_grid = (1, 1);
    let single = validate_system(&single_chiplet_system(pc)).map_err(|e| e.to_string())?;
    let plan = build_pd_plan(
        &single,
        &model,
        (1, 1),
        (1, 1),
        &PlanConfig::default(),
        &OpCache::new(),
    )
    .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for len in [1u64, 7, 64, 200] {
        let t = Trace::from_requests(vec![Request {
            id: 0,
            arrival: 0.5,
            input_len: len,
            output_len: 4,
        }])
        .map_err(|e| e.to_string())?;
        let (m, _) = simulate(
            &single,
            &model,
            &plan,
            &t,
            &SimConfig::default(),
            &[65.0],
            &OpCache::new(),
        )
        .map_err(|e| e.to_string())?;
        let want = hand_prefill(&single, &model, len);
        let rel = ((m.requests[0].ttft - want) / want).abs();
        worst = worst.max(rel);
        ensure(rel <= 1e-9, || {
            format!("len {len}: ttft {} vs hand {want}", m.requests[0].ttft)
        })?;
    }

    let mut spec = default_system();
    for c in spec.chiplet_types.values_mut() {
        c.pe_grid = (2, 2);
    }
    spec.placement
        .retain(|p| p.name == "PC1" || p.name == "DC1");
    spec.placement[1].x = 1;
    spec.placement[1].y = 0;
    let sys = validate_system(&spec).map_err(|e| e.to_string())?;
    let plan = build_pd_plan(
        &sys,
        &model,
        (2, 1),
        (1, 2),
        &PlanConfig::default(),
        &OpCache::new(),
    )
    .map_err(|e| e.to_string())?;
    let mut t = gen_trace(
        TraceSource::Reason,
        20_000.0,
        24,
        3,
        &TraceConfig {
            sigma: 1.0,
            max_len: 256,
        },
    )
    .unwrap();
    for r in &mut t.requests {
        r.input_len = r.input_len.min(256);
    }
    let cfg = SimConfig {
        max_decode_batch: 4,
        ..Default::default()
    };
    let temps = [65.0, 65.0];
    let (cont, _) = simulate(&sys, &model, &plan, &t, &cfg, &temps, &OpCache::new())
        .map_err(|e| e.to_string())?;
    let (stat, _) = simulate(
        &sys,
        &model,
        &plan,
        &t,
        &SimConfig {
            mode: BatchingMode::Static,
            ..cfg
        },
        &temps,
        &OpCache::new(),
    )
    .map_err(|e| e.to_string())?;
    for r in &cont.requests {
        let gaps = r.e2e - r.ttft;
        ensure(
            r.e2e == r.ttft + gaps
                && (r.e2e - (r.finish - r.arrival)).abs() <= 1e-12 * r.finish.max(1.0),
            || format!("request {}: e2e {} vs ttft {} + gaps", r.id, r.e2e, r.ttft),
        )?;
        let composed = r.ttft + (r.output_len - 1) as f64 * r.tbt_mean;
        ensure((r.e2e - composed).abs() <= 1e-12 * r.e2e, || {
            format!("request {}: e2e {} vs {composed}", r.id, r.e2e)
        })?;
    }
    ensure(cont.tpt >= stat.tpt, || {
        format!("continuous {} < static {}", cont.tpt, stat.tpt)
    })?;
    Ok(format!(
        "ttft max relative error {worst:.1e}; e2e identity on {} requests; tpt continuous {:.0} >= static {:.0}",
        cont.requests.len(),
        cont.tpt,
        stat.tpt
    ))
}

pub fn pd_mapping_trend() -> Check {
    let sys = default_sys();
    let model = ModelSpec::qwq_class();
    let cache = OpCache::new();
    let mut out = Vec::new();
    for src in TraceSource::SYNTHETIC {
        let (i, o) = synthetic(src, 200).mean_lengths();
        let c = search_pd_mapping(&sys, &model, i, o, &PlanConfig::default(), &cache)
            .map_err(|e| e.to_string())?;
        ensure(c.prefill.tp >= c.decode.tp, || {
            format!(
                "{}: prefill ({}, {}) vs decode ({}, {})",
                src.name(),
                c.prefill.tp,
                c.prefill.pp,
                c.decode.tp,
                c.decode.pp
            )
        })?;
        out.push(format!(
            "{} ({},{})/({},{})",
            src.name(),
            c.prefill.tp,
            c.prefill.pp,
            c.decode.tp,
            c.decode.pp
        ));
    }
    Ok(out.join("; "))
}

pub fn thermal_fixed_point_check() -> Check {
    let sys = default_sys();
    let model = ModelSpec::qwq_class();
    let plan = default_plan(&sys, &model)?;
    let cooling = &sys.spec.cooling;
    let mut out = Vec::new();
    for src in TraceSource::SYNTHETIC {
        let t = synthetic(src, 100);
        let r = thermal_fixed_point(
            &sys,
            &model,
            &plan,
            &t,
            &SimConfig::default(),
            &FixedPointConfig::default(),
            &OpCache::new(),
        )
        .map_err(|e| format!("{}: {e}", src.name()))?;
        let last = *r.history.last().unwrap();
        ensure(r.history.len() <= 20 && last < 0.5, || {
            format!(
                "{}: {} iterations, last change {last}",
                src.name(),
                r.history.len()
            )
        })?;
        let steady = solve_steady(&sys, &r.power.mean_w(), cooling, r.state.flow_level)
            .map_err(|e| e.to_string())?;
        let solved = steady.chiplet_temps(sys.chiplets.len());
        for (k, (u, s)) in r.used_temps.iter().zip(&solved).enumerate() {
            let d = &sys.chiplets[k].spec.dram;
            ensure(refresh_bin(d, *u) == refresh_bin(d, *s), || {
                format!("{}: chiplet {k} refresh bin differs", src.name())
            })?;
            let lu = leakage_factor(cooling.leakage_model, *u);
            let ls = leakage_factor(cooling.leakage_model, *s);
            ensure((lu - ls).abs() / ls <= 0.005 * 0.5, || {
                format!("{}: chiplet {k} leakage {lu} vs {ls}", src.name())
            })?;
        }
        out.push(format!(
            "{} {} iters max {:.1} C",
            src.name(),
            r.history.len(),
            r.state.max_c()
        ));
    }
    // Equal logic power on a single PC and a single DC column.
    let mut hotter = Vec::new();
    for c in [default_pc(), default_dc()] {
        let s = validate_system(&single_chiplet_system(c)).map_err(|e| e.to_string())?;
        let p: Vec<f64> = blocks(&s)
            .iter()
            .map(|b| {
                if b.kind == BlockKind::Logic {
                    150.0
                } else {
                    0.0
                }
            })
            .collect();
        hotter.push(
            solve_steady(&s, &p, cooling, 0)
                .map_err(|e| e.to_string())?
                .max_c(),
        );
    }
    ensure(hotter[1] >= hotter[0], || {
        format!(
            "DC {:.2} C below PC {:.2} C at equal power",
            hotter[1], hotter[0]
        )
    })?;
    Ok(format!(
        "{}; at 150 W DC {:.1} C >= PC {:.1} C",
        out.join("; "),
        hotter[1],
        hotter[0]
    ))
}

fn brute_front(objs: &[(u32, [f64; 3])]) -> Vec<usize> {
    let dom = |a: &[f64; 3], b: &[f64; 3]| {
        a[0] >= b[0] && a[1] >= b[1] && a[2] <= b[2] && (a[0] > b[0] || a[1] > b[1] || a[2] < b[2])
    };
    (0..objs.len())
        .filter(|&i| {
            !objs
                .iter()
                .any(|(c, o)| *c == objs[i].0 && dom(o, &objs[i].1))
        })
        .collect()
}

pub fn dse_correctness() -> Check {
    let mut pools = Vec::new();
    for seed in 0..3 {
        let r = chiplet_dse(
            &ParamDomain::default(),
            &ChipletDseConfig {
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        ensure(r.points.len() <= 200, || "pool larger than 200".into())?;
        let feasible: Vec<_> = r.points.iter().filter(|p| p.metrics.is_some()).collect();
        let objs: Vec<(u32, [f64; 3])> = feasible
            .iter()
            .map(|p| {
                let m = p.metrics.as_ref().unwrap();
                (
                    p.params.dram_capacity_gib,
                    [m.peak_flops, m.peak_bw, m.peak_power],
                )
            })
            .collect();
        let want: Vec<usize> = brute_front(&objs)
            .into_iter()
            .map(|i| feasible[i].id)
            .collect();
        let mut got: Vec<usize> = r.fronts.values().flatten().copied().collect();
        got.sort_unstable();
        ensure(got == want, || {
            format!("seed {seed}: front {got:?} vs brute force {want:?}")
        })?;
        pools.push(format!("{}/{}", want.len(), feasible.len()));
    }

    let t = Instant::now();
    let space = SystemSpace::toy();
    let model = ModelSpec::tiny();
    let trace = lamosim::dse::quick_trace(0);
    let slo = SloSpec {
        kv_budget_bytes: 1e6,
        ..Default::default()
    };
    let cfg = SystemDseConfig {
        budget: 8,
        slo,
        ..Default::default()
    };
    let r = system_dse(&space, &model, &trace, &cfg).map_err(|e| e.to_string())?;
    let demo_s = t.elapsed().as_secs_f64();
    ensure(demo_s < 300.0, || format!("toy search took {demo_s:.0} s"))?;
    let mut exhaustive: Vec<(f64, usize)> = (0..space.size())
        .filter_map(|id| {
            evaluate_candidate(&space, &space.candidate(id), &model, &trace, &cfg)
                .objective
                .map(|o| (o, id))
        })
        .collect();
    exhaustive.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let want: Vec<usize> = exhaustive.iter().map(|x| x.1).collect();
    ensure(r.ranking == want, || {
        format!("ranking {:?} vs exhaustive {want:?}", r.ranking)
    })?;

    // Rebuild, remap and resimulate every returned design.
    for &id in &r.ranking {
        let c = space.candidate(id);
        let mut spec = space.build_system(&c);
        spec.cooling.t_limit_c = slo.t_limit_c;
        let sys = validate_system(&spec).map_err(|e| format!("design {id}: {e}"))?;
        let plate: f64 = sys
            .chiplets
            .iter()
            .map(|ch| derive_chiplet_metrics(&ch.spec).peak_power)
            .sum();
        let cache = OpCache::new();
        let plan = build_pd_plan(&sys, &model, c.pre, c.dec, &cfg.plan, &cache)
            .map_err(|e| format!("design {id}: {e}"))?;
        let fp = thermal_fixed_point(
            &sys,
            &model,
            &plan,
            &trace,
            &cfg.sim,
            &cfg.fixed_point,
            &cache,
        )
        .map_err(|e| format!("design {id}: {e}"))?;
        let dc_bytes: f64 = sys
            .chiplets
            .iter()
            .filter(|ch| ch.spec.role == Role::Decode)
            .map(|ch| ch.spec.dram.capacity_bytes as f64)
            .sum();
        let kv = dc_bytes - plan.decode.pipelines.len() as f64 * model.weight_bytes();
        let m = &fp.metrics;
        ensure(
            m.mean_ttft <= slo.ttft_max
                && m.mean_tbt <= slo.tbt_max
                && fp.state.max_c() <= slo.t_limit_c
                && plate <= slo.p_rack_w
                && kv >= slo.kv_budget_bytes,
            || format!("design {id} violates a limit on re-check"),
        )?;
        let stored = r.eval(id).unwrap();
        ensure(stored.objective == Some(m.tokens_per_joule), || {
            format!("design {id}: objective not reproduced")
        })?;
    }
    Ok(format!(
        "chiplet fronts match brute force (front/feasible {}); toy ranking of {} equals exhaustive and re-checks; toy search {demo_s:.1} s",
        pools.join(", "),
        r.ranking.len()
    ))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lamosim")
}

fn cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("LAMOSIM_CONFIG_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))
    })
}

fn same_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let names = |d: &Path| -> Vec<String> {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    let (na, nb) = (names(a), names(b));
    ensure(na == nb, || {
        format!("{} vs {}: files {na:?} vs {nb:?}", a.display(), b.display())
    })?;
    for n in &na {
        ensure(
            std::fs::read(a.join(n)).unwrap() == std::fs::read(b.join(n)).unwrap(),
            || format!("{n} differs between {} and {}", a.display(), b.display()),
        )?;
    }
    Ok(na.len())
}

pub fn determinism() -> Check {
    let space = SystemSpace::toy();
    let model = ModelSpec::tiny();
    let trace = lamosim::dse::quick_trace(2);
    let cfg = SystemDseConfig {
        budget: 5,
        batch: 2,
        seed: 9,
        slo: SloSpec {
            kv_budget_bytes: 1e6,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut runs = Vec::new();
    for threads in [1, 3, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        runs.push(
            pool.install(|| system_dse(&space, &model, &trace, &cfg))
                .map_err(|e| e.to_string())?,
        );
    }
    ensure(runs.windows(2).all(|w| w[0] == w[1]), || {
        "system search depends on the worker count".into()
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |n: &str| dir.path().join(n);
    let commands: [(&str, Vec<&str>, Vec<&str>); 5] = [
        (
            "dataflow",
            vec!["dataflow", "--shape", "64x512x256", "--dump-all"],
            vec![],
        ),
        (
            "gen-trace",
            vec![
                "gen-trace",
                "--source",
                "longbench",
                "--requests",
                "50",
                "--seed",
                "4",
            ],
            vec![],
        ),
        (
            "simulate",
            vec![
                "simulate",
                "--model",
                "tiny",
                "--requests",
                "30",
                "--rate",
                "300",
                "--thermal",
            ],
            vec![],
        ),
        (
            "dse-chiplet",
            vec!["dse", "--level", "chiplet", "--seed", "2"],
            vec!["--jobs", "1"],
        ),
        (
            "dse-system",
            vec![
                "dse", "--level", "system", "--toy", "--budget", "6", "--seed", "1",
            ],
            vec!["--jobs", "1"],
        ),
    ];
    let mut files = 0;
    for (name, args, jobs1) in &commands {
        let (a, b) = (d(&format!("{name}-a")), d(&format!("{name}-b")));
        let mut first = args.clone();
        first.extend(jobs1);
        cli(&a, &first)?;
        let mut second = args.clone();
        if !jobs1.is_empty() {
            second.extend(["--jobs", "4"]);
        }
        cli(&b, &second)?;
        files += same_dirs(&a, &b)?;
    }
    Ok(format!("system search equal on 1/3/8 threads; {files} CLI output files byte-identical across reruns and --jobs 1 vs 4"))
}
