//! Subcommand implementations. Each one resolves its configs, runs the
//! library, writes typed files plus a manifest, and prints a short table.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lamosim::compmodel::GemmShape;
use lamosim::d3flow::{evaluate_all, search_with, FlowError, ReusePolicy, SearchContext};
use lamosim::dse::{
    chiplet_dse, dominates, system_dse, ChipletDseConfig, DseError, ParamDomain, SloSpec,
    SystemDseConfig, SystemSpace,
};
use lamosim::hwspec::{
    default_dc, default_pc, default_system, load_chiplet, load_model, load_system, validate_system,
    ConfigError, ModelSpec, SystemSpec, ValidatedSystem,
};
use lamosim::parmap::{build_pd_plan, search_pd_mapping, PdPlan, PlanConfig};
use lamosim::servesim::{
    gen_trace, roofline_check, simulate, BatchingMode, SimConfig, SimError, Trace, TraceConfig,
    TraceSource,
};
use lamosim::thermal::{
    solve_transient, thermal_fixed_point, write_power_csv, FixedPointConfig, ThermalError,
};
use lamosim::workload::OpCache;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::manifest::{OutDir, RunManifest};
use crate::{
    Batching, CliError, Command, Common, DataflowArgs, DefaultsArgs, DseArgs, GenTraceArgs, Level,
    MapArgs, SimulateArgs, SystemModel, TraceArgs,
};

pub const CONFIG_DIR_ENV: &str = "LAMOSIM_CONFIG_DIR";

pub fn run(cmd: Command) -> Result<(), CliError> {
    let start = Instant::now();
    let (out, timing) = match cmd {
        Command::Dataflow(a) => (dataflow(&a)?, a.common.timing),
        Command::Map(a) => (map(&a)?, a.common.timing),
        Command::Simulate(a) => (simulate_cmd(&a)?, a.common.timing),
        Command::Dse(a) => (dse(&a)?, a.common.timing),
        Command::GenTrace(a) => (gen_trace_cmd(&a)?, a.common.timing),
        Command::Defaults(a) => (defaults(&a)?, a.common.timing),
    };
    let (dir, result) = out;
    dir.finish(timing.then(|| start.elapsed().as_secs_f64()))?;
    result
}

/// A command's output directory plus the outcome to report after the
/// manifest is written (infeasible runs still leave a manifest).
type Outcome = (OutDir, Result<(), CliError>);

fn config_err(e: ConfigError) -> CliError {
    CliError::Usage(e.to_string())
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::RooflineViolation { .. } => CliError::Internal(e.to_string()),
        SimError::KvOverflow { .. } | SimError::Flow(_) | SimError::Mem(_) => {
            CliError::Infeasible(e.to_string())
        }
        _ => CliError::Usage(e.to_string()),
    }
}

fn thermal_err(e: ThermalError) -> CliError {
    match e {
        ThermalError::Sim(s) => sim_err(s),
        ThermalError::NonConvergence { .. } => CliError::Infeasible(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

/// Explicit path, else `<config dir>/<name>` if present, else the built-in.
fn resolve<T>(
    explicit: Option<&Path>,
    name: &str,
    load: impl Fn(&Path) -> Result<T, ConfigError>,
    builtin: impl FnOnce() -> T,
) -> Result<T, CliError> {
    if let Some(p) = explicit {
        return load(p).map_err(config_err);
    }
    if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
        let p = PathBuf::from(dir).join(name);
        if p.exists() {
            return load(&p).map_err(config_err);
        }
    }
    Ok(builtin())
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: p.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: p, source })
}

/// Preset name, or a path to a model JSON.
fn model(arg: &str) -> Result<ModelSpec, CliError> {
    if let Some(m) = ModelSpec::preset(arg) {
        return Ok(m);
    }
    let m = load_model(Path::new(arg)).map_err(|e| match e {
        ConfigError::Io { .. } => CliError::Usage(format!(
            "`{arg}` is neither a model preset nor a readable file: {e}"
        )),
        e => config_err(e),
    })?;
    m.validate()
        .map_err(|e| CliError::Usage(format!("model `{arg}`: {e}")))?;
    Ok(m)
}

fn system(sm: &SystemModel) -> Result<(SystemSpec, ValidatedSystem), CliError> {
    let spec = resolve(
        sm.system.as_deref(),
        "system.json",
        load_system,
        default_system,
    )?;
    let sys = validate_system(&spec).map_err(|e| CliError::Usage(format!("system: {e}")))?;
    Ok((spec, sys))
}

/// Synthetic source name, else a trace CSV.
fn trace(t: &TraceArgs) -> Result<Trace, CliError> {
    match TraceSource::parse(&t.trace) {
        Ok(src) if src != TraceSource::File => {
            gen_trace(src, t.rate, t.requests, t.seed, &TraceConfig::default()).map_err(sim_err)
        }
        _ => Trace::read_csv(Path::new(&t.trace)).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn pair(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("expected TPxPP, got `{s}`"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

fn shape(s: &str) -> Result<GemmShape, CliError> {
    let dims: Vec<u64> = s
        .split('x')
        .map(|d| d.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("expected MxNxK, got `{s}`")))?;
    match dims[..] {
        [m, n, k] => GemmShape::new(m, n, k).map_err(|e| CliError::Usage(e.to_string())),
        _ => Err(CliError::Usage(format!("expected MxNxK, got `{s}`"))),
    }
}

fn out_dir(common: &Common, manifest: RunManifest) -> Result<OutDir, CliError> {
    OutDir::create(&common.out, manifest)
}

fn table(rows: &[(&str, String)]) {
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<w$}  {v}");
    }
}

#[derive(Serialize)]
struct PolicyBaseline {
    policy: ReusePolicy,
    latency_s: Option<f64>,
    energy_j: Option<f64>,
}

#[derive(Serialize)]
struct DataflowReport<'a> {
    temp_c: f64,
    dtype_bytes: u32,
    result: &'a lamosim::d3flow::DataflowResult,
    /// Best mapping under each single fixed policy; empty when infeasible.
    baselines: Vec<PolicyBaseline>,
}

fn dataflow(a: &DataflowArgs) -> Result<Outcome, CliError> {
    let chiplet = resolve(a.pe.as_deref(), "pc.json", load_chiplet, default_pc)?;
    chiplet
        .validate("pe")
        .map_err(|e| CliError::Usage(format!("chiplet: {e}")))?;
    let m = model(&a.model)?;
    let s = shape(&a.shape)?;
    let ctx = SearchContext::single_core(&chiplet, m.dtype_bytes, a.temp)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut man = RunManifest::new("dataflow", None);
    man.param("shape", s);
    man.param("temp_c", a.temp);
    man.param("dump_all", a.dump_all);
    man.config("chiplet", &chiplet);
    man.config("model", &m);
    let mut dir = out_dir(&a.common, man)?;
    let res = match search_with(&s, &ctx, None) {
        Ok(r) => r,
        Err(e @ FlowError::NoFeasibleMapping { .. }) => {
            dir.manifest.status = "infeasible".into();
            return Ok((dir, Err(CliError::Infeasible(e.to_string()))));
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let baselines = ReusePolicy::ALL
        .iter()
        .map(|&p| {
            let r = search_with(&s, &ctx, Some(p)).ok();
            PolicyBaseline {
                policy: p,
                latency_s: r.as_ref().map(|r| r.latency),
                energy_j: r.as_ref().map(|r| r.energy),
            }
        })
        .collect();
    dir.write_json(
        "dataflow.json",
        &DataflowReport {
            temp_c: a.temp,
            dtype_bytes: m.dtype_bytes,
            result: &res,
            baselines,
        },
    )?;
    if a.dump_all {
        let all = evaluate_all(&s, &ctx).map_err(|e| CliError::Internal(e.to_string()))?;
        if all.len() as u64 != res.evaluated {
            return Err(CliError::Internal(format!(
                "{} candidates dumped, {} searched",
                all.len(),
                res.evaluated
            )));
        }
        let mut text =
            String::from("t_m,t_n,t_k,policy,latency_s,energy_j,compute_latency_s,dram_bits\n");
        for c in &all {
            let m = &c.mapping;
            text.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{:e}\n",
                m.t_m,
                m.t_n,
                m.t_k,
                m.policy.name(),
                c.latency,
                c.energy,
                c.compute_latency,
                c.dram_bits
            ));
        }
        std::fs::write(dir.path("candidates.csv"), text)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        dir.record("candidates.csv")?;
    }
    dir.manifest.note("evaluated", res.evaluated);
    table(&[
        ("shape", format!("{}x{}x{}", s.m, s.n, s.k)),
        (
            "tile",
            format!("{}x{}x{}", res.best.t_m, res.best.t_n, res.best.t_k),
        ),
        ("policy", res.best.policy.name().to_string()),
        ("latency_s", format!("{:.6e}", res.latency)),
        ("energy_j", format!("{:.6e}", res.energy)),
        ("evaluated", res.evaluated.to_string()),
    ]);
    Ok((dir, Ok(())))
}

fn map(a: &MapArgs) -> Result<Outcome, CliError> {
    let (spec, sys) = system(&a.sm)?;
    let m = model(&a.sm.model)?;
    let t = trace(&a.trace)?;
    let (mean_in, mean_out) = t.mean_lengths();
    let cfg = PlanConfig {
        seed: a.trace.seed,
        ..PlanConfig::default()
    };
    let cache = OpCache::new();
    let mut man = RunManifest::new("map", Some(a.trace.seed));
    man.config("system", &spec);
    man.config("model", &m);
    man.config("trace", &t);
    let mut dir = out_dir(&a.common, man)?;
    let choice = match search_pd_mapping(&sys, &m, mean_in, mean_out, &cfg, &cache) {
        Ok(c) => c,
        Err(e) => {
            dir.manifest.status = "infeasible".into();
            return Ok((dir, Err(CliError::Infeasible(e.to_string()))));
        }
    };
    let pre = (choice.prefill.tp, choice.prefill.pp);
    let dec = (choice.decode.tp, choice.decode.pp);
    let plan = build_pd_plan(&sys, &m, pre, dec, &cfg, &cache)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    dir.write_json("choice.json", &choice)?;
    dir.write_json("plan.json", &plan)?;
    dir.manifest.note("prefill", pre);
    dir.manifest.note("decode", dec);
    table(&[
        ("prefill (tp, pp)", format!("{pre:?}")),
        ("decode (tp, pp)", format!("{dec:?}")),
        ("prefill replicas", plan.prefill.pipelines.len().to_string()),
        ("decode replicas", plan.decode.pipelines.len().to_string()),
    ]);
    Ok((dir, Ok(())))
}

fn simulate_cmd(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let (spec, sys) = system(&a.sm)?;
    let m = model(&a.sm.model)?;
    let t = trace(&a.trace)?;
    let cache = OpCache::new();
    let plan: PdPlan = match &a.plan {
        Some(p) => load_json(p).map_err(config_err)?,
        None => {
            let (pre, dec) = a.mapping.split_once(',').ok_or_else(|| {
                CliError::Usage(format!("expected TPxPP,TPxPP, got `{}`", a.mapping))
            })?;
            let cfg = PlanConfig {
                seed: a.trace.seed,
                ..PlanConfig::default()
            };
            build_pd_plan(&sys, &m, pair(pre)?, pair(dec)?, &cfg, &cache)
                .map_err(|e| CliError::Infeasible(e.to_string()))?
        }
    };
    let cfg = SimConfig {
        mode: match a.batching {
            Batching::Continuous => BatchingMode::Continuous,
            Batching::Static => BatchingMode::Static,
        },
        record_activity: true,
        ..SimConfig::default()
    };
    let mut man = RunManifest::new("simulate", Some(a.trace.seed));
    man.param("thermal", a.thermal);
    man.param("sim", cfg);
    man.config("system", &spec);
    man.config("model", &m);
    man.config("plan", &plan);
    man.config("trace", &t);
    let mut dir = out_dir(&a.common, man)?;
    let (metrics, activity) = if a.thermal {
        let fp = thermal_fixed_point(
            &sys,
            &m,
            &plan,
            &t,
            &cfg,
            &FixedPointConfig::default(),
            &cache,
        )
        .map_err(thermal_err)?;
        let level = *fp.flow_levels.last().expect("at least one iteration");
        let temps = solve_transient(&sys, &fp.power, &sys.spec.cooling, level, &fp.state)
            .map_err(thermal_err)?;
        write_power_csv(&sys, &fp.power, &temps, &dir.path("thermal.csv")).map_err(thermal_err)?;
        dir.record("thermal.csv")?;
        dir.manifest.note("thermal_iterations", fp.history.len());
        dir.manifest.note("max_temp_c", fp.state.max_c());
        dir.manifest.note("flow_level", level);
        dir.manifest.note("limit_exceeded", fp.limit_exceeded);
        (fp.metrics, fp.activity)
    } else {
        let temps = vec![sys.spec.cooling.ambient_c.max(65.0); sys.chiplets.len()];
        simulate(&sys, &m, &plan, &t, &cfg, &temps, &cache).map_err(sim_err)?
    };
    roofline_check(&activity, &sys).map_err(sim_err)?;
    dir.write_json("metrics.json", &metrics)?;
    metrics
        .write_csv(&dir.path("requests.csv"))
        .map_err(sim_err)?;
    dir.record("requests.csv")?;
    if !a.no_activity {
        activity
            .write_csv(&dir.path("activity.csv"))
            .map_err(sim_err)?;
        dir.record("activity.csv")?;
    }
    dir.manifest.note("tokens", metrics.tokens);
    dir.manifest.note("tpt", metrics.tpt);
    table(&[
        ("requests", metrics.requests.len().to_string()),
        ("tokens", metrics.tokens.to_string()),
        ("makespan_s", format!("{:.4}", metrics.makespan)),
        ("tpt_tok_s", format!("{:.2}", metrics.tpt)),
        ("mean_ttft_s", format!("{:.4e}", metrics.mean_ttft)),
        ("p99_ttft_s", format!("{:.4e}", metrics.p99_ttft)),
        ("mean_tbt_s", format!("{:.4e}", metrics.mean_tbt)),
        ("energy_j", format!("{:.4e}", metrics.energy_j)),
        ("tokens_per_j", format!("{:.4e}", metrics.tokens_per_joule)),
    ]);
    Ok((dir, Ok(())))
}

fn dse(a: &DseArgs) -> Result<Outcome, CliError> {
    if let Some(j) = a.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which `main` never creates.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    match a.level {
        Level::Chiplet => dse_chiplet(a),
        Level::System => dse_system(a),
    }
}

fn dse_chiplet(a: &DseArgs) -> Result<Outcome, CliError> {
    let domain = resolve(
        a.domain.as_deref(),
        "domain.json",
        load_json,
        ParamDomain::default,
    )?;
    let template = resolve(None, "pc.json", load_chiplet, default_pc)?;
    let cfg = ChipletDseConfig {
        budget_samples: a.budget.unwrap_or(200),
        seed: a.seed,
        template,
        ..Default::default()
    };
    let mut man = RunManifest::new("dse-chiplet", Some(a.seed));
    man.param("config", &cfg);
    man.config("domain", &domain);
    let mut dir = out_dir(&a.common, man)?;
    let r = match chiplet_dse(&domain, &cfg) {
        Ok(r) => r,
        Err(DseError::EmptyDomain(e)) => {
            return Err(CliError::Usage(format!("parameter domain is empty: {e}")))
        }
        Err(e) => return Err(CliError::Internal(e.to_string())),
    };
    let feasible = r.points.iter().filter(|p| p.metrics.is_some()).count();
    dir.manifest.note("evaluations", r.points.len());
    dir.manifest.note("feasible", feasible);
    if feasible == 0 {
        dir.manifest.status = "infeasible".into();
        dir.write_json("chiplet_dse.json", &r)?;
        return Ok((
            dir,
            Err(CliError::Infeasible(format!(
                "none of {} sampled chiplets fits its budgets",
                r.points.len()
            ))),
        ));
    }
    for (cap, front) in &r.fronts {
        for &i in front {
            let me = r.points[i].objectives().expect("front points are feasible");
            let beaten = r.points.iter().any(|q| {
                q.params.dram_capacity_gib == *cap
                    && q.objectives()
                        .is_some_and(|o| dominates(&o, &me, &lamosim::dse::CHIPLET_DIRS))
            });
            if beaten {
                return Err(CliError::Internal(format!("front point {i} is dominated")));
            }
        }
    }
    dir.write_json("chiplet_dse.json", &r)?;
    r.write_pareto_csv(&dir.path("pareto.csv"))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    dir.record("pareto.csv")?;
    println!("{:<12}  {:>6}  {:>6}", "capacity_gib", "front", "near");
    for (cap, f) in &r.fronts {
        println!("{cap:<12}  {:>6}  {:>6}", f.len(), r.near[cap].len());
    }
    Ok((dir, Ok(())))
}

fn dse_system(a: &DseArgs) -> Result<Outcome, CliError> {
    let space = if a.toy {
        SystemSpace::toy()
    } else {
        let builtin = || SystemSpace::around_default(vec![default_pc()], vec![default_dc()]);
        resolve(a.domain.as_deref(), "space.json", load_json, builtin)?
    };
    let slo: SloSpec = resolve(a.slo.as_deref(), "slo.json", load_json, SloSpec::default)?;
    let m = model(
        a.model
            .as_deref()
            .unwrap_or(if a.toy { "tiny" } else { "qwq-class" }),
    )?;
    let tcfg = TraceConfig {
        max_len: if a.toy { 256 } else { 4096 },
        ..Default::default()
    };
    let rate = if a.toy { 20_000.0 } else { 4.0 };
    let t = gen_trace(TraceSource::Code, rate, a.requests, a.seed, &tcfg).map_err(sim_err)?;
    let cfg = SystemDseConfig {
        slo,
        budget: a.budget.unwrap_or(64),
        seed: a.seed,
        nameplate: a.nameplate,
        ..Default::default()
    };
    let mut man = RunManifest::new("dse-system", Some(a.seed));
    man.param("budget", cfg.budget);
    man.param("nameplate", cfg.nameplate);
    man.param("toy", a.toy);
    man.config("space", &space);
    man.config("slo", &slo);
    man.config("model", &m);
    man.config("trace", &t);
    let mut dir = out_dir(&a.common, man)?;
    let r = match system_dse(&space, &m, &t, &cfg) {
        Ok(r) => r,
        Err(DseError::NoFeasibleDesign {
            evaluated,
            histogram,
        }) => {
            dir.manifest.status = "infeasible".into();
            dir.manifest.note("evaluations", evaluated);
            dir.manifest.note("binding_constraints", &histogram);
            let h: Vec<String> = histogram
                .iter()
                .map(|(c, n)| format!("{c:?}: {n}"))
                .collect();
            let msg = format!(
                "no feasible design among {evaluated} evaluated; binding constraints {}",
                h.join(", ")
            );
            return Ok((dir, Err(CliError::Infeasible(msg))));
        }
        Err(DseError::InvalidSpace(e)) => {
            return Err(CliError::Usage(format!("invalid search space: {e}")))
        }
        Err(e) => return Err(CliError::Internal(e.to_string())),
    };
    for &id in &r.ranking {
        let e = r.eval(id).expect("ranked");
        let ok = e.mean_ttft <= slo.ttft_max
            && e.mean_tbt <= slo.tbt_max
            && e.t_max_c <= slo.t_limit_c
            && e.nameplate_w <= slo.p_rack_w
            && e.kv_capacity_bytes >= slo.kv_budget_bytes
            && e.objective.is_some_and(|o| o.is_finite() && o > 0.0);
        if !ok {
            return Err(CliError::Internal(format!(
                "ranked design {id} fails its constraints"
            )));
        }
    }
    dir.manifest.note("evaluations", r.evals.len());
    dir.manifest.note("space_size", r.space_size);
    dir.manifest.note("feasible", r.ranking.len());
    dir.write_json("system_dse.json", &r)?;
    r.write_ranking_csv(&dir.path("ranking.csv"))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    dir.record("ranking.csv")?;
    println!(
        "{:<4}  {:>6}  {:>4}  {:>4}  {:>8}  {:>8}  {:>12}",
        "rank", "id", "n_pc", "n_dc", "prefill", "decode", "objective"
    );
    for (k, &id) in r.ranking.iter().take(10).enumerate() {
        let e = r.eval(id).expect("ranked");
        let c = &e.candidate;
        println!(
            "{:<4}  {:>6}  {:>4}  {:>4}  {:>8}  {:>8}  {:>12.4e}",
            k + 1,
            id,
            c.n_pc,
            c.n_dc,
            format!("{}x{}", c.pre.0, c.pre.1),
            format!("{}x{}", c.dec.0, c.dec.1),
            e.objective.expect("ranked")
        );
    }
    Ok((dir, Ok(())))
}

fn gen_trace_cmd(a: &GenTraceArgs) -> Result<Outcome, CliError> {
    let src = TraceSource::parse(&a.source)
        .ok()
        .filter(|s| *s != TraceSource::File)
        .ok_or_else(|| CliError::Usage(format!("unknown synthetic source `{}`", a.source)))?;
    let cfg = TraceConfig {
        sigma: a.sigma,
        max_len: a.max_len,
    };
    let t = gen_trace(src, a.rate, a.requests, a.seed, &cfg)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut man = RunManifest::new("gen-trace", Some(a.seed));
    man.param("source", src.name());
    man.param("rate", a.rate);
    man.param("requests", a.requests);
    man.param("trace_config", cfg);
    let mut dir = out_dir(&a.common, man)?;
    t.write_csv(&dir.path("trace.csv")).map_err(sim_err)?;
    dir.record("trace.csv")?;
    let (i, o) = t.mean_lengths();
    table(&[
        ("requests", t.requests.len().to_string()),
        ("mean_input", format!("{i:.1}")),
        ("mean_output", format!("{o:.1}")),
        (
            "duration_s",
            format!("{:.3}", t.requests.last().map_or(0.0, |r| r.arrival)),
        ),
    ]);
    Ok((dir, Ok(())))
}

fn defaults(a: &DefaultsArgs) -> Result<Outcome, CliError> {
    let mut dir = out_dir(&a.common, RunManifest::new("defaults", None))?;
    dir.write_json("pc.json", &default_pc())?;
    dir.write_json("dc.json", &default_dc())?;
    dir.write_json("system.json", &default_system())?;
    dir.write_json("model-tiny.json", &ModelSpec::tiny())?;
    dir.write_json("model-qwq-class.json", &ModelSpec::qwq_class())?;
    dir.write_json("slo.json", &SloSpec::default())?;
    dir.write_json("domain.json", &ParamDomain::default())?;
    dir.write_json("toy-space.json", &SystemSpace::toy())?;
    let names: Vec<String> = dir.manifest.outputs.keys().cloned().collect();
    for n in &names {
        println!("{}", dir.path(n).display());
    }
    Ok((dir, Ok(())))
}
