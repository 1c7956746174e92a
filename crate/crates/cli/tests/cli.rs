use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lamosim");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("LAMOSIM_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    let mut v: Vec<&str> = args.to_vec();
    v.extend(["--out", out.to_str().unwrap()]);
    run(&v)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for sub in [
        "",
        "dataflow",
        "map",
        "simulate",
        "dse",
        "gen-trace",
        "defaults",
    ] {
        let args: Vec<&str> = if sub.is_empty() {
            vec!["--help"]
        } else {
            vec![sub, "--help"]
        };
        let out = run(&args);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let name = if sub.is_empty() { "lamosim" } else { sub };
        let path = golden.join(format!("{name}.txt"));
        if update {
            std::fs::write(&path, &text).unwrap();
        } else {
            assert_eq!(
                text,
                read(path),
                "`{name} --help` changed; rerun with UPDATE_GOLDEN=1 if intended"
            );
        }
    }
}

#[test]
fn every_flag_is_documented() {
    for sub in [
        "dataflow",
        "map",
        "simulate",
        "dse",
        "gen-trace",
        "defaults",
    ] {
        let text = String::from_utf8(run(&[sub, "--help"]).stdout).unwrap();
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            let doc = line.trim_start().split_once("  ").map(|(_, d)| d.trim());
            let flag = line.split_whitespace().next().unwrap();
            let has_doc = doc.is_some_and(|d| !d.is_empty() && !d.starts_with('['))
                || matches!(flag, "--help" | "--version")
                || text
                    .lines()
                    .skip_while(|l| *l != line)
                    .nth(1)
                    .is_some_and(|n| n.starts_with("          "));
            assert!(has_doc, "{sub}: `{line}` lacks a description");
        }
    }
}

#[test]
fn dataflow_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("df");
    let r = run_in(&out, &["dataflow", "--shape", "1x1x1", "--dump-all"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = read(out.join("candidates.csv"));
    // One tile and every policy fits in SRAM.
    assert_eq!(csv.lines().count(), 1 + 4);
    let m = manifest(&out);
    assert_eq!(m["summary"]["evaluated"], 4);
    assert!(m["outputs"]["candidates.csv"].is_string());
    assert!(m.get("wall_time_s").is_none());

    let r = run_in(
        &dir.path().join("x"),
        &["dataflow", "--shape", "4x4x4", "--pe", "no/such/pe.json"],
    );
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no/such/pe.json"));
    let r = run_in(&dir.path().join("x"), &["dataflow", "--shape", "4x4"]);
    assert_eq!(r.status.code(), Some(2));
    let r = run(&["dataflow", "--bogus"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn dataflow_avoids_full_reuse_with_small_sram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg");
    assert!(run_in(&cfg, &["defaults"]).status.success());
    let mut pc: serde_json::Value = serde_json::from_str(&read(cfg.join("pc.json"))).unwrap();
    pc["pe"]["sram_capacity_bytes"] = 16384.into();
    let pe = dir.path().join("small.json");
    std::fs::write(&pe, pc.to_string()).unwrap();
    let out = dir.path().join("df");
    let r = run_in(
        &out,
        &[
            "dataflow",
            "--shape",
            "1x4096x4096",
            "--pe",
            pe.to_str().unwrap(),
        ],
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(out.join("dataflow.json"))).unwrap();
    assert_ne!(v["result"]["best"]["policy"], "Aru");
    assert_ne!(v["result"]["best"]["policy"], "ARU");
}

#[test]
fn config_dir_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg");
    assert!(run_in(&cfg, &["defaults"]).status.success());
    let mut pc: serde_json::Value = serde_json::from_str(&read(cfg.join("pc.json"))).unwrap();
    pc["pe"]["sram_capacity_bytes"] = 16384.into();
    std::fs::write(cfg.join("pc.json"), pc.to_string()).unwrap();
    let run_df = |out: &Path, env: Option<&Path>| {
        let mut c = Command::new(BIN);
        c.args([
            "dataflow",
            "--shape",
            "64x64x64",
            "--out",
            out.to_str().unwrap(),
        ])
        .env_remove("LAMOSIM_CONFIG_DIR");
        if let Some(e) = env {
            c.env("LAMOSIM_CONFIG_DIR", e);
        }
        assert!(c.output().unwrap().status.success());
        manifest(out)["config_hashes"]["chiplet"].clone()
    };
    let a = run_df(&dir.path().join("a"), Some(&cfg));
    let b = run_df(&dir.path().join("b"), None);
    assert_ne!(a, b);
}

#[test]
fn simulate_files_and_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--model",
        "tiny",
        "--requests",
        "20",
        "--rate",
        "200",
        "--thermal",
    ];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let r = run_in(d, &args);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in [
        "metrics.json",
        "activity.csv",
        "thermal.csv",
        "requests.csv",
        "manifest.json",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(read(a.join("manifest.json")), read(b.join("manifest.json")));
    let entries = std::fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
        .count();
    assert_eq!(entries, 1);

    let r = run_in(
        &dir.path().join("x"),
        &["simulate", "--model", "tiny", "--trace", "missing.csv"],
    );
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn seeds_change_metrics_not_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut docs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        let r = run_in(
            &out,
            &[
                "simulate",
                "--model",
                "tiny",
                "--requests",
                "15",
                "--rate",
                "500",
                "--seed",
                seed,
                "--no-activity",
            ],
        );
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        docs.push(
            serde_json::from_str::<serde_json::Value>(&read(out.join("metrics.json"))).unwrap(),
        );
    }
    assert_ne!(docs[0], docs[1]);
    let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&docs[0]), keys(&docs[1]));
}

#[test]
fn dse_budget_infeasible_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    let r = run_in(
        &out,
        &["dse", "--level", "system", "--toy", "--budget", "8"],
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(manifest(&out)["summary"]["evaluations"], 8);
    assert!(out.join("ranking.csv").exists() && out.join("system_dse.json").exists());

    let small = dir.path().join("j1");
    let many = dir.path().join("j4");
    for (d, j) in [(&small, "1"), (&many, "4")] {
        let r = run_in(
            d,
            &[
                "dse", "--level", "system", "--toy", "--budget", "5", "--seed", "3", "--jobs", j,
            ],
        );
        assert!(r.status.success());
    }
    for f in ["manifest.json", "ranking.csv", "system_dse.json"] {
        assert_eq!(read(small.join(f)), read(many.join(f)), "{f}");
    }

    let slo = dir.path().join("slo.json");
    std::fs::write(&slo, r#"{"ttft_max":1e-12,"tbt_max":0.1,"t_limit_c":95,"p_rack_w":10000,"kv_budget_bytes":1000}"#).unwrap();
    let inf = dir.path().join("inf");
    let r = run_in(
        &inf,
        &[
            "dse",
            "--level",
            "system",
            "--toy",
            "--slo",
            slo.to_str().unwrap(),
        ],
    );
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("Ttft"));
    assert_eq!(manifest(&inf)["status"], "infeasible");
}

#[test]
fn chiplet_dse_front_is_non_dominated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chip");
    let r = run_in(
        &out,
        &[
            "dse", "--level", "chiplet", "--budget", "200", "--seed", "5",
        ],
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = read(out.join("pareto.csv"));
    let mut rows: Vec<(u32, bool, [f64; 3])> = Vec::new();
    for l in text.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        rows.push((
            f[0].parse().unwrap(),
            f[2] == "true",
            [
                f[3].parse().unwrap(),
                f[4].parse().unwrap(),
                f[5].parse().unwrap(),
            ],
        ));
    }
    assert!(rows.iter().any(|r| r.1));
    let doc: serde_json::Value = serde_json::from_str(&read(out.join("chiplet_dse.json"))).unwrap();
    let pool: Vec<(u32, [f64; 3])> = doc["points"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| !p["metrics"].is_null())
        .map(|p| {
            let m = &p["metrics"];
            let o = [
                m["peak_flops"].as_f64().unwrap() / 1e12,
                m["peak_bw"].as_f64().unwrap() / 1e12,
                m["peak_power"].as_f64().unwrap(),
            ];
            (p["params"]["dram_capacity_gib"].as_u64().unwrap() as u32, o)
        })
        .collect();
    let dom = |a: &[f64; 3], b: &[f64; 3]| {
        a[0] >= b[0] && a[1] >= b[1] && a[2] <= b[2] && (a[0] > b[0] || a[1] > b[1] || a[2] < b[2])
    };
    let mut brute = 0;
    for (cap, o) in &pool {
        if !pool.iter().any(|(c, q)| c == cap && dom(q, o)) {
            brute += 1;
        }
    }
    assert_eq!(rows.iter().filter(|r| r.1).count(), brute);
    let r = run_in(
        &dir.path().join("again"),
        &[
            "dse", "--level", "chiplet", "--budget", "200", "--seed", "5",
        ],
    );
    assert!(r.status.success());
    assert_eq!(text, read(dir.path().join("again/pareto.csv")));
}

#[test]
fn gen_trace_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let t = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        assert!(run_in(
            &out,
            &[
                "gen-trace",
                "--source",
                "reason",
                "--requests",
                "30",
                "--seed",
                seed
            ]
        )
        .status
        .success());
        read(out.join("trace.csv"))
    };
    assert_eq!(t("1", "a"), t("1", "b"));
    assert_ne!(t("1", "a"), t("2", "c"));
    assert_eq!(
        run(&["gen-trace", "--source", "poetry"]).status.code(),
        Some(2)
    );
}
