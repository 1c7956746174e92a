//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the console; exits nonzero on any FAIL.

mod kernels;
mod system;

use std::time::Instant;

pub type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

/// Fails with `msg` unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("dataflow search equals brute force", kernels::d3_optimality),
        (
            "dataflow search dominates fixed policies",
            kernels::d3_dominance,
        ),
        ("TP grouping is exact", kernels::tp_exactness),
        (
            "stage placement within 1% of brute force",
            kernels::placement_quality,
        ),
        (
            "refresh derate and leakage calibration",
            kernels::refresh_and_leakage,
        ),
        (
            "roofline holds on the default system",
            system::roofline_consistency,
        ),
        ("serving semantics", system::serving_semantics),
        ("prefill TP at least decode TP", system::pd_mapping_trend),
        ("thermal fixed point", system::thermal_fixed_point_check),
        ("DSE correctness", system::dse_correctness),
        ("determinism", system::determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS {id:>2} {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name} ({secs:.1} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
