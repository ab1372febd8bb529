use serde_json::{json, Value};
use unstable_lab::error::LabResult;

use crate::artifacts::write_summary;
use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
enum Status {
    Pass,
    Fail,
    NotRun,
}

impl Status {
    fn label(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::NotRun => "not run",
        }
    }
}

struct Assertion {
    name: &'static str,
    status: Status,
    detail: String,
}

fn load(config: &ExperimentConfig, name: &str) -> Option<Value> {
    let path = config.output_dir.join(name);
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn check(name: &'static str, source: &Option<Value>, eval: impl Fn(&Value) -> (bool, String)) -> Assertion {
    match source {
        None => Assertion { name, status: Status::NotRun, detail: "artifact missing".into() },
        Some(value) => {
            let (ok, detail) = eval(value);
            Assertion { name, status: if ok { Status::Pass } else { Status::Fail }, detail }
        }
    }
}

fn f(value: &Value, pointer: &str) -> Option<f64> {
    value.pointer(pointer).and_then(Value::as_f64)
}

/// Aggregates the sub-reports, prints a summary table, and exits nonzero if
/// a required assertion fails.
pub fn run(config: &ExperimentConfig) -> LabResult<bool> {
    let lyapunov = load(config, "lyapunov_summary.json");
    let psi = load(config, "psi_summary.json");
    let benchmark = load(config, "benchmark_summary.json");
    let bounds = load(config, "bounds_report.json");

    let mut assertions = Vec::new();

    assertions.push(check("spectrum_structure", &lyapunov, |v| {
        let n0 = v.pointer("/n0").and_then(Value::as_u64);
        let lambdas: Vec<f64> = v
            .pointer("/lambdas_per_step")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .unwrap_or_default();
        let tol = f(v, "/neutral_tol").unwrap_or(0.005);
        let pos = lambdas.iter().filter(|&&l| l > tol).count();
        let neutral = lambdas.iter().filter(|&&l| (-tol..=tol).contains(&l)).count();
        let neg = lambdas.iter().filter(|&&l| l < -tol).count();
        (
            n0 == Some(4) && pos == 3 && neutral == 1 && neg == 6,
            format!("n0 = {n0:?}, {pos} positive / {neutral} neutral / {neg} negative"),
        )
    }));
    assertions.push(check("blv_flv_consistency", &lyapunov, |v| {
        let gap = f(v, "/blv_flv_worst_gap").unwrap_or(f64::INFINITY);
        (gap < 0.005, format!("worst exponent gap {gap:.2e}"))
    }));
    assertions.push(check("psi_min_at_least_one", &psi, |v| {
        let min = f(v, "/psi_min").unwrap_or(f64::NEG_INFINITY);
        (min >= 1.0, format!("min psi = {min:.6}"))
    }));
    assertions.push(check("psi_mean5_band", &psi, |v| {
        let mean = f(v, "/means/mean_psi_5").unwrap_or(f64::NAN);
        ((400.0..=1600.0).contains(&mean), format!("mean psi5 = {mean:.1} vs [400, 1600]"))
    }));
    assertions.push(check("lle_std5_band", &psi, |v| {
        let std = f(v, "/lle_std/mode_5").unwrap_or(f64::NAN);
        ((0.12..=0.165).contains(&std), format!("lle std mode 5 = {std:.4} vs [0.12, 0.165]"))
    }));
    assertions.push(check("benchmark_monotone_in_d", &benchmark, |v| {
        let cells = v.pointer("/cells").and_then(Value::as_array).cloned().unwrap_or_default();
        let mut ok = true;
        let mut detail = String::from("non-increasing in d");
        for kind in ["blv", "flv", "random_orthogonal", "fixed_rows"] {
            let mut series: Vec<(u64, f64)> = cells
                .iter()
                .filter(|c| c.pointer("/kind").and_then(Value::as_str) == Some(kind))
                .filter_map(|c| {
                    Some((c.pointer("/d")?.as_u64()?, c.pointer("/mean_frobenius")?.as_f64()?))
                })
                .collect();
            series.sort_by_key(|(d, _)| *d);
            if series.windows(2).any(|w| w[1].1 > w[0].1) {
                ok = false;
                detail = format!("{kind} mean increases with d");
            }
        }
        (ok, detail)
    }));
    assertions.push(check("benchmark_blv_le_random", &benchmark, |v| {
        let cells = v.pointer("/cells").and_then(Value::as_array).cloned().unwrap_or_default();
        let mean_of = |kind: &str, d: u64| -> Option<f64> {
            cells
                .iter()
                .find(|c| {
                    c.pointer("/kind").and_then(Value::as_str) == Some(kind)
                        && c.pointer("/d").and_then(Value::as_u64) == Some(d)
                })
                .and_then(|c| c.pointer("/mean_frobenius").and_then(Value::as_f64))
        };
        let mut ok = true;
        let mut detail = String::from("blv at or below random at every shared d");
        for d in 1..=16u64 {
            if let (Some(b), Some(r)) = (mean_of("blv", d), mean_of("random_orthogonal", d)) {
                if b > r {
                    ok = false;
                    detail = format!("blv {b:.3} above random {r:.3} at d = {d}");
                }
            }
        }
        (ok, detail)
    }));
    assertions.push(check("benchmark_psi5_exceeds_filtered", &benchmark, |v| {
        let psi5 = v
            .pointer("/psi_means")
            .and_then(Value::as_array)
            .and_then(|a| a.first())
            .and_then(Value::as_f64)
            .unwrap_or(f64::NAN);
        let cells = v.pointer("/cells").and_then(Value::as_array).cloned().unwrap_or_default();
        let worst = cells
            .iter()
            .filter_map(|c| c.pointer("/mean_frobenius").and_then(Value::as_f64))
            .fold(f64::NEG_INFINITY, f64::max);
        (psi5 > worst, format!("psi5 mean {psi5:.1} vs largest filtered mean {worst:.1}"))
    }));
    assertions.push(check("criterion_full_obs_satisfied", &bounds, |v| {
        let satisfied = v
            .pointer("/full_observation/criterion/satisfied")
            .and_then(Value::as_bool)
            .unwrap_or(false);
        let ratio = f(v, "/full_observation/criterion/ratio").unwrap_or(f64::NAN);
        (satisfied, format!("ratio {ratio:.3}"))
    }));
    assertions.push(check("criterion_unobserved_violated", &bounds, |v| {
        let satisfied = v
            .pointer("/unobserved/criterion/satisfied")
            .and_then(Value::as_bool)
            .unwrap_or(true);
        let growth = v
            .pointer("/unobserved/unbounded_growth")
            .and_then(Value::as_bool)
            .unwrap_or(false);
        (
            !satisfied && growth,
            format!("criterion satisfied = {satisfied}, unbounded growth = {growth}"),
        )
    }));
    assertions.push(check("sandwich_margins_ok", &bounds, |v| {
        let min = f(v, "/sandwich/min_relative_margin").unwrap_or(f64::NEG_INFINITY);
        (min >= -1e-8, format!("min relative margin {min:.2e}"))
    }));

    println!("{:-<72}", "");
    println!("{:<34} {:>8}  detail", "assertion", "status");
    println!("{:-<72}", "");
    for a in &assertions {
        println!("{:<34} {:>8}  {}", a.name, a.status.label(), a.detail);
    }
    println!("{:-<72}", "");

    let report = json!({
        "config_hash": config.numerics_hash()?,
        "generated_at": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "assertions": assertions
            .iter()
            .map(|a| json!({ "name": a.name, "status": a.status.label(), "detail": a.detail }))
            .collect::<Vec<_>>(),
        "required": config.report.required,
    });
    let path = write_summary(config, "report.json", &report)?;
    println!("wrote {}", path.display());

    let mut required_failed = false;
    for name in &config.report.required {
        if let Some(a) = assertions.iter().find(|a| a.name == name.as_str()) {
            if a.status == Status::Fail {
                eprintln!("required assertion failed: {name}");
                required_failed = true;
            }
        } else {
            eprintln!("warning: unknown required assertion '{name}'");
        }
    }
    Ok(required_failed)
}
