//! The three commands. Every run writes `summary.json` echoing the parsed
//! config, so artifacts are reproducible from their own output directory.

use std::fs;
use std::path::{Path, PathBuf};

use carnot_core::{
    barrier_validate, compare_runs, htype_barrier, htype_identities_check, points_on_cylinder,
    self_similarity_check, shrinking_cylinder, BarrierSpec, Error, ExactSolution, FlowTrace,
    GroupSpec, Point, ScalarField,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::config::{build_run, resolve_group, CompareConfig, RunConfig, VerifyConfig};
use crate::{Failure, Invocation, EXIT_CHECK_FAILED, EXIT_PASS, EXIT_SOLVER_ABORT};

pub fn run(inv: &Invocation) -> Result<i32, Failure> {
    let text = fs::read_to_string(&inv.config_path).map_err(|e| {
        Failure::config(format!("cannot read config `{}`: {e}", inv.config_path.display()))
    })?;
    let raw: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("config is not valid JSON: {e}")))?;
    match inv.command {
        "simulate" => simulate(inv, &raw),
        "verify" => verify(inv, &raw),
        "compare" => compare(inv, &raw),
        other => unreachable!("unknown subcommand {other}"),
    }
}

// ---------------------------------------------------------------------------
// simulate

fn simulate(inv: &Invocation, raw: &Value) -> Result<i32, Failure> {
    let cfg: RunConfig = parse_cfg(raw, "simulate")?;
    check_command_field(cfg.command.as_deref(), "simulate")?;
    let base = config_dir(&inv.config_path);
    let out = out_dir(inv, cfg.out.as_deref());
    let tol = resolve_tol(inv.tol_flag, cfg.tol)?;
    let resolved = build_run(&cfg, &base)?;

    match carnot_core::run(&resolved.problem) {
        Ok(trace) => {
            let snaps = trace.write_snapshots(&out).map_err(Failure::from)?;
            trace.write_diagnostics(&out).map_err(Failure::from)?;
            let last = trace.final_state();
            let steps = trace.series.last().map_or(0, |r| r.step);
            let mut summary = json!({
                "command": "simulate",
                "config": raw,
                "threads": threads_json(inv),
                "outcome": "completed",
                "steps": steps,
                "final_time": last.time(),
                "snapshots": snaps.len(),
                "sup_final": last.sup_abs(),
            });
            if let Some(seed) = cfg.seed {
                summary["seed"] = json!(seed);
            }
            if let Some(sol) = &resolved.exact {
                let err = exact_error(last, sol);
                summary["final_error"] = json!(err);
                if let Some(tol) = tol {
                    summary["within_tol"] = json!(err <= tol);
                }
            }
            write_summary(&out, &summary)?;
            println!(
                "simulate: {} steps to t = {}; wrote {} snapshots and diagnostics.csv to {}",
                steps,
                last.time().unwrap_or(f64::NAN),
                snaps.len(),
                out.display()
            );
            if let Some(err) = summary.get("final_error") {
                println!("simulate: final error against the exact solution = {err}");
            }
            Ok(EXIT_PASS)
        }
        Err(err @ Error::SolverAbort { .. }) => {
            let summary = json!({
                "command": "simulate",
                "config": raw,
                "threads": threads_json(inv),
                "outcome": "solver_abort",
                "error": err.to_string(),
            });
            write_summary(&out, &summary)?;
            eprintln!("simulate: {err}");
            Ok(EXIT_SOLVER_ABORT)
        }
        Err(err) => Err(Failure::from(err)),
    }
}

/// Max-norm gap between a snapshot and the exact solution at its time.
fn exact_error(u: &ScalarField, sol: &ExactSolution) -> f64 {
    let t = u.time().unwrap_or(0.0);
    let v_dim = sol.spec().v_dim();
    let mut worst: f64 = 0.0;
    for node in 0..u.grid().node_count() {
        let p = Point::from_coords(v_dim, &u.grid().coords(node));
        worst = worst.max((u.values()[node] - sol.eval(&p, t)).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// verify

const KNOWN_CHECKS: [&str; 4] = ["group_axioms", "htype_identities", "cylinder", "barrier"];

struct CheckResult {
    name: &'static str,
    pass: bool,
    line: String,
    detail: Value,
}

fn verify(inv: &Invocation, raw: &Value) -> Result<i32, Failure> {
    let cfg: VerifyConfig = parse_cfg(raw, "verify")?;
    check_command_field(cfg.command.as_deref(), "verify")?;
    let base = config_dir(&inv.config_path);
    let out = out_dir(inv, cfg.out.as_deref());
    let tol = resolve_tol(inv.tol_flag, cfg.tol)?;
    let spec = resolve_group(&cfg.group, &base)?;
    if cfg.checks.is_empty() {
        return Err(Failure::config("`checks` must name at least one check"));
    }
    for name in &cfg.checks {
        if !KNOWN_CHECKS.contains(&name.as_str()) {
            return Err(Failure::config(format!(
                "unknown check `{name}`; expected one of {}",
                KNOWN_CHECKS.join(", ")
            )));
        }
    }

    let mut results = Vec::new();
    let mut all_pass = true;
    for name in &cfg.checks {
        let result = match name.as_str() {
            "group_axioms" => check_group_axioms(&spec, &cfg, tol)?,
            "htype_identities" => check_htype_identities(&spec, &cfg, tol)?,
            "cylinder" => check_cylinder(&spec, &cfg, tol)?,
            "barrier" => check_barrier(&spec, &cfg)?,
            _ => unreachable!(),
        };
        println!(
            "check {}: {} ({})",
            result.name,
            if result.pass { "PASS" } else { "FAIL" },
            result.line
        );
        all_pass &= result.pass;
        results.push(json!({
            "name": result.name,
            "pass": result.pass,
            "detail": result.detail,
        }));
    }

    let summary = json!({
        "command": "verify",
        "config": raw,
        "threads": threads_json(inv),
        "checks": results,
        "pass": all_pass,
    });
    write_summary(&out, &summary)?;
    println!("verify: {}", if all_pass { "PASS" } else { "FAIL" });
    Ok(if all_pass { EXIT_PASS } else { EXIT_CHECK_FAILED })
}

/// Associativity, inverses, the dilation homomorphism, and gauge
/// homogeneity on a random sample box.
fn check_group_axioms(
    spec: &GroupSpec,
    cfg: &VerifyConfig,
    tol_override: Option<f64>,
) -> Result<CheckResult, Failure> {
    let samples = cfg.samples.unwrap_or(1000);
    let seed = cfg.seed.unwrap_or(7);
    let radius = cfg.radius.unwrap_or(1.5);
    let tol = tol_override.unwrap_or(1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    for _ in 0..samples {
        let p = spec.sample_box(&mut rng, radius);
        let q = spec.sample_box(&mut rng, radius);
        let w = spec.sample_box(&mut rng, radius);
        let s: f64 = rng.gen_range(0.0..2.0);

        let left = spec.product(&spec.product(&p, &q)?, &w)?;
        let right = spec.product(&p, &spec.product(&q, &w)?)?;
        max_dev = max_dev.max(coord_gap(&left, &right));

        let e = spec.product(&p, &spec.inverse(&p)?)?;
        max_dev = max_dev.max(coord_gap(&e, &spec.identity()));

        let dilated_product = spec.dilate(s, &spec.product(&p, &q)?)?;
        let product_of_dilated = spec.product(&spec.dilate(s, &p)?, &spec.dilate(s, &q)?)?;
        max_dev = max_dev.max(coord_gap(&dilated_product, &product_of_dilated));

        let scaled = spec.gauge_norm(&spec.dilate(s, &p)?)?;
        let direct = s * spec.gauge_norm(&p)?;
        max_dev = max_dev.max((scaled - direct).abs() / (1.0 + direct));
    }
    Ok(CheckResult {
        name: "group_axioms",
        pass: max_dev <= tol,
        line: format!("max deviation {max_dev:.3e}, tol {tol:.1e}"),
        detail: json!({
            "samples": samples, "seed": seed, "radius": radius,
            "tol": tol, "max_dev": max_dev,
        }),
    })
}

fn coord_gap(p: &Point, q: &Point) -> f64 {
    p.coords()
        .iter()
        .zip(q.coords())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn check_htype_identities(
    spec: &GroupSpec,
    cfg: &VerifyConfig,
    tol_override: Option<f64>,
) -> Result<CheckResult, Failure> {
    let samples = cfg.samples.unwrap_or(1000);
    let seed = cfg.seed.unwrap_or(7);
    let radius = cfg.radius.unwrap_or(1.2);
    let tol = tol_override.unwrap_or(1e-6);
    let report = htype_identities_check(spec, samples, seed, radius)?;
    let max_dev = report.max_dev();
    Ok(CheckResult {
        name: "htype_identities",
        pass: max_dev <= tol,
        line: format!("max deviation {max_dev:.3e}, tol {tol:.1e}"),
        detail: json!({
            "tol": tol,
            "report": serde_json::to_value(&report).expect("report serializes"),
        }),
    })
}

/// Residuals on the moving cylinder plus the dilation self-similarity.
fn check_cylinder(
    spec: &GroupSpec,
    cfg: &VerifyConfig,
    tol_override: Option<f64>,
) -> Result<CheckResult, Failure> {
    let r0 = cfg.r0.unwrap_or(1.0);
    let t = cfg.t.unwrap_or(0.25);
    let n = cfg.samples.unwrap_or(200);
    let seed = cfg.seed.unwrap_or(7);
    let tol = tol_override.unwrap_or(1e-9);
    let sol = shrinking_cylinder(spec, r0)?;
    let extinction = sol.time_range().1;
    if !(t >= 0.0 && t < extinction) {
        return Err(Failure::config(format!(
            "cylinder time t = {t} is at or beyond the extinction time {extinction}"
        )));
    }
    let m1 = spec.v_dim() as f64;
    let times = if t > 0.0 { vec![0.0, t] } else { vec![0.0] };
    let mut max_residual: f64 = 0.0;
    for (k, &tt) in times.iter().enumerate() {
        let rho = (r0.powf(m1) - m1 * tt).powf(1.0 / m1);
        for p in points_on_cylinder(spec, rho, n, seed + k as u64) {
            max_residual = max_residual.max(sol.residual(&p, tt)?.abs());
        }
    }
    let similarity = self_similarity_check(spec, r0, t, &points_on_cylinder(spec, r0, n, seed))?;
    let worst = max_residual.max(similarity.max_abs);
    Ok(CheckResult {
        name: "cylinder",
        pass: worst <= tol,
        line: format!("max residual {worst:.3e}, tol {tol:.1e}"),
        detail: json!({
            "r0": r0, "t": t, "samples": n, "tol": tol,
            "max_residual": max_residual,
            "self_similarity": serde_json::to_value(&similarity).expect("report serializes"),
        }),
    })
}

fn check_barrier(spec: &GroupSpec, cfg: &VerifyConfig) -> Result<CheckResult, Failure> {
    let eps0 = cfg.eps0.unwrap_or(0.9);
    let curvature_bound = cfg.curvature_bound.unwrap_or(50.0);
    let box_radius = cfg.box_radius.unwrap_or(4.0);
    let samples = cfg.samples.unwrap_or(2000);
    let h0 = htype_barrier(spec)?;
    let barrier = BarrierSpec::new(h0, eps0, curvature_bound)?;
    let report = barrier_validate(spec, &barrier, box_radius, samples)?;
    let pass = report.feasible
        && report.lower_bound_ok
        && report.smooth
        && report.within_curvature_bound;
    let line = if pass {
        format!("max curvature ratio {:.3} within bound {curvature_bound}", report.max_ratio)
    } else {
        format!("witness {:?}", report.witness)
    };
    Ok(CheckResult {
        name: "barrier",
        pass,
        line,
        detail: json!({
            "eps0": eps0, "curvature_bound": curvature_bound,
            "box_radius": box_radius, "samples": samples,
            "report": serde_json::to_value(&report).expect("report serializes"),
        }),
    })
}

// ---------------------------------------------------------------------------
// compare

fn compare(inv: &Invocation, raw: &Value) -> Result<i32, Failure> {
    let cfg: CompareConfig = parse_cfg(raw, "compare")?;
    check_command_field(cfg.command.as_deref(), "compare")?;
    let base = config_dir(&inv.config_path);
    let out = out_dir(inv, cfg.out.as_deref());
    let tol = resolve_tol(inv.tol_flag, cfg.tol)?.unwrap_or(1e-9);
    reject_sub_keys(&cfg.a, "a")?;
    reject_sub_keys(&cfg.b, "b")?;

    let run_a = build_run(&cfg.a, &base)?;
    let run_b = build_run(&cfg.b, &base)?;
    require_comparable(&cfg, &run_a.problem.spec, &run_b.problem.spec)?;

    let trace_a = match flow_or_abort(inv, raw, &out, &run_a.problem, "a")? {
        Some(trace) => trace,
        None => return Ok(EXIT_SOLVER_ABORT),
    };
    let trace_b = match flow_or_abort(inv, raw, &out, &run_b.problem, "b")? {
        Some(trace) => trace,
        None => return Ok(EXIT_SOLVER_ABORT),
    };
    trace_a.write_snapshots(&out.join("a")).map_err(Failure::from)?;
    trace_a.write_diagnostics(&out.join("a")).map_err(Failure::from)?;
    trace_b.write_snapshots(&out.join("b")).map_err(Failure::from)?;
    trace_b.write_diagnostics(&out.join("b")).map_err(Failure::from)?;

    let report = compare_runs(&trace_a, &trace_b, tol).map_err(|e| match e {
        Error::GridMismatch(msg) => Failure::incompatible(msg),
        other => Failure::from(other),
    })?;
    let summary = json!({
        "command": "compare",
        "config": raw,
        "threads": threads_json(inv),
        "tol": tol,
        "ordering": serde_json::to_value(&report).expect("report serializes"),
        "a": trace_stats(&trace_a),
        "b": trace_stats(&trace_b),
    });
    write_summary(&out, &summary)?;
    if report.ordered {
        println!("compare: ordered, max excess {:.3e} <= tol {tol:.1e}", report.max_excess);
        Ok(EXIT_PASS)
    } else {
        let v = report.first_violation.as_ref().expect("unordered report has a violation");
        println!(
            "compare: ordering FAILED at snapshot {} (t = {}), node {}: {} > {} + tol {tol:.1e}",
            v.snapshot, v.time, v.node, v.lower, v.upper
        );
        Ok(EXIT_CHECK_FAILED)
    }
}

/// Sub-configs inherit the top-level command, output directory, and
/// tolerance; setting their own is a mistake worth naming.
fn reject_sub_keys(cfg: &RunConfig, side: &str) -> Result<(), Failure> {
    if cfg.command.is_some() || cfg.out.is_some() || cfg.tol.is_some() {
        return Err(Failure::config(format!(
            "compare sub-config `{side}` must not set `command`, `out`, or `tol`"
        )));
    }
    Ok(())
}

/// The two runs must produce paired snapshots on one grid: same group, same
/// grid box, same horizon, same explicit snapshot times, and no
/// step-count-based snapshots (step counts differ between solutions).
fn require_comparable(cfg: &CompareConfig, a: &GroupSpec, b: &GroupSpec) -> Result<(), Failure> {
    if a.to_json_string() != b.to_json_string() {
        return Err(Failure::incompatible("compare needs matching groups"));
    }
    if cfg.a.grid != cfg.b.grid {
        return Err(Failure::incompatible("compare needs matching grids"));
    }
    if cfg.a.t_end != cfg.b.t_end {
        return Err(Failure::incompatible("compare needs matching t_end"));
    }
    if cfg.a.snapshot_every.unwrap_or(0) != 0 || cfg.b.snapshot_every.unwrap_or(0) != 0 {
        return Err(Failure::config(
            "compare does not allow snapshot_every; use snapshot_times",
        ));
    }
    if cfg.a.snapshot_times != cfg.b.snapshot_times {
        return Err(Failure::incompatible("compare needs matching snapshot_times"));
    }
    Ok(())
}

/// Runs one side; a solver abort writes the summary and ends the command,
/// any other error propagates.
fn flow_or_abort(
    inv: &Invocation,
    raw: &Value,
    out: &Path,
    problem: &carnot_core::FlowProblem,
    side: &str,
) -> Result<Option<FlowTrace>, Failure> {
    match carnot_core::run(problem) {
        Ok(trace) => Ok(Some(trace)),
        Err(err @ Error::SolverAbort { .. }) => {
            let summary = json!({
                "command": "compare",
                "config": raw,
                "threads": threads_json(inv),
                "outcome": "solver_abort",
                "side": side,
                "error": err.to_string(),
            });
            write_summary(out, &summary)?;
            eprintln!("compare: run `{side}`: {err}");
            Ok(None)
        }
        Err(err) => Err(Failure::from(err)),
    }
}

fn trace_stats(trace: &FlowTrace) -> Value {
    json!({
        "steps": trace.series.last().map_or(0, |r| r.step),
        "final_time": trace.final_state().time(),
        "snapshots": trace.snapshots.len(),
    })
}

// ---------------------------------------------------------------------------
// shared helpers

fn parse_cfg<T: DeserializeOwned>(raw: &Value, what: &str) -> Result<T, Failure> {
    serde_json::from_value(raw.clone())
        .map_err(|e| Failure::config(format!("invalid {what} config: {e}")))
}

fn check_command_field(found: Option<&str>, expected: &str) -> Result<(), Failure> {
    match found {
        Some(c) if c != expected => Err(Failure::config(format!(
            "config names command `{c}` but `{expected}` was invoked"
        ))),
        _ => Ok(()),
    }
}

fn config_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn out_dir(inv: &Invocation, cfg_out: Option<&Path>) -> PathBuf {
    inv.out_flag
        .clone()
        .or_else(|| cfg_out.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("carnotflow_out"))
}

fn resolve_tol(flag: Option<f64>, cfg: Option<f64>) -> Result<Option<f64>, Failure> {
    let tol = flag.or(cfg);
    if let Some(t) = tol {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Failure::config(format!("tolerances must be positive, got {t}")));
        }
    }
    Ok(tol)
}

fn threads_json(inv: &Invocation) -> Value {
    json!({"cap": inv.thread_cap, "workers": inv.workers})
}

fn write_summary(dir: &Path, summary: &Value) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::config(format!("cannot create `{}`: {e}", dir.display())))?;
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    let path = dir.join("summary.json");
    fs::write(&path, text)
        .map_err(|e| Failure::config(format!("cannot write `{}`: {e}", path.display())))?;
    Ok(())
}
