//! Experiment configs: the JSON schema and its resolution into library
//! objects. Configs are single JSON documents; unknown keys are rejected
//! with the offending key named, and named presets must exist.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use carnot_core::{
    grim_reaper, htype_barrier, Boundary, DetVariant, ExactSolution, FlowProblem, Grid, GroupSpec,
    Point, Polynomial, ScalarField,
};
use serde::Deserialize;
use serde_json::Value;

use crate::Failure;

/// One flow experiment, as read from JSON.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional echo of the subcommand; must match when present.
    pub command: Option<String>,
    /// `euclidean:<n>`, `heisenberg:<n>`, `quaternionic`, `htype:<file>`,
    /// or an inline group object.
    pub group: Value,
    pub grid: GridConfig,
    pub initial: InitialConfig,
    pub boundary: Option<BoundaryConfig>,
    /// `det_plus` (default) or `det`.
    pub variant: Option<String>,
    pub t_end: f64,
    pub dt_safety: Option<f64>,
    pub snapshot_every: Option<usize>,
    pub snapshot_times: Option<Vec<f64>>,
    pub max_steps: Option<usize>,
    /// Reserved for sampling-based presets; echoed into the summary.
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Cube grid: `n` nodes per axis on `[-radius, radius]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub radius: f64,
    pub n: usize,
}

/// Initial data: exactly one of a named preset or a polynomial given as
/// `[coefficient, [exponents...]]` terms over the full coordinate list.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub preset: Option<String>,
    pub polynomial: Option<Vec<(f64, Vec<u32>)>>,
}

/// Boundary rule: `frozen`, `offset_t` (needs `rate`), or `exact` (follows
/// the preset's exact solution).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub mode: String,
    pub rate: Option<f64>,
}

/// Config for `verify`: a group plus the list of checks to run, with
/// optional per-suite knobs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub command: Option<String>,
    pub group: Value,
    pub checks: Vec<String>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    /// Sampling box radius for the identity and axiom suites.
    pub radius: Option<f64>,
    /// Cylinder initial radius.
    pub r0: Option<f64>,
    /// Cylinder check time.
    pub t: Option<f64>,
    /// Barrier gauge lower-bound constant.
    pub eps0: Option<f64>,
    /// Barrier curvature-ratio bound.
    pub curvature_bound: Option<f64>,
    /// Barrier validation box radius.
    pub box_radius: Option<f64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Config for `compare`: two run configs plus the ordering tolerance.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub command: Option<String>,
    pub a: RunConfig,
    pub b: RunConfig,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

/// A run config resolved into a solvable problem, plus the exact solution
/// the preset tracks (when there is one) for error reporting.
pub struct ResolvedRun {
    pub problem: FlowProblem,
    pub exact: Option<Arc<ExactSolution>>,
}

/// Resolves the `group` field; `base` anchors relative `htype:` paths.
pub fn resolve_group(value: &Value, base: &Path) -> Result<GroupSpec, Failure> {
    match value {
        Value::String(name) => group_preset(name, base),
        Value::Object(_) => GroupSpec::from_json_value(value)
            .map_err(|e| Failure::config(format!("invalid inline group: {e}"))),
        _ => Err(Failure::config(
            "`group` must be a preset string or an inline group object",
        )),
    }
}

fn group_preset(name: &str, base: &Path) -> Result<GroupSpec, Failure> {
    if let Some(n) = name.strip_prefix("euclidean:") {
        return GroupSpec::euclidean(parse_index(n, name)?).map_err(Failure::from);
    }
    if let Some(n) = name.strip_prefix("heisenberg:") {
        return GroupSpec::heisenberg(parse_index(n, name)?).map_err(Failure::from);
    }
    if name == "quaternionic" {
        return Ok(GroupSpec::quaternionic());
    }
    if let Some(path) = name.strip_prefix("htype:") {
        let full = base.join(path);
        let text = fs::read_to_string(&full).map_err(|e| {
            Failure::config(format!("cannot read group file `{}`: {e}", full.display()))
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            Failure::config(format!("group file `{}` is not valid JSON: {e}", full.display()))
        })?;
        return GroupSpec::from_json_value(&value)
            .map_err(|e| Failure::config(format!("invalid group in `{}`: {e}", full.display())));
    }
    Err(Failure::config(format!(
        "unknown group `{name}`; expected euclidean:<n>, heisenberg:<n>, quaternionic, \
         htype:<file>, or an inline group object"
    )))
}

fn parse_index(digits: &str, whole: &str) -> Result<usize, Failure> {
    digits
        .parse::<usize>()
        .map_err(|_| Failure::config(format!("group `{whole}` needs an integer dimension")))
}

/// Builds the flow problem a run config describes.
pub fn build_run(cfg: &RunConfig, base: &Path) -> Result<ResolvedRun, Failure> {
    let spec = resolve_group(&cfg.group, base)?;
    let grid = Grid::centered_box(&spec, cfg.grid.radius, cfg.grid.n).map_err(Failure::from)?;
    let (u0, exact) = initial_data(&cfg.initial, &spec, &grid)?;
    let boundary = boundary_rule(cfg.boundary.as_ref(), &u0, exact.as_ref())?;
    let variant = match cfg.variant.as_deref() {
        None | Some("det_plus") => DetVariant::DetPlus,
        Some("det") => DetVariant::Det,
        Some(other) => {
            return Err(Failure::config(format!(
                "unknown variant `{other}`, expected det_plus or det"
            )))
        }
    };
    let mut problem = FlowProblem::new(spec, u0, cfg.t_end);
    problem.boundary = boundary;
    problem.variant = variant;
    if let Some(s) = cfg.dt_safety {
        problem.dt_safety = s;
    }
    if let Some(k) = cfg.snapshot_every {
        problem.snapshot_every = k;
    }
    problem.snapshot_times = cfg.snapshot_times.clone();
    if let Some(m) = cfg.max_steps {
        problem.max_steps = m;
    }
    Ok(ResolvedRun { problem, exact })
}

fn initial_data(
    init: &InitialConfig,
    spec: &GroupSpec,
    grid: &Grid,
) -> Result<(ScalarField, Option<Arc<ExactSolution>>), Failure> {
    match (&init.preset, &init.polynomial) {
        (Some(name), None) => preset_data(name, spec, grid),
        (None, Some(terms)) => {
            let poly = Polynomial::from_terms(grid.dim(), terms.clone()).map_err(Failure::from)?;
            Ok((ScalarField::from_fn(grid.clone(), |x| poly.eval(x)), None))
        }
        _ => Err(Failure::config(
            "`initial` must set exactly one of `preset` and `polynomial`",
        )),
    }
}

fn preset_data(
    name: &str,
    spec: &GroupSpec,
    grid: &Grid,
) -> Result<(ScalarField, Option<Arc<ExactSolution>>), Failure> {
    match name {
        "grim_reaper" => {
            if spec.v_dim() != 1 || spec.z_dim() != 0 {
                return Err(Failure::config(
                    "the grim_reaper preset needs the group euclidean:1",
                ));
            }
            let sol = Arc::new(grim_reaper());
            for node in 0..grid.node_count() {
                let p = Point::from_coords(1, &grid.coords(node));
                if !sol.in_domain(&p, 0.0) {
                    return Err(Failure::config(format!(
                        "grid node x = {} lies outside the grim reaper domain |x| < pi/2",
                        p.v[0]
                    )));
                }
            }
            let s = sol.clone();
            let u0 = ScalarField::from_fn(grid.clone(), move |x| {
                s.eval(&Point::from_coords(1, x), 0.0)
            });
            Ok((u0, Some(sol)))
        }
        "convex_quadratic" => {
            let m1 = spec.v_dim();
            let u0 = ScalarField::from_fn(grid.clone(), move |x| {
                let vv: f64 = x[..m1].iter().map(|a| a * a).sum();
                let zz: f64 = x[m1..].iter().map(|a| a * a).sum();
                vv + 0.1 * zz
            });
            Ok((u0, None))
        }
        "htype_barrier" => {
            let h0 = htype_barrier(spec).map_err(Failure::from)?;
            let m1 = spec.v_dim();
            let u0 =
                ScalarField::from_fn(grid.clone(), move |x| h0(&Point::from_coords(m1, x)));
            Ok((u0, None))
        }
        other => Err(Failure::config(format!(
            "unknown initial preset `{other}`; expected grim_reaper, convex_quadratic, \
             htype_barrier, or a `polynomial`"
        ))),
    }
}

fn boundary_rule(
    cfg: Option<&BoundaryConfig>,
    u0: &ScalarField,
    exact: Option<&Arc<ExactSolution>>,
) -> Result<Boundary, Failure> {
    let Some(b) = cfg else {
        // presets that track an exact solution follow it at the boundary
        return Ok(match exact {
            Some(sol) => exact_boundary(sol),
            None => Boundary::Frozen,
        });
    };
    let reject_rate = |mode: &str| -> Result<(), Failure> {
        if b.rate.is_some() {
            return Err(Failure::config(format!(
                "boundary `rate` only applies to mode offset_t, not `{mode}`"
            )));
        }
        Ok(())
    };
    match b.mode.as_str() {
        "frozen" => {
            reject_rate("frozen")?;
            Ok(Boundary::Frozen)
        }
        "offset_t" => {
            let rate = b
                .rate
                .ok_or_else(|| Failure::config("boundary mode offset_t needs a `rate`"))?;
            Ok(Boundary::offset_linear(u0, rate))
        }
        "exact" => {
            reject_rate("exact")?;
            let sol = exact.ok_or_else(|| {
                Failure::config(
                    "boundary mode exact needs an initial preset with an exact solution \
                     (grim_reaper)",
                )
            })?;
            Ok(exact_boundary(sol))
        }
        other => Err(Failure::config(format!(
            "unknown boundary mode `{other}`, expected frozen, offset_t, or exact"
        ))),
    }
}

fn exact_boundary(sol: &Arc<ExactSolution>) -> Boundary {
    let sol = sol.clone();
    let v_dim = sol.spec().v_dim();
    Boundary::TimeDependent(Arc::new(move |x, t| {
        sol.eval(&Point::from_coords(v_dim, x), t)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn group_presets_resolve() {
        let base = Path::new(".");
        let heis = resolve_group(&json!("heisenberg:2"), base).unwrap();
        assert_eq!((heis.v_dim(), heis.z_dim()), (4, 1));
        let flat = resolve_group(&json!("euclidean:3"), base).unwrap();
        assert_eq!((flat.v_dim(), flat.z_dim()), (3, 0));
        let inline = resolve_group(&heis.to_json_value(), base).unwrap();
        assert_eq!(inline.to_json_string(), heis.to_json_string());
        assert!(resolve_group(&json!("octonionic"), base).is_err());
    }

    #[test]
    fn polynomial_initial_data_evaluates() {
        let cfg: RunConfig = serde_json::from_value(json!({
            "group": "heisenberg:1",
            "grid": {"radius": 1.0, "n": 5},
            "initial": {"polynomial": [[1.0, [2, 0, 0]], [0.5, [0, 0, 1]]]},
            "t_end": 0.0,
        }))
        .unwrap();
        let run = build_run(&cfg, Path::new(".")).unwrap();
        let u0 = &run.problem.u0;
        let node = u0.grid().flat_index(&[4, 2, 2]);
        assert_eq!(u0.grid().coords(node), vec![1.0, 0.0, 0.0]);
        assert!((u0.values()[node] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grim_reaper_preset_needs_the_line() {
        let cfg: RunConfig = serde_json::from_value(json!({
            "group": "heisenberg:1",
            "grid": {"radius": 1.0, "n": 5},
            "initial": {"preset": "grim_reaper"},
            "t_end": 0.1,
        }))
        .unwrap();
        let err = match build_run(&cfg, Path::new(".")) {
            Err(err) => err,
            Ok(_) => panic!("expected a config failure"),
        };
        assert_eq!(err.code, crate::EXIT_CONFIG);
    }
}
