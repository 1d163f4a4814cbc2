//! Explicit (forward Euler) solver for the graph curvature flow
//! `u_t = det_variant((D0^2 u)*) / (1 + |D0 u|^2)^((m1 + 1) / 2)` with
//! Dirichlet boundary data, adaptive parabolic time-step control, and
//! per-step diagnostics.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{horizontal_gradient, horizontal_hessian, Grid, ScalarField, SymMatrixField, VectorField};
use crate::geometry::{graph_flow_rhs, DetVariant};
use crate::group::GroupSpec;
use crate::linalg::SymMat;

pub const DT_SAFETY_DEFAULT: f64 = 0.25;
const DT_DENOMINATOR_FLOOR: f64 = 1e-12;
const TIME_MATCH_TOL: f64 = 1e-12;

/// Dirichlet boundary data: either frozen at the initial values or supplied
/// by a closure of (coordinates, time).
#[derive(Clone)]
pub enum Boundary {
    Frozen,
    TimeDependent(Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>),
}

impl Boundary {
    /// Boundary values `u0 + rate * t`.
    pub fn offset_linear(u0: &ScalarField, rate: f64) -> Boundary {
        let u0 = u0.clone();
        Boundary::TimeDependent(Arc::new(move |x, t| {
            u0.interp(x).expect("boundary point lies on the grid") + rate * t
        }))
    }
}

impl std::fmt::Debug for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Boundary::Frozen => write!(f, "Boundary::Frozen"),
            Boundary::TimeDependent(_) => write!(f, "Boundary::TimeDependent(..)"),
        }
    }
}

/// One experiment: group, initial data, boundary rule, flow variant, and
/// time-stepping knobs.
pub struct FlowProblem {
    pub spec: GroupSpec,
    pub u0: ScalarField,
    pub boundary: Boundary,
    pub variant: DetVariant,
    pub t_end: f64,
    pub dt_safety: f64,
    /// Snapshot every k accepted steps (0 = only initial and final states).
    pub snapshot_every: usize,
    /// Explicit snapshot times; the stepper lands on them exactly, which is
    /// what makes two runs comparable.
    pub snapshot_times: Option<Vec<f64>>,
    pub max_steps: usize,
}

impl FlowProblem {
    pub fn new(spec: GroupSpec, u0: ScalarField, t_end: f64) -> FlowProblem {
        FlowProblem {
            spec,
            u0,
            boundary: Boundary::Frozen,
            variant: DetVariant::DetPlus,
            t_end,
            dt_safety: DT_SAFETY_DEFAULT,
            snapshot_every: 0,
            snapshot_times: None,
            max_steps: 2_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.u0.grid().dim() != self.spec.dim() {
            return Err(Error::GridMismatch(format!(
                "initial data has {} axes but the group needs {}",
                self.u0.grid().dim(),
                self.spec.dim()
            )));
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "dt_safety must lie in (0, 1], got {}",
                self.dt_safety
            )));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t_end must be finite and >= 0, got {}",
                self.t_end
            )));
        }
        if let Some(times) = &self.snapshot_times {
            let mut prev = 0.0;
            for &t in times {
                if !(t > prev - TIME_MATCH_TOL) || t > self.t_end + TIME_MATCH_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "snapshot times must be increasing and within (0, t_end], got {t}"
                    )));
                }
                prev = t;
            }
        }
        Ok(())
    }

    fn boundary_value(&self, coords: &[f64], node: usize, t: f64) -> f64 {
        match &self.boundary {
            Boundary::Frozen => self.u0.values()[node],
            Boundary::TimeDependent(g) => g(coords, t),
        }
    }
}

/// Per-step diagnostics record.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    /// Minimum interior eigenvalue of the horizontal Hessian of the state at
    /// time `t`.
    pub min_eig: f64,
    /// Largest |rhs| over interior nodes of the step that produced this
    /// state (0 for the initial record).
    pub max_rhs: f64,
    pub sup_u: f64,
}

/// Run artifact: snapshots (time-stamped fields) plus the diagnostic series.
pub struct FlowTrace {
    pub snapshots: Vec<ScalarField>,
    pub series: Vec<StepRecord>,
}

impl FlowTrace {
    /// Writes `snap_<index>_t<time>.csv` files; returns the paths.
    pub fn write_snapshots(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (k, snap) in self.snapshots.iter().enumerate() {
            let t = snap.time().unwrap_or(f64::NAN);
            let path = dir.join(format!("snap_{k:03}_t{t}.csv"));
            fs::write(&path, snap.to_csv())?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Writes the per-step diagnostic series as `diagnostics.csv`.
    pub fn write_diagnostics(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut out = String::from("step,t,dt,min_eig,max_rhs,sup_u\n");
        for r in &self.series {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.t, r.dt, r.min_eig, r.max_rhs, r.sup_u
            ));
        }
        let path = dir.join("diagnostics.csv");
        fs::write(&path, out)?;
        Ok(path)
    }

    pub fn final_state(&self) -> &ScalarField {
        self.snapshots.last().expect("trace holds at least the initial state")
    }
}

/// Largest squared row sum of the frame over all grid nodes (the gradient
/// part of the parabolic stability bound).
fn frame_bound(spec: &GroupSpec, u: &ScalarField) -> f64 {
    let m = spec.v_dim();
    let mut coords = vec![0.0; spec.dim()];
    let mut worst: f64 = 0.0;
    for node in 0..u.grid().node_count() {
        u.grid().coords_into(node, &mut coords);
        worst = worst.max(spec.frame_from_v(&coords[..m]).max_row_sum_sq());
    }
    worst
}

/// Interior Hessian eigenvalue extremes: the minimum eigenvalue (convexity
/// diagnostic) and the stability bound for the time step (largest positive
/// eigenvalue for the clamped variant; largest magnitude for the signed
/// variant, which can react to concave directions too).
fn extremes_of(hess: &SymMatrixField, grid: &Grid, variant: DetVariant) -> (f64, f64) {
    let mut scratch = SymMat::zeros(hess.dim());
    let mut min_eig = f64::INFINITY;
    let mut bound: f64 = 0.0;
    for node in grid.interior_nodes() {
        scratch.copy_from_packed(hess.packed_at(node));
        let (lo, hi) = scratch.eigen_range();
        min_eig = min_eig.min(lo);
        bound = bound.max(match variant {
            DetVariant::DetPlus => hi.max(0.0),
            DetVariant::Det => hi.abs().max(lo.abs()),
        });
    }
    (min_eig, bound)
}

fn hessian_extremes(spec: &GroupSpec, u: &ScalarField, variant: DetVariant) -> Result<(f64, f64)> {
    let hess = horizontal_hessian(spec, u)?;
    Ok(extremes_of(&hess, u.grid(), variant))
}

fn dt_from_bound(problem: &FlowProblem, lambda: f64, kappa: f64) -> f64 {
    let m1 = problem.spec.v_dim() as f64;
    let h_min = problem.u0.grid().min_spacing();
    let denom = m1 * lambda.powi(problem.spec.v_dim() as i32 - 1) * kappa + DT_DENOMINATOR_FLOOR;
    problem.dt_safety * h_min * h_min / denom
}

/// Largest stable explicit step from state `u` at time `t`:
/// `dt_safety * h_min^2 / (m1 * Lambda^(m1-1) * kappa + floor)`, capped at
/// the remaining time.
pub fn stable_dt(problem: &FlowProblem, u: &ScalarField, t: f64) -> Result<f64> {
    problem.validate()?;
    let (_, lambda) = hessian_extremes(&problem.spec, u, problem.variant)?;
    let kappa = frame_bound(&problem.spec, u);
    Ok(dt_from_bound(problem, lambda, kappa).min(problem.t_end - t))
}

fn step_from(
    problem: &FlowProblem,
    u: &ScalarField,
    grad: &VectorField,
    hess: &SymMatrixField,
    t: f64,
    dt: f64,
    step_index: usize,
) -> Result<(ScalarField, f64)> {
    let grid = u.grid();
    let mut next = u.clone();
    let mut coords = vec![0.0; grid.dim()];
    let mut scratch = SymMat::zeros(hess.dim());
    let mut max_rhs: f64 = 0.0;
    let t_next = t + dt;
    for node in 0..grid.node_count() {
        let value = if grid.is_interior(node) {
            scratch.copy_from_packed(hess.packed_at(node));
            let rhs = graph_flow_rhs(grad.get(node), &scratch, problem.variant);
            max_rhs = max_rhs.max(rhs.abs());
            u.values()[node] + dt * rhs
        } else {
            grid.coords_into(node, &mut coords);
            problem.boundary_value(&coords, node, t_next)
        };
        if !value.is_finite() {
            return Err(Error::SolverAbort {
                step: step_index,
                time: t_next,
                node,
            });
        }
        next.values_mut()[node] = value;
    }
    Ok((next, max_rhs))
}

fn step_impl(
    problem: &FlowProblem,
    u: &ScalarField,
    t: f64,
    dt: f64,
    step_index: usize,
) -> Result<(ScalarField, f64)> {
    let grad = horizontal_gradient(&problem.spec, u)?;
    let hess = horizontal_hessian(&problem.spec, u)?;
    step_from(problem, u, &grad, &hess, t, dt, step_index)
}

/// One forward Euler step of size `dt` from state `u` at time `t`.
pub fn step(problem: &FlowProblem, u: &ScalarField, t: f64, dt: f64) -> Result<ScalarField> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("step size must be > 0, got {dt}")));
    }
    Ok(step_impl(problem, u, t, dt, 0)?.0.with_time(t + dt))
}

/// Runs the flow to `t_end` with adaptive steps. Snapshots are taken at
/// `t = 0`, at the requested times or step cadence, and at the final time;
/// the diagnostic series holds one record per accepted step plus the initial
/// state.
pub fn run(problem: &FlowProblem) -> Result<FlowTrace> {
    problem.validate()?;
    if let Some(node) = problem.u0.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::SolverAbort {
            step: 0,
            time: 0.0,
            node,
        });
    }
    let kappa = frame_bound(&problem.spec, &problem.u0);
    let snap_times: Vec<f64> = problem
        .snapshot_times
        .clone()
        .unwrap_or_default()
        .into_iter()
        .filter(|&t| t > TIME_MATCH_TOL)
        .collect();
    let mut next_snap = 0usize;

    let mut u = problem.u0.clone().with_time(0.0);
    let mut t = 0.0;
    let mut k = 0usize;
    let mut snapshots = vec![u.clone()];
    let mut series: Vec<StepRecord> = Vec::new();
    let mut pending: Option<StepRecord> = None;

    loop {
        // one Hessian pass per iteration: it prices the time step, fills the
        // previous step's convexity diagnostic, and feeds the step kernel
        let hess = horizontal_hessian(&problem.spec, &u)?;
        let (min_eig, lambda) = extremes_of(&hess, u.grid(), problem.variant);
        match pending.take() {
            Some(mut rec) => {
                rec.min_eig = min_eig;
                series.push(rec);
            }
            None => series.push(StepRecord {
                step: 0,
                t: 0.0,
                dt: 0.0,
                min_eig,
                max_rhs: 0.0,
                sup_u: u.sup_abs(),
            }),
        }

        if t >= problem.t_end - TIME_MATCH_TOL {
            break;
        }
        if k >= problem.max_steps {
            return Err(Error::InvalidParameter(format!(
                "step budget of {} exhausted at t = {t}",
                problem.max_steps
            )));
        }

        let mut dt = dt_from_bound(problem, lambda, kappa);
        // land exactly on the next snapshot time / the final time
        let mut exact_target = None;
        if dt >= problem.t_end - t {
            dt = problem.t_end - t;
            exact_target = Some(problem.t_end);
        }
        if next_snap < snap_times.len() {
            let st = snap_times[next_snap];
            if dt >= st - t {
                dt = st - t;
                exact_target = Some(st);
            }
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "degenerate time step {dt} at t = {t}"
            )));
        }

        let grad = horizontal_gradient(&problem.spec, &u)?;
        let (next, max_rhs) = step_from(problem, &u, &grad, &hess, t, dt, k + 1)?;
        k += 1;
        t = exact_target.unwrap_or(t + dt);
        u = next.with_time(t);

        if next_snap < snap_times.len() && (t - snap_times[next_snap]).abs() <= TIME_MATCH_TOL {
            snapshots.push(u.clone());
            next_snap += 1;
        } else if problem.snapshot_every > 0
            && k % problem.snapshot_every == 0
            && t < problem.t_end - TIME_MATCH_TOL
        {
            snapshots.push(u.clone());
        }

        pending = Some(StepRecord {
            step: k,
            t,
            dt,
            min_eig: f64::NAN, // filled at the top of the next iteration
            max_rhs,
            sup_u: u.sup_abs(),
        });
    }

    let last_time = snapshots.last().and_then(|s| s.time()).unwrap_or(f64::NAN);
    if (last_time - t).abs() > TIME_MATCH_TOL {
        snapshots.push(u.clone());
    }
    Ok(FlowTrace { snapshots, series })
}

/// Node-level ordering violation between two runs.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingViolation {
    pub snapshot: usize,
    pub time: f64,
    pub node: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Outcome of an ordered-pair comparison.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingReport {
    pub ordered: bool,
    /// Largest value of `lower - upper` seen (negative when ordering holds
    /// with margin).
    pub max_excess: f64,
    pub tol: f64,
    pub first_violation: Option<OrderingViolation>,
}

impl OrderingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Checks `lower <= upper + tol` node-wise across paired snapshots. The two
/// traces must share grids and snapshot times.
pub fn compare_runs(lower: &FlowTrace, upper: &FlowTrace, tol: f64) -> Result<OrderingReport> {
    if lower.snapshots.len() != upper.snapshots.len() {
        return Err(Error::GridMismatch(format!(
            "snapshot counts differ: {} vs {}",
            lower.snapshots.len(),
            upper.snapshots.len()
        )));
    }
    let mut max_excess = f64::NEG_INFINITY;
    let mut first_violation = None;
    for (k, (a, b)) in lower.snapshots.iter().zip(&upper.snapshots).enumerate() {
        if a.grid() != b.grid() {
            return Err(Error::GridMismatch(format!("snapshot {k} grids differ")));
        }
        let (ta, tb) = (a.time().unwrap_or(f64::NAN), b.time().unwrap_or(f64::NAN));
        if !((ta - tb).abs() <= TIME_MATCH_TOL * (1.0 + ta.abs())) {
            return Err(Error::GridMismatch(format!(
                "snapshot {k} times differ: {ta} vs {tb}"
            )));
        }
        for (node, (va, vb)) in a.values().iter().zip(b.values()).enumerate() {
            let excess = va - vb;
            if excess > max_excess {
                max_excess = excess;
            }
            if excess > tol && first_violation.is_none() {
                first_violation = Some(OrderingViolation {
                    snapshot: k,
                    time: ta,
                    node,
                    lower: *va,
                    upper: *vb,
                });
            }
        }
    }
    Ok(OrderingReport {
        ordered: first_violation.is_none(),
        max_excess,
        tol,
        first_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Axis, Grid};

    fn heis() -> GroupSpec {
        GroupSpec::heisenberg(1).unwrap()
    }

    #[test]
    fn linear_data_is_stationary_and_steps_to_the_end() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let u0 = ScalarField::from_fn(grid, |x| 0.3 * x[0] - 0.8 * x[1] + 0.1);
        let mut problem = FlowProblem::new(spec, u0.clone(), 0.5);
        problem.snapshot_every = 0;
        let trace = run(&problem).unwrap();
        // positive-part determinant of a zero Hessian: nothing moves
        for (a, b) in trace.final_state().values().iter().zip(u0.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((trace.final_state().time().unwrap() - 0.5).abs() < 1e-12);
        // with a zero stability bound the step is floor-limited and hits the cap
        let dt = stable_dt(&problem, &u0, 0.0).unwrap();
        assert!((dt - 0.5).abs() < 1e-12, "dt = {dt}");
    }

    #[test]
    fn stable_dt_matches_the_parabolic_bound() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let u0 = ScalarField::from_fn(grid.clone(), |x| x[0] * x[0] + x[1] * x[1]);
        let problem = FlowProblem::new(spec, u0.clone(), 10.0);
        // Lambda = 2, kappa = (1 + 0.5)^2 at the box corners, m1 = 2
        let h = grid.min_spacing();
        let want = DT_SAFETY_DEFAULT * h * h / (2.0 * 2.0 * 2.25 + 1e-12);
        let got = stable_dt(&problem, &u0, 0.0).unwrap();
        assert!(
            (got - want).abs() < 1e-9 * want,
            "got {got}, want {want}"
        );
    }

    #[test]
    fn grim_reaper_short_run_tracks_the_exact_solution() {
        let spec = GroupSpec::euclidean(1).unwrap();
        let grid = Grid::for_group(&spec, vec![Axis::new(-1.0, 1.0, 51)]).unwrap();
        let exact = |x: f64, t: f64| t - x.cos().ln();
        let u0 = ScalarField::from_fn(grid.clone(), |x| exact(x[0], 0.0));
        let mut problem = FlowProblem::new(spec, u0, 0.01);
        problem.variant = DetVariant::DetPlus;
        problem.boundary = Boundary::TimeDependent(Arc::new(move |x, t| exact(x[0], t)));
        let trace = run(&problem).unwrap();
        let u = trace.final_state();
        let mut worst: f64 = 0.0;
        for node in 0..grid.node_count() {
            let x = grid.coords(node)[0];
            worst = worst.max((u.values()[node] - exact(x, 0.01)).abs());
        }
        assert!(worst < 1e-4, "final error {worst}");
    }

    #[test]
    fn snapshot_times_are_hit_exactly() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let u0 = ScalarField::from_fn(grid, |x| x[0] * x[0] + x[1] * x[1]);
        let mut problem = FlowProblem::new(spec, u0, 0.02);
        problem.snapshot_times = Some(vec![0.007, 0.013, 0.02]);
        let trace = run(&problem).unwrap();
        let times: Vec<f64> = trace.snapshots.iter().map(|s| s.time().unwrap()).collect();
        assert_eq!(times.len(), 4);
        assert_eq!(times[0], 0.0);
        assert_eq!(times[1], 0.007);
        assert_eq!(times[2], 0.013);
        assert_eq!(times[3], 0.02);
    }

    #[test]
    fn diagnostics_cover_every_step_and_track_convexity() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let u0 = ScalarField::from_fn(grid, |x| x[0] * x[0] + x[1] * x[1] + 0.1 * x[2] * x[2]);
        let mut problem = FlowProblem::new(spec.clone(), u0.clone(), 0.01);
        problem.boundary = Boundary::offset_linear(&problem.u0, 1.0);
        let trace = run(&problem).unwrap();
        assert!(trace.series.len() >= 2);
        assert_eq!(trace.series[0].step, 0);
        assert!(trace.series[0].dt == 0.0);
        for (i, rec) in trace.series.iter().enumerate() {
            assert_eq!(rec.step, i);
            assert!(rec.min_eig.is_finite());
            assert!(rec.min_eig > 0.0, "convexity lost at step {i}");
        }
        let last = trace.series.last().unwrap();
        assert!((last.t - 0.01).abs() < 1e-12);
    }

    #[test]
    fn non_finite_values_abort_with_location() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let mut u0 = ScalarField::from_fn(grid, |x| x[0] * x[0] + x[1] * x[1]);
        u0.values_mut()[13] = f64::NAN;
        let problem = FlowProblem::new(spec, u0, 0.01);
        match run(&problem) {
            Err(Error::SolverAbort { step, node, .. }) => {
                assert_eq!(step, 0);
                assert_eq!(node, 13);
            }
            Err(other) => panic!("expected solver abort, got {other:?}"),
            Ok(_) => panic!("expected solver abort, got a completed run"),
        }
    }

    #[test]
    fn ordered_initial_data_stays_ordered() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 7).unwrap();
        let lower0 = ScalarField::from_fn(grid.clone(), |x| x[0] * x[0] + x[1] * x[1]);
        let upper0 = ScalarField::from_fn(grid, |x| {
            let s = x[0] * x[0] + x[1] * x[1];
            s + 0.25 * s * s + 0.05
        });
        let times: Vec<f64> = (1..=5).map(|k| 0.002 * k as f64).collect();
        let mk = |u0: ScalarField| {
            let mut p = FlowProblem::new(spec.clone(), u0, 0.01);
            p.snapshot_times = Some(times.clone());
            p
        };
        let lo = run(&mk(lower0)).unwrap();
        let hi = run(&mk(upper0)).unwrap();
        let report = compare_runs(&lo, &hi, 1e-6).unwrap();
        assert!(report.ordered, "violation: {:?}", report.first_violation);
        assert!(report.max_excess < 0.0);

        // swapped pair must produce a first-violation record
        let report = compare_runs(&hi, &lo, 1e-6).unwrap();
        assert!(!report.ordered);
        let v = report.first_violation.unwrap();
        assert!(v.lower > v.upper);
    }
}
