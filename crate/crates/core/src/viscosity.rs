//! Comparison-principle toolkit: residual classification of space-time
//! fields, sup/inf convolutions with the gauge kernel, strictification,
//! subsolution scaling, the H-type barrier with its identities, modulus
//! estimation, and the Perron sandwich construction.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{
    horizontal_derivative_oracle, horizontal_gradient, horizontal_hessian, Grid, ScalarField,
    ORACLE_STEP_SECOND,
};
use crate::flow::{Boundary, FlowTrace};
use crate::geometry::{graph_flow_rhs, DetVariant};
use crate::group::{GroupSpec, Point};
use crate::linalg::SymMat;

const TIME_EPS: f64 = 1e-12;
/// Relative two-scale disagreement above which a probed function is flagged
/// as not twice differentiable.
const SMOOTHNESS_REL_TOL: f64 = 1e-3;
/// Headroom factor applied to empirical modulus and curvature constants.
const HEADROOM: f64 = 1.1;

// ---------------------------------------------------------------------------
// space-time fields

/// Scalar samples on a spatial grid at a strictly increasing list of times.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    grid: Grid,
    times: Vec<f64>,
    /// Time-major storage: `values[ti * node_count + node]`.
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn from_fn(
        grid: Grid,
        times: Vec<f64>,
        f: impl Fn(&[f64], f64) -> f64,
    ) -> Result<SpaceTimeField> {
        check_times(&times)?;
        let nn = grid.node_count();
        let mut values = Vec::with_capacity(times.len() * nn);
        let mut coords = vec![0.0; grid.dim()];
        for &t in &times {
            for node in 0..nn {
                grid.coords_into(node, &mut coords);
                values.push(f(&coords, t));
            }
        }
        let field = SpaceTimeField { grid, times, values };
        field.check_finite()?;
        Ok(field)
    }

    /// Stacks the snapshots of a flow trace into one space-time field.
    pub fn from_trace(trace: &FlowTrace) -> Result<SpaceTimeField> {
        if trace.snapshots.is_empty() {
            return Err(Error::InvalidParameter("trace holds no snapshots".into()));
        }
        let grid = trace.snapshots[0].grid().clone();
        let mut times = Vec::with_capacity(trace.snapshots.len());
        let mut values = Vec::with_capacity(trace.snapshots.len() * grid.node_count());
        for snap in &trace.snapshots {
            if snap.grid() != &grid {
                return Err(Error::GridMismatch("snapshots use different grids".into()));
            }
            times.push(snap.time().ok_or_else(|| {
                Error::InvalidParameter("snapshot lacks a time stamp".into())
            })?);
            values.extend_from_slice(snap.values());
        }
        check_times(&times)?;
        let field = SpaceTimeField { grid, times, values };
        field.check_finite()?;
        Ok(field)
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(k) = self.values.iter().position(|v| !v.is_finite()) {
            let nn = self.grid.node_count();
            return Err(Error::InvalidParameter(format!(
                "non-finite value at node {}, time index {}",
                k % nn,
                k / nn
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn value(&self, node: usize, time_index: usize) -> f64 {
        self.values[time_index * self.grid.node_count() + node]
    }

    pub fn slice(&self, time_index: usize) -> &[f64] {
        let nn = self.grid.node_count();
        &self.values[time_index * nn..(time_index + 1) * nn]
    }

    /// The time slice as a time-stamped scalar field.
    pub fn to_scalar(&self, time_index: usize) -> ScalarField {
        ScalarField::from_values(self.grid.clone(), self.slice(time_index).to_vec())
            .expect("slice length matches the grid")
            .with_time(self.times[time_index])
    }

    /// Linear interpolation in time at a fixed node; exact at the samples.
    pub fn interp_time(&self, node: usize, t: f64) -> Result<f64> {
        let times = &self.times;
        let (t0, t1) = (times[0], times[times.len() - 1]);
        if t < t0 - TIME_EPS * (1.0 + t0.abs()) || t > t1 + TIME_EPS * (1.0 + t1.abs()) {
            return Err(Error::InvalidParameter(format!(
                "t = {t} is outside the sampled range [{t0}, {t1}]"
            )));
        }
        let t = t.clamp(t0, t1);
        let hi = match times.iter().position(|&s| s >= t) {
            Some(0) => return Ok(self.value(node, 0)),
            Some(k) => k,
            None => return Ok(self.value(node, times.len() - 1)),
        };
        let (ta, tb) = (times[hi - 1], times[hi]);
        let w = (t - ta) / (tb - ta);
        Ok((1.0 - w) * self.value(node, hi - 1) + w * self.value(node, hi))
    }

    /// Applies `f(node, time_index, value)` to every sample.
    fn map(&self, f: impl Fn(usize, usize, f64) -> f64) -> SpaceTimeField {
        let nn = self.grid.node_count();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % nn, k / nn, v))
            .collect();
        SpaceTimeField {
            grid: self.grid.clone(),
            times: self.times.clone(),
            values,
        }
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("no time samples".into()));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter(format!(
                "times must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("non-finite time sample".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// residual classification

/// Pointwise class of one space-time sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClass {
    /// `|r| <= tol`
    Solution,
    /// `r < -tol`
    Subsolution,
    /// `r > tol`
    Supersolution,
    /// non-finite residual
    Neither,
}

pub fn sample_class(residual: f64, tol: f64) -> SampleClass {
    if !residual.is_finite() {
        SampleClass::Neither
    } else if residual.abs() <= tol {
        SampleClass::Solution
    } else if residual < 0.0 {
        SampleClass::Subsolution
    } else {
        SampleClass::Supersolution
    }
}

#[derive(Debug, Clone)]
pub struct ResidualSample {
    pub time_index: usize,
    pub node: usize,
    pub residual: f64,
    pub class: SampleClass,
}

/// Residuals `u_t - rhs` at all interior space-time samples, with the
/// aggregate verdicts.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub tol: f64,
    pub samples: Vec<ResidualSample>,
    pub max_residual: f64,
    pub min_residual: f64,
}

impl ResidualReport {
    /// Every sample has `r <= tol`.
    pub fn is_subsolution(&self) -> bool {
        self.max_residual <= self.tol
    }

    /// Every sample has `r >= -tol`.
    pub fn is_supersolution(&self) -> bool {
        self.min_residual >= -self.tol
    }

    /// Every sample has `|r| <= tol`.
    pub fn is_solution(&self) -> bool {
        self.is_subsolution() && self.is_supersolution()
    }

    pub fn count(&self, class: SampleClass) -> usize {
        self.samples.iter().filter(|s| s.class == class).count()
    }
}

/// Three-point first derivative on a possibly non-uniform time triple.
fn time_derivative(tm: f64, t0: f64, tp: f64, fm: f64, f0: f64, fp: f64) -> f64 {
    let hm = t0 - tm;
    let hp = tp - t0;
    -hp / (hm * (hm + hp)) * fm + (hp - hm) / (hm * hp) * f0 + hm / (hp * (hm + hp)) * fp
}

/// Classifies every interior space-time sample of `u` against the graph
/// flow equation: `r = u_t - rhs`, subsolution where `r <= tol`,
/// supersolution where `r >= -tol`, solution where `|r| <= tol`. Valid for
/// fields smooth enough that stencil residuals track the true ones.
pub fn residual_classify(
    spec: &GroupSpec,
    u: &SpaceTimeField,
    variant: DetVariant,
    tol: f64,
) -> Result<ResidualReport> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "classification tolerance must be >= 0, got {tol}"
        )));
    }
    let nt = u.times().len();
    if nt < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 time samples to classify, got {nt}"
        )));
    }
    // one rhs field per time slice, reused across the classification
    let mut rhs_slices = Vec::with_capacity(nt);
    for ti in 0..nt {
        let slice = u.to_scalar(ti);
        let grad = horizontal_gradient(spec, &slice)?;
        let hess = horizontal_hessian(spec, &slice)?;
        let rhs: Vec<f64> = (0..u.grid().node_count())
            .map(|node| graph_flow_rhs(grad.get(node), &hess.get(node), variant))
            .collect();
        rhs_slices.push(rhs);
    }
    let mut samples = Vec::new();
    let mut max_residual = f64::NEG_INFINITY;
    let mut min_residual = f64::INFINITY;
    for ti in 1..nt - 1 {
        let (tm, t0, tp) = (u.times()[ti - 1], u.times()[ti], u.times()[ti + 1]);
        for node in u.grid().interior_nodes() {
            let ut = time_derivative(
                tm,
                t0,
                tp,
                u.value(node, ti - 1),
                u.value(node, ti),
                u.value(node, ti + 1),
            );
            let r = ut - rhs_slices[ti][node];
            max_residual = max_residual.max(r);
            min_residual = min_residual.min(r);
            samples.push(ResidualSample {
                time_index: ti,
                node,
                residual: r,
                class: sample_class(r, tol),
            });
        }
    }
    Ok(ResidualReport {
        tol,
        samples,
        max_residual,
        min_residual,
    })
}

// ---------------------------------------------------------------------------
// envelopes

fn convolve(spec: &GroupSpec, w: &SpaceTimeField, eps: f64, sup: bool) -> Result<SpaceTimeField> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "convolution parameter must be positive, got {eps}"
        )));
    }
    if w.grid().dim() != spec.dim() {
        return Err(Error::GridMismatch(format!(
            "field has {} axes but the group needs {}",
            w.grid().dim(),
            spec.dim()
        )));
    }
    let grid = w.grid();
    let nn = grid.node_count();
    let nt = w.times().len();
    let dim = grid.dim();
    let mut coords = vec![0.0; nn * dim];
    for node in 0..nn {
        grid.coords_into(node, &mut coords[node * dim..(node + 1) * dim]);
    }
    let mut values = Vec::with_capacity(nn * nt);
    for ti in 0..nt {
        let t = w.times()[ti];
        for node in 0..nn {
            let x = &coords[node * dim..(node + 1) * dim];
            let mut best = f64::NEG_INFINITY;
            for si in 0..nt {
                let ds = t - w.times()[si];
                let time_pen = ds * ds;
                for y_node in 0..nn {
                    let y = &coords[y_node * dim..(y_node + 1) * dim];
                    let pen = (spec.gauge_pow_group_diff(x, y) + time_pen) / (2.0 * eps);
                    let cand = if sup {
                        w.value(y_node, si) - pen
                    } else {
                        -(w.value(y_node, si) + pen)
                    };
                    if cand > best {
                        best = cand;
                    }
                }
            }
            values.push(if sup { best } else { -best });
        }
    }
    Ok(SpaceTimeField {
        grid: grid.clone(),
        times: w.times().to_vec(),
        values,
    })
}

/// Discrete sup-convolution over all grid space-time samples with the gauge
/// kernel `(|y^-1 x|^(2r!) + |t-s|^2) / (2 eps)`. Dominates its input and
/// increases with `eps`.
pub fn sup_convolution(spec: &GroupSpec, w: &SpaceTimeField, eps: f64) -> Result<SpaceTimeField> {
    convolve(spec, w, eps, true)
}

/// Mirror image of [`sup_convolution`]: dominated by its input, decreasing
/// in `eps`.
pub fn inf_convolution(spec: &GroupSpec, w: &SpaceTimeField, eps: f64) -> Result<SpaceTimeField> {
    convolve(spec, w, eps, false)
}

/// Subtracts `eps / (t_end - t)` from every sample, turning a subsolution
/// into one with a strict margin. All sample times must lie below `t_end`.
pub fn strictify(w: &SpaceTimeField, eps: f64, t_end: f64) -> Result<SpaceTimeField> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "strictification weight must be >= 0, got {eps}"
        )));
    }
    if let Some(&t) = w.times().iter().find(|&&t| t >= t_end) {
        return Err(Error::InvalidParameter(format!(
            "sample time {t} is not below the horizon {t_end}"
        )));
    }
    Ok(w.map(|_, ti, v| v - eps / (t_end - w.times()[ti])))
}

/// Rescales a subsolution to `mu * u(x, theta * t)`. Requires
/// `theta * mu^-(m1-1) <= 1` together with `mu, theta` in `(0, 1]`.
pub fn scale_subsolution(
    spec: &GroupSpec,
    u: &SpaceTimeField,
    mu: f64,
    theta: f64,
) -> Result<SpaceTimeField> {
    if !(mu > 0.0 && mu <= 1.0 && theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "scaling factors must lie in (0, 1], got mu = {mu}, theta = {theta}"
        )));
    }
    let m1 = spec.v_dim() as i32;
    let admissibility = theta * mu.powi(-(m1 - 1));
    if admissibility > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "inadmissible scaling: theta * mu^-(m1-1) = {admissibility} > 1"
        )));
    }
    let nn = u.grid().node_count();
    let mut values = Vec::with_capacity(nn * u.times().len());
    for &t in u.times() {
        for node in 0..nn {
            values.push(mu * u.interp_time(node, theta * t)?);
        }
    }
    Ok(SpaceTimeField {
        grid: u.grid().clone(),
        times: u.times().to_vec(),
        values,
    })
}

// ---------------------------------------------------------------------------
// H-type barrier

/// The H-type barrier `h0(p) = |v|^4 + 16 |z|^2`, a smooth gauge-equivalent
/// replacement for the fourth power of the gauge norm.
pub fn htype_barrier(spec: &GroupSpec) -> Result<Arc<dyn Fn(&Point) -> f64 + Send + Sync>> {
    if !spec.is_htype() {
        return Err(Error::NotHType);
    }
    Ok(Arc::new(|p: &Point| {
        let vv: f64 = p.v.iter().map(|a| a * a).sum();
        let zz: f64 = p.z.iter().map(|a| a * a).sum();
        vv * vv + 16.0 * zz
    }))
}

/// Barrier data for the Perron construction: the barrier function, its
/// gauge lower-bound constant, the curvature-ratio bound, and the modulus
/// table `(eps, B_eps)`.
#[derive(Clone)]
pub struct BarrierSpec {
    pub h0: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    pub eps0: f64,
    pub curvature_bound: f64,
    pub b_table: Vec<(f64, f64)>,
}

impl BarrierSpec {
    pub fn new(
        h0: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
        eps0: f64,
        curvature_bound: f64,
    ) -> Result<BarrierSpec> {
        let spec = BarrierSpec {
            h0,
            eps0,
            curvature_bound,
            b_table: Vec::new(),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_table(mut self, b_table: Vec<(f64, f64)>) -> Result<BarrierSpec> {
        self.b_table = b_table;
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        if !(self.eps0 > 0.0) || !(self.curvature_bound > 0.0) {
            return Err(Error::BarrierInvalid(format!(
                "eps0 and the curvature bound must be positive, got {} and {}",
                self.eps0, self.curvature_bound
            )));
        }
        for &(eps, b) in &self.b_table {
            if !(eps > 0.0) || !(b >= 0.0) || !b.is_finite() {
                return Err(Error::BarrierInvalid(format!(
                    "modulus table entry (eps = {eps}, B = {b}) is invalid"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of [`barrier_validate`].
#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub max_ratio: f64,
    pub ratio_argmax: Vec<f64>,
    /// Violating point of the first failed check, if any.
    pub witness: Option<Vec<f64>>,
    #[serde(rename = "B_table")]
    pub b_table: Vec<(f64, f64)>,
    pub feasible: bool,
    pub lower_bound_ok: bool,
    pub smooth: bool,
    pub within_curvature_bound: bool,
    pub samples: usize,
}

impl BarrierReport {
    /// Empirical curvature constant with headroom, as fed into the Perron
    /// construction.
    pub fn suggested_bound(&self) -> f64 {
        HEADROOM * self.max_ratio
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Nested second-derivative oracle with a caller-chosen outer step, used to
/// probe twice-differentiability by comparing two scales.
fn second_oracle_at_step(
    spec: &GroupSpec,
    f: &dyn Fn(&Point) -> f64,
    p: &Point,
    i: usize,
    j: usize,
    outer_h: f64,
) -> Result<f64> {
    let inner =
        |q: &Point| horizontal_derivative_oracle(spec, f, q, j).expect("inner oracle evaluation");
    let at = |h: f64| -> Result<f64> {
        let plus = spec.product(p, &spec.basis_flow(i, h))?;
        let minus = spec.product(p, &spec.basis_flow(i, -h))?;
        Ok((inner(&plus) - inner(&minus)) / (2.0 * h))
    };
    let coarse = at(outer_h)?;
    let fine = at(0.5 * outer_h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Worst relative two-scale disagreement of the second-derivative oracle at
/// `p`, over all direction pairs.
fn smoothness_defect(spec: &GroupSpec, f: &dyn Fn(&Point) -> f64, p: &Point) -> Result<f64> {
    let m1 = spec.v_dim();
    let mut worst: f64 = 0.0;
    for i in 0..m1 {
        for j in i..m1 {
            let a = second_oracle_at_step(spec, f, p, i, j, ORACLE_STEP_SECOND)?;
            let b = second_oracle_at_step(spec, f, p, i, j, 0.5 * ORACLE_STEP_SECOND)?;
            worst = worst.max((a - b).abs() / (1.0 + a.abs().max(b.abs())));
        }
    }
    Ok(worst)
}

/// `det_+((D0^2 f)*) / (1 + |D0 f|^2)^((m1+1)/2)` with all derivatives taken
/// by the group-flow oracle; the quantity the curvature bound caps.
fn oracle_curvature_ratio(
    spec: &GroupSpec,
    f: &dyn Fn(&Point) -> f64,
    p: &Point,
) -> Result<f64> {
    let m1 = spec.v_dim();
    let mut grad = Vec::with_capacity(m1);
    for i in 0..m1 {
        grad.push(horizontal_derivative_oracle(spec, f, p, i)?);
    }
    let mut entries = vec![0.0; m1 * (m1 + 1) / 2];
    let mut k = 0;
    for i in 0..m1 {
        for j in i..m1 {
            let a = crate::field::horizontal_second_oracle(spec, f, p, i, j)?;
            let b = crate::field::horizontal_second_oracle(spec, f, p, j, i)?;
            entries[k] = 0.5 * (a + b);
            k += 1;
        }
    }
    let hess = SymMat::from_packed(m1, entries)?;
    Ok(graph_flow_rhs(&grad, &hess, DetVariant::DetPlus))
}

fn lattice_points(spec: &GroupSpec, radius: f64, n_samples: usize) -> Vec<Point> {
    let dim = spec.dim();
    let per_axis = ((n_samples as f64).powf(1.0 / dim as f64).ceil() as usize).max(3);
    let mut pts = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let coords: Vec<f64> = idx
            .iter()
            .map(|&k| -radius + 2.0 * radius * k as f64 / (per_axis - 1) as f64)
            .collect();
        pts.push(Point::from_coords(spec.v_dim(), &coords));
        let mut axis = 0;
        loop {
            if axis == dim {
                return pts;
            }
            idx[axis] += 1;
            if idx[axis] < per_axis {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Validates a barrier on a box of the given radius: (a) the gauge lower
/// bound `h0 >= eps0 |p|^(2r!)`, (b) twice-differentiability probed by
/// two-scale oracle consistency (including near the identity, where gauge
/// powers fail), and (c) the curvature ratio against the declared bound,
/// with the lattice maximum refined around its argmax.
pub fn barrier_validate(
    spec: &GroupSpec,
    barrier: &BarrierSpec,
    box_radius: f64,
    n_samples: usize,
) -> Result<BarrierReport> {
    barrier.check()?;
    if !(box_radius > 0.0) || n_samples == 0 {
        return Err(Error::InvalidParameter(format!(
            "need a positive box radius and sample count, got {box_radius} and {n_samples}"
        )));
    }
    let h0 = barrier.h0.as_ref();

    // (a) gauge lower bound on the lattice
    let pts = lattice_points(spec, box_radius, n_samples);
    let mut lower_bound_ok = true;
    let mut lower_witness = None;
    for p in &pts {
        let lhs = h0(p);
        let rhs = barrier.eps0 * spec.gauge_pow(p)?;
        if lhs < rhs - 1e-12 * (1.0 + rhs.abs()) {
            lower_bound_ok = false;
            lower_witness = Some(p.coords());
            break;
        }
    }

    // (b) smoothness probes: three dilation scales near the identity plus a
    // few lattice points
    let mut smooth = true;
    let mut smooth_witness = None;
    let mut probes = Vec::new();
    for scale in [0.5, 1.0, 2.0] {
        let s = scale * ORACLE_STEP_SECOND;
        let v: Vec<f64> = (0..spec.v_dim()).map(|i| s * (0.7 + 0.2 * i as f64)).collect();
        let z: Vec<f64> = (0..spec.z_dim()).map(|k| s * s * (0.4 + 0.3 * k as f64)).collect();
        probes.push(Point::new(v, z));
    }
    let stride = (pts.len() / 3).max(1);
    probes.extend(pts.iter().step_by(stride).take(3).cloned());
    for p in &probes {
        let defect = smoothness_defect(spec, h0, p)?;
        if defect > SMOOTHNESS_REL_TOL {
            smooth = false;
            smooth_witness = Some(p.coords());
            break;
        }
    }

    // (c) curvature ratio: lattice scan, then refinement around the argmax
    let mut max_ratio = f64::NEG_INFINITY;
    let mut argmax = pts[0].clone();
    for p in &pts {
        let r = oracle_curvature_ratio(spec, h0, p)?;
        if r > max_ratio {
            max_ratio = r;
            argmax = p.clone();
        }
    }
    let dim = spec.dim();
    let per_axis: usize = if dim > 4 { 3 } else { 5 };
    // Enough halvings that the final resolution, not the lattice pitch,
    // sets the error: the reported max then barely moves when the box
    // radius (and with it the pitch) changes.
    let mut radius = 2.0 * box_radius / (pts.len() as f64).powf(1.0 / dim as f64);
    for _ in 0..6 {
        let center = argmax.coords();
        let mut idx = vec![0usize; dim];
        'cells: loop {
            let coords: Vec<f64> = idx
                .iter()
                .zip(&center)
                .map(|(&k, &c)| c - radius + 2.0 * radius * k as f64 / (per_axis - 1) as f64)
                .collect();
            let p = Point::from_coords(spec.v_dim(), &coords);
            let r = oracle_curvature_ratio(spec, h0, &p)?;
            if r > max_ratio {
                max_ratio = r;
                argmax = p;
            }
            let mut axis = 0;
            loop {
                if axis == dim {
                    break 'cells;
                }
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
        radius *= 0.5;
    }

    let within_curvature_bound = max_ratio <= barrier.curvature_bound;
    let witness = if !lower_bound_ok {
        lower_witness
    } else if !smooth {
        smooth_witness
    } else if !within_curvature_bound {
        Some(argmax.coords())
    } else {
        None
    };
    Ok(BarrierReport {
        max_ratio,
        ratio_argmax: argmax.coords(),
        witness,
        b_table: barrier.b_table.clone(),
        feasible: lower_bound_ok && smooth && within_curvature_bound,
        lower_bound_ok,
        smooth,
        within_curvature_bound,
        samples: pts.len(),
    })
}

/// Smallest `B` (with 10% headroom) such that
/// `|h(x) - h(xi)| <= eps + B h0(xi^-1 x)` over the sampled pairs. Pairs
/// with `h0 < 1e-12` must already satisfy the bound without `B`; otherwise
/// `h` fails the hypothesis at this `eps`.
pub fn estimate_modulus(
    spec: &GroupSpec,
    h: &dyn Fn(&Point) -> f64,
    h0: &dyn Fn(&Point) -> f64,
    eps: f64,
    pairs: &[(Point, Point)],
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "modulus scale must be positive, got {eps}"
        )));
    }
    let mut worst: f64 = 0.0;
    for (x, xi) in pairs {
        let num = (h(x) - h(xi)).abs() - eps;
        if num <= 0.0 {
            continue;
        }
        let rel = spec.product(&spec.inverse(xi)?, x)?;
        let denom = h0(&rel);
        if denom < 1e-12 {
            return Err(Error::ModulusInfeasible(format!(
                "|h(x) - h(xi)| = {} > eps = {eps} at the near-coincident pair x = {:?}, xi = {:?} (h0 = {denom})",
                num + eps,
                x.coords(),
                xi.coords()
            )));
        }
        worst = worst.max(num / denom);
    }
    Ok(HEADROOM * worst)
}

/// [`estimate_modulus`] over every ordered pair of grid nodes — the exact
/// pair set [`perron_sandwich`] verifies, so a table built here is feasible
/// there by construction.
pub fn estimate_modulus_on_grid(
    spec: &GroupSpec,
    h: &dyn Fn(&Point) -> f64,
    h0: &dyn Fn(&Point) -> f64,
    eps: f64,
    grid: &Grid,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "modulus scale must be positive, got {eps}"
        )));
    }
    if grid.dim() != spec.dim() {
        return Err(Error::GridMismatch(format!(
            "grid has {} axes but the group needs {}",
            grid.dim(),
            spec.dim()
        )));
    }
    let nn = grid.node_count();
    let dim = grid.dim();
    let m1 = spec.v_dim();
    let m2 = spec.z_dim();
    let mut coords = vec![0.0; nn * dim];
    for node in 0..nn {
        grid.coords_into(node, &mut coords[node * dim..(node + 1) * dim]);
    }
    let h_vals: Vec<f64> = (0..nn)
        .map(|node| h(&Point::from_coords(m1, &coords[node * dim..(node + 1) * dim])))
        .collect();
    let mut scratch = Point::new(vec![0.0; m1], vec![0.0; m2]);
    let mut worst: f64 = 0.0;
    for x_node in 0..nn {
        let x = &coords[x_node * dim..(x_node + 1) * dim];
        for xi_node in 0..nn {
            let num = (h_vals[x_node] - h_vals[xi_node]).abs() - eps;
            if num <= 0.0 {
                continue;
            }
            let xi = &coords[xi_node * dim..(xi_node + 1) * dim];
            rel_point_into(spec, xi, x, &mut scratch);
            let denom = h0(&scratch);
            if denom < 1e-12 {
                return Err(Error::ModulusInfeasible(format!(
                    "|h(x) - h(xi)| = {} > eps = {eps} at the near-coincident pair x = {x:?}, xi = {xi:?} (h0 = {denom})",
                    num + eps
                )));
            }
            worst = worst.max(num / denom);
        }
    }
    Ok(HEADROOM * worst)
}

/// Writes `xi^-1 x` into `out` (v-part `x_v - xi_v`, z-part
/// `dz - [xi_v, x_v]_k / 2`), allocation-free.
fn rel_point_into(spec: &GroupSpec, xi: &[f64], x: &[f64], out: &mut Point) {
    let m1 = spec.v_dim();
    for i in 0..m1 {
        out.v[i] = x[i] - xi[i];
    }
    for k in 0..spec.z_dim() {
        let mut br = 0.0;
        for i in 0..m1 {
            if xi[i] == 0.0 {
                continue;
            }
            for j in 0..m1 {
                br += spec.bracket_const(k, i, j) * xi[i] * x[j];
            }
        }
        out.z[k] = x[m1 + k] - xi[m1 + k] - 0.5 * br;
    }
}

// ---------------------------------------------------------------------------
// H-type identities

/// Largest normalized deviations of the three H-type barrier identities
/// over a random sample: (a) the gradient identity, (b) the horizontal
/// Hessian closed form, (c) the bracket sum.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub max_gradient_dev: f64,
    pub max_hessian_dev: f64,
    pub max_bracket_dev: f64,
    pub samples: usize,
}

impl IdentityReport {
    pub fn max_dev(&self) -> f64 {
        self.max_gradient_dev
            .max(self.max_hessian_dev)
            .max(self.max_bracket_dev)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Verifies, via the derivative oracle against closed forms:
/// (a) `|D0 h0|^2 = 16 |v|^2 h0`,
/// (b) `(D0^2 h0)*_ij = 8 v_i v_j + 4 |v|^2 delta_ij + 8 <[v, X_j], [v, X_i]>`,
/// (c) `sum_j |[v, X_j]|^2 = m2 |v|^2`.
/// Deviations are normalized by `1 + |closed form|`.
pub fn htype_identities_check(
    spec: &GroupSpec,
    n_samples: usize,
    seed: u64,
    radius: f64,
) -> Result<IdentityReport> {
    let h0 = htype_barrier(spec)?;
    let h0 = h0.as_ref();
    let m1 = spec.v_dim();
    let m2 = spec.z_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev_a: f64 = 0.0;
    let mut dev_b: f64 = 0.0;
    let mut dev_c: f64 = 0.0;
    for _ in 0..n_samples {
        let p = spec.sample_box(&mut rng, radius);
        let vv: f64 = p.v.iter().map(|a| a * a).sum();

        // brackets [v, e_j] for (b) and (c)
        let brackets: Vec<Vec<f64>> = (0..m1)
            .map(|j| {
                let mut e = vec![0.0; m1];
                e[j] = 1.0;
                spec.bracket(&p.v, &e)
            })
            .collect();

        // (a) gradient identity
        let mut grad_sq = 0.0;
        for i in 0..m1 {
            let g = horizontal_derivative_oracle(spec, h0, &p, i)?;
            grad_sq += g * g;
        }
        let rhs_a = 16.0 * vv * h0(&p);
        dev_a = dev_a.max((grad_sq - rhs_a).abs() / (1.0 + rhs_a.abs()));

        // (b) Hessian closed form, symmetrized oracle entries
        for i in 0..m1 {
            for j in i..m1 {
                let a = crate::field::horizontal_second_oracle(spec, h0, &p, i, j)?;
                let b = crate::field::horizontal_second_oracle(spec, h0, &p, j, i)?;
                let lhs = 0.5 * (a + b);
                let pair: f64 = brackets[j].iter().zip(&brackets[i]).map(|(x, y)| x * y).sum();
                let delta = if i == j { 1.0 } else { 0.0 };
                let rhs = 8.0 * p.v[i] * p.v[j] + 4.0 * vv * delta + 8.0 * pair;
                dev_b = dev_b.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
            }
        }

        // (c) bracket sum
        let lhs_c: f64 = brackets
            .iter()
            .map(|b| b.iter().map(|x| x * x).sum::<f64>())
            .sum();
        let rhs_c = m2 as f64 * vv;
        dev_c = dev_c.max((lhs_c - rhs_c).abs() / (1.0 + rhs_c.abs()));
    }
    Ok(IdentityReport {
        max_gradient_dev: dev_a,
        max_hessian_dev: dev_b,
        max_bracket_dev: dev_c,
        samples: n_samples,
    })
}

// ---------------------------------------------------------------------------
// Perron sandwich

/// The discrete Perron upper envelope
/// `f(x, t) = min_eps (eps + m_eps(x) + B_eps C t)` with
/// `m_eps(x) = min_xi (h(xi) + B_eps h0(xi^-1 x))` tabulated per node.
pub struct PerronEnvelope {
    grid: Grid,
    b_table: Vec<(f64, f64)>,
    curvature_bound: f64,
    /// `m[e][node]`, one table per modulus entry.
    m: Vec<Vec<f64>>,
}

impl PerronEnvelope {
    pub fn eval_node(&self, node: usize, t: f64) -> f64 {
        self.b_table
            .iter()
            .zip(&self.m)
            .map(|(&(eps, b), m)| eps + m[node] + b * self.curvature_bound * t)
            .fold(f64::INFINITY, f64::min)
    }

    /// Evaluation at grid coordinates (the boundary-closure entry point);
    /// the point must coincide with a node.
    pub fn eval_coords(&self, x: &[f64], t: f64) -> Result<f64> {
        let node = self.grid.flat_index_of_coords(x)?;
        Ok(self.eval_node(node, t))
    }

    /// Wraps the envelope as Dirichlet data for the flow solver.
    pub fn flow_boundary(self: &Arc<Self>) -> Boundary {
        let env = Arc::clone(self);
        Boundary::TimeDependent(Arc::new(move |x, t| {
            env.eval_coords(x, t).expect("boundary point lies on the grid")
        }))
    }
}

/// The Perron pair: static subsolution `z(x,t) = h(x)`, upper envelope `f`,
/// and the envelope itself for evaluation at arbitrary times.
pub struct PerronSandwich {
    pub z: SpaceTimeField,
    pub f: SpaceTimeField,
    pub envelope: Arc<PerronEnvelope>,
}

/// Builds the Perron sandwich for boundary data `h` on a grid: verifies the
/// modulus hypothesis on all sampled pairs (naming a violating pair
/// otherwise), then tabulates the envelope. Guarantees
/// `h <= f(., 0) <= h + min eps` on the nodes.
pub fn perron_sandwich(
    spec: &GroupSpec,
    h: &dyn Fn(&Point) -> f64,
    barrier: &BarrierSpec,
    grid: &Grid,
    times: &[f64],
) -> Result<PerronSandwich> {
    barrier.check()?;
    if barrier.b_table.is_empty() {
        return Err(Error::BarrierInvalid(
            "the modulus table is empty; estimate B_eps first".into(),
        ));
    }
    if grid.dim() != spec.dim() {
        return Err(Error::GridMismatch(format!(
            "grid has {} axes but the group needs {}",
            grid.dim(),
            spec.dim()
        )));
    }
    check_times(times)?;
    if times[0] < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "envelope times must be >= 0, got {}",
            times[0]
        )));
    }

    let nn = grid.node_count();
    let dim = grid.dim();
    let m1 = spec.v_dim();
    let m2 = spec.z_dim();
    let mut coords = vec![0.0; nn * dim];
    for node in 0..nn {
        grid.coords_into(node, &mut coords[node * dim..(node + 1) * dim]);
    }
    let h0 = barrier.h0.as_ref();
    let h_vals: Vec<f64> = (0..nn)
        .map(|node| {
            let c = &coords[node * dim..(node + 1) * dim];
            h(&Point::from_coords(m1, c))
        })
        .collect();

    // m_eps tables; the argmin of each node doubles as the modulus witness
    let mut scratch = Point::new(vec![0.0; m1], vec![0.0; m2]);
    let mut m_tables = Vec::with_capacity(barrier.b_table.len());
    for &(eps, b) in &barrier.b_table {
        let mut m_eps = vec![f64::INFINITY; nn];
        for x_node in 0..nn {
            let x = &coords[x_node * dim..(x_node + 1) * dim];
            let mut best = f64::INFINITY;
            let mut best_xi = 0usize;
            for xi_node in 0..nn {
                let xi = &coords[xi_node * dim..(xi_node + 1) * dim];
                rel_point_into(spec, xi, x, &mut scratch);
                let cand = h_vals[xi_node] + b * h0(&scratch);
                if cand < best {
                    best = cand;
                    best_xi = xi_node;
                }
            }
            let slack = 1e-9 * (1.0 + h_vals[x_node].abs());
            if h_vals[x_node] > eps + best + slack {
                let xi = &coords[best_xi * dim..(best_xi + 1) * dim];
                return Err(Error::ModulusInfeasible(format!(
                    "|h(x) - h(xi)| > eps + B_eps h0 at eps = {eps}: x = {:?} (h = {}), xi = {:?} (h = {})",
                    &coords[x_node * dim..(x_node + 1) * dim],
                    h_vals[x_node],
                    xi,
                    h_vals[best_xi]
                )));
            }
            m_eps[x_node] = best;
        }
        m_tables.push(m_eps);
    }

    let envelope = Arc::new(PerronEnvelope {
        grid: grid.clone(),
        b_table: barrier.b_table.clone(),
        curvature_bound: barrier.curvature_bound,
        m: m_tables,
    });

    // two-sided bound at t = 0
    let min_eps = barrier
        .b_table
        .iter()
        .map(|&(eps, _)| eps)
        .fold(f64::INFINITY, f64::min);
    for node in 0..nn {
        let f0 = envelope.eval_node(node, 0.0);
        let slack = 1e-9 * (1.0 + h_vals[node].abs());
        if f0 < h_vals[node] - slack || f0 > h_vals[node] + min_eps + slack {
            return Err(Error::BarrierInvalid(format!(
                "envelope violates the sandwich at node {node}: h = {}, f(.,0) = {f0}, min eps = {min_eps}",
                h_vals[node]
            )));
        }
    }

    let z = SpaceTimeField {
        grid: grid.clone(),
        times: times.to_vec(),
        values: times.iter().flat_map(|_| h_vals.iter().copied()).collect(),
    };
    let mut f_values = Vec::with_capacity(nn * times.len());
    for &t in times {
        for node in 0..nn {
            f_values.push(envelope.eval_node(node, t));
        }
    }
    let f = SpaceTimeField {
        grid: grid.clone(),
        times: times.to_vec(),
        values: f_values,
    };
    Ok(PerronSandwich { z, f, envelope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Axis;
    use crate::oracles::grim_reaper;

    fn heis() -> GroupSpec {
        GroupSpec::heisenberg(1).unwrap()
    }

    fn small_field(spec: &GroupSpec) -> SpaceTimeField {
        let grid = Grid::centered_box(spec, 1.0, 5).unwrap();
        let times = vec![0.0, 0.1, 0.2, 0.3];
        SpaceTimeField::from_fn(grid, times, |x, t| {
            (x[0] * 1.3 - x[1] * 0.7 + x[2]).sin() + 0.5 * t
        })
        .unwrap()
    }

    #[test]
    fn space_time_fields_validate_and_interpolate() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 4).unwrap();
        assert!(SpaceTimeField::from_fn(grid.clone(), vec![0.0, 0.0], |_, _| 0.0).is_err());
        assert!(SpaceTimeField::from_fn(grid.clone(), vec![0.2, 0.1], |_, _| 0.0).is_err());
        let with_origin = Grid::centered_box(&spec, 1.0, 5).unwrap();
        assert!(
            SpaceTimeField::from_fn(with_origin, vec![0.0, 0.1], |x, _| 1.0 / x[0]).is_err(),
            "division by a node at the origin must be caught"
        );
        let f = SpaceTimeField::from_fn(grid, vec![0.0, 0.1, 0.4], |x, t| x[0] + t).unwrap();
        // exact at samples, linear between
        assert!((f.interp_time(0, 0.1).unwrap() - f.value(0, 1)).abs() < 1e-15);
        let mid = f.interp_time(0, 0.25).unwrap();
        assert!((mid - 0.5 * (f.value(0, 1) + f.value(0, 2))).abs() < 1e-15);
        assert!(f.interp_time(0, 0.5).is_err());
    }

    #[test]
    fn classification_matches_the_sign_of_the_residual() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let times = vec![0.0, 0.05, 0.1, 0.15];

        // constant: solution everywhere
        let c = SpaceTimeField::from_fn(grid.clone(), times.clone(), |_, _| 2.5).unwrap();
        let rep = residual_classify(&spec, &c, DetVariant::DetPlus, 1e-12).unwrap();
        assert!(rep.is_solution());
        assert_eq!(rep.count(SampleClass::Solution), rep.samples.len());

        // static convex: u_t = 0 <= rhs, subsolution but not a solution
        let s = SpaceTimeField::from_fn(grid, times, |x, _| x[0] * x[0] + x[1] * x[1]).unwrap();
        let rep = residual_classify(&spec, &s, DetVariant::DetPlus, 1e-9).unwrap();
        assert!(rep.is_subsolution());
        assert!(!rep.is_solution());
        assert!(rep.count(SampleClass::Subsolution) > 0);
        assert!(rep.max_residual < 0.0);
    }

    #[test]
    fn grim_reaper_classifies_as_solution_at_stencil_tolerance() {
        let sol = grim_reaper();
        let spec = sol.spec().clone();
        let grid = Grid::for_group(&spec, vec![Axis::new(-0.8, 0.8, 41)]).unwrap();
        let times: Vec<f64> = (0..5).map(|k| 0.05 * k as f64).collect();
        let u = SpaceTimeField::from_fn(grid, times, |x, t| {
            sol.eval(&Point::new(vec![x[0]], vec![]), t)
        })
        .unwrap();
        let rep = residual_classify(&spec, &u, DetVariant::DetPlus, 1e-2).unwrap();
        assert!(
            rep.is_solution(),
            "residual range [{}, {}]",
            rep.min_residual,
            rep.max_residual
        );
    }

    #[test]
    fn envelopes_dominate_and_order_in_eps() {
        let spec = heis();
        let w = small_field(&spec);
        let up_small = sup_convolution(&spec, &w, 0.05).unwrap();
        let up_large = sup_convolution(&spec, &w, 0.5).unwrap();
        let lo = inf_convolution(&spec, &w, 0.05).unwrap();
        for ti in 0..w.times().len() {
            for node in 0..w.grid().node_count() {
                let v = w.value(node, ti);
                assert!(up_small.value(node, ti) >= v - 1e-12);
                assert!(up_large.value(node, ti) >= up_small.value(node, ti) - 1e-12);
                assert!(lo.value(node, ti) <= v + 1e-12);
            }
        }
        // constant field: envelope equals the field exactly
        let grid = Grid::centered_box(&spec, 1.0, 4).unwrap();
        let c = SpaceTimeField::from_fn(grid, vec![0.0, 0.1], |_, _| 3.0).unwrap();
        let up = sup_convolution(&spec, &c, 0.1).unwrap();
        for (a, b) in up.values.iter().zip(&c.values) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn envelope_error_decreases_along_an_eps_ladder() {
        let spec = heis();
        let grid = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let w = SpaceTimeField::from_fn(grid, vec![0.0, 0.1], |x, _| {
            let p = Point::new(vec![x[0], x[1]], vec![x[2]]);
            spec.gauge_pow(&p).unwrap()
        })
        .unwrap();
        let mut errors = Vec::new();
        for eps in [0.1, 0.01, 0.001] {
            let up = sup_convolution(&spec, &w, eps).unwrap();
            let err = up
                .values
                .iter()
                .zip(&w.values)
                .map(|(a, b)| a - b)
                .fold(0.0f64, f64::max);
            errors.push(err);
        }
        // the discrete envelope collapses onto the field once the penalty
        // outweighs every cross-sample gain, so the tail is non-strict
        assert!(errors[0] >= errors[1] && errors[1] >= errors[2], "{errors:?}");
        assert!(errors[0] > errors[2], "{errors:?}");
        assert!(errors[2] < 0.05, "eps = 0.001 error {}", errors[2]);
    }

    #[test]
    fn strictify_shifts_values_and_residuals_in_closed_form() {
        let spec = heis();
        let w = small_field(&spec);
        let t_end = 1.0;
        let eps = 0.1;

        // identity at eps = 0
        let same = strictify(&w, 0.0, t_end).unwrap();
        assert_eq!(same.values, w.values);

        let tilde = strictify(&w, eps, t_end).unwrap();
        // value drop is exactly eps/(T - t): at t = 0.5, T = 1, eps = 0.1 -> 0.2
        let shifted = strictify(
            &SpaceTimeField::from_fn(w.grid().clone(), vec![0.3, 0.5, 0.7], |_, _| 1.0).unwrap(),
            eps,
            t_end,
        )
        .unwrap();
        assert!((shifted.value(0, 1) - (1.0 - 0.2)).abs() < 1e-15);

        // the residual shift equals the time stencil of -eps/(T - t)
        // exactly, and exceeds the analytic margin eps/T^2 on [0, T/2]
        let before = residual_classify(&spec, &w, DetVariant::DetPlus, 1e-9).unwrap();
        let after = residual_classify(&spec, &tilde, DetVariant::DetPlus, 1e-9).unwrap();
        for (a, b) in before.samples.iter().zip(&after.samples) {
            let ti = a.time_index;
            let g = |t: f64| -eps / (t_end - t);
            let stencil = time_derivative(
                w.times()[ti - 1],
                w.times()[ti],
                w.times()[ti + 1],
                g(w.times()[ti - 1]),
                g(w.times()[ti]),
                g(w.times()[ti + 1]),
            );
            let shift = b.residual - a.residual;
            assert!((shift - stencil).abs() < 1e-12, "shift {shift} vs {stencil}");
            if w.times()[ti] <= t_end / 2.0 {
                assert!(shift <= -eps / (t_end * t_end) + 1e-12);
            }
        }

        // a sample at or past the horizon is rejected
        assert!(strictify(&w, eps, 0.3).is_err());
    }

    #[test]
    fn scaling_respects_the_admissibility_constraint() {
        let spec = heis();
        let w = small_field(&spec);

        // identity scaling
        let same = scale_subsolution(&spec, &w, 1.0, 1.0).unwrap();
        for (a, b) in same.values.iter().zip(&w.values) {
            assert!((a - b).abs() < 1e-15);
        }

        // m1 = 2: (0.5, 0.5) sits on the constraint boundary; (0.4, 0.5) fails
        assert!(scale_subsolution(&spec, &w, 0.5, 0.5).is_ok());
        match scale_subsolution(&spec, &w, 0.4, 0.5) {
            Err(Error::InvalidParameter(msg)) => assert!(msg.contains("inadmissible")),
            _ => panic!("inadmissible pair accepted"),
        }

        // scaled grim reaper stays a subsolution (m1 = 1)
        let sol = grim_reaper();
        let gspec = sol.spec().clone();
        let grid = Grid::for_group(&gspec, vec![Axis::new(-0.8, 0.8, 31)]).unwrap();
        let times: Vec<f64> = (0..5).map(|k| 0.05 * k as f64).collect();
        let u = SpaceTimeField::from_fn(grid, times, |x, t| {
            sol.eval(&Point::new(vec![x[0]], vec![]), t)
        })
        .unwrap();
        let scaled = scale_subsolution(&gspec, &u, 0.7, 0.9).unwrap();
        let rep = residual_classify(&gspec, &scaled, DetVariant::DetPlus, 1e-2).unwrap();
        assert!(rep.is_subsolution(), "max residual {}", rep.max_residual);
    }

    #[test]
    fn htype_barrier_matches_hand_values_and_rejects_step_one() {
        let spec = heis();
        let h0 = htype_barrier(&spec).unwrap();
        assert_eq!(h0(&Point::new(vec![0.0, 0.0], vec![0.0])), 0.0);
        assert_eq!(h0(&Point::new(vec![1.0, 0.0], vec![0.0])), 1.0);
        assert_eq!(h0(&Point::new(vec![0.0, 0.0], vec![1.0])), 16.0);
        assert!(matches!(
            htype_barrier(&GroupSpec::euclidean(2).unwrap()),
            Err(Error::NotHType)
        ));
    }

    #[test]
    fn barrier_validation_passes_for_the_htype_barrier() {
        let spec = heis();
        let h0 = htype_barrier(&spec).unwrap();
        let barrier = BarrierSpec::new(h0, 1.0, 1e6).unwrap();
        let report = barrier_validate(&spec, &barrier, 3.0, 500).unwrap();
        assert!(report.lower_bound_ok);
        assert!(report.smooth);
        assert!(report.within_curvature_bound);
        assert!(report.feasible);
        assert!(report.max_ratio.is_finite() && report.max_ratio > 0.0);
        let json = report.to_json();
        assert!(json.contains("\"max_ratio\""));
        assert!(json.contains("\"B_table\""));
        assert!(json.contains("\"feasible\""));
    }

    #[test]
    fn gauge_square_is_flagged_as_not_twice_differentiable() {
        let spec = heis();
        let g2 = Arc::new({
            let spec = spec.clone();
            move |p: &Point| spec.gauge_norm(p).unwrap().powi(2)
        });
        let barrier = BarrierSpec::new(g2, 1.0, 1e6).unwrap();
        let report = barrier_validate(&spec, &barrier, 2.0, 200).unwrap();
        assert!(!report.smooth, "gauge^2 must fail the oracle-consistency probe");
        assert!(!report.feasible);
        assert!(report.witness.is_some());
    }

    #[test]
    fn modulus_estimates_match_hand_cases() {
        let spec = heis();
        let h0 = htype_barrier(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(Point, Point)> = (0..200)
            .map(|_| (spec.sample_box(&mut rng, 1.0), spec.sample_box(&mut rng, 1.0)))
            .collect();

        // constant h
        let b = estimate_modulus(&spec, &|_| 4.0, h0.as_ref(), 0.1, &pairs).unwrap();
        assert_eq!(b, 0.0);

        // h = clamp(h0, 0, M): increments bounded by h0 itself
        let h0c = Arc::clone(&h0);
        let clamped = move |p: &Point| h0c(p).min(2.0);
        let b = estimate_modulus(&spec, &clamped, h0.as_ref(), 0.05, &pairs).unwrap();
        assert!(b.is_finite() && b >= 0.0);

        // jump across near-coincident points: infeasible
        let jump = |p: &Point| if p.v[0] > 0.0 { 1.0 } else { -1.0 };
        let tight = vec![(
            Point::new(vec![1e-4, 0.0], vec![0.0]),
            Point::new(vec![-1e-4, 0.0], vec![0.0]),
        )];
        assert!(matches!(
            estimate_modulus(&spec, &jump, h0.as_ref(), 0.5, &tight),
            Err(Error::ModulusInfeasible(_))
        ));
    }

    #[test]
    fn htype_identities_hold_to_oracle_tolerance() {
        for spec in [heis(), GroupSpec::quaternionic()] {
            let report = htype_identities_check(&spec, 50, 17, 1.2).unwrap();
            assert!(report.max_dev() < 1e-6, "{}", report.to_json());
        }
        assert!(htype_identities_check(&GroupSpec::euclidean(2).unwrap(), 5, 0, 1.0).is_err());
    }

    #[test]
    fn perron_sandwich_brackets_the_boundary_data() {
        let spec = heis();
        let h0 = htype_barrier(&spec).unwrap();
        let grid = Grid::centered_box(&spec, 1.0, 7).unwrap();
        let times = vec![0.0, 0.1, 0.2];
        let h0c = Arc::clone(&h0);
        let h = move |p: &Point| h0c(p).min(1.5);

        // estimate each B_eps over the very pair set the sandwich verifies
        let mut table = Vec::new();
        for eps in [0.5, 0.25, 0.1] {
            let b = estimate_modulus_on_grid(&spec, &h, h0.as_ref(), eps, &grid).unwrap();
            table.push((eps, b));
        }
        let barrier = BarrierSpec::new(Arc::clone(&h0), 1.0, 60.0)
            .unwrap()
            .with_table(table)
            .unwrap();
        let sandwich = perron_sandwich(&spec, &h, &barrier, &grid, &times).unwrap();

        let nn = grid.node_count();
        for node in 0..nn {
            let hv = sandwich.z.value(node, 0);
            let f0 = sandwich.f.value(node, 0);
            assert!(f0 >= hv - 1e-9 && f0 <= hv + 0.1 + 1e-9, "node {node}");
            // z <= f at every time
            for ti in 0..times.len() {
                assert!(sandwich.z.value(node, ti) <= sandwich.f.value(node, ti) + 1e-12);
            }
        }

        // h == 0: f(x, t) = min(eps + B C t) >= 0 = z
        let zero = |_: &Point| 0.0;
        let b0 = estimate_modulus_on_grid(&spec, &zero, h0.as_ref(), 0.3, &grid).unwrap();
        let barrier0 = BarrierSpec::new(Arc::clone(&h0), 1.0, 60.0)
            .unwrap()
            .with_table(vec![(0.3, b0)])
            .unwrap();
        let s0 = perron_sandwich(&spec, &zero, &barrier0, &grid, &times).unwrap();
        for ti in 0..times.len() {
            for node in 0..nn {
                assert!((s0.f.value(node, ti) - 0.3).abs() < 1e-12, "B = 0 freezes f at eps");
                assert_eq!(s0.z.value(node, ti), 0.0);
            }
        }
    }

    #[test]
    fn envelope_shrinks_as_the_sample_set_grows() {
        let spec = heis();
        let h0 = htype_barrier(&spec).unwrap();
        let h0c = Arc::clone(&h0);
        let h = move |p: &Point| h0c(p).min(1.0);
        let coarse = Grid::centered_box(&spec, 1.0, 5).unwrap();
        let fine = Grid::centered_box(&spec, 1.0, 9).unwrap();
        let times = vec![0.0, 0.1];

        // the fine grid's pairs cover the coarse grid's, so one estimate
        // serves both sandwiches
        let b = estimate_modulus_on_grid(&spec, &h, h0.as_ref(), 0.4, &fine).unwrap();
        let barrier = BarrierSpec::new(Arc::clone(&h0), 1.0, 60.0)
            .unwrap()
            .with_table(vec![(0.4, b)])
            .unwrap();

        let sc = perron_sandwich(&spec, &h, &barrier, &coarse, &times).unwrap();
        let sf = perron_sandwich(&spec, &h, &barrier, &fine, &times).unwrap();
        // coarse nodes are a subset of fine nodes: the richer xi-set can
        // only lower the envelope
        let mut c = vec![0.0; coarse.dim()];
        for node in 0..coarse.node_count() {
            coarse.coords_into(node, &mut c);
            let f_fine = sf.envelope.eval_coords(&c, 0.1).unwrap();
            let f_coarse = sc.envelope.eval_coords(&c, 0.1).unwrap();
            assert!(f_fine <= f_coarse + 1e-12);
        }
    }
}
