//! Closed-form solutions of the curvature flow used as ground truth:
//! the translating graph in one variable, the shrinking cylinder over the
//! horizontal layer, and the self-similarity of the cylinder under
//! dilations. Every constructor verifies its own residual before returning.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{graph_flow_rhs, levelset_flow_rhs, DetVariant};
use crate::group::{GroupSpec, Point};
use crate::linalg::SymMat;

/// Residual bound every constructor enforces on its own samples.
pub const SELF_TEST_TOL: f64 = 1e-9;
const LEVELSET_CHAR_TOL: f64 = 1e-8;

/// Which equation the solution satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetEquation {
    /// Graph flow `u_t = det_variant((D0^2 u)*) / (1+|D0 u|^2)^((m1+1)/2)`.
    Graph(DetVariant),
    /// Level-set flow of the zero set of `u`.
    LevelSet,
}

type ValueFn = Box<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&Point, f64) -> Vec<f64> + Send + Sync>;
type HessFn = Box<dyn Fn(&Point, f64) -> SymMat + Send + Sync>;
type DomainFn = Box<dyn Fn(&Point, f64) -> bool + Send + Sync>;

/// A closed-form solution bundling the value, its time derivative, its
/// horizontal gradient and Hessian, and a domain predicate.
pub struct ExactSolution {
    name: String,
    spec: GroupSpec,
    target: TargetEquation,
    t_range: (f64, f64),
    u: ValueFn,
    u_t: ValueFn,
    grad0: GradFn,
    hess0: HessFn,
    domain: DomainFn,
}

impl ExactSolution {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn target(&self) -> TargetEquation {
        self.target
    }

    /// Open time interval on which the solution exists.
    pub fn time_range(&self) -> (f64, f64) {
        self.t_range
    }

    pub fn in_domain(&self, p: &Point, t: f64) -> bool {
        t > self.t_range.0 && t < self.t_range.1 && (self.domain)(p, t)
    }

    pub fn eval(&self, p: &Point, t: f64) -> f64 {
        (self.u)(p, t)
    }

    pub fn dt(&self, p: &Point, t: f64) -> f64 {
        (self.u_t)(p, t)
    }

    pub fn gradient(&self, p: &Point, t: f64) -> Vec<f64> {
        (self.grad0)(p, t)
    }

    pub fn hessian(&self, p: &Point, t: f64) -> SymMat {
        (self.hess0)(p, t)
    }

    /// `u_t - rhs` of the target equation at `(p, t)`; zero up to rounding
    /// wherever the solution is exact.
    pub fn residual(&self, p: &Point, t: f64) -> Result<f64> {
        if !self.in_domain(p, t) {
            return Err(Error::InvalidParameter(format!(
                "point {:?} at t = {t} lies outside the domain of `{}`",
                p.coords(),
                self.name
            )));
        }
        let grad = self.gradient(p, t);
        let hess = self.hessian(p, t);
        let rhs = match self.target {
            TargetEquation::Graph(variant) => graph_flow_rhs(&grad, &hess, variant),
            TargetEquation::LevelSet => levelset_flow_rhs(&grad, &hess, LEVELSET_CHAR_TOL)?,
        };
        Ok(self.dt(p, t) - rhs)
    }

    fn self_test(&self, samples: &[(Point, f64)]) {
        for (p, t) in samples {
            let r = self
                .residual(p, *t)
                .expect("self-test samples lie inside the domain");
            assert!(
                r.abs() <= SELF_TEST_TOL,
                "`{}` violates its own equation at {:?}, t = {t}: residual {r}",
                self.name,
                p.coords()
            );
        }
    }
}

/// Translating graph `u(x, t) = t - ln cos x` on the line: unit vertical
/// speed, exact for the graph flow with either determinant variant.
pub fn grim_reaper() -> ExactSolution {
    let spec = GroupSpec::euclidean(1).expect("the line is a valid group");
    let half_width = std::f64::consts::FRAC_PI_2;
    let sol = ExactSolution {
        name: "grim_reaper".into(),
        spec,
        target: TargetEquation::Graph(DetVariant::DetPlus),
        t_range: (f64::NEG_INFINITY, f64::INFINITY),
        u: Box::new(|p, t| t - p.v[0].cos().ln()),
        u_t: Box::new(|_, _| 1.0),
        grad0: Box::new(|p, _| vec![p.v[0].tan()]),
        hess0: Box::new(|p, _| {
            let sec2 = 1.0 / (p.v[0].cos() * p.v[0].cos());
            SymMat::from_fn(1, |_, _| sec2)
        }),
        domain: Box::new(move |p, _| p.v[0].abs() < half_width - 1e-9),
    };
    let samples: Vec<(Point, f64)> = [-1.4, -0.9, -0.3, 0.0, 0.5, 1.1, 1.5]
        .iter()
        .flat_map(|&x| {
            [(Point::new(vec![x], vec![]), -2.0), (Point::new(vec![x], vec![]), 3.5)]
        })
        .collect();
    sol.self_test(&samples);
    sol
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Radius of the shrinking cylinder at time `t`.
fn cylinder_radius(m1: f64, r0: f64, t: f64) -> f64 {
    (r0.powf(m1) - m1 * t).powf(1.0 / m1)
}

/// Shrinking cylinder `u(p, t) = |v|^2 - rho(t)^2` with
/// `rho(t) = (r0^m1 - m1 t)^(1/m1)`: its zero set is the radius-`rho(t)`
/// cylinder over the horizontal layer, an exact level-set flow. The
/// equation holds on the zero set (and, when `m1 = 2`, at every
/// non-characteristic point).
pub fn shrinking_cylinder(spec: &GroupSpec, r0: f64) -> Result<ExactSolution> {
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cylinder radius must be positive, got {r0}"
        )));
    }
    let m1 = spec.v_dim() as f64;
    let extinction = r0.powf(m1) / m1;
    let m = spec.v_dim();
    let sol = ExactSolution {
        name: "shrinking_cylinder".into(),
        spec: spec.clone(),
        target: TargetEquation::LevelSet,
        t_range: (f64::NEG_INFINITY, extinction),
        u: Box::new(move |p, t| {
            let rho = cylinder_radius(m1, r0, t);
            p.v.iter().map(|a| a * a).sum::<f64>() - rho * rho
        }),
        u_t: Box::new(move |_, t| 2.0 * cylinder_radius(m1, r0, t).powf(2.0 - m1)),
        grad0: Box::new(|p, _| p.v.iter().map(|a| 2.0 * a).collect()),
        hess0: Box::new(move |_, _| {
            SymMat::from_fn(m, |i, j| if i == j { 2.0 } else { 0.0 })
        }),
        domain: Box::new(|p, _| norm(&p.v) > 1e-3),
    };
    let samples = cylinder_samples(spec, r0, extinction);
    sol.self_test(&samples);
    Ok(sol)
}

/// Deterministic points on the moving cylinder at a few times, used by the
/// constructor self-test.
fn cylinder_samples(spec: &GroupSpec, r0: f64, extinction: f64) -> Vec<(Point, f64)> {
    let m1 = spec.v_dim() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::new();
    for k in 0..4 {
        let t = extinction * 0.2 * k as f64;
        let rho = cylinder_radius(m1, r0, t);
        for _ in 0..6 {
            let mut v: Vec<f64> = (0..spec.v_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm(&v);
            if n < 1e-6 {
                v[0] = 1.0;
            }
            let n = norm(&v);
            for a in &mut v {
                *a *= rho / n;
            }
            let z: Vec<f64> = (0..spec.z_dim()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            out.push((Point::new(v, z), t));
        }
    }
    out
}

/// Outcome of the dilation/self-similarity check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SelfSimilarityReport {
    pub max_abs: f64,
    pub samples: usize,
    pub scale: f64,
}

/// Verifies that the cylinder evolves self-similarly: dilating a point of
/// the initial cylinder by `lambda(t) = rho(t) / r0` lands on the
/// time-`t` cylinder, i.e. `u(delta_lambda p, t) = 0`. Points must lie on
/// the initial surface.
pub fn self_similarity_check(
    spec: &GroupSpec,
    r0: f64,
    t: f64,
    points: &[Point],
) -> Result<SelfSimilarityReport> {
    let sol = shrinking_cylinder(spec, r0)?;
    if !(t >= 0.0 && t < sol.time_range().1) {
        return Err(Error::InvalidParameter(format!(
            "t = {t} is outside [0, {})",
            sol.time_range().1
        )));
    }
    let m1 = spec.v_dim() as f64;
    let lambda = cylinder_radius(m1, r0, t) / r0;
    let surface_tol = 1e-9 * (1.0 + r0 * r0);
    let mut max_abs: f64 = 0.0;
    for p in points {
        let u0 = sol.eval(p, 0.0);
        if u0.abs() > surface_tol {
            return Err(Error::InvalidParameter(format!(
                "point {:?} is not on the initial cylinder (u0 = {u0})",
                p.coords()
            )));
        }
        let q = spec.dilate(lambda, p)?;
        max_abs = max_abs.max(sol.eval(&q, t).abs());
    }
    Ok(SelfSimilarityReport {
        max_abs,
        samples: points.len(),
        scale: lambda,
    })
}

/// Seeded sample of points on the radius-`r` cylinder (random horizontal
/// direction, random vertical part).
pub fn points_on_cylinder(spec: &GroupSpec, r: f64, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..spec.v_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nrm = norm(&v);
            if nrm < 1e-6 {
                v[0] = 1.0;
            }
            let nrm = norm(&v);
            for a in &mut v {
                *a *= r / nrm;
            }
            let z: Vec<f64> = (0..spec.z_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Point::new(v, z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grim_reaper_solves_its_equation_exactly() {
        let sol = grim_reaper();
        assert_eq!(sol.spec().v_dim(), 1);
        for &x in &[-1.5, -0.7, 0.0, 0.4, 1.2] {
            for &t in &[-1.0, 0.0, 2.0] {
                let p = Point::new(vec![x], vec![]);
                let r = sol.residual(&p, t).unwrap();
                assert!(r.abs() < 1e-14, "x = {x}: {r}");
                assert!((sol.dt(&p, t) - 1.0).abs() < 1e-15);
                assert!((sol.gradient(&p, t)[0] - x.tan()).abs() < 1e-12);
            }
        }
        // the profile only translates: u(x, t) - u(x, 0) = t
        let p = Point::new(vec![0.9], vec![]);
        assert!((sol.eval(&p, 0.7) - sol.eval(&p, 0.0) - 0.7).abs() < 1e-15);
        // domain ends at the asymptotes
        assert!(!sol.in_domain(&Point::new(vec![1.6], vec![]), 0.0));
    }

    #[test]
    fn cylinder_is_exact_on_the_moving_surface() {
        for spec in [
            GroupSpec::euclidean(1).unwrap(),
            GroupSpec::heisenberg(1).unwrap(),
            GroupSpec::heisenberg(2).unwrap(),
            GroupSpec::quaternionic(),
        ] {
            let r0 = 1.0;
            let sol = shrinking_cylinder(&spec, r0).unwrap();
            let m1 = spec.v_dim() as f64;
            let extinction = r0.powf(m1) / m1;
            assert!((sol.time_range().1 - extinction).abs() < 1e-12);
            for &frac in &[0.0, 0.3, 0.6] {
                let t = frac * extinction;
                let rho = cylinder_radius(m1, r0, t);
                for p in points_on_cylinder(&spec, rho, 20, 11) {
                    let r = sol.residual(&p, t).unwrap();
                    assert!(r.abs() < 1e-9, "m1 = {m1}, t = {t}: residual {r}");
                }
            }
        }
    }

    #[test]
    fn cylinder_residual_off_the_surface_matches_the_radial_gap() {
        // m1 = 1: residual = 2 rho(t) - 2|v|, nonzero off the zero set
        let spec = GroupSpec::euclidean(1).unwrap();
        let sol = shrinking_cylinder(&spec, 1.0).unwrap();
        let p = Point::new(vec![0.4], vec![]);
        let r = sol.residual(&p, 0.0).unwrap();
        assert!((r - (2.0 - 0.8)).abs() < 1e-12, "residual {r}");

        // m1 = 2: the same function solves the equation everywhere
        // away from the characteristic axis
        let spec = GroupSpec::heisenberg(1).unwrap();
        let sol = shrinking_cylinder(&spec, 1.0).unwrap();
        for &(a, b) in &[(0.7, 0.1), (0.2, -0.4), (1.3, 0.9)] {
            let p = Point::new(vec![a, b], vec![0.3]);
            let r = sol.residual(&p, 0.1).unwrap();
            assert!(r.abs() < 1e-12, "residual {r} at ({a}, {b})");
        }
    }

    #[test]
    fn cylinder_rejects_characteristic_and_expired_queries() {
        let spec = GroupSpec::heisenberg(1).unwrap();
        let sol = shrinking_cylinder(&spec, 1.0).unwrap();
        let axis_point = Point::new(vec![0.0, 0.0], vec![0.2]);
        assert!(!sol.in_domain(&axis_point, 0.1));
        assert!(sol.residual(&axis_point, 0.1).is_err());
        let p = Point::new(vec![1.0, 0.0], vec![0.0]);
        assert!(sol.residual(&p, 0.51).is_err(), "extinction is at t = 0.5");
    }

    #[test]
    fn dilations_carry_the_initial_cylinder_along_the_flow() {
        let spec = GroupSpec::heisenberg(1).unwrap();
        let pts = points_on_cylinder(&spec, 1.0, 50, 3);
        let report = self_similarity_check(&spec, 1.0, 0.3, &pts).unwrap();
        assert_eq!(report.samples, 50);
        assert!(report.max_abs < 1e-10, "max |u| = {}", report.max_abs);
        assert!((report.scale - (1.0f64 - 2.0 * 0.3).sqrt()).abs() < 1e-12);

        // off-surface points are rejected by name
        let bad = vec![Point::new(vec![0.5, 0.0], vec![0.0])];
        assert!(self_similarity_check(&spec, 1.0, 0.3, &bad).is_err());
        // queries at or past extinction are rejected
        assert!(self_similarity_check(&spec, 1.0, 0.5, &pts).is_err());
    }
}
