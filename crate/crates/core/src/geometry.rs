//! Geometry of graphs over the horizontal layer: normals, curvature,
//! flow right-hand sides, and convexity diagnostics.
//!
//! Pointwise quantities take the horizontal gradient and symmetrized
//! horizontal Hessian as plain values, so closed-form data can bypass grids
//! entirely; field-level wrappers map the same formulas over grid nodes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{horizontal_gradient, horizontal_hessian, ScalarField};
use crate::group::GroupSpec;
use crate::linalg::{det, det_plus, inverse_posdef, min_eigenvalue, SymMat, EIG_ZERO_CLAMP_REL};

/// Which determinant the flow right-hand side uses: the signed determinant
/// or its positive-part clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetVariant {
    Det,
    DetPlus,
}

/// Scale factor for the characteristic-point guard of the level-set
/// evaluator: the threshold is `CHAR_TOL_REL * (1 + sup |D0 u|)`.
pub const CHAR_TOL_REL: f64 = 1e-8;

pub fn characteristic_tolerance(sup_grad: f64) -> f64 {
    CHAR_TOL_REL * (1.0 + sup_grad)
}

/// Downward horizontal unit normal of a graph, `(D0 u, -1)` normalized;
/// `m1 + 1` components.
pub fn horizontal_normal(d0u: &[f64]) -> Vec<f64> {
    let g2: f64 = d0u.iter().map(|a| a * a).sum();
    let s = 1.0 / (1.0 + g2).sqrt();
    let mut out: Vec<f64> = d0u.iter().map(|a| a * s).collect();
    out.push(-s);
    out
}

/// `base^(halves / 2)` for positive `base`: the curvature denominators all
/// carry half-integer exponents, and `powi` + `sqrt` beats `powf` in the
/// solver's per-node loop.
#[inline]
fn half_power(base: f64, halves: i32) -> f64 {
    let whole = base.powi(halves / 2);
    if halves % 2 == 1 {
        whole * base.sqrt()
    } else {
        whole
    }
}

/// Horizontal Gauss curvature of a graph:
/// `det(H) / (1 + |D0 u|^2)^((m1 + 2) / 2)`.
pub fn graph_gauss_curvature(d0u: &[f64], h: &SymMat) -> f64 {
    let m1 = d0u.len() as i32;
    let g2: f64 = d0u.iter().map(|a| a * a).sum();
    det(h) / half_power(1.0 + g2, m1 + 2)
}

/// Graph-flow speed: `det_variant(H) / (1 + |D0 u|^2)^((m1 + 1) / 2)`.
pub fn graph_flow_rhs(d0u: &[f64], h: &SymMat, variant: DetVariant) -> f64 {
    let m1 = d0u.len() as i32;
    let g2: f64 = d0u.iter().map(|a| a * a).sum();
    let d = match variant {
        DetVariant::Det => det(h),
        DetVariant::DetPlus => det_plus(h),
    };
    d / half_power(1.0 + g2, m1 + 1)
}

/// Level-set flow speed
/// `|D0 u| * det((1/|D0 u|) (I - P) H (I - P) + P)` with
/// `P = nu0 (x) nu0`. Errors at characteristic points (`|D0 u| <= char_tol`).
pub fn levelset_flow_rhs(d0u: &[f64], h: &SymMat, char_tol: f64) -> Result<f64> {
    let m = d0u.len();
    debug_assert_eq!(h.dim(), m);
    let g: f64 = d0u.iter().map(|a| a * a).sum::<f64>().sqrt();
    if g <= char_tol {
        return Err(Error::CharacteristicPoint { threshold: char_tol });
    }
    let nu: Vec<f64> = d0u.iter().map(|a| a / g).collect();
    // (I - P) H (I - P) assembled entrywise: H - nu hᵀ - h nuᵀ + (nuᴴnu) nu nuᵀ
    let hnu: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|j| h.get(i, j) * nu[j]).sum())
        .collect();
    let nhn: f64 = (0..m).map(|i| nu[i] * hnu[i]).sum();
    let mt = SymMat::from_fn(m, |i, j| {
        let proj = h.get(i, j) - nu[i] * hnu[j] - hnu[i] * nu[j] + nhn * nu[i] * nu[j];
        proj / g + nu[i] * nu[j]
    });
    Ok(g * det(&mt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityClass {
    Convex,
    Degenerate,
    Nonconvex,
}

/// Pointwise-minimum eigenvalue of the symmetrized horizontal Hessian over
/// interior nodes, with the node that attains it.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub min_eig: f64,
    pub class: ConvexityClass,
    pub node_index: usize,
}

impl ConvexityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Classifies interior convexity of a sampled graph function: convex when
/// the minimum Hessian eigenvalue exceeds `margin`, nonconvex when it lies
/// below `-margin`, degenerate in between.
pub fn classify_convexity(spec: &GroupSpec, u: &ScalarField, margin: f64) -> Result<ConvexityReport> {
    if margin < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "convexity margin must be >= 0, got {margin}"
        )));
    }
    let hess = horizontal_hessian(spec, u)?;
    let mut min_eig = f64::INFINITY;
    let mut node_index = usize::MAX;
    for node in u.grid().interior_nodes() {
        let e = min_eigenvalue(&hess.get(node));
        if e < min_eig {
            min_eig = e;
            node_index = node;
        }
    }
    if node_index == usize::MAX {
        return Err(Error::GridMismatch("grid has no interior nodes".into()));
    }
    let class = if min_eig > margin {
        ConvexityClass::Convex
    } else if min_eig < -margin {
        ConvexityClass::Nonconvex
    } else {
        ConvexityClass::Degenerate
    };
    Ok(ConvexityReport {
        min_eig,
        class,
        node_index,
    })
}

/// Residual of the convexity-preservation hypothesis for initial data `u0`:
/// with `G = det_+((D0^2 u0)*) / (1 + |D0 u0|^2)^((m1+1)/2)` the per-node
/// value is
///
/// `-(m1 + 1) / (1 + |D0 u0|) * G * <D0 u0, D0 G> + G * tr(H^{-1} (D0^2 G)*)`
///
/// and the hypothesis holds iff the field is >= 0 everywhere. Nodes where
/// the Hessian of `u0` is not positive definite cannot be evaluated; they
/// are set to NaN and returned in the flagged list.
pub fn convexity_hypothesis_residual(
    spec: &GroupSpec,
    u0: &ScalarField,
) -> Result<(ScalarField, Vec<usize>)> {
    let m1 = spec.v_dim() as f64;
    let grad = horizontal_gradient(spec, u0)?;
    let hess = horizontal_hessian(spec, u0)?;
    let n = u0.grid().node_count();

    let mut g_field = ScalarField::constant(u0.grid().clone(), 0.0);
    for node in 0..n {
        let d0u = grad.get(node);
        g_field.values_mut()[node] = graph_flow_rhs(d0u, &hess.get(node), DetVariant::DetPlus);
    }
    let g_grad = horizontal_gradient(spec, &g_field)?;
    let g_hess = horizontal_hessian(spec, &g_field)?;

    let mut out = ScalarField::constant(u0.grid().clone(), 0.0);
    let mut flagged = Vec::new();
    for node in 0..n {
        let h = hess.get(node);
        let clamp = EIG_ZERO_CLAMP_REL * h.frobenius_norm();
        if min_eigenvalue(&h) <= clamp {
            out.values_mut()[node] = f64::NAN;
            flagged.push(node);
            continue;
        }
        let h_inv = inverse_posdef(&h)?;
        let d0u = grad.get(node);
        let g = g_field.values()[node];
        let dg = g_grad.get(node);
        let gh = g_hess.get(node);
        let grad_norm: f64 = d0u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let pairing: f64 = d0u.iter().zip(dg).map(|(a, b)| a * b).sum();
        let m = spec.v_dim();
        let mut trace = 0.0;
        for i in 0..m {
            for j in 0..m {
                trace += h_inv.get(j, i) * gh.get(i, j);
            }
        }
        out.values_mut()[node] =
            -(m1 + 1.0) / (1.0 + grad_norm) * g * pairing + g * trace;
    }
    Ok((out, flagged))
}
