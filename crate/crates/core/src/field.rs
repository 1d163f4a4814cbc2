//! Sampled fields on tensor-product grids and the horizontal differential
//! operators built from the left-invariant frame.
//!
//! Euclidean partials use central O(h^2) stencils in the interior and
//! one-sided O(h^2) stencils at the boundary. Horizontal derivatives are the
//! frame-weighted combinations of Euclidean ones; the symmetrized horizontal
//! Hessian is the frame sandwich `A D^2u A^T` (the first-order frame
//! correction is antisymmetric and drops out of the symmetrization exactly,
//! so it is never formed).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::group::{GroupSpec, Point};
use crate::linalg::SymMat;

/// Base step for first-order oracle differences (one Richardson level on
/// top).
pub const ORACLE_STEP_FIRST: f64 = 1e-3;
/// Outer base step for nested second-order oracle differences.
pub const ORACLE_STEP_SECOND: f64 = 5e-3;

/// Uniformly sampled closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Axis {
        Axis { lo, hi, n }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + self.spacing() * i as f64
    }
}

/// Tensor-product grid; axis order is horizontal coordinates first, then
/// vertical ones, matching `Point::coords`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    names: Vec<String>,
    strides: Vec<usize>,
    n_nodes: usize,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Grid> {
        let names = (1..=axes.len()).map(|i| format!("x{i}")).collect();
        Grid::with_names(axes, names)
    }

    /// Grid over a group's coordinates; axes are named `v1.. z1..` and the
    /// axis count must match the group dimension.
    pub fn for_group(spec: &GroupSpec, axes: Vec<Axis>) -> Result<Grid> {
        if axes.len() != spec.dim() {
            return Err(Error::DimensionMismatch {
                context: "grid axes for group",
                expected: spec.dim(),
                got: axes.len(),
            });
        }
        let names = (0..axes.len())
            .map(|a| {
                if a < spec.v_dim() {
                    format!("v{}", a + 1)
                } else {
                    format!("z{}", a + 1 - spec.v_dim())
                }
            })
            .collect();
        Grid::with_names(axes, names)
    }

    fn with_names(axes: Vec<Axis>, names: Vec<String>) -> Result<Grid> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one axis".into()));
        }
        for (i, ax) in axes.iter().enumerate() {
            if ax.n < 3 {
                return Err(Error::InvalidParameter(format!(
                    "axis {i} has {} nodes; need at least 3",
                    ax.n
                )));
            }
            if !(ax.hi > ax.lo) || !ax.lo.is_finite() || !ax.hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "axis {i} range [{}, {}] is invalid",
                    ax.lo, ax.hi
                )));
            }
        }
        let d = axes.len();
        let mut strides = vec![0usize; d];
        let mut acc = 1usize;
        for a in (0..d).rev() {
            strides[a] = acc;
            acc = acc
                .checked_mul(axes[a].n)
                .ok_or_else(|| Error::InvalidParameter("grid too large".into()))?;
        }
        Ok(Grid {
            axes,
            names,
            strides,
            n_nodes: acc,
        })
    }

    /// Cube `[-radius, radius]^dim` with `n` nodes per axis.
    pub fn centered_box(spec: &GroupSpec, radius: f64, n: usize) -> Result<Grid> {
        Grid::for_group(spec, vec![Axis::new(-radius, radius, n); spec.dim()])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis_names(&self) -> &[String] {
        &self.names
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .map(Axis::spacing)
            .fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    #[inline]
    pub fn axis_index(&self, node: usize, a: usize) -> usize {
        (node / self.strides[a]) % self.axes[a].n
    }

    pub fn coords_into(&self, node: usize, out: &mut [f64]) {
        for a in 0..self.axes.len() {
            out[a] = self.axes[a].coord(self.axis_index(node, a));
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(node, &mut out);
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum()
    }

    /// Node index of a point that coincides with a grid node (up to
    /// rounding); errors when the coordinates miss every node.
    pub fn flat_index_of_coords(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::GridMismatch(format!(
                "point has {} coordinates, grid has {} axes",
                x.len(),
                self.dim()
            )));
        }
        let mut node = 0;
        for (a, (&c, axis)) in x.iter().zip(&self.axes).enumerate() {
            let rel = (c - axis.lo) / axis.spacing();
            let i = rel.round();
            if (rel - i).abs() > 1e-9 * (1.0 + rel.abs()) || i < 0.0 || i as usize >= axis.n {
                return Err(Error::GridMismatch(format!(
                    "coordinate {c} on axis {a} does not sit on a grid node"
                )));
            }
            node += (i as usize) * self.strides[a];
        }
        Ok(node)
    }

    /// True when no axis index sits on the boundary.
    pub fn is_interior(&self, node: usize) -> bool {
        (0..self.axes.len()).all(|a| {
            let i = self.axis_index(node, a);
            i > 0 && i + 1 < self.axes[a].n
        })
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_nodes).filter(|&i| self.is_interior(i))
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_nodes).filter(|&i| !self.is_interior(i))
    }
}

/// Scalar samples on a grid, optionally stamped with a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    time: Option<f64>,
}

impl ScalarField {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                context: "scalar field values",
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        Ok(ScalarField {
            grid,
            values,
            time: None,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let mut values = vec![0.0; grid.node_count()];
        let mut buf = vec![0.0; grid.dim()];
        for (node, slot) in values.iter_mut().enumerate() {
            grid.coords_into(node, &mut buf);
            *slot = f(&buf);
        }
        ScalarField {
            grid,
            values,
            time: None,
        }
    }

    pub fn constant(grid: Grid, c: f64) -> ScalarField {
        let n = grid.node_count();
        ScalarField {
            grid,
            values: vec![c; n],
            time: None,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> ScalarField {
        self.time = Some(t);
        self
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation; errors off the grid's bounding box.
    pub fn interp(&self, x: &[f64]) -> Result<f64> {
        let d = self.grid.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "interp coordinates",
                expected: d,
                got: x.len(),
            });
        }
        let mut base = vec![0usize; d];
        let mut w = vec![0.0; d];
        for a in 0..d {
            let ax = self.grid.axis(a);
            let t = (x[a] - ax.lo) / ax.spacing();
            let slack = 1e-9 * (1.0 + t.abs());
            if t < -slack || t > (ax.n - 1) as f64 + slack {
                return Err(Error::InvalidParameter(format!(
                    "coordinate {} = {} outside axis range [{}, {}]",
                    a, x[a], ax.lo, ax.hi
                )));
            }
            let i = (t.floor() as isize).clamp(0, ax.n as isize - 2) as usize;
            base[a] = i;
            w[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut node = 0usize;
            for a in 0..d {
                let up = (corner >> a) & 1 == 1;
                weight *= if up { w[a] } else { 1.0 - w[a] };
                node += (base[a] + up as usize) * self.grid.stride(a);
            }
            if weight != 0.0 {
                acc += weight * self.values[node];
            }
        }
        Ok(acc)
    }

    /// CSV with one row per node: coordinates then the value; the header
    /// names the axes.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for name in self.grid.axis_names() {
            let _ = write!(out, "{name},");
        }
        out.push_str("value\n");
        let mut buf = vec![0.0; self.grid.dim()];
        for (node, v) in self.values.iter().enumerate() {
            self.grid.coords_into(node, &mut buf);
            for c in &buf {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{v}");
        }
        out
    }
}

/// Per-node vectors (for example a horizontal gradient field).
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Grid,
    dim: usize,
    data: Vec<f64>,
}

impl VectorField {
    fn zeros(grid: Grid, dim: usize) -> VectorField {
        let n = grid.node_count();
        VectorField {
            grid,
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, node: usize) -> &[f64] {
        &self.data[node * self.dim..(node + 1) * self.dim]
    }

    #[inline]
    fn get_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.data[node * self.dim..(node + 1) * self.dim]
    }

    /// One component as a scalar field.
    pub fn component(&self, c: usize) -> ScalarField {
        let values = (0..self.grid.node_count())
            .map(|node| self.data[node * self.dim + c])
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
            time: None,
        }
    }
}

/// Per-node symmetric matrices, upper triangle only.
#[derive(Debug, Clone)]
pub struct SymMatrixField {
    grid: Grid,
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrixField {
    fn zeros(grid: Grid, dim: usize) -> SymMatrixField {
        let n = grid.node_count();
        let per = dim * (dim + 1) / 2;
        SymMatrixField {
            grid,
            dim,
            data: vec![0.0; n * per],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn per_node(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn get(&self, node: usize) -> SymMat {
        SymMat::from_packed(self.dim, self.packed_at(node).to_vec())
            .expect("stored triangle has the right length")
    }

    /// Packed upper triangle at one node without copying; pair with
    /// `SymMat::copy_from_packed` on a scratch matrix in per-node loops.
    #[inline]
    pub fn packed_at(&self, node: usize) -> &[f64] {
        let per = self.per_node();
        &self.data[node * per..(node + 1) * per]
    }

    fn set_packed(&mut self, node: usize, packed: &[f64]) {
        let per = self.per_node();
        self.data[node * per..(node + 1) * per].copy_from_slice(packed);
    }

    /// CSV with coordinates then the upper-triangle entries `m_ij`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for name in self.grid.axis_names() {
            let _ = write!(out, "{name},");
        }
        let mut cols = Vec::new();
        for i in 0..self.dim {
            for j in i..self.dim {
                cols.push(format!("m_{}{}", i + 1, j + 1));
            }
        }
        out.push_str(&cols.join(","));
        out.push('\n');
        let per = self.per_node();
        let mut buf = vec![0.0; self.grid.dim()];
        for node in 0..self.grid.node_count() {
            self.grid.coords_into(node, &mut buf);
            for c in &buf {
                let _ = write!(out, "{c},");
            }
            let row: Vec<String> = self.data[node * per..(node + 1) * per]
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// First difference along one axis: central inside, one-sided O(h^2) at the
/// ends.
fn first_difference(values: &[f64], grid: &Grid, axis: usize, out: &mut [f64]) {
    let n = grid.axis(axis).n;
    let s = grid.stride(axis);
    let h = grid.axis(axis).spacing();
    for (node, slot) in out.iter_mut().enumerate() {
        let i = grid.axis_index(node, axis);
        *slot = if i == 0 {
            (-3.0 * values[node] + 4.0 * values[node + s] - values[node + 2 * s]) / (2.0 * h)
        } else if i + 1 == n {
            (3.0 * values[node] - 4.0 * values[node - s] + values[node - 2 * s]) / (2.0 * h)
        } else {
            (values[node + s] - values[node - s]) / (2.0 * h)
        };
    }
}

/// Second difference along one axis: central inside; at the ends a 4-point
/// one-sided O(h^2) stencil, falling back to the 3-point O(h) one when the
/// axis has only 3 nodes.
fn second_difference(values: &[f64], grid: &Grid, axis: usize, out: &mut [f64]) {
    let n = grid.axis(axis).n;
    let s = grid.stride(axis);
    let h2 = grid.axis(axis).spacing().powi(2);
    for (node, slot) in out.iter_mut().enumerate() {
        let i = grid.axis_index(node, axis);
        *slot = if i > 0 && i + 1 < n {
            (values[node + s] - 2.0 * values[node] + values[node - s]) / h2
        } else if i == 0 {
            if n >= 4 {
                (2.0 * values[node] - 5.0 * values[node + s] + 4.0 * values[node + 2 * s]
                    - values[node + 3 * s])
                    / h2
            } else {
                (values[node] - 2.0 * values[node + s] + values[node + 2 * s]) / h2
            }
        } else if n >= 4 {
            (2.0 * values[node] - 5.0 * values[node - s] + 4.0 * values[node - 2 * s]
                - values[node - 3 * s])
                / h2
        } else {
            (values[node] - 2.0 * values[node - s] + values[node - 2 * s]) / h2
        };
    }
}

/// All Euclidean first partials of a scalar field.
pub fn euclidean_partials(u: &ScalarField) -> VectorField {
    let d = u.grid.dim();
    let mut out = VectorField::zeros(u.grid.clone(), d);
    let mut col = vec![0.0; u.grid.node_count()];
    for a in 0..d {
        first_difference(&u.values, &u.grid, a, &mut col);
        for (node, v) in col.iter().enumerate() {
            out.get_mut(node)[a] = *v;
        }
    }
    out
}

/// Full Euclidean Hessian. Mixed entries compose two first differences
/// (each pair is computed once, so symmetry is exact); diagonal entries use
/// the dedicated second-difference stencil.
pub fn euclidean_hessian(u: &ScalarField) -> SymMatrixField {
    let d = u.grid.dim();
    let nn = u.grid.node_count();
    let mut out = SymMatrixField::zeros(u.grid.clone(), d);
    let mut col = vec![0.0; nn];
    let mut col2 = vec![0.0; nn];
    let per = d * (d + 1) / 2;
    let tri_index = |i: usize, j: usize| i * d - i * (i + 1) / 2 + j;
    for a in 0..d {
        second_difference(&u.values, &u.grid, a, &mut col);
        for node in 0..nn {
            out.data[node * per + tri_index(a, a)] = col[node];
        }
        first_difference(&u.values, &u.grid, a, &mut col);
        for b in (a + 1)..d {
            first_difference(&col, &u.grid, b, &mut col2);
            for node in 0..nn {
                out.data[node * per + tri_index(a, b)] = col2[node];
            }
        }
    }
    out
}

fn check_group_grid(spec: &GroupSpec, grid: &Grid) -> Result<()> {
    if grid.dim() != spec.dim() {
        return Err(Error::GridMismatch(format!(
            "grid has {} axes but the group needs {}",
            grid.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

/// Horizontal gradient: frame rows applied to the Euclidean gradient.
pub fn horizontal_gradient(spec: &GroupSpec, u: &ScalarField) -> Result<VectorField> {
    check_group_grid(spec, &u.grid)?;
    let partials = euclidean_partials(u);
    let m = spec.v_dim();
    let d = spec.dim();
    let mut out = VectorField::zeros(u.grid.clone(), m);
    let mut coords = vec![0.0; d];
    let mut frame = vec![0.0; m * d];
    for node in 0..u.grid.node_count() {
        u.grid.coords_into(node, &mut coords);
        spec.frame_rows_into(&coords[..m], &mut frame);
        let du = partials.get(node);
        let slot = out.get_mut(node);
        for i in 0..m {
            let row = &frame[i * d..(i + 1) * d];
            slot[i] = row.iter().zip(du).map(|(a, g)| a * g).sum();
        }
    }
    Ok(out)
}

/// Vertical-layer gradient (plain partials in the `z` coordinates).
pub fn second_layer_gradient(spec: &GroupSpec, u: &ScalarField) -> Result<VectorField> {
    check_group_grid(spec, &u.grid)?;
    if spec.step() < 2 {
        return Err(Error::InvalidParameter(
            "step-1 group has no second layer".into(),
        ));
    }
    let m = spec.v_dim();
    let k = spec.z_dim();
    let mut out = VectorField::zeros(u.grid.clone(), k);
    let mut col = vec![0.0; u.grid.node_count()];
    for a in 0..k {
        first_difference(&u.values, &u.grid, m + a, &mut col);
        for (node, v) in col.iter().enumerate() {
            out.get_mut(node)[a] = *v;
        }
    }
    Ok(out)
}

/// Symmetrized horizontal Hessian `A D^2u A^T`. The omitted first-order
/// frame correction is antisymmetric, so this equals the symmetrization of
/// the full second-order horizontal derivative exactly.
pub fn horizontal_hessian(spec: &GroupSpec, u: &ScalarField) -> Result<SymMatrixField> {
    check_group_grid(spec, &u.grid)?;
    let hess = euclidean_hessian(u);
    let m = spec.v_dim();
    let d = spec.dim();
    let mut out = SymMatrixField::zeros(u.grid.clone(), m);
    let mut coords = vec![0.0; d];
    let mut frame = vec![0.0; m * d];
    let mut packed = vec![0.0; m * (m + 1) / 2];
    let mut tmp = vec![0.0; m * d]; // A * D2u, row-major m x d
    let tri = |i: usize, j: usize| i * d - i * (i + 1) / 2 + j;
    for node in 0..u.grid.node_count() {
        u.grid.coords_into(node, &mut coords);
        spec.frame_rows_into(&coords[..m], &mut frame);
        let h = hess.packed_at(node);
        let at = |i: usize, j: usize| {
            if i <= j {
                h[tri(i, j)]
            } else {
                h[tri(j, i)]
            }
        };
        for i in 0..m {
            let row = &frame[i * d..(i + 1) * d];
            for l in 0..d {
                let mut acc = 0.0;
                for (kk, &a) in row.iter().enumerate() {
                    if a != 0.0 {
                        acc += a * at(kk, l);
                    }
                }
                tmp[i * d + l] = acc;
            }
        }
        let mut t = 0;
        for i in 0..m {
            for j in i..m {
                let row_j = &frame[j * d..(j + 1) * d];
                let mut acc = 0.0;
                for (l, &a) in row_j.iter().enumerate() {
                    if a != 0.0 {
                        acc += tmp[i * d + l] * a;
                    }
                }
                packed[t] = acc;
                t += 1;
            }
        }
        out.set_packed(node, &packed);
    }
    Ok(out)
}

fn central_difference(
    spec: &GroupSpec,
    u: &dyn Fn(&Point) -> f64,
    p: &Point,
    direction: usize,
    h: f64,
) -> Result<f64> {
    let plus = spec.product(p, &spec.basis_flow(direction, h))?;
    let minus = spec.product(p, &spec.basis_flow(direction, -h))?;
    Ok((u(&plus) - u(&minus)) / (2.0 * h))
}

/// First-order horizontal derivative of a closure along basis direction
/// `i`, via group-flow central differences with one Richardson level. This
/// is the stencil-free reference the grid operators are tested against.
pub fn horizontal_derivative_oracle(
    spec: &GroupSpec,
    u: &dyn Fn(&Point) -> f64,
    p: &Point,
    direction: usize,
) -> Result<f64> {
    let h = ORACLE_STEP_FIRST;
    let coarse = central_difference(spec, u, p, direction, h)?;
    let fine = central_difference(spec, u, p, direction, 0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Second-order horizontal derivative `X_i (X_j u)` by nesting two
/// first-order oracle evaluations.
pub fn horizontal_second_oracle(
    spec: &GroupSpec,
    u: &dyn Fn(&Point) -> f64,
    p: &Point,
    i: usize,
    j: usize,
) -> Result<f64> {
    let inner = |q: &Point| -> f64 {
        horizontal_derivative_oracle(spec, u, q, j).expect("inner oracle evaluation")
    };
    let h = ORACLE_STEP_SECOND;
    let coarse = central_difference(spec, &inner, p, i, h)?;
    let fine = central_difference(spec, &inner, p, i, 0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Directional derivative oracle of order 1 (`X_i u`) or 2 (`X_i X_i u`).
pub fn directional_derivative_oracle(
    spec: &GroupSpec,
    u: &dyn Fn(&Point) -> f64,
    p: &Point,
    direction: usize,
    order: u8,
) -> Result<f64> {
    match order {
        1 => horizontal_derivative_oracle(spec, u, p, direction),
        2 => horizontal_second_oracle(spec, u, p, direction, direction),
        o => Err(Error::InvalidParameter(format!(
            "derivative order must be 1 or 2, got {o}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heis() -> GroupSpec {
        GroupSpec::heisenberg(1).unwrap()
    }

    fn heis_grid(n: usize) -> Grid {
        Grid::centered_box(&heis(), 1.0, n).unwrap()
    }

    #[test]
    fn stencils_are_exact_on_quadratics() {
        let g = Grid::new(vec![Axis::new(-1.0, 1.0, 5), Axis::new(0.0, 2.0, 4)]).unwrap();
        let u = ScalarField::from_fn(g.clone(), |x| {
            2.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1] * x[1] + 3.0 * x[0] - 7.0
        });
        let du = euclidean_partials(&u);
        let hess = euclidean_hessian(&u);
        let mut c = vec![0.0; 2];
        for node in 0..g.node_count() {
            g.coords_into(node, &mut c);
            let want0 = 4.0 * c[0] - c[1] + 3.0;
            let want1 = -c[0] + c[1];
            assert!((du.get(node)[0] - want0).abs() < 1e-12, "node {node}");
            assert!((du.get(node)[1] - want1).abs() < 1e-12);
            let h = hess.get(node);
            assert!((h.get(0, 0) - 4.0).abs() < 1e-11);
            assert!((h.get(0, 1) + 1.0).abs() < 1e-11);
            assert!((h.get(1, 1) - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn stencil_convergence_is_second_order() {
        // interior error on sin(2x) should fall ~4x when h halves
        let err = |n: usize| {
            let g = Grid::new(vec![Axis::new(-1.0, 1.0, n)]).unwrap();
            let u = ScalarField::from_fn(g.clone(), |x| (2.0 * x[0]).sin());
            let du = euclidean_partials(&u);
            let mut worst: f64 = 0.0;
            for node in g.interior_nodes() {
                let x = g.coords(node)[0];
                worst = worst.max((du.get(node)[0] - 2.0 * (2.0 * x).cos()).abs());
            }
            worst
        };
        let (e1, e2) = (err(41), err(81));
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn horizontal_gradient_picks_up_bracket_terms() {
        // u = z on the Heisenberg group: D0 u = (v2 / 2, -v1 / 2)
        let g = heis_grid(5);
        let u = ScalarField::from_fn(g.clone(), |x| x[2]);
        let d0 = horizontal_gradient(&heis(), &u).unwrap();
        let mut c = vec![0.0; 3];
        for node in 0..g.node_count() {
            g.coords_into(node, &mut c);
            assert!((d0.get(node)[0] - 0.5 * c[1]).abs() < 1e-13);
            assert!((d0.get(node)[1] + 0.5 * c[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn horizontal_hessian_of_squared_norm_is_twice_identity() {
        let g = heis_grid(6);
        let u = ScalarField::from_fn(g.clone(), |x| x[0] * x[0] + x[1] * x[1]);
        let h = horizontal_hessian(&heis(), &u).unwrap();
        for node in 0..g.node_count() {
            let m = h.get(node);
            assert!((m.get(0, 0) - 2.0).abs() < 1e-11);
            assert!((m.get(1, 1) - 2.0).abs() < 1e-11);
            assert!(m.get(0, 1).abs() < 1e-11);
        }
    }

    #[test]
    fn horizontal_hessian_of_affine_vertical_function_vanishes() {
        let g = heis_grid(5);
        let u = ScalarField::from_fn(g.clone(), |x| 4.0 * x[2] - 1.0);
        let h = horizontal_hessian(&heis(), &u).unwrap();
        for node in 0..g.node_count() {
            let m = h.get(node);
            for i in 0..2 {
                for j in 0..2 {
                    assert!(m.get(i, j).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn vertical_gradient_requires_step_two() {
        let e = GroupSpec::euclidean(2).unwrap();
        let g = Grid::centered_box(&e, 1.0, 4).unwrap();
        let u = ScalarField::constant(g, 0.0);
        assert!(second_layer_gradient(&e, &u).is_err());

        let g = heis_grid(5);
        let u = ScalarField::from_fn(g.clone(), |x| 3.0 * x[2] * x[2]);
        let dz = second_layer_gradient(&heis(), &u).unwrap();
        let mut c = vec![0.0; 3];
        for node in 0..g.node_count() {
            g.coords_into(node, &mut c);
            assert!((dz.get(node)[0] - 6.0 * c[2]).abs() < 1e-11);
        }
    }

    #[test]
    fn oracle_signs_match_the_derived_frame() {
        // X_1 applied to u = z at ((0, 1), 0) is +1/2
        let spec = heis();
        let u = |p: &Point| p.z[0];
        let p = Point::new(vec![0.0, 1.0], vec![0.0]);
        let d = horizontal_derivative_oracle(&spec, &u, &p, 0).unwrap();
        assert!((d - 0.5).abs() < 1e-10, "got {d}");
        let d = horizontal_derivative_oracle(&spec, &u, &p, 1).unwrap();
        assert!(d.abs() < 1e-10);
    }

    #[test]
    fn oracle_second_order_on_squared_norm() {
        let spec = heis();
        let u = |p: &Point| p.v.iter().map(|a| a * a).sum::<f64>();
        let p = Point::new(vec![0.7, -0.4], vec![0.2]);
        for i in 0..2 {
            let d = directional_derivative_oracle(&spec, &u, &p, i, 2).unwrap();
            assert!((d - 2.0).abs() < 1e-8, "direction {i}: {d}");
        }
        let mixed = horizontal_second_oracle(&spec, &u, &p, 0, 1).unwrap();
        assert!(mixed.abs() < 1e-8);
    }

    #[test]
    fn grid_operators_match_oracle_on_a_polynomial() {
        // cross-check the two derivative paths on u = v1^2 v2 + z^2
        let spec = heis();
        let g = heis_grid(7);
        let poly = |x: &[f64]| x[0] * x[0] * x[1] + x[2] * x[2];
        let u = ScalarField::from_fn(g.clone(), poly);
        let closure = |p: &Point| p.v[0] * p.v[0] * p.v[1] + p.z[0] * p.z[0];
        let d0 = horizontal_gradient(&spec, &u).unwrap();
        let h0 = horizontal_hessian(&spec, &u).unwrap();
        let mut c = vec![0.0; 3];
        for node in g.interior_nodes().step_by(17) {
            g.coords_into(node, &mut c);
            let p = Point::from_coords(2, &c);
            for i in 0..2 {
                let want = horizontal_derivative_oracle(&spec, &closure, &p, i).unwrap();
                assert!((d0.get(node)[i] - want).abs() < 1e-6);
            }
            let m = h0.get(node);
            for i in 0..2 {
                for j in i..2 {
                    let a = horizontal_second_oracle(&spec, &closure, &p, i, j).unwrap();
                    let b = horizontal_second_oracle(&spec, &closure, &p, j, i).unwrap();
                    assert!((m.get(i, j) - 0.5 * (a + b)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn interpolation_is_exact_on_multilinear_data_and_errors_outside() {
        let g = Grid::new(vec![Axis::new(0.0, 1.0, 4), Axis::new(-1.0, 1.0, 5)]).unwrap();
        let u = ScalarField::from_fn(g, |x| 2.0 + 3.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        let probe = [0.37, 0.61];
        let want = 2.0 + 3.0 * probe[0] - probe[1] + 0.5 * probe[0] * probe[1];
        assert!((u.interp(&probe).unwrap() - want).abs() < 1e-13);
        assert!(u.interp(&[1.5, 0.0]).is_err());
        assert!(u.interp(&[0.5, -1.2]).is_err());
    }

    #[test]
    fn csv_has_named_header_and_one_row_per_node() {
        let spec = heis();
        let g = Grid::for_group(
            &spec,
            vec![
                Axis::new(0.0, 1.0, 3),
                Axis::new(0.0, 1.0, 3),
                Axis::new(0.0, 1.0, 3),
            ],
        )
        .unwrap();
        let u = ScalarField::from_fn(g.clone(), |x| x[0] + 10.0 * x[1] + 100.0 * x[2]);
        let csv = u.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "v1,v2,z1,value");
        assert_eq!(csv.lines().count(), 1 + 27);
        // last node is (1, 1, 1)
        assert_eq!(csv.lines().last().unwrap(), "1,1,1,111");

        let h = horizontal_hessian(&spec, &u).unwrap();
        let hcsv = h.to_csv();
        assert!(hcsv.starts_with("v1,v2,z1,m_11,m_12,m_22\n"));
        assert_eq!(hcsv.lines().count(), 1 + 27);
    }
}
