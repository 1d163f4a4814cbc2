//! Step-1 and step-2 Carnot group algebra in exponential coordinates.
//!
//! A point is a pair `(v, z)` with `v` in the horizontal layer and `z` in the
//! vertical layer. The product is the truncated Baker-Campbell-Hausdorff
//! formula; all derived structure (frame, dilations, gauge) is computed from
//! the bracket tensor so the sign conventions stay consistent with the
//! product law by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for validating user-supplied J-map systems.
const J_VALIDATION_TOL: f64 = 1e-12;

/// Group element in exponential coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub v: Vec<f64>,
    pub z: Vec<f64>,
}

impl Point {
    pub fn new(v: Vec<f64>, z: Vec<f64>) -> Point {
        Point { v, z }
    }

    /// Point with only a horizontal part.
    pub fn horizontal(v: Vec<f64>) -> Point {
        Point { v, z: Vec::new() }
    }

    /// Flattened coordinates `(v..., z...)`, the axis order used by grids.
    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.v.clone();
        c.extend_from_slice(&self.z);
        c
    }

    pub fn from_coords(v_dim: usize, coords: &[f64]) -> Point {
        Point {
            v: coords[..v_dim].to_vec(),
            z: coords[v_dim..].to_vec(),
        }
    }
}

/// Left-invariant horizontal frame evaluated at a point: row `i` holds the
/// coefficients of the `i`-th horizontal field in Euclidean coordinates
/// (`v_dim + z_dim` columns).
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
}

impl FrameMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.a[i * self.cols + l]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.cols..(i + 1) * self.cols]
    }

    /// Largest squared row sum of absolute entries; a crude operator bound
    /// used by time-step control.
    pub fn max_row_sum_sq(&self) -> f64 {
        (0..self.rows)
            .map(|i| {
                let s: f64 = self.row(i).iter().map(|a| a.abs()).sum();
                s * s
            })
            .fold(0.0, f64::max)
    }
}

/// Immutable description of a Carnot group of step <= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    step: u8,
    v_dim: usize,
    z_dim: usize,
    /// Bracket tensor `c[k][i][j] = [e_i, e_j]_k`, antisymmetric in `(i, j)`,
    /// stored flat as `((k * v_dim) + i) * v_dim + j`.
    brackets: Vec<f64>,
    /// Row-major `v_dim x v_dim` J-map per vertical direction, present only
    /// for validated H-type groups.
    j_maps: Option<Vec<Vec<f64>>>,
}

impl GroupSpec {
    /// Abelian group `R^n` (step 1, empty vertical layer).
    pub fn euclidean(n: usize) -> Result<GroupSpec> {
        if n == 0 {
            return Err(Error::InvalidGroup("horizontal dimension must be >= 1".into()));
        }
        Ok(GroupSpec {
            step: 1,
            v_dim: n,
            z_dim: 0,
            brackets: Vec::new(),
            j_maps: None,
        })
    }

    /// Heisenberg group of index `n`: horizontal dimension `2n`, one
    /// vertical direction, `J = [[0, I_n], [-I_n, 0]]`.
    pub fn heisenberg(n: usize) -> Result<GroupSpec> {
        if n == 0 {
            return Err(Error::InvalidGroup("Heisenberg index must be >= 1".into()));
        }
        let m = 2 * n;
        let mut j = vec![0.0; m * m];
        for i in 0..n {
            j[i * m + (n + i)] = 1.0;
            j[(n + i) * m + i] = -1.0;
        }
        GroupSpec::from_j_maps(m, vec![j])
    }

    /// Quaternionic H-type group: horizontal layer `R^4`, vertical layer
    /// `R^3`, J-maps given by left multiplication by `i`, `j`, `k`.
    pub fn quaternionic() -> GroupSpec {
        let ji = vec![
            0.0, -1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, -1.0, //
            0.0, 0.0, 1.0, 0.0,
        ];
        let jj = vec![
            0.0, 0.0, -1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, -1.0, 0.0, 0.0,
        ];
        let jk = vec![
            0.0, 0.0, 0.0, -1.0, //
            0.0, 0.0, -1.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0,
        ];
        GroupSpec::from_j_maps(4, vec![ji, jj, jk]).expect("quaternionic J system is H-type")
    }

    /// Builds an H-type group from a system of J-maps (one row-major
    /// `v_dim x v_dim` matrix per vertical direction). Rejects systems that
    /// are not antisymmetric, do not square to `-|z|^2 I` on basis vectors,
    /// or whose distinct maps fail to anticommute (the three together are
    /// equivalent to the H-type identity for every `z`).
    pub fn from_j_maps(v_dim: usize, j_maps: Vec<Vec<f64>>) -> Result<GroupSpec> {
        if v_dim == 0 {
            return Err(Error::InvalidGroup("horizontal dimension must be >= 1".into()));
        }
        if j_maps.is_empty() {
            return Err(Error::InvalidGroup("H-type group needs at least one J-map".into()));
        }
        for (k, j) in j_maps.iter().enumerate() {
            if j.len() != v_dim * v_dim {
                return Err(Error::DimensionMismatch {
                    context: "J-map size",
                    expected: v_dim * v_dim,
                    got: j.len(),
                });
            }
            for a in 0..v_dim {
                for b in 0..v_dim {
                    if (j[a * v_dim + b] + j[b * v_dim + a]).abs() > J_VALIDATION_TOL {
                        return Err(Error::InvalidGroup(format!(
                            "J-map {k} is not antisymmetric at entry ({a}, {b})"
                        )));
                    }
                }
            }
        }
        let mul = |x: &[f64], y: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; v_dim * v_dim];
            for a in 0..v_dim {
                for b in 0..v_dim {
                    let mut acc = 0.0;
                    for c in 0..v_dim {
                        acc += x[a * v_dim + c] * y[c * v_dim + b];
                    }
                    out[a * v_dim + b] = acc;
                }
            }
            out
        };
        for (k, j) in j_maps.iter().enumerate() {
            let sq = mul(j, j);
            for a in 0..v_dim {
                for b in 0..v_dim {
                    let want = if a == b { -1.0 } else { 0.0 };
                    if (sq[a * v_dim + b] - want).abs() > J_VALIDATION_TOL {
                        return Err(Error::InvalidGroup(format!(
                            "J-map {k} fails J^2 = -I (H-type identity) at entry ({a}, {b})"
                        )));
                    }
                }
            }
        }
        for p in 0..j_maps.len() {
            for q in (p + 1)..j_maps.len() {
                let pq = mul(&j_maps[p], &j_maps[q]);
                let qp = mul(&j_maps[q], &j_maps[p]);
                for e in 0..v_dim * v_dim {
                    if (pq[e] + qp[e]).abs() > J_VALIDATION_TOL {
                        return Err(Error::InvalidGroup(format!(
                            "J-maps {p} and {q} do not anticommute (H-type identity fails off the axes)"
                        )));
                    }
                }
            }
        }

        let z_dim = j_maps.len();
        let mut brackets = vec![0.0; z_dim * v_dim * v_dim];
        for (k, j) in j_maps.iter().enumerate() {
            for i in 0..v_dim {
                for l in 0..v_dim {
                    // c[k][i][l] = <J_k e_i, e_l> = (J_k)_{l i}
                    brackets[(k * v_dim + i) * v_dim + l] = j[l * v_dim + i];
                }
            }
        }
        Ok(GroupSpec {
            step: 2,
            v_dim,
            z_dim,
            brackets,
            j_maps: Some(j_maps),
        })
    }

    /// Direct product with a real line: one extra horizontal coordinate that
    /// brackets to zero with everything. H-type structure does not survive
    /// (the J-maps would become singular), so the result carries none.
    pub fn adjoin_real_line(&self) -> GroupSpec {
        let v_new = self.v_dim + 1;
        if self.step == 1 {
            return GroupSpec {
                step: 1,
                v_dim: v_new,
                z_dim: 0,
                brackets: Vec::new(),
                j_maps: None,
            };
        }
        let mut brackets = vec![0.0; self.z_dim * v_new * v_new];
        for k in 0..self.z_dim {
            for i in 0..self.v_dim {
                for j in 0..self.v_dim {
                    brackets[(k * v_new + i) * v_new + j] = self.bracket_const(k, i, j);
                }
            }
        }
        GroupSpec {
            step: 2,
            v_dim: v_new,
            z_dim: self.z_dim,
            brackets,
            j_maps: None,
        }
    }

    pub fn step(&self) -> u8 {
        self.step
    }

    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    /// Topological dimension `v_dim + z_dim` (the grid axis count).
    pub fn dim(&self) -> usize {
        self.v_dim + self.z_dim
    }

    /// Homogeneous dimension `Q = v_dim + 2 z_dim`.
    pub fn homogeneous_dim(&self) -> usize {
        self.v_dim + 2 * self.z_dim
    }

    /// Exponent `2 r!` governing gauge scaling (2 for step 1, 4 for step 2).
    pub fn gauge_power(&self) -> i32 {
        match self.step {
            1 => 2,
            _ => 4,
        }
    }

    #[inline]
    pub fn bracket_const(&self, k: usize, i: usize, j: usize) -> f64 {
        self.brackets[(k * self.v_dim + i) * self.v_dim + j]
    }

    /// Lie bracket of two horizontal vectors, one component per vertical
    /// direction.
    pub fn bracket(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.z_dim];
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..self.v_dim {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..self.v_dim {
                    acc += self.bracket_const(k, i, j) * u[i] * w[j];
                }
            }
            *o = acc;
        }
        out
    }

    pub fn identity(&self) -> Point {
        Point {
            v: vec![0.0; self.v_dim],
            z: vec![0.0; self.z_dim],
        }
    }

    /// `exp(s e_i)` for a horizontal basis direction.
    pub fn basis_flow(&self, i: usize, s: f64) -> Point {
        let mut p = self.identity();
        p.v[i] = s;
        p
    }

    fn check_point(&self, p: &Point, context: &'static str) -> Result<()> {
        if p.v.len() != self.v_dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.v_dim,
                got: p.v.len(),
            });
        }
        if p.z.len() != self.z_dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.z_dim,
                got: p.z.len(),
            });
        }
        Ok(())
    }

    /// Group product `p * q` (truncated BCH:
    /// `(v + v', z + z' + [v, v'] / 2)`).
    pub fn product(&self, p: &Point, q: &Point) -> Result<Point> {
        self.check_point(p, "product lhs")?;
        self.check_point(q, "product rhs")?;
        let v: Vec<f64> = p.v.iter().zip(&q.v).map(|(a, b)| a + b).collect();
        let br = self.bracket(&p.v, &q.v);
        let z: Vec<f64> = p
            .z
            .iter()
            .zip(&q.z)
            .zip(&br)
            .map(|((a, b), c)| a + b + 0.5 * c)
            .collect();
        Ok(Point { v, z })
    }

    /// Group inverse `(-v, -z)`.
    pub fn inverse(&self, p: &Point) -> Result<Point> {
        self.check_point(p, "inverse")?;
        Ok(Point {
            v: p.v.iter().map(|a| -a).collect(),
            z: p.z.iter().map(|a| -a).collect(),
        })
    }

    /// Anisotropic dilation `(s v, s^2 z)`, defined for `s >= 0`.
    pub fn dilate(&self, s: f64, p: &Point) -> Result<Point> {
        self.check_point(p, "dilate")?;
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dilation factor must be finite and >= 0, got {s}"
            )));
        }
        Ok(Point {
            v: p.v.iter().map(|a| s * a).collect(),
            z: p.z.iter().map(|a| s * s * a).collect(),
        })
    }

    /// Homogeneous gauge norm: `|v|` for step 1,
    /// `(|v|^4 + |z|^2)^(1/4)` for step 2.
    pub fn gauge_norm(&self, p: &Point) -> Result<f64> {
        Ok(self.gauge_pow(p)?.powf(1.0 / self.gauge_power() as f64))
    }

    /// Gauge norm raised to the scaling power `2 r!` (avoids the root; this
    /// is the quantity convolution kernels use directly).
    pub fn gauge_pow(&self, p: &Point) -> Result<f64> {
        self.check_point(p, "gauge")?;
        let vv: f64 = p.v.iter().map(|a| a * a).sum();
        match self.step {
            1 => Ok(vv),
            _ => {
                let zz: f64 = p.z.iter().map(|a| a * a).sum();
                Ok(vv * vv + zz)
            }
        }
    }

    /// Gauge quasi-distance `|q^{-1} p|_g`.
    pub fn gauge_distance(&self, p: &Point, q: &Point) -> Result<f64> {
        let rel = self.product(&self.inverse(q)?, p)?;
        self.gauge_norm(&rel)
    }

    /// `|q^{-1} p|_g^{2 r!}` from flattened coordinates, allocation-free.
    pub fn gauge_pow_group_diff(&self, x: &[f64], y: &[f64]) -> f64 {
        let m = self.v_dim;
        let mut vv = 0.0;
        for i in 0..m {
            let d = x[i] - y[i];
            vv += d * d;
        }
        if self.step == 1 {
            return vv;
        }
        let mut zz = 0.0;
        for k in 0..self.z_dim {
            // z-part of q^{-1} p: dz - [y_v, x_v]_k / 2
            let mut br = 0.0;
            for i in 0..m {
                if y[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    br += self.bracket_const(k, i, j) * y[i] * x[j];
                }
            }
            let d = x[m + k] - y[m + k] - 0.5 * br;
            zz += d * d;
        }
        vv * vv + zz
    }

    /// Left-invariant horizontal frame at `p`: the `v`-block is the identity
    /// and the `z`-column for direction `k` of row `i` is `[v, e_i]_k / 2`,
    /// read off from the product law.
    pub fn frame(&self, p: &Point) -> Result<FrameMatrix> {
        self.check_point(p, "frame")?;
        Ok(self.frame_from_v(&p.v))
    }

    /// Frame from horizontal coordinates only (the vertical part never
    /// enters).
    pub fn frame_from_v(&self, v: &[f64]) -> FrameMatrix {
        let rows = self.v_dim;
        let cols = self.v_dim + self.z_dim;
        let mut a = vec![0.0; rows * cols];
        self.frame_rows_into(v, &mut a);
        FrameMatrix { rows, cols, a }
    }

    /// Fills `out` (row-major `v_dim x dim`) with the frame rows at `v`,
    /// allocation-free for per-node loops.
    pub fn frame_rows_into(&self, v: &[f64], out: &mut [f64]) {
        let cols = self.v_dim + self.z_dim;
        debug_assert_eq!(out.len(), self.v_dim * cols);
        out.fill(0.0);
        for i in 0..self.v_dim {
            out[i * cols + i] = 1.0;
            for k in 0..self.z_dim {
                let mut acc = 0.0;
                for j in 0..self.v_dim {
                    acc += self.bracket_const(k, j, i) * v[j];
                }
                out[i * cols + self.v_dim + k] = 0.5 * acc;
            }
        }
    }

    pub fn is_htype(&self) -> bool {
        self.j_maps.is_some()
    }

    pub fn j_map(&self, k: usize) -> Result<&[f64]> {
        match &self.j_maps {
            Some(maps) => Ok(&maps[k]),
            None => Err(Error::NotHType),
        }
    }

    /// `J_z(u)` for a vertical vector `z` and horizontal vector `u`.
    pub fn apply_j(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let maps = self.j_maps.as_ref().ok_or(Error::NotHType)?;
        if z.len() != self.z_dim {
            return Err(Error::DimensionMismatch {
                context: "apply_j vertical vector",
                expected: self.z_dim,
                got: z.len(),
            });
        }
        if u.len() != self.v_dim {
            return Err(Error::DimensionMismatch {
                context: "apply_j horizontal vector",
                expected: self.v_dim,
                got: u.len(),
            });
        }
        let m = self.v_dim;
        let mut out = vec![0.0; m];
        for (k, zk) in z.iter().enumerate() {
            if *zk == 0.0 {
                continue;
            }
            let j = &maps[k];
            for a in 0..m {
                let mut acc = 0.0;
                for b in 0..m {
                    acc += j[a * m + b] * u[b];
                }
                out[a] += zk * acc;
            }
        }
        Ok(out)
    }

    /// Uniform random point with `v` and `z` coordinates in
    /// `[-radius, radius]`.
    pub fn sample_box(&self, rng: &mut impl rand::Rng, radius: f64) -> Point {
        let v = (0..self.v_dim)
            .map(|_| rng.gen_range(-radius..=radius))
            .collect();
        let z = (0..self.z_dim)
            .map(|_| rng.gen_range(-radius..=radius))
            .collect();
        Point { v, z }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut entries = Vec::new();
        for k in 0..self.z_dim {
            for i in 0..self.v_dim {
                for j in (i + 1)..self.v_dim {
                    let c = self.bracket_const(k, i, j);
                    if c != 0.0 {
                        entries.push((k, i, j, c));
                    }
                }
            }
        }
        serde_json::to_value(GroupSpecJson {
            step: self.step,
            m1: self.v_dim,
            m2: self.z_dim,
            brackets: entries,
            htype_j: self.j_maps.as_ref().map(|maps| {
                maps.iter()
                    .map(|j| {
                        (0..self.v_dim)
                            .map(|r| j[r * self.v_dim..(r + 1) * self.v_dim].to_vec())
                            .collect()
                    })
                    .collect()
            }),
        })
        .expect("group spec serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("group spec serializes")
    }

    /// Parses and fully revalidates a serialized spec.
    pub fn from_json_value(value: &serde_json::Value) -> Result<GroupSpec> {
        let raw: GroupSpecJson = serde_json::from_value(value.clone())?;
        if let Some(maps) = raw.htype_j {
            let flat: Vec<Vec<f64>> = maps
                .iter()
                .map(|rows| rows.iter().flatten().copied().collect())
                .collect();
            let spec = GroupSpec::from_j_maps(raw.m1, flat)?;
            if spec.step != raw.step || spec.z_dim != raw.m2 {
                return Err(Error::InvalidGroup(
                    "declared step/m2 disagree with the J-map system".into(),
                ));
            }
            // the bracket list must agree with what the J-maps generate
            let mut expect = spec.brackets.clone();
            for (k, i, j, c) in raw.brackets {
                if k >= raw.m2 || i >= raw.m1 || j >= raw.m1 {
                    return Err(Error::InvalidGroup(format!(
                        "bracket entry ({k}, {i}, {j}) out of range"
                    )));
                }
                let idx = (k * raw.m1 + i) * raw.m1 + j;
                let idx_t = (k * raw.m1 + j) * raw.m1 + i;
                if (expect[idx] - c).abs() > J_VALIDATION_TOL {
                    return Err(Error::InvalidGroup(format!(
                        "bracket entry ({k}, {i}, {j}) = {c} disagrees with the J-maps"
                    )));
                }
                expect[idx] = c;
                expect[idx_t] = -c;
            }
            return Ok(spec);
        }

        match raw.step {
            1 => {
                if raw.m2 != 0 || !raw.brackets.is_empty() {
                    return Err(Error::InvalidGroup(
                        "step-1 groups have no vertical layer or brackets".into(),
                    ));
                }
                GroupSpec::euclidean(raw.m1)
            }
            2 => {
                if raw.m2 == 0 {
                    return Err(Error::InvalidGroup(
                        "step-2 groups need at least one vertical direction".into(),
                    ));
                }
                if raw.m1 == 0 {
                    return Err(Error::InvalidGroup("horizontal dimension must be >= 1".into()));
                }
                let mut brackets = vec![0.0; raw.m2 * raw.m1 * raw.m1];
                for (k, i, j, c) in raw.brackets {
                    if k >= raw.m2 || i >= raw.m1 || j >= raw.m1 || i == j {
                        return Err(Error::InvalidGroup(format!(
                            "bracket entry ({k}, {i}, {j}) out of range"
                        )));
                    }
                    brackets[(k * raw.m1 + i) * raw.m1 + j] = c;
                    brackets[(k * raw.m1 + j) * raw.m1 + i] = -c;
                }
                Ok(GroupSpec {
                    step: 2,
                    v_dim: raw.m1,
                    z_dim: raw.m2,
                    brackets,
                    j_maps: None,
                })
            }
            s => Err(Error::InvalidGroup(format!("unsupported step {s}"))),
        }
    }

    pub fn from_json_str(s: &str) -> Result<GroupSpec> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        GroupSpec::from_json_value(&value)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupSpecJson {
    step: u8,
    m1: usize,
    m2: usize,
    #[serde(default)]
    brackets: Vec<(usize, usize, usize, f64)>,
    #[serde(rename = "htype_J", default, skip_serializing_if = "Option::is_none")]
    htype_j: Option<Vec<Vec<Vec<f64>>>>,
}
