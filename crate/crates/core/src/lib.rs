//! Numerics for horizontal Gauss curvature flow of graphs over Carnot
//! groups of step at most 2: group algebra, horizontal differential
//! operators on grids, graph and level-set curvature quantities, an explicit
//! flow solver, and a toolkit of viscosity-solution constructions.

pub mod error;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod group;
pub mod linalg;
pub mod oracles;
pub mod poly;
pub mod viscosity;

pub use error::{Error, Result};
pub use field::{
    directional_derivative_oracle, euclidean_hessian, euclidean_partials, horizontal_gradient,
    horizontal_hessian, horizontal_second_oracle, second_layer_gradient, Axis, Grid, ScalarField,
    SymMatrixField, VectorField,
};
pub use flow::{compare_runs, run, stable_dt, step, Boundary, FlowProblem, FlowTrace};
pub use geometry::{
    classify_convexity, convexity_hypothesis_residual, graph_flow_rhs, graph_gauss_curvature,
    horizontal_normal, levelset_flow_rhs, ConvexityClass, ConvexityReport, DetVariant,
};
pub use group::{FrameMatrix, GroupSpec, Point};
pub use linalg::{det, det_plus, inverse_posdef, min_eigenvalue, SymMat};
pub use oracles::{
    grim_reaper, points_on_cylinder, self_similarity_check, shrinking_cylinder, ExactSolution,
    SelfSimilarityReport, TargetEquation,
};
pub use poly::Polynomial;
pub use viscosity::{
    barrier_validate, estimate_modulus, estimate_modulus_on_grid, htype_barrier,
    htype_identities_check, inf_convolution, perron_sandwich, residual_classify,
    scale_subsolution, strictify, sup_convolution, BarrierReport, BarrierSpec, IdentityReport,
    PerronEnvelope, PerronSandwich, ResidualReport, SampleClass, SpaceTimeField,
};
