//! Interface projections between non-conforming element faces.
//!
//! Each face trace is mapped onto a shared intermediate grid with weights
//! `M_G` by a matrix `R` that reproduces monomials up to the projection degree
//! (`R V_f = V_G`) and is compatible with the face norm
//! (`(M_G V_G)^T R = V_f^T M_f`). The two sides of an interface are built
//! independently; any remaining freedom is spent on making `M_f - R^T M_G R`
//! small (see [`optimize_projection`]).

mod optimize;

pub use optimize::{optimize_projection, projection_objective, LmOptions, LmReport};

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbpError};
use crate::linalg::{orthogonal_split, vandermonde};
use crate::sbp1d::serialize::{precise_vec, row_major};
use crate::sbp1d::{quadrature_degree, SbpOperator1D};

/// Relative residual above which the projection conditions are declared
/// inconsistent.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Node and weight tolerance for treating a face grid as identical to the
/// intermediate grid.
pub const IDENTITY_TOL: f64 = 1e-13;

/// Node set and positive weights (the diagonal of `M_G`) on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    certified_degree: usize,
}

impl IntermediateGrid {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(SbpError::InvalidArgument(
                "intermediate grid needs matching, non-empty nodes and weights".into(),
            ));
        }
        if weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
            return Err(SbpError::InvalidArgument(
                "intermediate grid weights must be positive".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SbpError::InvalidArgument(
                "intermediate grid nodes must increase".into(),
            ));
        }
        let certified_degree = quadrature_degree(&weights, &nodes);
        Ok(Self {
            nodes,
            weights,
            certified_degree,
        })
    }

    /// The nodes and norm of a 1D operator.
    pub fn from_operator(op: &SbpOperator1D) -> Self {
        Self::new(op.nodes().to_vec(), op.h_diag().to_vec()).expect("operator norms are positive")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn certified_degree(&self) -> usize {
        self.certified_degree
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Legendre–Gauss rule with `n` nodes.
pub fn legendre_gauss(n: usize) -> Result<IntermediateGrid> {
    if n == 0 {
        return Err(SbpError::InvalidArgument("Gauss rule needs n >= 1".into()));
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess, descending in i
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (pn, dpn) = legendre(n, x);
            dp = dpn;
            let dx = pn / dpn;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dpn) = legendre(n, x);
        if dpn.is_finite() {
            dp = dpn;
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    nodes.reverse();
    weights.reverse();
    // enforce exact symmetry
    for i in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    IntermediateGrid::new(nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// How the intermediate grid of a non-conforming interface is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GluePolicy {
    /// Nodes and norm of the face with smaller coordinate.
    LeftFace,
    RightFace,
    /// The face with fewer nodes (left on ties).
    Coarser,
    /// The face with more nodes (left on ties).
    Finer,
    /// Uniform degree-preserving operator with twice the larger node count.
    DoubleDensity,
    /// Gauss rule with `degree + 1` nodes.
    GaussMinimal,
    Explicit { nodes: Vec<f64>, weights: Vec<f64> },
}

/// Resolves a policy for the faces `left` and `right`. `uniform` returns the
/// degree-preserving operator on a given number of nodes.
pub fn intermediate_grid<F>(
    policy: &GluePolicy,
    left: &SbpOperator1D,
    right: &SbpOperator1D,
    degree: usize,
    uniform: F,
) -> Result<IntermediateGrid>
where
    F: FnOnce(usize) -> Result<std::sync::Arc<SbpOperator1D>>,
{
    let coarser_is_left = left.len() <= right.len();
    let finer_is_left = left.len() >= right.len();
    match policy {
        GluePolicy::LeftFace => Ok(IntermediateGrid::from_operator(left)),
        GluePolicy::RightFace => Ok(IntermediateGrid::from_operator(right)),
        GluePolicy::Coarser => Ok(IntermediateGrid::from_operator(if coarser_is_left { left } else { right })),
        GluePolicy::Finer => Ok(IntermediateGrid::from_operator(if finer_is_left { left } else { right })),
        GluePolicy::DoubleDensity => {
            let op = uniform(2 * left.len().max(right.len()))?;
            Ok(IntermediateGrid::from_operator(&op))
        }
        GluePolicy::GaussMinimal => legendre_gauss(degree + 1),
        GluePolicy::Explicit { nodes, weights } => IntermediateGrid::new(nodes.clone(), weights.clone()),
    }
}

/// Nodes and diagonal norm of one element face.
#[derive(Debug, Clone, Copy)]
pub struct Face<'a> {
    pub nodes: &'a [f64],
    pub weights: &'a [f64],
}

impl<'a> Face<'a> {
    pub fn of(op: &'a SbpOperator1D) -> Self {
        Self {
            nodes: op.nodes(),
            weights: op.h_diag(),
        }
    }
}

/// Projection of one face onto the intermediate grid, with the orthonormal
/// bases spanning its remaining freedom `R + Q_W^perp Y (Q_V^perp)^T`.
#[derive(Debug, Clone)]
pub struct ProjectionSide {
    pub(crate) nodes: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    pub(crate) r: DMatrix<f64>,
    pub(crate) identity: bool,
    pub(crate) w_perp: DMatrix<f64>,
    pub(crate) v_perp: DMatrix<f64>,
}

impl ProjectionSide {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn is_identity(&self) -> bool {
        self.identity
    }
    /// Dimension of the solution set of the linear conditions.
    pub fn free_parameters(&self) -> usize {
        if self.identity {
            0
        } else {
            self.w_perp.ncols() * self.v_perp.ncols()
        }
    }
}

/// Projections of both faces of an interface onto a common grid.
#[derive(Debug, Clone)]
pub struct ProjectionPair {
    pub p: usize,
    pub degree: usize,
    pub inter: IntermediateGrid,
    pub left: ProjectionSide,
    pub right: ProjectionSide,
    pub optimization: Option<LmReport>,
}

impl ProjectionPair {
    pub fn r_l(&self) -> &DMatrix<f64> {
        &self.left.r
    }
    pub fn r_r(&self) -> &DMatrix<f64> {
        &self.right.r
    }
    pub fn m_gamma(&self) -> &[f64] {
        self.inter.weights()
    }

    /// Pair for two identical faces: both projections are the identity.
    pub fn identity(face: Face<'_>, p: usize) -> Result<Self> {
        let inter = IntermediateGrid::new(face.nodes.to_vec(), face.weights.to_vec())?;
        let side = identity_side(face);
        Ok(Self {
            p,
            degree: p,
            inter,
            left: side.clone(),
            right: side,
            optimization: None,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.left.identity && self.right.identity
    }

    /// The same pair seen from the right face.
    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
            ..self.clone()
        }
    }

    /// Max-norm residuals of `R η^k = η_G^k` and `R^T M_G η_G^k = M η^k` over
    /// `k = 0..=degree`, for the left and right sides.
    pub fn condition_residuals(&self) -> [(f64, f64); 2] {
        [
            side_residuals(&self.left, &self.inter, self.degree),
            side_residuals(&self.right, &self.inter, self.degree),
        ]
    }
}

fn identity_side(face: Face<'_>) -> ProjectionSide {
    let n = face.nodes.len();
    ProjectionSide {
        nodes: face.nodes.to_vec(),
        weights: face.weights.to_vec(),
        r: DMatrix::identity(n, n),
        identity: true,
        w_perp: DMatrix::zeros(n, 0),
        v_perp: DMatrix::zeros(n, 0),
    }
}

fn side_residuals(side: &ProjectionSide, inter: &IntermediateGrid, degree: usize) -> (f64, f64) {
    let vf = vandermonde(&side.nodes, degree);
    let vg = vandermonde(inter.nodes(), degree);
    let interp = (&side.r * &vf - &vg).amax();
    let mg = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(inter.weights()));
    let mf = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&side.weights));
    let compat = (side.r.transpose() * &mg * &vg - &mf * &vf).amax();
    (interp, compat)
}

fn same_grid(face: Face<'_>, inter: &IntermediateGrid) -> bool {
    face.nodes.len() == inter.len()
        && face.nodes.iter().zip(inter.nodes()).all(|(a, b)| (a - b).abs() <= IDENTITY_TOL)
        && face.weights.iter().zip(inter.weights()).all(|(a, b)| (a - b).abs() <= IDENTITY_TOL)
}

/// Solves the degree-`degree` conditions of one face. Returns the
/// minimum-norm solution and the bases of its solution set, or
/// `ProjectionInfeasible` when the conditions are inconsistent.
fn solve_side(face: Face<'_>, inter: &IntermediateGrid, degree: usize) -> Result<ProjectionSide> {
    if same_grid(face, inter) {
        return Ok(identity_side(face));
    }
    let nf = face.nodes.len();
    let ng = inter.len();
    let r = degree + 1;
    if r > nf || r > ng {
        return Err(SbpError::ProjectionInfeasible {
            degree,
            residual: f64::INFINITY,
        });
    }
    let vf = vandermonde(face.nodes, degree);
    let vg = vandermonde(inter.nodes(), degree);
    let mf_vf = DMatrix::from_fn(nf, r, |i, k| face.weights[i] * vf[(i, k)]);
    let w = DMatrix::from_fn(ng, r, |i, k| inter.weights()[i] * vg[(i, k)]);

    let (qv, v_perp) = orthogonal_split(&vf);
    let (qw, w_perp) = orthogonal_split(&w);
    let rv = qv.transpose() * &vf;
    let sw = qw.transpose() * &w;
    let singular = || SbpError::Internal("monomial basis lost rank".into());
    // G = V_G R_V^{-1}, F = S_W^{-T} V_f^T M_f
    let g = rv
        .transpose()
        .lu()
        .solve(&vg.transpose())
        .ok_or_else(singular)?
        .transpose();
    let f = sw.transpose().lu().solve(&mf_vf.transpose()).ok_or_else(singular)?;

    let x11 = (qw.transpose() * &g + &f * &qv) * 0.5;
    let x12 = &f * &v_perp;
    let x21 = w_perp.transpose() * &g;
    let rmat = &qw * x11 * qv.transpose() + &qw * x12 * v_perp.transpose() + &w_perp * x21 * qv.transpose();

    let lhs_scale = (vg.norm_squared() + mf_vf.norm_squared()).sqrt();
    let res = ((&rmat * &vf - &vg).norm_squared() + (w.transpose() * &rmat - mf_vf.transpose()).norm_squared()).sqrt();
    let residual = res / lhs_scale.max(1.0);
    if residual > FEASIBILITY_TOL {
        return Err(SbpError::ProjectionInfeasible { degree, residual });
    }
    Ok(ProjectionSide {
        nodes: face.nodes.to_vec(),
        weights: face.weights.to_vec(),
        r: rmat,
        identity: false,
        w_perp,
        v_perp,
    })
}

/// Minimum-norm solutions of the degree-`degree` conditions for both faces,
/// without optimizing the free parameters.
pub fn solve_projection(
    left: Face<'_>,
    right: Face<'_>,
    inter: &IntermediateGrid,
    p: usize,
    degree: usize,
) -> Result<ProjectionPair> {
    Ok(ProjectionPair {
        p,
        degree,
        inter: inter.clone(),
        left: solve_side(left, inter, degree)?,
        right: solve_side(right, inter, degree)?,
        optimization: None,
    })
}

/// Degree-`p` projection pair with optimized free parameters.
pub fn build_projection(left: Face<'_>, right: Face<'_>, inter: &IntermediateGrid, p: usize) -> Result<ProjectionPair> {
    let pair = solve_projection(left, right, inter, p, p)?;
    optimize_projection(pair, LmOptions::default())
}

/// Degree-`(p-1)` projection pair, as used with classical operators whose
/// norms integrate only up to degree `2p - 1`.
pub fn build_reduced_projection(
    left: Face<'_>,
    right: Face<'_>,
    inter: &IntermediateGrid,
    p: usize,
) -> Result<ProjectionPair> {
    if p == 0 {
        return Err(SbpError::InvalidArgument("reduced projection needs p >= 1".into()));
    }
    let pair = solve_projection(left, right, inter, p, p - 1)?;
    optimize_projection(pair, LmOptions::default())
}

/// Outcome of comparing a projection with the global-to-local formulation
/// `P = M_L^{-1} R_L^T M_G`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KozdonWilcoxReport {
    /// `max |P η_G^k - η_L^k|` for `k = 0..=degree`.
    pub accuracy_residuals: Vec<f64>,
    /// `max |M_L P - R_L^T M_G|`.
    pub stability_residual: f64,
    pub passed: bool,
}

pub fn kozdon_wilcox_check(pair: &ProjectionPair, norm_l: &[f64]) -> KozdonWilcoxReport {
    let rl = pair.r_l();
    let mg = pair.m_gamma();
    let nl = rl.ncols();
    let rt_mg = DMatrix::from_fn(nl, rl.nrows(), |i, j| rl[(j, i)] * mg[j]);
    let p2l = DMatrix::from_fn(nl, rl.nrows(), |i, j| rt_mg[(i, j)] / norm_l[i]);
    let accuracy_residuals: Vec<f64> = (0..=pair.degree)
        .map(|k| {
            let kk = k as i32;
            let eg = nalgebra::DVector::from_iterator(pair.inter.len(), pair.inter.nodes().iter().map(|x| x.powi(kk)));
            let el = nalgebra::DVector::from_iterator(nl, pair.left.nodes.iter().map(|x| x.powi(kk)));
            (&p2l * eg - el).amax()
        })
        .collect();
    let ml_p = DMatrix::from_fn(nl, rl.nrows(), |i, j| norm_l[i] * p2l[(i, j)]);
    let stability_residual = (ml_p - rt_mg).amax();
    let passed = accuracy_residuals.iter().all(|&r| r <= 1e-10) && stability_residual <= 1e-10;
    KozdonWilcoxReport {
        accuracy_residuals,
        stability_residual,
        passed,
    }
}

/// JSON form of a projection pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionFile {
    pub p: usize,
    pub degree: usize,
    #[serde(rename = "nodes_L", serialize_with = "precise_vec")]
    pub nodes_l: Vec<f64>,
    #[serde(rename = "nodes_R", serialize_with = "precise_vec")]
    pub nodes_r: Vec<f64>,
    #[serde(rename = "nodes_G", serialize_with = "precise_vec")]
    pub nodes_g: Vec<f64>,
    #[serde(rename = "weights_G", serialize_with = "precise_vec")]
    pub weights_g: Vec<f64>,
    #[serde(rename = "R_L", serialize_with = "precise_vec")]
    pub r_l: Vec<f64>,
    #[serde(rename = "R_R", serialize_with = "precise_vec")]
    pub r_r: Vec<f64>,
}

impl ProjectionFile {
    pub fn from_pair(pair: &ProjectionPair) -> Self {
        Self {
            p: pair.p,
            degree: pair.degree,
            nodes_l: pair.left.nodes.clone(),
            nodes_r: pair.right.nodes.clone(),
            nodes_g: pair.inter.nodes().to_vec(),
            weights_g: pair.inter.weights().to_vec(),
            r_l: row_major(pair.r_l()),
            r_r: row_major(pair.r_r()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
