//! One-dimensional diagonal-norm SBP first-derivative operators on uniform
//! nodes over the reference interval `[-1, 1]`.
//!
//! An operator is the pair `(H, Q)` with `D = H^{-1} Q`, `H` diagonal and
//! positive, and `Q + Q^T = E = diag(-1, 0, ..., 0, 1)`. Two families are
//! built by [`construct_classical`] and [`construct_degree_preserving`]; they
//! share the same interior central stencil and differ in how many boundary
//! nodes carry free coefficients and in the quadrature degree demanded of `H`.

mod construct;
pub(crate) mod serialize;

pub use construct::{
    assemble_constraint_system, construct_classical, construct_degree_preserving, BoundaryLayout,
    ConstraintSystem, ConstructionReport, POSITIVITY_EPS,
};
pub use serialize::OperatorFile;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbpError};
use crate::sparse::CsrMatrix;

/// Ordered nodes on `[-1, 1]` including both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
}

impl Grid1D {
    /// `n` equispaced nodes `xi_i = -1 + 2 i / (n - 1)`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(SbpError::InvalidArgument(format!(
                "a grid needs at least 2 nodes, got {n}"
            )));
        }
        let m = (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| (2.0 * i as f64 - m) / m).collect();
        Ok(Self { nodes })
    }

    /// Wraps arbitrary nodes, checking they are strictly increasing from -1 to 1.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(SbpError::InvalidArgument("grid needs at least 2 nodes".into()));
        }
        if nodes[0] != -1.0 || nodes[nodes.len() - 1] != 1.0 {
            return Err(SbpError::InvalidArgument(
                "grid must start at -1 and end at +1".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SbpError::InvalidArgument("grid nodes must increase".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `xi^k` evaluated on the nodes (`0` for negative `k`).
    pub fn monomial(&self, k: i32) -> Vec<f64> {
        monomial(&self.nodes, k)
    }
}

pub(crate) fn monomial(x: &[f64], k: i32) -> Vec<f64> {
    if k < 0 {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| v.powi(k)).collect()
    }
}

/// Free-shorthand for [`Grid1D::uniform`].
pub fn uniform_grid(n: usize) -> Result<Grid1D> {
    Grid1D::uniform(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Classical,
    DegreePreserving,
}

/// Coefficients `(c_{-p}, ..., c_0, ..., c_p)` of the order-`2p` central
/// first-derivative stencil on unit spacing.
pub fn interior_stencil(p: usize) -> Result<Vec<f64>> {
    if !(1..=4).contains(&p) {
        return Err(SbpError::UnsupportedDegree(p));
    }
    // a_m = (-1)^{m+1} (p!)^2 / (m (p-m)! (p+m)!)
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let pf = fact(p);
    let mut c = vec![0.0; 2 * p + 1];
    for m in 1..=p {
        let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
        let a = sign * pf * pf / (m as f64 * fact(p - m) * fact(p + m));
        c[p + m] = a;
        c[p - m] = -a;
    }
    Ok(c)
}

/// Largest `k` such that the weights integrate `xi^0 .. xi^k` exactly over
/// `[x_first, x_last]` to within `1e-10`.
pub fn quadrature_degree(weights: &[f64], nodes: &[f64]) -> usize {
    quadrature_degree_tol(weights, nodes, 1e-10)
}

pub fn quadrature_degree_tol(weights: &[f64], nodes: &[f64], tol: f64) -> usize {
    assert_eq!(weights.len(), nodes.len());
    let a = nodes[0].min(-1.0);
    let b = nodes[nodes.len() - 1].max(1.0);
    let mut degree = None;
    // a rule on n nodes can never exceed degree 2n - 1; scan a little past it
    for k in 0..(2 * nodes.len() + 2) {
        let approx: f64 = weights
            .iter()
            .zip(nodes)
            .map(|(w, x)| w * x.powi(k as i32))
            .sum();
        let exact = (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k as f64 + 1.0);
        if (approx - exact).abs() > tol {
            break;
        }
        degree = Some(k);
    }
    degree.unwrap_or(0)
}

/// A diagonal-norm SBP first-derivative operator on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct SbpOperator1D {
    grid: Grid1D,
    p: usize,
    h_diag: Vec<f64>,
    q: DMatrix<f64>,
    bp: usize,
    norm_degree: usize,
    kind: OperatorKind,
    d: DMatrix<f64>,
    d_sparse: CsrMatrix,
    report: Option<ConstructionReport>,
}

impl SbpOperator1D {
    /// Assembles an operator from its parts. The norm degree is certified by
    /// quadrature testing, not taken on trust.
    pub fn from_parts(
        grid: Grid1D,
        p: usize,
        h_diag: Vec<f64>,
        q: DMatrix<f64>,
        bp: usize,
        kind: OperatorKind,
    ) -> Result<Self> {
        let n = grid.len();
        if h_diag.len() != n || q.shape() != (n, n) {
            return Err(SbpError::InvalidArgument(format!(
                "operator parts have inconsistent sizes for N = {n}"
            )));
        }
        if h_diag.iter().any(|&h| h.is_nan() || h <= 0.0) {
            return Err(SbpError::InvalidArgument("norm weights must be positive".into()));
        }
        let mut d = q.clone();
        for (i, h) in h_diag.iter().enumerate() {
            d.row_mut(i).iter_mut().for_each(|v| *v /= h);
        }
        let d_sparse = CsrMatrix::from_dense(&d);
        let norm_degree = quadrature_degree(&h_diag, grid.nodes());
        Ok(Self {
            grid,
            p,
            h_diag,
            q,
            bp,
            norm_degree,
            kind,
            d,
            d_sparse,
            report: None,
        })
    }

    pub(crate) fn with_report(mut self, report: ConstructionReport) -> Self {
        self.report = Some(report);
        self
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }
    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }
    pub fn len(&self) -> usize {
        self.grid.len()
    }
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn h_diag(&self) -> &[f64] {
        &self.h_diag
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn d_sparse(&self) -> &CsrMatrix {
        &self.d_sparse
    }
    pub fn bp(&self) -> usize {
        self.bp
    }
    pub fn norm_degree(&self) -> usize {
        self.norm_degree
    }
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }
    pub fn report(&self) -> Option<&ConstructionReport> {
        self.report.as_ref()
    }

    /// `E = t_R t_R^T - t_L t_L^T`.
    pub fn boundary_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut e = DMatrix::zeros(n, n);
        e[(0, 0)] = -1.0;
        e[(n - 1, n - 1)] = 1.0;
        e
    }

    /// Skew part `S = Q - E/2`.
    pub fn skew_part(&self) -> DMatrix<f64> {
        &self.q - self.boundary_matrix() * 0.5
    }

    /// `out = D u` using the sparse representation.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        self.d_sparse.mul_vec_into(u, out);
    }
}

/// `J_e = eps^T H eps` with `eps = D xi^{p+1} - (p+1) xi^p`.
pub fn truncation_objective(op: &SbpOperator1D) -> f64 {
    let p = op.p() as i32;
    let x_hi = op.grid().monomial(p + 1);
    let x_lo = op.grid().monomial(p);
    let mut du = vec![0.0; op.len()];
    op.apply(&x_hi, &mut du);
    du.iter()
        .zip(&x_lo)
        .zip(op.h_diag())
        .map(|((d, x), h)| {
            let e = d - (p + 1) as f64 * x;
            h * e * e
        })
        .sum()
}

/// `J_Q = 1^T (Q ∘ Q) 1`, the sum of squared entries of `Q`.
pub fn coefficient_objective(q: &DMatrix<f64>) -> f64 {
    q.iter().map(|v| v * v).sum()
}

/// Tolerances used by [`verify_sbp`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SbpTolerances {
    /// Per-node accuracy residual is compared against `accuracy_per_node * N`.
    pub accuracy_per_node: f64,
    pub compatibility: f64,
    pub quadrature: f64,
}

impl Default for SbpTolerances {
    fn default() -> Self {
        Self {
            accuracy_per_node: 1e-9,
            compatibility: 1e-10,
            quadrature: 1e-10,
        }
    }
}

/// Outcome of checking the SBP properties of an operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub kind: OperatorKind,
    pub p: usize,
    pub n: usize,
    pub bp: usize,
    /// Max-norm residual of `D xi^k - k xi^{k-1}` for `k = 0..=p`.
    pub accuracy_residuals: Vec<f64>,
    pub accuracy_ok: bool,
    /// Highest `k` for which `D xi^k = k xi^{k-1}` holds (scanned upward).
    pub derivative_degree: usize,
    pub norm_positive: bool,
    pub min_weight: f64,
    /// Max entry of `|Q + Q^T - E|`.
    pub compatibility_residual: f64,
    pub compatibility_ok: bool,
    pub norm_degree: usize,
    pub norm_degree_ok: bool,
    pub symmetric_norm: bool,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.accuracy_ok && self.norm_positive && self.compatibility_ok && self.norm_degree_ok
    }
}

/// Checks positivity of the norm, `Q + Q^T = E`, derivative accuracy up to
/// degree `p` and certifies the quadrature degree of `H`.
pub fn verify_sbp(op: &SbpOperator1D, tol: SbpTolerances) -> CertificateReport {
    let n = op.len();
    let acc_tol = tol.accuracy_per_node * n as f64;
    let residual = |k: usize| -> f64 {
        let x = op.grid().monomial(k as i32);
        let dx = op.grid().monomial(k as i32 - 1);
        let mut du = vec![0.0; n];
        op.apply(&x, &mut du);
        du.iter()
            .zip(&dx)
            .map(|(a, b)| (a - k as f64 * b).abs())
            .fold(0.0, f64::max)
    };
    let accuracy_residuals: Vec<f64> = (0..=op.p()).map(residual).collect();
    let accuracy_ok = accuracy_residuals.iter().all(|&r| r <= acc_tol);
    let mut derivative_degree = 0;
    for k in 0..n {
        if residual(k) > acc_tol {
            break;
        }
        derivative_degree = k;
    }

    let e = op.boundary_matrix();
    let compat = op.q() + op.q().transpose() - e;
    let compatibility_residual = compat.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let min_weight = op.h_diag().iter().cloned().fold(f64::INFINITY, f64::min);
    let norm_degree = quadrature_degree_tol(op.h_diag(), op.nodes(), tol.quadrature);
    let required = match op.kind() {
        OperatorKind::Classical => 2 * op.p() - 1,
        OperatorKind::DegreePreserving => 2 * op.p(),
    };
    let h = op.h_diag();
    let symmetric_norm = (0..n).all(|i| (h[i] - h[n - 1 - i]).abs() <= 1e-14 * h[i].abs().max(1.0));

    CertificateReport {
        kind: op.kind(),
        p: op.p(),
        n,
        bp: op.bp(),
        accuracy_residuals,
        accuracy_ok,
        derivative_degree,
        norm_positive: min_weight > 0.0,
        min_weight,
        compatibility_residual,
        compatibility_ok: compatibility_residual <= tol.compatibility,
        norm_degree,
        norm_degree_ok: norm_degree >= required,
        symmetric_norm,
    }
}
