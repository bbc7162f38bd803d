//! Construction of boundary-closed SBP operators from a linear constraint
//! system in the joint unknowns `(h, q)` followed by a two-stage convex
//! optimization of the remaining free coefficients.
//!
//! Layout of `Q` (0-based): it equals the skew Toeplitz matrix of the interior
//! stencil, except inside the two `bp x bp` corner blocks. The upper-left
//! block holds `Q[0][0] = -1/2` and free entries `q_ij` (`i < j`) with
//! `Q[j][i] = -q_ij`; the lower-right block is its mirror image under
//! `Q[N-1-i][N-1-j] = -Q[i][j]`. The norm is
//! `H = Δ diag(h_1..h_bp, 1, ..., 1, h_bp..h_1)` with `Δ = 2/(N-1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{interior_stencil, verify_sbp, Grid1D, OperatorKind, SbpOperator1D, SbpTolerances};
use crate::error::{Result, SbpError};
use crate::linalg::{solve_affine, AffineSolution};
use crate::optim::{
    max_min_affine, minimize_barrier, BarrierOptions, BarrierResult, Constraints, Convex, LeastSquares,
};

/// Lower bound imposed on every norm multiplier `h_i`.
pub const POSITIVITY_EPS: f64 = 1e-8;
/// Relative slack on the truncation objective while minimizing `J_Q`.
pub const TRUNCATION_SLACK: f64 = 1e-6;
/// Bound on `J_Q` during the first stage, relative to its starting value.
pub const COEFFICIENT_CAP_FACTOR: f64 = 1e3;
const RANK_TOL: f64 = 1e-10;
const CONSISTENCY_TOL: f64 = 1e-10;

/// Index bookkeeping for the boundary-block unknowns of one operator size.
#[derive(Debug, Clone)]
pub struct BoundaryLayout {
    pub n: usize,
    pub p: usize,
    pub bp: usize,
    pub spacing: f64,
    nodes: Vec<f64>,
    stencil: Vec<f64>,
}

impl BoundaryLayout {
    pub fn new(grid: &Grid1D, p: usize, bp: usize) -> Result<Self> {
        let stencil = interior_stencil(p)?;
        let n = grid.len();
        if bp == 0 {
            return Err(SbpError::InvalidArgument("boundary block width must be >= 1".into()));
        }
        if 2 * bp > n {
            return Err(SbpError::BlocksOverlap { bp, n });
        }
        Ok(Self {
            n,
            p,
            bp,
            spacing: 2.0 / (n - 1) as f64,
            nodes: grid.nodes().to_vec(),
            stencil,
        })
    }

    pub fn n_h(&self) -> usize {
        self.bp
    }

    pub fn n_q(&self) -> usize {
        self.bp * (self.bp - 1) / 2
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_h() + self.n_q()
    }

    /// Unknown index of `q_ij` (`i < j < bp`).
    fn q_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.bp);
        // row-major over the strict upper triangle
        self.bp + i * self.bp - i * (i + 1) / 2 + (j - i - 1)
    }

    fn q_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.bp).flat_map(move |i| (i + 1..self.bp).map(move |j| (i, j)))
    }

    fn in_block(&self, i: usize, j: usize) -> bool {
        let lo = self.bp;
        let hi = self.n - self.bp;
        (i < lo && j < lo) || (i >= hi && j >= hi)
    }

    /// The part of `Q` that does not depend on the unknowns.
    pub fn fixed_q(&self) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            for off in 1..=p {
                let c = self.stencil[p + off];
                if i + off < n && !self.in_block(i, i + off) {
                    q[(i, i + off)] = c;
                    q[(i + off, i)] = -c;
                }
            }
        }
        q[(0, 0)] = -0.5;
        q[(n - 1, n - 1)] = 0.5;
        q
    }

    /// Assembles `Q` for the unknown vector `x = (h, q)`.
    pub fn q_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut q = self.fixed_q();
        for (i, j) in self.q_pairs() {
            let v = x[self.q_index(i, j)];
            q[(i, j)] = v;
            q[(j, i)] = -v;
            q[(n - 1 - i, n - 1 - j)] = -v;
            q[(n - 1 - j, n - 1 - i)] = v;
        }
        q
    }

    /// Diagonal of `H` (including the `Δ` factor).
    pub fn h_diag(&self, x: &DVector<f64>) -> Vec<f64> {
        let n = self.n;
        let mut h = vec![self.spacing; n];
        for i in 0..self.bp {
            h[i] = self.spacing * x[i];
            h[n - 1 - i] = self.spacing * x[i];
        }
        h
    }

    /// Linear map `x -> r` with `r_i = (Q xi^{p+1})_i - (p+1) H_ii xi_i^p` on the
    /// upper boundary rows; returns `(A, b)` with `r = A x + b`.
    fn truncation_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (bp, p) = (self.bp, self.p as i32);
        let xi_hi: Vec<f64> = self.nodes.iter().map(|x| x.powi(p + 1)).collect();
        let q0 = self.fixed_q();
        let mut a = DMatrix::zeros(bp, self.n_unknowns());
        let mut b = DVector::zeros(bp);
        for i in 0..bp {
            b[i] = (0..self.n).map(|j| q0[(i, j)] * xi_hi[j]).sum();
            a[(i, i)] = -((p + 1) as f64) * self.spacing * self.nodes[i].powi(p);
        }
        for (i, j) in self.q_pairs() {
            let v = self.q_index(i, j);
            a[(i, v)] += xi_hi[j];
            a[(j, v)] -= xi_hi[i];
        }
        (a, b)
    }
}

/// Linear constraint system of one layout together with its solution set.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub layout: BoundaryLayout,
    pub target_norm_degree: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub solution: AffineSolution,
}

impl ConstraintSystem {
    /// Residual `|A x - b|_inf` of an unknown vector on the raw system.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (&self.matrix * x - &self.rhs).amax()
    }
}

/// Builds the linear system `Q xi^k = k H xi^{k-1}` (`k <= p`, rows touching
/// unknowns) and `1^T H xi^k = ∫ xi^k` (`k <= target_norm_degree`) and solves
/// it for the affine family of solutions.
pub fn assemble_constraint_system(
    grid: &Grid1D,
    p: usize,
    bp: usize,
    target_norm_degree: usize,
) -> Result<ConstraintSystem> {
    let layout = BoundaryLayout::new(grid, p, bp)?;
    let (a, b) = condition_rows(&layout, grid, target_norm_degree);
    let solution = solve_affine(&a, &b, RANK_TOL);
    finish_system(layout, target_norm_degree, a, b, solution)
}

fn condition_rows(layout: &BoundaryLayout, grid: &Grid1D, target_norm_degree: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (p, n, bp) = (layout.p, layout.n, layout.bp);
    let nu = layout.n_unknowns();
    let q0 = layout.fixed_q();
    // accuracy rows in unit-spacing local coordinates s_j = j; the conditions
    // are invariant under affine changes of variable
    let s: Vec<f64> = (0..n).map(|j| j as f64).collect();
    let n_rows = bp * (p + 1) + target_norm_degree + 1;
    let mut a = DMatrix::zeros(n_rows, nu);
    let mut b = DVector::zeros(n_rows);
    let mut row = 0;
    for k in 0..=p {
        let sk: Vec<f64> = s.iter().map(|v| v.powi(k as i32)).collect();
        for i in 0..bp {
            b[row] = -(0..n).map(|j| q0[(i, j)] * sk[j]).sum::<f64>();
            if k > 0 {
                a[(row, i)] = -(k as f64) * s[i].powi(k as i32 - 1);
            }
            row += 1;
        }
        let base = row - bp;
        for (i, j) in layout.q_pairs() {
            let v = layout.q_index(i, j);
            a[(base + i, v)] += sk[j];
            a[(base + j, v)] -= sk[i];
        }
    }
    let xi = grid.nodes();
    let dx = layout.spacing;
    for k in 0..=target_norm_degree {
        let kk = k as i32;
        for i in 0..bp {
            a[(row, i)] = dx * (xi[i].powi(kk) + xi[n - 1 - i].powi(kk));
        }
        let interior: f64 = (bp..n - bp).map(|i| xi[i].powi(kk)).sum();
        let exact = (1.0 - (-1.0f64).powi(kk + 1)) / (k as f64 + 1.0);
        b[row] = exact - dx * interior;
        row += 1;
    }
    debug_assert_eq!(row, n_rows);
    (a, b)
}

fn finish_system(
    layout: BoundaryLayout,
    target_norm_degree: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    solution: AffineSolution,
) -> Result<ConstraintSystem> {
    let (p, n, bp) = (layout.p, layout.n, layout.bp);
    if solution.relative_residual > CONSISTENCY_TOL {
        return Err(SbpError::ConstructionInfeasible(format!(
            "constraint system for p = {p}, N = {n}, bp = {bp}, norm degree {target_norm_degree} \
             is inconsistent (relative residual {:.3e})",
            solution.relative_residual
        )));
    }
    Ok(ConstraintSystem {
        layout,
        target_norm_degree,
        matrix: a,
        rhs: b,
        solution,
    })
}

/// Diagnostics recorded while building an operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub kind: OperatorKind,
    pub p: usize,
    pub n: usize,
    pub bp: usize,
    /// Block widths tried before `bp`, with the reason each was rejected.
    pub rejected_bp: Vec<(usize, String)>,
    pub free_parameters: usize,
    /// Best achievable `min_i h_i` over the solution set.
    pub positivity_margin: f64,
    pub particular_feasible: bool,
    pub truncation_particular: f64,
    pub truncation_min: f64,
    pub truncation_final: f64,
    pub coefficient_stage1: f64,
    pub coefficient_final: f64,
    pub newton_steps: usize,
}

/// `J_e = (2/Δ) Σ_i r_i^2 / h_i` over the upper boundary rows, where `r` and
/// `h` are affine in the free coordinates. Convex for `h > 0`.
struct TruncationObjective {
    ar: DMatrix<f64>,
    br: DVector<f64>,
    ah: DMatrix<f64>,
    bh: DVector<f64>,
    scale: f64,
}

impl Convex for TruncationObjective {
    fn value(&self, c: &DVector<f64>) -> f64 {
        let r = &self.ar * c + &self.br;
        let h = &self.ah * c + &self.bh;
        self.scale * r.iter().zip(h.iter()).map(|(r, h)| r * r / h).sum::<f64>()
    }

    fn grad_hess(&self, c: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = c.len();
        let r = &self.ar * c + &self.br;
        let h = &self.ah * c + &self.bh;
        let mut g = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..r.len() {
            let ri = r[i];
            let hi = h[i];
            let dr = self.ar.row(i).transpose();
            let dh = self.ah.row(i).transpose();
            let w = &dr - &dh * (ri / hi);
            g += (&dr * (2.0 * ri / hi) - &dh * (ri * ri / (hi * hi))) * self.scale;
            hess += &w * w.transpose() * (2.0 * self.scale / hi);
        }
        (g, hess)
    }
}

/// Orthonormal basis of the row space of `[a; b]`.
fn row_space(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.ncols();
    let mut m = DMatrix::zeros((a.nrows() + b.nrows()).max(d), d);
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > RANK_TOL * smax)
        .collect();
    DMatrix::from_fn(d, keep.len(), |i, j| v_t[(keep[j], i)])
}

/// `f(W y)` for a convex `f`.
struct Restricted<'a> {
    inner: &'a dyn Convex,
    w: DMatrix<f64>,
}

impl Convex for Restricted<'_> {
    fn value(&self, y: &DVector<f64>) -> f64 {
        self.inner.value(&(&self.w * y))
    }

    fn grad_hess(&self, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (g, h) = self.inner.grad_hess(&(&self.w * y));
        let wt = self.w.transpose();
        (&wt * g, &wt * h * &self.w)
    }
}

fn finish(
    sys: &ConstraintSystem,
    kind: OperatorKind,
    rejected_bp: Vec<(usize, String)>,
    grid: &Grid1D,
) -> Result<SbpOperator1D> {
    let layout = &sys.layout;
    let sol = &sys.solution;
    let z = &sol.basis;
    let xp = &sol.particular;
    let d = z.ncols();
    let bp = layout.bp;

    let ah = z.rows(0, bp).into_owned();
    let bh = xp.rows(0, bp).into_owned();
    let bh_shift = bh.map(|v| v - POSITIVITY_EPS);
    let particular_feasible = bh_shift.iter().all(|&v| v > 0.0);

    let cap = bh.max() + 1.0;
    let (margin, c_pos) = max_min_affine(&ah, &bh, cap);
    if margin <= POSITIVITY_EPS {
        return Err(SbpError::ConstructionInfeasible(format!(
            "no positive norm exists for p = {}, N = {}, bp = {bp} (best min h = {margin:.3e})",
            layout.p, layout.n
        )));
    }

    let (ar_raw, br_raw) = layout.truncation_rows();
    let truncation = TruncationObjective {
        ar: &ar_raw * z,
        br: &ar_raw * xp + &br_raw,
        ah: ah.clone(),
        bh: bh.clone(),
        scale: 2.0 / layout.spacing,
    };
    // J_Q = const + Σ_v w_v x_v^2; every q unknown occupies four entries of Q
    let mut wz = DMatrix::zeros(layout.n_q(), d);
    let mut wb = DVector::zeros(layout.n_q());
    for v in 0..layout.n_q() {
        wz.row_mut(v).copy_from(&(z.row(bp + v) * 2.0));
        wb[v] = 2.0 * xp[bp + v];
    }
    let coefficient = LeastSquares { a: wz, b: wb };

    let zero = DVector::zeros(d);
    let truncation_particular = truncation.value(&zero);

    let (c_final, truncation_min, coefficient_stage1, newton_steps) = if d == 0 {
        (zero.clone(), truncation_particular, coefficient.value(&zero), 0)
    } else {
        let start = if particular_feasible { zero.clone() } else { c_pos };
        // J_e only sees the coordinates in the row space of [A_r; A_h]; the
        // remaining directions are left to the second stage
        let w = row_space(&truncation.ar, &truncation.ah);
        let restricted = Restricted {
            inner: &truncation,
            w: w.clone(),
        };
        let y0 = w.transpose() * &start;
        let restricted_q = Restricted {
            inner: &coefficient,
            w: w.clone(),
        };
        // the infimum of J_e may only be approached as coefficients grow
        // without bound; keep the first stage in a bounded region
        let q_cap = COEFFICIENT_CAP_FACTOR * restricted_q.value(&y0).max(1.0);
        let pos1 = Constraints::affine(&ah * &w, bh_shift.clone()).with_upper(&restricted_q, q_cap);
        let stage1 = minimize_barrier(&restricted, &pos1, y0, BarrierOptions::default());
        let stage1 = BarrierResult {
            x: &w * &stage1.x,
            ..stage1
        };
        let j_min = stage1.value;
        let q1 = coefficient.value(&stage1.x);
        let cap = (1.0 + TRUNCATION_SLACK) * j_min;
        let stage2_cons = Constraints::affine(ah.clone(), bh_shift.clone()).with_upper(&truncation, cap);
        let mut steps = stage1.newton_steps;
        let c2 = if j_min > 0.0 && stage2_cons.strictly_feasible(&stage1.x) {
            let stage2 = minimize_barrier(&coefficient, &stage2_cons, stage1.x.clone(), BarrierOptions::default());
            steps += stage2.newton_steps;
            stage2.x
        } else {
            stage1.x.clone()
        };
        (c2, j_min, q1, steps)
    };

    let x = sol.point(&c_final);
    let h = layout.h_diag(&x);
    if h.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(SbpError::OptimizationFailed(
            "optimizer left the positive-norm region".into(),
        ));
    }
    let q = layout.q_matrix(&x);
    let report = ConstructionReport {
        kind,
        p: layout.p,
        n: layout.n,
        bp,
        rejected_bp,
        free_parameters: d,
        positivity_margin: margin,
        particular_feasible,
        truncation_particular,
        truncation_min,
        truncation_final: truncation.value(&c_final),
        coefficient_stage1,
        coefficient_final: coefficient.value(&c_final),
        newton_steps,
    };
    let op = SbpOperator1D::from_parts(grid.clone(), layout.p, h, q, bp, kind)?;
    let cert = verify_sbp(&op, SbpTolerances::default());
    if !cert.passed() {
        return Err(SbpError::ConstructionInfeasible(format!(
            "optimized operator for p = {}, N = {}, bp = {bp} fails certification \
             (accuracy {:?}, norm degree {}, min weight {:.3e})",
            layout.p, layout.n, cert.accuracy_residuals, cert.norm_degree, cert.min_weight
        )));
    }
    Ok(op.with_report(report))
}

fn check_degree(p: usize) -> Result<()> {
    if (1..=4).contains(&p) {
        Ok(())
    } else {
        Err(SbpError::UnsupportedDegree(p))
    }
}

/// Classical FD-SBP operator: `2p` boundary nodes, norm of degree `2p-1`.
pub fn construct_classical(p: usize, n: usize) -> Result<SbpOperator1D> {
    check_degree(p)?;
    if n < 4 * p {
        return Err(SbpError::InvalidArgument(format!(
            "classical operator of degree {p} needs N >= {}, got {n}",
            4 * p
        )));
    }
    let grid = Grid1D::uniform(n)?;
    let sys = assemble_constraint_system(&grid, p, 2 * p, 2 * p - 1)?;
    finish(&sys, OperatorKind::Classical, Vec::new(), &grid)
}

/// Degree-preserving operator: the norm integrates monomials up to degree
/// `2p`. The boundary block starts at `2p + 1` nodes and grows until a
/// positive norm exists.
pub fn construct_degree_preserving(p: usize, n: usize) -> Result<SbpOperator1D> {
    check_degree(p)?;
    let grid = Grid1D::uniform(n)?;
    let mut rejected = Vec::new();
    let mut bp = 2 * p + 1;
    loop {
        if 2 * bp > n {
            return Err(SbpError::ConstructionInfeasible(format!(
                "no degree-preserving operator with p = {p} on N = {n} nodes: boundary block \
                 would need {bp} > {} nodes (rejected: {rejected:?})",
                n / 2
            )));
        }
        let attempt = assemble_constraint_system(&grid, p, bp, 2 * p)
            .and_then(|sys| finish(&sys, OperatorKind::DegreePreserving, rejected.clone(), &grid));
        match attempt {
            Ok(op) => return Ok(op),
            Err(SbpError::ConstructionInfeasible(msg)) => {
                rejected.push((bp, msg));
                bp += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
