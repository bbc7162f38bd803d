//! Small dense linear-algebra helpers shared by the operator and projection
//! builders: affine solution sets of linear systems and orthogonal
//! complements.

use nalgebra::{DMatrix, DVector, SVD};

/// Solution set `x = particular + basis * c` of a (possibly rank deficient)
/// linear system, together with how well the system could be satisfied.
#[derive(Debug, Clone)]
pub struct AffineSolution {
    /// Minimum-norm least-squares solution.
    pub particular: DVector<f64>,
    /// Orthonormal basis of the numerical nullspace (columns).
    pub basis: DMatrix<f64>,
    /// `||A x - b|| / max(||b||, 1)` measured on the row-normalized system.
    pub relative_residual: f64,
    pub rank: usize,
}

impl AffineSolution {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn point(&self, coords: &DVector<f64>) -> DVector<f64> {
        if self.basis.ncols() == 0 {
            return self.particular.clone();
        }
        &self.particular + &self.basis * coords
    }
}

/// Solves `A x = b` in the least-squares sense and returns the affine family of
/// minimizers. Rows are normalized to unit length first so that equations of
/// very different magnitude are weighted alike; rows that are zero up to
/// roundoff keep their right-hand side unscaled. Singular values below
/// `rank_tol * sigma_max` are treated as zero.
pub fn solve_affine(a: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> AffineSolution {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m);
    let rows = m.max(n);
    let mut an = DMatrix::<f64>::zeros(rows, n);
    let mut bn = DVector::<f64>::zeros(rows);
    let norms: Vec<f64> = (0..m).map(|i| a.row(i).norm()).collect();
    // rows that vanish up to roundoff (e.g. odd moments on symmetric nodes)
    // are treated as exactly zero instead of being blown up
    let zero_row = 1e-13 * norms.iter().cloned().fold(0.0, f64::max);
    for (i, &norm) in norms.iter().enumerate() {
        if norm > zero_row {
            an.row_mut(i).copy_from(&(a.row(i) / norm));
            bn[i] = b[i] / norm;
        } else {
            // keep an inconsistent zero row visible in the residual
            bn[i] = b[i];
        }
    }

    let svd = SVD::new(an.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = rank_tol * smax.max(f64::MIN_POSITIVE);

    let mut x = DVector::<f64>::zeros(n);
    let mut null_cols = Vec::new();
    let mut rank = 0;
    for k in 0..sigma.len() {
        if sigma[k] > cutoff {
            rank += 1;
            let coeff = u.column(k).dot(&bn) / sigma[k];
            x += v_t.row(k).transpose() * coeff;
        } else {
            null_cols.push(k);
        }
    }
    let mut basis = DMatrix::<f64>::zeros(n, null_cols.len());
    for (j, &k) in null_cols.iter().enumerate() {
        basis.column_mut(j).copy_from(&v_t.row(k).transpose());
    }

    let resid = (&an * &x - &bn).norm();
    AffineSolution {
        particular: x,
        basis,
        relative_residual: resid / bn.norm().max(1.0),
        rank,
    }
}

/// Splits `R^n` into `range(v)` and its orthogonal complement. Returns
/// orthonormal bases `(range, complement)` with `v.ncols()` and
/// `n - v.ncols()` columns. `v` must have full column rank.
pub fn orthogonal_split(v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, r) = v.shape();
    assert!(r <= n, "more columns than rows");
    // Householder QR of [v | I] yields a full orthonormal basis whose leading
    // r columns span range(v).
    let mut aug = DMatrix::<f64>::zeros(n, r + n);
    aug.view_mut((0, 0), (n, r)).copy_from(v);
    aug.view_mut((0, r), (n, n)).fill_with_identity();
    let q = aug.qr().q();
    let range = q.columns(0, r).into_owned();
    let complement = q.columns(r, n - r).into_owned();
    (range, complement)
}

/// Vandermonde matrix `[x^0, x^1, ..., x^deg]` (one column per power).
pub fn vandermonde(x: &[f64], deg: usize) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), deg + 1, |i, k| x[i].powi(k as i32))
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}
