//! Levenberg–Marquardt refinement of the free projection coefficients.
//!
//! Residuals are the eigenvalues of `M_f - R^T M_G R` for both faces, with
//! `R = R_0 + Q_W^perp Y (Q_V^perp)^T`. For a simple eigenpair `(μ, v)`,
//! `dμ/dY_ab = -2 [Q_W^perp^T M_G R v]_a [Q_V^perp^T v]_b`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{ProjectionPair, ProjectionSide};
use crate::error::{Result, SbpError};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LmOptions {
    pub iterations: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            iterations: 10,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmReport {
    pub options: LmOptions,
    pub free_parameters: usize,
    /// Sum of squared eigenvalues, before and after.
    pub objective_initial: f64,
    pub objective_final: f64,
    /// Objective after each iteration.
    pub history: Vec<f64>,
    pub accepted_steps: usize,
    pub lambda_final: f64,
}

fn candidate(side: &ProjectionSide, y: &DMatrix<f64>) -> DMatrix<f64> {
    &side.r + &side.w_perp * y * side.v_perp.transpose()
}

fn gap_eigen(side: &ProjectionSide, r: &DMatrix<f64>, mg: &[f64]) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let nf = r.ncols();
    let mg_r = DMatrix::from_fn(r.nrows(), nf, |i, j| mg[i] * r[(i, j)]);
    let mut s = -(r.transpose() * &mg_r);
    for i in 0..nf {
        s[(i, i)] += side.weights[i];
    }
    // symmetrize against roundoff
    let s = (&s + s.transpose()) * 0.5;
    SymmetricEigen::new(s)
}

/// Residuals and Jacobian block of one side at `y`.
fn side_system(side: &ProjectionSide, y: &DMatrix<f64>, mg: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let r = candidate(side, y);
    let eig = gap_eigen(side, &r, mg);
    let nf = r.ncols();
    let (a, b) = (side.w_perp.ncols(), side.v_perp.ncols());
    let mut jac = DMatrix::zeros(nf, a * b);
    for i in 0..nf {
        let v = eig.eigenvectors.column(i);
        let mg_rv = DVector::from_iterator(r.nrows(), (&r * v).iter().zip(mg).map(|(x, w)| x * w));
        let left = side.w_perp.transpose() * mg_rv;
        let right = side.v_perp.transpose() * v;
        // column-major vec(Y)
        for bb in 0..b {
            for aa in 0..a {
                jac[(i, aa + bb * a)] = -2.0 * left[aa] * right[bb];
            }
        }
    }
    (eig.eigenvalues, jac)
}

fn side_objective(side: &ProjectionSide, y: &DMatrix<f64>, mg: &[f64]) -> f64 {
    let r = candidate(side, y);
    gap_eigen(side, &r, mg).eigenvalues.norm_squared()
}

/// Runs a fixed number of Levenberg–Marquardt iterations over the free
/// coordinates of both sides. Identity and fully determined sides are left
/// untouched. The linear conditions are re-checked afterwards.
pub fn optimize_projection(mut pair: ProjectionPair, opts: LmOptions) -> Result<ProjectionPair> {
    let mg = pair.inter.weights().to_vec();
    let sides: Vec<usize> = [&pair.left, &pair.right]
        .iter()
        .enumerate()
        .filter(|(_, s)| s.free_parameters() > 0)
        .map(|(i, _)| i)
        .collect();
    if sides.is_empty() {
        return Ok(pair);
    }
    let before = pair.condition_residuals();
    let side_ref = |pair: &ProjectionPair, k: usize| -> ProjectionSide {
        if k == 0 {
            pair.left.clone()
        } else {
            pair.right.clone()
        }
    };
    let mut ys: Vec<DMatrix<f64>> = sides
        .iter()
        .map(|&k| {
            let s = side_ref(&pair, k);
            DMatrix::zeros(s.w_perp.ncols(), s.v_perp.ncols())
        })
        .collect();
    let side_objs: Vec<ProjectionSide> = sides.iter().map(|&k| side_ref(&pair, k)).collect();
    let total = |ys: &[DMatrix<f64>]| -> f64 {
        side_objs.iter().zip(ys).map(|(s, y)| side_objective(s, y, &mg)).sum()
    };

    let n_params: usize = ys.iter().map(|y| y.len()).sum();
    let objective_initial = total(&ys);
    let mut current = objective_initial;
    let mut lambda = opts.lambda0;
    let mut history = Vec::with_capacity(opts.iterations);
    let mut accepted = 0;

    for _ in 0..opts.iterations {
        // stacked residuals with block-diagonal Jacobian
        let systems: Vec<(DVector<f64>, DMatrix<f64>)> =
            side_objs.iter().zip(&ys).map(|(s, y)| side_system(s, y, &mg)).collect();
        let m: usize = systems.iter().map(|(r, _)| r.len()).sum();
        let mut res = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, n_params);
        let (mut row, mut col) = (0, 0);
        for (r, j) in &systems {
            res.rows_mut(row, r.len()).copy_from(r);
            jac.view_mut((row, col), j.shape()).copy_from(j);
            row += r.len();
            col += j.ncols();
        }
        // delta = -J^T (J J^T + lambda I)^{-1} r
        let mut jjt = &jac * jac.transpose();
        for i in 0..m {
            jjt[(i, i)] += lambda;
        }
        let step = jjt.cholesky().map(|ch| -(jac.transpose() * ch.solve(&res)));
        let trial = step.map(|delta| {
            let mut off = 0;
            ys.iter()
                .map(|y| {
                    let d = DMatrix::from_column_slice(y.nrows(), y.ncols(), &delta.as_slice()[off..off + y.len()]);
                    off += y.len();
                    y + d
                })
                .collect::<Vec<_>>()
        });
        match trial {
            Some(t) if total(&t) < current => {
                current = total(&t);
                ys = t;
                lambda /= opts.lambda_down;
                accepted += 1;
            }
            _ => lambda *= opts.lambda_up,
        }
        history.push(current);
    }

    for (&k, y) in sides.iter().zip(&ys) {
        let side = if k == 0 { &mut pair.left } else { &mut pair.right };
        side.r = candidate(side, y);
    }
    let after = pair.condition_residuals();
    for (b, a) in before.iter().zip(&after) {
        if (a.0 - b.0).abs() > 1e-12 || (a.1 - b.1).abs() > 1e-12 {
            return Err(SbpError::Internal(format!(
                "projection optimization changed the linear conditions ({b:?} -> {a:?})"
            )));
        }
    }
    pair.optimization = Some(LmReport {
        options: opts,
        free_parameters: n_params,
        objective_initial,
        objective_final: current,
        history,
        accepted_steps: accepted,
        lambda_final: lambda,
    });
    Ok(pair)
}

/// Sum of squared eigenvalues of `M_f - R^T M_G R` over both faces.
pub fn projection_objective(pair: &ProjectionPair) -> f64 {
    let mg = pair.inter.weights();
    [&pair.left, &pair.right]
        .iter()
        .map(|s| gap_eigen(s, &s.r, mg).eigenvalues.norm_squared())
        .sum()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::glue::{legendre_gauss, solve_projection, Face, IntermediateGrid};
    use crate::sbp1d::construct_degree_preserving;

    #[test]
    fn objective_never_increases() {
        let a = construct_degree_preserving(3, 22).unwrap();
        let b = construct_degree_preserving(3, 24).unwrap();
        let inter = IntermediateGrid::from_operator(&b);
        let pair = solve_projection(Face::of(&a), Face::of(&b), &inter, 3, 3).unwrap();
        let j0 = projection_objective(&pair);
        let opt = optimize_projection(pair, LmOptions::default()).unwrap();
        let rep = opt.optimization.as_ref().unwrap();
        assert_eq!(rep.history.len(), 10);
        assert!((rep.objective_initial - j0).abs() <= 1e-12 * j0.max(1.0));
        assert!(rep.objective_final <= rep.objective_initial);
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
        assert!((projection_objective(&opt) - rep.objective_final).abs() <= 1e-12 * j0.max(1.0));
    }

    #[test]
    fn determined_pair_is_unchanged() {
        let a = construct_degree_preserving(3, 22).unwrap();
        let b = construct_degree_preserving(3, 24).unwrap();
        let pair = solve_projection(Face::of(&a), Face::of(&b), &legendre_gauss(4).unwrap(), 3, 3).unwrap();
        let opt = optimize_projection(pair.clone(), LmOptions::default()).unwrap();
        assert!(opt.optimization.is_none());
        assert_eq!(opt.r_l(), pair.r_l());
        assert_eq!(opt.r_r(), pair.r_r());
    }
}
