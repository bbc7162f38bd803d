//! Error norms, convergence rates, conservation and energy measures, global
//! operator assembly, spectra and maximum stable CFL numbers.

use std::io::Write;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::advect::{lsrk54, time_step};
use crate::error::{Result, SbpError};
use crate::mesh::{Mesh, MeshPattern};
use crate::sbp1d::SbpOperator1D;
use crate::sparse::CsrMatrix;

/// Largest operator handed to the dense eigensolver.
pub const SPECTRUM_LIMIT: usize = 8000;

/// `sqrt(Σ_e J_e (u_e − u*_e)^T H_e (u_e − u*_e))`.
pub fn l2_error(mesh: &Mesh, u: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
    let ex = mesh.sample(exact);
    let w = mesh.mass_weights();
    w.iter()
        .zip(u.iter().zip(&ex))
        .map(|(w, (a, b))| w * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: u32,
    pub dofs: usize,
    pub l2_error: f64,
    /// `None` on the first row and wherever an error vanishes.
    pub eoc: Option<f64>,
}

/// `EOC_d = log(e_d / e_{d−1}) / log(sqrt(DOFS_{d−1} / DOFS_d))`.
pub fn eoc_value(e_prev: f64, e: f64, dofs_prev: usize, dofs: usize) -> Option<f64> {
    if !(e_prev > 0.0 && e > 0.0) || dofs_prev == dofs {
        return None;
    }
    Some((e / e_prev).ln() / (0.5 * (dofs_prev as f64 / dofs as f64).ln()))
}

pub fn fill_eoc(rows: &mut [ConvergenceRow]) {
    if let Some(first) = rows.first_mut() {
        first.eoc = None;
    }
    for k in 1..rows.len() {
        let (a, b) = (&rows[k - 1], &rows[k]);
        rows[k].eoc = eoc_value(a.l2_error, b.l2_error, a.dofs, b.dofs);
    }
}

/// `|Σ J 1^T H u(T) − Σ J 1^T H u(0)|`.
pub fn conservation_metric(mesh: &Mesh, u0: &[f64], ut: &[f64]) -> f64 {
    (mesh.mass(ut) - mesh.mass(u0)).abs()
}

pub fn energy(mesh: &Mesh, u: &[f64]) -> f64 {
    mesh.energy(u)
}

/// Sparse `A` with `du/dt = A u`, assembled symbolically from the element
/// operators and interface couplings.
pub fn assemble_global(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.dofs();
    let mut trip = Vec::new();
    for el in &mesh.elements {
        let (a, b) = (-el.lam_xi / el.jac, -el.lam_eta / el.jac);
        for (i, j, v) in el.ops.d_xi().triplets() {
            trip.push((el.offset + i, el.offset + j, a * v));
        }
        for (i, j, v) in el.ops.d_eta().triplets() {
            trip.push((el.offset + i, el.offset + j, b * v));
        }
    }
    let sigma = mesh.spec.sigma;
    for iface in &mesh.interfaces {
        let c = &iface.coupling;
        let lam = iface.lambda;
        let pen = 0.5 * sigma * lam.abs();
        let (fl, fr) = iface.direction.faces();
        let (el, er) = (&mesh.elements[iface.left], &mesh.elements[iface.right]);
        let (il, ir) = (el.ops.face_indices(fl), er.ops.face_indices(fr));
        let (hl, hr) = (el.ops.h_diag(), er.ops.h_diag());
        // g_L = [(λ/2) M_L − pen A_LL] u_L + [pen − λ/2] A_LR u_R
        for (a, &ka) in il.iter().enumerate() {
            let row = el.offset + ka;
            let s = 1.0 / (el.jac * hl[ka]);
            trip.push((row, row, s * 0.5 * lam * c.m_l[a]));
            for (b, &kb) in il.iter().enumerate() {
                trip.push((row, el.offset + kb, -s * pen * c.a_ll[(a, b)]));
            }
            for (b, &kb) in ir.iter().enumerate() {
                trip.push((row, er.offset + kb, s * (pen - 0.5 * lam) * c.a_lr[(a, b)]));
            }
        }
        // g_R = [(λ/2) M_R + pen A_RR] u_R − [λ/2 + pen] A_RL u_L, subtracted
        for (a, &ka) in ir.iter().enumerate() {
            let row = er.offset + ka;
            let s = -1.0 / (er.jac * hr[ka]);
            trip.push((row, row, s * 0.5 * lam * c.m_r[a]));
            for (b, &kb) in ir.iter().enumerate() {
                trip.push((row, er.offset + kb, s * pen * c.a_rr[(a, b)]));
            }
            for (b, &kb) in il.iter().enumerate() {
                trip.push((row, el.offset + kb, -s * (0.5 * lam + pen) * c.a_rl[(a, b)]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub dim: usize,
    #[serde(skip)]
    pub eigenvalues: Vec<Complex64>,
    pub max_real: f64,
    pub max_abs_real: f64,
    /// `‖A‖_∞` of the operator.
    pub norm: f64,
    /// `‖A Q − Q T‖_F / ‖A‖_F` of the computed real Schur form.
    pub schur_residual: f64,
}

/// Full eigenvalue set via a real Schur decomposition, with the backward
/// error of the decomposition checked against `1e-8 ‖A‖`.
pub fn spectrum(a: &CsrMatrix) -> Result<SpectrumReport> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(SbpError::InvalidArgument("spectrum of a non-square matrix".into()));
    }
    if n > SPECTRUM_LIMIT {
        return Err(SbpError::TooLarge {
            dim: n,
            limit: SPECTRUM_LIMIT,
        });
    }
    let dense = a.to_dense();
    let norm_f = dense.norm();
    let norm = a.norm_inf();
    if n == 0 || norm_f == 0.0 {
        return Ok(SpectrumReport {
            dim: n,
            eigenvalues: vec![Complex64::new(0.0, 0.0); n],
            max_real: 0.0,
            max_abs_real: 0.0,
            norm,
            schur_residual: 0.0,
        });
    }
    // QR iteration can stall at a machine-epsilon deflation threshold; relax
    // it step by step and let the residual check decide
    for eps in [f64::EPSILON, 1e-14, 1e-13, 1e-12, 1e-11] {
        let Some(schur) = Schur::try_new(dense.clone(), eps, 1000 * n) else {
            continue;
        };
        let eigenvalues: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
        let (q, t) = schur.unpack();
        let schur_residual = (&dense * &q - &q * &t).norm() / norm_f;
        if schur_residual <= 1e-8 {
            return Ok(summarize(n, eigenvalues, norm, schur_residual));
        }
    }
    Err(SbpError::Internal(format!(
        "no Schur decomposition of the {n} x {n} operator met the 1e-8 residual bound"
    )))
}

fn summarize(dim: usize, eigenvalues: Vec<Complex64>, norm: f64, schur_residual: f64) -> SpectrumReport {
    let max_real = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let max_abs_real = eigenvalues.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    SpectrumReport {
        dim,
        eigenvalues,
        max_real,
        max_abs_real,
        norm,
        schur_residual,
    }
}

/// Spectrum of a conforming uniform mesh from the Kronecker-sum structure
/// `A = A_x ⊗ I + I ⊗ A_y`: every eigenvalue is a sum of one eigenvalue of
/// each periodic 1D multi-element operator.
pub fn spectrum_tensor(mesh: &Mesh) -> Result<SpectrumReport> {
    if !matches!(mesh.spec.pattern, MeshPattern::Uniform { .. }) {
        return Err(SbpError::InvalidArgument(
            "Kronecker-sum spectrum needs a uniform conforming mesh".into(),
        ));
    }
    let op = mesh.elements[0].ops.op_xi();
    let sigma = mesh.spec.sigma;
    let one_d = |ne: usize, beta: f64| -> Result<Vec<Complex64>> {
        let a = periodic_operator_1d(op, ne, beta, sigma);
        Ok(spectrum(&CsrMatrix::from_dense(&a))?.eigenvalues)
    };
    let ex = one_d(mesh.spec.nx, mesh.spec.beta[0])?;
    let ey = one_d(mesh.spec.ny, mesh.spec.beta[1])?;
    let eig: Vec<Complex64> = ex.iter().flat_map(|a| ey.iter().map(move |b| a + b)).collect();
    let norm = assemble_global(mesh).norm_inf();
    Ok(summarize(eig.len(), eig, norm, 0.0))
}

/// Semi-discrete operator of `u_t + β u_x = 0` on `ne` equal periodic
/// elements of `[0, 1]`, coupled by the conforming SAT.
pub fn periodic_operator_1d(op: &SbpOperator1D, ne: usize, beta: f64, sigma: f64) -> DMatrix<f64> {
    let n = op.len();
    let mut a = DMatrix::<f64>::zeros(ne * n, ne * n);
    let jac = 0.5 / ne as f64;
    let h = op.h_diag();
    let d = op.d();
    let pen = 0.5 * sigma * beta.abs();
    for e in 0..ne {
        let o = e * n;
        for i in 0..n {
            for j in 0..n {
                a[(o + i, o + j)] -= beta / jac * d[(i, j)];
            }
        }
        let (kl, kr) = (o + n - 1, ((e + 1) % ne) * n);
        let (sl, sr) = (1.0 / (jac * h[n - 1]), -1.0 / (jac * h[0]));
        a[(kl, kl)] += sl * (0.5 * beta - pen);
        a[(kl, kr)] += sl * (pen - 0.5 * beta);
        a[(kr, kr)] += sr * (0.5 * beta + pen);
        a[(kr, kl)] -= sr * (0.5 * beta + pen);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CflCriterion {
    /// Every `Δt λ_i` inside `|R(z)| ≤ 1 + 1e-12` of LSRK(5,4).
    Spectral,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxCflReport {
    pub max_cfl: f64,
    pub criterion: CflCriterion,
    pub tolerance: f64,
    pub bracket: [f64; 2],
    /// `Δt` at CFL = 1.
    pub dt_unit: f64,
    pub eigenvalue_count: usize,
}

/// True when every scaled eigenvalue lies in the LSRK(5,4) stability region.
pub fn rk_stable(eigenvalues: &[Complex64], dt: f64) -> bool {
    eigenvalues.iter().all(|&l| lsrk54::amplification(l * dt).norm() <= 1.0 + 1e-12)
}

/// Bisection (width `tol`) for the largest stable CFL within `bounds`.
pub fn max_cfl(mesh: &Mesh, report: &SpectrumReport, bounds: [f64; 2], tol: f64) -> Result<MaxCflReport> {
    let dt_unit = time_step(mesh, 1.0)?;
    let stable = |cfl: f64| rk_stable(&report.eigenvalues, cfl * dt_unit);
    let [mut lo, mut hi] = bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(SbpError::Configuration(format!("bad CFL search bounds {bounds:?}")));
    }
    if !stable(lo) || stable(hi) {
        return Err(SbpError::SearchFailed(format!(
            "bounds {bounds:?} do not bracket the stability limit"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MaxCflReport {
        max_cfl: lo,
        criterion: CflCriterion::Spectral,
        tolerance: tol,
        bracket: bounds,
        dt_unit,
        eigenvalue_count: report.eigenvalues.len(),
    })
}

pub fn write_convergence_csv(w: &mut impl Write, rows: &[ConvergenceRow]) -> std::io::Result<()> {
    writeln!(w, "dofs,l2,eoc")?;
    for r in rows {
        match r.eoc {
            Some(e) => writeln!(w, "{},{:.6e},{:.4}", r.dofs, r.l2_error, e)?,
            None => writeln!(w, "{},{:.6e},", r.dofs, r.l2_error)?,
        }
    }
    Ok(())
}

pub fn write_spectrum_csv(w: &mut impl Write, eig: &[Complex64]) -> std::io::Result<()> {
    writeln!(w, "re,im")?;
    for z in eig {
        writeln!(w, "{:.16e},{:.16e}", z.re, z.im)?;
    }
    Ok(())
}

/// One sample of an energy trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
    pub mass: f64,
}

pub fn write_energy_csv(w: &mut impl Write, trace: &[EnergySample]) -> std::io::Result<()> {
    writeln!(w, "t,energy,mass")?;
    for s in trace {
        writeln!(w, "{:.10e},{:.16e},{:.16e}", s.t, s.energy, s.mass)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advect::rhs;
    use crate::glue::GluePolicy;
    use crate::mesh::{MeshSpec, OperatorRegistry, ProjectionDegree};
    use crate::sbp1d::OperatorKind;

    fn spec(pattern: MeshPattern, n: usize, sigma: f64) -> MeshSpec {
        MeshSpec {
            pattern,
            nx: n,
            ny: n,
            kind: OperatorKind::DegreePreserving,
            p: 2,
            glue: GluePolicy::GaussMinimal,
            projection: ProjectionDegree::Full,
            sigma,
            beta: [1.0, 1.0],
        }
    }

    #[test]
    fn eoc_formula() {
        assert!((eoc_value(1e-2, 1e-3, 100, 400).unwrap() - 10f64.log2()).abs() < 1e-12);
        assert!((eoc_value(8.70e-5, 5.80e-6, 1936, 7744).unwrap() - 3.907).abs() < 1e-3);
        assert_eq!(eoc_value(1e-3, 1e-3, 100, 400), Some(0.0));
        assert_eq!(eoc_value(0.0, 1e-3, 100, 400), None);
    }

    #[test]
    fn l2_of_constant_offset() {
        let m = Mesh::build(&spec(MeshPattern::Quadrant { n1: 10, n2: 12 }, 2, 1.0), &OperatorRegistry::new()).unwrap();
        let f = |x: f64, y: f64| (x * 3.0).sin() + y;
        let u = m.sample(f);
        assert!(l2_error(&m, &u, f) < 1e-15);
        let shifted: Vec<f64> = u.iter().map(|v| v + 0.25).collect();
        assert!((l2_error(&m, &shifted, f) - 0.25).abs() < 1e-13);
    }

    #[test]
    fn assembled_matches_matrix_free() {
        let reg = OperatorRegistry::new();
        for sigma in [0.0, 1.0] {
            let m = Mesh::build(&spec(MeshPattern::Checkerboard { n1: 10, n2: 12 }, 2, sigma), &reg).unwrap();
            let a = assemble_global(&m);
            assert_eq!(a.nrows(), m.dofs());
            let u = m.sample(|x, y| (7.0 * x).sin() * (3.0 * y + 1.0).cos() + x * y);
            let mut r = vec![0.0; m.dofs()];
            rhs(&m, &u, &mut r);
            let au = a.mul_vec(&u);
            let scale = crate::linalg::max_abs(r.iter().copied());
            let diff = crate::linalg::max_abs(au.iter().zip(&r).map(|(a, b)| a - b));
            assert!(diff <= 1e-13 * scale, "{diff}");
        }
    }

    #[test]
    fn central_operator_is_skew_in_norm() {
        let m = Mesh::build(&spec(MeshPattern::Quadrant { n1: 10, n2: 12 }, 2, 0.0), &OperatorRegistry::new()).unwrap();
        let a = assemble_global(&m).to_dense();
        let w = m.mass_weights();
        let wa = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| w[i] * a[(i, j)]);
        let sym = &wa + wa.transpose();
        assert!(sym.amax() <= 1e-10 * wa.amax(), "{}", sym.amax());
    }

    #[test]
    fn spectrum_of_zero_and_diagonal() {
        let z = spectrum(&CsrMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z.max_real, 0.0);
        assert_eq!(z.eigenvalues.len(), 3);
        let d = spectrum(&CsrMatrix::from_diagonal(&[-1.0, -2.0, 0.5])).unwrap();
        assert!((d.max_real - 0.5).abs() < 1e-14);
        assert!((d.max_abs_real - 2.0).abs() < 1e-14);
    }

    #[test]
    fn spectrum_guard() {
        let big = CsrMatrix::identity(SPECTRUM_LIMIT + 1);
        assert!(matches!(spectrum(&big), Err(SbpError::TooLarge { .. })));
    }

    #[test]
    fn kronecker_sum_matches_dense_spectrum() {
        let m = Mesh::build(&spec(MeshPattern::Uniform { n: 10 }, 2, 1.0), &OperatorRegistry::new()).unwrap();
        let dense = spectrum(&assemble_global(&m)).unwrap();
        let tensor = spectrum_tensor(&m).unwrap();
        assert!((dense.max_real - tensor.max_real).abs() < 1e-8 * dense.norm);
        let dense_max = dense.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tensor_max = tensor.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((dense_max - tensor_max).abs() < 1e-8 * dense_max);
        let dt = time_step(&m, 1.0).unwrap();
        for cfl in [1.0, 2.0, 2.5, 3.0] {
            assert_eq!(rk_stable(&dense.eigenvalues, cfl * dt), rk_stable(&tensor.eigenvalues, cfl * dt));
        }
    }

    #[test]
    fn max_cfl_is_invariant_under_speed_scaling() {
        let reg = OperatorRegistry::new();
        let mut s = spec(MeshPattern::Uniform { n: 10 }, 2, 1.0);
        let m1 = Mesh::build(&s, &reg).unwrap();
        s.beta = [0.5, 0.5];
        let m2 = Mesh::build(&s, &reg).unwrap();
        let c1 = max_cfl(&m1, &spectrum_tensor(&m1).unwrap(), [0.1, 10.0], 0.01).unwrap();
        let c2 = max_cfl(&m2, &spectrum_tensor(&m2).unwrap(), [0.1, 10.0], 0.01).unwrap();
        assert!((c1.max_cfl - c2.max_cfl).abs() <= 0.01);
        assert!((c2.dt_unit / c1.dt_unit - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let mut rows = vec![
            ConvergenceRow { level: 1, dofs: 100, l2_error: 1e-2, eoc: None },
            ConvergenceRow { level: 2, dofs: 400, l2_error: 1e-3, eoc: None },
        ];
        fill_eoc(&mut rows);
        let mut buf = Vec::new();
        write_convergence_csv(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "dofs,l2,eoc\n100,1.000000e-2,\n400,1.000000e-3,3.3219\n");
    }
}
