//! Semi-discrete right-hand side of `u_t + β·∇u = 0` on a [`Mesh`] and the
//! five-stage fourth-order low-storage Runge-Kutta integrator.

use rayon::prelude::*;

use crate::error::{Result, SbpError};
use crate::mesh::{Coupling, Interface, Mesh};

/// Numerical fluxes `(f*_L, f*_R)` of one interface given the face traces.
///
/// `f*_L = ½(λ M_L u_L + λ A_LR u_R) − (σ|λ|/2)(A_LR u_R − A_LL u_L)`
/// `f*_R = ½(λ M_R u_R + λ A_RL u_L) − (σ|λ|/2)(A_RR u_R − A_RL u_L)`
pub fn interface_flux(c: &Coupling, lambda: f64, sigma: f64, u_l: &[f64], u_r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ul = nalgebra::DVectorView::from_slice(u_l, u_l.len());
    let ur = nalgebra::DVectorView::from_slice(u_r, u_r.len());
    let (lr, ll) = (&c.a_lr * ur, &c.a_ll * ul);
    let (rl, rr) = (&c.a_rl * ul, &c.a_rr * ur);
    let pen = 0.5 * sigma * lambda.abs();
    let f_l = (0..u_l.len())
        .map(|j| 0.5 * lambda * (c.m_l[j] * u_l[j] + lr[j]) - pen * (lr[j] - ll[j]))
        .collect();
    let f_r = (0..u_r.len())
        .map(|j| 0.5 * lambda * (c.m_r[j] * u_r[j] + rl[j]) - pen * (rr[j] - rl[j]))
        .collect();
    (f_l, f_r)
}

/// Face penalties `(λ M_L u_L − f*_L, λ M_R u_R − f*_R)` of one interface.
pub fn interface_sat(mesh: &Mesh, iface: &Interface, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (fl, fr) = iface.direction.faces();
    let (el, er) = (&mesh.elements[iface.left], &mesh.elements[iface.right]);
    let ul = el.ops.trace(fl, mesh.element_slice(iface.left, u));
    let ur = er.ops.trace(fr, mesh.element_slice(iface.right, u));
    let c = &iface.coupling;
    let (f_l, f_r) = interface_flux(c, iface.lambda, mesh.spec.sigma, &ul, &ur);
    let g_l = (0..ul.len()).map(|j| iface.lambda * c.m_l[j] * ul[j] - f_l[j]).collect();
    let g_r = (0..ur.len()).map(|j| iface.lambda * c.m_r[j] * ur[j] - f_r[j]).collect();
    (g_l, g_r)
}

/// Splits `out` into one mutable block per element.
fn element_blocks<'a>(mesh: &Mesh, mut out: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let mut blocks = Vec::with_capacity(mesh.elements.len());
    for el in &mesh.elements {
        let (head, tail) = out.split_at_mut(el.len());
        blocks.push(head);
        out = tail;
    }
    blocks
}

/// `out = −(λ^ξ/J) D_ξ u − (λ^η/J) D_η u` element by element.
pub fn volume_term(mesh: &Mesh, u: &[f64], out: &mut [f64]) {
    assert_eq!(u.len(), mesh.dofs());
    assert_eq!(out.len(), mesh.dofs());
    element_blocks(mesh, out)
        .into_par_iter()
        .zip(mesh.elements.par_iter())
        .for_each(|(o, el)| {
            let ue = &u[el.offset..el.offset + el.len()];
            let mut tmp = vec![0.0; el.len()];
            el.ops.apply_d_xi(ue, o);
            el.ops.apply_d_eta(ue, &mut tmp);
            let (a, b) = (-el.lam_xi / el.jac, -el.lam_eta / el.jac);
            for (o, t) in o.iter_mut().zip(&tmp) {
                *o = a * *o + b * t;
            }
        });
}

/// Adds the interface SATs `±(1/J) H⁻¹ (λ E u − f*)` to `out`.
///
/// Penalties are computed in parallel per interface, then accumulated in
/// interface order so the result is independent of the thread count.
pub fn add_sat_term(mesh: &Mesh, u: &[f64], out: &mut [f64]) {
    let sats: Vec<(Vec<f64>, Vec<f64>)> = mesh.interfaces.par_iter().map(|i| interface_sat(mesh, i, u)).collect();
    for (iface, (g_l, g_r)) in mesh.interfaces.iter().zip(sats) {
        let (fl, fr) = iface.direction.faces();
        for (elem, face, g, sign) in [(iface.left, fl, g_l, 1.0), (iface.right, fr, g_r, -1.0)] {
            let el = &mesh.elements[elem];
            let h = el.ops.h_diag();
            for (k, gk) in el.ops.face_indices(face).into_iter().zip(g) {
                out[el.offset + k] += sign * gk / (el.jac * h[k]);
            }
        }
    }
}

/// Full semi-discrete right-hand side.
pub fn rhs(mesh: &Mesh, u: &[f64], out: &mut [f64]) {
    volume_term(mesh, u, out);
    add_sat_term(mesh, u, out);
}

/// Carpenter-Kennedy LSRK(5,4), 2N-storage form:
/// `k ← A_i k + Δt f(t + c_i Δt, u)`, `u ← u + B_i k`.
pub mod lsrk54 {
    pub const A: [f64; 5] = [
        0.0,
        -567301805773.0 / 1357537059087.0,
        -2404267990393.0 / 2016746695238.0,
        -3550918686646.0 / 2091501179385.0,
        -1275806237668.0 / 842570457699.0,
    ];
    pub const B: [f64; 5] = [
        1432997174477.0 / 9575080441755.0,
        5161836677717.0 / 13612068292357.0,
        1720146321549.0 / 2090206949498.0,
        3134564353537.0 / 4481467310338.0,
        2277821191437.0 / 14882151754819.0,
    ];
    pub const C: [f64; 5] = [
        0.0,
        1432997174477.0 / 9575080441755.0,
        2526269341429.0 / 6820363962896.0,
        2006345519317.0 / 3224310063776.0,
        2802321613138.0 / 2924317926251.0,
    ];

    /// Stability function `R(z)` of one step applied to `u' = λu`, `z = λΔt`.
    pub fn amplification(z: num_complex::Complex64) -> num_complex::Complex64 {
        let mut u = num_complex::Complex64::new(1.0, 0.0);
        let mut k = num_complex::Complex64::new(0.0, 0.0);
        for i in 0..5 {
            k = k * A[i] + z * u;
            u += k * B[i];
        }
        u
    }
}

/// Generic integrator state for `u' = f(t, u)`.
pub struct Lsrk54 {
    k: Vec<f64>,
    f: Vec<f64>,
}

impl Lsrk54 {
    pub fn new(n: usize) -> Self {
        Self {
            k: vec![0.0; n],
            f: vec![0.0; n],
        }
    }

    pub fn step(&mut self, t: f64, dt: f64, u: &mut [f64], mut f: impl FnMut(f64, &[f64], &mut [f64])) {
        self.k.fill(0.0);
        for i in 0..5 {
            f(t + lsrk54::C[i] * dt, u, &mut self.f);
            for ((k, fi), ui) in self.k.iter_mut().zip(&self.f).zip(u.iter_mut()) {
                *k = lsrk54::A[i] * *k + dt * fi;
                *ui += lsrk54::B[i] * *k;
            }
        }
    }
}

/// Step count and sizes landing exactly on `t_end`: full steps of `dt`,
/// then one truncated step.
pub fn step_schedule(t_end: f64, dt: f64) -> (usize, f64) {
    assert!(dt > 0.0 && t_end >= 0.0);
    let n = ((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let last = t_end - (n - 1) as f64 * dt;
    (n, last)
}

/// `Δt = CFL · min(Δx/2, Δy/2) / (max N · max |β|)`.
pub fn time_step(mesh: &Mesh, cfl: f64) -> Result<f64> {
    let beta = mesh.spec.beta[0].abs().max(mesh.spec.beta[1].abs());
    if cfl.is_nan() || cfl <= 0.0 || beta.is_nan() || beta <= 0.0 {
        return Err(SbpError::Configuration(format!(
            "time step needs CFL > 0 and a nonzero wave speed (CFL {cfl}, β {:?})",
            mesh.spec.beta
        )));
    }
    let h = mesh
        .elements
        .iter()
        .map(|e| (0.5 * (e.x1 - e.x0)).min(0.5 * (e.y1 - e.y0)))
        .fold(f64::INFINITY, f64::min);
    Ok(cfl * h / (mesh.max_nodes() as f64 * beta))
}

/// Advances `u` from `t = 0` to exactly `t_end`. `observe(t, u)` is called on
/// the initial state and after every step.
pub fn integrate(
    mesh: &Mesh,
    u: &mut [f64],
    t_end: f64,
    cfl: f64,
    mut observe: impl FnMut(f64, &[f64]),
) -> Result<()> {
    let dt = time_step(mesh, cfl)?;
    let (n, last) = step_schedule(t_end, dt);
    let mut rk = Lsrk54::new(u.len());
    let mut t = 0.0;
    observe(t, u);
    for s in 0..n {
        let h = if s + 1 == n { last } else { dt };
        rk.step(t, h, u, |_, v, out| rhs(mesh, v, out));
        t = if s + 1 == n { t_end } else { t + h };
        if u.iter().any(|v| !v.is_finite()) {
            return Err(SbpError::InstabilityDetected { t });
        }
        observe(t, u);
    }
    Ok(())
}
