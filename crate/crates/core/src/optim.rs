//! Log-barrier interior-point Newton solver for the small, smooth, convex
//! programs that arise when fixing the free coefficients of an SBP operator.
//!
//! The problems have at most a few dozen unknowns, so dense Newton steps with
//! a Cholesky solve are cheap. Everything is deterministic: no randomness, a
//! fixed barrier schedule and a fixed line search.

use nalgebra::{DMatrix, DVector};

/// A twice differentiable convex function.
pub trait Convex {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn grad_hess(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

/// Convex quadratic `|A x + b|^2`.
pub struct LeastSquares {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Convex for LeastSquares {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x + &self.b).norm_squared()
    }
    fn grad_hess(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let r = &self.a * x + &self.b;
        let at = self.a.transpose();
        (2.0 * &at * r, 2.0 * &at * &self.a)
    }
}

/// Feasible set `{x : A x + b >= 0, f_j(x) <= cap_j}`.
#[derive(Default)]
pub struct Constraints<'a> {
    pub affine_a: Option<DMatrix<f64>>,
    pub affine_b: Option<DVector<f64>>,
    pub upper: Vec<(&'a dyn Convex, f64)>,
}

impl<'a> Constraints<'a> {
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self {
            affine_a: Some(a),
            affine_b: Some(b),
            upper: Vec::new(),
        }
    }

    pub fn with_upper(mut self, f: &'a dyn Convex, cap: f64) -> Self {
        self.upper.push((f, cap));
        self
    }

    fn count(&self) -> usize {
        self.affine_b.as_ref().map_or(0, |b| b.len()) + self.upper.len()
    }

    /// Slacks of every constraint; all must be positive for strict feasibility.
    fn slacks(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.count());
        if let (Some(a), Some(b)) = (&self.affine_a, &self.affine_b) {
            s.extend((a * x + b).iter().copied());
        }
        for (f, cap) in &self.upper {
            s.push((cap - f.value(x)) / cap.abs().max(f64::MIN_POSITIVE));
        }
        s
    }

    pub fn strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.slacks(x).iter().all(|&s| s > 0.0)
    }

    /// Value, gradient and Hessian of `-sum log(slack)`.
    fn barrier(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut val = 0.0;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        if let (Some(a), Some(b)) = (&self.affine_a, &self.affine_b) {
            let s = a * x + b;
            for i in 0..s.len() {
                let row = a.row(i).transpose();
                val -= s[i].ln();
                g -= &row / s[i];
                h += &row * row.transpose() / (s[i] * s[i]);
            }
        }
        for (f, cap) in &self.upper {
            let scale = cap.abs().max(f64::MIN_POSITIVE);
            let s = (cap - f.value(x)) / scale;
            let (fg, fh) = f.grad_hess(x);
            let fg = fg / scale;
            let fh = fh / scale;
            val -= s.ln();
            g += &fg / s;
            h += &fg * fg.transpose() / (s * s) + fh / s;
        }
        (val, g, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Stop once the duality-gap bound `m / t` drops below this fraction of
    /// the (normalized) objective magnitude.
    pub rel_gap: f64,
    pub max_newton: usize,
    pub t_growth: f64,
    pub t_max: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            rel_gap: 1e-13,
            max_newton: 200,
            t_growth: 10.0,
            t_max: 1e18,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub newton_steps: usize,
    pub converged: bool,
}

/// Minimizes `objective` over the strict interior of `constraints` starting
/// from the strictly feasible point `x0`.
pub fn minimize_barrier(
    objective: &dyn Convex,
    constraints: &Constraints<'_>,
    x0: DVector<f64>,
    opts: BarrierOptions,
) -> BarrierResult {
    assert!(
        constraints.strictly_feasible(&x0),
        "barrier start must be strictly feasible"
    );
    let n = x0.len();
    let m = constraints.count().max(1) as f64;
    let scale = objective.value(&x0).abs().max(1e-300);
    let mut x = x0;
    let mut t = 1.0;
    let mut steps = 0;

    let phi = |x: &DVector<f64>, t: f64| -> Option<f64> {
        if !constraints.strictly_feasible(x) {
            return None;
        }
        let (b, _, _) = constraints.barrier(x);
        let v = t * objective.value(x) / scale + b;
        v.is_finite().then_some(v)
    };

    let converged = loop {
        // centering
        for _ in 0..opts.max_newton {
            let (fg, fh) = objective.grad_hess(&x);
            let (_, bg, bh) = constraints.barrier(&x);
            let g = fg * (t / scale) + bg;
            let mut h = fh * (t / scale) + bh;
            let diag_scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut reg = 1e-14 * diag_scale;
            let dx = loop {
                let mut hr = h.clone();
                for i in 0..n {
                    hr[(i, i)] += reg;
                }
                if let Some(ch) = hr.cholesky() {
                    break ch.solve(&(-&g));
                }
                reg = (reg * 100.0).max(1e-300);
                if reg > diag_scale * 1e6 {
                    for i in 0..n {
                        h[(i, i)] += reg;
                    }
                    break -&g / reg;
                }
            };
            let decrement = -g.dot(&dx);
            if decrement.is_nan() || decrement <= 1e-12 {
                break;
            }
            let f0 = phi(&x, t).expect("iterate stays feasible");
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let xn = &x + &dx * step;
                if let Some(fv) = phi(&xn, t) {
                    if fv <= f0 - 0.25 * step * decrement {
                        x = xn;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }

        let fval = objective.value(&x) / scale;
        if m / t <= opts.rel_gap * fval.abs().max(1e-300) {
            break true;
        }
        if t >= opts.t_max {
            break false;
        }
        t *= opts.t_growth;
    };

    let value = objective.value(&x);
    BarrierResult {
        x,
        value,
        newton_steps: steps,
        converged,
    }
}

/// Finds `max_x min_i (A x + b)_i` for the affine family `A x + b`.
/// Returns the optimal margin and a point attaining (nearly) it.
///
/// The margin is bounded above by `cap`, which must exceed the true optimum
/// when the problem is bounded (e.g. the mean of the entries when a positive
/// combination of them is fixed).
pub fn max_min_affine(a: &DMatrix<f64>, b: &DVector<f64>, cap: f64) -> (f64, DVector<f64>) {
    let (m, n) = a.shape();
    if n == 0 {
        let margin = b.iter().cloned().fold(f64::INFINITY, f64::min);
        return (margin, DVector::zeros(0));
    }
    // variables z = (x, s); maximize s subject to A x + b - s >= 0, s <= cap
    let mut ca = DMatrix::zeros(m + 1, n + 1);
    let mut cb = DVector::zeros(m + 1);
    ca.view_mut((0, 0), (m, n)).copy_from(a);
    for i in 0..m {
        ca[(i, n)] = -1.0;
        cb[i] = b[i];
    }
    ca[(m, n)] = -1.0;
    cb[m] = cap;
    let s0 = b.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut z0 = DVector::zeros(n + 1);
    z0[n] = s0.min(cap - 1.0);
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let cons = Constraints::affine(ca, cb);
    // The objective is linear, so normalize against the offset of the start.
    let opts = BarrierOptions {
        rel_gap: 1e-12,
        ..Default::default()
    };
    let shifted = ShiftedLinear {
        c,
        offset: cap + 1.0,
    };
    let res = minimize_barrier(&shifted, &cons, z0, opts);
    let margin = res.x[n];
    (margin, res.x.rows(0, n).into_owned())
}

/// `c^T x + offset`, kept positive over the feasible set so relative gap
/// tests are meaningful.
struct ShiftedLinear {
    c: DVector<f64>,
    offset: f64,
}

impl Convex for ShiftedLinear {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x) + self.offset
    }
    fn grad_hess(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.c.clone(), DMatrix::zeros(x.len(), x.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_quadratic() {
        // min (x-2)^2 + (y+1)^2  s.t. 0 <= x <= 1, y >= 0  -> (1, 0)
        let obj = LeastSquares {
            a: DMatrix::identity(2, 2),
            b: DVector::from_vec(vec![-2.0, 1.0]),
        };
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let cons = Constraints::affine(a, b);
        let res = minimize_barrier(&obj, &cons, DVector::from_vec(vec![0.5, 0.5]), Default::default());
        assert!((res.x[0] - 1.0).abs() < 1e-8, "{}", res.x);
        assert!(res.x[1].abs() < 1e-8, "{}", res.x);
        assert!((res.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn max_min_of_simplex() {
        // entries (x, 1 - x): best margin 1/2 at x = 1/2
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let (margin, x) = max_min_affine(&a, &b, 1.0);
        assert!((margin - 0.5).abs() < 1e-8, "{margin}");
        assert!((x[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn upper_bound_constraint_is_respected() {
        // min x  s.t. x^2 <= 4  -> x = -2
        let sq = LeastSquares {
            a: DMatrix::identity(1, 1),
            b: DVector::zeros(1),
        };
        let cons = Constraints::default().with_upper(&sq, 4.0);
        let shifted = ShiftedLinear {
            c: DVector::from_vec(vec![1.0]),
            offset: 10.0,
        };
        let res = minimize_barrier(&shifted, &cons, DVector::from_vec(vec![0.0]), Default::default());
        assert!((res.x[0] + 2.0).abs() < 1e-8, "{}", res.x);
    }
}
