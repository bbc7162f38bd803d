//! Cartesian element meshes of the periodic unit square with per-element node
//! counts and projection-coupled interfaces.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbpError};
use crate::glue::{
    build_projection, build_reduced_projection, intermediate_grid, Face as GlueFace, GluePolicy, ProjectionPair,
};
use crate::sbp1d::{construct_classical, construct_degree_preserving, OperatorKind, SbpOperator1D};
use crate::tensor2d::{Face, Operator2D};

/// Node-count layout over the element grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshPattern {
    Uniform { n: usize },
    /// `n1` in `[0,.5]^2` and `[.5,1]^2`, `n2` in the other two quadrants.
    Quadrant { n1: usize, n2: usize },
    /// `n1` where `ix + iy` is even.
    Checkerboard { n1: usize, n2: usize },
}

impl MeshPattern {
    fn nodes_at(&self, ix: usize, iy: usize, nx: usize, ny: usize) -> usize {
        match *self {
            MeshPattern::Uniform { n } => n,
            MeshPattern::Quadrant { n1, n2 } => {
                let left = ix < nx / 2;
                let low = iy < ny / 2;
                if left == low {
                    n1
                } else {
                    n2
                }
            }
            MeshPattern::Checkerboard { n1, n2 } => {
                if (ix + iy).is_multiple_of(2) {
                    n1
                } else {
                    n2
                }
            }
        }
    }

    fn validate(&self, nx: usize, ny: usize) -> Result<()> {
        let sizes: Vec<usize> = match *self {
            MeshPattern::Uniform { n } => vec![n],
            MeshPattern::Quadrant { n1, n2 } | MeshPattern::Checkerboard { n1, n2 } => vec![n1, n2],
        };
        if sizes.iter().any(|&n| n < 2) {
            return Err(SbpError::Configuration("elements need at least 2 nodes".into()));
        }
        match self {
            MeshPattern::Quadrant { .. } if !nx.is_multiple_of(2) || !ny.is_multiple_of(2) => Err(SbpError::Configuration(format!(
                "quadrant pattern needs even element counts, got {nx} x {ny}"
            ))),
            MeshPattern::Checkerboard { .. } if !nx.is_multiple_of(2) || !ny.is_multiple_of(2) => Err(SbpError::Configuration(format!(
                "periodic checkerboard needs even element counts, got {nx} x {ny}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Degree of the interface projections relative to the operator degree `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionDegree {
    /// Degree `p` (requires norms of degree `2p`).
    #[default]
    Full,
    /// Degree `p - 1`.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub pattern: MeshPattern,
    pub nx: usize,
    pub ny: usize,
    pub kind: OperatorKind,
    pub p: usize,
    pub glue: GluePolicy,
    #[serde(default)]
    pub projection: ProjectionDegree,
    pub sigma: f64,
    pub beta: [f64; 2],
}

impl MeshSpec {
    /// `2^level x 2^level` elements.
    pub fn at_level(&self, level: u32) -> Self {
        Self {
            nx: 1 << level,
            ny: 1 << level,
            ..self.clone()
        }
    }
}

/// Interface coupling matrices `A_ab = R_a^T M_G R_b` and the face norms.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub pair: Arc<ProjectionPair>,
    pub m_l: Vec<f64>,
    pub m_r: Vec<f64>,
    pub a_ll: DMatrix<f64>,
    pub a_lr: DMatrix<f64>,
    pub a_rl: DMatrix<f64>,
    pub a_rr: DMatrix<f64>,
}

impl Coupling {
    pub fn new(pair: ProjectionPair) -> Self {
        let mg = pair.m_gamma();
        let weighted = |r: &DMatrix<f64>| DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| mg[i] * r[(i, j)]);
        let (rl, rr) = (pair.r_l(), pair.r_r());
        let a_ll = rl.transpose() * weighted(rl);
        let a_lr = rl.transpose() * weighted(rr);
        let a_rr = rr.transpose() * weighted(rr);
        let a_rl = a_lr.transpose();
        Self {
            m_l: pair.left.weights().to_vec(),
            m_r: pair.right.weights().to_vec(),
            pair: Arc::new(pair),
            a_ll,
            a_lr,
            a_rl,
            a_rr,
        }
    }
}

/// Shared cache of 1D operators, 2D operators and interface couplings.
#[derive(Default)]
pub struct OperatorRegistry {
    ops: Mutex<HashMap<(OperatorKind, usize, usize), Arc<SbpOperator1D>>>,
    ops2d: Mutex<HashMap<(OperatorKind, usize, usize), Arc<Operator2D>>>,
    couplings: Mutex<HashMap<String, Arc<Coupling>>>,
}

impl OperatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn operator(&self, kind: OperatorKind, p: usize, n: usize) -> Result<Arc<SbpOperator1D>> {
        if let Some(op) = self.ops.lock().expect("registry lock").get(&(kind, p, n)) {
            return Ok(op.clone());
        }
        let op = Arc::new(match kind {
            OperatorKind::Classical => construct_classical(p, n)?,
            OperatorKind::DegreePreserving => construct_degree_preserving(p, n)?,
        });
        Ok(self
            .ops
            .lock()
            .expect("registry lock")
            .entry((kind, p, n))
            .or_insert(op)
            .clone())
    }

    /// Registers an externally built operator under its `(kind, p, N)` key.
    pub fn insert(&self, op: SbpOperator1D) -> Arc<SbpOperator1D> {
        let key = (op.kind(), op.p(), op.len());
        let op = Arc::new(op);
        self.ops.lock().expect("registry lock").insert(key, op.clone());
        op
    }

    /// Every cached 1D operator, ordered by `(kind, p, N)`.
    pub fn operators(&self) -> Vec<Arc<SbpOperator1D>> {
        let map = self.ops.lock().expect("registry lock");
        let mut keys: Vec<_> = map.keys().copied().collect();
        keys.sort_by_key(|&(k, p, n)| (k == OperatorKind::DegreePreserving, p, n));
        keys.into_iter().map(|k| map[&k].clone()).collect()
    }

    /// Every cached coupling with its cache key, ordered by key.
    pub fn couplings(&self) -> Vec<(String, Arc<Coupling>)> {
        let map = self.couplings.lock().expect("registry lock");
        let mut out: Vec<_> = map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn operator2d(&self, kind: OperatorKind, p: usize, n: usize) -> Result<Arc<Operator2D>> {
        if let Some(op) = self.ops2d.lock().expect("registry lock").get(&(kind, p, n)) {
            return Ok(op.clone());
        }
        let op1 = self.operator(kind, p, n)?;
        let op = Arc::new(Operator2D::new(op1.clone(), op1));
        Ok(self
            .ops2d
            .lock()
            .expect("registry lock")
            .entry((kind, p, n))
            .or_insert(op)
            .clone())
    }

    /// Coupling between two faces, built once per operator pair, policy and
    /// projection degree.
    pub fn coupling(
        &self,
        left: &SbpOperator1D,
        right: &SbpOperator1D,
        policy: &GluePolicy,
        degree: ProjectionDegree,
    ) -> Result<Arc<Coupling>> {
        let key = format!(
            "{:?}/{}/{}|{:?}/{}/{}|{:?}|{:?}",
            left.kind(),
            left.p(),
            left.len(),
            right.kind(),
            right.p(),
            right.len(),
            policy,
            degree
        );
        if let Some(c) = self.couplings.lock().expect("registry lock").get(&key) {
            return Ok(c.clone());
        }
        let p = left.p();
        let conforming = left.len() == right.len()
            && left.nodes().iter().zip(right.nodes()).all(|(a, b)| (a - b).abs() <= 1e-13)
            && left.h_diag().iter().zip(right.h_diag()).all(|(a, b)| (a - b).abs() <= 1e-13);
        let pair = if conforming {
            ProjectionPair::identity(GlueFace::of(left), p)?
        } else {
            let deg = match degree {
                ProjectionDegree::Full => p,
                ProjectionDegree::Reduced => p - 1,
            };
            let inter = intermediate_grid(policy, left, right, deg, |n| {
                self.operator(OperatorKind::DegreePreserving, p, n)
            })?;
            match degree {
                ProjectionDegree::Full => build_projection(GlueFace::of(left), GlueFace::of(right), &inter, p)?,
                ProjectionDegree::Reduced => {
                    build_reduced_projection(GlueFace::of(left), GlueFace::of(right), &inter, p)?
                }
            }
        };
        let c = Arc::new(Coupling::new(pair));
        Ok(self
            .couplings
            .lock()
            .expect("registry lock")
            .entry(key)
            .or_insert(c)
            .clone())
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub id: usize,
    pub ix: usize,
    pub iy: usize,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub ops: Arc<Operator2D>,
    /// Jacobian `(Δx/2)(Δy/2)`.
    pub jac: f64,
    pub lam_xi: f64,
    pub lam_eta: f64,
    /// Start of this element's block in the global state vector.
    pub offset: usize,
}

impl Element {
    pub fn len(&self) -> usize {
        self.ops.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Physical coordinates of node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let xi = self.ops.op_xi().nodes()[i];
        let eta = self.ops.op_eta().nodes()[j];
        (
            self.x0 + 0.5 * (xi + 1.0) * (self.x1 - self.x0),
            self.y0 + 0.5 * (eta + 1.0) * (self.y1 - self.y0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Shared face normal to `x`: east face of `left`, west face of `right`.
    Xi,
    /// Shared face normal to `y`: north face of `left`, south face of `right`.
    Eta,
}

impl Direction {
    pub fn faces(self) -> (Face, Face) {
        match self {
            Direction::Xi => (Face::East, Face::West),
            Direction::Eta => (Face::North, Face::South),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Interface {
    pub left: usize,
    pub right: usize,
    pub direction: Direction,
    pub coupling: Arc<Coupling>,
    /// Normal wave speed `λ^ξ` or `λ^η`, shared by both sides.
    pub lambda: f64,
    /// Joins the last and first element rows across the periodic seam.
    pub wrap: bool,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub spec: MeshSpec,
    pub elements: Vec<Element>,
    pub interfaces: Vec<Interface>,
    dofs: usize,
}

impl Mesh {
    pub fn build(spec: &MeshSpec, registry: &OperatorRegistry) -> Result<Self> {
        let (nx, ny) = (spec.nx, spec.ny);
        if nx == 0 || ny == 0 {
            return Err(SbpError::Configuration("mesh needs at least one element per direction".into()));
        }
        if spec.sigma.is_nan() || spec.sigma < 0.0 {
            return Err(SbpError::Configuration(format!("sigma must be >= 0, got {}", spec.sigma)));
        }
        if spec.beta.iter().any(|b| !b.is_finite()) {
            return Err(SbpError::Configuration("wave speeds must be finite".into()));
        }
        if spec.projection == ProjectionDegree::Reduced && spec.p < 1 {
            return Err(SbpError::Configuration("reduced projections need p >= 1".into()));
        }
        spec.pattern.validate(nx, ny)?;
        let (dx, dy) = (1.0 / nx as f64, 1.0 / ny as f64);
        let mut elements = Vec::with_capacity(nx * ny);
        let mut offset = 0;
        for iy in 0..ny {
            for ix in 0..nx {
                let n = spec.pattern.nodes_at(ix, iy, nx, ny);
                let ops = registry.operator2d(spec.kind, spec.p, n)?;
                let len = ops.len();
                elements.push(Element {
                    id: iy * nx + ix,
                    ix,
                    iy,
                    x0: ix as f64 * dx,
                    x1: (ix + 1) as f64 * dx,
                    y0: iy as f64 * dy,
                    y1: (iy + 1) as f64 * dy,
                    ops,
                    jac: 0.25 * dx * dy,
                    lam_xi: spec.beta[0] * dy / 2.0,
                    lam_eta: spec.beta[1] * dx / 2.0,
                    offset,
                });
                offset += len;
            }
        }
        let mut interfaces = Vec::with_capacity(2 * nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let e = iy * nx + ix;
                for (direction, nb, lambda, wrap) in [
                    (Direction::Xi, iy * nx + (ix + 1) % nx, spec.beta[0] * dy / 2.0, ix + 1 == nx),
                    (Direction::Eta, ((iy + 1) % ny) * nx + ix, spec.beta[1] * dx / 2.0, iy + 1 == ny),
                ] {
                    let (fl, fr) = direction.faces();
                    let left = elements[e].ops.face_operator(fl);
                    let right = elements[nb].ops.face_operator(fr);
                    let coupling = registry.coupling(left, right, &spec.glue, spec.projection)?;
                    interfaces.push(Interface {
                        left: e,
                        right: nb,
                        direction,
                        coupling,
                        lambda,
                        wrap,
                    });
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            elements,
            interfaces,
            dofs: offset,
        })
    }

    pub fn dofs(&self) -> usize {
        self.dofs
    }

    pub fn max_nodes(&self) -> usize {
        self.elements.iter().map(|e| e.ops.n_xi().max(e.ops.n_eta())).max().unwrap_or(0)
    }

    pub fn element_slice<'a>(&self, e: usize, u: &'a [f64]) -> &'a [f64] {
        let el = &self.elements[e];
        &u[el.offset..el.offset + el.len()]
    }

    /// Evaluates `f(x, y)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut u = vec![0.0; self.dofs];
        for el in &self.elements {
            let ny = el.ops.n_eta();
            for i in 0..el.ops.n_xi() {
                for j in 0..ny {
                    let (x, y) = el.node(i, j);
                    u[el.offset + i * ny + j] = f(x, y);
                }
            }
        }
        u
    }

    /// Diagonal of the global norm `blockdiag(J_e H_e)`.
    pub fn mass_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dofs];
        for el in &self.elements {
            for (k, h) in el.ops.h_diag().iter().enumerate() {
                w[el.offset + k] = el.jac * h;
            }
        }
        w
    }

    /// `Σ_e J_e 1^T H_e u_e`.
    pub fn mass(&self, u: &[f64]) -> f64 {
        self.mass_weights().iter().zip(u).map(|(w, u)| w * u).sum()
    }

    /// `Σ_e J_e u_e^T H_e u_e`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.mass_weights().iter().zip(u).map(|(w, u)| w * u * u).sum()
    }

    pub fn non_conforming_interfaces(&self) -> usize {
        self.interfaces.iter().filter(|i| !i.coupling.pair.is_identity()).count()
    }
}
