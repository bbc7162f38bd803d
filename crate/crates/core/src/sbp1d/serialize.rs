//! JSON storage of operators. Reals are written in scientific notation with
//! 17 significant digits; the full `Q` is stored row-major so a file can be
//! re-verified without knowing how it was built.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, Serializer};

use super::{Grid1D, OperatorKind, SbpOperator1D};
use crate::error::{Result, SbpError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorFile {
    pub kind: OperatorKind,
    pub p: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub bp: usize,
    pub norm_degree: usize,
    #[serde(serialize_with = "precise_vec")]
    pub nodes: Vec<f64>,
    #[serde(serialize_with = "precise_vec")]
    pub h_diag: Vec<f64>,
    #[serde(serialize_with = "precise_vec")]
    pub q: Vec<f64>,
}

/// Formats a real with 17 significant digits.
pub(crate) fn precise(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn precise_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::{Error, SerializeSeq};
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for &x in v {
        if !x.is_finite() {
            return Err(S::Error::custom("non-finite value"));
        }
        let raw = serde_json::value::RawValue::from_string(precise(x)).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

impl OperatorFile {
    pub fn from_operator(op: &SbpOperator1D) -> Self {
        Self {
            kind: op.kind(),
            p: op.p(),
            n: op.len(),
            bp: op.bp(),
            norm_degree: op.norm_degree(),
            nodes: op.nodes().to_vec(),
            h_diag: op.h_diag().to_vec(),
            q: row_major(op.q()),
        }
    }

    /// Rebuilds the operator; the norm degree is re-certified and must match
    /// the stored value.
    pub fn to_operator(&self) -> Result<SbpOperator1D> {
        let n = self.n;
        if self.nodes.len() != n || self.h_diag.len() != n || self.q.len() != n * n {
            return Err(SbpError::InvalidArgument(format!(
                "operator file arrays do not match N = {n}"
            )));
        }
        let grid = Grid1D::from_nodes(self.nodes.clone())?;
        let q = DMatrix::from_row_slice(n, n, &self.q);
        let op = SbpOperator1D::from_parts(grid, self.p, self.h_diag.clone(), q, self.bp, self.kind)?;
        if op.norm_degree() != self.norm_degree {
            return Err(SbpError::InvalidArgument(format!(
                "stored norm degree {} but weights certify {}",
                self.norm_degree,
                op.norm_degree()
            )));
        }
        Ok(op)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
