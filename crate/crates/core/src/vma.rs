//! Truncated moving-average representation of a VAR.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::to_rows;

/// `Psi_0 .. Psi_{H-1}` with `Psi_0 = I` and
/// `Psi_l = Phi_1 Psi_{l-1} + .. + Phi_p Psi_{l-p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VmaSequence {
    pub psi: Vec<DMatrix<f64>>,
}

impl VmaSequence {
    pub fn horizon(&self) -> usize {
        self.psi.len()
    }

    pub fn m_dim(&self) -> usize {
        self.psi[0].nrows()
    }
}

#[derive(Serialize)]
struct VmaDocument {
    horizon: usize,
    psi: Vec<Vec<Vec<f64>>>,
}

impl VmaSequence {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VmaDocument {
            horizon: self.horizon(),
            psi: self.psi.iter().map(to_rows).collect(),
        })?)
    }
}

pub fn vma_coefficients(phi: &[DMatrix<f64>], horizon: usize) -> Result<VmaSequence> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon H must be at least 1".into()));
    }
    let m = phi
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one lag matrix".into()))?
        .nrows();
    if phi.iter().any(|f| f.shape() != (m, m)) {
        return Err(Error::Dimension("lag matrices must all be m x m".into()));
    }
    let mut psi = Vec::with_capacity(horizon);
    psi.push(DMatrix::identity(m, m));
    for l in 1..horizon {
        let mut next = DMatrix::zeros(m, m);
        for (k, f) in phi.iter().enumerate().take(l) {
            next.gemm(1.0, f, &psi[l - k - 1], 1.0);
        }
        psi.push(next);
    }
    Ok(VmaSequence { psi })
}
