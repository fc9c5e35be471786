//! Structural shock identification.
//!
//! Reduced-form errors map to orthogonal shocks through `e_t = P xi_t` with
//! `Sigma = P P'`. `P` is either the lower-triangular Cholesky factor of the
//! residual covariance or a user-supplied square root.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{asymmetry, max_abs_diff};

/// Pivots must exceed this multiple of the largest diagonal entry of `Sigma`.
pub const PIVOT_TOLERANCE: f64 = 1e-12;
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Default reconstruction tolerance for user-supplied maps.
pub const DEFAULT_USER_MAP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockMapKind {
    Cholesky,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShockMap {
    pub p_matrix: DMatrix<f64>,
    pub kind: ShockMapKind,
}

/// Lower-triangular `P` with `P P' = Sigma`, computed column by column:
///
/// `P_jj = sqrt(s_jj - sum_{k<j} P_jk^2)`,
/// `P_ij = (s_ij - sum_{k<j} P_ik P_jk) / P_jj` for `i > j`.
pub fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<ShockMap> {
    let m = sigma.nrows();
    if sigma.ncols() != m {
        return Err(Error::Dimension(format!(
            "covariance is {}x{}, not square",
            m,
            sigma.ncols()
        )));
    }
    let scale = sigma.diagonal().amax();
    if asymmetry(sigma) > SYMMETRY_TOLERANCE * scale.max(1.0) {
        return Err(Error::InvalidArgument("covariance matrix is not symmetric".into()));
    }
    let threshold = PIVOT_TOLERANCE * scale;
    let mut p = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut pivot = sigma[(j, j)];
        for k in 0..j {
            pivot -= p[(j, k)] * p[(j, k)];
        }
        if !(pivot > threshold) {
            return Err(Error::NotPositiveDefinite { pivot: j + 1 });
        }
        let pjj = pivot.sqrt();
        p[(j, j)] = pjj;
        for i in j + 1..m {
            let mut v = sigma[(i, j)];
            for k in 0..j {
                v -= p[(i, k)] * p[(j, k)];
            }
            p[(i, j)] = v / pjj;
        }
    }
    Ok(ShockMap {
        p_matrix: p,
        kind: ShockMapKind::Cholesky,
    })
}

/// Accepts any invertible `P` with `max |P P' - Sigma| <= tol`.
pub fn validate_user_map(p_matrix: &DMatrix<f64>, sigma: &DMatrix<f64>, tol: f64) -> Result<ShockMap> {
    if p_matrix.shape() != sigma.shape() || !p_matrix.is_square() {
        return Err(Error::Dimension(format!(
            "P is {}x{}, Sigma is {}x{}",
            p_matrix.nrows(),
            p_matrix.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let recon = p_matrix * p_matrix.transpose();
    let diff = &recon - sigma;
    let (mut worst, mut at) = (0.0f64, (0, 0));
    for i in 0..diff.nrows() {
        for j in 0..diff.ncols() {
            if diff[(i, j)].abs() > worst {
                worst = diff[(i, j)].abs();
                at = (i, j);
            }
        }
    }
    if !(worst <= tol) {
        return Err(Error::InvalidArgument(format!(
            "P P' does not reproduce Sigma: worst entry ({}, {}) off by {worst:.3e} (tolerance {tol:.1e})",
            at.0 + 1,
            at.1 + 1
        )));
    }
    let sv = p_matrix.clone().singular_values();
    if !(sv.min() > 1e-12 * sv.max()) {
        return Err(Error::Singular("user-supplied P is not invertible".into()));
    }
    debug_assert!(max_abs_diff(&recon, sigma) <= tol);
    Ok(ShockMap {
        p_matrix: p_matrix.clone(),
        kind: ShockMapKind::UserSupplied,
    })
}

fn is_lower_triangular(p: &DMatrix<f64>) -> bool {
    (0..p.nrows()).all(|i| (i + 1..p.ncols()).all(|j| p[(i, j)] == 0.0))
}

/// `xi = P^{-1} e`.
pub fn recover_shocks(map: &ShockMap, residual: &DVector<f64>) -> Result<DVector<f64>> {
    let p = &map.p_matrix;
    if residual.len() != p.nrows() {
        return Err(Error::Dimension(format!(
            "residual has {} entries, P is {}x{}",
            residual.len(),
            p.nrows(),
            p.ncols()
        )));
    }
    if map.kind == ShockMapKind::Cholesky || is_lower_triangular(p) {
        let m = p.nrows();
        let mut xi = DVector::zeros(m);
        for i in 0..m {
            if p[(i, i)] == 0.0 {
                return Err(Error::Singular(format!("zero diagonal in P at {}", i + 1)));
            }
            let mut v = residual[i];
            for k in 0..i {
                v -= p[(i, k)] * xi[k];
            }
            xi[i] = v / p[(i, i)];
        }
        Ok(xi)
    } else {
        p.clone()
            .lu()
            .solve(residual)
            .ok_or_else(|| Error::Singular("P is not invertible".into()))
    }
}

/// Recovers shocks for every row of `residuals` (one time point per row).
pub fn recover_shock_rows(map: &ShockMap, residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(residuals.nrows(), residuals.ncols());
    for r in 0..residuals.nrows() {
        let xi = recover_shocks(map, &residuals.row(r).transpose())?;
        out.set_row(r, &xi.transpose());
    }
    Ok(out)
}
