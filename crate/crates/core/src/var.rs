//! Equation-wise OLS estimation of VAR(p) models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{symmetrize, to_rows, to_vec};
use crate::panel::StandardizedPanel;

/// Relative singular-value threshold below which a design is rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// An estimated VAR(p): `y_t = c + sum_l Phi_l y_{t-l} + e_t`.
#[derive(Debug, Clone)]
pub struct VarFit {
    pub intercept: DVector<f64>,
    /// `Phi_1 .. Phi_p`.
    pub phi: Vec<DMatrix<f64>>,
    /// Residuals for `t = p+1..T`, one row per time point.
    pub residuals: DMatrix<f64>,
    /// `(1/(T-p)) sum_t e_t e_t'`.
    pub sigma: DMatrix<f64>,
    pub p_lag: usize,
    pub t_len: usize,
    /// Unconditional mean `(I - sum_l Phi_l)^{-1} c`; `None` when that matrix is singular.
    pub mu: Option<DVector<f64>>,
}

/// JSON layout of a [`VarFit`]; arrays are row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VarFitDocument {
    pub p: usize,
    pub c: Vec<f64>,
    pub phi: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub t_len: usize,
}

impl VarFit {
    pub fn m_dim(&self) -> usize {
        self.intercept.len()
    }

    pub fn document(&self) -> VarFitDocument {
        VarFitDocument {
            p: self.p_lag,
            c: to_vec(&self.intercept),
            phi: self.phi.iter().map(to_rows).collect(),
            sigma: to_rows(&self.sigma),
            mu: self.mu.as_ref().map(to_vec),
            t_len: self.t_len,
        }
    }

    pub fn mean(&self) -> Result<&DVector<f64>> {
        self.mu.as_ref().ok_or_else(|| {
            Error::Singular("I - sum(Phi) is not invertible; unconditional mean undefined".into())
        })
    }
}

/// Fits a VAR(p) with intercept to a standardized panel.
pub fn fit_var(panel: &StandardizedPanel, p: usize) -> Result<VarFit> {
    let fit = estimate_var(panel.observations(), p)?;
    let radius = companion_spectral_radius(&fit);
    if radius >= 1.0 {
        tracing::warn!(radius, "estimated VAR is not stationary (companion radius >= 1)");
    }
    Ok(fit)
}

pub(crate) fn check_sample_size(t_len: usize, m: usize, p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidArgument("lag order p must be at least 1".into()));
    }
    if t_len <= m * p + 1 {
        return Err(Error::TooFewObservations(format!(
            "T = {t_len} but a VAR({p}) in {m} variables needs T > {}",
            m * p + 1
        )));
    }
    Ok(())
}

/// Regressor row `[1, y_{t-1}', .., y_{t-p}']` for time index `t` (0-based, `t >= p`).
pub(crate) fn fill_design_row(y: &DMatrix<f64>, t: usize, p: usize, out: &mut [f64]) {
    let m = y.ncols();
    out[0] = 1.0;
    for l in 1..=p {
        for j in 0..m {
            out[1 + (l - 1) * m + j] = y[(t - l, j)];
        }
    }
}

/// Splits a `(1 + m p) x m` coefficient block into intercept and lag matrices.
pub(crate) fn unpack_coefficients(b: &DMatrix<f64>, m: usize, p: usize) -> (DVector<f64>, Vec<DMatrix<f64>>) {
    let intercept = b.row(0).transpose();
    let phi = (1..=p)
        .map(|l| DMatrix::from_fn(m, m, |i, j| b[(1 + (l - 1) * m + j, i)]))
        .collect();
    (intercept, phi)
}

pub(crate) fn unconditional_mean(intercept: &DVector<f64>, phi: &[DMatrix<f64>]) -> Option<DVector<f64>> {
    let m = intercept.len();
    let mut a = DMatrix::identity(m, m);
    for f in phi {
        a -= f;
    }
    let lu = a.lu();
    // LU solve does not flag near-singularity; check the pivots ourselves
    let u = lu.u();
    let scale = u.amax().max(1.0);
    if (0..m).any(|i| u[(i, i)].abs() <= 1e-12 * scale) {
        return None;
    }
    lu.solve(intercept)
}

/// OLS estimation on an arbitrary `T x m` data matrix.
pub fn estimate_var(y: &DMatrix<f64>, p: usize) -> Result<VarFit> {
    let (t_len, m) = y.shape();
    check_sample_size(t_len, m, p)?;
    let n = t_len - p;
    let k = 1 + m * p;

    let mut x = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    for r in 0..n {
        fill_design_row(y, r + p, p, &mut row);
        for (c, v) in row.iter().enumerate() {
            x[(r, c)] = *v;
        }
    }
    let target = y.rows(p, n).into_owned();

    let qr = x.clone().qr();
    let r_factor = qr.r();
    let sv = r_factor.singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    if !(smallest > RANK_TOLERANCE * largest) {
        return Err(Error::RankDeficient { smallest, largest });
    }
    let qty = qr.q().tr_mul(&target);
    let b = r_factor
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { smallest, largest })?;

    let residuals = &target - &x * &b;
    let mut sigma = residuals.tr_mul(&residuals) / n as f64;
    symmetrize(&mut sigma);
    let (intercept, phi) = unpack_coefficients(&b, m, p);
    let mu = unconditional_mean(&intercept, &phi);

    Ok(VarFit {
        intercept,
        phi,
        residuals,
        sigma,
        p_lag: p,
        t_len,
        mu,
    })
}

/// The `mp x mp` companion matrix of `Phi_1 .. Phi_p`.
pub fn companion_matrix(phi: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = phi.len();
    let m = phi.first().map_or(0, |f| f.nrows());
    let mut c = DMatrix::zeros(m * p, m * p);
    for (l, f) in phi.iter().enumerate() {
        c.view_mut((0, l * m), (m, m)).copy_from(f);
    }
    for i in m..m * p {
        c[(i, i - m)] = 1.0;
    }
    c
}

/// Largest eigenvalue modulus of the companion matrix of `phi`.
pub fn spectral_radius(phi: &[DMatrix<f64>]) -> f64 {
    let c = companion_matrix(phi);
    if c.nrows() == 0 {
        return 0.0;
    }
    c.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn companion_spectral_radius(fit: &VarFit) -> f64 {
    spectral_radius(&fit.phi)
}

/// `c + sum_l Phi_l y_{S+1-l}` where row `l-1` of `recent` holds `y_{S+1-l}`.
pub fn one_step_mean(fit: &VarFit, recent: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = fit.m_dim();
    if recent.nrows() != fit.p_lag || recent.ncols() != m {
        return Err(Error::Dimension(format!(
            "recent history is {}x{}, expected {}x{m}",
            recent.nrows(),
            recent.ncols(),
            fit.p_lag
        )));
    }
    let mut out = fit.intercept.clone();
    for (l, f) in fit.phi.iter().enumerate() {
        out += f * recent.row(l).transpose();
    }
    Ok(out)
}
