//! Forecast error variance decompositions.
//!
//! Orthogonal shocks (FEVD): `phi2_ij = sum_{h<H} ((Psi_h P)_ij)^2` and
//! `theta_ij = phi2_ij / sum_l phi2_il`.
//!
//! Correlated shocks (GFEVD): `psi2_ij = s_jj^{-1} sum_{h<H} ((Psi_h Sigma)_ij)^2`
//! and `vartheta_ij = psi2_ij / sum_{h<H} (Psi_h Sigma Psi_h')_ii`. GFEVD rows
//! do not sum to one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shock::ShockMap;
use crate::vma::VmaSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompositionKind {
    Fevd,
    Gfevd,
}

impl std::fmt::Display for DecompositionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecompositionKind::Fevd => "fevd",
            DecompositionKind::Gfevd => "gfevd",
        })
    }
}

impl std::str::FromStr for DecompositionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fevd" => Ok(DecompositionKind::Fevd),
            "gfevd" => Ok(DecompositionKind::Gfevd),
            other => Err(Error::InvalidArgument(format!(
                "unknown decomposition kind {other:?} (expected fevd or gfevd)"
            ))),
        }
    }
}

/// Nonnegative `m x m` variance contributions (`phi2` or `psi2`).
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix {
    pub values: DMatrix<f64>,
    pub kind: DecompositionKind,
    pub horizon: usize,
}

impl ContributionMatrix {
    pub fn m_dim(&self) -> usize {
        self.values.nrows()
    }
}

/// Normalized shares (`theta` or `vartheta`).
#[derive(Debug, Clone, PartialEq)]
pub struct FevdTable {
    pub shares: DMatrix<f64>,
    pub kind: DecompositionKind,
    pub horizon: usize,
}

impl FevdTable {
    /// Wraps externally supplied shares (fractions, not percent).
    pub fn from_shares(shares: DMatrix<f64>, kind: DecompositionKind, horizon: usize) -> Result<Self> {
        if !shares.is_square() {
            return Err(Error::Dimension("share matrix must be square".into()));
        }
        if shares.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("shares must be finite and nonnegative".into()));
        }
        Ok(Self { shares, kind, horizon })
    }

    pub fn m_dim(&self) -> usize {
        self.shares.nrows()
    }
}

/// Per-horizon impulse responses and the scale applied to raw shocks.
///
/// For orthogonal shocks the responses are `Psi_h P` and the shocks are the
/// recovered `xi`. For generalized responses they are
/// `Psi_h Sigma / sqrt(s_jj)` (column `j`) and the raw residual `e_j` enters
/// scaled by `1 / sqrt(s_jj)`.
#[derive(Debug, Clone)]
pub struct ImpulseResponses {
    pub kind: DecompositionKind,
    pub responses: Vec<DMatrix<f64>>,
    pub shock_scale: DVector<f64>,
}

impl ImpulseResponses {
    pub fn orthogonal(vma: &VmaSequence, map: &ShockMap) -> Result<Self> {
        let m = vma.m_dim();
        if map.p_matrix.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "VMA is {m}-dimensional, P is {}x{}",
                map.p_matrix.nrows(),
                map.p_matrix.ncols()
            )));
        }
        let responses = vma.psi.iter().map(|psi| psi * &map.p_matrix).collect();
        Ok(Self {
            kind: DecompositionKind::Fevd,
            responses,
            shock_scale: DVector::from_element(m, 1.0),
        })
    }

    pub fn generalized(vma: &VmaSequence, sigma: &DMatrix<f64>) -> Result<Self> {
        let m = vma.m_dim();
        if sigma.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "VMA is {m}-dimensional, Sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let mut inv_sd = DVector::zeros(m);
        for j in 0..m {
            let s = sigma[(j, j)];
            if !(s > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "Sigma has nonpositive variance {s} for series {}",
                    j + 1
                )));
            }
            inv_sd[j] = 1.0 / s.sqrt();
        }
        let scaled = DMatrix::from_fn(m, m, |i, j| sigma[(i, j)] * inv_sd[j]);
        let responses = vma.psi.iter().map(|psi| psi * &scaled).collect();
        Ok(Self {
            kind: DecompositionKind::Gfevd,
            responses,
            shock_scale: inv_sd,
        })
    }

    pub fn horizon(&self) -> usize {
        self.responses.len()
    }

    pub fn m_dim(&self) -> usize {
        self.shock_scale.len()
    }

    /// Sum over horizons of squared responses.
    pub fn contributions(&self) -> ContributionMatrix {
        let m = self.m_dim();
        let mut values = DMatrix::zeros(m, m);
        for r in &self.responses {
            values.zip_apply(r, |acc, x| *acc += x * x);
        }
        ContributionMatrix {
            values,
            kind: self.kind,
            horizon: self.horizon(),
        }
    }
}

pub fn fevd_contributions(vma: &VmaSequence, map: &ShockMap) -> Result<ContributionMatrix> {
    Ok(ImpulseResponses::orthogonal(vma, map)?.contributions())
}

pub fn gfevd_contributions(vma: &VmaSequence, sigma: &DMatrix<f64>) -> Result<ContributionMatrix> {
    Ok(ImpulseResponses::generalized(vma, sigma)?.contributions())
}

/// How the H-step forecast error variance enters the share denominator.
///
/// `Unsquared` is `sum_h (Psi_h Sigma Psi_h')_ii`, the forecast error variance.
/// `SquaredAsPrinted` squares each horizon term and exists only for auditing
/// the alternative reading; it does not give rows summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenominatorForm {
    #[default]
    Unsquared,
    SquaredAsPrinted,
}

/// `d_i = sum_{h<H} (Psi_h Sigma Psi_h')_ii` (or its squared-term variant).
pub fn forecast_error_variances(
    vma: &VmaSequence,
    sigma: &DMatrix<f64>,
    form: DenominatorForm,
) -> Result<DVector<f64>> {
    let m = vma.m_dim();
    if sigma.shape() != (m, m) {
        return Err(Error::Dimension("Sigma does not match the VMA dimension".into()));
    }
    let mut d = DVector::zeros(m);
    for psi in &vma.psi {
        let a = psi * sigma;
        for i in 0..m {
            let term = a.row(i).dot(&psi.row(i));
            d[i] += match form {
                DenominatorForm::Unsquared => term,
                DenominatorForm::SquaredAsPrinted => term * term,
            };
        }
    }
    Ok(d)
}

fn divide_rows(values: &DMatrix<f64>, denominators: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut shares = values.clone();
    for i in 0..values.nrows() {
        let d = denominators[i];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "degenerate forecast error variance {d} for series {}",
                i + 1
            )));
        }
        shares.row_mut(i).unscale_mut(d);
    }
    Ok(shares)
}

pub fn fevd_table(contrib: &ContributionMatrix) -> Result<FevdTable> {
    if contrib.kind != DecompositionKind::Fevd {
        return Err(Error::InvalidArgument("fevd_table needs FEVD contributions".into()));
    }
    let sums = DVector::from_fn(contrib.m_dim(), |i, _| contrib.values.row(i).sum());
    Ok(FevdTable {
        shares: divide_rows(&contrib.values, &sums)?,
        kind: DecompositionKind::Fevd,
        horizon: contrib.horizon,
    })
}

pub fn gfevd_table(contrib: &ContributionMatrix, vma: &VmaSequence, sigma: &DMatrix<f64>) -> Result<FevdTable> {
    gfevd_table_with(contrib, vma, sigma, DenominatorForm::Unsquared)
}

pub fn gfevd_table_with(
    contrib: &ContributionMatrix,
    vma: &VmaSequence,
    sigma: &DMatrix<f64>,
    form: DenominatorForm,
) -> Result<FevdTable> {
    if contrib.kind != DecompositionKind::Gfevd {
        return Err(Error::InvalidArgument("gfevd_table needs GFEVD contributions".into()));
    }
    let d = forecast_error_variances(vma, sigma, form)?;
    Ok(FevdTable {
        shares: divide_rows(&contrib.values, &d)?,
        kind: DecompositionKind::Gfevd,
        horizon: contrib.horizon,
    })
}

/// FEVD shares against an explicit denominator form, for auditing.
pub fn fevd_table_with(
    contrib: &ContributionMatrix,
    vma: &VmaSequence,
    sigma: &DMatrix<f64>,
    form: DenominatorForm,
) -> Result<FevdTable> {
    if form == DenominatorForm::Unsquared {
        return fevd_table(contrib);
    }
    let d = forecast_error_variances(vma, sigma, form)?;
    Ok(FevdTable {
        shares: divide_rows(&contrib.values, &d)?,
        kind: DecompositionKind::Fevd,
        horizon: contrib.horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::max_abs_diff;
    use crate::shock::{cholesky_factor, ShockMapKind};
    use crate::vma::vma_coefficients;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_map(m: usize) -> ShockMap {
        ShockMap { p_matrix: DMatrix::identity(m, m), kind: ShockMapKind::Cholesky }
    }

    fn random_system(rng: &mut ChaCha8Rng, m: usize, p: usize) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let phi = (0..p)
            .map(|_| DMatrix::from_fn(m, m, |_, _| (rng.random::<f64>() - 0.5) * 0.6))
            .collect();
        let a = DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5);
        (phi, &a * a.transpose() + DMatrix::identity(m, m) * 0.2)
    }

    #[test]
    fn identity_system() {
        let vma = vma_coefficients(&[DMatrix::zeros(3, 3)], 1).unwrap();
        let c = fevd_contributions(&vma, &identity_map(3)).unwrap();
        assert_eq!(c.values, DMatrix::identity(3, 3));
        assert_eq!(fevd_table(&c).unwrap().shares, DMatrix::identity(3, 3));
        let g = gfevd_contributions(&vma, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(g.values, DMatrix::identity(3, 3));
        let t = gfevd_table(&g, &vma, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(t.shares, DMatrix::identity(3, 3));
    }

    #[test]
    fn disconnected_system_has_zero_off_diagonal() {
        let phi = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.3, 0.8]));
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let vma = vma_coefficients(&[phi], 6).unwrap();
        let c = fevd_contributions(&vma, &cholesky_factor(&sigma).unwrap()).unwrap();
        for i in 0..3 {
            assert!(c.values[(i, i)] > 0.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(c.values[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn row_of_three_and_one() {
        let c = ContributionMatrix {
            values: DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 0.5, 0.5]),
            kind: DecompositionKind::Fevd,
            horizon: 1,
        };
        let t = fevd_table(&c).unwrap();
        assert_eq!(t.shares[(0, 0)], 0.75);
        assert_eq!(t.shares[(0, 1)], 0.25);
        let zero = ContributionMatrix { values: DMatrix::zeros(2, 2), ..c };
        assert!(fevd_table(&zero).is_err());
    }

    #[test]
    fn gfevd_correlated_pair() {
        let rho = 0.5;
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let vma = vma_coefficients(&[DMatrix::zeros(2, 2)], 1).unwrap();
        let g = gfevd_contributions(&vma, &sigma).unwrap();
        assert_abs_diff_eq!(g.values[(0, 1)], 0.25, epsilon = 1e-15);
        let t = gfevd_table(&g, &vma, &sigma).unwrap();
        assert_abs_diff_eq!(t.shares[(0, 1)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(t.shares[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.shares.row(0).sum(), 1.25, epsilon = 1e-15);
    }

    #[test]
    fn gfevd_rejects_nonpositive_variance() {
        let vma = vma_coefficients(&[DMatrix::zeros(2, 2)], 1).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(gfevd_contributions(&vma, &sigma).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let vma = vma_coefficients(&[DMatrix::zeros(2, 2)], 2).unwrap();
        assert!(fevd_contributions(&vma, &identity_map(3)).is_err());
    }

    #[test]
    fn squared_denominator_variant_differs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (phi, sigma) = random_system(&mut rng, 3, 1);
        let vma = vma_coefficients(&phi, 5).unwrap();
        let c = fevd_contributions(&vma, &cholesky_factor(&sigma).unwrap()).unwrap();
        let plain = fevd_table_with(&c, &vma, &sigma, DenominatorForm::Unsquared).unwrap();
        let audit = fevd_table_with(&c, &vma, &sigma, DenominatorForm::SquaredAsPrinted).unwrap();
        assert!(max_abs_diff(&plain.shares, &audit.shares) > 1e-3);
        for i in 0..3 {
            assert_abs_diff_eq!(plain.shares.row(i).sum(), 1.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn fevd_rows_equal_forecast_error_variance(seed in any::<u64>(), m in 2usize..5, p in 1usize..3, h in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (phi, sigma) = random_system(&mut rng, m, p);
            let vma = vma_coefficients(&phi, h).unwrap();
            let c = fevd_contributions(&vma, &cholesky_factor(&sigma).unwrap()).unwrap();
            let d = forecast_error_variances(&vma, &sigma, DenominatorForm::Unsquared).unwrap();
            for i in 0..m {
                prop_assert!((c.values.row(i).sum() - d[i]).abs() <= 1e-10 * d[i].max(1.0));
            }
            let t = fevd_table(&c).unwrap();
            for i in 0..m {
                prop_assert!((t.shares.row(i).sum() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn zero_pattern_of_shares_matches_contributions(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 4;
            let phi = DMatrix::from_fn(m, m, |i, j| if (i < 2) == (j < 2) { rng.random::<f64>() * 0.4 } else { 0.0 });
            let sigma = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else if (i < 2) == (j < 2) { 0.3 } else { 0.0 });
            let vma = vma_coefficients(&[phi], 4).unwrap();
            let c = fevd_contributions(&vma, &cholesky_factor(&sigma).unwrap()).unwrap();
            let t = fevd_table(&c).unwrap();
            let g = gfevd_contributions(&vma, &sigma).unwrap();
            let gt = gfevd_table(&g, &vma, &sigma).unwrap();
            for i in 0..m { for j in 0..m {
                prop_assert_eq!(t.shares[(i, j)] == 0.0, c.values[(i, j)] == 0.0);
                prop_assert_eq!(gt.shares[(i, j)] == 0.0, g.values[(i, j)] == 0.0);
            }}
        }

        #[test]
        fn contributions_grow_with_horizon(seed in any::<u64>(), h in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (phi, sigma) = random_system(&mut rng, 3, 2);
            let map = cholesky_factor(&sigma).unwrap();
            let a = fevd_contributions(&vma_coefficients(&phi, h).unwrap(), &map).unwrap();
            let b = fevd_contributions(&vma_coefficients(&phi, h + 1).unwrap(), &map).unwrap();
            for (x, y) in a.values.iter().zip(b.values.iter()) { prop_assert!(y >= x); }
        }

        #[test]
        fn diagonal_sigma_gfevd_equals_fevd(seed in any::<u64>(), h in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (phi, _) = random_system(&mut rng, 4, 2);
            let sigma = DMatrix::from_diagonal(&DVector::from_fn(4, |_, _| 0.2 + rng.random::<f64>()));
            let vma = vma_coefficients(&phi, h).unwrap();
            let f = fevd_contributions(&vma, &cholesky_factor(&sigma).unwrap()).unwrap();
            let g = gfevd_contributions(&vma, &sigma).unwrap();
            prop_assert!(max_abs_diff(&f.values, &g.values) <= 1e-12);
            let gt = gfevd_table(&g, &vma, &sigma).unwrap();
            for i in 0..4 { prop_assert!((gt.shares.row(i).sum() - 1.0).abs() <= 1e-12); }
        }
    }
}
