//! Selection accuracy against a known network.

use serde::{Deserialize, Serialize};

use crate::decomposition::{ContributionMatrix, DecompositionKind};
use crate::error::{Error, Result};
use crate::sparsify::{EdgeMask, SparseSelection};

use super::dgp::TrueModel;

/// Correct discovery rates. `cdr1` is `None` when the true network is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdrMetrics {
    pub cdr1: Option<f64>,
    pub cdr0: f64,
    pub cdra: f64,
}

pub fn cdr_metrics(est: &SparseSelection, truth: &TrueModel) -> Result<CdrMetrics> {
    cdr_from_masks(&est.mask, &truth.mask())
}

pub fn cdr_from_masks(est: &EdgeMask, truth: &EdgeMask) -> Result<CdrMetrics> {
    let m = truth.m_dim();
    if est.m_dim() != m {
        return Err(Error::Dimension(format!("estimate is {}-dimensional, truth {m}", est.m_dim())));
    }
    let (mut active, mut hit1, mut hit0) = (0usize, 0usize, 0usize);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            match (truth.get(i, j), est.get(i, j)) {
                (true, e) => {
                    active += 1;
                    hit1 += usize::from(e);
                }
                (false, e) => hit0 += usize::from(!e),
            }
        }
    }
    let inactive = m * m - m - active;
    Ok(CdrMetrics {
        cdr1: (active > 0).then(|| hit1 as f64 / active as f64),
        cdr0: if inactive > 0 { hit0 as f64 / inactive as f64 } else { 1.0 },
        cdra: (hit1 + hit0) as f64 / (m * m - m) as f64,
    })
}

/// Share of pruned off-diagonal cells and the variance they carried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityLoss {
    pub sp: f64,
    pub vl_a: f64,
    pub vl_o: f64,
}

/// `truth_contrib` holds the population `phi2` at the study's horizon.
/// Variance losses only make sense for orthogonal shocks.
pub fn sparsity_loss_metrics(est: &SparseSelection, truth_contrib: &ContributionMatrix) -> Result<SparsityLoss> {
    if truth_contrib.kind != DecompositionKind::Fevd || est.masked_contrib.kind != DecompositionKind::Fevd {
        return Err(Error::InvalidArgument(
            "variance-loss measures are defined for the orthogonal (fevd) decomposition only".into(),
        ));
    }
    sparsity_loss_from_mask(&est.mask, truth_contrib)
}

pub fn sparsity_loss_from_mask(mask: &EdgeMask, truth_contrib: &ContributionMatrix) -> Result<SparsityLoss> {
    let m = truth_contrib.m_dim();
    if mask.m_dim() != m {
        return Err(Error::Dimension(format!("mask is {}-dimensional, truth {m}", mask.m_dim())));
    }
    let v = &truth_contrib.values;
    let (mut pruned, mut lost, mut off, mut all) = (0usize, 0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            all += v[(i, j)];
            if i == j {
                continue;
            }
            off += v[(i, j)];
            if !mask.get(i, j) {
                pruned += 1;
                lost += v[(i, j)];
            }
        }
    }
    Ok(SparsityLoss {
        sp: pruned as f64 / (m * m - m) as f64,
        vl_a: if all > 0.0 { lost / all } else { 0.0 },
        vl_o: if off > 0.0 { lost / off } else { 0.0 },
    })
}
