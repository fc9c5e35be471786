//! Active-set selection by information criterion.
//!
//! Off-diagonal contributions are ranked in descending order and
//!
//! `IC(k) = 2T log(m - sum_{l<=k} c_(l)) + k lambda`, `k = 1..m^2-m`,
//!
//! is minimized over `k`. The `k` largest off-diagonal entries stay, the rest
//! are zeroed. Diagonal entries are never candidates for removal.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decomposition::{ContributionMatrix, DecompositionKind};
use crate::error::{Error, Result};
use crate::matrix::to_rows;

/// Binary `m x m` edge indicator, row-major. Entry `(i, j)` marks that shocks
/// to series `j` contribute to series `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    m: usize,
    bits: Vec<bool>,
}

impl EdgeMask {
    /// Diagonal only: no cross-series edges.
    pub fn identity(m: usize) -> Self {
        let mut bits = vec![false; m * m];
        for i in 0..m {
            bits[i * m + i] = true;
        }
        Self { m, bits }
    }

    pub fn all_ones(m: usize) -> Self {
        Self { m, bits: vec![true; m * m] }
    }

    /// Identity plus the listed off-diagonal pairs.
    pub fn from_active(m: usize, active: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::identity(m);
        for &(i, j) in active {
            if i >= m || j >= m || i == j {
                return Err(Error::InvalidArgument(format!(
                    "invalid off-diagonal pair ({i}, {j}) for m = {m}"
                )));
            }
            mask.bits[i * m + j] = true;
        }
        Ok(mask)
    }

    /// From a 0/1 matrix; the diagonal is forced to one.
    pub fn from_matrix(values: &DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension("mask must be square".into()));
        }
        let m = values.nrows();
        let mut mask = Self::identity(m);
        for i in 0..m {
            for j in 0..m {
                let v = values[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "mask entry ({}, {}) is {v}, expected 0 or 1",
                        i + 1,
                        j + 1
                    )));
                }
                if i != j {
                    mask.bits[i * m + j] = v == 1.0;
                }
            }
        }
        Ok(mask)
    }

    pub fn m_dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.m + j]
    }

    /// Off-diagonal ones in row-major order.
    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        let m = self.m;
        (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.active_pairs().len()
    }

    /// Zeroes every entry where the mask is off.
    pub fn apply(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| if self.get(i, j) { values[(i, j)] } else { 0.0 })
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.m)
            .map(|i| (0..self.m).map(|j| u8::from(self.get(i, j))).collect())
            .collect()
    }
}

/// Which constant multiplies the log fit term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTerm {
    /// `2T log(..)` for both decompositions.
    #[default]
    TimesSampleSize,
    /// `2T log(..)` for FEVD but a bare `2 log(..)` for GFEVD. Audit only:
    /// without the `T` factor the penalty swamps the fit for any usable lambda.
    AsPrinted,
}

impl FitTerm {
    fn multiplier(self, kind: DecompositionKind, t_len: usize) -> f64 {
        match (self, kind) {
            (FitTerm::AsPrinted, DecompositionKind::Gfevd) => 2.0,
            _ => 2.0 * t_len as f64,
        }
    }
}

/// Default penalty choices when no tuning is run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    #[default]
    LogT,
    LogTOverM,
}

impl LambdaRule {
    pub fn value(self, t_len: usize, m: usize) -> f64 {
        let log_t = (t_len as f64).ln();
        match self {
            LambdaRule::LogT => log_t,
            LambdaRule::LogTOverM => log_t / m as f64,
        }
    }
}

/// Off-diagonal contributions sorted in descending order.
///
/// Ties keep row-major order: smaller row first, then smaller column.
#[derive(Debug, Clone)]
pub struct RankedContributions {
    pub m: usize,
    pub kind: DecompositionKind,
    pub positions: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl RankedContributions {
    pub fn new(contrib: &ContributionMatrix) -> Self {
        let m = contrib.m_dim();
        let mut entries: Vec<((usize, usize), f64)> = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| ((i, j), contrib.values[(i, j)]))
            .collect();
        // stable: equal values keep their row-major order
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (positions, values) = entries.into_iter().unzip();
        Self {
            m,
            kind: contrib.kind,
            positions,
            values,
        }
    }

    pub fn candidate_count(&self) -> usize {
        self.values.len()
    }

    /// `IC(k)` for `k = 1..m^2-m`. Once `m - sum` is nonpositive every later
    /// value is `+inf`.
    pub fn ic_values(&self, t_len: usize, lambda: f64, fit_term: FitTerm) -> Vec<f64> {
        let scale = fit_term.multiplier(self.kind, t_len);
        let mut out = Vec::with_capacity(self.values.len());
        let mut explained = 0.0;
        let mut broken = false;
        for (idx, v) in self.values.iter().enumerate() {
            explained += v;
            let base = self.m as f64 - explained;
            if broken || !(base > 0.0) {
                broken = true;
                out.push(f64::INFINITY);
            } else {
                out.push(scale * base.ln() + (idx + 1) as f64 * lambda);
            }
        }
        out
    }

    /// Smallest minimizing `k` of the criterion.
    pub fn select(&self, t_len: usize, lambda: f64, fit_term: FitTerm) -> usize {
        argmin_first(&self.ic_values(t_len, lambda, fit_term))
    }

    pub fn mask(&self, k_hat: usize) -> EdgeMask {
        let mut mask = EdgeMask::identity(self.m);
        for &(i, j) in self.positions.iter().take(k_hat) {
            mask.bits[i * self.m + j] = true;
        }
        mask
    }
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (idx, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = idx;
        }
    }
    best + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcTrace {
    pub k_values: Vec<usize>,
    pub ic_values: Vec<f64>,
    pub lambda: f64,
    pub t_len: usize,
    pub kind: DecompositionKind,
    pub fit_term: FitTerm,
}

#[derive(Debug, Clone)]
pub struct SparseSelection {
    pub k_hat: usize,
    pub lambda: Option<f64>,
    pub mask: EdgeMask,
    pub masked_contrib: ContributionMatrix,
    /// `(row, column)` pairs, 0-based, in ranking order.
    pub active_set: Vec<(usize, usize)>,
    pub trace: Option<IcTrace>,
}

/// JSON layout of a selection. Indices are 0-based.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SelectionDocument {
    pub kind: DecompositionKind,
    pub horizon: usize,
    pub k_hat: usize,
    pub lambda: Option<f64>,
    pub active_set: Vec<[usize; 2]>,
    pub masked: Vec<Vec<f64>>,
    /// `IC(1..)`; `null` marks an undefined fit term.
    pub ic: Vec<Option<f64>>,
}

impl SparseSelection {
    pub fn document(&self) -> SelectionDocument {
        SelectionDocument {
            kind: self.masked_contrib.kind,
            horizon: self.masked_contrib.horizon,
            k_hat: self.k_hat,
            lambda: self.lambda,
            active_set: self.active_set.iter().map(|&(i, j)| [i, j]).collect(),
            masked: to_rows(&self.masked_contrib.values),
            ic: self
                .trace
                .as_ref()
                .map(|t| t.ic_values.iter().map(|v| v.is_finite().then_some(*v)).collect())
                .unwrap_or_default(),
        }
    }
}

fn check_ic_inputs(contrib: &ContributionMatrix, t_len: usize, lambda: f64) -> Result<()> {
    if contrib.m_dim() < 2 {
        return Err(Error::InvalidArgument("network selection needs m >= 2".into()));
    }
    if t_len < 2 {
        return Err(Error::InvalidArgument("sample size T must be at least 2".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("penalty lambda must be nonnegative, got {lambda}")));
    }
    Ok(())
}

pub fn ic_curve(contrib: &ContributionMatrix, t_len: usize, lambda: f64) -> Result<IcTrace> {
    ic_curve_with(contrib, t_len, lambda, FitTerm::default())
}

pub fn ic_curve_with(
    contrib: &ContributionMatrix,
    t_len: usize,
    lambda: f64,
    fit_term: FitTerm,
) -> Result<IcTrace> {
    check_ic_inputs(contrib, t_len, lambda)?;
    let ranked = RankedContributions::new(contrib);
    let ic_values = ranked.ic_values(t_len, lambda, fit_term);
    Ok(IcTrace {
        k_values: (1..=ic_values.len()).collect(),
        ic_values,
        lambda,
        t_len,
        kind: contrib.kind,
        fit_term,
    })
}

pub fn select_k(trace: &IcTrace) -> usize {
    argmin_first(&trace.ic_values)
}

pub fn apply_mask(contrib: &ContributionMatrix, k_hat: usize) -> Result<SparseSelection> {
    let m = contrib.m_dim();
    let max_k = m * m - m;
    if k_hat < 1 || k_hat > max_k {
        return Err(Error::InvalidArgument(format!(
            "k_hat = {k_hat} outside 1..={max_k}"
        )));
    }
    let ranked = RankedContributions::new(contrib);
    let mask = ranked.mask(k_hat);
    Ok(SparseSelection {
        k_hat,
        lambda: None,
        masked_contrib: ContributionMatrix {
            values: mask.apply(&contrib.values),
            kind: contrib.kind,
            horizon: contrib.horizon,
        },
        active_set: ranked.positions[..k_hat].to_vec(),
        mask,
        trace: None,
    })
}

/// `ic_curve`, `select_k` and `apply_mask` in sequence.
pub fn sparsify(contrib: &ContributionMatrix, t_len: usize, lambda: f64) -> Result<SparseSelection> {
    sparsify_with(contrib, t_len, lambda, FitTerm::default())
}

pub fn sparsify_with(
    contrib: &ContributionMatrix,
    t_len: usize,
    lambda: f64,
    fit_term: FitTerm,
) -> Result<SparseSelection> {
    let trace = ic_curve_with(contrib, t_len, lambda, fit_term)?;
    let k_hat = select_k(&trace);
    let mut selection = apply_mask(contrib, k_hat)?;
    selection.lambda = Some(lambda);
    selection.trace = Some(trace);
    Ok(selection)
}
