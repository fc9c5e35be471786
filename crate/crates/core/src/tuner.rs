//! Penalty tuning by rolling one-step pseudo-out-of-sample forecasts.
//!
//! Every window of `S = floor(alpha T)` consecutive observations is used to
//! fit the VAR, build the network for each candidate penalty, and forecast
//! the next observation from the retained edges only. The candidate with the
//! smallest mean squared forecast error wins.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{DecompositionKind, ImpulseResponses};
use crate::error::{Error, Result};
use crate::matrix::{symmetrize, to_rows};
use crate::panel::StandardizedPanel;
use crate::shock::{cholesky_factor, recover_shocks};
use crate::sparsify::{EdgeMask, FitTerm, RankedContributions};
use crate::var::{check_sample_size, estimate_var, fill_design_row, unconditional_mean, unpack_coefficients};
use crate::vma::vma_coefficients;

/// Windows per chunk. Each chunk rebuilds its cross-products from scratch, so
/// the result does not depend on how chunks are scheduled.
const CHUNK: usize = 64;

/// Cholesky pivot ratio of `X'X` below which a window is refitted by QR.
const GRAM_FALLBACK_RATIO: f64 = 1e-6;

/// Candidate penalties: raw values, or constants `c` with `lambda = c log T / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "values")]
pub enum LambdaGrid {
    Values(Vec<f64>),
    Constants(Vec<f64>),
}

impl LambdaGrid {
    /// Grids used in the simulation study.
    pub fn default_for(kind: DecompositionKind, horizon: usize) -> Self {
        let cs: Vec<f64> = match (kind, horizon) {
            (DecompositionKind::Fevd, 1) => (1..=6).map(|i| i as f64 / 10.0).collect(),
            (DecompositionKind::Fevd, _) => (1..=6).map(f64::from).collect(),
            (DecompositionKind::Gfevd, 1) => (2..=7).map(|i| i as f64 / 10.0).collect(),
            (DecompositionKind::Gfevd, _) => (2..=7).map(f64::from).collect(),
        };
        LambdaGrid::Constants(cs)
    }

    pub fn len(&self) -> usize {
        match self {
            LambdaGrid::Values(v) | LambdaGrid::Constants(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(constant, lambda)` pairs for a sample of length `t_len` in `m` series.
    pub fn resolve(&self, t_len: usize, m: usize) -> Vec<(Option<f64>, f64)> {
        match self {
            LambdaGrid::Values(v) => v.iter().map(|&l| (None, l)).collect(),
            LambdaGrid::Constants(cs) => {
                let unit = (t_len as f64).ln() / m as f64;
                cs.iter().map(|&c| (Some(c), c * unit)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    pub grid: LambdaGrid,
    pub train_frac: f64,
    pub horizon: usize,
    pub p_lag: usize,
    pub kind: DecompositionKind,
    #[serde(default)]
    pub fit_term: FitTerm,
}

impl TuningConfig {
    pub fn new(grid: LambdaGrid, train_frac: f64, horizon: usize, p_lag: usize, kind: DecompositionKind) -> Self {
        Self {
            grid,
            train_frac,
            horizon,
            p_lag,
            kind,
            fit_term: FitTerm::default(),
        }
    }

    /// Training size `S` for a sample of `t_len` observations.
    pub fn train_size(&self, t_len: usize) -> usize {
        (self.train_frac * t_len as f64).floor() as usize
    }

    pub fn validate(&self, t_len: usize, m: usize) -> Result<usize> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("candidate grid is empty".into()));
        }
        let resolved = self.grid.resolve(t_len, m);
        if let Some((_, bad)) = resolved.iter().find(|(_, l)| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidArgument(format!("candidate penalty {bad} is not a nonnegative number")));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "training fraction must lie in (0, 1), got {}",
                self.train_frac
            )));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("horizon H must be at least 1".into()));
        }
        let s = self.train_size(t_len);
        check_sample_size(s, m, self.p_lag).map_err(|e| match e {
            Error::TooFewObservations(msg) => Error::TooFewObservations(format!("training window: {msg}")),
            other => other,
        })?;
        if s >= t_len {
            return Err(Error::TooFewObservations(format!(
                "training size S = {s} leaves no validation observations out of T = {t_len}"
            )));
        }
        if self.horizon - 1 > s - self.p_lag {
            return Err(Error::TooFewObservations(format!(
                "H - 1 = {} lagged shocks needed but a window has only {} residuals",
                self.horizon - 1,
                s - self.p_lag
            )));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub constant: Option<f64>,
    pub lambda: f64,
    pub msfe: f64,
}

#[derive(Debug, Clone)]
pub struct TuningReport {
    pub kind: DecompositionKind,
    pub horizon: usize,
    pub p_lag: usize,
    pub train_size: usize,
    pub candidates: Vec<CandidateResult>,
    pub winner: usize,
    pub lambda_star: f64,
    /// `(T - S) x m` forecast errors of the winning candidate.
    pub forecast_errors: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TuningDocument {
    pub kind: DecompositionKind,
    pub horizon: usize,
    pub p: usize,
    pub train_size: usize,
    pub windows: usize,
    pub candidates: Vec<CandidateResult>,
    pub winner: usize,
    pub lambda_star: f64,
    pub constant_star: Option<f64>,
    pub forecast_errors: Vec<Vec<f64>>,
}

impl TuningReport {
    pub fn constant_star(&self) -> Option<f64> {
        self.candidates[self.winner].constant
    }

    pub fn document(&self) -> TuningDocument {
        TuningDocument {
            kind: self.kind,
            horizon: self.horizon,
            p: self.p_lag,
            train_size: self.train_size,
            windows: self.forecast_errors.nrows(),
            candidates: self.candidates.clone(),
            winner: self.winner,
            lambda_star: self.lambda_star,
            constant_star: self.constant_star(),
            forecast_errors: to_rows(&self.forecast_errors),
        }
    }

    /// One row per candidate: `index,constant,lambda,msfe`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "constant", "lambda", "msfe"])?;
        for (idx, c) in self.candidates.iter().enumerate() {
            w.write_record([
                idx.to_string(),
                c.constant.map(|v| v.to_string()).unwrap_or_default(),
                c.lambda.to_string(),
                c.msfe.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// One-step forecast from the retained edges.
///
/// `shock_history` is `H x m`: row 0 holds the contemporaneous shocks, row `h`
/// the shocks `h` periods earlier. For the orthogonal kind these are the
/// identified shocks; for the generalized kind, raw residuals (the response
/// scaling is applied here). The own contemporaneous shock never enters.
pub fn sparse_forecast(
    mean: &DVector<f64>,
    responses: &ImpulseResponses,
    mask: &EdgeMask,
    shock_history: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let m = responses.m_dim();
    let h_len = responses.horizon();
    if mean.len() != m || mask.m_dim() != m || shock_history.shape() != (h_len, m) {
        return Err(Error::Dimension(format!(
            "forecast needs mean of length {m}, {m}x{m} mask and {h_len}x{m} shock history"
        )));
    }
    let terms = forecast_terms(responses, shock_history);
    Ok(masked_forecast(mean, &terms, mask))
}

/// `terms[(i, j)]`: everything shock `j` contributes to the forecast of `i`.
fn forecast_terms(responses: &ImpulseResponses, shocks: &DMatrix<f64>) -> DMatrix<f64> {
    let m = responses.m_dim();
    let scale = &responses.shock_scale;
    DMatrix::from_fn(m, m, |i, j| {
        let mut acc = 0.0;
        for (h, r) in responses.responses.iter().enumerate() {
            if h == 0 && i == j {
                continue;
            }
            acc += r[(i, j)] * scale[j] * shocks[(h, j)];
        }
        acc
    })
}

fn masked_forecast(mean: &DVector<f64>, terms: &DMatrix<f64>, mask: &EdgeMask) -> DVector<f64> {
    let m = mean.len();
    DVector::from_fn(m, |i, _| {
        let mut y = mean[i];
        for j in 0..m {
            if mask.get(i, j) {
                y += terms[(i, j)];
            }
        }
        y
    })
}

/// Rolling cross-products `X'X`, `X'Y`, `Y'Y` over the VAR targets of a window.
struct RollingGram<'a> {
    y: &'a DMatrix<f64>,
    p: usize,
    xx: DMatrix<f64>,
    xy: DMatrix<f64>,
    yy: DMatrix<f64>,
    row: Vec<f64>,
}

impl<'a> RollingGram<'a> {
    fn new(y: &'a DMatrix<f64>, p: usize) -> Self {
        let m = y.ncols();
        let k = 1 + m * p;
        Self {
            y,
            p,
            xx: DMatrix::zeros(k, k),
            xy: DMatrix::zeros(k, m),
            yy: DMatrix::zeros(m, m),
            row: vec![0.0; k],
        }
    }

    /// Adds (`sign = 1`) or removes (`sign = -1`) target time `t`.
    fn update(&mut self, t: usize, sign: f64) {
        let m = self.y.ncols();
        fill_design_row(self.y, t, self.p, &mut self.row);
        let k = self.row.len();
        for a in 0..k {
            let xa = sign * self.row[a];
            for b in a..k {
                self.xx[(a, b)] += xa * self.row[b];
            }
            for j in 0..m {
                self.xy[(a, j)] += xa * self.y[(t, j)];
            }
        }
        for i in 0..m {
            let yi = sign * self.y[(t, i)];
            for j in i..m {
                self.yy[(i, j)] += yi * self.y[(t, j)];
            }
        }
    }

    /// Least-squares coefficients `B` (`k x m`) and `Sigma` with divisor `n`.
    ///
    /// `None` when the design looks close to singular. Forming `X'X` squares
    /// the condition number, so such windows are refitted by QR instead.
    fn solve(&self, n: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let k = self.xx.nrows();
        let m = self.yy.nrows();
        let xx = DMatrix::from_fn(k, k, |a, b| if a <= b { self.xx[(a, b)] } else { self.xx[(b, a)] });
        let chol = xx.cholesky()?;
        let diag = chol.l_dirty().diagonal();
        if !(diag.min() > GRAM_FALLBACK_RATIO * diag.max()) {
            return None;
        }
        let b = chol.solve(&self.xy);
        let yy = DMatrix::from_fn(m, m, |i, j| if i <= j { self.yy[(i, j)] } else { self.yy[(j, i)] });
        let mut sigma = (yy - b.tr_mul(&self.xy)) / n as f64;
        symmetrize(&mut sigma);
        Some((b, sigma))
    }

    fn residual(&mut self, b: &DMatrix<f64>, t: usize) -> DVector<f64> {
        fill_design_row(self.y, t, self.p, &mut self.row);
        let m = self.y.ncols();
        DVector::from_fn(m, |j, _| {
            let fitted: f64 = self.row.iter().enumerate().map(|(a, x)| x * b[(a, j)]).sum();
            self.y[(t, j)] - fitted
        })
    }
}

/// Inverse of `unpack_coefficients`.
fn pack_coefficients(intercept: &DVector<f64>, phi: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = intercept.len();
    let mut b = DMatrix::zeros(1 + m * phi.len(), m);
    for i in 0..m {
        b[(0, i)] = intercept[i];
        for (l, f) in phi.iter().enumerate() {
            for j in 0..m {
                b[(1 + l * m + j, i)] = f[(i, j)];
            }
        }
    }
    b
}

/// Per-window ingredients shared by every candidate penalty.
struct WindowState {
    mean: DVector<f64>,
    terms: DMatrix<f64>,
    ranked: RankedContributions,
    realized: DVector<f64>,
}

fn window_state(
    gram: &mut RollingGram<'_>,
    cfg: &TuningConfig,
    start: usize,
    s: usize,
) -> Result<WindowState> {
    let y = gram.y;
    let m = y.ncols();
    let p = cfg.p_lag;
    let (b, sigma) = match gram.solve(s - p) {
        Some(solved) => solved,
        None => {
            let fit = estimate_var(&y.rows(start, s).into_owned(), p)?;
            (pack_coefficients(&fit.intercept, &fit.phi), fit.sigma)
        }
    };
    let (intercept, phi) = unpack_coefficients(&b, m, p);
    let mean = unconditional_mean(&intercept, &phi)
        .ok_or_else(|| Error::Singular("I - Phi_1 - .. - Phi_p has no inverse; mean undefined".into()))?;
    let vma = vma_coefficients(&phi, cfg.horizon)?;
    let target = start + s;
    let mut residuals = Vec::with_capacity(cfg.horizon);
    for h in 0..cfg.horizon {
        residuals.push(gram.residual(&b, target - h));
    }
    let (responses, shocks) = match cfg.kind {
        DecompositionKind::Fevd => {
            let map = cholesky_factor(&sigma)?;
            let responses = ImpulseResponses::orthogonal(&vma, &map)?;
            let mut shocks = DMatrix::zeros(cfg.horizon, m);
            for (h, e) in residuals.iter().enumerate() {
                shocks.set_row(h, &recover_shocks(&map, e)?.transpose());
            }
            (responses, shocks)
        }
        DecompositionKind::Gfevd => {
            let responses = ImpulseResponses::generalized(&vma, &sigma)?;
            let mut shocks = DMatrix::zeros(cfg.horizon, m);
            for (h, e) in residuals.iter().enumerate() {
                shocks.set_row(h, &e.transpose());
            }
            (responses, shocks)
        }
    };
    let terms = forecast_terms(&responses, &shocks);
    let ranked = RankedContributions::new(&responses.contributions());
    Ok(WindowState {
        mean,
        terms,
        ranked,
        realized: y.row(target).transpose(),
    })
}

/// Forecast errors for every candidate over windows `first..last`.
fn chunk_errors(
    y: &DMatrix<f64>,
    cfg: &TuningConfig,
    s: usize,
    lambdas: &[f64],
    first: usize,
    last: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let m = y.ncols();
    let p = cfg.p_lag;
    let mut out = vec![DMatrix::zeros(last - first, m); lambdas.len()];
    let mut gram = RollingGram::new(y, p);
    for t in first + p..first + s {
        gram.update(t, 1.0);
    }
    for w in first..last {
        if w > first {
            gram.update(w - 1 + p, -1.0);
            gram.update(w + s - 1, 1.0);
        }
        let state = window_state(&mut gram, cfg, w, s).map_err(|e| Error::Window {
            window: w + 1,
            source: Box::new(e),
        })?;
        for (c, &lambda) in lambdas.iter().enumerate() {
            let k_hat = state.ranked.select(s, lambda, cfg.fit_term);
            let mask = state.ranked.mask(k_hat);
            let forecast = masked_forecast(&state.mean, &state.terms, &mask);
            let err = &state.realized - forecast;
            out[c].set_row(w - first, &err.transpose());
        }
    }
    Ok(out)
}

/// Forecast errors `(T - S) x m` for each penalty, in candidate order.
pub fn rolling_forecast_errors(
    panel: &StandardizedPanel,
    cfg: &TuningConfig,
    lambdas: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let y = panel.observations();
    let (t_len, m) = y.shape();
    let s = cfg.validate(t_len, m)?;
    let windows = t_len - s;
    let chunks: Vec<(usize, usize)> = (0..windows)
        .step_by(CHUNK)
        .map(|a| (a, (a + CHUNK).min(windows)))
        .collect();
    let parts: Vec<Vec<DMatrix<f64>>> = chunks
        .par_iter()
        .map(|&(a, b)| chunk_errors(y, cfg, s, lambdas, a, b))
        .collect::<Result<_>>()?;
    let mut out = vec![DMatrix::zeros(windows, m); lambdas.len()];
    for ((a, b), part) in chunks.iter().zip(parts) {
        for (c, block) in part.into_iter().enumerate() {
            out[c].rows_mut(*a, b - a).copy_from(&block);
        }
    }
    Ok(out)
}

fn mean_square(errors: &DMatrix<f64>) -> f64 {
    errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64
}

/// Pseudo-out-of-sample MSFE for one penalty value.
pub fn poos_msfe(panel: &StandardizedPanel, cfg: &TuningConfig, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty {lambda} is not a nonnegative number")));
    }
    let errors = rolling_forecast_errors(panel, cfg, &[lambda])?;
    Ok(mean_square(&errors[0]))
}

/// Evaluates every candidate; the smallest MSFE wins, first on ties.
pub fn select_lambda(panel: &StandardizedPanel, cfg: &TuningConfig) -> Result<TuningReport> {
    let (t_len, m) = (panel.t_len(), panel.m_dim());
    let s = cfg.validate(t_len, m)?;
    let resolved = cfg.grid.resolve(t_len, m);
    let lambdas: Vec<f64> = resolved.iter().map(|(_, l)| *l).collect();
    let mut errors = rolling_forecast_errors(panel, cfg, &lambdas)?;
    let candidates: Vec<CandidateResult> = resolved
        .iter()
        .zip(&errors)
        .map(|(&(constant, lambda), e)| CandidateResult {
            constant,
            lambda,
            msfe: mean_square(e),
        })
        .collect();
    let mut winner = 0;
    for (idx, c) in candidates.iter().enumerate() {
        if c.msfe < candidates[winner].msfe {
            winner = idx;
        }
    }
    tracing::debug!(winner, lambda = candidates[winner].lambda, "penalty selected");
    Ok(TuningReport {
        kind: cfg.kind,
        horizon: cfg.horizon,
        p_lag: cfg.p_lag,
        train_size: s,
        lambda_star: candidates[winner].lambda,
        candidates,
        winner,
        forecast_errors: errors.swap_remove(winner),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::max_abs_diff;
    use crate::panel::{standardize, Panel};
    use crate::shock::ShockMap;
    use crate::vma::VmaSequence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simulate(seed: u64, m: usize, t_len: usize, coef: f64) -> StandardizedPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                coef
            } else if j == (i + 1) % m {
                0.3
            } else {
                0.0
            }
        });
        let mut y = DMatrix::zeros(t_len + 100, m);
        for t in 1..t_len + 100 {
            let e = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let next = &phi * y.row(t - 1).transpose() + e;
            y.set_row(t, &next.transpose());
        }
        let panel = Panel::from_matrix(y.rows(100, t_len).into_owned()).unwrap();
        standardize(&panel).unwrap()
    }

    fn cfg(kind: DecompositionKind, h: usize, p: usize, grid: Vec<f64>) -> TuningConfig {
        TuningConfig::new(LambdaGrid::Values(grid), 0.8, h, p, kind)
    }

    fn random_responses(rng: &mut ChaCha8Rng, m: usize, h: usize, kind: DecompositionKind) -> ImpulseResponses {
        ImpulseResponses {
            kind,
            responses: (0..h).map(|_| DMatrix::from_fn(m, m, |_, _| rng.random::<f64>() - 0.5)).collect(),
            shock_scale: DVector::from_fn(m, |_, _| 0.5 + rng.random::<f64>()),
        }
    }

    #[test]
    fn full_mask_h1_is_off_diagonal_impact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_responses(&mut rng, 3, 1, DecompositionKind::Fevd);
        let r = ImpulseResponses { shock_scale: DVector::from_element(3, 1.0), ..r };
        let mean = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let shocks = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let f = sparse_forecast(&mean, &r, &EdgeMask::all_ones(3), &shocks).unwrap();
        for i in 0..3 {
            let expect: f64 = mean[i] + (0..3).filter(|&j| j != i).map(|j| r.responses[0][(i, j)] * shocks[(0, j)]).sum::<f64>();
            assert!((f[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_mask_h1_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_responses(&mut rng, 4, 1, DecompositionKind::Gfevd);
        let mean = DVector::from_fn(4, |i, _| i as f64);
        let shocks = DMatrix::from_fn(1, 4, |_, _| rng.random::<f64>());
        let f = sparse_forecast(&mean, &r, &EdgeMask::identity(4), &shocks).unwrap();
        assert_eq!(f, mean);
    }

    #[test]
    fn forecast_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [DecompositionKind::Fevd, DecompositionKind::Gfevd] {
            let (m, h) = (5, 4);
            let r = random_responses(&mut rng, m, h, kind);
            let mean = DVector::from_fn(m, |_, _| rng.random::<f64>());
            let shocks = DMatrix::from_fn(h, m, |_, _| rng.random::<f64>() - 0.5);
            let bits = DMatrix::from_fn(m, m, |i, j| if i == j || rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
            let mask = EdgeMask::from_matrix(&bits).unwrap();
            let f = sparse_forecast(&mean, &r, &mask, &shocks).unwrap();
            for i in 0..m {
                let mut y = mean[i];
                for j in 0..m {
                    for hh in 0..h {
                        if bits[(i, j)] == 1.0 && !(hh == 0 && j == i) {
                            y += r.responses[hh][(i, j)] * r.shock_scale[j] * shocks[(hh, j)];
                        }
                    }
                }
                assert!((f[i] - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forecast_rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_responses(&mut rng, 3, 2, DecompositionKind::Fevd);
        let mean = DVector::zeros(3);
        assert!(sparse_forecast(&mean, &r, &EdgeMask::all_ones(3), &DMatrix::zeros(1, 3)).is_err());
        assert!(sparse_forecast(&mean, &r, &EdgeMask::all_ones(2), &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn long_horizon_full_mask_is_conditional_mean_minus_own_shock() {
        // exact VAR(1) with known residual history, spectral radius 0.5
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 3;
        let phi = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.0, 0.4, 0.2, 0.0, 0.0, 0.3]);
        let c = DVector::from_vec(vec![0.2, -0.1, 0.05]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0]);
        let map = cholesky_factor(&sigma).unwrap();
        let mu = unconditional_mean(&c, std::slice::from_ref(&phi)).unwrap();
        let h = 50;
        let n = 400;
        let eps: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal))).collect();
        let mut y = mu.clone();
        for e in eps.iter().take(n - 1) {
            y = &c + &phi * &y + e;
        }
        // y holds y_{n-1}; target uses eps[n-1]
        let vma = vma_coefficients(std::slice::from_ref(&phi), h).unwrap();
        let r = ImpulseResponses::orthogonal(&vma, &map).unwrap();
        let mut shocks = DMatrix::zeros(h, m);
        for hh in 0..h {
            shocks.set_row(hh, &recover_shocks(&map, &eps[n - 1 - hh]).unwrap().transpose());
        }
        let f = sparse_forecast(&mu, &r, &EdgeMask::all_ones(m), &shocks).unwrap();
        let xi0 = shocks.row(0).transpose();
        let cond = &c + &phi * &y;
        let impact = &map.p_matrix * &xi0;
        for i in 0..m {
            let expect = cond[i] + impact[i] - map.p_matrix[(i, i)] * xi0[i];
            assert!((f[i] - expect).abs() < 1e-6, "{} vs {}", f[i], expect);
        }
    }

    /// Independent route: QR fit on each window slice, then the public pieces.
    fn oracle_errors(panel: &StandardizedPanel, cfg: &TuningConfig, lambda: f64) -> DMatrix<f64> {
        let y = panel.observations();
        let (t_len, m) = y.shape();
        let s = cfg.train_size(t_len);
        let p = cfg.p_lag;
        let mut out = DMatrix::zeros(t_len - s, m);
        for w in 0..t_len - s {
            let fit = estimate_var(&y.rows(w, s).into_owned(), p).unwrap();
            let vma: VmaSequence = vma_coefficients(&fit.phi, cfg.horizon).unwrap();
            let target = y.row(w + s).transpose();
            let mut lagged = fit.intercept.clone();
            for l in 1..=p {
                lagged += &fit.phi[l - 1] * y.row(w + s - l).transpose();
            }
            let e_next = &target - lagged;
            let n = fit.residuals.nrows();
            let (responses, map): (ImpulseResponses, Option<ShockMap>) = match cfg.kind {
                DecompositionKind::Fevd => {
                    let map = cholesky_factor(&fit.sigma).unwrap();
                    (ImpulseResponses::orthogonal(&vma, &map).unwrap(), Some(map))
                }
                DecompositionKind::Gfevd => (ImpulseResponses::generalized(&vma, &fit.sigma).unwrap(), None),
            };
            let mut shocks = DMatrix::zeros(cfg.horizon, m);
            for h in 0..cfg.horizon {
                let e = if h == 0 { e_next.clone() } else { fit.residuals.row(n - h).transpose() };
                let row = match &map {
                    Some(map) => recover_shocks(map, &e).unwrap(),
                    None => e,
                };
                shocks.set_row(h, &row.transpose());
            }
            let sel = crate::sparsify::sparsify_with(&responses.contributions(), s, lambda, cfg.fit_term).unwrap();
            let f = sparse_forecast(fit.mean().unwrap(), &responses, &sel.mask, &shocks).unwrap();
            out.set_row(w, &(target - f).transpose());
        }
        out
    }

    #[test]
    fn rolling_engine_matches_per_window_qr() {
        let panel = simulate(7, 4, 240, 0.4);
        for kind in [DecompositionKind::Fevd, DecompositionKind::Gfevd] {
            for (h, p) in [(1, 1), (5, 2)] {
                let c = cfg(kind, h, p, vec![0.5, 3.0]);
                let fast = rolling_forecast_errors(&panel, &c, &[0.5, 3.0]).unwrap();
                for (idx, lambda) in [0.5, 3.0].into_iter().enumerate() {
                    let slow = oracle_errors(&panel, &c, lambda);
                    assert!(max_abs_diff(&fast[idx], &slow) < 1e-8, "{kind} H={h} p={p}");
                }
            }
        }
    }

    #[test]
    fn single_validation_point() {
        let panel = simulate(8, 3, 60, 0.3);
        let c = TuningConfig::new(LambdaGrid::Values(vec![1.0]), 59.5 / 60.0, 2, 1, DecompositionKind::Fevd);
        assert_eq!(c.train_size(60), 59);
        let errors = rolling_forecast_errors(&panel, &c, &[1.0]).unwrap();
        assert_eq!(errors[0].nrows(), 1);
        let direct = errors[0].iter().map(|e| e * e).sum::<f64>() / 3.0;
        assert!((poos_msfe(&panel, &c, 1.0).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn single_and_duplicate_candidates() {
        let panel = simulate(9, 3, 120, 0.3);
        let one = select_lambda(&panel, &cfg(DecompositionKind::Gfevd, 2, 1, vec![2.0])).unwrap();
        assert_eq!(one.winner, 0);
        assert_eq!(one.lambda_star, 2.0);
        let dup = select_lambda(&panel, &cfg(DecompositionKind::Gfevd, 2, 1, vec![1e6, 2.0, 2.0])).unwrap();
        assert_eq!(dup.candidates[1].msfe, dup.candidates[2].msfe);
        assert!(dup.winner == 0 || dup.winner == 1);
        let all_same = select_lambda(&panel, &cfg(DecompositionKind::Gfevd, 2, 1, vec![2.0, 2.0])).unwrap();
        assert_eq!(all_same.winner, 0);
    }

    #[test]
    fn winner_attains_minimum_and_errors_match() {
        let panel = simulate(10, 4, 200, 0.4);
        let c = TuningConfig::new(
            LambdaGrid::default_for(DecompositionKind::Fevd, 5),
            0.9,
            5,
            1,
            DecompositionKind::Fevd,
        );
        let r = select_lambda(&panel, &c).unwrap();
        let min = r.candidates.iter().map(|c| c.msfe).fold(f64::INFINITY, f64::min);
        assert_eq!(r.candidates[r.winner].msfe, min);
        assert!(r.candidates[..r.winner].iter().all(|c| c.msfe > min));
        assert_eq!(r.forecast_errors.shape(), (20, 4));
        assert!((mean_square(&r.forecast_errors) - min).abs() < 1e-15);
        let expect = 4.0 * 200f64.ln() / 4.0;
        assert!((r.candidates[3].lambda - expect).abs() < 1e-12);
        assert_eq!(r.candidates[3].constant, Some(4.0));
    }

    #[test]
    fn candidate_order_does_not_change_msfe() {
        let panel = simulate(11, 3, 150, 0.3);
        let a = select_lambda(&panel, &cfg(DecompositionKind::Fevd, 3, 1, vec![0.1, 1.0, 10.0])).unwrap();
        let b = select_lambda(&panel, &cfg(DecompositionKind::Fevd, 3, 1, vec![10.0, 0.1, 1.0])).unwrap();
        assert_eq!(a.candidates[0].msfe, b.candidates[1].msfe);
        assert_eq!(a.candidates[2].msfe, b.candidates[0].msfe);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let panel = simulate(12, 3, 400, 0.3);
        let c = cfg(DecompositionKind::Gfevd, 4, 2, vec![0.5, 2.0, 8.0]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| select_lambda(&panel, &c).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.forecast_errors, b.forecast_errors);
        assert_eq!(a.candidates, b.candidates);
    }

    #[test]
    fn default_grids() {
        let g = LambdaGrid::default_for(DecompositionKind::Fevd, 1);
        assert_eq!(g, LambdaGrid::Constants(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        assert_eq!(
            LambdaGrid::default_for(DecompositionKind::Gfevd, 10),
            LambdaGrid::Constants(vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        );
        assert_eq!(LambdaGrid::default_for(DecompositionKind::Gfevd, 1).len(), 6);
    }

    #[test]
    fn config_validation() {
        let panel = simulate(13, 3, 50, 0.3);
        let bad = |c: TuningConfig| select_lambda(&panel, &c).is_err();
        assert!(bad(cfg(DecompositionKind::Fevd, 1, 1, vec![])));
        assert!(bad(cfg(DecompositionKind::Fevd, 1, 1, vec![-1.0])));
        assert!(bad(TuningConfig { train_frac: 1.0, ..cfg(DecompositionKind::Fevd, 1, 1, vec![1.0]) }));
        assert!(bad(TuningConfig { train_frac: 0.05, ..cfg(DecompositionKind::Fevd, 1, 1, vec![1.0]) }));
        assert!(bad(cfg(DecompositionKind::Fevd, 45, 1, vec![1.0])));
    }

    #[test]
    fn failing_window_is_identified() {
        // a constant stretch makes the first windows rank-deficient
        let mut y = simulate(14, 2, 80, 0.3).panel.observations().clone();
        for t in 0..72 {
            y[(t, 0)] = 1.0;
        }
        let panel = StandardizedPanel { panel: Panel::from_matrix(y).unwrap(), scales: vec![1.0, 1.0] };
        let err = poos_msfe(&panel, &cfg(DecompositionKind::Fevd, 1, 1, vec![1.0]), 1.0).unwrap_err();
        assert!(matches!(err, Error::Window { window: 1, .. }), "{err}");
    }

    #[test]
    fn near_singular_window_falls_back_to_qr() {
        // a near-constant series: the Gram route is untrustworthy, QR is not
        let base = simulate(15, 2, 120, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let y0 = base.panel.observations().clone();
        let y = DMatrix::from_fn(120, 3, |t, j| if j < 2 { y0[(t, j)] } else { 1.0 + 1e-7 * (rng.random::<f64>() - 0.5) });
        let panel = StandardizedPanel { panel: Panel::from_matrix(y).unwrap(), scales: vec![1.0; 3] };
        let c = cfg(DecompositionKind::Gfevd, 2, 1, vec![1.0]);
        let fast = rolling_forecast_errors(&panel, &c, &[1.0]).unwrap();
        let slow = oracle_errors(&panel, &c, 1.0);
        assert!(max_abs_diff(&fast[0], &slow) < 1e-8);
    }

    #[test]
    fn coefficient_packing_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let b = DMatrix::from_fn(7, 3, |_, _| rng.random::<f64>());
        let (c, phi) = unpack_coefficients(&b, 3, 2);
        assert_eq!(pack_coefficients(&c, &phi), b);
    }
}
