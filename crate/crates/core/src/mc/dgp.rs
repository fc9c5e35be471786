//! Block-sparse VAR designs and panel simulation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decomposition::{ContributionMatrix, DecompositionKind, ImpulseResponses};
use crate::error::{Error, Result};
use crate::matrix::{min_symmetric_eigenvalue, symmetrize};
use crate::panel::Panel;
use crate::shock::cholesky_factor;
use crate::sparsify::EdgeMask;
use crate::var::spectral_radius;
use crate::vma::vma_coefficients;

pub const BURN_IN: usize = 1000;
const SHRINK: f64 = 0.9;
/// Smallest eigenvalue that counts as positive definite.
const PD_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpName {
    S1,
    S2,
    L1,
    L2,
    L3,
    L4,
    D1,
    D2,
    H1,
    H2,
    Custom,
}

impl std::str::FromStr for DgpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "S1" => DgpName::S1,
            "S2" => DgpName::S2,
            "L1" => DgpName::L1,
            "L2" => DgpName::L2,
            "L3" => DgpName::L3,
            "L4" => DgpName::L4,
            "D1" => DgpName::D1,
            "D2" => DgpName::D2,
            "H1" => DgpName::H1,
            "H2" => DgpName::H2,
            "CUSTOM" => DgpName::Custom,
            other => return Err(Error::InvalidArgument(format!("unknown design {other:?}"))),
        })
    }
}

impl std::fmt::Display for DgpName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ErrorDist {
    Gaussian,
    /// Multivariate t scaled so that the covariance equals `Sigma`.
    StudentT { nu: f64 },
}

impl std::str::FromStr for ErrorDist {
    type Err = Error;

    /// `gaussian`, or `t<nu>` / `student_t(<nu>)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "gaussian" || s == "normal" {
            return Ok(ErrorDist::Gaussian);
        }
        let nu = s
            .strip_prefix("student_t(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix('t'))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown error distribution {s:?}")))?;
        Ok(ErrorDist::StudentT { nu })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: DgpName,
    pub m: usize,
    pub p: usize,
    /// Contiguous groups of nodes; size 1 is an isolated node.
    pub block_sizes: Vec<usize>,
    pub error_dist: ErrorDist,
    /// Bound `w` for the `U(-w, w)` fill of structural zeros.
    pub weak_fill: Option<f64>,
    pub seed: u64,
}

impl DgpSpec {
    /// One of the named designs at lag order `p`.
    pub fn preset(name: DgpName, p: usize) -> Result<Self> {
        let singles = |n: usize| std::iter::repeat_n(1, n);
        let (blocks, error_dist, weak_fill): (Vec<usize>, ErrorDist, Option<f64>) = match name {
            DgpName::S1 => (vec![4, 2, 2, 1, 1], ErrorDist::Gaussian, None),
            DgpName::S2 => ([6].into_iter().chain(singles(4)).collect(), ErrorDist::Gaussian, None),
            DgpName::L1 | DgpName::D1 | DgpName::H1 => ([8, 4, 2, 2].into_iter().chain(singles(4)).collect(), ErrorDist::Gaussian, None),
            DgpName::L2 | DgpName::D2 | DgpName::H2 => ([10, 4].into_iter().chain(singles(6)).collect(), ErrorDist::Gaussian, None),
            DgpName::L3 => (std::iter::repeat_n(2, 5).chain(singles(10)).collect(), ErrorDist::Gaussian, None),
            DgpName::L4 => (singles(20).collect(), ErrorDist::Gaussian, None),
            DgpName::Custom => {
                return Err(Error::InvalidArgument("custom designs need explicit block sizes".into()))
            }
        };
        let error_dist = match name {
            DgpName::H1 | DgpName::H2 => ErrorDist::StudentT { nu: 4.0 },
            _ => error_dist,
        };
        let weak_fill = match name {
            DgpName::D1 | DgpName::D2 => Some(0.1),
            _ => weak_fill,
        };
        let spec = Self {
            name,
            m: blocks.iter().sum(),
            p,
            block_sizes: blocks,
            error_dist,
            weak_fill,
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom(block_sizes: Vec<usize>, p: usize, error_dist: ErrorDist, weak_fill: Option<f64>) -> Result<Self> {
        let spec = Self {
            name: DgpName::Custom,
            m: block_sizes.iter().sum(),
            p,
            block_sizes,
            error_dist,
            weak_fill,
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(Error::InvalidArgument("block sizes must be positive".into()));
        }
        if self.block_sizes.iter().sum::<usize>() != self.m {
            return Err(Error::InvalidArgument(format!(
                "block sizes sum to {} but m = {}",
                self.block_sizes.iter().sum::<usize>(),
                self.m
            )));
        }
        if self.m < 2 {
            return Err(Error::InvalidArgument("a network needs m >= 2".into()));
        }
        if self.p < 1 {
            return Err(Error::InvalidArgument("lag order p must be at least 1".into()));
        }
        if let ErrorDist::StudentT { nu } = self.error_dist {
            if !(nu > 2.0) {
                return Err(Error::InvalidArgument(format!("Student-t needs nu > 2, got {nu}")));
            }
        }
        if let Some(w) = self.weak_fill {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("weak fill bound must be positive, got {w}")));
            }
        }
        Ok(())
    }

    /// Block index of each node.
    pub fn block_of(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
            .collect()
    }

    /// Ordered cross pairs inside non-singleton blocks.
    pub fn active_set(&self) -> Vec<(usize, usize)> {
        let block = self.block_of();
        let m = self.m;
        (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && block[i] == block[j])
            .collect()
    }

    fn fully_disconnected(&self) -> bool {
        self.block_sizes.iter().all(|&n| n == 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub phi: Vec<DMatrix<f64>>,
    pub sigma: DMatrix<f64>,
    pub active_set: Vec<(usize, usize)>,
    pub spectral_radius: f64,
}

impl TrueModel {
    pub fn m_dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn mask(&self) -> EdgeMask {
        EdgeMask::from_active(self.m_dim(), &self.active_set).expect("active set holds valid off-diagonal pairs")
    }

    /// Population contributions at horizon `h`.
    pub fn contributions(&self, kind: DecompositionKind, horizon: usize) -> Result<ContributionMatrix> {
        let vma = vma_coefficients(&self.phi, horizon)?;
        let responses = match kind {
            DecompositionKind::Fevd => ImpulseResponses::orthogonal(&vma, &cholesky_factor(&self.sigma)?)?,
            DecompositionKind::Gfevd => ImpulseResponses::generalized(&vma, &self.sigma)?,
        };
        Ok(responses.contributions())
    }
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    rng.random_range(-bound..bound)
}

/// Multiplies every lag matrix by 0.9 until the companion radius is below one.
fn shrink_to_stationarity(phi: &mut [DMatrix<f64>]) -> f64 {
    loop {
        let radius = spectral_radius(phi);
        if radius < 1.0 {
            return radius;
        }
        for f in phi.iter_mut() {
            *f *= SHRINK;
        }
    }
}

/// `Sigma <- w Sigma + (1 - w) I` with `w = 0.9, 0.81, ..` until positive definite.
fn mix_to_positive_definite(sigma: &mut DMatrix<f64>) {
    let m = sigma.nrows();
    let identity = DMatrix::<f64>::identity(m, m);
    let mut omega = 1.0;
    while min_symmetric_eigenvalue(sigma) <= PD_THRESHOLD {
        omega *= SHRINK;
        *sigma = &*sigma * omega + &identity * (1.0 - omega);
        symmetrize(sigma);
    }
}

pub fn generate_model(spec: &DgpSpec) -> Result<TrueModel> {
    generate_model_with(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

pub fn generate_model_with(spec: &DgpSpec, rng: &mut impl Rng) -> Result<TrueModel> {
    spec.validate()?;
    let m = spec.m;
    let block = spec.block_of();
    let same = |i: usize, j: usize| block[i] == block[j];

    let mut phi: Vec<DMatrix<f64>> = (0..spec.p)
        .map(|_| {
            let mut f = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    if same(i, j) {
                        f[(i, j)] = uniform(rng, 1.0);
                    }
                }
            }
            f
        })
        .collect();

    let mut sigma = if spec.fully_disconnected() {
        DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.random_range(0.25..1.0)))
    } else {
        let rho = DVector::from_fn(m, |_, _| uniform(rng, 1.0));
        DMatrix::from_fn(m, m, |i, j| match (i == j, same(i, j)) {
            (true, _) => 1.0,
            (false, true) => rho[i] * rho[j],
            (false, false) => 0.0,
        })
    };

    shrink_to_stationarity(&mut phi);
    mix_to_positive_definite(&mut sigma);

    if let Some(w) = spec.weak_fill {
        for f in phi.iter_mut() {
            for i in 0..m {
                for j in 0..m {
                    if f[(i, j)] == 0.0 {
                        f[(i, j)] = uniform(rng, w);
                    }
                }
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                if sigma[(i, j)] == 0.0 {
                    let v = uniform(rng, w);
                    sigma[(i, j)] = v;
                    sigma[(j, i)] = v;
                }
            }
        }
        shrink_to_stationarity(&mut phi);
        mix_to_positive_definite(&mut sigma);
    }

    Ok(TrueModel {
        spectral_radius: spectral_radius(&phi),
        phi,
        sigma,
        active_set: spec.active_set(),
    })
}

/// `T` observations after a burn-in of 1000, starting from zeros.
pub fn simulate_panel(model: &TrueModel, t_len: usize, error_dist: ErrorDist, seed: u64) -> Result<Panel> {
    simulate_panel_with(model, t_len, error_dist, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn simulate_panel_with(model: &TrueModel, t_len: usize, error_dist: ErrorDist, rng: &mut impl Rng) -> Result<Panel> {
    if t_len == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let m = model.m_dim();
    let p = model.phi.len();
    let chol = cholesky_factor(&model.sigma)?.p_matrix;
    let t_scale = match error_dist {
        ErrorDist::Gaussian => None,
        ErrorDist::StudentT { nu } => {
            if !(nu > 2.0) {
                return Err(Error::InvalidArgument(format!("Student-t needs nu > 2, got {nu}")));
            }
            Some((ChiSquared::new(nu).expect("nu > 0"), nu))
        }
    };
    let total = BURN_IN + t_len;
    // p leading zero rows hold the initial condition
    let mut y = DMatrix::zeros(p + total, m);
    let mut z = DVector::zeros(m);
    for t in p..p + total {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut e = &chol * &z;
        if let Some((chi, nu)) = &t_scale {
            let w: f64 = chi.sample(rng);
            e *= ((nu - 2.0) / w).sqrt();
        }
        for (l, f) in model.phi.iter().enumerate() {
            e.gemv(1.0, f, &y.row(t - l - 1).transpose(), 1.0);
        }
        y.set_row(t, &e.transpose());
    }
    Panel::from_matrix(y.rows(p + BURN_IN, t_len).into_owned())
}
