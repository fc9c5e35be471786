//! Replicated simulation studies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{fevd_contributions, gfevd_contributions, ContributionMatrix, DecompositionKind};
use crate::error::{Error, Result};
use crate::panel::standardize;
use crate::shock::cholesky_factor;
use crate::sparsify::{sparsify, LambdaRule};
use crate::tuner::{select_lambda, LambdaGrid, TuningConfig};
use crate::var::fit_var;
use crate::vma::vma_coefficients;

use super::dgp::{generate_model_with, simulate_panel_with, DgpSpec, TrueModel};
use super::score::{cdr_metrics, sparsity_loss_metrics};

/// A penalty that is used as-is, without tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum FixedPenalty {
    Rule(LambdaRule),
    Value(f64),
    /// `c log T / m`.
    Constant(f64),
}

impl FixedPenalty {
    pub fn value(self, t_len: usize, m: usize) -> f64 {
        match self {
            FixedPenalty::Rule(rule) => rule.value(t_len, m),
            FixedPenalty::Value(v) => v,
            FixedPenalty::Constant(c) => c * (t_len as f64).ln() / m as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyChoice {
    /// Rolling-forecast tuning; `None` uses the default grid for each kind and horizon.
    Tuned(Option<LambdaGrid>),
    Fixed(FixedPenalty),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub spec: DgpSpec,
    pub t_lens: Vec<usize>,
    pub horizons: Vec<usize>,
    pub kinds: Vec<DecompositionKind>,
    pub penalty: PenaltyChoice,
    pub train_frac: f64,
    pub replications: usize,
    pub seed: u64,
    /// Draw one model for all replications instead of one per replication.
    pub hold_model_fixed: bool,
}

impl StudyConfig {
    pub fn new(spec: DgpSpec) -> Self {
        Self {
            spec,
            t_lens: vec![500],
            horizons: vec![5],
            kinds: vec![DecompositionKind::Gfevd],
            penalty: PenaltyChoice::Tuned(None),
            train_frac: 0.9,
            replications: 100,
            seed: 1,
            hold_model_fixed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.t_lens.is_empty() || self.horizons.is_empty() || self.kinds.is_empty() {
            return Err(Error::InvalidArgument("study needs at least one T, H and kind".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be positive".into()));
        }
        if self.horizons.contains(&0) {
            return Err(Error::InvalidArgument("horizon H must be at least 1".into()));
        }
        if let PenaltyChoice::Fixed(p) = self.penalty {
            let v = p.value(self.t_lens[0], self.spec.m);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("penalty {v} is not a nonnegative number")));
            }
        }
        Ok(())
    }

    fn grid(&self, kind: DecompositionKind, horizon: usize) -> Option<LambdaGrid> {
        match &self.penalty {
            PenaltyChoice::Tuned(Some(g)) => Some(g.clone()),
            PenaltyChoice::Tuned(None) => Some(LambdaGrid::default_for(kind, horizon)),
            PenaltyChoice::Fixed(_) => None,
        }
    }
}

/// Independent stream for `(master seed, replication, purpose)`.
///
/// `purpose` 0 draws the model; `purpose = T` draws the panel of length `T`.
pub fn replication_rng(master: u64, replication: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(replication);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub t_len: usize,
    pub horizon: usize,
    pub kind: DecompositionKind,
    pub k_hat: usize,
    pub lambda: f64,
    pub c_star: Option<f64>,
    pub cdr1: Option<f64>,
    pub cdr0: Option<f64>,
    pub cdra: Option<f64>,
    pub sp: Option<f64>,
    pub vl_a: Option<f64>,
    pub vl_o: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CstarBin {
    pub c: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub t_len: usize,
    pub horizon: usize,
    pub kind: DecompositionKind,
    pub replications: usize,
    pub cdr1: Option<f64>,
    pub cdr0: Option<f64>,
    pub cdra: Option<f64>,
    pub sp: Option<f64>,
    pub vl_a: Option<f64>,
    pub vl_o: Option<f64>,
    pub mean_k_hat: f64,
    pub cstar_hist: Vec<CstarBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: StudyConfig,
    /// Size of the true active set (per replication it is the same).
    pub active_set_size: usize,
    pub cells: Vec<CellSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl McReport {
    pub fn cell(&self, t_len: usize, horizon: usize, kind: DecompositionKind) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.t_len == t_len && c.horizon == horizon && c.kind == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per replication and cell.
    pub fn write_records_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "replication", "t_len", "horizon", "kind", "k_hat", "lambda", "c_star", "cdr1", "cdr0", "cdra", "sp",
            "vl_a", "vl_o",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.replication.to_string(),
                r.t_len.to_string(),
                r.horizon.to_string(),
                r.kind.to_string(),
                r.k_hat.to_string(),
                r.lambda.to_string(),
                opt(r.c_star),
                opt(r.cdr1),
                opt(r.cdr0),
                opt(r.cdra),
                opt(r.sp),
                opt(r.vl_a),
                opt(r.vl_o),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Selected-constant frequencies: `t_len,horizon,kind,c,count`.
    pub fn write_cstar_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_len", "horizon", "kind", "c", "count"])?;
        for cell in &self.cells {
            for bin in &cell.cstar_hist {
                w.write_record([
                    cell.t_len.to_string(),
                    cell.horizon.to_string(),
                    cell.kind.to_string(),
                    bin.c.to_string(),
                    bin.count.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn contributions(
    fit: &crate::var::VarFit,
    horizon: usize,
    kind: DecompositionKind,
) -> Result<ContributionMatrix> {
    let vma = vma_coefficients(&fit.phi, horizon)?;
    match kind {
        DecompositionKind::Fevd => fevd_contributions(&vma, &cholesky_factor(&fit.sigma)?),
        DecompositionKind::Gfevd => gfevd_contributions(&vma, &fit.sigma),
    }
}

fn run_replication(cfg: &StudyConfig, rep: usize, fixed_model: Option<&TrueModel>) -> Result<Vec<ReplicationRecord>> {
    let spec = &cfg.spec;
    let drawn;
    let model = match fixed_model {
        Some(m) => m,
        None => {
            drawn = generate_model_with(spec, &mut replication_rng(cfg.seed, rep as u64, 0))?;
            &drawn
        }
    };
    let exact = spec.weak_fill.is_none();
    let mut out = Vec::new();
    for &t_len in &cfg.t_lens {
        let mut rng = replication_rng(cfg.seed, rep as u64, t_len as u64);
        let panel = simulate_panel_with(model, t_len, spec.error_dist, &mut rng)?;
        let std_panel = standardize(&panel)?;
        let fit = fit_var(&std_panel, spec.p)?;
        for &horizon in &cfg.horizons {
            let truth_fevd = if exact { None } else { Some(model.contributions(DecompositionKind::Fevd, horizon)?) };
            for &kind in &cfg.kinds {
                let contrib = contributions(&fit, horizon, kind)?;
                let (lambda, c_star) = match cfg.grid(kind, horizon) {
                    Some(grid) => {
                        let tc = TuningConfig::new(grid, cfg.train_frac, horizon, spec.p, kind);
                        let report = select_lambda(&std_panel, &tc)?;
                        (report.lambda_star, report.constant_star())
                    }
                    None => match cfg.penalty {
                        PenaltyChoice::Fixed(p) => (p.value(t_len, spec.m), None),
                        PenaltyChoice::Tuned(_) => unreachable!("tuned penalties always have a grid"),
                    },
                };
                let sel = sparsify(&contrib, fit.t_len, lambda)?;
                let mut rec = ReplicationRecord {
                    replication: rep,
                    t_len,
                    horizon,
                    kind,
                    k_hat: sel.k_hat,
                    lambda,
                    c_star,
                    cdr1: None,
                    cdr0: None,
                    cdra: None,
                    sp: None,
                    vl_a: None,
                    vl_o: None,
                };
                if exact {
                    let c = cdr_metrics(&sel, model)?;
                    rec.cdr1 = c.cdr1;
                    rec.cdr0 = Some(c.cdr0);
                    rec.cdra = Some(c.cdra);
                } else {
                    let m = spec.m;
                    rec.sp = Some((m * m - m - sel.k_hat) as f64 / (m * m - m) as f64);
                    if kind == DecompositionKind::Fevd {
                        let loss = sparsity_loss_metrics(&sel, truth_fevd.as_ref().expect("computed for weak designs"))?;
                        rec.sp = Some(loss.sp);
                        rec.vl_a = Some(loss.vl_a);
                        rec.vl_o = Some(loss.vl_o);
                    }
                }
                out.push(rec);
            }
        }
    }
    Ok(out)
}

fn mean_of(records: &[&ReplicationRecord], f: impl Fn(&ReplicationRecord) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter_map(|r| f(r)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn run_study(cfg: &StudyConfig) -> Result<McReport> {
    cfg.validate()?;
    let fixed_model = if cfg.hold_model_fixed {
        Some(generate_model_with(&cfg.spec, &mut replication_rng(cfg.seed, u64::MAX, 0))?)
    } else {
        None
    };
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            run_replication(cfg, rep, fixed_model.as_ref()).map_err(|e| Error::Replication {
                replication: rep,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &t_len in &cfg.t_lens {
        for &horizon in &cfg.horizons {
            for &kind in &cfg.kinds {
                let rs: Vec<&ReplicationRecord> = records
                    .iter()
                    .filter(|r| r.t_len == t_len && r.horizon == horizon && r.kind == kind)
                    .collect();
                let cstar_hist = match cfg.grid(kind, horizon) {
                    Some(LambdaGrid::Constants(cs)) => cs
                        .iter()
                        .map(|&c| CstarBin {
                            c,
                            count: rs.iter().filter(|r| r.c_star == Some(c)).count(),
                        })
                        .collect(),
                    _ => Vec::new(),
                };
                cells.push(CellSummary {
                    t_len,
                    horizon,
                    kind,
                    replications: rs.len(),
                    cdr1: mean_of(&rs, |r| r.cdr1),
                    cdr0: mean_of(&rs, |r| r.cdr0),
                    cdra: mean_of(&rs, |r| r.cdra),
                    sp: mean_of(&rs, |r| r.sp),
                    vl_a: mean_of(&rs, |r| r.vl_a),
                    vl_o: mean_of(&rs, |r| r.vl_o),
                    mean_k_hat: rs.iter().map(|r| r.k_hat as f64).sum::<f64>() / rs.len() as f64,
                    cstar_hist,
                });
            }
        }
    }
    Ok(McReport {
        active_set_size: cfg.spec.active_set().len(),
        config: cfg.clone(),
        cells,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::dgp::DgpName;

    fn small(kinds: Vec<DecompositionKind>) -> StudyConfig {
        let mut cfg = StudyConfig::new(DgpSpec::preset(DgpName::S1, 1).unwrap());
        cfg.t_lens = vec![300];
        cfg.kinds = kinds;
        cfg.replications = 3;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn single_replication_smoke() {
        let mut cfg = small(vec![DecompositionKind::Gfevd]);
        cfg.replications = 1;
        let r = run_study(&cfg).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.cells.len(), 1);
        let c = &r.cells[0];
        assert_eq!(c.replications, 1);
        assert_eq!(c.cstar_hist.iter().map(|b| b.count).sum::<usize>(), 1);
        for v in [c.cdr1, c.cdr0, c.cdra].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(c.sp.is_none());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let cfg = small(vec![DecompositionKind::Fevd, DecompositionKind::Gfevd]);
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| run_study(&cfg).unwrap().to_json().unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn fixed_penalty_and_weak_design() {
        let mut cfg = StudyConfig::new(DgpSpec::preset(DgpName::D1, 1).unwrap());
        cfg.t_lens = vec![400];
        cfg.kinds = vec![DecompositionKind::Fevd, DecompositionKind::Gfevd];
        cfg.replications = 2;
        cfg.penalty = PenaltyChoice::Fixed(FixedPenalty::Rule(LambdaRule::LogT));
        let r = run_study(&cfg).unwrap();
        let f = r.cell(400, 5, DecompositionKind::Fevd).unwrap();
        assert!(f.cdr0.is_none() && f.sp.is_some() && f.vl_o.is_some());
        assert!(f.cstar_hist.is_empty());
        let g = r.cell(400, 5, DecompositionKind::Gfevd).unwrap();
        assert!(g.sp.is_some() && g.vl_a.is_none());
        assert!(r.records.iter().all(|rec| (rec.lambda - 400f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn held_model_is_shared() {
        let mut cfg = small(vec![DecompositionKind::Gfevd]);
        cfg.hold_model_fixed = true;
        cfg.penalty = PenaltyChoice::Fixed(FixedPenalty::Value(5.0));
        let r = run_study(&cfg).unwrap();
        assert_eq!(r.records.len(), 3);
    }

    #[test]
    fn streams_are_distinct() {
        use rand::Rng;
        let a: u64 = replication_rng(1, 0, 0).random();
        let b: u64 = replication_rng(1, 1, 0).random();
        let c: u64 = replication_rng(1, 0, 500).random();
        let d: u64 = replication_rng(1, 0, 0).random();
        assert!(a != b && a != c);
        assert_eq!(a, d);
    }

    #[test]
    fn csv_outputs() {
        let r = run_study(&small(vec![DecompositionKind::Gfevd])).unwrap();
        let mut buf = Vec::new();
        r.write_records_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
        let mut buf = Vec::new();
        r.write_cstar_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }
}
