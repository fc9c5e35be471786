//! Spillover indices, degree counts, and table/graph export.
//!
//! All indices are in percent of the forecast error variance. Edge `(i, j)`
//! of a table means series `j` transmits to series `i`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decomposition::{DecompositionKind, FevdTable};
use crate::error::{Error, Result};
use crate::matrix::to_rows;
use crate::sparsify::EdgeMask;

/// Which table the spillover indices are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexBasis {
    /// Pruned cells count as zero.
    #[default]
    Masked,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverSummary {
    pub basis: IndexBasis,
    pub total_index: f64,
    /// Row sums excluding the diagonal ("from others").
    pub fix: Vec<f64>,
    /// Column sums excluding the diagonal ("to others").
    pub tix: Vec<f64>,
    pub nix: Vec<f64>,
    pub in_deg: Vec<usize>,
    pub out_deg: Vec<usize>,
}

impl SpilloverSummary {
    pub fn m_dim(&self) -> usize {
        self.fix.len()
    }
}

pub fn spillover_summary(table: &FevdTable, mask: &EdgeMask) -> Result<SpilloverSummary> {
    spillover_summary_with(table, mask, IndexBasis::Masked)
}

pub fn spillover_summary_with(table: &FevdTable, mask: &EdgeMask, basis: IndexBasis) -> Result<SpilloverSummary> {
    let m = table.m_dim();
    if mask.m_dim() != m {
        return Err(Error::Dimension(format!(
            "table is {m}x{m} but mask is {0}x{0}",
            mask.m_dim()
        )));
    }
    let cells = basis_cells(table, mask, basis);
    let mut fix = vec![0.0; m];
    let mut tix = vec![0.0; m];
    let mut in_deg = vec![0; m];
    let mut out_deg = vec![0; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let v = 100.0 * cells[(i, j)];
            fix[i] += v;
            tix[j] += v;
            if mask.get(i, j) {
                in_deg[i] += 1;
                out_deg[j] += 1;
            }
        }
    }
    let nix = tix.iter().zip(&fix).map(|(t, f)| t - f).collect();
    Ok(SpilloverSummary {
        basis,
        total_index: fix.iter().sum::<f64>() / m as f64,
        fix,
        tix,
        nix,
        in_deg,
        out_deg,
    })
}

fn basis_cells(table: &FevdTable, mask: &EdgeMask, basis: IndexBasis) -> DMatrix<f64> {
    match basis {
        IndexBasis::Masked => mask.apply(&table.shares),
        IndexBasis::Dense => table.shares.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    Dot,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(Error::InvalidArgument(format!(
                "unknown export format {other:?} (expected csv, json or dot)"
            ))),
        }
    }
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
            ExportFormat::Dot => "dot",
        }
    }
}

/// A labelled network: table, selected edges, and derived indices.
#[derive(Debug, Clone)]
pub struct Network<'a> {
    pub labels: &'a [String],
    pub table: &'a FevdTable,
    pub mask: &'a EdgeMask,
    pub basis: IndexBasis,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkDocument {
    pub kind: DecompositionKind,
    pub horizon: usize,
    pub labels: Vec<String>,
    /// Dense shares as fractions.
    pub shares: Vec<Vec<f64>>,
    pub mask: Vec<Vec<u8>>,
    pub summary: SpilloverSummary,
}

impl<'a> Network<'a> {
    pub fn new(labels: &'a [String], table: &'a FevdTable, mask: &'a EdgeMask) -> Result<Self> {
        if labels.len() != table.m_dim() || mask.m_dim() != table.m_dim() {
            return Err(Error::Dimension(format!(
                "{} labels, {}x{} table, {}x{} mask",
                labels.len(),
                table.m_dim(),
                table.m_dim(),
                mask.m_dim(),
                mask.m_dim()
            )));
        }
        Ok(Self {
            labels,
            table,
            mask,
            basis: IndexBasis::Masked,
        })
    }

    pub fn with_basis(mut self, basis: IndexBasis) -> Self {
        self.basis = basis;
        self
    }

    pub fn summary(&self) -> SpilloverSummary {
        spillover_summary_with(self.table, self.mask, self.basis).expect("dimensions checked in Network::new")
    }

    pub fn render(&self, format: ExportFormat) -> Result<String> {
        match format {
            ExportFormat::Csv => self.to_csv(),
            ExportFormat::Json => self.to_json(),
            ExportFormat::Dot => Ok(self.to_dot()),
        }
    }

    pub fn export(&self, format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.render(format)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn document(&self) -> NetworkDocument {
        NetworkDocument {
            kind: self.table.kind,
            horizon: self.table.horizon,
            labels: self.labels.to_vec(),
            shares: to_rows(&self.table.shares),
            mask: self.mask.to_rows(),
            summary: self.summary(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.document())?)
    }

    /// Percent table with one decimal: a FIX column, then TIX (with the total
    /// index in the FIX column), NIX, IN and OUT rows.
    pub fn to_csv(&self) -> Result<String> {
        let m = self.table.m_dim();
        let s = self.summary();
        let cells = basis_cells(self.table, self.mask, self.basis);
        let pct = |v: f64| format!("{v:.1}");
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["To/From".to_string()];
        header.extend(self.labels.iter().cloned());
        header.push("FIX".into());
        w.write_record(&header)?;
        for i in 0..m {
            let mut rec = vec![self.labels[i].clone()];
            rec.extend((0..m).map(|j| pct(100.0 * cells[(i, j)])));
            rec.push(pct(s.fix[i]));
            w.write_record(&rec)?;
        }
        let footer = |name: &str, vals: Vec<String>, last: String| {
            let mut rec = vec![name.to_string()];
            rec.extend(vals);
            rec.push(last);
            rec
        };
        w.write_record(footer("TIX", s.tix.iter().map(|v| pct(*v)).collect(), pct(s.total_index)))?;
        w.write_record(footer("NIX", s.nix.iter().map(|v| pct(*v)).collect(), String::new()))?;
        w.write_record(footer("IN", s.in_deg.iter().map(usize::to_string).collect(), String::new()))?;
        w.write_record(footer("OUT", s.out_deg.iter().map(usize::to_string).collect(), String::new()))?;
        let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Directed graph with edges `j -> i` for every selected off-diagonal
    /// cell. Nodes carry total connectedness (`mass`) and the sign of NIX.
    pub fn to_dot(&self) -> String {
        let m = self.table.m_dim();
        let s = self.summary();
        let mut out = String::from("digraph spillover {\n");
        for i in 0..m {
            let sign = match s.nix[i] {
                v if v > 0.0 => "+",
                v if v < 0.0 => "-",
                _ => "0",
            };
            let _ = writeln!(
                out,
                "  {} [mass={}, net_sign=\"{sign}\"];",
                quote(&self.labels[i]),
                s.tix[i] + s.fix[i]
            );
        }
        for (i, j) in self.mask.active_pairs() {
            let _ = writeln!(
                out,
                "  {} -> {} [weight={}];",
                quote(&self.labels[j]),
                quote(&self.labels[i]),
                self.table.shares[(i, j)]
            );
        }
        out.push_str("}\n");
        out
    }
}

fn quote(label: &str) -> String {
    format!("\"{}\"", label.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Reads the share block of a CSV written by [`Network::to_csv`]. Returns the
/// labels and the shares as fractions.
pub fn parse_table_csv(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(Error::InvalidArgument("table CSV needs a label column, series and FIX".into()));
    }
    let labels: Vec<String> = header.iter().skip(1).take(header.len() - 2).map(str::to_string).collect();
    let m = labels.len();
    let mut values = DMatrix::zeros(m, m);
    for (i, rec) in rdr.records().take(m).enumerate() {
        let rec = rec?;
        for j in 0..m {
            let field = rec.get(j + 1).unwrap_or("");
            let v: f64 = field.trim().parse().map_err(|_| Error::NonNumeric {
                row: i + 2,
                column: j + 2,
                value: field.to_string(),
            })?;
            values[(i, j)] = v / 100.0;
        }
    }
    Ok((labels, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(m: usize) -> Vec<String> {
        (1..=m).map(|i| format!("y{i}")).collect()
    }

    fn random_table(seed: u64, m: usize) -> FevdTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = DMatrix::from_fn(m, m, |i, j| if i == j { 2.0 } else { 0.0 } + rng.random::<f64>());
        for mut row in raw.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        FevdTable::from_shares(raw, DecompositionKind::Fevd, 5).unwrap()
    }

    #[test]
    fn identity_table_is_silent() {
        let t = FevdTable::from_shares(DMatrix::identity(3, 3), DecompositionKind::Fevd, 1).unwrap();
        let s = spillover_summary(&t, &EdgeMask::identity(3)).unwrap();
        assert_eq!(s.total_index, 0.0);
        assert!(s.fix.iter().chain(&s.tix).chain(&s.nix).all(|v| *v == 0.0));
        assert!(s.in_deg.iter().chain(&s.out_deg).all(|d| *d == 0));
    }

    #[test]
    fn masked_cells_do_not_count() {
        let t = FevdTable::from_shares(
            DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.4, 0.6]),
            DecompositionKind::Fevd,
            1,
        )
        .unwrap();
        let mask = EdgeMask::from_active(2, &[(1, 0)]).unwrap();
        let s = spillover_summary(&t, &mask).unwrap();
        assert!((s.fix[0] - 0.0).abs() < 1e-12 && (s.fix[1] - 40.0).abs() < 1e-12);
        assert!((s.tix[0] - 40.0).abs() < 1e-12);
        assert!((s.total_index - 20.0).abs() < 1e-12);
        assert_eq!(s.in_deg, vec![0, 1]);
        assert_eq!(s.out_deg, vec![1, 0]);
        let d = spillover_summary_with(&t, &mask, IndexBasis::Dense).unwrap();
        assert!((d.total_index - 30.0).abs() < 1e-12);
        assert_eq!(d.in_deg, vec![0, 1]);
    }

    #[test]
    fn summary_invariants() {
        for seed in 0..20 {
            let t = random_table(seed, 6);
            let full = spillover_summary(&t, &EdgeMask::all_ones(6)).unwrap();
            let diag_mean = (0..6).map(|i| t.shares[(i, i)]).sum::<f64>() / 6.0 * 100.0;
            assert!((full.total_index + diag_mean - 100.0).abs() < 0.1);
            assert!(full.nix.iter().sum::<f64>().abs() < 1e-10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits = DMatrix::from_fn(6, 6, |i, j| if i == j || rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 });
            let mask = EdgeMask::from_matrix(&bits).unwrap();
            let s = spillover_summary(&t, &mask).unwrap();
            assert_eq!(s.in_deg.iter().sum::<usize>(), mask.edge_count());
            assert_eq!(s.out_deg.iter().sum::<usize>(), mask.edge_count());
            assert!(s.in_deg.iter().chain(&s.out_deg).all(|d| *d <= 5));
            for (n, (t, f)) in s.nix.iter().zip(s.tix.iter().zip(&s.fix)) {
                assert_eq!(*n, t - f);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let t = random_table(1, 3);
        assert!(spillover_summary(&t, &EdgeMask::identity(4)).is_err());
        let l = labels(2);
        assert!(Network::new(&l, &t, &EdgeMask::identity(3)).is_err());
    }

    #[test]
    fn empty_mask_dot_has_isolated_nodes() {
        let t = random_table(2, 4);
        let l = labels(4);
        let mask = EdgeMask::identity(4);
        let dot = Network::new(&l, &t, &mask).unwrap().to_dot();
        assert_eq!(dot.matches("mass=").count(), 4);
        assert!(!dot.contains("->"));
    }

    #[test]
    fn full_two_node_dot() {
        let t = FevdTable::from_shares(
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.25, 0.75]),
            DecompositionKind::Gfevd,
            3,
        )
        .unwrap();
        let l = vec!["a".to_string(), "b".to_string()];
        let mask = EdgeMask::all_ones(2);
        let dot = Network::new(&l, &t, &mask).unwrap().to_dot();
        assert_eq!(dot.matches("->").count(), 2);
        assert!(dot.contains("\"b\" -> \"a\" [weight=0.3];"));
        assert!(dot.contains("\"a\" -> \"b\" [weight=0.25];"));
        // a: TIX 25, FIX 30 -> net receiver
        assert!(dot.contains("\"a\" [mass=55, net_sign=\"-\"];"));
    }

    #[test]
    fn csv_round_trip() {
        let t = random_table(3, 5);
        let l = labels(5);
        let mask = EdgeMask::all_ones(5);
        let net = Network::new(&l, &t, &mask).unwrap();
        let text = net.to_csv().unwrap();
        let (back_labels, back) = parse_table_csv(&text).unwrap();
        assert_eq!(back_labels, l);
        for (a, b) in back.iter().zip(t.shares.iter()) {
            assert!((a - b).abs() <= 0.0005 + 1e-12);
        }
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 5 + 4);
        assert!(lines[6].starts_with("TIX,"));
        assert!(lines[9].starts_with("OUT,4,4"));
    }

    #[test]
    fn json_keeps_full_precision() {
        let t = random_table(4, 3);
        let l = labels(3);
        let mask = EdgeMask::all_ones(3);
        let net = Network::new(&l, &t, &mask).unwrap();
        let doc: NetworkDocument = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        assert_eq!(doc.shares, to_rows(&t.shares));
        assert_eq!(doc.summary, net.summary());
    }

    #[test]
    fn labels_are_escaped() {
        let t = random_table(5, 2);
        let l = vec!["a \"q\"".to_string(), "b".to_string()];
        let mask = EdgeMask::all_ones(2);
        let dot = Network::new(&l, &t, &mask).unwrap().to_dot();
        assert!(dot.contains("\"a \\\"q\\\"\""));
    }
}
