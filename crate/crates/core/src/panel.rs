//! Loading, validating, standardizing and windowing multivariate panels.
//!
//! A panel is a `T x m` matrix with one row per time point and one column per
//! series. Column order is preserved everywhere because the Cholesky
//! identification depends on it.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A validated `T x m` observation matrix with unique series labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    observations: DMatrix<f64>,
    labels: Vec<String>,
    /// Opaque row labels taken from a leading date column, if one was present.
    row_labels: Option<Vec<String>>,
}

impl Panel {
    pub fn new(observations: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if observations.nrows() == 0 || observations.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "a panel needs at least one row and one column".into(),
            ));
        }
        if labels.len() != observations.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} series",
                labels.len(),
                observations.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate series label {label:?}"
                )));
            }
        }
        for (idx, v) in observations.iter().enumerate() {
            if !v.is_finite() {
                // column-major storage
                let (row, column) = (idx % observations.nrows(), idx / observations.nrows());
                return Err(Error::MissingValue {
                    row: row + 1,
                    column: column + 1,
                });
            }
        }
        Ok(Self {
            observations,
            labels,
            row_labels: None,
        })
    }

    /// Panel with generated labels `y1..ym`.
    pub fn from_matrix(observations: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=observations.ncols()).map(|i| format!("y{i}")).collect();
        Self::new(observations, labels)
    }

    pub fn with_row_labels(mut self, row_labels: Vec<String>) -> Result<Self> {
        if row_labels.len() != self.t_len() {
            return Err(Error::Dimension(format!(
                "{} row labels for {} rows",
                row_labels.len(),
                self.t_len()
            )));
        }
        self.row_labels = Some(row_labels);
        Ok(self)
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.observations
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    pub fn t_len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn m_dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn column(&self, label: &str) -> Option<DVector<f64>> {
        let j = self.labels.iter().position(|l| l == label)?;
        Some(self.observations.column(j).into_owned())
    }

    /// Drops one series by label and returns it alongside the remaining panel.
    pub fn split_off_column(&self, label: &str) -> Result<(Panel, DVector<f64>)> {
        let j = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::InvalidArgument(format!("no series named {label:?}")))?;
        let column = self.observations.column(j).into_owned();
        let rest = self.observations.clone().remove_column(j);
        let mut labels = self.labels.clone();
        labels.remove(j);
        let mut panel = Panel::new(rest, labels)?;
        panel.row_labels = self.row_labels.clone();
        Ok((panel, column))
    }

    /// Rejects panels with fewer than `min` series (a VAR network needs two).
    pub fn require_series(&self, min: usize) -> Result<()> {
        if self.m_dim() < min {
            return Err(Error::InvalidArgument(format!(
                "need at least {min} data columns, found {}",
                self.m_dim()
            )));
        }
        Ok(())
    }
}

/// A panel whose columns have unit sample variance, plus the scales used.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedPanel {
    pub panel: Panel,
    /// Per-series sample standard deviations of the raw data.
    pub scales: Vec<f64>,
}

impl StandardizedPanel {
    pub fn observations(&self) -> &DMatrix<f64> {
        self.panel.observations()
    }

    pub fn t_len(&self) -> usize {
        self.panel.t_len()
    }

    pub fn m_dim(&self) -> usize {
        self.panel.m_dim()
    }

    /// Undo the scaling.
    pub fn destandardize(&self) -> Panel {
        let mut obs = self.panel.observations.clone();
        for (j, scale) in self.scales.iter().enumerate() {
            obs.column_mut(j).scale_mut(*scale);
        }
        Panel {
            observations: obs,
            labels: self.panel.labels.clone(),
            row_labels: self.panel.row_labels.clone(),
        }
    }
}

/// Reads a rectangular numeric CSV file.
pub fn load_panel(path: impl AsRef<Path>, has_header: bool, date_column: bool) -> Result<Panel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, has_header, date_column)
}

/// Same as [`load_panel`] over any reader.
pub fn read_panel<R: Read>(reader: R, has_header: bool, date_column: bool) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    let skip = usize::from(date_column);
    let mut header: Option<Vec<String>> = None;
    if has_header {
        match records.next() {
            Some(rec) => {
                let rec = rec?;
                header = Some(rec.iter().skip(skip).map(str::to_owned).collect());
            }
            None => return Err(Error::InvalidArgument("empty CSV input".into())),
        }
    }

    let mut width = header.as_ref().map(|h| h.len() + skip);
    let mut values = Vec::new();
    let mut row_labels = Vec::new();
    let mut t_len = 0usize;
    for (idx, rec) in records.enumerate() {
        let rec = rec?;
        // file line number, for messages
        let row = idx + 1 + usize::from(has_header);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRow {
                row,
                expected,
                found: rec.len(),
            });
        }
        if date_column {
            row_labels.push(rec.get(0).unwrap_or_default().to_owned());
        }
        for (col, cell) in rec.iter().enumerate().skip(skip) {
            let column = col + 1;
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na")
            {
                return Err(Error::MissingValue { row, column });
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column,
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row,
                    column,
                    value: cell.to_owned(),
                });
            }
            values.push(v);
        }
        t_len += 1;
    }

    let m = width.map_or(0, |w| w.saturating_sub(skip));
    if t_len == 0 || m == 0 {
        return Err(Error::InvalidArgument("CSV contains no data".into()));
    }
    let observations = DMatrix::from_row_slice(t_len, m, &values);
    let panel = match header {
        Some(labels) => Panel::new(observations, labels)?,
        None => Panel::from_matrix(observations)?,
    };
    if date_column {
        panel.with_row_labels(row_labels)
    } else {
        Ok(panel)
    }
}

/// Writes a panel as CSV with a header row (and the date column when present).
///
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_panel<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = Vec::with_capacity(panel.m_dim() + 1);
    if panel.row_labels.is_some() {
        header.push("date");
    }
    header.extend(panel.labels.iter().map(String::as_str));
    wtr.write_record(&header)?;
    for t in 0..panel.t_len() {
        let mut rec: Vec<String> = Vec::with_capacity(panel.m_dim() + 1);
        if let Some(rows) = &panel.row_labels {
            rec.push(rows[t].clone());
        }
        rec.extend(panel.observations.row(t).iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel(panel, std::io::BufWriter::new(file))
}

/// Divides each column by its sample standard deviation (denominator `T - 1`).
///
/// The mean is left in place; the VAR intercept absorbs it.
pub fn standardize(panel: &Panel) -> Result<StandardizedPanel> {
    let t = panel.t_len();
    if t < 2 {
        return Err(Error::TooFewObservations(
            "standardizing needs at least 2 rows".into(),
        ));
    }
    let mut obs = panel.observations.clone();
    let mut scales = Vec::with_capacity(panel.m_dim());
    for (j, label) in panel.labels.iter().enumerate() {
        let col = obs.column(j);
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = (ss / (t as f64 - 1.0)).sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ZeroVariance(label.clone()));
        }
        obs.column_mut(j).unscale_mut(sd);
        scales.push(sd);
    }
    Ok(StandardizedPanel {
        panel: Panel {
            observations: obs,
            labels: panel.labels.clone(),
            row_labels: panel.row_labels.clone(),
        },
        scales,
    })
}

/// Replaces every column by its OLS residuals on `[1, factor]`.
pub fn residualize_on_factor(panel: &Panel, factor: &DVector<f64>) -> Result<Panel> {
    let t = panel.t_len();
    if factor.len() != t {
        return Err(Error::Dimension(format!(
            "factor has {} observations, panel has {t}",
            factor.len()
        )));
    }
    let f_mean = factor.mean();
    let f_centered = factor.add_scalar(-f_mean);
    let sxx = f_centered.norm_squared();
    let scale = factor.amax().max(1.0);
    if sxx <= 1e-12 * scale * scale * t as f64 {
        return Err(Error::InvalidArgument(
            "factor is constant and collinear with the intercept".into(),
        ));
    }
    let mut obs = panel.observations.clone();
    for j in 0..panel.m_dim() {
        let y = panel.observations.column(j);
        let y_mean = y.mean();
        let slope = f_centered.dot(&y) / sxx;
        let intercept = y_mean - slope * f_mean;
        for i in 0..t {
            obs[(i, j)] = y[i] - intercept - slope * factor[i];
        }
    }
    Ok(Panel {
        observations: obs,
        labels: panel.labels.clone(),
        row_labels: panel.row_labels.clone(),
    })
}
