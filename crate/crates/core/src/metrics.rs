//! Confusion matrices and the signal-vs-background efficiency.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use thiserror::Error;

use crate::render::{ImageTensor, Rgb};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class {class} out of range for {n_classes} classes")]
    OutOfRange { class: usize, n_classes: usize },
    #[error("efficiency needs at least two classes")]
    TooFewClasses,
    #[error("no {0} samples in the matrix")]
    EmptyGroup(&'static str),
    #[error("predictions file line {line}: {message}")]
    Predictions { line: usize, message: String },
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "confusion matrix must be square");
            for (p, &c) in row.iter().enumerate() {
                m.counts[t * n + p] = c;
            }
        }
        m
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n_classes..(truth + 1) * self.n_classes]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.n_classes).map(|i| self.get(i, i)).sum();
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            diag as f64 / total as f64
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    /// Element-wise sum, for combining partial matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n_classes, other.n_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.n_classes).map(|t| self.row(t).to_vec()).collect()
    }

    /// Raw counts as CSV with a header of class names.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut s = String::from("true\\pred");
        for p in 0..self.n_classes {
            let _ = write!(s, ",{}", label(class_names, p));
        }
        s.push('\n');
        for t in 0..self.n_classes {
            s.push_str(&label(class_names, t));
            for p in 0..self.n_classes {
                let _ = write!(s, ",{}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

fn label(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| i.to_string())
}

/// Counts `(label, prediction)` pairs.
pub fn confusion(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut m = ConfusionMatrix::zeros(n_classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        for class in [p, t] {
            if class >= n_classes {
                return Err(MetricsError::OutOfRange { class, n_classes });
            }
        }
        m.add(t, p);
    }
    Ok(m)
}

/// Row-normalized fractions (per-class recall). Empty rows stay zero.
pub fn normalize_rows(m: &ConfusionMatrix) -> Vec<Vec<f64>> {
    (0..m.n_classes())
        .map(|t| {
            let sum = m.row_sum(t);
            m.row(t)
                .iter()
                .map(|&c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 })
                .collect()
        })
        .collect()
}

pub fn normalized_csv(m: &ConfusionMatrix, class_names: &[String]) -> String {
    let norm = normalize_rows(m);
    let mut s = String::from("true\\pred");
    for p in 0..m.n_classes() {
        let _ = write!(s, ",{}", label(class_names, p));
    }
    s.push('\n');
    for (t, row) in norm.iter().enumerate() {
        s.push_str(&label(class_names, t));
        for v in row {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}

/// How [`signal_background_efficiency`] is defined, for reports.
pub const EFFICIENCY_DEFINITION: &str = "balanced binary accuracy (TPR + TNR) / 2 after collapsing all \
non-signal classes into one background class; equals the accuracy under equal signal and background priors";

/// Collapses the matrix to signal vs pooled background and returns
/// `(TPR + TNR) / 2`: the accuracy one would get with equal priors.
pub fn signal_background_efficiency(m: &ConfusionMatrix, signal_class: usize) -> Result<f64, MetricsError> {
    let n = m.n_classes();
    if n < 2 {
        return Err(MetricsError::TooFewClasses);
    }
    if signal_class >= n {
        return Err(MetricsError::OutOfRange {
            class: signal_class,
            n_classes: n,
        });
    }
    let signal_total = m.row_sum(signal_class);
    if signal_total == 0 {
        return Err(MetricsError::EmptyGroup("signal"));
    }
    let (mut bg_total, mut bg_as_bg) = (0u64, 0u64);
    for t in (0..n).filter(|&t| t != signal_class) {
        bg_total += m.row_sum(t);
        bg_as_bg += m.row_sum(t) - m.get(t, signal_class);
    }
    if bg_total == 0 {
        return Err(MetricsError::EmptyGroup("background"));
    }
    let tpr = m.get(signal_class, signal_class) as f64 / signal_total as f64;
    let tnr = bg_as_bg as f64 / bg_total as f64;
    Ok(0.5 * (tpr + tnr))
}

/// White-to-blue heat map of a row-normalized matrix, one square cell per
/// entry with a one-pixel grid.
pub fn heatmap(values: &[Vec<f64>], cell: u32) -> ImageTensor {
    let n = values.len() as u32;
    let side = n * cell + 1;
    let mut img = ImageTensor::filled(side, side, Rgb([60, 60, 60]));
    for (t, row) in values.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let shade = |hi: f64| (255.0 - (255.0 - hi) * v).round() as u8;
            let color = Rgb([shade(8.0), shade(48.0), shade(107.0)]);
            let (x0, y0) = (p as u32 * cell + 1, t as u32 * cell + 1);
            for y in y0..y0 + cell - 1 {
                for x in x0..x0 + cell - 1 {
                    img.set(x, y, color);
                }
            }
        }
    }
    img
}

/// Heat map scaled by the largest count.
pub fn raw_heatmap(m: &ConfusionMatrix, cell: u32) -> ImageTensor {
    let max = m.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let values: Vec<Vec<f64>> = m
        .rows()
        .iter()
        .map(|r| r.iter().map(|&c| c as f64 / max).collect())
        .collect();
    heatmap(&values, cell)
}

/// One row of a predictions file: `event_id,pred,prob_0,…,prob_{n-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub event_id: String,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
}

pub fn predictions_header(n_classes: usize) -> String {
    let mut s = String::from("event_id,pred");
    for c in 0..n_classes {
        let _ = write!(s, ",prob_{c}");
    }
    s
}

pub fn write_predictions(rows: &[Prediction], n_classes: usize) -> String {
    let mut s = predictions_header(n_classes);
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", r.event_id, r.predicted);
        for p in &r.probabilities {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
    }
    s
}

/// Parses a predictions file. The header must start with `event_id,pred`;
/// probability columns are optional.
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<Prediction>, MetricsError> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| MetricsError::Predictions { line: line_no, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if i == 0 {
            if !line.starts_with("event_id,pred") {
                return Err(err("header must start with `event_id,pred`".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let event_id = fields.next().unwrap_or_default().to_string();
        let predicted = fields
            .next()
            .ok_or_else(|| err("missing pred".into()))?
            .trim()
            .parse::<usize>()
            .map_err(|e| err(format!("bad pred: {e}")))?;
        let probabilities = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("bad probability: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Prediction {
            event_id,
            predicted,
            probabilities,
        });
    }
    Ok(out)
}
