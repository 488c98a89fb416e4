//! Pearson and Spearman correlation, and correlation tables over metric
//! spreadsheets with missing cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!("correlation needs n >= 2, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("correlation input is not finite".into()));
    }
    Ok(())
}

/// Sample Pearson correlation, two-pass.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pcc(&average_ranks(x), &average_ranks(y))
}

/// Labeled `R × C` table of metric values; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

const MISSING: [&str; 6] = ["", "na", "nan", "n/a", "-", "null"];

impl MetricTable {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        for labels in [&row_labels, &col_labels] {
            let mut seen = std::collections::HashSet::new();
            for l in labels {
                if !seen.insert(l) {
                    return Err(Error::InvalidArgument(format!("duplicate label {l:?}")));
                }
            }
        }
        if values.len() != row_labels.len() || values.iter().any(|r| r.len() != col_labels.len()) {
            return Err(Error::InvalidArgument("table shape does not match its labels".into()));
        }
        Ok(Self { row_labels, col_labels, values })
    }

    /// Parse a CSV whose first column holds row labels and whose header row
    /// names the metrics. Empty, `NA`, `NaN` and `-` cells are missing.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
            .clone();
        if header.len() < 2 {
            return Err(Error::Csv { line: 1, message: "need a label column and at least one metric".into() });
        }
        let col_labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut row_labels = Vec::new();
        let mut values = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Csv {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            row_labels.push(rec[0].to_owned());
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    if MISSING.contains(&cell.to_ascii_lowercase().as_str()) {
                        return Ok(None);
                    }
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| Error::Csv { line, message: format!("unparsable numeric cell {cell:?}") })
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        if values.is_empty() {
            return Err(Error::Csv { line: 2, message: "no data rows".into() });
        }
        Self::new(row_labels, col_labels, values)
    }

    pub fn column_index(&self, label: &str) -> Result<usize> {
        self.col_labels
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown column {label:?}")))
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Negate a column in place, leaving missing cells missing.
    pub fn negate(&mut self, label: &str) -> Result<()> {
        let j = self.column_index(label)?;
        for row in &mut self.values {
            if let Some(v) = row[j].as_mut() {
                *v = -*v;
            }
        }
        Ok(())
    }

    /// Values of two columns over the rows where both are present.
    pub fn complete_pairs(&self, a: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
        self.values
            .iter()
            .filter_map(|r| Some((r[a]?, r[b]?)))
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub pcc: f64,
    pub srcc: f64,
    /// Rows where both the metric and the target are present.
    pub n: usize,
}

/// Pearson and Spearman correlation of every other column against `target`,
/// using pairwise-complete rows.
pub fn correlate_table(table: &MetricTable, target: &str) -> Result<Vec<CorrelationRow>> {
    let t = table.column_index(target)?;
    let mut out = Vec::with_capacity(table.col_labels.len() - 1);
    for (j, label) in table.col_labels.iter().enumerate() {
        if j == t {
            continue;
        }
        let (x, y) = table.complete_pairs(j, t);
        if x.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "column {label:?} shares only {} complete rows with {target:?}",
                x.len()
            )));
        }
        let wrap = |e: Error| Error::InvalidArgument(format!("column {label:?}: {e}"));
        out.push(CorrelationRow {
            metric: label.clone(),
            pcc: pcc(&x, &y).map_err(wrap)?,
            srcc: srcc(&x, &y).map_err(wrap)?,
            n: x.len(),
        });
    }
    Ok(out)
}

/// CSV mirror of a correlation table: `metric,pcc,srcc,n`.
pub fn correlations_to_csv(rows: &[CorrelationRow]) -> String {
    let mut s = String::from("metric,pcc,srcc,n\n");
    for r in rows {
        let label = if r.metric.contains([',', '"', '\n']) {
            format!("\"{}\"", r.metric.replace('"', "\"\""))
        } else {
            r.metric.clone()
        };
        s.push_str(&format!("{label},{},{},{}\n", r.pcc, r.srcc, r.n));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcc_exact_cases() {
        assert_eq!(pcc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pcc(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), -1.0);
    }

    #[test]
    fn constant_input_is_undefined() {
        let err = pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(err.to_string(), "undefined correlation (zero variance)");
        assert!(srcc(&[1.0, 2.0], &[5.0, 5.0]).is_err());
    }

    #[test]
    fn srcc_cases() {
        assert_eq!(srcc(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]).unwrap(), 1.0);
        assert_eq!(srcc(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 30.0]).unwrap(), 1.0);
        // 1 - 6·Σd²/(n(n²-1)) with d = (0, 1, 1, 0)
        assert_eq!(srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn table_missing_cells_are_pairwise() {
        let csv = "vae,gfid,a,b\nv1,1,2,\nv2,2,4,1\nv3,3,6,5\nv4,4,8,2\n";
        let table = MetricTable::from_csv(csv).unwrap();
        let rows = correlate_table(&table, "gfid").unwrap();
        assert_eq!(rows[0].metric, "a");
        assert_eq!((rows[0].pcc, rows[0].srcc, rows[0].n), (1.0, 1.0, 4));
        assert_eq!(rows[1].n, 3);
    }

    #[test]
    fn unknown_target() {
        let table = MetricTable::from_csv("vae,gfid\nv1,1\nv2,2\n").unwrap();
        assert!(correlate_table(&table, "nope").is_err());
    }

    #[test]
    fn all_missing_pair_rejected() {
        let table = MetricTable::from_csv("vae,gfid,a\nv1,1,\nv2,2,NA\nv3,3,-\n").unwrap();
        assert!(correlate_table(&table, "gfid").is_err());
    }

    #[test]
    fn negation_flips_sign() {
        let mut table = MetricTable::from_csv("vae,gfid,psnr\nv1,1,30\nv2,2,25\nv3,4,27\n").unwrap();
        let before = correlate_table(&table, "gfid").unwrap()[0].pcc;
        table.negate("psnr").unwrap();
        assert_eq!(correlate_table(&table, "gfid").unwrap()[0].pcc, -before);
    }
}
