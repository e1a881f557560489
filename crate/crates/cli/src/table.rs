//! Feature CSV files: the sixteen feature columns in contract order, plus an
//! optional trailing `label` column.

use std::io::Write;
use std::path::Path;

use cled::forest::Dataset;
use cled::lingfeat::{csv_header, FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use cled::Label;

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureVector>,
    pub labels: Option<Vec<Label>>,
}

impl FeatureTable {
    pub fn dataset(&self) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| CliError::Data("feature file has no label column".into()))?;
        let pairs: Vec<(FeatureVector, Label)> =
            self.rows.iter().cloned().zip(labels.iter().copied()).collect();
        Ok(Dataset::from_features(&pairs))
    }
}

pub fn write_features(
    mut w: impl Write,
    rows: &[(FeatureVector, Option<Label>)],
    with_label: bool,
) -> Result<()> {
    writeln!(w, "{}", csv_header(with_label))?;
    for (fv, label) in rows {
        let mut line = fv
            .as_slice()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        if with_label {
            let l = label.ok_or_else(|| CliError::Internal("missing label".into()))?;
            line.push(',');
            line.push_str(&l.as_u8().to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let with_label = match names.len() {
        n if n == NUM_FEATURES => false,
        n if n == NUM_FEATURES + 1 && names[NUM_FEATURES] == "label" => true,
        _ => {
            return Err(CliError::Data(format!(
                "{}: expected columns {} [,label], found {}",
                path.display(),
                FEATURE_NAMES.join(","),
                names.join(",")
            )))
        }
    };
    if names[..NUM_FEATURES] != FEATURE_NAMES {
        return Err(CliError::Data(format!(
            "{}: feature columns do not match the feature contract (found {})",
            path.display(),
            names.join(",")
        )));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = |m: String| CliError::Data(format!("{}:{line}: {m}", path.display()));
        let vals = rec
            .iter()
            .take(NUM_FEATURES)
            .map(|v| v.trim().parse::<f64>().map_err(|_| at(format!("bad number {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureVector::from_slice(&vals).ok_or_else(|| at("wrong field count".into()))?);
        if with_label {
            let l = rec.get(NUM_FEATURES).unwrap_or_default();
            labels.push(l.parse::<Label>().map_err(|_| at(format!("bad label {l:?}")))?);
        }
    }
    Ok(FeatureTable {
        rows,
        labels: with_label.then_some(labels),
    })
}
