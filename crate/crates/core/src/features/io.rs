//! CSV schemas: features (`patient_id,tumor_id,phase,<features...>`),
//! survival (`patient_id,time_months,event`) and patient covariates
//! (`patient_id,<covariates...>`).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureTable, Phase, TumorRecord};

const KEY_COLUMNS: [&str; 3] = ["patient_id", "tumor_id", "phase"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub patient_id: String,
    pub time_months: f64,
    pub event: bool,
}

fn parse_err(line: usize, msg: impl Into<String>) -> FeatureError {
    FeatureError::Parse { line, msg: msg.into() }
}

pub fn read_features_from<R: Read>(r: R) -> Result<FeatureTable, FeatureError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || header.iter().take(3).ne(KEY_COLUMNS) {
        return Err(parse_err(1, format!("header must start with {}", KEY_COLUMNS.join(","))));
    }
    let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let phase: Phase = row[2].parse().map_err(|e: String| parse_err(line, e))?;
        let features = row
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(line, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(TumorRecord {
            patient_id: row[0].to_string(),
            tumor_id: row[1].to_string(),
            phase,
            diameter_mm: None,
            volume_mm3: None,
            features,
        });
    }
    FeatureTable::new(names, records)
}

pub fn write_features_to<W: Write>(w: W, table: &FeatureTable) -> Result<(), FeatureError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(KEY_COLUMNS.iter().copied().chain(table.names.iter().map(String::as_str)))?;
    for r in &table.records {
        let mut row = vec![r.patient_id.clone(), r.tumor_id.clone(), r.phase.to_string()];
        row.extend(r.features.iter().map(|v| v.to_string()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_survival_from<R: Read>(r: R) -> Result<Vec<SurvivalRecord>, FeatureError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["patient_id", "time_months", "event"]) {
        return Err(parse_err(1, "header must be patient_id,time_months,event"));
    }
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let time: f64 = row[1].parse().map_err(|e| parse_err(line, format!("time: {e}")))?;
        if !(time.is_finite() && time > 0.0) {
            return Err(parse_err(line, "time_months must be finite and positive"));
        }
        let event = match &row[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("event must be 0 or 1, got `{other}`"))),
        };
        if !seen.insert(row[0].to_string()) {
            return Err(parse_err(line, format!("duplicate patient `{}`", &row[0])));
        }
        out.push(SurvivalRecord { patient_id: row[0].to_string(), time_months: time, event });
    }
    Ok(out)
}

pub fn write_survival_to<W: Write>(w: W, records: &[SurvivalRecord]) -> Result<(), FeatureError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["patient_id", "time_months", "event"])?;
    for r in records {
        wr.write_record([r.patient_id.clone(), r.time_months.to_string(), u8::from(r.event).to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Patient-level covariates for multivariate Cox models. Only complete
/// cases are kept; patients with an empty or `NA` cell are listed in
/// `dropped`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub names: Vec<String>,
    pub patient_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub dropped: Vec<String>,
}

pub fn read_covariates_from<R: Read>(r: R) -> Result<CovariateTable, FeatureError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "patient_id" {
        return Err(parse_err(1, "header must be patient_id followed by at least one covariate"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut t = CovariateTable { names, patient_ids: Vec::new(), rows: Vec::new(), dropped: Vec::new() };
    let mut seen = std::collections::BTreeSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if !seen.insert(row[0].to_string()) {
            return Err(parse_err(line, format!("duplicate patient `{}`", &row[0])));
        }
        let mut values = Vec::with_capacity(t.names.len());
        let mut complete = true;
        for s in row.iter().skip(1) {
            if s.is_empty() || s.eq_ignore_ascii_case("na") {
                complete = false;
                continue;
            }
            let v: f64 = s.parse().map_err(|e| parse_err(line, format!("`{s}`: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite covariate `{s}`")));
            }
            values.push(v);
        }
        if complete {
            t.patient_ids.push(row[0].to_string());
            t.rows.push(values);
        } else {
            t.dropped.push(row[0].to_string());
        }
    }
    Ok(t)
}

pub fn read_covariates(path: impl AsRef<Path>) -> Result<CovariateTable, FeatureError> {
    read_covariates_from(File::open(path)?)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTable, FeatureError> {
    read_features_from(File::open(path)?)
}

pub fn write_features(path: impl AsRef<Path>, table: &FeatureTable) -> Result<(), FeatureError> {
    write_features_to(File::create(path)?, table)
}

pub fn read_survival(path: impl AsRef<Path>) -> Result<Vec<SurvivalRecord>, FeatureError> {
    read_survival_from(File::open(path)?)
}

pub fn write_survival(path: impl AsRef<Path>, records: &[SurvivalRecord]) -> Result<(), FeatureError> {
    write_survival_to(File::create(path)?, records)
}
