use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, RunManifest};
use crate::stats::{kaplan_meier, stratify, RiskGroup, SurvivalCurve};

/// One row of the risk-group survival table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmRow {
    pub time: f64,
    #[serde(rename = "S_low")]
    pub s_low: f64,
    #[serde(rename = "S_high")]
    pub s_high: f64,
    pub n_risk_low: usize,
    pub n_risk_high: usize,
}

/// Kaplan–Meier curves of the median-split risk groups on the grid of all
/// distinct observed times. An empty group has S = 1 and nobody at risk.
pub fn km_table(hazards: &[f64], times: &[f64], events: &[bool]) -> Result<Vec<KmRow>, PipelineError> {
    let groups = stratify(hazards)?;
    let curve = |g: RiskGroup| -> Result<(Vec<f64>, Option<SurvivalCurve>), PipelineError> {
        let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
        let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let d: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        let c = if t.is_empty() { None } else { Some(kaplan_meier(&t, &d)?) };
        Ok((t, c))
    };
    let (tl, low) = curve(RiskGroup::Low)?;
    let (th, high) = curve(RiskGroup::High)?;
    let mut grid = times.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let s = |c: &Option<SurvivalCurve>, t: f64| c.as_ref().map_or(1.0, |c| c.eval(t));
    let at_risk = |ts: &[f64], t: f64| ts.iter().filter(|&&x| x >= t).count();
    Ok(grid
        .into_iter()
        .map(|t| KmRow { time: t, s_low: s(&low, t), s_high: s(&high, t), n_risk_low: at_risk(&tl, t), n_risk_high: at_risk(&th, t) })
        .collect())
}

#[derive(Serialize)]
struct HazardRow<'a> {
    patient_id: &'a str,
    hazard: f64,
    risk_group: RiskGroup,
}

#[derive(Serialize)]
struct NullRow {
    replicate: usize,
    c_index: f64,
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(PipelineError::io(path))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct HazardEntry {
    patient_id: String,
    hazard: f64,
}

/// Write a `patient_id,hazard` table.
pub fn write_hazards(path: impl AsRef<Path>, hazards: &[(String, f64)]) -> Result<(), PipelineError> {
    let rows: Vec<HazardEntry> = hazards.iter().map(|(p, h)| HazardEntry { patient_id: p.clone(), hazard: *h }).collect();
    write_csv(path.as_ref(), &["patient_id", "hazard"], &rows)
}

/// Read `patient_id` and `hazard` columns; any other columns are ignored.
pub fn read_hazards(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>, PipelineError> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize::<HazardEntry>().map(|e| e.map(|e| (e.patient_id, e.hazard)).map_err(Into::into)).collect()
}

/// Write a survival table as produced by [`km_table`].
pub fn write_km(path: impl AsRef<Path>, rows: &[KmRow]) -> Result<(), PipelineError> {
    write_csv(path.as_ref(), &["time", "S_low", "S_high", "n_risk_low", "n_risk_high"], rows)
}

/// Write `manifest.json`, `hazards.csv`, `km.csv` and `null.csv` to
/// `out_dir`, creating it if needed. Every file is a pure function of the
/// manifest.
pub fn emit_results(manifest: &RunManifest, out_dir: impl AsRef<Path>) -> Result<(), PipelineError> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    let path = dir.join("manifest.json");
    fs::write(&path, manifest.to_json() + "\n").map_err(PipelineError::io(&path))?;

    let groups = stratify(&manifest.hazards)?;
    let rows: Vec<HazardRow> = manifest
        .patients
        .iter()
        .zip(&manifest.hazards)
        .zip(groups)
        .map(|((p, &h), g)| HazardRow { patient_id: p, hazard: h, risk_group: g })
        .collect();
    write_csv(&dir.join("hazards.csv"), &["patient_id", "hazard", "risk_group"], &rows)?;

    let km = km_table(&manifest.hazards, &manifest.times, &manifest.events)?;
    write_km(dir.join("km.csv"), &km)?;

    let null: Vec<NullRow> = manifest
        .randomization
        .iter()
        .flat_map(|r| r.null.iter().enumerate().map(|(replicate, &c_index)| NullRow { replicate, c_index }))
        .collect();
    write_csv(&dir.join("null.csv"), &["replicate", "c_index"], &null)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{PipelineConfig, RepeatResult};

    fn manifest() -> RunManifest {
        let hazards = vec![0.1, 0.9, 0.2, 0.8];
        RunManifest {
            tool_version: "test".into(),
            config: PipelineConfig::default(),
            patients: ["a", "b", "c", "d"].map(String::from).to_vec(),
            times: vec![4.0, 1.0, 3.0, 2.0],
            events: vec![false, true, true, true],
            excluded: vec![],
            repeats: vec![RepeatResult {
                repeat: 0,
                folds: vec![0, 1, 0, 1],
                fold_c_index: vec![None, None],
                c_index: 1.0,
                hazards: hazards.clone(),
            }],
            mean_c_index: 1.0,
            std_c_index: 0.0,
            hazards,
            randomization: None,
            evaluation: None,
            wall_clock_seconds: 0.5,
        }
    }

    #[test]
    fn golden_km_and_headers() {
        let dir = tempfile::tempdir().unwrap();
        emit_results(&manifest(), dir.path()).unwrap();
        let km = fs::read_to_string(dir.path().join("km.csv")).unwrap();
        // low = {a: 4 censored, c: 3 event}, high = {b: 1 event, d: 2 event}
        let expected = "time,S_low,S_high,n_risk_low,n_risk_high\n\
                        1.0,1.0,0.5,2,2\n\
                        2.0,1.0,0.0,2,1\n\
                        3.0,0.5,0.0,2,0\n\
                        4.0,0.5,0.0,1,0\n";
        assert_eq!(km, expected);
        assert_eq!(fs::read_to_string(dir.path().join("null.csv")).unwrap(), "replicate,c_index\n");
        let hz = fs::read_to_string(dir.path().join("hazards.csv")).unwrap();
        assert_eq!(hz.lines().next().unwrap(), "patient_id,hazard,risk_group");
        assert_eq!(hz.lines().nth(2).unwrap(), "b,0.9,high");
    }

    #[test]
    fn hazards_round_trip_and_extra_columns() {
        let dir = tempfile::tempdir().unwrap();
        let h = vec![("p1".to_string(), 0.25), ("p2".to_string(), -1.5e-17)];
        write_hazards(dir.path().join("h.csv"), &h).unwrap();
        assert_eq!(read_hazards(dir.path().join("h.csv")).unwrap(), h);
        emit_results(&manifest(), dir.path()).unwrap();
        let back = read_hazards(dir.path().join("hazards.csv")).unwrap();
        assert_eq!(back[1], ("b".to_string(), 0.9));
    }

    #[test]
    fn byte_stable() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = manifest();
        emit_results(&m, a.path()).unwrap();
        emit_results(&m, b.path()).unwrap();
        for f in ["manifest.json", "hazards.csv", "km.csv", "null.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let back: RunManifest = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
