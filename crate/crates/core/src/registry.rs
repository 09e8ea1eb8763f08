//! Registry CSV reading and writing.
//!
//! One row per validation. Required columns: `cpm_id`, `study_id`, `auc`, and
//! either `se` or both `ci_lower` and `ci_upper` (a 95% CI, converted with
//! `se = (upper - lower) / 3.92`). Optional: `seq` (order within the CPM;
//! file order is used when absent) and `dev_auc` (development AUC).
//!
//! Incomplete rows are dropped and tallied in a [`FilterReport`]; CPMs with
//! at least one surviving validation are kept, in order of first appearance.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{se_from_ci95, CpmSeries, ValidationStudy};
use crate::sim::CpmTruth;

/// Maps logical column names to the headers used in a particular file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub cpm_id: String,
    pub study_id: String,
    pub auc: String,
    pub se: String,
    pub ci_lower: String,
    pub ci_upper: String,
    pub seq: String,
    pub dev_auc: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            cpm_id: "cpm_id".into(),
            study_id: "study_id".into(),
            auc: "auc".into(),
            se: "se".into(),
            ci_lower: "ci_lower".into(),
            ci_upper: "ci_upper".into(),
            seq: "seq".into(),
            dev_auc: "dev_auc".into(),
        }
    }
}

impl ColumnMap {
    /// Applies overrides of the form `logical=header`, e.g. `auc=c_statistic`.
    pub fn with_overrides<'a>(mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        for pair in pairs {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("column mapping '{pair}' is not key=header")))?;
            let slot = match key.trim() {
                "cpm_id" => &mut self.cpm_id,
                "study_id" => &mut self.study_id,
                "auc" => &mut self.auc,
                "se" => &mut self.se,
                "ci_lower" => &mut self.ci_lower,
                "ci_upper" => &mut self.ci_upper,
                "seq" => &mut self.seq,
                "dev_auc" => &mut self.dev_auc,
                other => return Err(Error::invalid(format!("unknown column '{other}'"))),
            };
            *slot = value.trim().to_string();
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub missing_auc: usize,
    pub missing_se: usize,
    pub nonpositive_se: usize,
    pub auc_out_of_range: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.missing_auc + self.missing_se + self.nonpositive_se + self.auc_out_of_range
    }
}

/// Before/after counts of the completeness filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub rows_in: usize,
    pub cpms_in: usize,
    pub rows_surviving: usize,
    pub cpms_surviving: usize,
    pub dropped: DropCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    pub series: Vec<CpmSeries>,
    pub report: FilterReport,
}

pub fn parse_registry(path: &Path, columns: &ColumnMap) -> Result<Registry> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_registry(file, columns)
}

struct Row {
    cpm: String,
    study: String,
    seq: Option<u32>,
    auc: f64,
    se: f64,
    dev_auc: Option<f64>,
}

pub fn read_registry<R: Read>(reader: R, columns: &ColumnMap) -> Result<Registry> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::MalformedHeader(format!("missing column '{name}'")));
    let cpm_col = need(&columns.cpm_id)?;
    let study_col = need(&columns.study_id)?;
    let auc_col = need(&columns.auc)?;
    let se_col = find(&columns.se);
    let ci_cols = find(&columns.ci_lower).zip(find(&columns.ci_upper));
    if se_col.is_none() && ci_cols.is_none() {
        return Err(Error::MalformedHeader(format!(
            "need '{}' or both '{}' and '{}'",
            columns.se, columns.ci_lower, columns.ci_upper
        )));
    }
    let seq_col = find(&columns.seq);
    let dev_col = find(&columns.dev_auc);

    let mut report = FilterReport::default();
    let mut order: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Row> = Vec::new();

    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        report.rows_in += 1;
        let field = |i: usize| record.get(i).filter(|v| !v.is_empty() && !v.eq_ignore_ascii_case("na"));
        let number = |i: Option<usize>| -> Result<Option<f64>> {
            match i.and_then(field) {
                None => Ok(None),
                Some(v) => v
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::MalformedData(format!("row {}: '{v}' is not a number", line + 2))),
            }
        };
        let cpm = field(cpm_col)
            .ok_or_else(|| Error::MalformedData(format!("row {}: empty cpm id", line + 2)))?
            .to_string();
        if !seen.contains_key(&cpm) {
            seen.insert(cpm.clone(), order.len());
            order.push(cpm.clone());
        }
        let study = field(study_col).unwrap_or("").to_string();

        let Some(auc) = number(Some(auc_col))? else {
            report.dropped.missing_auc += 1;
            continue;
        };
        let se = match number(se_col)? {
            Some(se) => Some(se),
            None => match ci_cols {
                Some((lo, hi)) => match (number(Some(lo))?, number(Some(hi))?) {
                    (Some(l), Some(h)) => Some(se_from_ci95(l, h)),
                    _ => None,
                },
                None => None,
            },
        };
        let Some(se) = se else {
            report.dropped.missing_se += 1;
            continue;
        };
        if !(se > 0.0 && se.is_finite()) {
            report.dropped.nonpositive_se += 1;
            continue;
        }
        if !(auc > 0.0 && auc < 1.0) {
            report.dropped.auc_out_of_range += 1;
            continue;
        }
        let seq = match seq_col.and_then(field) {
            None => None,
            Some(v) => Some(
                v.parse::<u32>()
                    .map_err(|_| Error::MalformedData(format!("row {}: bad seq '{v}'", line + 2)))?,
            ),
        };
        rows.push(Row {
            cpm,
            study,
            seq,
            auc,
            se,
            dev_auc: number(dev_col)?,
        });
    }
    report.cpms_in = order.len();
    report.rows_surviving = rows.len();
    if rows.is_empty() {
        return Err(Error::NoSurvivingRows {
            rows_in: report.rows_in,
        });
    }

    let mut grouped: Vec<Vec<Row>> = (0..order.len()).map(|_| Vec::new()).collect();
    for row in rows {
        grouped[seen[&row.cpm]].push(row);
    }
    let mut series = Vec::new();
    for (label, group) in order.into_iter().zip(grouped) {
        if group.is_empty() {
            continue;
        }
        let dev_auc = group.iter().find_map(|r| r.dev_auc);
        let studies = group
            .into_iter()
            .enumerate()
            .map(|(j, r)| {
                let seq = r.seq.unwrap_or(j as u32);
                let study = if r.study.is_empty() { format!("s{}", seq + 1) } else { r.study };
                ValidationStudy::new(study, seq, r.auc, r.se)
            })
            .collect::<Result<Vec<_>>>()?;
        series.push(CpmSeries::new(label, dev_auc, studies).map_err(|e| Error::MalformedData(e.to_string()))?);
    }
    report.cpms_surviving = series.len();
    Ok(Registry { series, report })
}

/// Writes the canonical schema (`cpm_id,study_id,seq,auc,se,dev_auc`) with
/// round-trip float formatting.
pub fn write_registry<W: Write>(writer: W, registry: &[CpmSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cpm_id", "study_id", "seq", "auc", "se", "dev_auc"])?;
    for s in registry {
        let dev = s.development_auc().map(|d| d.to_string()).unwrap_or_default();
        for st in s.studies() {
            w.write_record([
                s.label(),
                st.label(),
                &st.sequence_index().to_string(),
                &st.auc().to_string(),
                &st.se().to_string(),
                &dev,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Latent values of a simulated registry, one row per validation.
pub fn write_truth<W: Write>(writer: W, registry: &[CpmSeries], truth: &[CpmTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cpm_id", "study_id", "cpm_auc", "tau", "study_true_auc"])?;
    for (s, t) in registry.iter().zip(truth) {
        for (st, a) in s.studies().iter().zip(&t.study_aucs) {
            w.write_record([
                s.label(),
                st.label(),
                &t.auc.to_string(),
                &t.tau.to_string(),
                &a.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
