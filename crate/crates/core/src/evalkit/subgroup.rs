use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{ImageRecord, Label};

/// Acquisition factor a subgroup table breaks records down by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Projection,
    Sensor,
    Sex,
    Source,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Projection, Factor::Sensor, Factor::Sex, Factor::Source];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Projection => "projection",
            Factor::Sensor => "sensor",
            Factor::Sex => "sex",
            Factor::Source => "source",
        }
    }

    /// Row heading used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            Factor::Projection => "Projection",
            Factor::Sensor => "Sensor",
            Factor::Sex => "Sex",
            Factor::Source => "DB",
        }
    }

    fn level(self, r: &ImageRecord) -> (u8, &'static str) {
        match self {
            Factor::Projection => (r.projection as u8, r.projection.as_str()),
            Factor::Sensor => (r.sensor as u8, r.sensor.as_str()),
            Factor::Sex => (r.sex as u8, r.sex.as_str()),
            Factor::Source => (r.source as u8, r.source.as_str()),
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Factor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Factor::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown factor {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub level: String,
    pub test_count: usize,
    pub hit_count: usize,
    /// Share of the (filtered) test records at this level, in percent.
    pub test_pct: f64,
    /// Share of the correctly predicted records at this level, in percent.
    pub hits_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTable {
    pub factor: Factor,
    pub class_filter: Option<Label>,
    pub rows: Vec<SubgroupRow>,
}

/// Breaks the records whose true class is `class_filter` (all records when
/// `None`) down by `factor`. Levels appear in the factor's declaration order.
pub fn subgroup_report(
    preds: &[Label],
    truth: &[Label],
    records: &[&ImageRecord],
    factor: Factor,
    class_filter: Option<Label>,
) -> Result<SubgroupTable, EvalError> {
    if preds.len() != truth.len() || records.len() != truth.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), truth: truth.len().min(records.len()) });
    }
    let mut levels: BTreeMap<(u8, &'static str), (usize, usize)> = BTreeMap::new();
    let (mut total, mut hits) = (0usize, 0usize);
    for ((p, t), r) in preds.iter().zip(truth).zip(records) {
        if class_filter.is_some_and(|c| c != *t) {
            continue;
        }
        let entry = levels.entry(factor.level(r)).or_default();
        entry.0 += 1;
        total += 1;
        if p == t {
            entry.1 += 1;
            hits += 1;
        }
    }
    let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    let rows = levels
        .into_iter()
        .map(|((_, name), (n, h))| SubgroupRow {
            level: name.to_string(),
            test_count: n,
            hit_count: h,
            test_pct: pct(n, total),
            hits_pct: pct(h, hits),
        })
        .collect();
    Ok(SubgroupTable { factor, class_filter, rows })
}

/// Renders one or more experiments side by side, one row per factor level:
/// `factor,level,test_pct,hits_<experiment>...`, percentages to one decimal.
/// Every experiment lists its tables in the same factor order; the test
/// share comes from the first experiment.
pub fn write_subgroup_csv(mut out: impl Write, experiments: &[(String, Vec<SubgroupTable>)]) -> std::io::Result<()> {
    let Some((_, first)) = experiments.first() else {
        return Ok(());
    };
    write!(out, "factor,level,test_pct")?;
    for (name, _) in experiments {
        write!(out, ",hits_{name}")?;
    }
    writeln!(out)?;
    for (k, table) in first.iter().enumerate() {
        for row in &table.rows {
            write!(out, "{},{},{:.1}", table.factor.title(), row.level, row.test_pct)?;
            for (_, tables) in experiments {
                let hits = tables
                    .get(k)
                    .and_then(|t| t.rows.iter().find(|r| r.level == row.level))
                    .map_or(0.0, |r| r.hits_pct);
                write!(out, ",{hits:.1}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Projection, Sensor, Sex, Source};
    use std::path::PathBuf;

    fn rec(i: usize, projection: Projection, label: Label) -> ImageRecord {
        ImageRecord {
            record_id: format!("r{i}"),
            image_path: PathBuf::from("x.png"),
            label,
            patient_id: format!("p{i}"),
            source: if i % 3 == 0 { Source::HM } else { Source::BIMCV },
            projection,
            sensor: if i % 2 == 0 { Sensor::CR } else { Sensor::DX },
            sex: if i % 5 == 0 { Sex::F } else { Sex::M },
            age: None,
        }
    }

    fn covid_set() -> Vec<ImageRecord> {
        (0..100)
            .map(|i| rec(i, if i < 79 { Projection::AP } else { Projection::PA }, Label::Covid19))
            .collect()
    }

    #[test]
    fn perfect_classifier_hits_equal_test_shares() {
        let recs = covid_set();
        let refs: Vec<&ImageRecord> = recs.iter().collect();
        let truth: Vec<Label> = recs.iter().map(|r| r.label).collect();
        for factor in Factor::ALL {
            let t = subgroup_report(&truth, &truth, &refs, factor, Some(Label::Covid19)).unwrap();
            for r in &t.rows {
                assert_eq!(r.test_pct, r.hits_pct);
            }
            let sum: f64 = t.rows.iter().map(|r| r.test_pct).sum();
            assert!((sum - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_shares_and_hits() {
        let recs = covid_set();
        let refs: Vec<&ImageRecord> = recs.iter().collect();
        let truth: Vec<Label> = recs.iter().map(|r| r.label).collect();
        // Miss 10 AP and 2 PA records.
        let preds: Vec<Label> = (0..100)
            .map(|i| if i < 10 || (79..81).contains(&i) { Label::Control } else { Label::Covid19 })
            .collect();
        let t = subgroup_report(&preds, &truth, &refs, Factor::Projection, Some(Label::Covid19)).unwrap();
        assert_eq!(t.rows[0].level, "AP");
        assert_eq!(t.rows[0].test_pct, 79.0);
        assert_eq!(t.rows[1].test_pct, 21.0);
        assert!((t.rows[0].hits_pct - 100.0 * 69.0 / 88.0).abs() < 1e-12);
    }

    #[test]
    fn single_level_is_full() {
        let recs: Vec<ImageRecord> = (0..5).map(|i| rec(i, Projection::PA, Label::Covid19)).collect();
        let refs: Vec<&ImageRecord> = recs.iter().collect();
        let truth = vec![Label::Covid19; 5];
        let preds = vec![Label::Covid19, Label::Control, Label::Covid19, Label::Covid19, Label::Control];
        let t = subgroup_report(&preds, &truth, &refs, Factor::Projection, None).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!((t.rows[0].test_pct, t.rows[0].hits_pct), (100.0, 100.0));
    }

    #[test]
    fn csv_layout() {
        let recs = covid_set();
        let refs: Vec<&ImageRecord> = recs.iter().collect();
        let truth: Vec<Label> = recs.iter().map(|r| r.label).collect();
        let tables: Vec<SubgroupTable> = Factor::ALL
            .iter()
            .map(|&f| subgroup_report(&truth, &truth, &refs, f, Some(Label::Covid19)).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_subgroup_csv(&mut buf, &[("raw".into(), tables.clone()), ("segment".into(), tables)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "factor,level,test_pct,hits_raw,hits_segment");
        assert_eq!(lines[1], "Projection,AP,79.0,79.0,79.0");
        assert!(lines.iter().any(|l| l.starts_with("DB,HM,")));
    }
}
