//! Image manifests, cross-validation folds and class weights.
//!
//! A manifest is a CSV file with the header
//! `record_id,image_path,label,patient_id,source,projection,sensor,sex,age`.
//! Empty cells mean "Unknown" for the optional enums and "absent" for age.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column order of the manifest CSV.
pub const MANIFEST_HEADER: [&str; 9] = [
    "record_id",
    "image_path",
    "label",
    "patient_id",
    "source",
    "projection",
    "sensor",
    "sex",
    "age",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate record_id at line {0}")]
    DuplicateRecordId(usize),
    #[error("unknown label {value:?} at line {line}")]
    UnknownLabel { line: usize, value: String },
    #[error("class {0} has fewer records than folds")]
    TooFewRecords(Label),
    #[error("class {0} has fewer patients than folds")]
    TooFewPatients(Label),
    #[error("class {0} has no records")]
    EmptyClass(Label),
    #[error("invalid fold request: {0}")]
    InvalidFolds(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Diagnostic class of a radiograph. The discriminant is the class index used
/// by every probability vector and confusion matrix in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Control = 0,
    Pneumonia = 1,
    Covid19 = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Control, Label::Pneumonia, Label::Covid19];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Control => "control",
            Label::Pneumonia => "pneumonia",
            Label::Covid19 => "covid19",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" | "normal" | "no finding" => Ok(Label::Control),
            "pneumonia" => Ok(Label::Pneumonia),
            "covid19" | "covid-19" | "covid" => Ok(Label::Covid19),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    HM,
    BIMCV,
    ACT,
    ChinaSet,
    Montgomery,
    CRX8,
    CheXpert,
    MIMIC,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 9] = [
        Source::HM,
        Source::BIMCV,
        Source::ACT,
        Source::ChinaSet,
        Source::Montgomery,
        Source::CRX8,
        Source::CheXpert,
        Source::MIMIC,
        Source::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::HM => "HM",
            Source::BIMCV => "BIMCV",
            Source::ACT => "ACT",
            Source::ChinaSet => "ChinaSet",
            Source::Montgomery => "Montgomery",
            Source::CRX8 => "CRX8",
            Source::CheXpert => "CheXpert",
            Source::MIMIC => "MIMIC",
            Source::Synthetic => "Synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Source::ALL
            .iter()
            .copied()
            .find(|src| src.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| t.to_string())
    }
}

/// Only AP and PA views are admitted; lateral views are rejected at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Projection {
    AP,
    PA,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sensor {
    CR,
    DX,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
    Unknown,
}

macro_rules! simple_enum_text {
    ($ty:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $text),*
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

simple_enum_text!(Projection { AP => "AP", PA => "PA", Unknown => "Unknown" });
simple_enum_text!(Sensor { CR => "CR", DX => "DX", Unknown => "Unknown" });
simple_enum_text!(Sex { M => "M", F => "F", Unknown => "Unknown" });

impl Projection {
    /// Empty and "unknown" map to `Unknown`; any other view (LAT, LL, ...) is rejected.
    fn parse(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AP" => Ok(Projection::AP),
            "PA" => Ok(Projection::PA),
            "" | "UNKNOWN" => Ok(Projection::Unknown),
            other => Err(format!("projection {other:?} is not AP, PA or Unknown")),
        }
    }
}

impl Sensor {
    fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "CR" => Sensor::CR,
            "DX" => Sensor::DX,
            _ => Sensor::Unknown,
        }
    }
}

impl Sex {
    fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Sex::M,
            "F" | "FEMALE" => Sex::F,
            _ => Sex::Unknown,
        }
    }
}

/// One radiograph and its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub record_id: String,
    pub image_path: PathBuf,
    pub label: Label,
    pub patient_id: String,
    pub source: Source,
    pub projection: Projection,
    pub sensor: Sensor,
    pub sex: Sex,
    pub age: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    record_id: String,
    image_path: String,
    label: String,
    patient_id: String,
    source: String,
    projection: String,
    sensor: String,
    sex: String,
    age: String,
}

fn parse_row(row: ManifestRow, line: usize, base: &Path) -> Result<ImageRecord, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRow { line, reason };
    if row.record_id.trim().is_empty() {
        return Err(malformed("empty record_id".into()));
    }
    if row.image_path.trim().is_empty() {
        return Err(malformed("empty image_path".into()));
    }
    let label = row
        .label
        .parse::<Label>()
        .map_err(|value| CorpusError::UnknownLabel { line, value })?;
    let source = row
        .source
        .parse::<Source>()
        .map_err(|v| malformed(format!("unknown source {v:?}")))?;
    let projection = Projection::parse(&row.projection).map_err(malformed)?;
    let age = match row.age.trim() {
        "" => None,
        s => {
            let a: f64 = s
                .parse()
                .map_err(|_| CorpusError::MalformedRow { line, reason: format!("age {s:?} is not a number") })?;
            if !(0.0..=130.0).contains(&a) {
                return Err(CorpusError::MalformedRow { line, reason: format!("age {a} outside [0, 130]") });
            }
            Some(a)
        }
    };
    let path = PathBuf::from(row.image_path.trim());
    let image_path = if path.is_absolute() { path } else { base.join(path) };
    Ok(ImageRecord {
        record_id: row.record_id.trim().to_string(),
        image_path,
        label,
        patient_id: row.patient_id.trim().to_string(),
        source,
        projection,
        sensor: Sensor::parse(&row.sensor),
        sex: Sex::parse(&row.sex),
        age,
    })
}

/// Reads and validates a manifest. Relative image paths are resolved against
/// the manifest's directory. Line numbers in errors are 1-based file lines
/// (the header is line 1).
pub fn load_manifest(path: &Path) -> Result<Vec<ImageRecord>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut seen = HashMap::new();
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CorpusError::MalformedRow { line, reason: e.to_string() })?;
        let record = parse_row(row, line, &base)?;
        if seen.insert(record.record_id.clone(), line).is_some() {
            return Err(CorpusError::DuplicateRecordId(line));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records in manifest format. Paths under the manifest directory
/// are written relative to it.
pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<(), CorpusError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        let image_path = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
        let age = r.age.map(|a| a.to_string()).unwrap_or_default();
        let unknown_blank = |s: &'static str| if s == "Unknown" { "" } else { s };
        w.write_record([
            r.record_id.as_str(),
            &image_path.to_string_lossy(),
            r.label.as_str(),
            r.patient_id.as_str(),
            r.source.as_str(),
            unknown_blank(r.projection.as_str()),
            unknown_blank(r.sensor.as_str()),
            unknown_blank(r.sex.as_str()),
            &age,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-class record counts, indexed by [`Label::index`].
pub fn class_counts(records: &[ImageRecord]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for r in records {
        counts[r.label.index()] += 1;
    }
    counts
}

/// Loss weight per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; 3]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; 3])
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    /// Inverse class frequency, `N / (K * N_c)`.
    pub fn from_counts(counts: [usize; 3]) -> Result<Self, CorpusError> {
        for label in Label::ALL {
            if counts[label.index()] == 0 {
                return Err(CorpusError::EmptyClass(label));
            }
        }
        let total: usize = counts.iter().sum();
        let k = counts.len() as f64;
        Ok(ClassWeights(counts.map(|n| total as f64 / (k * n as f64))))
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

pub fn class_weights(records: &[ImageRecord]) -> Result<ClassWeights, CorpusError> {
    ClassWeights::from_counts(class_counts(records))
}

/// One cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

/// Test fraction per fold: 10% while `k <= 10`, so five folds give five
/// disjoint 90/10 splits; `1/k` beyond that.
pub fn test_fraction(k: usize) -> f64 {
    (1.0 / k as f64).min(0.10)
}

/// Number of test records per fold for a class holding `n` records.
pub fn per_fold_test_size(n: usize, k: usize) -> usize {
    let target = ((n as f64) * test_fraction(k)).round() as usize;
    target.max(1).min(n / k)
}

struct Group<'a> {
    patient: &'a str,
    ids: Vec<&'a str>,
    counts: [usize; 3],
}

impl Group<'_> {
    fn primary(&self) -> usize {
        // Majority label; ties go to the lowest class index.
        let mut best = 0;
        for c in 1..3 {
            if self.counts[c] > self.counts[best] {
                best = c;
            }
        }
        best
    }
}

/// Builds `k` stratified folds whose test sets are pairwise disjoint.
///
/// With `patient_disjoint`, whole patients are assigned to a test set, so a
/// patient never appears in both train and test of one fold; per-class test
/// sizes then hit their target only as closely as patient sizes allow.
pub fn make_folds(
    records: &[ImageRecord],
    k: usize,
    seed: u64,
    patient_disjoint: bool,
) -> Result<Vec<FoldSplit>, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidFolds(format!("k = {k}, need at least 2")));
    }
    let counts = class_counts(records);
    for label in Label::ALL {
        if counts[label.index()] < k {
            return Err(CorpusError::TooFewRecords(label));
        }
    }

    // Groups are patients, or single records when patient_disjoint is off.
    // BTreeMap keeps grouping independent of input order.
    let mut grouped: BTreeMap<String, Group> = BTreeMap::new();
    for r in records {
        let key = if patient_disjoint { r.patient_id.clone() } else { r.record_id.clone() };
        let group = grouped.entry(key).or_insert_with(|| Group {
            patient: if patient_disjoint { &r.patient_id } else { &r.record_id },
            ids: Vec::new(),
            counts: [0; 3],
        });
        group.ids.push(&r.record_id);
        group.counts[r.label.index()] += 1;
    }

    let mut by_class: [Vec<&Group>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for g in grouped.values() {
        by_class[g.primary()].push(g);
    }
    if patient_disjoint {
        for label in Label::ALL {
            if by_class[label.index()].len() < k {
                return Err(CorpusError::TooFewPatients(label));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pool in by_class.iter_mut() {
        pool.sort_by(|a, b| a.patient.cmp(b.patient));
        pool.shuffle(&mut rng);
    }

    let targets = counts.map(|n| per_fold_test_size(n, k));
    let mut cursor: [Vec<bool>; 3] = by_class.clone().map(|p| vec![false; p.len()]);
    let mut test_sets: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];

    for test in test_sets.iter_mut() {
        for c in 0..3 {
            let target = targets[c];
            let mut taken = 0usize;
            let pool = &by_class[c];
            let used = &mut cursor[c];
            // First pass: fill without exceeding the target.
            for (i, g) in pool.iter().enumerate() {
                if taken >= target {
                    break;
                }
                if !used[i] && taken + g.counts[c] <= target {
                    used[i] = true;
                    taken += g.counts[c];
                    test.extend(g.ids.iter().map(|s| s.to_string()));
                }
            }
            // Second pass: allow overshooting by one record.
            if taken < target {
                for (i, g) in pool.iter().enumerate() {
                    if !used[i] && taken + g.counts[c] <= target + 1 {
                        used[i] = true;
                        test.extend(g.ids.iter().map(|s| s.to_string()));
                        break;
                    }
                }
            }
        }
    }

    let all_ids: BTreeSet<String> = records.iter().map(|r| r.record_id.clone()).collect();
    Ok(test_sets
        .into_iter()
        .enumerate()
        .map(|(fold_index, test_ids)| FoldSplit {
            fold_index,
            train_ids: all_ids.difference(&test_ids).cloned().collect(),
            test_ids,
        })
        .collect())
}

/// Stratified, seeded hold-out: returns `(kept, held_out)` record indices with
/// roughly `fraction` of every class held out (at least one record per class
/// that has two or more).
pub fn stratified_holdout(labels: &[Label], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        let n_hold = if idx.len() >= 2 {
            (((idx.len() as f64) * fraction).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        held.extend_from_slice(&idx[..n_hold]);
        kept.extend_from_slice(&idx[n_hold..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldJson {
    train: Vec<String>,
    test: Vec<String>,
}

/// Serializes folds as `{ "<fold_index>": { "train": [..], "test": [..] } }`.
pub fn folds_to_json(folds: &[FoldSplit]) -> Result<String, CorpusError> {
    let map: BTreeMap<String, FoldJson> = folds
        .iter()
        .map(|f| {
            (
                f.fold_index.to_string(),
                FoldJson {
                    train: f.train_ids.iter().cloned().collect(),
                    test: f.test_ids.iter().cloned().collect(),
                },
            )
        })
        .collect();
    Ok(serde_json::to_string_pretty(&map)?)
}

pub fn write_folds(path: &Path, folds: &[FoldSplit]) -> Result<(), CorpusError> {
    fs::write(path, folds_to_json(folds)?)?;
    Ok(())
}

pub fn read_folds(path: &Path) -> Result<Vec<FoldSplit>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let map: BTreeMap<String, FoldJson> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let mut folds = Vec::with_capacity(map.len());
    for (key, f) in map {
        let fold_index = key
            .parse()
            .map_err(|_| CorpusError::InvalidFolds(format!("fold key {key:?} is not an index")))?;
        folds.push(FoldSplit {
            fold_index,
            train_ids: f.train.into_iter().collect(),
            test_ids: f.test.into_iter().collect(),
        });
    }
    folds.sort_by_key(|f| f.fold_index);
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn record(id: &str, label: Label, patient: &str) -> ImageRecord {
        ImageRecord {
            record_id: id.into(),
            image_path: PathBuf::from(format!("{id}.png")),
            label,
            patient_id: patient.into(),
            source: Source::Synthetic,
            projection: Projection::PA,
            sensor: Sensor::DX,
            sex: Sex::Unknown,
            age: None,
        }
    }

    fn manifest(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", MANIFEST_HEADER.join(",")).unwrap();
        write!(f, "{body}").unwrap();
        f
    }

    #[test]
    fn parses_well_formed_rows() {
        let f = manifest(
            "a,a.png,control,p1,HM,AP,CR,M,54\n\
             b,b.png,pneumonia,p2,BIMCV,PA,DX,F,\n\
             c,c.png,covid19,p3,Synthetic,,,,\n",
        );
        let recs = load_manifest(f.path()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].label, Label::Control);
        assert_eq!(recs[0].age, Some(54.0));
        assert_eq!(recs[1].sex, Sex::F);
        assert_eq!(recs[1].age, None);
        assert_eq!(recs[2].projection, Projection::Unknown);
        assert_eq!(recs[2].sensor, Sensor::Unknown);
        assert_eq!(recs[2].source, Source::Synthetic);
    }

    #[test]
    fn lateral_projection_is_malformed() {
        let f = manifest("a,a.png,covid19,p1,HM,LAT,CR,M,\n");
        match load_manifest(f.path()) {
            Err(CorpusError::MalformedRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_reports_second_line() {
        let f = manifest(
            "a,a.png,control,p1,HM,AP,CR,M,\n\
             b,b.png,control,p1,HM,AP,CR,M,\n\
             c,c.png,control,p1,HM,AP,CR,M,\n\
             a,d.png,control,p1,HM,AP,CR,M,\n",
        );
        assert!(matches!(load_manifest(f.path()), Err(CorpusError::DuplicateRecordId(5))));
    }

    #[test]
    fn unknown_label_and_source_are_errors() {
        let f = manifest("a,a.png,flu,p1,HM,AP,CR,M,\n");
        assert!(matches!(load_manifest(f.path()), Err(CorpusError::UnknownLabel { line: 2, .. })));
        let f = manifest("a,a.png,control,p1,Nowhere,AP,CR,M,\n");
        assert!(matches!(load_manifest(f.path()), Err(CorpusError::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn age_out_of_range_is_rejected() {
        let f = manifest("a,a.png,control,p1,HM,AP,CR,M,131\n");
        assert!(matches!(load_manifest(f.path()), Err(CorpusError::MalformedRow { .. })));
    }

    #[test]
    fn missing_manifest() {
        assert!(matches!(
            load_manifest(Path::new("/nonexistent/manifest.csv")),
            Err(CorpusError::MissingFile(_))
        ));
    }

    #[test]
    fn manifest_write_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = vec![record("x", Label::Covid19, "p"), record("y", Label::Control, "q")];
        recs[0].age = Some(33.0);
        recs[1].projection = Projection::Unknown;
        for r in recs.iter_mut() {
            r.image_path = dir.path().join(&r.image_path);
        }
        let path = dir.path().join("m.csv");
        write_manifest(&path, &recs).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), recs);
    }

    #[test]
    fn weights_from_table_counts() {
        let w = ClassWeights::from_counts([45022, 21707, 7716]).unwrap();
        // 74445 / (3 * N_c), evaluated by hand.
        let expected = [0.551175, 1.143180, 3.216045];
        for (got, want) in w.0.iter().zip(expected) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn weights_balanced_and_skewed() {
        assert_eq!(ClassWeights::from_counts([10, 10, 10]).unwrap().0, [1.0; 3]);
        let w = ClassWeights::from_counts([1, 1, 998]).unwrap().0;
        assert!((w[0] - 333.3333).abs() < 1e-3);
        assert!((w[1] - 333.3333).abs() < 1e-3);
        assert!((w[2] - 0.334001).abs() < 1e-5);
        assert!(matches!(ClassWeights::from_counts([3, 0, 2]), Err(CorpusError::EmptyClass(Label::Pneumonia))));
    }

    #[test]
    fn per_fold_sizes_for_table_counts() {
        assert_eq!(per_fold_test_size(45022, 5), 4502);
        assert_eq!(per_fold_test_size(21707, 5), 2171);
        assert_eq!(per_fold_test_size(7716, 5), 772);
        assert_eq!(per_fold_test_size(100, 20), 5);
    }

    fn patient_corpus() -> Vec<ImageRecord> {
        // 100 records, 10 per patient, patients grouped by class.
        (0..100)
            .map(|i| {
                let label = Label::from_index((i / 10) % 3).unwrap();
                record(&format!("r{i:03}"), label, &format!("p{}", i / 10))
            })
            .collect()
    }

    #[test]
    fn patient_disjoint_folds() {
        let recs = patient_corpus();
        let folds = make_folds(&recs, 2, 7, true).unwrap();
        let patient: HashMap<&str, &str> =
            recs.iter().map(|r| (r.record_id.as_str(), r.patient_id.as_str())).collect();
        for f in &folds {
            assert!(f.train_ids.is_disjoint(&f.test_ids));
            let train_p: BTreeSet<_> = f.train_ids.iter().map(|id| patient[id.as_str()]).collect();
            let test_p: BTreeSet<_> = f.test_ids.iter().map(|id| patient[id.as_str()]).collect();
            assert!(train_p.is_disjoint(&test_p));
            assert_eq!(f.train_ids.len() + f.test_ids.len(), recs.len());
        }
    }

    #[test]
    fn too_few_patients() {
        let recs = patient_corpus();
        assert!(matches!(make_folds(&recs, 5, 7, true), Err(CorpusError::TooFewPatients(_))));
        let mut few = recs.clone();
        few.retain(|r| r.label != Label::Covid19 || r.record_id < "r025".to_string());
        assert!(matches!(make_folds(&few[..few.len()], 50, 1, false), Err(CorpusError::TooFewRecords(_))));
    }

    #[test]
    fn folds_are_deterministic_and_order_independent() {
        let recs: Vec<_> = (0..90)
            .map(|i| record(&format!("r{i:02}"), Label::from_index(i % 3).unwrap(), &format!("p{i}")))
            .collect();
        let a = make_folds(&recs, 5, 11, true).unwrap();
        let b = make_folds(&recs, 5, 11, true).unwrap();
        assert_eq!(a, b);
        let mut reversed = recs.clone();
        reversed.reverse();
        assert_eq!(make_folds(&reversed, 5, 11, true).unwrap(), a);
        assert_ne!(make_folds(&recs, 5, 12, true).unwrap(), a);
    }

    #[test]
    fn folds_json_roundtrip() {
        let recs: Vec<_> = (0..30)
            .map(|i| record(&format!("r{i:02}"), Label::from_index(i % 3).unwrap(), &format!("p{i}")))
            .collect();
        let folds = make_folds(&recs, 5, 3, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.json");
        write_folds(&path, &folds).unwrap();
        assert_eq!(read_folds(&path).unwrap(), folds);
        let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert!(raw["0"]["train"].is_array() && raw["4"]["test"].is_array());
    }

    #[test]
    fn holdout_is_stratified() {
        let labels: Vec<Label> = (0..60).map(|i| Label::from_index(i % 3).unwrap()).collect();
        let (kept, held) = stratified_holdout(&labels, 0.1, 5);
        assert_eq!(kept.len() + held.len(), 60);
        for label in Label::ALL {
            assert_eq!(held.iter().filter(|&&i| labels[i] == label).count(), 2);
        }
    }
}
