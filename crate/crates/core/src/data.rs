//! Trial data model, CSV ingestion and the potential-outcome contrast.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Continuous,
    Survival,
}

impl OutcomeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeKind::Continuous => "continuous",
            OutcomeKind::Survival => "survival",
        }
    }
}

impl std::str::FromStr for OutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Ok(OutcomeKind::Continuous),
            "survival" => Ok(OutcomeKind::Survival),
            other => Err(Error::InvalidArgument(format!(
                "unknown outcome kind '{other}' (expected continuous or survival)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Continuous(f64),
    Survival { time: f64, event: bool },
}

impl Outcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            Outcome::Continuous(_) => OutcomeKind::Continuous,
            Outcome::Survival { .. } => OutcomeKind::Survival,
        }
    }
}

/// One randomized subject: treatment arm, covariates and observed outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub treatment: bool,
    pub covariates: Vec<f64>,
    pub outcome: Outcome,
}

/// A validated two-arm randomized trial.
///
/// Subject order is authoritative: every per-subject vector produced downstream
/// (imputations, contrasts, scores, residuals) is indexed in this order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    subjects: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
    outcome_kind: OutcomeKind,
    study_label: String,
}

impl TrialDataset {
    pub fn new(
        subjects: Vec<SubjectRecord>,
        covariate_names: Vec<String>,
        outcome_kind: OutcomeKind,
        study_label: impl Into<String>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        if p == 0 {
            return Err(Error::Validation(
                "covariate dimension p ≥ 1 required".into(),
            ));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.covariates.len() != p {
                return Err(Error::Validation(format!(
                    "subject {} ('{}') has {} covariates, expected identical dimension p = {}",
                    i + 1,
                    s.id,
                    s.covariates.len(),
                    p
                )));
            }
            if s.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "subject '{}': covariates must be finite",
                    s.id
                )));
            }
            if s.outcome.kind() != outcome_kind {
                return Err(Error::Validation(format!(
                    "subject '{}': outcome is not of kind {}",
                    s.id,
                    outcome_kind.as_str()
                )));
            }
            match s.outcome {
                Outcome::Continuous(y) if !y.is_finite() => {
                    return Err(Error::Validation(format!(
                        "subject '{}': outcome must be finite",
                        s.id
                    )));
                }
                Outcome::Survival { time, .. } if !(time > 0.0 && time.is_finite()) => {
                    return Err(Error::Validation(format!(
                        "subject '{}': time > 0 required (got {time})",
                        s.id
                    )));
                }
                _ => {}
            }
        }
        let n_treated = subjects.iter().filter(|s| s.treatment).count();
        if n_treated == 0 || n_treated == subjects.len() {
            return Err(Error::Validation(
                "both treatment arms must be non-empty".into(),
            ));
        }
        Ok(TrialDataset {
            subjects,
            covariate_names,
            outcome_kind,
            study_label: study_label.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn study_label(&self) -> &str {
        &self.study_label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.study_label = label.into();
        self
    }

    pub fn ids(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.id.as_str()).collect()
    }

    /// n×p covariate matrix in subject order.
    pub fn covariates(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.p(), |i, j| self.subjects[i].covariates[j])
    }

    pub fn treatments(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.treatment).collect()
    }

    pub fn continuous_outcomes(&self) -> Result<Vec<f64>> {
        self.subjects
            .iter()
            .map(|s| match s.outcome {
                Outcome::Continuous(y) => Ok(y),
                Outcome::Survival { .. } => Err(Error::InvalidArgument(
                    "dataset has survival outcomes, not continuous".into(),
                )),
            })
            .collect()
    }

    /// (times, events) for a survival dataset.
    pub fn survival_outcomes(&self) -> Result<(Vec<f64>, Vec<bool>)> {
        self.subjects
            .iter()
            .map(|s| match s.outcome {
                Outcome::Survival { time, event } => Ok((time, event)),
                Outcome::Continuous(_) => Err(Error::InvalidArgument(
                    "dataset has continuous outcomes, not survival".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }

    /// True when `other` has the same covariate names (in order) and outcome kind.
    pub fn same_schema(&self, other: &TrialDataset) -> bool {
        self.covariate_names == other.covariate_names && self.outcome_kind == other.outcome_kind
    }

    /// Concatenates datasets sharing one schema, preserving the given order.
    pub fn pooled<'a, I>(datasets: I, label: impl Into<String>) -> Result<TrialDataset>
    where
        I: IntoIterator<Item = &'a TrialDataset>,
    {
        let mut iter = datasets.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("cannot pool zero datasets".into()))?;
        let mut subjects = first.subjects.clone();
        for d in iter {
            if !first.same_schema(d) {
                return Err(Error::Validation(format!(
                    "study '{}' does not share the covariate schema of '{}'",
                    d.study_label, first.study_label
                )));
            }
            subjects.extend(d.subjects.iter().cloned());
        }
        TrialDataset::new(
            subjects,
            first.covariate_names.clone(),
            first.outcome_kind,
            label,
        )
    }
}

/// Loads a dataset from CSV; the study label defaults to the file stem.
pub fn load_dataset(path: impl AsRef<Path>, kind: OutcomeKind) -> Result<TrialDataset> {
    let path = path.as_ref();
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "study".to_string());
    let file = File::open(path)?;
    read_dataset(file, kind, label)
}

/// Survival when the header has both `time` and `event`, continuous when it
/// has `outcome`.
pub fn detect_outcome_kind(path: impl AsRef<Path>) -> Result<OutcomeKind> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(File::open(path.as_ref())?);
    let header = rdr.headers().map_err(csv_io)?;
    let has = |name: &str| header.iter().any(|h| h.trim() == name);
    if has("time") && has("event") {
        Ok(OutcomeKind::Survival)
    } else if has("outcome") {
        Ok(OutcomeKind::Continuous)
    } else {
        Err(Error::Parse {
            row: 1,
            message: "header names neither an 'outcome' column nor 'time' and 'event' columns".into(),
        })
    }
}

struct ColumnLayout {
    id: usize,
    treatment: usize,
    outcome: Vec<usize>,
    covariates: Vec<usize>,
}

fn layout(header: &csv::StringRecord, kind: OutcomeKind) -> Result<ColumnLayout> {
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                message: format!("header is missing required column '{name}'"),
            })
    };
    let id = find("id")?;
    let treatment = find("treatment")?;
    let outcome = match kind {
        OutcomeKind::Continuous => vec![find("outcome")?],
        OutcomeKind::Survival => vec![find("time")?, find("event")?],
    };
    let reserved: Vec<usize> = [id, treatment].iter().chain(&outcome).copied().collect();
    let covariates: Vec<usize> = (0..header.len()).filter(|c| !reserved.contains(c)).collect();
    if covariates.is_empty() {
        return Err(Error::Parse {
            row: 1,
            message: "header names no covariate columns".into(),
        });
    }
    Ok(ColumnLayout {
        id,
        treatment,
        outcome,
        covariates,
    })
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64> {
    let field = field.trim();
    if field.is_empty() {
        return Err(Error::Validation(format!(
            "row {row}: missing value in column '{column}'"
        )));
    }
    field.parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("column '{column}': '{field}' is not a number"),
    })
}

fn parse_binary(field: &str, row: usize, column: &str, rule: &str) -> Result<bool> {
    let v = parse_f64(field, row, column)?;
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::Validation(format!("row {row}: {rule} violated (got {field})")))
    }
}

/// Reads a dataset from any CSV source. Accepts LF or CRLF line endings.
pub fn read_dataset<R: Read>(
    reader: R,
    kind: OutcomeKind,
    label: impl Into<String>,
) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = layout(&header, kind)?;
    let covariate_names: Vec<String> = cols
        .covariates
        .iter()
        .map(|&c| header[c].trim().to_string())
        .collect();

    let mut subjects = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        // header is line 1
        let row = k + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let id = record[cols.id].trim().to_string();
        let treatment = parse_binary(&record[cols.treatment], row, "treatment", "treatment ∈ {0,1}")?;
        let outcome = match kind {
            OutcomeKind::Continuous => {
                Outcome::Continuous(parse_f64(&record[cols.outcome[0]], row, "outcome")?)
            }
            OutcomeKind::Survival => {
                let time = parse_f64(&record[cols.outcome[0]], row, "time")?;
                if !(time > 0.0) {
                    return Err(Error::Validation(format!(
                        "row {row}: time > 0 violated (got {time})"
                    )));
                }
                let event = parse_binary(&record[cols.outcome[1]], row, "event", "event ∈ {0,1}")?;
                Outcome::Survival { time, event }
            }
        };
        let covariates = cols
            .covariates
            .iter()
            .zip(&covariate_names)
            .map(|(&c, name)| parse_f64(&record[c], row, name))
            .collect::<Result<Vec<f64>>>()?;
        subjects.push(SubjectRecord {
            id,
            treatment,
            covariates,
            outcome,
        });
    }
    TrialDataset::new(subjects, covariate_names, kind, label)
}

/// Writes the canonical CSV layout: `id,treatment,outcome` or
/// `id,treatment,time,event`, then the covariates. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_dataset<W: Write>(data: &TrialDataset, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<&str> = vec!["id", "treatment"];
    match data.outcome_kind {
        OutcomeKind::Continuous => header.push("outcome"),
        OutcomeKind::Survival => header.extend(["time", "event"]),
    }
    header.extend(data.covariate_names.iter().map(String::as_str));
    wtr.write_record(&header).map_err(csv_io)?;
    for s in &data.subjects {
        let mut row: Vec<String> = vec![s.id.clone(), u8::from(s.treatment).to_string()];
        match s.outcome {
            Outcome::Continuous(y) => row.push(y.to_string()),
            Outcome::Survival { time, event } => {
                row.push(time.to_string());
                row.push(u8::from(event).to_string());
            }
        }
        row.extend(s.covariates.iter().map(f64::to_string));
        wtr.write_record(&row).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// The potential-outcome contrast g(y1, y0) = y1 − y0.
#[inline]
pub fn contrast(y1: f64, y0: f64) -> f64 {
    y1 - y0
}

/// Imputed potential outcomes and their per-subject contrast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputedContrasts {
    pub yhat1: Vec<f64>,
    pub yhat0: Vec<f64>,
    pub contrast: Vec<f64>,
}

impl ImputedContrasts {
    /// Builds contrasts from externally imputed potential outcomes.
    pub fn from_predictions(yhat1: Vec<f64>, yhat0: Vec<f64>) -> Result<Self> {
        if yhat1.len() != yhat0.len() {
            return Err(Error::DimensionMismatch {
                expected: yhat1.len(),
                found: yhat0.len(),
            });
        }
        if yhat1.iter().chain(&yhat0).any(|v| !v.is_finite()) {
            return Err(Error::Validation("imputed outcomes must be finite".into()));
        }
        let contrast = yhat1.iter().zip(&yhat0).map(|(&a, &b)| contrast(a, b)).collect();
        Ok(ImputedContrasts {
            yhat1,
            yhat0,
            contrast,
        })
    }

    pub fn len(&self) -> usize {
        self.contrast.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contrast.is_empty()
    }

    /// Audit export: `id,yhat0,yhat1,contrast`.
    pub fn write_csv<W: Write>(&self, ids: &[&str], writer: W) -> Result<()> {
        if ids.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: ids.len(),
            });
        }
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        wtr.write_record(["id", "yhat0", "yhat1", "contrast"]).map_err(csv_io)?;
        for (i, id) in ids.iter().enumerate() {
            wtr.write_record([
                id.to_string(),
                self.yhat0[i].to_string(),
                self.yhat1[i].to_string(),
                self.contrast[i].to_string(),
            ])
            .map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CONTINUOUS: &str = "id,treatment,outcome,age,stage\n\
        a,1,2.5,61,2\n\
        b,0,-1,55,3\n\
        c,1,0.25,70,1\n";

    #[test]
    fn loads_three_rows() {
        let d = read_dataset(CONTINUOUS.as_bytes(), OutcomeKind::Continuous, "s").unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
        assert_eq!(d.covariate_names(), &["age", "stage"]);
        assert_eq!(d.ids(), vec!["a", "b", "c"]);
        assert_eq!(d.continuous_outcomes().unwrap(), vec![2.5, -1.0, 0.25]);
    }

    #[test]
    fn accepts_crlf() {
        let crlf = CONTINUOUS.replace('\n', "\r\n");
        let d = read_dataset(crlf.as_bytes(), OutcomeKind::Continuous, "s").unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.subjects()[2].covariates, vec![70.0, 1.0]);
    }

    #[test]
    fn rejects_treatment_two() {
        let src = "id,treatment,outcome,x\na,2,1,0\nb,0,1,0\n";
        let err = read_dataset(src.as_bytes(), OutcomeKind::Continuous, "s").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("treatment ∈ {0,1}"), "{err}");
    }

    #[test]
    fn rejects_zero_survival_time() {
        let src = "id,treatment,time,event,x\na,1,0,1,0\nb,0,2,1,0\n";
        let err = read_dataset(src.as_bytes(), OutcomeKind::Survival, "s").unwrap_err();
        assert!(err.to_string().contains("time > 0"), "{err}");
    }

    #[test]
    fn malformed_row_names_row_number() {
        let src = "id,treatment,outcome,x\na,1,1,0\nb,0,oops,0\n";
        let err = read_dataset(src.as_bytes(), OutcomeKind::Continuous, "s").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_covariate() {
        let src = "id,treatment,outcome,x\na,1,1,\nb,0,1,0\n";
        let err = read_dataset(src.as_bytes(), OutcomeKind::Continuous, "s").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_single_arm() {
        let src = "id,treatment,outcome,x\na,1,1,0\nb,1,1,0\n";
        let err = read_dataset(src.as_bytes(), OutcomeKind::Continuous, "s").unwrap_err();
        assert!(err.to_string().contains("both treatment arms"));
    }

    #[test]
    fn duplicate_ids_are_distinct_subjects() {
        let src = "id,treatment,outcome,x\na,1,1,0\na,0,1,0\n";
        let d = read_dataset(src.as_bytes(), OutcomeKind::Continuous, "s").unwrap();
        assert_eq!(d.n(), 2);
    }

    #[test]
    fn reads_survival_columns_in_any_order() {
        let src = "x,event,id,time,treatment\n0.5,1,a,3.5,1\n-1,0,b,2,0\n";
        let d = read_dataset(src.as_bytes(), OutcomeKind::Survival, "s").unwrap();
        let (t, e) = d.survival_outcomes().unwrap();
        assert_eq!(t, vec![3.5, 2.0]);
        assert_eq!(e, vec![true, false]);
        assert_eq!(d.covariate_names(), &["x"]);
    }

    #[test]
    fn canonical_text_round_trips_bytes() {
        let d = read_dataset(CONTINUOUS.as_bytes(), OutcomeKind::Continuous, "s").unwrap();
        let mut out = Vec::new();
        write_dataset(&d, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), CONTINUOUS);
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(contrast(5.0, 3.0), 2.0);
        assert_eq!(contrast(-1.5, 2.5), -4.0);
        assert_eq!(contrast(7.25, 7.25), 0.0);
    }

    #[test]
    fn imputed_contrast_is_exact_difference() {
        let c = ImputedContrasts::from_predictions(vec![1.0, 0.3], vec![0.1, 0.7]).unwrap();
        assert_eq!(c.contrast, vec![1.0 - 0.1, 0.3 - 0.7]);
        assert!(ImputedContrasts::from_predictions(vec![1.0], vec![]).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = TrialDataset> {
        (1usize..4, 2usize..12).prop_flat_map(|(p, n)| {
            proptest::collection::vec(
                (
                    any::<bool>(),
                    proptest::collection::vec(-1e6f64..1e6, p),
                    prop_oneof![Just(f64::MIN_POSITIVE), 1e-300f64..1e300],
                    any::<bool>(),
                ),
                n,
            )
            .prop_map(move |rows| {
                let mut subjects: Vec<SubjectRecord> = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (t, z, time, ev))| SubjectRecord {
                        id: format!("s{i}"),
                        treatment: t,
                        covariates: z,
                        outcome: Outcome::Survival { time, event: ev },
                    })
                    .collect();
                subjects[0].treatment = true;
                subjects[1].treatment = false;
                let names = (0..p).map(|j| format!("z{j}")).collect();
                TrialDataset::new(subjects, names, OutcomeKind::Survival, "prop").unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn serialization_round_trips_bit_exactly(d in arb_dataset()) {
            let mut first = Vec::new();
            write_dataset(&d, &mut first).unwrap();
            let back = read_dataset(first.as_slice(), OutcomeKind::Survival, "prop").unwrap();
            prop_assert_eq!(&back, &d);
            let mut second = Vec::new();
            write_dataset(&back, &mut second).unwrap();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn contrast_is_antisymmetric(a in -1e12f64..1e12, b in -1e12f64..1e12) {
            prop_assert_eq!(contrast(a, b), -contrast(b, a));
            prop_assert_eq!(contrast(a, a), 0.0);
        }
    }
}
