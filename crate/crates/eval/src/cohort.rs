use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatient {
    pub id: String,
    /// Predicted probability of class 1 (responder).
    pub probability: f64,
    pub label: u8,
}

/// Per-patient class-1 probabilities with ground-truth labels.
///
/// Probabilities are finite and within `[0, 1]`, labels are 0 or 1 and ids
/// are unique; [`ScoredCohort::new`] enforces all three.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ScoredPatient>", into = "Vec<ScoredPatient>")]
pub struct ScoredCohort {
    patients: Vec<ScoredPatient>,
}

impl TryFrom<Vec<ScoredPatient>> for ScoredCohort {
    type Error = EvalError;

    fn try_from(patients: Vec<ScoredPatient>) -> Result<Self> {
        Self::new(patients)
    }
}

impl From<ScoredCohort> for Vec<ScoredPatient> {
    fn from(c: ScoredCohort) -> Self {
        c.patients
    }
}

impl ScoredCohort {
    pub fn new(patients: Vec<ScoredPatient>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(patients.len());
        for p in &patients {
            if !p.probability.is_finite() || !(0.0..=1.0).contains(&p.probability) {
                return Err(EvalError::InvalidCohort(format!(
                    "patient {}: probability {} outside [0, 1]",
                    p.id, p.probability
                )));
            }
            if p.label > 1 {
                return Err(EvalError::InvalidCohort(format!("patient {}: label {} not in {{0, 1}}", p.id, p.label)));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(EvalError::InvalidCohort(format!("duplicate patient id {}", p.id)));
            }
        }
        Ok(Self { patients })
    }

    /// Builds a cohort with generated ids `p0000, p0001, ...`.
    pub fn from_scores(probabilities: &[f64], labels: &[u8]) -> Result<Self> {
        if probabilities.len() != labels.len() {
            return Err(EvalError::Contract(format!(
                "{} probabilities but {} labels",
                probabilities.len(),
                labels.len()
            )));
        }
        Self::new(
            probabilities
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&probability, &label))| ScoredPatient {
                    id: format!("p{i:04}"),
                    probability,
                    label,
                })
                .collect(),
        )
    }

    pub fn patients(&self) -> &[ScoredPatient] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.patients.iter().map(|p| p.probability).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.patients.iter().map(|p| p.label).collect()
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.patients.iter().filter(|p| p.label == 1).count();
        (self.patients.len() - pos, pos)
    }

    pub fn require_both_classes(&self) -> Result<()> {
        if self.patients.is_empty() {
            return Err(EvalError::EmptyCohort);
        }
        match self.class_counts() {
            (0, _) => Err(EvalError::SingleClass { present: 1 }),
            (_, 0) => Err(EvalError::SingleClass { present: 0 }),
            _ => Ok(()),
        }
    }

    /// Returns `other` reordered to this cohort's patient order, after
    /// checking that both cover the same patients with the same labels.
    pub fn align(&self, other: &ScoredCohort) -> Result<ScoredCohort> {
        if self.len() != other.len() {
            return Err(EvalError::Contract(format!(
                "paired cohorts differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let lookup: BTreeMap<&str, &ScoredPatient> = other.patients.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut aligned = Vec::with_capacity(self.len());
        for p in &self.patients {
            let q = lookup
                .get(p.id.as_str())
                .ok_or_else(|| EvalError::Contract(format!("patient {} missing from paired cohort", p.id)))?;
            if q.label != p.label {
                return Err(EvalError::Contract(format!("patient {} has conflicting labels", p.id)));
            }
            aligned.push((*q).clone());
        }
        Ok(ScoredCohort { patients: aligned })
    }

    /// Patients at the given positions, in order. Repeated positions get
    /// suffixed ids so the result stays a valid cohort.
    pub fn subset(&self, indices: &[usize]) -> ScoredCohort {
        let mut counts = vec![0usize; self.len()];
        let patients = indices
            .iter()
            .map(|&i| {
                let mut p = self.patients[i].clone();
                if counts[i] > 0 {
                    p.id = format!("{}#{}", p.id, counts[i]);
                }
                counts[i] += 1;
                p
            })
            .collect();
        ScoredCohort { patients }
    }

    /// Reads `id,probability,label` CSV (with header) or JSON lines, chosen
    /// by extension (`.jsonl`/`.json` → JSON lines, anything else → CSV).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Self::from_jsonl_str(&text),
            _ => Self::from_csv_str(&text),
        }
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let patients = reader.deserialize().collect::<std::result::Result<Vec<ScoredPatient>, _>>()?;
        Self::new(patients)
    }

    pub fn from_jsonl_str(text: &str) -> Result<Self> {
        let patients = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ScoredPatient>, _>>()?;
        Self::new(patients)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.patients {
            w.serialize(p)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
