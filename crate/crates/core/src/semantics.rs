//! Ochiai similarity between failing-test sets and mimicry labels.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::FailSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("vulnerability {0} has an empty proof-of-vulnerability test set")]
    EmptyPoV(String),
}

/// A known vulnerability and the tests that expose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityRecord {
    pub id: String,
    pub pov: FailSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<f64>,
    #[serde(default)]
    pub files_modified: u32,
    #[serde(default)]
    pub methods_modified: u32,
}

impl VulnerabilityRecord {
    pub fn check(&self) -> Result<(), SemanticsError> {
        if self.pov.is_empty() {
            return Err(SemanticsError::EmptyPoV(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Mimicking,
    Coupled,
    KilledUnrelated,
    Survived,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Mimicking => "mimicking",
            Label::Coupled => "coupled",
            Label::KilledUnrelated => "killed-unrelated",
            Label::Survived => "survived",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantLabel {
    pub mutant_id: String,
    pub ochiai: f64,
    pub label: Label,
}

/// `|a ∩ b| / sqrt(|a| * |b|)`, or 0 when either set is empty.
pub fn ochiai(a: &FailSet, b: &FailSet) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let shared = a.intersection_len(b) as f64;
    shared / ((a.len() * b.len()) as f64).sqrt()
}

/// Classify a mutant's failing tests against a vulnerability's PoV.
pub fn label(mutant_id: &str, mutant_fs: &FailSet, v: &VulnerabilityRecord) -> Result<MutantLabel, SemanticsError> {
    v.check()?;
    let score = ochiai(mutant_fs, &v.pov);
    let label = if mutant_fs.is_empty() {
        Label::Survived
    } else if *mutant_fs == v.pov {
        Label::Mimicking
    } else if score > 0.0 {
        Label::Coupled
    } else {
        Label::KilledUnrelated
    };
    // Equal sets are exactly the ochiai == 1 case; keep the stored value exact.
    let ochiai = if label == Label::Mimicking { 1.0 } else { score };
    Ok(MutantLabel {
        mutant_id: mutant_id.to_string(),
        ochiai,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(ids: &[&str]) -> FailSet {
        FailSet::new(ids.iter().copied())
    }

    fn vuln(pov: &[&str]) -> VulnerabilityRecord {
        VulnerabilityRecord {
            id: "CVE-0000-0001".into(),
            pov: fs(pov),
            severity: Some(7.5),
            files_modified: 1,
            methods_modified: 1,
        }
    }

    #[test]
    fn ochiai_cases() {
        assert_eq!(ochiai(&fs(&["t1", "t2"]), &fs(&["t1", "t2"])), 1.0);
        assert_eq!(ochiai(&fs(&["t1"]), &fs(&["t2"])), 0.0);
        assert_eq!(ochiai(&fs(&["t1"]), &fs(&["t1", "t2"])), 0.7071067811865475);
        assert_eq!(ochiai(&fs(&[]), &fs(&["t1"])), 0.0);
        assert_eq!(ochiai(&fs(&[]), &fs(&[])), 0.0);
    }

    #[test]
    fn labels() {
        let v = vuln(&["t1"]);
        let l = label("m", &fs(&["t1"]), &v).unwrap();
        assert_eq!((l.label, l.ochiai), (Label::Mimicking, 1.0));
        let l = label("m", &fs(&["t1", "t3"]), &v).unwrap();
        assert_eq!(l.label, Label::Coupled);
        assert_eq!(l.ochiai, 1.0 / 2f64.sqrt());
        let l = label("m", &fs(&[]), &v).unwrap();
        assert_eq!((l.label, l.ochiai), (Label::Survived, 0.0));
        let l = label("m", &fs(&["t9"]), &v).unwrap();
        assert_eq!((l.label, l.ochiai), (Label::KilledUnrelated, 0.0));
        assert_eq!(
            label("m", &fs(&["t1"]), &vuln(&[])).unwrap_err(),
            SemanticsError::EmptyPoV("CVE-0000-0001".into())
        );
    }

    #[test]
    fn label_json() {
        let l = label("a.1.b", &fs(&["t1"]), &vuln(&["t1"])).unwrap();
        assert_eq!(
            serde_json::to_string(&l).unwrap(),
            r#"{"mutant_id":"a.1.b","ochiai":1.0,"label":"mimicking"}"#
        );
        let v: VulnerabilityRecord = serde_json::from_str(r#"{"id": "CVE-2018-17201", "pov": ["t"]}"#).unwrap();
        assert_eq!(v.severity, None);
    }
}
