//! Probe dataset loading: one JSON record per line with fields
//! id / prompt / dataset / category / language.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One prompt expected to elicit the behavior under study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub id: String,
    pub prompt: String,
    pub dataset: String,
    pub category: String,
    pub language: String,
}

/// Loads and validates a JSONL probe dataset. Malformed rows are reported
/// with their line number; duplicate ids and empty prompts are fatal.
pub fn load_dataset(path: &Path) -> Result<Vec<ProbeRecord>> {
    let content = fs::read_to_string(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut records = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProbeRecord = serde_json::from_str(line).map_err(|e| Error::DatasetLine {
            path: path.to_path_buf(),
            line: line_no,
            reason: format!("malformed record: {e}"),
        })?;
        if record.prompt.trim().is_empty() {
            return Err(Error::DatasetLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("record {:?} has an empty prompt", record.id),
            });
        }
        if !seen.insert((record.dataset.clone(), record.id.clone())) {
            return Err(Error::DatasetLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!(
                    "duplicate id {:?} in dataset {:?}",
                    record.id, record.dataset
                ),
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            reason: "no records".to_string(),
        });
    }
    Ok(records)
}

/// Record counts per category, for loader reports.
pub fn category_counts(records: &[ProbeRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.category.clone()).or_insert(0) += 1;
    }
    counts
}

/// Hex SHA-256 of the dataset file's bytes (pinned in run manifests).
pub fn dataset_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn loads_valid_records() {
        let f = write_lines(&[
            r#"{"id":"a","prompt":"q1","dataset":"d","category":"c1","language":"en"}"#,
            r#"{"id":"b","prompt":"q2","dataset":"d","category":"c2","language":"zh"}"#,
        ]);
        let records = load_dataset(f.path()).unwrap();
        assert_eq!(records.len(), 2);
        let counts = category_counts(&records);
        assert_eq!(counts["c1"], 1);
        assert_eq!(counts["c2"], 1);
    }

    #[test]
    fn empty_file_reports_no_records() {
        let f = write_lines(&[]);
        let err = load_dataset(f.path()).unwrap_err();
        assert!(err.to_string().contains("no records"));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let f = write_lines(&[
            r#"{"id":"a","prompt":"q1","dataset":"d","category":"c","language":"en"}"#,
            r#"{"id":"b", BROKEN"#,
        ]);
        let err = load_dataset(f.path()).unwrap_err();
        match err {
            Error::DatasetLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_ids_are_fatal() {
        let f = write_lines(&[
            r#"{"id":"a","prompt":"q1","dataset":"d","category":"c","language":"en"}"#,
            r#"{"id":"a","prompt":"q2","dataset":"d","category":"c","language":"en"}"#,
        ]);
        let err = load_dataset(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn empty_prompt_is_fatal() {
        let f = write_lines(&[
            r#"{"id":"a","prompt":"  ","dataset":"d","category":"c","language":"en"}"#,
        ]);
        assert!(load_dataset(f.path()).is_err());
    }

    #[test]
    fn bundled_ccp_fixture_has_sixty_records_fifteen_per_category() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ccp_sample.jsonl");
        let records = load_dataset(&path).unwrap();
        assert_eq!(records.len(), 60);
        let counts = category_counts(&records);
        assert_eq!(counts.len(), 4);
        for (category, count) in counts {
            assert_eq!(count, 15, "category {category}");
        }
    }

    #[test]
    fn bundled_deccp_fixture_has_ninety_five_records() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/deccp_sample.jsonl");
        let records = load_dataset(&path).unwrap();
        assert_eq!(records.len(), 95);
        assert!(records.iter().any(|r| r.language == "zh"));
        assert!(records.iter().any(|r| r.language == "en"));
    }
}
