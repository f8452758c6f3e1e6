//! Machine-readable report files: class-distribution tables and p-value
//! matrices as CSV, plus a raw JSON dump that keeps zero-count classes.
//!
//! Output is deterministic: fixed column order, fixed row order (dataset,
//! then configured intervention order, then label order), and shortest
//! round-trip float formatting.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::stats::{Distribution, PvalueMatrix};

/// Writes one distribution CSV per axis, one p-value CSV per matrix, and a
/// raw JSON dump. Returns the created file paths.
///
/// Classes with no instances in any setting are omitted from the rendered
/// CSV but stay present in the raw dump.
pub fn render_report(
    distributions: &[Distribution],
    matrices: &[PvalueMatrix],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Report(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut written = Vec::new();

    for dist in distributions {
        let path = out_dir.join(format!("{}_class_distribution.csv", dist.axis.file_stem()));
        let mut writer = csv::Writer::from_path(&path)
            .map_err(|e| Error::Report(format!("cannot write {}: {e}", path.display())))?;
        writer
            .write_record(["dataset", "intervention", "class", "count", "proportion"])
            .map_err(|e| Error::Report(e.to_string()))?;

        let labels = dist.axis.labels();
        let rendered_labels: Vec<&str> = labels
            .iter()
            .copied()
            .filter(|label| {
                dist.groups
                    .iter()
                    .any(|g| g.counts.get(*label).copied().unwrap_or(0) > 0)
            })
            .collect();
        for group in &dist.groups {
            for label in &rendered_labels {
                let count = group.counts.get(*label).copied().unwrap_or(0);
                let proportion = group.proportions.get(*label).copied().unwrap_or(0.0);
                writer
                    .write_record([
                        group.dataset.as_str(),
                        group.intervention.as_str(),
                        label,
                        &count.to_string(),
                        &proportion.to_string(),
                    ])
                    .map_err(|e| Error::Report(e.to_string()))?;
            }
        }
        writer.flush().map_err(|e| Error::Report(e.to_string()))?;
        written.push(path);
    }

    for matrix in matrices {
        let path = out_dir.join(format!("{}_pvalues.csv", matrix.axis.file_stem()));
        let mut writer = csv::Writer::from_path(&path)
            .map_err(|e| Error::Report(format!("cannot write {}: {e}", path.display())))?;
        writer
            .write_record(["class", "intervention_a", "intervention_b", "p_value"])
            .map_err(|e| Error::Report(e.to_string()))?;
        for pair in &matrix.pairs {
            writer
                .write_record([
                    matrix.target_class.as_str(),
                    pair.intervention_a.as_str(),
                    pair.intervention_b.as_str(),
                    &pair.result.p_two_sided.to_string(),
                ])
                .map_err(|e| Error::Report(e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::Report(e.to_string()))?;
        written.push(path);
    }

    let raw = serde_json::json!({
        "distributions": distributions,
        "pvalue_matrices": matrices,
    });
    let raw_path = out_dir.join("raw_report.json");
    std::fs::write(&raw_path, serde_json::to_string_pretty(&raw)?)?;
    written.push(raw_path);

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{AnswerClass, ClassifiedResult, CotClass};
    use crate::stats::{class_distribution, pvalue_matrix, ClassAxis};

    fn result(intervention: &str, answer: AnswerClass) -> ClassifiedResult {
        ClassifiedResult {
            probe_id: "p".into(),
            dataset: "d".into(),
            intervention: intervention.into(),
            cot_class: CotClass::RelevantCoherent,
            answer_class: answer,
            generation_hash: String::new(),
        }
    }

    fn sample_inputs() -> (Vec<Distribution>, Vec<PvalueMatrix>) {
        let mut results = Vec::new();
        for _ in 0..7 {
            results.push(result("baseline", AnswerClass::Refusal));
        }
        for _ in 0..3 {
            results.push(result("baseline", AnswerClass::Answered));
        }
        for _ in 0..10 {
            results.push(result("suppress-nn", AnswerClass::Answered));
        }
        let order = vec!["baseline".to_string(), "suppress-nn".to_string()];
        let dists = vec![
            class_distribution(&results, ClassAxis::Answer, &order),
            class_distribution(&results, ClassAxis::Cot, &order),
        ];
        let matrices = vec![
            pvalue_matrix(&results, ClassAxis::Answer, "answered", &order).unwrap(),
            pvalue_matrix(&results, ClassAxis::Cot, "relevant_coherent", &order).unwrap(),
        ];
        (dists, matrices)
    }

    #[test]
    fn same_input_renders_byte_identical_files() {
        let (dists, matrices) = sample_inputs();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let files_a = render_report(&dists, &matrices, dir_a.path()).unwrap();
        let files_b = render_report(&dists, &matrices, dir_b.path()).unwrap();
        assert_eq!(files_a.len(), files_b.len());
        for (a, b) in files_a.iter().zip(&files_b) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn all_zero_classes_are_omitted_from_csv_but_kept_in_raw() {
        let (dists, matrices) = sample_inputs();
        let dir = tempfile::tempdir().unwrap();
        render_report(&dists, &matrices, dir.path()).unwrap();
        let csv =
            std::fs::read_to_string(dir.path().join("answer_class_distribution.csv")).unwrap();
        assert!(csv.contains("answered"));
        assert!(csv.contains("refusal"));
        assert!(!csv.contains("evasive_propaganda"));
        let raw = std::fs::read_to_string(dir.path().join("raw_report.json")).unwrap();
        assert!(raw.contains("evasive_propaganda"));
    }

    #[test]
    fn empty_matrices_render_header_only() {
        let dir = tempfile::tempdir().unwrap();
        render_report(&[], &[], dir.path()).unwrap();
        let raw = std::fs::read_to_string(dir.path().join("raw_report.json")).unwrap();
        assert!(raw.contains("distributions"));
    }

    #[test]
    fn expected_files_are_created() {
        let (dists, matrices) = sample_inputs();
        let dir = tempfile::tempdir().unwrap();
        let files = render_report(&dists, &matrices, dir.path()).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().to_string())
            .collect();
        assert!(names.contains(&"answer_class_distribution.csv".to_string()));
        assert!(names.contains(&"cot_class_distribution.csv".to_string()));
        assert!(names.contains(&"answer_pvalues.csv".to_string()));
        assert!(names.contains(&"cot_pvalues.csv".to_string()));
        assert!(names.contains(&"raw_report.json".to_string()));
    }
}
