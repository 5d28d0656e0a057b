//! Run manifests: the persisted record of one training/evaluation run.
//! Stored as pretty-printed JSON for diff-ability; loading checks the
//! schema version explicitly instead of reinterpreting old files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::split::DatasetSplit;
use crate::error::{CoreResult, PipelineError};
use crate::metrics::MetricsReport;

/// Version of the on-disk manifest schema this build writes and reads.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Everything needed to audit or reproduce a run: the effective config,
/// the seed, which ids went where, where checkpoints live (a directory —
/// a run can produce several stage checkpoints), and the scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    /// Effective configuration, serialized as TOML text.
    pub config_snapshot: String,
    pub seed: u64,
    pub split: DatasetSplit,
    /// Directory containing the run's checkpoint files.
    pub checkpoint_path: String,
    pub metrics: MetricsReport,
    /// RFC 3339 creation timestamp.
    pub created_at: String,
    /// Non-fatal notes accumulated during the run.
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Fusion decision table (final grade per pair of expert grades),
    /// present only for runs that trained the fusion stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_table: Option<Vec<Vec<u8>>>,
}

impl RunManifest {
    /// Current UTC time in the manifest's timestamp format.
    pub fn now_timestamp() -> String {
        chrono::Utc::now().to_rfc3339()
    }
}

/// Write a manifest as pretty JSON.
pub fn save_manifest(manifest: &RunManifest, path: &Path) -> CoreResult<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| PipelineError::Data(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(path, json).map_err(|e| PipelineError::io(path, e))
}

/// Read a manifest back, rejecting unparseable files (with the error's
/// line/column) and files written under a different schema version.
pub fn load_manifest(path: &Path) -> CoreResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        PipelineError::Data(format!(
            "manifest {} is not valid JSON at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| {
            PipelineError::Data(format!(
                "manifest {} has no schema_version field",
                path.display()
            ))
        })?;
    if version != u64::from(MANIFEST_SCHEMA_VERSION) {
        return Err(PipelineError::Data(format!(
            "manifest {} has schema version {version}, this build reads version {MANIFEST_SCHEMA_VERSION}",
            path.display()
        )));
    }
    serde_json::from_value(value).map_err(|e| {
        PipelineError::Data(format!("manifest {}: {e}", path.display()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::split::SplitStrategy;
    use crate::metrics::full_report;

    fn sample_manifest() -> RunManifest {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            run_id: "run-0001".into(),
            config_snapshot: "[data]\nseed = 7\n".into(),
            seed: 7,
            split: DatasetSplit {
                train_ids: vec!["a".into(), "b".into()],
                val_ids: vec!["c".into()],
                test_ids: vec!["d".into()],
                seed: 7,
                strategy: SplitStrategy::Kfold { fold_index: 3, k: 6 },
            },
            checkpoint_path: "runs/run-0001/checkpoints".into(),
            metrics: full_report(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 3], None).unwrap(),
            created_at: "2024-05-01T12:00:00+00:00".into(),
            warnings: vec!["validation set is small".into()],
            decision_table: Some(vec![vec![0; 5]; 5]),
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = sample_manifest();
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
        // Fold index preserved exactly.
        assert_eq!(
            back.split.strategy,
            SplitStrategy::Kfold { fold_index: 3, k: 6 }
        );
    }

    #[test]
    fn corrupted_file_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = sample_manifest();
        save_manifest(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line") && msg.contains("column"), "got: {msg}");
    }

    #[test]
    fn schema_version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = sample_manifest();
        m.schema_version = MANIFEST_SCHEMA_VERSION + 1;
        save_manifest(&m, &path).unwrap();
        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("schema version"), "got: {msg}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn missing_file_maps_to_io() {
        let err = load_manifest(Path::new("/nonexistent/manifest.json")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
