//! Dataset manifest CSV: one row per utterance, dialogs in file order.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::data::EmotionClass;
use crate::error::{Error, Result};

pub const MANIFEST_COLUMNS: [&str; 6] = [
    "utterance_id",
    "dialog_id",
    "speaker_id",
    "wav_path",
    "transcript",
    "label",
];

/// One manifest row. `wav_path` is kept relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub dialog_id: String,
    pub speaker_id: String,
    pub wav_path: PathBuf,
    pub transcript: String,
    pub label: EmotionClass,
}

/// Parses a manifest, preserving file order (rows of one dialog appear in
/// dialog order). Rejects unknown labels, duplicate utterance ids and
/// missing columns.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Manifest(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("bad header: {e}")))?
        .clone();
    let mut col = Vec::with_capacity(MANIFEST_COLUMNS.len());
    for want in MANIFEST_COLUMNS {
        match headers.iter().position(|h| h == want) {
            Some(i) => col.push(i),
            None => {
                return Err(Error::Manifest(format!(
                    "missing column `{want}` (found: {})",
                    headers.iter().collect::<Vec<_>>().join(",")
                )))
            }
        }
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Manifest(format!("row {}: {e}", line + 2)))?;
        let field = |i: usize| -> Result<&str> {
            record.get(col[i]).ok_or_else(|| {
                Error::Manifest(format!("row {}: too few fields", line + 2))
            })
        };
        let utterance_id = field(0)?.to_string();
        if !seen.insert(utterance_id.clone()) {
            return Err(Error::Manifest(format!(
                "duplicate utterance_id `{utterance_id}`"
            )));
        }
        let label = EmotionClass::parse(field(5)?)?;
        rows.push(ManifestRow {
            utterance_id,
            dialog_id: field(1)?.to_string(),
            speaker_id: field(2)?.to_string(),
            wav_path: PathBuf::from(field(3)?),
            transcript: field(4)?.to_string(),
            label,
        });
    }
    Ok(rows)
}

/// Writes rows in order with the exact column set `read_manifest` expects.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Manifest(format!("cannot create {}: {e}", path.display())))?;
    writer
        .write_record(MANIFEST_COLUMNS)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for row in rows {
        writer
            .write_record([
                row.utterance_id.as_str(),
                row.dialog_id.as_str(),
                row.speaker_id.as_str(),
                &row.wav_path.to_string_lossy(),
                row.transcript.as_str(),
                row.label.as_str(),
            ])
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
