use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::clipfile::{read_body, read_face, save_body, save_face};
use super::segment::clip_expressions;
use super::types::{MotionClip, SyntheticFactorRecord};

const FACTORS_FILE: &str = "factors.json";

/// Writes a corpus as `<id>.body.clip` / `<id>.face.clip` pairs plus an
/// optional `factors.json` describing how each clip was synthesized.
pub fn save_corpus(
    dir: &Path,
    clips: &[MotionClip],
    records: Option<&[SyntheticFactorRecord]>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for clip in clips {
        save_body(&clip.body, &dir.join(format!("{}.body.clip", clip.id)))?;
        save_face(&clip.face, &dir.join(format!("{}.face.clip", clip.id)))?;
    }
    if let Some(records) = records {
        let json = serde_json::to_string_pretty(records)
            .map_err(|e| Error::invalid(format!("factors serialization failed: {e}")))?;
        fs::write(dir.join(FACTORS_FILE), json + "\n")
            .map_err(|e| Error::io(dir.join(FACTORS_FILE).display().to_string(), e))?;
    }
    Ok(())
}

/// Loads every clip pair in a corpus directory, sorted by clip id.
///
/// Expression channels are clamped into the declared range at ingestion, so
/// downstream code can rely on the bound. A `factors.json` sidecar is parsed
/// when present.
pub fn load_corpus(dir: &Path) -> Result<(Vec<MotionClip>, Option<Vec<SyntheticFactorRecord>>)> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))? {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_suffix(".body.clip") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::invalid(format!(
            "no *.body.clip files found in {}",
            dir.display()
        )));
    }
    let mut clips = Vec::with_capacity(ids.len());
    for id in &ids {
        let body = read_body(&dir.join(format!("{id}.body.clip")))?;
        let mut face = read_face(&dir.join(format!("{id}.face.clip")))?;
        clip_expressions(&mut face);
        clips.push(MotionClip::new(id.clone(), body, face)?);
    }
    let factors_path = dir.join(FACTORS_FILE);
    let records = if factors_path.exists() {
        let text = fs::read_to_string(&factors_path).map_err(|e| Error::io(factors_path.display().to_string(), e))?;
        let records: Vec<SyntheticFactorRecord> = serde_json::from_str(&text)
            .map_err(|e| Error::parse(FACTORS_FILE, 0, format!("invalid factors json: {e}")))?;
        Some(records)
    } else {
        None
    };
    Ok((clips, records))
}
