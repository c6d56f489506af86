//! JSON Lines, JSON, and CSV readers and writers for the audit file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use disparity_audit_core::concepts::{ClassMapping, MappingWarning};
use disparity_audit_core::groups::{presets, GroupTermConfig, RegionGroupConfig};
use disparity_audit_core::{AnnotatedImage, ConceptId, GroupAssignment, Outcome, PredictionRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

const STAGE: &str = "load";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| AuditError::io(STAGE, path, e))
}

pub fn create(stage: &'static str, path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| AuditError::io(stage, parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| AuditError::io(stage, path, e))
}

/// Parses non-blank lines, reporting failures as `source:line: message`.
fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead, source: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| AuditError::data(STAGE, format!("{source}:{line_no}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| AuditError::data(STAGE, format!("{source}:{line_no}: {e}")))?;
        out.push((line_no, value));
    }
    Ok(out)
}

/// Reads an annotations JSON Lines stream.
///
/// Repeated records for one image are merged (labels unioned); repeats that
/// disagree on size or metadata are an error, as is any box outside its image.
pub fn read_annotations(reader: impl BufRead, source: &str) -> Result<Vec<AnnotatedImage>> {
    let mut by_id: BTreeMap<String, (usize, AnnotatedImage)> = BTreeMap::new();
    let mut order = Vec::new();
    for (line_no, image) in read_jsonl::<AnnotatedImage>(reader, source)? {
        image
            .check()
            .map_err(|e| AuditError::data(STAGE, format!("{source}:{line_no}: image {}: {e}", image.image_id)))?;
        match by_id.get_mut(&image.image_id) {
            Some((first_line, existing)) => {
                let first_line = *first_line;
                existing.merge(image).map_err(|e| {
                    AuditError::data(
                        STAGE,
                        format!("{source}:{line_no}: duplicate image_id {} (first on line {first_line}): {e}", existing.image_id),
                    )
                })?;
            }
            None => {
                order.push(image.image_id.clone());
                by_id.insert(image.image_id.clone(), (line_no, image));
            }
        }
    }
    Ok(order.into_iter().map(|id| by_id.remove(&id).expect("inserted").1).collect())
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedImage>> {
    read_annotations(open(path)?, &path.display().to_string())
}

/// Reads a predictions JSON Lines stream and checks it against the images.
pub fn read_predictions(
    reader: impl BufRead,
    source: &str,
    images: &[AnnotatedImage],
) -> Result<Vec<PredictionRecord>> {
    let known: BTreeSet<&str> = images.iter().map(|i| i.image_id.as_str()).collect();
    let mut seen = BTreeSet::new();
    let mut unknown = Vec::new();
    let mut out = Vec::new();
    for (line_no, record) in read_jsonl::<PredictionRecord>(reader, source)? {
        if let Some(c) = record.non_finite_concepts().next() {
            return Err(AuditError::data(
                STAGE,
                format!("{source}:{line_no}: non-finite score for concept {c} on image {}", record.image_id),
            ));
        }
        if !seen.insert(record.image_id.clone()) {
            return Err(AuditError::data(STAGE, format!("{source}:{line_no}: duplicate image_id {}", record.image_id)));
        }
        if !known.contains(record.image_id.as_str()) {
            unknown.push(record.image_id.clone());
        }
        out.push(record);
    }
    if !unknown.is_empty() {
        return Err(AuditError::data(
            STAGE,
            format!("{source}: predictions for unknown images: {}", unknown.join(", ")),
        ));
    }
    Ok(out)
}

pub fn load_predictions(path: &Path, images: &[AnnotatedImage]) -> Result<Vec<PredictionRecord>> {
    read_predictions(open(path)?, &path.display().to_string(), images)
}

pub fn write_jsonl<T: Serialize>(stage: &'static str, path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(stage, path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| AuditError::internal(stage, e))?;
        w.write_all(b"\n").map_err(|e| AuditError::io(stage, path, e))?;
    }
    w.flush().map_err(|e| AuditError::io(stage, path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| AuditError::io(STAGE, path, e))?;
    serde_json::from_str(&text).map_err(|e| AuditError::config(STAGE, format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(stage: &'static str, path: &Path, value: &T) -> Result<()> {
    let mut w = create(stage, path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| AuditError::internal(stage, e))?;
    w.write_all(b"\n").map_err(|e| AuditError::io(stage, path, e))?;
    w.flush().map_err(|e| AuditError::io(stage, path, e))
}

pub const BUILTIN_SYNSET_TERMS: &str = "builtin:synsets";
pub const BUILTIN_CAPTION_TERMS: &str = "builtin:captions";

/// Loads a terms file, or one of the built-in gender term tables.
pub fn load_terms(source: &str, base: &Path) -> Result<GroupTermConfig> {
    let terms = match source {
        BUILTIN_SYNSET_TERMS => presets::synset_gender_terms(),
        BUILTIN_CAPTION_TERMS => presets::caption_gender_terms(),
        path => read_json(&resolve(base, path))?,
    };
    terms.validate().map_err(|e| AuditError::config(STAGE, format!("terms {source}: {e}")))?;
    Ok(terms)
}

pub fn load_region(path: &Path) -> Result<RegionGroupConfig> {
    read_json(path)
}

#[derive(Debug, Deserialize)]
struct MappingFile {
    name: String,
    map: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    model_class_whitelist: Option<Vec<String>>,
}

pub fn load_mapping(path: &Path) -> Result<(ClassMapping, Vec<MappingWarning>)> {
    let file: MappingFile = read_json(path)?;
    let whitelist = file
        .model_class_whitelist
        .map(|w| w.iter().map(|c| ConceptId::canonicalize(c)).collect::<Result<BTreeSet<_>, _>>())
        .transpose()
        .map_err(|e| AuditError::config(STAGE, format!("{}: {e}", path.display())))?;
    ClassMapping::new(file.name, file.map, whitelist.as_ref())
        .map_err(|e| AuditError::config(STAGE, format!("{}: {e}", path.display())))
}

pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub image_id: String,
    pub outcome: String,
    pub group_or_reason: String,
}

impl From<&GroupAssignment> for AssignmentRow {
    fn from(a: &GroupAssignment) -> Self {
        let (outcome, group_or_reason) = match &a.outcome {
            Outcome::Assigned(g) => ("assigned", g.to_string()),
            Outcome::Excluded(r) => ("excluded", r.to_string()),
        };
        Self { image_id: a.image_id.clone(), outcome: outcome.into(), group_or_reason }
    }
}

pub fn write_csv<T: Serialize>(stage: &'static str, path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(stage, path)?);
    for row in rows {
        w.serialize(row).map_err(|e| AuditError::internal(stage, e))?;
    }
    w.flush().map_err(|e| AuditError::io(stage, path, e))
}

/// Writes a CSV that keeps its header even when there are no rows.
pub fn write_csv_with_header<T: Serialize>(
    stage: &'static str,
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(stage, path)?);
    w.write_record(header).map_err(|e| AuditError::internal(stage, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| AuditError::internal(stage, e))?;
    }
    w.flush().map_err(|e| AuditError::io(stage, path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| AuditError::data(STAGE, format!("{}: {e}", path.display())))
}
