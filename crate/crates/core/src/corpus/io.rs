use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::standoff::{parse_standoff, serialize_standoff, StandoffError};
use super::{AnnotatedDoc, Document, Domain};
use crate::schema::Schema;

/// Tab-separated `doc_id  patient_id  domain` with a header row.
pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "doc_id\tpatient_id\tdomain";

#[derive(Debug, Error)]
pub enum CorpusIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Standoff { path: PathBuf, source: StandoffError },
    #[error("{path} line {line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusIoError + '_ {
    move |source| CorpusIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct ManifestRow {
    pub doc_id: String,
    pub patient_id: String,
    pub domain: Domain,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, CorpusIoError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (k, line) in content.lines().enumerate() {
        if line.trim().is_empty() || (k == 0 && line == MANIFEST_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols[0].is_empty() {
            return Err(CorpusIoError::Manifest {
                path: path.to_path_buf(),
                line: k + 1,
                reason: "expected `doc_id<TAB>patient_id<TAB>domain`".into(),
            });
        }
        rows.push(ManifestRow {
            doc_id: cols[0].to_string(),
            patient_id: cols[1].to_string(),
            domain: cols[2].parse().unwrap(),
        });
    }
    Ok(rows)
}

pub fn write_manifest<'a>(
    path: &Path,
    docs: impl IntoIterator<Item = &'a Document>,
) -> Result<(), CorpusIoError> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for d in docs {
        out.push_str(&format!("{}\t{}\t{}\n", d.doc_id, d.patient_id, d.domain));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Loads `<doc_id>.txt` / `<doc_id>.ann` pairs. Document metadata comes from
/// the manifest when present; otherwise every `.txt` file is a document whose
/// patient id is its doc id. A missing `.ann` file means no annotations.
pub fn load_corpus(dir: &Path, schema: &Schema) -> Result<Vec<AnnotatedDoc>, CorpusIoError> {
    let manifest = dir.join(MANIFEST_FILE);
    let rows = if manifest.exists() {
        read_manifest(&manifest)?
    } else {
        let mut ids: Vec<String> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        ids.sort();
        ids.into_iter()
            .map(|id| ManifestRow {
                patient_id: id.clone(),
                doc_id: id,
                domain: Domain::Other("unspecified".into()),
            })
            .collect()
    };
    rows.into_iter()
        .map(|row| {
            let txt = dir.join(format!("{}.txt", row.doc_id));
            let ann = dir.join(format!("{}.ann", row.doc_id));
            let text = fs::read_to_string(&txt).map_err(io_err(&txt))?;
            let ann_content = if ann.exists() {
                fs::read_to_string(&ann).map_err(io_err(&ann))?
            } else {
                String::new()
            };
            let document = Document {
                doc_id: row.doc_id,
                patient_id: row.patient_id,
                domain: row.domain,
                text,
            };
            parse_standoff(document, &ann_content, schema)
                .map_err(|source| CorpusIoError::Standoff { path: ann, source })
        })
        .collect()
}

/// Writes `.txt`, `.ann` and the manifest. Existing files are overwritten.
pub fn write_corpus(dir: &Path, docs: &[AnnotatedDoc]) -> Result<(), CorpusIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for d in docs {
        let txt = dir.join(format!("{}.txt", d.doc_id()));
        let ann = dir.join(format!("{}.ann", d.doc_id()));
        fs::write(&txt, &d.document.text).map_err(io_err(&txt))?;
        let content = serialize_standoff(&d.document, &d.entities, &d.relations)
            .map_err(|source| CorpusIoError::Standoff {
                path: ann.clone(),
                source,
            })?;
        fs::write(&ann, content).map_err(io_err(&ann))?;
    }
    write_manifest(&dir.join(MANIFEST_FILE), docs.iter().map(|d| &d.document))
}
