use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::demographics::Demographics;
use super::{io_err, Annotation, HumanBenchError};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const SESSIONS_FILE: &str = "sessions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub demographics: Demographics,
    pub created_ms: u64,
}

/// Append-only JSONL log of sessions and annotations. Annotation ids are
/// unique; the in-memory state is a replay of the files.
#[derive(Debug, Default)]
pub struct AnnotationStore {
    dir: Option<PathBuf>,
    ids: HashSet<String>,
    annotations: Vec<Annotation>,
    sessions: Vec<SessionRecord>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HumanBenchError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HumanBenchError::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), HumanBenchError> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, HumanBenchError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let sessions = read_jsonl(&dir.join(SESSIONS_FILE))?;
        let mut store = Self { dir: Some(dir.clone()), sessions, ..Self::default() };
        for a in read_jsonl::<Annotation>(&dir.join(ANNOTATIONS_FILE))? {
            if store.ids.insert(a.annotation_id.clone()) {
                store.annotations.push(a);
            }
        }
        Ok(store)
    }

    pub fn contains(&self, annotation_id: &str) -> bool {
        self.ids.contains(annotation_id)
    }

    pub fn add_session(&mut self, rec: SessionRecord) -> Result<(), HumanBenchError> {
        if let Some(dir) = &self.dir {
            append_line(&dir.join(SESSIONS_FILE), &rec)?;
        }
        self.sessions.push(rec);
        Ok(())
    }

    /// Returns false (and writes nothing) for an already stored id.
    pub fn append(&mut self, a: Annotation) -> Result<bool, HumanBenchError> {
        if self.ids.contains(&a.annotation_id) {
            return Ok(false);
        }
        if let Some(dir) = &self.dir {
            append_line(&dir.join(ANNOTATIONS_FILE), &a)?;
        }
        self.ids.insert(a.annotation_id.clone());
        self.annotations.push(a);
        Ok(true)
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }
}
