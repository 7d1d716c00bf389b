//! On-disk layout: one directory per workbook under the state root.
//!
//! ```text
//! <root>/<id>/workbook.json
//! <root>/<id>/actions.jsonl
//! <root>/<id>/gold.csv            last uploaded gold set
//! <root>/<id>/progress.json       last finished annotation state
//! <root>/<id>/evaluations/<k>.json
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use darklabel_core::{load_workbook, save_workbook, ProgressState, Workbook};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};

const WORKBOOK_FILE: &str = "workbook.json";
const ACTIONS_FILE: &str = "actions.jsonl";
const GOLD_FILE: &str = "gold.csv";
const PROGRESS_FILE: &str = "progress.json";
const EVALUATIONS_DIR: &str = "evaluations";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Cli,
    Http,
}

/// One line of the action log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub ts: DateTime<Utc>,
    pub actor: Actor,
    pub op: String,
    pub params_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkbookSummary {
    pub id: String,
    pub name: String,
    pub rows: usize,
    pub tasks: usize,
}

/// Hex SHA-256 of the compact JSON encoding of `params`.
pub fn params_digest(params: &Value) -> String {
    let bytes = serde_json::to_vec(params).expect("a Value always serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Creates the root if needed and checks that it is writable.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let probe = root.join(".write-probe");
        fs::write(&probe, b"")?;
        fs::remove_file(&probe)?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(ServiceError::InvalidWorkbookId(id.to_owned()));
        }
        Ok(self.root.join(id))
    }

    fn existing_dir(&self, id: &str) -> Result<PathBuf> {
        let dir = self.dir(id)?;
        if !dir.join(WORKBOOK_FILE).is_file() {
            return Err(ServiceError::WorkbookNotFound(id.to_owned()));
        }
        Ok(dir)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.existing_dir(id).is_ok()
    }

    pub fn create(&self, id: &str, workbook: &Workbook) -> Result<()> {
        let dir = self.dir(id)?;
        if dir.join(WORKBOOK_FILE).exists() {
            return Err(ServiceError::WorkbookExists(id.to_owned()));
        }
        fs::create_dir_all(&dir)?;
        save_workbook(workbook, &dir.join(WORKBOOK_FILE))?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Workbook> {
        let dir = self.existing_dir(id)?;
        Ok(load_workbook(&dir.join(WORKBOOK_FILE))?)
    }

    pub fn save(&self, id: &str, workbook: &Workbook) -> Result<()> {
        let dir = self.existing_dir(id)?;
        save_workbook(workbook, &dir.join(WORKBOOK_FILE))?;
        Ok(())
    }

    pub fn delete(&self, id: &str) -> Result<()> {
        let dir = self.existing_dir(id)?;
        fs::remove_dir_all(dir)?;
        Ok(())
    }

    /// Workbooks sorted by id. Directories that fail to load are skipped.
    pub fn list(&self) -> Result<Vec<WorkbookSummary>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let Some(id) = entry.file_name().to_str().map(str::to_owned) else {
                continue;
            };
            if !valid_id(&id) || !entry.path().join(WORKBOOK_FILE).is_file() {
                continue;
            }
            match self.load(&id) {
                Ok(wb) => out.push(WorkbookSummary {
                    id,
                    name: wb.name,
                    rows: wb.dataset.len(),
                    tasks: wb.tasks.len(),
                }),
                Err(e) => tracing::warn!(%id, error = %e, "skipping unreadable workbook"),
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn log_action(
        &self,
        id: &str,
        actor: Actor,
        op: &str,
        params: &Value,
    ) -> Result<ActionRecord> {
        let dir = self.existing_dir(id)?;
        let record = ActionRecord {
            ts: Utc::now(),
            actor,
            op: op.to_owned(),
            params_digest: params_digest(params),
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(ACTIONS_FILE))?;
        f.write_all(line.as_bytes())?;
        Ok(record)
    }

    pub fn actions(&self, id: &str) -> Result<Vec<ActionRecord>> {
        let path = self.existing_dir(id)?.join(ACTIONS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }

    pub fn save_gold(&self, id: &str, csv: &str) -> Result<()> {
        let dir = self.existing_dir(id)?;
        fs::write(dir.join(GOLD_FILE), csv)?;
        Ok(())
    }

    pub fn load_gold(&self, id: &str) -> Result<Option<String>> {
        let path = self.existing_dir(id)?.join(GOLD_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(fs::read_to_string(path)?))
    }

    pub fn save_progress(&self, id: &str, state: &ProgressState) -> Result<()> {
        let dir = self.existing_dir(id)?;
        fs::write(dir.join(PROGRESS_FILE), serde_json::to_vec_pretty(state)?)?;
        Ok(())
    }

    pub fn load_progress(&self, id: &str) -> Result<Option<ProgressState>> {
        let path = self.existing_dir(id)?.join(PROGRESS_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
    }

    /// Stores an evaluation under the next free number and returns it.
    pub fn save_evaluation<T: Serialize>(
        &self,
        id: &str,
        build: impl FnOnce(u32) -> T,
    ) -> Result<(u32, T)> {
        let dir = self.existing_dir(id)?.join(EVALUATIONS_DIR);
        fs::create_dir_all(&dir)?;
        let mut k = 1;
        while dir.join(format!("{k}.json")).exists() {
            k += 1;
        }
        let value = build(k);
        fs::write(
            dir.join(format!("{k}.json")),
            serde_json::to_vec_pretty(&value)?,
        )?;
        Ok((k, value))
    }

    pub fn load_evaluation<T: DeserializeOwned>(&self, id: &str, k: u32) -> Result<T> {
        let path = self
            .existing_dir(id)?
            .join(EVALUATIONS_DIR)
            .join(format!("{k}.json"));
        if !path.exists() {
            return Err(ServiceError::EvaluationNotFound(k));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use darklabel_core::LabelScale;

    #[test]
    fn ids_are_path_safe() {
        assert!(valid_id("tweets_2024-q1"));
        for bad in ["", "..", "a/b", "a b", "é"] {
            assert!(!valid_id(bad), "{bad:?}");
        }
    }

    #[test]
    fn lifecycle_and_log() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let wb = Workbook::new("demo", LabelScale::sentiment5());
        store.create("demo", &wb).unwrap();
        assert!(matches!(
            store.create("demo", &wb),
            Err(ServiceError::WorkbookExists(_))
        ));
        assert_eq!(store.load("demo").unwrap(), wb);
        let params = serde_json::json!({"n": 3});
        store
            .log_action("demo", Actor::Cli, "sample", &params)
            .unwrap();
        let log = store.actions("demo").unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].params_digest, params_digest(&params));
        assert_eq!(log[0].params_digest.len(), 64);
        assert_eq!(store.list().unwrap()[0].id, "demo");
        store.delete("demo").unwrap();
        assert!(matches!(
            store.load("demo"),
            Err(ServiceError::WorkbookNotFound(_))
        ));
    }

    #[test]
    fn evaluations_are_numbered() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        store
            .create("w", &Workbook::new("w", LabelScale::sentiment5()))
            .unwrap();
        let (a, _) = store
            .save_evaluation("w", |k| serde_json::json!({ "k": k }))
            .unwrap();
        let (b, _) = store
            .save_evaluation("w", |k| serde_json::json!({ "k": k }))
            .unwrap();
        assert_eq!((a, b), (1, 2));
        let v: Value = store.load_evaluation("w", 2).unwrap();
        assert_eq!(v["k"], 2);
        assert!(matches!(
            store.load_evaluation::<Value>("w", 9),
            Err(ServiceError::EvaluationNotFound(9))
        ));
    }
}
