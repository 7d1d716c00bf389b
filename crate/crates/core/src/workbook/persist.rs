use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ContextAnswer, DatasetRow, LabelRule, LabelScale, SampleEntry, Shot, TaskRecord, Workbook,
};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Serialize)]
struct DocRef<'a> {
    name: &'a str,
    schema_version: &'a str,
    label_scale: &'a LabelScale,
    dataset: &'a [DatasetRow],
    context: &'a [ContextAnswer],
    rulebook: &'a [LabelRule],
    shots: &'a [Shot],
    working_sample: &'a [SampleEntry],
    tasks: &'a [TaskRecord],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    name: String,
    #[allow(dead_code)]
    schema_version: String,
    label_scale: LabelScale,
    dataset: Vec<DatasetRow>,
    context: Vec<ContextAnswer>,
    rulebook: Vec<LabelRule>,
    shots: Vec<Shot>,
    working_sample: Vec<SampleEntry>,
    tasks: Vec<TaskRecord>,
}

impl Workbook {
    pub fn to_json(&self) -> Result<String> {
        let doc = DocRef {
            name: &self.name,
            schema_version: SCHEMA_VERSION,
            label_scale: &self.label_scale,
            dataset: &self.dataset,
            context: &self.context,
            rulebook: &self.rulebook,
            shots: &self.shots,
            working_sample: &self.working_sample,
            tasks: &self.tasks,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(json)?;
        match value.get("schema_version").and_then(|v| v.as_str()) {
            Some(SCHEMA_VERSION) => {}
            Some(other) => return Err(Error::UnsupportedVersion(other.to_owned())),
            None => return Err(Error::UnsupportedVersion(String::new())),
        }
        let doc: Doc = serde_json::from_value(value)?;
        let wb = Workbook {
            name: doc.name,
            label_scale: doc.label_scale,
            dataset: doc.dataset,
            context: doc.context,
            rulebook: doc.rulebook,
            shots: doc.shots,
            working_sample: doc.working_sample,
            tasks: doc.tasks,
        };
        wb.validate()?;
        Ok(wb)
    }
}

/// Writes the workbook as one JSON document, replacing the file atomically.
pub fn save_workbook(workbook: &Workbook, path: &Path) -> Result<()> {
    let json = workbook.to_json()?;
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(json.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_workbook(path: &Path) -> Result<Workbook> {
    let json = fs::read_to_string(path)?;
    Workbook::from_json(&json)
}
