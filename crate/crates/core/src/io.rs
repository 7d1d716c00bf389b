//! CSV formats: dataset import, gold sets and task export.

use std::io::{Read, Write};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::evaluation::{GoldItem, GoldSet};
use crate::workbook::{LabelScale, NewRow, TaskRecord};

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Csv(format!("missing required column {name:?}")))
}

/// Reads `group_id,text[,extra...]`. Every column other than the two
/// required ones becomes an extra, in header order.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Vec<NewRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let (g, t) = (column(&headers, "group_id")?, column(&headers, "text")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let mut extras = IndexMap::new();
        for (i, name) in headers.iter().enumerate() {
            if i != g && i != t {
                extras.insert(name.to_owned(), rec.get(i).unwrap_or_default().to_owned());
            }
        }
        rows.push(NewRow {
            group_id: rec.get(g).unwrap_or_default().to_owned(),
            text: rec.get(t).unwrap_or_default().to_owned(),
            extras,
        });
    }
    Ok(rows)
}

/// Reads `text,gold_label`; labels are matched case-insensitively and stored
/// in canonical case.
pub fn read_gold_csv<R: Read>(reader: R, scale: &LabelScale) -> Result<GoldSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let (t, l) = (column(&headers, "text")?, column(&headers, "gold_label")?);
    let mut items = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let raw = rec.get(l).unwrap_or_default().trim();
        let label = scale
            .canonical(raw)
            .ok_or_else(|| Error::UnknownLabel(raw.to_owned()))?;
        items.push(GoldItem {
            text: rec.get(t).unwrap_or_default().to_owned(),
            gold_label: label.to_owned(),
        });
    }
    GoldSet::new(items, scale.clone())
}

pub const TASK_EXPORT_HEADER: [&str; 9] = [
    "data_id",
    "group_id",
    "text",
    "llm_label",
    "llm_explanation",
    "human_label",
    "agree",
    "gold_shot",
    "keep",
];

/// One row per result. Explanations follow the task's display flag.
pub fn write_task_csv<W: Write>(task: &TaskRecord, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TASK_EXPORT_HEADER).map_err(csv_err)?;
    for r in task.visible_results() {
        w.write_record([
            r.data_id.to_string(),
            r.group_id,
            r.text,
            r.llm_label.unwrap_or_default(),
            r.llm_explanation.unwrap_or_default(),
            r.human_label.unwrap_or_default(),
            r.agree.to_string(),
            r.gold_shot_flag.to_string(),
            r.keep_flag.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn task_csv_string(task: &TaskRecord) -> Result<String> {
    let mut buf = Vec::new();
    write_task_csv(task, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Csv(e.to_string()))
}
