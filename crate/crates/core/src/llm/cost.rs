use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Usage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

/// Per-model token prices, loaded from TOML or JSON.
///
/// ```toml
/// currency = "USD"
/// [models."gpt-4o-2024-05-13"]
/// input_per_million = 5.0
/// output_per_million = 15.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    #[serde(default = "default_currency")]
    pub currency: String,
    pub models: BTreeMap<String, ModelPrice>,
}

fn default_currency() -> String {
    "USD".to_owned()
}

impl Default for CostTable {
    fn default() -> Self {
        let mut models = BTreeMap::new();
        let price = ModelPrice {
            input_per_million: 5.0,
            output_per_million: 15.0,
        };
        models.insert("gpt-4o-2024-05-13".to_owned(), price);
        models.insert(super::mock::MOCK_MODEL.to_owned(), price);
        CostTable {
            currency: default_currency(),
            models,
        }
    }
}

impl CostTable {
    pub fn validate(&self) -> Result<()> {
        for (model, p) in &self.models {
            let ok = |v: f64| v.is_finite() && v >= 0.0;
            if !ok(p.input_per_million) || !ok(p.output_per_million) {
                return Err(Error::Config(format!(
                    "negative or non-finite price for {model}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: CostTable = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let table: CostTable = serde_json::from_str(s)?;
        table.validate()?;
        Ok(table)
    }

    /// Picks the format from the file extension (`.json`, else TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }
}

pub fn compute_cost(usage: Usage, model: &str, table: &CostTable) -> Result<f64> {
    let price = table
        .models
        .get(model)
        .ok_or_else(|| Error::UnknownModel(model.to_owned()))?;
    Ok(usage.prompt_tokens as f64 * price.input_per_million / 1e6
        + usage.completion_tokens as f64 * price.output_per_million / 1e6)
}
