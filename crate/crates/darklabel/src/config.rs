use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use darklabel_core::llm::{MockLexicon, ENV_API_KEY};
use darklabel_core::{
    AnnotationOptions, CostTable, Error as CoreError, MockProvider, OpenAiCompatProvider, Provider,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const ENV_TOKEN: &str = "DARKLABEL_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// Deterministic offline provider.
    #[default]
    Mock,
    /// OpenAI-compatible chat-completion endpoint.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub state_dir: PathBuf,
    pub provider: ProviderKind,
    /// Name of the environment variable holding the live provider's key. The
    /// key itself is never written anywhere.
    pub api_key_env: String,
    pub costs_path: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub default_concurrency: usize,
    pub default_retries: u32,
    /// Seed used by sampling and optimization when a request names none.
    pub default_seed: u64,
    pub backoff_base_ms: u64,
    /// Optional shared bearer token for the HTTP service.
    #[serde(skip_serializing)]
    pub token: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            state_dir: PathBuf::from("darklabel-state"),
            provider: ProviderKind::Mock,
            api_key_env: ENV_API_KEY.into(),
            costs_path: None,
            lexicon_path: None,
            default_concurrency: 4,
            default_retries: 2,
            default_seed: 0,
            backoff_base_ms: 1000,
            token: None,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.default_concurrency == 0 {
            return Err(CoreError::Config("default concurrency must be at least 1".into()).into());
        }
        if self.provider == ProviderKind::Live && std::env::var_os(&self.api_key_env).is_none() {
            return Err(CoreError::Config(format!(
                "the live provider needs {} in the environment",
                self.api_key_env
            ))
            .into());
        }
        Ok(())
    }

    pub fn build_provider(&self) -> Result<Arc<dyn Provider>> {
        Ok(match self.provider {
            ProviderKind::Mock => {
                let lexicon = match &self.lexicon_path {
                    Some(p) => MockLexicon::load(p)?,
                    None => MockLexicon::shipped(),
                };
                Arc::new(MockProvider::new(lexicon))
            }
            ProviderKind::Live => Arc::new(OpenAiCompatProvider::from_env()?),
        })
    }

    pub fn load_costs(&self) -> Result<CostTable> {
        Ok(match &self.costs_path {
            Some(p) => CostTable::load(p)?,
            None => CostTable::default(),
        })
    }

    pub fn annotation_defaults(&self) -> AnnotationOptions {
        AnnotationOptions {
            max_in_flight: self.default_concurrency,
            max_retries: self.default_retries,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
            ..AnnotationOptions::default()
        }
    }
}
