//! Candidate generators and weighted model routing.

mod chat;
mod mock;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::PromptBundle;
use crate::error::{Error, Result};
use crate::model::validate_weights;

pub use chat::{extract_code, ChatMessage, ChatProvider, ChatProviderConfig, ChatRequest, API_KEY_ENV, BASE_URL_ENV};
pub use mock::{mock_mutate, MockProvider};

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("generation failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("generation rejected: {0}")]
    Rejected(String),
    #[error("reply contained no program")]
    Empty,
    #[error("parent program has an unsupported format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: PromptBundle,
    pub model_id: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub seed: u64,
}

/// A program generator. Implementations must be callable from several
/// pipelines at once and never return an empty program on success.
pub trait Provider: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenerationError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEntry {
    pub model_id: String,
    pub weight: f64,
    /// Base URL override for this model; `None` uses the provider default.
    pub endpoint: Option<String>,
}

/// Models with routing weights. Entry order fixes the cumulative intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEnsemble {
    entries: Vec<EnsembleEntry>,
}

impl ModelEnsemble {
    pub fn new(entries: Vec<EnsembleEntry>) -> Result<Self> {
        let weights: BTreeMap<String, f64> = entries
            .iter()
            .map(|e| (e.model_id.clone(), e.weight))
            .collect();
        if weights.len() != entries.len() {
            return Err(Error::config("model_weights", "duplicate model id"));
        }
        validate_weights(&weights)?;
        Ok(ModelEnsemble { entries })
    }

    /// Entries in the map's (sorted) key order.
    pub fn from_weights(weights: &BTreeMap<String, f64>) -> Result<Self> {
        ModelEnsemble::new(
            weights
                .iter()
                .map(|(id, &weight)| EnsembleEntry {
                    model_id: id.clone(),
                    weight,
                    endpoint: None,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[EnsembleEntry] {
        &self.entries
    }

    /// Index of the entry whose cumulative interval `[c_{i-1}, c_i)` holds `u`.
    ///
    /// Draws at or past the final cumulative sum (float rounding) land on the
    /// last entry with positive weight, so every `u` in `[0, 1)` maps to
    /// exactly one entry.
    pub fn index_for_draw(&self, u: f64) -> usize {
        let mut cumulative = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            cumulative += e.weight;
            if u < cumulative {
                return i;
            }
        }
        self.entries
            .iter()
            .rposition(|e| e.weight > 0.0)
            .unwrap_or(self.entries.len() - 1)
    }
}

/// Picks a model by one uniform draw from `rng`.
pub fn route_model<'a, R: Rng + ?Sized>(ensemble: &'a ModelEnsemble, rng: &mut R) -> &'a str {
    let u: f64 = rng.random();
    &ensemble.entries[ensemble.index_for_draw(u)].model_id
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Mock {
        #[serde(default = "default_step_scale")]
        step_scale: f64,
    },
    Chat(ChatProviderConfig),
}

fn default_step_scale() -> f64 {
    0.01
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Mock {
            step_scale: default_step_scale(),
        }
    }
}

/// The routing table plus the generator every routed request goes to.
#[derive(Clone)]
pub struct ProviderSet {
    pub ensemble: ModelEnsemble,
    pub provider: Arc<dyn Provider>,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl ProviderSet {
    pub fn new(ensemble: ModelEnsemble, provider: Arc<dyn Provider>) -> Self {
        ProviderSet {
            ensemble,
            provider,
            max_output_tokens: 4096,
            temperature: 0.7,
        }
    }

    /// Builds the provider described by `config`; environment overrides apply
    /// to chat providers.
    pub fn from_config(config: &ProviderConfig, weights: &BTreeMap<String, f64>) -> Result<Self> {
        match config {
            ProviderConfig::Mock { step_scale } => {
                if !(step_scale.is_finite() && *step_scale >= 0.0) {
                    return Err(Error::config("provider.step_scale", "must be a finite number >= 0"));
                }
                let ensemble = ModelEnsemble::from_weights(weights)?;
                Ok(ProviderSet::new(ensemble, Arc::new(MockProvider::new(*step_scale))))
            }
            ProviderConfig::Chat(chat) => {
                let chat = chat.clone().with_env_overrides();
                let ensemble = ModelEnsemble::new(
                    weights
                        .iter()
                        .map(|(id, &weight)| EnsembleEntry {
                            model_id: id.clone(),
                            weight,
                            endpoint: chat.endpoints.get(id).cloned(),
                        })
                        .collect(),
                )?;
                let mut set = ProviderSet::new(ensemble.clone(), Arc::new(ChatProvider::new(chat.clone(), &ensemble)?));
                set.max_output_tokens = chat.max_output_tokens;
                set.temperature = chat.temperature;
                Ok(set)
            }
        }
    }
}

impl std::fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSet")
            .field("ensemble", &self.ensemble)
            .field("max_output_tokens", &self.max_output_tokens)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}
