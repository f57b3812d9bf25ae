//! Bridge to an external chat model and embedding model over HTTP.
//!
//! Requests follow the OpenAI-compatible shapes: the chat endpoint receives
//! `{"model", "messages": [{"role": "system", "content": <retrieved context>},
//! {"role": "user", "content": <question>}]}` and the embedding endpoint receives
//! `{"model", "input"}`. Replies in either the OpenAI or the Ollama layout are accepted.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::time::Duration;

use log::warn;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::names::{extract_label, load_name_list, synthetic_sentences, DEFAULT_FLOWER_NAMES};
use super::AgentBackend;
use crate::error::{BackendError, ConfigError};
use crate::model::{AgentDatabase, Answer, DatabaseItem, Embedding, SiloLabel, SystemConfig};
use crate::seed::{stream, SimRng, StreamRole, StreamTag};

pub const DEFAULT_QUESTION: &str = "Describe the prettiest flower in a single sentence.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmParams {
    pub chat_url: String,
    pub chat_model: String,
    pub embed_url: String,
    pub embed_model: String,
    /// Name list file; the built-in flower list is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub names_file: Option<PathBuf>,
    /// Sentence pool, one sentence per line; generated from templates when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_file: Option<PathBuf>,
    /// Size of the generated sentence pool.
    pub corpus_size: usize,
    /// Sentences per agent database.
    pub capacity: usize,
    pub question: String,
    pub timeout_secs: u64,
}

impl Default for LlmParams {
    fn default() -> Self {
        LlmParams {
            chat_url: "http://127.0.0.1:8080/v1/chat/completions".into(),
            chat_model: "llama-2-7b-chat".into(),
            embed_url: "http://127.0.0.1:8080/v1/embeddings".into(),
            embed_model: "nomic-embed-text-v1.5".into(),
            names_file: None,
            corpus_file: None,
            corpus_size: 200,
            capacity: 10,
            question: DEFAULT_QUESTION.into(),
            timeout_secs: 120,
        }
    }
}

impl LlmParams {
    pub(crate) fn validate(&self, labels: usize) -> Result<(), ConfigError> {
        if self.capacity < 1 {
            return Err(ConfigError::invalid("backend.params.capacity", "must be >= 1"));
        }
        if self.corpus_file.is_none() && self.corpus_size < self.capacity {
            return Err(ConfigError::invalid(
                "backend.params.corpus_size",
                "must be at least the database capacity",
            ));
        }
        if self.names_file.is_none() && labels != DEFAULT_FLOWER_NAMES.len() {
            return Err(ConfigError::invalid(
                "L",
                format!(
                    "must equal the built-in name list length ({}) unless names_file is set",
                    DEFAULT_FLOWER_NAMES.len()
                ),
            ));
        }
        if self.timeout_secs == 0 {
            return Err(ConfigError::invalid("backend.params.timeout_secs", "must be >= 1"));
        }
        Ok(())
    }
}

/// Blocking client for the chat and embedding endpoints.
#[derive(Clone, Debug)]
pub struct LlmClient {
    agent: ureq::Agent,
    chat_url: String,
    chat_model: String,
    embed_url: String,
    embed_model: String,
}

impl LlmClient {
    pub fn new(params: &LlmParams) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(params.timeout_secs)))
            .build()
            .into();
        LlmClient {
            agent,
            chat_url: params.chat_url.clone(),
            chat_model: params.chat_model.clone(),
            embed_url: params.embed_url.clone(),
            embed_model: params.embed_model.clone(),
        }
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let response = self.agent.post(url).send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
                BackendError::Protocol {
                    endpoint: url.to_string(),
                    message: format!("HTTP status {code}"),
                }
            }
            other => BackendError::Transport {
                endpoint: url.to_string(),
                message: other.to_string(),
            },
        })?;
        response
            .into_body()
            .read_json::<Value>()
            .map_err(|e| BackendError::Protocol {
                endpoint: url.to_string(),
                message: format!("invalid JSON body: {e}"),
            })
    }

    pub fn chat(&self, context: &str, question: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.chat_model,
            "messages": [
                {"role": "system", "content": context},
                {"role": "user", "content": question},
            ],
        });
        let reply = self.post(&self.chat_url, &body)?;
        reply
            .pointer("/choices/0/message/content")
            .or_else(|| reply.pointer("/message/content"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol {
                endpoint: self.chat_url.clone(),
                message: "no message content in reply".into(),
            })
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        let body = json!({"model": self.embed_model, "input": text});
        let reply = self.post(&self.embed_url, &body)?;
        let vector = reply
            .pointer("/data/0/embedding")
            .or_else(|| reply.get("embedding"))
            .or_else(|| reply.pointer("/embeddings/0"))
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol {
                endpoint: self.embed_url.clone(),
                message: "no embedding vector in reply".into(),
            })?;
        let components = vector
            .iter()
            .map(Value::as_f64)
            .collect::<Option<Vec<f64>>>()
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .ok_or_else(|| BackendError::Protocol {
                endpoint: self.embed_url.clone(),
                message: "embedding has non-numeric or non-finite components".into(),
            })?;
        Ok(Embedding::new(components))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmAgentState {
    /// Every item carries its sentence.
    pub database: AgentDatabase,
    /// Embedding of the measurement question, used for retrieval.
    pub query: Embedding,
}

#[derive(Clone, Debug)]
pub struct LlmBackend {
    client: LlmClient,
    params: LlmParams,
    names: Vec<String>,
    d: usize,
}

impl LlmBackend {
    pub fn new(params: LlmParams, d: usize, labels: usize) -> Result<Self, BackendError> {
        let names = match &params.names_file {
            Some(path) => load_name_list(path)?,
            None => DEFAULT_FLOWER_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        if names.is_empty() || names.len() != labels {
            return Err(BackendError::InvalidParam {
                name: "names_file",
                message: format!("name list has {} entries, L = {labels}", names.len()),
            });
        }
        Ok(LlmBackend {
            client: LlmClient::new(&params),
            params,
            names,
            d,
        })
    }

    pub fn from_config(config: &SystemConfig, params: &LlmParams) -> Result<Self, BackendError> {
        Self::new(params.clone(), config.dimension(), config.labels)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn embed_checked(&self, text: &str) -> Result<Embedding, BackendError> {
        let e = self.client.embed(text)?;
        if e.dim() != self.d {
            return Err(BackendError::DimensionMismatch {
                expected: self.d,
                got: e.dim(),
            });
        }
        Ok(e)
    }

    fn label_of(&self, text: &str) -> SiloLabel {
        extract_label(text, &self.names).unwrap_or_else(|| {
            warn!("no known name in {text:?}; answer counted as unknown");
            SiloLabel::UNKNOWN
        })
    }

    fn sentence_pool(&self, seed: u64) -> Result<Vec<String>, BackendError> {
        match &self.params.corpus_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect())
            }
            None => {
                let mut rng = stream(seed, &StreamTag::role(StreamRole::Corpus));
                Ok(synthetic_sentences(&self.names, self.params.corpus_size, &mut rng))
            }
        }
    }
}

impl AgentBackend for LlmBackend {
    type State = LlmAgentState;

    fn initialize(&self, n: usize, seed: u64) -> Result<Vec<Self::State>, BackendError> {
        let capacity = NonZeroUsize::new(self.params.capacity).ok_or(BackendError::InvalidParam {
            name: "capacity",
            message: "must be >= 1".into(),
        })?;
        let pool = self.sentence_pool(seed)?;
        if pool.len() < capacity.get() {
            return Err(BackendError::InvalidParam {
                name: "corpus_file",
                message: format!("{} sentences, need at least {}", pool.len(), capacity),
            });
        }
        let query = self.embed_checked(&self.params.question)?;
        let mut cache: HashMap<usize, Embedding> = HashMap::new();
        let mut states = Vec::with_capacity(n);
        for agent in 0..n {
            let mut rng = stream(seed, &StreamTag::agent(StreamRole::Init, agent));
            let mut database = AgentDatabase::new(capacity);
            for idx in sample(&mut rng, pool.len(), capacity.get()) {
                let embedding = match cache.get(&idx) {
                    Some(e) => e.clone(),
                    None => {
                        let e = self.embed_checked(&pool[idx])?;
                        cache.insert(idx, e.clone());
                        e
                    }
                };
                database.push(DatabaseItem {
                    label: self.label_of(&pool[idx]),
                    embedding,
                    text: Some(pool[idx].clone()),
                    inserted_at: 0,
                });
            }
            states.push(LlmAgentState {
                database,
                query: query.clone(),
            });
        }
        Ok(states)
    }

    fn respond(&self, state: &Self::State, _rng: &mut SimRng) -> Result<Answer, BackendError> {
        let mut best: Option<(&DatabaseItem, f64)> = None;
        for item in state.database.iter().rev() {
            let dist = item.embedding.distance(&state.query);
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((item, dist));
            }
        }
        let (context, _) = best.ok_or(BackendError::EmptyDatabase)?;
        let reply = self
            .client
            .chat(context.text.as_deref().unwrap_or_default(), &self.params.question)?;
        let embedding = self.embed_checked(&reply)?;
        Ok(Answer {
            label: self.label_of(&reply),
            embedding,
            text: Some(reply),
        })
    }

    fn update(&self, state: &mut Self::State, payload: &Answer, tick: usize) -> Result<(), BackendError> {
        if payload.embedding.dim() != self.d {
            return Err(BackendError::DimensionMismatch {
                expected: self.d,
                got: payload.embedding.dim(),
            });
        }
        let text = payload.text.clone().ok_or(BackendError::InvalidParam {
            name: "payload",
            message: "LLM agents only store answers that carry text".into(),
        })?;
        state.database.push(DatabaseItem {
            label: payload.label,
            embedding: payload.embedding.clone(),
            text: Some(text),
            inserted_at: tick,
        });
        Ok(())
    }
}
