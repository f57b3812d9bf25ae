//! Synthetic retrieval agent: a bounded database of labeled embeddings around fixed
//! per-label archetypes.

use std::num::NonZeroUsize;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_sigma, perturb, sample_weighted, AgentBackend};
use crate::error::{BackendError, ConfigError};
use crate::model::{AgentDatabase, Answer, DatabaseItem, Embedding, SiloLabel, SystemConfig};
use crate::seed::{stream, SimRng, StreamRole, StreamTag};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponsePolicy {
    /// Answer with the most frequent label; embedding is that label's centroid.
    #[default]
    MajorityCentroid,
    /// Answer with the single item closest to the query vector.
    NearestToQuery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticParams {
    /// Database capacity C, also the initial database size.
    pub capacity: usize,
    /// Archetype norm.
    pub rho: f64,
    /// Initial item noise; defaults to 0.25 rho.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_init: Option<f64>,
    /// Answer generation noise; defaults to 0.05 rho.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_gen: Option<f64>,
    pub policy: ResponsePolicy,
    /// Relative label frequencies in the initial corpus; uniform when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_weights: Option<Vec<f64>>,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            capacity: 10,
            rho: 1.0,
            sigma_init: None,
            sigma_gen: None,
            policy: ResponsePolicy::MajorityCentroid,
            label_weights: None,
        }
    }
}

impl SyntheticParams {
    pub fn sigma_init(&self) -> f64 {
        self.sigma_init.unwrap_or(0.25 * self.rho)
    }

    pub fn sigma_gen(&self) -> f64 {
        self.sigma_gen.unwrap_or(0.05 * self.rho)
    }

    pub(crate) fn validate(&self, labels: usize) -> Result<(), ConfigError> {
        validate_corpus_params(
            self.capacity,
            self.rho,
            &[("sigma_init", self.sigma_init()), ("sigma_gen", self.sigma_gen())],
            self.label_weights.as_deref(),
            labels,
        )
    }
}

pub(crate) fn validate_corpus_params(
    capacity: usize,
    rho: f64,
    sigmas: &[(&str, f64)],
    weights: Option<&[f64]>,
    labels: usize,
) -> Result<(), ConfigError> {
    if capacity < 1 {
        return Err(ConfigError::invalid("backend.params.capacity", "must be >= 1"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(ConfigError::invalid("backend.params.rho", "must be > 0"));
    }
    for (name, v) in sigmas {
        if !(*v >= 0.0 && v.is_finite()) {
            return Err(ConfigError::invalid(
                format!("backend.params.{name}"),
                format!("must be a finite value >= 0, got {v}"),
            ));
        }
    }
    if let Some(w) = weights {
        if w.len() != labels {
            return Err(ConfigError::invalid(
                "backend.params.label_weights",
                format!("expected {labels} weights (one per label), got {}", w.len()),
            ));
        }
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || !(w.iter().sum::<f64>() > 0.0) {
            return Err(ConfigError::invalid(
                "backend.params.label_weights",
                "weights must be finite, non-negative and not all zero",
            ));
        }
    }
    Ok(())
}

/// One fixed embedding per label, all at distance `rho` from the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelArchetypes {
    pub means: Vec<Embedding>,
    pub separation: f64,
}

impl LabelArchetypes {
    /// Draws `labels` distinct points uniformly on the sphere of radius `rho`.
    pub fn draw(labels: usize, d: usize, rho: f64, rng: &mut SimRng) -> Result<Self, BackendError> {
        let mut means: Vec<Embedding> = Vec::with_capacity(labels);
        let mut attempts = 0;
        while means.len() < labels {
            attempts += 1;
            if attempts > 100 * labels + 100 {
                return Err(BackendError::InvalidParam {
                    name: "L",
                    message: format!("cannot place {labels} distinct archetypes in dimension {d}"),
                });
            }
            let candidate = random_on_sphere(d, rho, rng);
            if !means.contains(&candidate) {
                means.push(candidate);
            }
        }
        Ok(LabelArchetypes {
            means,
            separation: rho,
        })
    }
}

pub(crate) fn random_on_sphere(d: usize, rho: f64, rng: &mut SimRng) -> Embedding {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return Embedding::new(v.into_iter().map(|x| rho * x / norm).collect());
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticAgentState {
    pub database: AgentDatabase,
    pub policy: ResponsePolicy,
    pub sigma_gen: f64,
    /// Only consulted by [`ResponsePolicy::NearestToQuery`].
    pub query: Embedding,
}

impl SyntheticAgentState {
    pub fn respond(&self, rng: &mut SimRng) -> Result<Answer, BackendError> {
        let (label, mean) = match self.policy {
            ResponsePolicy::MajorityCentroid => majority_centroid(&self.database)?,
            ResponsePolicy::NearestToQuery => {
                let item = nearest_item(&self.database, &self.query)?;
                (item.label, item.embedding.clone())
            }
        };
        Ok(Answer::new(label, perturb(mean.as_slice(), self.sigma_gen, rng)))
    }

    pub fn update(&mut self, payload: &Answer, tick: usize) -> Result<(), BackendError> {
        let expected = self.query.dim();
        if payload.embedding.dim() != expected {
            return Err(BackendError::DimensionMismatch {
                expected,
                got: payload.embedding.dim(),
            });
        }
        self.database.push(DatabaseItem {
            label: payload.label,
            embedding: payload.embedding.clone(),
            text: payload.text.clone(),
            inserted_at: tick,
        });
        Ok(())
    }
}

/// Most frequent label, ties going to the label of the most recently inserted item
/// among the tied labels, together with the centroid of that label's items.
fn majority_centroid(db: &AgentDatabase) -> Result<(SiloLabel, Embedding), BackendError> {
    let counts = db.label_counts();
    let top = counts.values().copied().max().ok_or(BackendError::EmptyDatabase)?;
    let label = db
        .iter()
        .rev()
        .map(|item| item.label)
        .find(|l| counts[l] == top)
        .ok_or(BackendError::EmptyDatabase)?;

    let d = db.iter().next().map_or(0, |i| i.embedding.dim());
    let mut sum = vec![0.0; d];
    for item in db.iter().filter(|i| i.label == label) {
        for (s, x) in sum.iter_mut().zip(item.embedding.as_slice()) {
            *s += x;
        }
    }
    let denom = top as f64;
    Ok((label, Embedding::new(sum.into_iter().map(|s| s / denom).collect())))
}

/// Item closest to `query`; ties go to the most recently inserted item.
fn nearest_item<'a>(db: &'a AgentDatabase, query: &Embedding) -> Result<&'a DatabaseItem, BackendError> {
    let mut best: Option<(&DatabaseItem, f64)> = None;
    for item in db.iter().rev() {
        let dist = item.embedding.distance(query);
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((item, dist));
        }
    }
    best.map(|(i, _)| i).ok_or(BackendError::EmptyDatabase)
}

/// Draws the archetypes (and the shared query vector) from the corpus stream, then
/// fills each agent's database with `capacity` items from that agent's init stream.
pub fn init_corpus(
    params: &SyntheticParams,
    n: usize,
    d: usize,
    labels: usize,
    seed: u64,
) -> Result<(LabelArchetypes, Vec<SyntheticAgentState>), BackendError> {
    check_sigma("sigma_init", params.sigma_init())?;
    check_sigma("sigma_gen", params.sigma_gen())?;
    let capacity = NonZeroUsize::new(params.capacity).ok_or(BackendError::InvalidParam {
        name: "capacity",
        message: "must be >= 1".into(),
    })?;
    let mut corpus_rng = stream(seed, &StreamTag::role(StreamRole::Corpus));
    let archetypes = LabelArchetypes::draw(labels, d, params.rho, &mut corpus_rng)?;
    let query = random_on_sphere(d, params.rho, &mut corpus_rng);

    let weights = params
        .label_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; labels]);
    let states = (0..n)
        .map(|agent| {
            let mut rng = stream(seed, &StreamTag::agent(StreamRole::Init, agent));
            let mut database = AgentDatabase::new(capacity);
            for _ in 0..capacity.get() {
                let label = sample_weighted(&weights, &mut rng).ok_or(BackendError::InvalidParam {
                    name: "label_weights",
                    message: "all zero".into(),
                })?;
                let embedding = perturb(archetypes.means[label].as_slice(), params.sigma_init(), &mut rng);
                database.push(DatabaseItem {
                    label: SiloLabel::new(label as u32),
                    embedding,
                    text: None,
                    inserted_at: 0,
                });
            }
            Ok(SyntheticAgentState {
                database,
                policy: params.policy,
                sigma_gen: params.sigma_gen(),
                query: query.clone(),
            })
        })
        .collect::<Result<Vec<_>, BackendError>>()?;
    Ok((archetypes, states))
}

#[derive(Clone, Debug)]
pub struct SyntheticBackend {
    params: SyntheticParams,
    d: usize,
    labels: usize,
}

impl SyntheticBackend {
    pub fn new(params: SyntheticParams, d: usize, labels: usize) -> Self {
        SyntheticBackend { params, d, labels }
    }

    pub fn from_config(config: &SystemConfig, params: &SyntheticParams) -> Self {
        Self::new(params.clone(), config.dimension(), config.labels)
    }
}

impl AgentBackend for SyntheticBackend {
    type State = SyntheticAgentState;

    fn initialize(&self, n: usize, seed: u64) -> Result<Vec<Self::State>, BackendError> {
        init_corpus(&self.params, n, self.d, self.labels, seed).map(|(_, states)| states)
    }

    fn respond(&self, state: &Self::State, rng: &mut SimRng) -> Result<Answer, BackendError> {
        state.respond(rng)
    }

    fn update(&self, state: &mut Self::State, payload: &Answer, tick: usize) -> Result<(), BackendError> {
        state.update(payload, tick)
    }
}
