//! Gaussian-mixture agents: each agent is a mixture over the L labels, answers by
//! sampling a component, and absorbs payloads by bumping that component's pseudo-count
//! and moving its mean toward the payload.

use serde::{Deserialize, Serialize};

use super::synthetic::{init_corpus, validate_corpus_params, SyntheticParams};
use super::{check_sigma, perturb, sample_weighted, AgentBackend};
use crate::error::{BackendError, ConfigError};
use crate::model::{Answer, Embedding, SiloLabel, SystemConfig};
use crate::seed::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmParams {
    /// Size of the labeled sample each agent is initialized from.
    pub capacity: usize,
    pub rho: f64,
    /// Noise of the initial sample; defaults to 0.25 rho.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_init: Option<f64>,
    /// Component standard deviation; defaults to 0.05 rho.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Mean learning rate, in (0, 1].
    pub eta: f64,
    /// Prior pseudo-count added to every component.
    pub alpha0: f64,
    /// Multiplicative pseudo-count decay applied before each update, in [0, 1).
    pub decay: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_weights: Option<Vec<f64>>,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            capacity: 10,
            rho: 1.0,
            sigma_init: None,
            sigma: None,
            eta: 0.1,
            alpha0: 1.0,
            decay: 0.0,
            label_weights: None,
        }
    }
}

impl GmmParams {
    pub fn sigma_init(&self) -> f64 {
        self.sigma_init.unwrap_or(0.25 * self.rho)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(0.05 * self.rho)
    }

    pub(crate) fn validate(&self, labels: usize) -> Result<(), ConfigError> {
        validate_corpus_params(
            self.capacity,
            self.rho,
            &[("sigma_init", self.sigma_init()), ("sigma", self.sigma())],
            self.label_weights.as_deref(),
            labels,
        )?;
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(ConfigError::invalid("backend.params.eta", "must lie in (0, 1]"));
        }
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(ConfigError::invalid("backend.params.alpha0", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(ConfigError::invalid("backend.params.decay", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmAgentState {
    pub pseudo_counts: Vec<f64>,
    pub means: Vec<Embedding>,
    pub sigma: f64,
    pub eta: f64,
    pub decay: f64,
}

impl GmmAgentState {
    pub fn respond(&self, rng: &mut SimRng) -> Result<Answer, BackendError> {
        let c = sample_weighted(&self.pseudo_counts, rng).ok_or(BackendError::ZeroPseudoCounts)?;
        Ok(Answer::new(
            SiloLabel::new(c as u32),
            perturb(self.means[c].as_slice(), self.sigma, rng),
        ))
    }

    pub fn update(&mut self, payload: &Answer) -> Result<(), BackendError> {
        let labels = self.means.len();
        let c = payload
            .label
            .id()
            .map(|id| id as usize)
            .filter(|&c| c < labels)
            .ok_or(BackendError::LabelOutOfRange {
                id: payload.label.as_i64(),
                labels,
            })?;
        let mean = &mut self.means[c];
        if payload.embedding.dim() != mean.dim() {
            return Err(BackendError::DimensionMismatch {
                expected: mean.dim(),
                got: payload.embedding.dim(),
            });
        }
        if self.decay > 0.0 {
            for a in &mut self.pseudo_counts {
                *a *= 1.0 - self.decay;
            }
        }
        self.pseudo_counts[c] += 1.0;
        for (m, x) in mean.as_mut_slice().iter_mut().zip(payload.embedding.as_slice()) {
            *m += self.eta * (x - *m);
        }
        Ok(())
    }
}

/// Agents start from the same kind of labeled sample as the synthetic backend:
/// `alpha_c = alpha0 + (items with label c)` and `mu_c` is the mean of those items, or
/// the label archetype when the sample holds none.
#[derive(Clone, Debug)]
pub struct GmmBackend {
    params: GmmParams,
    d: usize,
    labels: usize,
}

impl GmmBackend {
    pub fn new(params: GmmParams, d: usize, labels: usize) -> Self {
        GmmBackend { params, d, labels }
    }

    pub fn from_config(config: &SystemConfig, params: &GmmParams) -> Self {
        Self::new(params.clone(), config.dimension(), config.labels)
    }
}

impl AgentBackend for GmmBackend {
    type State = GmmAgentState;

    fn initialize(&self, n: usize, seed: u64) -> Result<Vec<Self::State>, BackendError> {
        check_sigma("sigma", self.params.sigma())?;
        let corpus = SyntheticParams {
            capacity: self.params.capacity,
            rho: self.params.rho,
            sigma_init: Some(self.params.sigma_init()),
            sigma_gen: Some(0.0),
            label_weights: self.params.label_weights.clone(),
            ..SyntheticParams::default()
        };
        let (archetypes, samples) = init_corpus(&corpus, n, self.d, self.labels, seed)?;
        Ok(samples
            .iter()
            .map(|s| {
                let mut counts = vec![0usize; self.labels];
                let mut sums = vec![vec![0.0; self.d]; self.labels];
                for item in s.database.iter() {
                    let c = item.label.id().expect("corpus labels are known") as usize;
                    counts[c] += 1;
                    for (acc, x) in sums[c].iter_mut().zip(item.embedding.as_slice()) {
                        *acc += x;
                    }
                }
                let means = (0..self.labels)
                    .map(|c| {
                        if counts[c] == 0 {
                            archetypes.means[c].clone()
                        } else {
                            Embedding::new(sums[c].iter().map(|v| v / counts[c] as f64).collect())
                        }
                    })
                    .collect();
                GmmAgentState {
                    pseudo_counts: counts.iter().map(|&c| self.params.alpha0 + c as f64).collect(),
                    means,
                    sigma: self.params.sigma(),
                    eta: self.params.eta,
                    decay: self.params.decay,
                }
            })
            .collect())
    }

    fn respond(&self, state: &Self::State, rng: &mut SimRng) -> Result<Answer, BackendError> {
        state.respond(rng)
    }

    fn update(&self, state: &mut Self::State, payload: &Answer, _tick: usize) -> Result<(), BackendError> {
        state.update(payload)
    }
}
