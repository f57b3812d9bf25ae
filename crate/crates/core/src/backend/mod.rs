//! Agent implementations behind one interface.

mod gmm;
mod llm;
mod names;
mod synthetic;

use rand_distr::{Distribution, StandardNormal};

pub use gmm::{GmmAgentState, GmmBackend, GmmParams};
pub use llm::{LlmAgentState, LlmBackend, LlmClient, LlmParams};
pub use names::{extract_label, load_name_list, synthetic_sentences, DEFAULT_FLOWER_NAMES};
pub use synthetic::{
    init_corpus, LabelArchetypes, ResponsePolicy, SyntheticAgentState, SyntheticBackend,
    SyntheticParams,
};

use crate::error::BackendError;
use crate::model::{Answer, Embedding};
use crate::seed::SimRng;

/// Contract every agent kind satisfies.
///
/// `respond` is read-only: the engine may call it for all agents before any update.
/// `update` must be a deterministic function of the state and the payload.
pub trait AgentBackend {
    type State: Clone + Send;

    /// Builds the initial state of all `n` agents. Randomness comes only from streams
    /// derived from `seed`.
    fn initialize(&self, n: usize, seed: u64) -> Result<Vec<Self::State>, BackendError>;

    fn respond(&self, state: &Self::State, rng: &mut SimRng) -> Result<Answer, BackendError>;

    fn update(
        &self,
        state: &mut Self::State,
        payload: &Answer,
        tick: usize,
    ) -> Result<(), BackendError>;
}

/// `mean + sigma * z` with `z` standard normal per component.
pub(crate) fn perturb(mean: &[f64], sigma: f64, rng: &mut SimRng) -> Embedding {
    Embedding::new(
        mean.iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sigma * z
            })
            .collect(),
    )
}

/// Draws a label index from non-negative weights using one uniform variate.
pub(crate) fn sample_weighted(weights: &[f64], rng: &mut SimRng) -> Option<usize> {
    use rand::Rng;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    // Rounding can leave u just above the accumulated total.
    last_positive
}

pub(crate) fn check_sigma(name: &'static str, v: f64) -> Result<(), BackendError> {
    if v < 0.0 || !v.is_finite() {
        return Err(BackendError::InvalidParam {
            name,
            message: format!("must be a finite value >= 0, got {v}"),
        });
    }
    Ok(())
}
