//! One system run: measurement, snapshot, then interaction, tick by tick.
//!
//! Within tick `t` every agent first answers from its current state. The answers give
//! the distance matrix, the silo labels and the snapshot. For `t >= 1` each agent then
//! picks a partner uniformly among its `k` nearest neighbours and, with probability `p`,
//! is mirrored (it stores its own answer) instead of storing the partner's answer.
//! All payloads are fixed before any database changes, so updates are synchronous.

use rand::Rng;

use crate::backend::{AgentBackend, GmmBackend, LlmBackend, SyntheticBackend};
use crate::error::EngineError;
use crate::metrics::{entropy, silo_tally, stability};
use crate::model::{Answer, BackendConfig, Probability, SiloLabel, SystemConfig, SystemSnapshot, Trajectory};
use crate::seed::{stream, SimRng, StreamRole, StreamTag};

/// Pairwise L2 distances between one tick's answer embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn distance_matrix(answers: &[Answer]) -> Result<DistanceMatrix, EngineError> {
    let n = answers.len();
    let d = answers.first().map_or(0, |a| a.embedding.dim());
    for (agent, a) in answers.iter().enumerate() {
        if a.embedding.dim() != d {
            return Err(EngineError::DimensionMismatch {
                agent,
                expected: d,
                got: a.embedding.dim(),
            });
        }
        if !a.embedding.is_finite() {
            return Err(EngineError::NonFiniteEmbedding { agent });
        }
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dist = answers[i].embedding.distance(&answers[j].embedding);
            data[i * n + j] = dist;
            data[j * n + i] = dist;
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// The `k` agents closest to `i` (excluding `i`), ties broken by ascending index,
/// returned in ascending index order.
pub fn k_nearest(dist: &DistanceMatrix, i: usize, k: usize) -> Result<Vec<usize>, EngineError> {
    let n = dist.len();
    if i >= n {
        return Err(EngineError::AgentOutOfRange { index: i, n });
    }
    if k < 1 || k + 1 > n {
        return Err(EngineError::KOutOfRange { k, n });
    }
    let row = dist.row(i);
    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    others.truncate(k);
    others.sort_unstable();
    Ok(others)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedInteraction {
    pub partner: usize,
    pub mirrored: bool,
    /// The agent's own answer when mirrored, the partner's otherwise.
    pub payload: Answer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionPlan {
    pub entries: Vec<PlannedInteraction>,
}

/// Plans one tick of interactions. `streams[i]` is agent `i`'s interaction stream; each
/// agent draws exactly two variates from it, partner first, then the mirror flag.
pub fn plan_interactions(
    answers: &[Answer],
    dist: &DistanceMatrix,
    p: Probability,
    k: usize,
    streams: &mut [SimRng],
) -> Result<InteractionPlan, EngineError> {
    let n = answers.len();
    assert_eq!(streams.len(), n, "one interaction stream per agent");
    let mut entries = Vec::with_capacity(n);
    for (i, rng) in streams.iter_mut().enumerate() {
        let neighbours = k_nearest(dist, i, k)?;
        let pick = rng.random_range(0..neighbours.len());
        let mirrored = rng.random::<f64>() < p.value();
        let partner = neighbours[pick];
        let source = if mirrored { i } else { partner };
        entries.push(PlannedInteraction {
            partner,
            mirrored,
            payload: answers[source].clone(),
        });
    }
    Ok(InteractionPlan { entries })
}

/// Applies `plan` to `states`, visiting agents in `order`. The result does not depend
/// on the order because each agent's update reads only its own state and its payload.
pub fn apply_plan<B: AgentBackend>(
    backend: &B,
    states: &mut [B::State],
    plan: &InteractionPlan,
    tick: usize,
    order: impl IntoIterator<Item = usize>,
) -> Result<(), EngineError> {
    for agent in order {
        backend
            .update(&mut states[agent], &plan.entries[agent].payload, tick)
            .map_err(|source| EngineError::Backend { tick, agent, source })?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every agent's answer embedding in each snapshot.
    pub record_embeddings: bool,
}

/// Everything one tick produced.
#[derive(Clone, Debug)]
pub struct TickOutcome {
    pub snapshot: SystemSnapshot,
    pub answers: Vec<Answer>,
    pub distances: DistanceMatrix,
    /// `None` at `t = 0`, which is measurement only.
    pub plan: Option<InteractionPlan>,
}

/// Runs tick `t`: measurement from the current states, snapshot, and (for `t >= 1`)
/// synchronous updates. `prev_labels` are the labels measured at `t - 1`.
pub fn step_system<B: AgentBackend>(
    backend: &B,
    states: &mut [B::State],
    prev_labels: Option<&[SiloLabel]>,
    t: usize,
    config: &SystemConfig,
    options: RunOptions,
) -> Result<TickOutcome, EngineError> {
    let seed = config.seed;
    let d = config.dimension();
    let answers = states
        .iter()
        .enumerate()
        .map(|(agent, state)| {
            let mut rng = stream(seed, &StreamTag::agent_tick(StreamRole::Respond, agent, t));
            let answer = backend
                .respond(state, &mut rng)
                .map_err(|source| EngineError::Backend { tick: t, agent, source })?;
            if answer.embedding.dim() != d {
                return Err(EngineError::DimensionMismatch {
                    agent,
                    expected: d,
                    got: answer.embedding.dim(),
                });
            }
            Ok(answer)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let distances = distance_matrix(&answers)?;
    let labels: Vec<SiloLabel> = answers.iter().map(|a| a.label).collect();
    let tally = silo_tally(&labels);
    let known = tally.known();
    let entropy = if known == 0 { 0.0 } else { entropy(&tally.counts, known)? };
    let stability = prev_labels.map(|prev| stability(prev, &labels)).transpose()?;
    let snapshot = SystemSnapshot {
        t,
        labels,
        silo_count: tally.silo_count,
        silo_counts: tally.counts,
        stability,
        entropy,
        embeddings: options
            .record_embeddings
            .then(|| answers.iter().map(|a| a.embedding.clone()).collect()),
    };

    let plan = if t >= 1 {
        let mut streams: Vec<SimRng> = (0..states.len())
            .map(|agent| stream(seed, &StreamTag::agent_tick(StreamRole::Interaction, agent, t)))
            .collect();
        let plan = plan_interactions(&answers, &distances, config.p, config.k, &mut streams)?;
        apply_plan(backend, states, &plan, t, 0..states.len())?;
        Some(plan)
    } else {
        None
    };

    Ok(TickOutcome {
        snapshot,
        answers,
        distances,
        plan,
    })
}

/// Drives a run tick by tick; useful when callers want to inspect states between ticks.
pub struct Simulation<'a, B: AgentBackend> {
    backend: &'a B,
    config: &'a SystemConfig,
    options: RunOptions,
    states: Vec<B::State>,
    prev_labels: Option<Vec<SiloLabel>>,
    next_tick: usize,
}

impl<'a, B: AgentBackend> Simulation<'a, B> {
    pub fn new(backend: &'a B, config: &'a SystemConfig, options: RunOptions) -> Result<Self, EngineError> {
        config.validate_run()?;
        let states = backend
            .initialize(config.n, config.seed)
            .map_err(EngineError::Init)?;
        Ok(Simulation {
            backend,
            config,
            options,
            states,
            prev_labels: None,
            next_tick: 0,
        })
    }

    pub fn states(&self) -> &[B::State] {
        &self.states
    }

    pub fn next_tick(&self) -> usize {
        self.next_tick
    }

    pub fn step(&mut self) -> Result<TickOutcome, EngineError> {
        let t = self.next_tick;
        let outcome = step_system(
            self.backend,
            &mut self.states,
            self.prev_labels.as_deref(),
            t,
            self.config,
            self.options,
        )?;
        self.prev_labels = Some(outcome.snapshot.labels.clone());
        self.next_tick += 1;
        Ok(outcome)
    }
}

pub fn run_with_backend<B: AgentBackend>(
    backend: &B,
    config: &SystemConfig,
    options: RunOptions,
) -> Result<Trajectory, EngineError> {
    let mut sim = Simulation::new(backend, config, options)?;
    let mut snapshots = Vec::with_capacity(config.t_final + 1);
    for _ in 0..=config.t_final {
        snapshots.push(sim.step()?.snapshot);
    }
    Ok(Trajectory {
        config: Some(config.clone()),
        snapshots,
    })
}

/// Runs the configured backend for ticks `0..=T`.
pub fn run_system(config: &SystemConfig, options: RunOptions) -> Result<Trajectory, EngineError> {
    config.validate_run()?;
    match &config.backend {
        BackendConfig::Synthetic(p) => {
            run_with_backend(&SyntheticBackend::from_config(config, p), config, options)
        }
        BackendConfig::Gmm(p) => run_with_backend(&GmmBackend::from_config(config, p), config, options),
        BackendConfig::Llm(p) => {
            let backend = LlmBackend::from_config(config, p).map_err(EngineError::Init)?;
            run_with_backend(&backend, config, options)
        }
    }
}
