//! Domain types shared by the engine, the backends, the metrics and the harness.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::num::NonZeroUsize;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backend::{GmmParams, LlmParams, SyntheticParams};
use crate::classify::ClassifierParams;
use crate::classify::PatternLabel;
use crate::error::ConfigError;

/// Silo membership of one answer. Ids are dense in `0..L`; the unknown sentinel marks
/// answers where no label could be extracted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiloLabel(u32);

impl SiloLabel {
    pub const UNKNOWN: SiloLabel = SiloLabel(u32::MAX);

    pub fn new(id: u32) -> Self {
        assert!(id != u32::MAX, "label id reserved for the unknown sentinel");
        SiloLabel(id)
    }

    /// `None` for the unknown sentinel.
    pub fn id(self) -> Option<u32> {
        (!self.is_unknown()).then_some(self.0)
    }

    pub fn is_unknown(self) -> bool {
        self == Self::UNKNOWN
    }

    /// Wire form: the id, or -1 for unknown.
    pub fn as_i64(self) -> i64 {
        self.id().map_or(-1, i64::from)
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Self::UNKNOWN),
            0..=0xFFFF_FFFE => Some(SiloLabel(v as u32)),
            _ => None,
        }
    }
}

impl fmt::Display for SiloLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.id() {
            Some(id) => write!(f, "{id}"),
            None => f.write_str("unknown"),
        }
    }
}

impl Serialize for SiloLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.as_i64())
    }
}

impl<'de> Deserialize<'de> for SiloLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        SiloLabel::from_i64(v)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid silo label {v}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(components: Vec<f64>) -> Self {
        Embedding(components)
    }

    pub fn zeros(d: usize) -> Self {
        Embedding(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// One agent's response to the measurement question.
#[derive(Clone, Debug, PartialEq)]
pub struct Answer {
    pub label: SiloLabel,
    pub embedding: Embedding,
    pub text: Option<String>,
}

impl Answer {
    pub fn new(label: SiloLabel, embedding: Embedding) -> Self {
        Answer {
            label,
            embedding,
            text: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatabaseItem {
    pub label: SiloLabel,
    pub embedding: Embedding,
    pub text: Option<String>,
    /// Tick at which the item entered the database (0 for the initial corpus).
    pub inserted_at: usize,
}

/// Bounded FIFO knowledge base. Front is oldest.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentDatabase {
    items: VecDeque<DatabaseItem>,
    capacity: NonZeroUsize,
}

impl AgentDatabase {
    pub fn new(capacity: NonZeroUsize) -> Self {
        AgentDatabase {
            items: VecDeque::with_capacity(capacity.get()),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity.get()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends `item` as newest, evicting the oldest items while over capacity.
    /// Returns the evicted items, oldest first.
    pub fn push(&mut self, item: DatabaseItem) -> Vec<DatabaseItem> {
        debug_assert!(self
            .items
            .back()
            .is_none_or(|last| last.inserted_at <= item.inserted_at));
        self.items.push_back(item);
        let mut evicted = Vec::new();
        while self.items.len() > self.capacity.get() {
            evicted.extend(self.items.pop_front());
        }
        evicted
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &DatabaseItem> + ExactSizeIterator {
        self.items.iter()
    }

    pub fn label_counts(&self) -> BTreeMap<SiloLabel, usize> {
        let mut counts = BTreeMap::new();
        for item in &self.items {
            *counts.entry(item.label).or_insert(0) += 1;
        }
        counts
    }
}

/// Mirroring probability. The value is parsed once; its canonical decimal text is the
/// shortest representation that round-trips to the same `f64`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self, ConfigError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ConfigError::invalid(
                "p",
                format!("must lie in [0, 1], got {value}"),
            ));
        }
        Ok(Probability(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn canonical_text(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for Probability {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| ConfigError::invalid("p", format!("not a decimal number: {s:?}")))?;
        Probability::new(v)
    }
}

impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Probability::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Synthetic(SyntheticParams),
    Gmm(GmmParams),
    Llm(LlmParams),
}

impl BackendConfig {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendConfig::Synthetic(_) => BackendKind::Synthetic,
            BackendConfig::Gmm(_) => BackendKind::Gmm,
            BackendConfig::Llm(_) => BackendKind::Llm,
        }
    }

    pub fn default_for(kind: BackendKind) -> Self {
        match kind {
            BackendKind::Synthetic => BackendConfig::Synthetic(SyntheticParams::default()),
            BackendKind::Gmm => BackendConfig::Gmm(GmmParams::default()),
            BackendKind::Llm => BackendConfig::Llm(LlmParams::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Synthetic,
    Gmm,
    Llm,
}

impl std::str::FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(BackendKind::Synthetic),
            "gmm" => Ok(BackendKind::Gmm),
            "llm" => Ok(BackendKind::Llm),
            other => Err(ConfigError::invalid(
                "backend.kind",
                format!("unknown backend {other:?} (expected synthetic, gmm or llm)"),
            )),
        }
    }
}

/// Classifier section of the config file. Unset `m` and `W` resolve against `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(rename = "epsEntropyConst", default = "default_eps_entropy_const")]
    pub eps_entropy_const: f64,
    #[serde(rename = "deltaEntropyApprox", default = "default_delta_entropy_approx")]
    pub delta_entropy_approx: f64,
    #[serde(rename = "epsMin", default = "default_eps_min")]
    pub eps_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precedence: Option<Vec<PatternLabel>>,
}

fn default_eps_entropy_const() -> f64 {
    1e-9
}
fn default_delta_entropy_approx() -> f64 {
    0.1
}
fn default_eps_min() -> f64 {
    1e-12
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            m: None,
            window: None,
            eps_entropy_const: default_eps_entropy_const(),
            delta_entropy_approx: default_delta_entropy_approx(),
            eps_min: default_eps_min(),
            precedence: None,
        }
    }
}

impl ClassifierConfig {
    /// Fills in `m = max(1, T/10)` and `W = 2m` when unset.
    pub fn resolve(&self, t_final: usize) -> ClassifierParams {
        let m = self.m.unwrap_or((t_final / 10).max(1));
        let window = self.window.unwrap_or(2 * m);
        ClassifierParams {
            m,
            window,
            eps_entropy_const: self.eps_entropy_const,
            delta_entropy_approx: self.delta_entropy_approx,
            eps_min: self.eps_min,
            precedence: self
                .precedence
                .clone()
                .unwrap_or_else(|| PatternLabel::DEFAULT_PRECEDENCE.to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_final: usize,
    pub p: Probability,
    pub k: usize,
    /// Embedding dimension; when absent, 768 for the LLM bridge and 8 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(rename = "L")]
    pub labels: usize,
    pub backend: BackendConfig,
    pub seed: u64,
    #[serde(default)]
    pub classifier: ClassifierConfig,
}

impl SystemConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: SystemConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                message: strip_position(&inner.to_string()),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dimension(&self) -> usize {
        self.d.unwrap_or(match self.backend {
            BackendConfig::Llm(_) => 768,
            _ => 8,
        })
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        self.classifier.resolve(self.t_final)
    }

    /// Full check applied to configuration files and CLI overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_final < 1 {
            return Err(ConfigError::invalid("T", "must be >= 1"));
        }
        self.validate_run()
    }

    /// Checks everything a run needs. Unlike [`SystemConfig::validate`] this accepts
    /// `T = 0`, a measurement-only run.
    pub fn validate_run(&self) -> Result<(), ConfigError> {
        if self.n < 2 {
            return Err(ConfigError::invalid("n", format!("must be >= 2, got {}", self.n)));
        }
        if self.k < 1 || self.k > self.n - 1 {
            return Err(ConfigError::invalid(
                "k",
                format!("must lie in [1, n-1] = [1, {}], got {}", self.n - 1, self.k),
            ));
        }
        if self.labels < 1 {
            return Err(ConfigError::invalid("L", "must be >= 1"));
        }
        if self.labels >= u32::MAX as usize {
            return Err(ConfigError::invalid("L", "too many labels"));
        }
        if self.dimension() < 1 {
            return Err(ConfigError::invalid("d", "must be >= 1"));
        }
        match &self.backend {
            BackendConfig::Synthetic(p) => p.validate(self.labels)?,
            BackendConfig::Gmm(p) => p.validate(self.labels)?,
            BackendConfig::Llm(p) => p.validate(self.labels)?,
        }
        let c = &self.classifier;
        if c.m == Some(0) {
            return Err(ConfigError::invalid("classifier.m", "must be >= 1"));
        }
        if matches!(c.window, Some(w) if w < 2) {
            return Err(ConfigError::invalid("classifier.W", "must be >= 2"));
        }
        for (name, v) in [
            ("classifier.epsEntropyConst", c.eps_entropy_const),
            ("classifier.deltaEntropyApprox", c.delta_entropy_approx),
            ("classifier.epsMin", c.eps_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(name, "must be a positive finite number"));
            }
        }
        if let Some(order) = &c.precedence {
            let mut seen = order.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != order.len() || order.contains(&PatternLabel::Indeterminate) {
                return Err(ConfigError::invalid(
                    "classifier.precedence",
                    "must list distinct patterns among OneSilo, Stable, Decaying, Unstable",
                ));
            }
        }
        Ok(())
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Per-tick measurement record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSnapshot {
    pub t: usize,
    pub labels: Vec<SiloLabel>,
    /// Agents per non-empty silo, keyed by label id. Unknown answers are excluded.
    pub silo_counts: BTreeMap<u32, usize>,
    pub silo_count: usize,
    /// Fraction of agents whose label is unchanged since `t - 1`; `None` at `t = 0`.
    pub stability: Option<f64>,
    pub entropy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Embedding>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Absent when the trajectory was loaded from a bare snapshot file.
    pub config: Option<SystemConfig>,
    pub snapshots: Vec<SystemSnapshot>,
}

impl Trajectory {
    /// Final tick, i.e. the `t` of the last snapshot.
    pub fn final_tick(&self) -> Option<usize> {
        self.snapshots.last().map(|s| s.t)
    }
}
