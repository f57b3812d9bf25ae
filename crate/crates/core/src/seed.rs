//! Seed derivation and random streams.
//!
//! Every stochastic site draws from its own ChaCha8 stream (a counter-based generator),
//! seeded by hashing the master seed together with a structured [`StreamTag`]. The tag is
//! encoded canonically (fixed field order, little-endian fixed-width integers, presence
//! bytes for optional fields, `p` as its decimal text) and hashed with SHA-256; the
//! first eight digest bytes form the derived seed. Streams therefore never depend on
//! the order in which runs, agents or ticks are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::model::Probability;

pub type SimRng = ChaCha8Rng;

const DOMAIN: &[u8] = b"silosim/stream/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamRole {
    /// Per-replicate run seed in a sweep.
    Replicate = 1,
    /// Shared corpus: archetypes, query vector, sentence pool.
    Corpus = 2,
    /// Per-agent initial database.
    Init = 3,
    /// Per-agent, per-tick answer generation.
    Respond = 4,
    /// Per-agent, per-tick partner and mirror draws.
    Interaction = 5,
}

/// Structured key identifying one random stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamTag {
    pub p: Option<Probability>,
    pub k: Option<u64>,
    pub replicate: Option<u64>,
    pub role: StreamRole,
    pub agent: Option<u64>,
    pub tick: Option<u64>,
}

impl StreamTag {
    pub fn role(role: StreamRole) -> Self {
        StreamTag {
            p: None,
            k: None,
            replicate: None,
            role,
            agent: None,
            tick: None,
        }
    }

    pub fn replicate(p: Probability, k: usize, replicate: u32) -> Self {
        StreamTag {
            p: Some(p),
            k: Some(k as u64),
            replicate: Some(u64::from(replicate)),
            ..Self::role(StreamRole::Replicate)
        }
    }

    pub fn agent(role: StreamRole, agent: usize) -> Self {
        StreamTag {
            agent: Some(agent as u64),
            ..Self::role(role)
        }
    }

    pub fn agent_tick(role: StreamRole, agent: usize, tick: usize) -> Self {
        StreamTag {
            agent: Some(agent as u64),
            tick: Some(tick as u64),
            ..Self::role(role)
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self.p {
            Some(p) => {
                let text = p.canonical_text();
                out.push(1);
                out.extend_from_slice(&(text.len() as u32).to_le_bytes());
                out.extend_from_slice(text.as_bytes());
            }
            None => out.push(0),
        }
        encode_opt(out, self.k);
        encode_opt(out, self.replicate);
        out.push(self.role as u8);
        encode_opt(out, self.agent);
        encode_opt(out, self.tick);
    }
}

fn encode_opt(out: &mut Vec<u8>, v: Option<u64>) {
    match v {
        Some(v) => {
            out.push(1);
            out.extend_from_slice(&v.to_le_bytes());
        }
        None => {
            out.push(0);
            out.extend_from_slice(&[0; 8]);
        }
    }
}

pub fn derive_seed(master: u64, tag: &StreamTag) -> u64 {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(DOMAIN);
    buf.extend_from_slice(&master.to_le_bytes());
    tag.encode(&mut buf);
    let digest = Sha256::digest(&buf);
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

pub fn stream(master: u64, tag: &StreamTag) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tag))
}
