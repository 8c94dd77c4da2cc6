//! Embedding service client: cache first, batched and deduplicated upstream
//! requests, exponential backoff on transient failures.
//!
//! Wire contract: `POST {"embedder": id, "texts": [..]}` answered by
//! `{"vectors": [[..], ..]}`, one vector per text in request order.

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::cache::{text_hash, EmbeddingCache};
use crate::io::records::{HypothesisSet, SampleRecord};
use crate::reward::{ResponseGroup, Rollout};
use crate::vector::{EmbeddedHypothesis, Embedding, GroundTruthEvent, GroundTruthSet};

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    /// Worth retrying: timeouts, connection errors, 5xx, 429.
    Transient(String),
    Permanent(String),
}

pub trait EmbeddingTransport: Send + Sync {
    fn embed(
        &self,
        embedder: &str,
        texts: &[String],
    ) -> std::result::Result<Vec<Vec<f64>>, TransportFailure>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    embedder: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Plain-HTTP JSON transport.
pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl EmbeddingTransport for HttpTransport {
    fn embed(
        &self,
        embedder: &str,
        texts: &[String],
    ) -> std::result::Result<Vec<Vec<f64>>, TransportFailure> {
        let classify = |e: ureq::Error| match e {
            ureq::Error::StatusCode(s) if s >= 500 || s == 429 => {
                TransportFailure::Transient(format!("http status {s}"))
            }
            ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound => TransportFailure::Transient(e.to_string()),
            other => TransportFailure::Permanent(other.to_string()),
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { embedder, texts })
            .map_err(classify)?;
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportFailure::Permanent(format!("bad response body: {e}")))?;
        Ok(body.vectors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per batch, including the first.
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub multiplier: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_delay: Duration::from_millis(250),
            multiplier: 2.0,
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let secs = self.initial_delay.as_secs_f64() * self.multiplier.powi(retry as i32);
        Duration::from_secs_f64(secs.min(self.max_delay.as_secs_f64()))
    }
}

pub struct EmbedClient<'a> {
    pub embedder: String,
    pub batch_size: usize,
    pub retry: RetryPolicy,
    /// Serve from cache only; never touch the transport.
    pub offline: bool,
    cache: &'a EmbeddingCache,
    transport: Option<&'a dyn EmbeddingTransport>,
}

impl<'a> EmbedClient<'a> {
    pub fn new(
        embedder: impl Into<String>,
        cache: &'a EmbeddingCache,
        transport: Option<&'a dyn EmbeddingTransport>,
    ) -> Self {
        Self {
            embedder: embedder.into(),
            batch_size: 64,
            retry: RetryPolicy::default(),
            offline: false,
            cache,
            transport,
        }
    }

    /// One vector per input text, in input order. Each distinct uncached
    /// text is requested upstream exactly once.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let hashes: Vec<String> = texts.iter().map(|t| text_hash(t)).collect();
        let mut seen = HashSet::new();
        let misses: Vec<&String> = texts
            .iter()
            .zip(&hashes)
            .filter(|(_, h)| {
                self.cache.get_hashed(&self.embedder, h).is_none() && seen.insert(h.as_str())
            })
            .map(|(t, _)| t)
            .collect();

        if !misses.is_empty() {
            let transport = match (self.offline, self.transport) {
                (false, Some(t)) => t,
                _ => {
                    return Err(Error::CacheMiss {
                        embedder: self.embedder.clone(),
                        count: misses.len(),
                    })
                }
            };
            for chunk in misses.chunks(self.batch_size.max(1)) {
                let batch: Vec<String> = chunk.iter().map(|t| t.to_string()).collect();
                let vectors = self.request(transport, &batch)?;
                self.cache.insert(
                    &self.embedder,
                    &batch.into_iter().zip(vectors).collect::<Vec<_>>(),
                )?;
            }
        }

        hashes
            .iter()
            .map(|h| {
                let v = self
                    .cache
                    .get_hashed(&self.embedder, h)
                    .ok_or_else(|| Error::Integrity(format!("cache lost entry {h}")))?;
                Embedding::new(v)
            })
            .collect()
    }

    fn request(
        &self,
        transport: &dyn EmbeddingTransport,
        batch: &[String],
    ) -> Result<Vec<Vec<f64>>> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match transport.embed(&self.embedder, batch) {
                Ok(vectors) if vectors.len() == batch.len() => return Ok(vectors),
                Ok(vectors) => {
                    return Err(Error::Integrity(format!(
                        "embedder '{}' returned {} vectors for {} texts",
                        self.embedder,
                        vectors.len(),
                        batch.len()
                    )))
                }
                Err(TransportFailure::Permanent(e)) => return Err(Error::Transport(e)),
                Err(TransportFailure::Transient(e)) => last = e,
            }
        }
        Err(Error::Transport(format!(
            "gave up after {attempts} attempts: {last}"
        )))
    }
}

/// A sample with every text resolved to a vector, rounds in order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSample {
    pub id: String,
    pub ground_truth: GroundTruthSet,
    pub rounds: Vec<Vec<EmbeddedHypothesis>>,
}

impl EmbeddedSample {
    pub fn round_embeddings(&self) -> Vec<Vec<Embedding>> {
        self.rounds
            .iter()
            .map(|r| r.iter().map(|h| h.embedding.clone()).collect())
            .collect()
    }

    /// Treats each round as one rollout of a response group.
    pub fn response_group(&self) -> Result<ResponseGroup> {
        let rollouts = self
            .rounds
            .iter()
            .map(|r| Rollout::new(r.clone()))
            .collect::<Result<Vec<_>>>()?;
        ResponseGroup::new(self.id.clone(), rollouts, self.ground_truth.clone())
    }
}

/// Joins samples with their hypothesis rounds, ordered by sample id.
/// Inline vectors are used as given; every other text goes through
/// `client` in one deduplicated pass.
pub fn assemble_dataset(
    samples: &[SampleRecord],
    hypotheses: &HypothesisSet,
    client: Option<&EmbedClient>,
) -> Result<Vec<EmbeddedSample>> {
    let by_id: HashMap<&str, &SampleRecord> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let orphans: Vec<String> = hypotheses
        .keys()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Structure(format!(
            "hypotheses reference unknown samples: {}",
            orphans.join(", ")
        )));
    }
    let mut missing: Vec<String> = samples
        .iter()
        .filter(|s| !hypotheses.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingIds(missing));
    }

    let mut pending: Vec<String> = Vec::new();
    for (id, batches) in hypotheses {
        let s = by_id[id.as_str()];
        if s.ground_truth_embeddings.is_none() {
            pending.extend(s.ground_truth.iter().cloned());
        }
        for b in batches.iter().filter(|b| b.embeddings.is_none()) {
            pending.extend(b.hypotheses.iter().cloned());
        }
    }
    let resolved: HashMap<String, Embedding> = if pending.is_empty() {
        HashMap::new()
    } else {
        let client = client.ok_or_else(|| {
            Error::Config(format!(
                "{} text(s) have no inline vector and no embedder is configured",
                pending.len()
            ))
        })?;
        let vectors = client.embed_texts(&pending)?;
        pending.into_iter().zip(vectors).collect()
    };
    let lookup = |text: &String, inline: Option<&Vec<f64>>| match inline {
        Some(v) => Embedding::new(v.clone()),
        None => Ok(resolved[text].clone()),
    };

    let mut out = Vec::with_capacity(hypotheses.len());
    for (id, batches) in hypotheses {
        let s = by_id[id.as_str()];
        let events = s
            .ground_truth
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Ok(GroundTruthEvent {
                    text: t.clone(),
                    embedding: lookup(t, s.ground_truth_embeddings.as_ref().map(|v| &v[i]))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rounds = batches
            .iter()
            .map(|b| {
                b.hypotheses
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        Ok(EmbeddedHypothesis::new(
                            t.clone(),
                            lookup(t, b.embeddings.as_ref().map(|v| &v[i]))?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddedSample {
            id: id.clone(),
            ground_truth: GroundTruthSet::new(events)?,
            rounds,
        });
    }
    Ok(out)
}
