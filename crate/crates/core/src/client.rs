//! Attacker-side query engine: bounded parallel fan-out, ordered fan-in.
//!
//! Every query is quantized, PNG-encoded and base64-wrapped before it
//! leaves the process; the client never resizes. Budget accounting counts
//! only requests that came back with a 200.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use thiserror::Error;

use crate::classifier::NUM_CLASSES;
use crate::codec::{self, CodecError};
use crate::service::api::{
    parse_class_label, ClassifyRequest, ClassifyResponse, ErrorBody, CLASSIFY_PATH, MODELS_PATH,
};
use crate::tensor::ImageTensor;

pub const DEFAULT_WORKERS: usize = 8;
pub const DEFAULT_QUERY_LIMIT: usize = 1000;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("query budget exhausted ({limit} queries)")]
    BudgetExhausted { limit: usize },
    #[error("query failed after {attempts} attempt(s): {reason}")]
    QueryFailed { attempts: usize, reason: String },
    #[error("request {index} of batch failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<ClientError>,
    },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl ClientError {
    /// Index of the failed request when this came out of a batch.
    pub fn failed_index(&self) -> Option<usize> {
        match self {
            ClientError::Batch { index, .. } => Some(*index),
            _ => None,
        }
    }
}

/// Per-image query allowance. Slots are reserved before a request is sent
/// and given back if the request finally fails, so after every batch
/// `used` equals the number of 200 responses.
#[derive(Debug)]
pub struct QueryBudget {
    limit: usize,
    used: AtomicUsize,
}

impl QueryBudget {
    pub fn new(limit: usize) -> Self {
        Self {
            limit,
            used: AtomicUsize::new(0),
        }
    }

    pub fn with_used(limit: usize, used: usize) -> Self {
        assert!(used <= limit);
        Self {
            limit,
            used: AtomicUsize::new(used),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.used()
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    fn reserve(&self) -> Result<(), ClientError> {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| {
                (u < self.limit).then_some(u + 1)
            })
            .map(|_| ())
            .map_err(|_| ClientError::BudgetExhausted { limit: self.limit })
    }

    fn release(&self) {
        self.used.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub endpoint: String,
    pub retries: usize,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            retries: 3,
            backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(60),
        }
    }
}

/// One answered query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Full distribution rebuilt from the top-10 soft labels.
    pub probs: Vec<f64>,
    /// First label of the server's ranking.
    pub top1: usize,
    pub served_by: usize,
    pub round_trip_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatchResult {
    /// Same order as the submitted images.
    pub results: Vec<QueryResult>,
    pub wall_ms: f64,
}

/// One entry of a batch: the image and, optionally, the budget it is
/// charged against.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub image: &'a ImageTensor,
    pub budget: Option<&'a QueryBudget>,
}

impl<'a> BatchItem<'a> {
    pub fn charged(image: &'a ImageTensor, budget: &'a QueryBudget) -> Self {
        Self {
            image,
            budget: Some(budget),
        }
    }

    pub fn free(image: &'a ImageTensor) -> Self {
        Self {
            image,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub concurrency: usize,
    pub total_ms: f64,
    pub avg_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ServiceClient {
    http: reqwest::Client,
    config: ClientConfig,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl ServiceClient {
    pub fn new(config: ClientConfig) -> Self {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .expect("http client");
        Self { http, config }
    }

    pub fn connect(endpoint: impl Into<String>) -> Self {
        Self::new(ClientConfig::new(endpoint))
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    pub async fn list_models(&self) -> Result<Vec<String>, ClientError> {
        let url = format!("{}{}", self.config.endpoint, MODELS_PATH);
        let resp = self
            .http
            .get(url)
            .send()
            .await
            .map_err(|e| ClientError::QueryFailed {
                attempts: 1,
                reason: e.to_string(),
            })?;
        resp.json()
            .await
            .map_err(|e| ClientError::BadResponse(e.to_string()))
    }

    async fn attempt(&self, req: &ClassifyRequest) -> Result<ClassifyResponse, Attempt> {
        let url = format!("{}{}", self.config.endpoint, CLASSIFY_PATH);
        let resp = self
            .http
            .post(url)
            .json(req)
            .send()
            .await
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp.json().await.map_err(|e| Attempt::Fatal(e.to_string()));
        }
        let detail = match resp.json::<ErrorBody>().await {
            Ok(body) => format!("{status} {}: {}", body.kind, body.error),
            Err(_) => status.to_string(),
        };
        if status.is_server_error() {
            Err(Attempt::Retry(detail))
        } else {
            Err(Attempt::Fatal(detail))
        }
    }

    /// Sends one classify request, retrying transport errors and 5xx.
    pub async fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse, ClientError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(req).await {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(reason)) => {
                    return Err(ClientError::QueryFailed { attempts, reason })
                }
                Err(Attempt::Retry(reason)) if attempts > self.config.retries => {
                    return Err(ClientError::QueryFailed { attempts, reason })
                }
                Err(Attempt::Retry(reason)) => {
                    tracing::debug!(attempts, %reason, "retrying query");
                    tokio::time::sleep(self.config.backoff).await;
                }
            }
        }
    }

    /// quantize → PNG → base64 → POST → probability vector.
    pub async fn query_one(
        &self,
        image: &ImageTensor,
        model: &str,
        budget: Option<&QueryBudget>,
    ) -> Result<QueryResult, ClientError> {
        if let Some(b) = budget {
            b.reserve()?;
        }
        let result = self.send_image(image, model).await;
        if result.is_err() {
            if let Some(b) = budget {
                b.release();
            }
        }
        result
    }

    async fn send_image(
        &self,
        image: &ImageTensor,
        model: &str,
    ) -> Result<QueryResult, ClientError> {
        let png = codec::encode_png(&image.quantize())?;
        let req = ClassifyRequest {
            model: model.to_string(),
            image: codec::base64_encode(&png),
            top_k: NUM_CLASSES,
            labels_only: false,
        };
        let started = Instant::now();
        let resp = self.classify(&req).await?;
        let round_trip_ms = started.elapsed().as_secs_f64() * 1000.0;
        let (probs, top1) = probabilities(&resp)?;
        Ok(QueryResult {
            probs,
            top1,
            served_by: resp.served_by,
            round_trip_ms,
        })
    }

    /// At most `workers` requests in flight; results come back in
    /// submission order. Every request runs to completion even when an
    /// earlier one fails, so no budget reservation is left dangling.
    pub async fn query_batch(
        &self,
        items: &[BatchItem<'_>],
        model: &str,
        workers: usize,
    ) -> Result<QueryBatchResult, ClientError> {
        let started = Instant::now();
        let outcomes: Vec<Result<QueryResult, ClientError>> = stream::iter(items.iter())
            .map(|item| self.query_one(item.image, model, item.budget))
            .buffered(workers.max(1))
            .collect()
            .await;
        let wall_ms = started.elapsed().as_secs_f64() * 1000.0;
        let mut results = Vec::with_capacity(outcomes.len());
        for (index, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(r) => results.push(r),
                Err(e) => {
                    return Err(ClientError::Batch {
                        index,
                        source: Box::new(e),
                    })
                }
            }
        }
        Ok(QueryBatchResult { results, wall_ms })
    }

    /// For each concurrency level `B`, sends `B` copies of `image` with
    /// `workers` workers, `repetitions` times, and averages the batch wall
    /// time. Queries are not charged to any budget.
    pub async fn concurrency_profile(
        &self,
        image: &ImageTensor,
        model: &str,
        levels: &[usize],
        workers: usize,
        repetitions: usize,
    ) -> Result<Vec<ProfileRow>, ClientError> {
        let mut rows = Vec::with_capacity(levels.len());
        for &level in levels {
            let items = vec![BatchItem::free(image); level];
            let mut total = 0.0;
            for _ in 0..repetitions.max(1) {
                total += self.query_batch(&items, model, workers).await?.wall_ms;
            }
            let total_ms = total / repetitions.max(1) as f64;
            rows.push(ProfileRow {
                concurrency: level,
                total_ms,
                avg_ms: total_ms / level.max(1) as f64,
            });
        }
        Ok(rows)
    }
}

fn probabilities(resp: &ClassifyResponse) -> Result<(Vec<f64>, usize), ClientError> {
    let mut probs = vec![0.0; NUM_CLASSES];
    let mut seen = [false; NUM_CLASSES];
    for p in &resp.predictions {
        let class = parse_class_label(&p.label)
            .filter(|&c| c < NUM_CLASSES)
            .ok_or_else(|| ClientError::BadResponse(format!("unknown label {:?}", p.label)))?;
        let prob = p
            .probability
            .ok_or_else(|| ClientError::BadResponse("labels-only response".into()))?;
        probs[class] = prob;
        seen[class] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(ClientError::BadResponse(format!(
            "expected {NUM_CLASSES} predictions, got {}",
            resp.predictions.len()
        )));
    }
    let top1 = parse_class_label(&resp.predictions[0].label).unwrap_or(0);
    Ok((probs, top1))
}
