//! Drives attack state machines against the service.
//!
//! Every image goes through the same session: one unbudgeted clean query
//! fixes the label, then propose/query/observe rounds run until a
//! candidate's margin goes negative and an unbudgeted confirmation query on
//! its exact bytes agrees, or the budget (or SimBA's basis) runs out.
//! Sequential, vertical and horizontal execution differ only in how session
//! requests are grouped into concurrent batches.

use std::time::Instant;

use super::{new_attack, Attack, AttackError, AttackParams, Method, Proposal};
use crate::client::{BatchItem, QueryBudget, QueryResult, ServiceClient};
use crate::loss::margin_loss;
use crate::tensor::{ImageTensor, QuantizedImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// One step at a time, one request in flight.
    Sequential,
    /// `b` steps per round, queried concurrently.
    Vertical(usize),
}

impl Execution {
    fn batch(self) -> usize {
        match self {
            Execution::Sequential => 1,
            Execution::Vertical(b) => b.max(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunnerConfig {
    pub method: Method,
    pub params: AttackParams,
    /// Charged queries allowed per image.
    pub query_limit: usize,
    /// Maximum requests in flight (vertical and horizontal only).
    pub workers: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// Confirmed by the server on the exact bytes of `final_image`.
    pub success: bool,
    /// Charged queries (200 responses).
    pub queries_used: usize,
    /// Clean and confirmation queries, not charged.
    pub free_queries: usize,
    pub wall_ms: f64,
    pub final_image: QuantizedImage,
    pub label: usize,
    /// L∞ distance between `final_image` and the quantized clean image.
    pub linf_u8: u8,
    pub accepted_losses: Vec<f64>,
    /// FNV-1a hash of every charged candidate's bytes, in query order.
    pub transcript: Vec<u64>,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

enum Stage {
    Clean,
    Step(Proposal),
    Confirm(ImageTensor),
    Done,
}

struct Session {
    method: Method,
    params: AttackParams,
    seed: u64,
    original: ImageTensor,
    clean: QuantizedImage,
    budget: QueryBudget,
    free: usize,
    label: usize,
    attack: Option<Box<dyn Attack>>,
    stage: Stage,
    success: bool,
    final_image: Option<QuantizedImage>,
    transcript: Vec<u64>,
    finished_ms: Option<f64>,
}

/// One request a session wants sent.
struct Request {
    image: ImageTensor,
    charged: bool,
}

impl Session {
    fn new(original: ImageTensor, config: &RunnerConfig, seed: u64) -> Self {
        Self {
            method: config.method,
            params: config.params.clone(),
            seed,
            clean: original.quantize(),
            original,
            budget: QueryBudget::new(config.query_limit),
            free: 0,
            label: 0,
            attack: None,
            stage: Stage::Clean,
            success: false,
            final_image: None,
            transcript: Vec::new(),
            finished_ms: None,
        }
    }

    fn is_done(&self) -> bool {
        matches!(self.stage, Stage::Done)
    }

    fn finish(&mut self, started: Instant) {
        self.stage = Stage::Done;
        self.finished_ms = Some(started.elapsed().as_secs_f64() * 1000.0);
    }

    /// Requests for the next round, or an empty list once finished.
    fn requests(&mut self, batch: usize, started: Instant) -> Result<Vec<Request>, AttackError> {
        match &self.stage {
            Stage::Done => return Ok(Vec::new()),
            Stage::Clean => {
                return Ok(vec![Request {
                    image: self.original.clone(),
                    charged: false,
                }])
            }
            Stage::Confirm(image) => {
                return Ok(vec![Request {
                    image: image.clone(),
                    charged: false,
                }])
            }
            Stage::Step(_) => {}
        }
        let attack = self
            .attack
            .as_mut()
            .expect("attack exists after the clean query");
        let steps = batch.min(self.budget.remaining() / attack.queries_per_step());
        if steps == 0 {
            self.finish(started);
            return Ok(Vec::new());
        }
        let proposal = match attack.propose(steps) {
            Ok(p) => p,
            Err(AttackError::Exhausted) => {
                self.finish(started);
                return Ok(Vec::new());
            }
            Err(e) => return Err(e),
        };
        let requests = proposal
            .candidates
            .iter()
            .map(|c| Request {
                image: c.image.clone(),
                charged: true,
            })
            .collect();
        self.stage = Stage::Step(proposal);
        Ok(requests)
    }

    fn absorb(&mut self, results: &[QueryResult], started: Instant) -> Result<(), AttackError> {
        match std::mem::replace(&mut self.stage, Stage::Done) {
            Stage::Clean => {
                self.free += 1;
                let clean = &results[0];
                self.label = clean.top1;
                self.attack = Some(new_attack(
                    self.method,
                    self.original.clone(),
                    &clean.probs,
                    self.label,
                    &self.params,
                    self.seed,
                ));
                self.stage = Stage::Step(Proposal::default());
            }
            Stage::Step(proposal) => {
                let attack = self.attack.as_mut().expect("attack exists");
                let probs: Vec<Vec<f64>> = results.iter().map(|r| r.probs.clone()).collect();
                attack.observe(&probs, self.budget.used(), self.budget.limit())?;
                for c in &proposal.candidates {
                    self.transcript.push(fnv1a(c.image.quantize().data()));
                }
                let hit = proposal
                    .candidates
                    .iter()
                    .zip(&probs)
                    .find(|(_, p)| margin_loss(p, self.label).is_ok_and(|m| m < 0.0));
                self.stage = match hit {
                    Some((c, _)) => Stage::Confirm(c.image.clone()),
                    None => Stage::Step(Proposal::default()),
                };
            }
            Stage::Confirm(image) => {
                self.free += 1;
                if results[0].top1 != self.label {
                    self.success = true;
                    self.final_image = Some(image.quantize());
                    self.finish(started);
                } else {
                    self.stage = Stage::Step(Proposal::default());
                }
            }
            Stage::Done => {}
        }
        Ok(())
    }

    fn outcome(self) -> AttackOutcome {
        let final_image = match self.final_image {
            Some(img) => img,
            None => self
                .attack
                .as_ref()
                .map_or_else(|| self.clean.clone(), |a| a.current().quantize()),
        };
        let linf_u8 = final_image.linf_distance(&self.clean).unwrap_or(u8::MAX);
        AttackOutcome {
            success: self.success,
            queries_used: self.budget.used(),
            free_queries: self.free,
            wall_ms: self.finished_ms.unwrap_or(0.0),
            final_image,
            label: self.label,
            linf_u8,
            accepted_losses: self
                .attack
                .as_ref()
                .map(|a| a.accepted_losses().to_vec())
                .unwrap_or_default(),
            transcript: self.transcript,
        }
    }
}

/// Sends every session's requests as one ordered batch and hands each
/// session back its slice of results.
async fn round(
    client: &ServiceClient,
    model: &str,
    sessions: &mut [&mut Session],
    batch: usize,
    workers: usize,
    started: Instant,
) -> Result<bool, AttackError> {
    let mut requests = Vec::with_capacity(sessions.len());
    for s in sessions.iter_mut() {
        requests.push(s.requests(batch, started)?);
    }
    if requests.iter().all(Vec::is_empty) {
        return Ok(false);
    }
    let items: Vec<BatchItem<'_>> = sessions
        .iter()
        .zip(&requests)
        .flat_map(|(s, reqs)| {
            reqs.iter().map(move |r| {
                if r.charged {
                    BatchItem::charged(&r.image, &s.budget)
                } else {
                    BatchItem::free(&r.image)
                }
            })
        })
        .collect();
    let answered = client.query_batch(&items, model, workers).await?;
    drop(items);
    let mut offset = 0;
    for (s, reqs) in sessions.iter_mut().zip(&requests) {
        if reqs.is_empty() {
            continue;
        }
        s.absorb(&answered.results[offset..offset + reqs.len()], started)?;
        offset += reqs.len();
    }
    Ok(true)
}

/// Attacks one image with `config.seed`.
pub async fn run_attack(
    client: &ServiceClient,
    model: &str,
    image: &ImageTensor,
    config: &RunnerConfig,
    execution: Execution,
) -> Result<AttackOutcome, AttackError> {
    let started = Instant::now();
    let mut session = Session::new(image.clone(), config, config.seed);
    let workers = match execution {
        Execution::Sequential => 1,
        Execution::Vertical(_) => config.workers.max(1),
    };
    while round(
        client,
        model,
        &mut [&mut session],
        execution.batch(),
        workers,
        started,
    )
    .await?
    {}
    Ok(session.outcome())
}

/// Attacks images one after another; image `i` uses seed `config.seed + i`.
pub async fn run_sequential(
    client: &ServiceClient,
    model: &str,
    images: &[ImageTensor],
    config: &RunnerConfig,
    execution: Execution,
) -> Result<Vec<AttackOutcome>, AttackError> {
    let mut out = Vec::with_capacity(images.len());
    for (i, image) in images.iter().enumerate() {
        let cfg = RunnerConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        out.push(run_attack(client, model, image, &cfg, execution).await?);
    }
    Ok(out)
}

/// Attacks all images at once: each round takes one step from every
/// active image and sends the union concurrently. Per-image `wall_ms` is
/// measured from the start of the whole run.
pub async fn run_horizontal(
    client: &ServiceClient,
    model: &str,
    images: &[ImageTensor],
    config: &RunnerConfig,
) -> Result<Vec<AttackOutcome>, AttackError> {
    let started = Instant::now();
    let mut sessions: Vec<Session> = images
        .iter()
        .enumerate()
        .map(|(i, image)| Session::new(image.clone(), config, config.seed.wrapping_add(i as u64)))
        .collect();
    loop {
        let mut active: Vec<&mut Session> = sessions.iter_mut().filter(|s| !s.is_done()).collect();
        if active.is_empty() {
            break;
        }
        if !round(
            client,
            model,
            &mut active,
            1,
            config.workers.max(1),
            started,
        )
        .await?
        {
            break;
        }
    }
    Ok(sessions.into_iter().map(Session::outcome).collect())
}
