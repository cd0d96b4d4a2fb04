//! SimBA, Square and Bandits as propose/observe state machines.
//!
//! An attack never talks to the network. It proposes candidate images,
//! the runner gets them classified (one by one, as a concurrent batch for
//! one image, or interleaved with other images), and the ordered results
//! are fed back through `observe`. The same state machine therefore
//! serves non-distributed, vertically distributed and horizontally
//! distributed execution.

mod bandits;
mod runner;
mod simba;
mod square;

pub use bandits::{eg_step, estimate_gradient, BanditsAttack, BanditsParams};
pub use runner::{
    fnv1a, run_attack, run_horizontal, run_sequential, AttackOutcome, Execution, RunnerConfig,
};
pub use simba::SimbaAttack;
pub use square::{
    scheduled_fraction, window_side, SquareAttack, DEFAULT_P_INIT, SQUARE_SCHEDULE_PERMILLE,
};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::client::ClientError;
use crate::norm::{Norm, NormBudget, DEFAULT_EPSILON};
use crate::rng::Rng;
use crate::tensor::ImageTensor;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("search directions exhausted")]
    Exhausted,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Simba,
    Square,
    Bandits,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Simba, Method::Square, Method::Bandits];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Simba => "simba",
            Method::Square => "square",
            Method::Bandits => "bandits",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simba" => Ok(Method::Simba),
            "square" => Ok(Method::Square),
            "bandits" => Ok(Method::Bandits),
            other => Err(format!("unknown attack method {other:?}")),
        }
    }
}

/// What a candidate perturbs, for transcripts and debugging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateTag {
    Simba {
        coordinate: usize,
        sign: i8,
    },
    SquareInit,
    Square {
        index: usize,
        row: usize,
        col: usize,
        side: usize,
    },
    Bandits {
        probe: usize,
        sign: i8,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub image: ImageTensor,
    pub tag: CandidateTag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Proposal {
    pub candidates: Vec<Candidate>,
}

impl Proposal {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Hyper-parameters shared by all methods.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackParams {
    pub epsilon: f64,
    /// Ball used by SimBA's projection; Square and Bandits always use L∞.
    pub simba_norm: Norm,
    /// SimBA step applied on acceptance (queries always probe at ε).
    pub simba_alpha: f64,
    pub square_p_init: f64,
    pub bandits: BanditsParams,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            simba_norm: Norm::Linf,
            simba_alpha: DEFAULT_EPSILON,
            square_p_init: square::DEFAULT_P_INIT,
            bandits: BanditsParams::default(),
        }
    }
}

impl AttackParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            simba_alpha: epsilon,
            ..Self::default()
        }
    }
}

/// One attack on one image.
pub trait Attack: Send {
    fn method(&self) -> Method;

    /// Original top-1 class.
    fn label(&self) -> usize;

    /// Queries consumed per unit of batch size by the next proposal.
    fn queries_per_step(&self) -> usize;

    /// Draws up to `batch` steps' worth of candidates.
    fn propose(&mut self, batch: usize) -> Result<Proposal, AttackError>;

    /// Ingests probability vectors aligned with the last proposal.
    /// `queries_used` is the image's budget usage after those queries.
    fn observe(
        &mut self,
        results: &[Vec<f64>],
        queries_used: usize,
        query_limit: usize,
    ) -> Result<(), AttackError>;

    /// Current adversarial image.
    fn current(&self) -> &ImageTensor;

    /// Sequence of accepted best losses (SimBA: p_y, Square: margin).
    fn accepted_losses(&self) -> &[f64];
}

pub fn new_attack(
    method: Method,
    original: ImageTensor,
    clean_probs: &[f64],
    label: usize,
    params: &AttackParams,
    seed: u64,
) -> Box<dyn Attack> {
    let rng = Rng::new(seed);
    match method {
        Method::Simba => Box::new(SimbaAttack::new(
            original,
            label,
            clean_probs[label],
            NormBudget::new(params.simba_norm, params.epsilon),
            params.simba_alpha,
            rng,
        )),
        Method::Square => Box::new(SquareAttack::new(
            original,
            label,
            params.epsilon,
            params.square_p_init,
            rng,
        )),
        Method::Bandits => Box::new(BanditsAttack::new(
            original,
            label,
            params.epsilon,
            params.bandits.clone(),
            rng,
        )),
    }
}

fn check_alignment(expected: usize, got: usize) -> Result<(), AttackError> {
    if expected != got {
        return Err(AttackError::Contract(format!(
            "expected {expected} results for the last proposal, got {got}"
        )));
    }
    Ok(())
}
