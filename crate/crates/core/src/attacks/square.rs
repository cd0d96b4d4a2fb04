//! L∞ Square attack on the margin loss.
//!
//! Initialisation is one query on width-1 vertical stripes of ±ε. Each
//! step samples square windows (side from the size schedule) and sets δ
//! inside the window to a per-channel ±ε. A batch of windows is evaluated
//! against the same pre-batch image; improving windows are then applied
//! greedily in proposal order without being re-queried.

use super::{check_alignment, Attack, AttackError, Candidate, CandidateTag, Method, Proposal};
use crate::loss::margin_loss;
use crate::norm::NormBudget;
use crate::rng::Rng;
use crate::tensor::ImageTensor;

pub const DEFAULT_P_INIT: f64 = 0.4;

/// Budget fractions (per mille) at which the window fraction halves.
pub const SQUARE_SCHEDULE_PERMILLE: [usize; 8] = [1, 5, 20, 100, 200, 400, 600, 800];

#[derive(Debug, Clone, Copy, PartialEq)]
struct Window {
    row: usize,
    col: usize,
    side: usize,
}

#[derive(Debug)]
enum Phase {
    Fresh,
    InitPending { delta: Vec<f64>, image: ImageTensor },
    Running,
}

pub struct SquareAttack {
    original: ImageTensor,
    current: ImageTensor,
    delta: Vec<f64>,
    label: usize,
    ball: NormBudget,
    p_init: f64,
    p: f64,
    rng: Rng,
    phase: Phase,
    pending: Vec<(Window, Vec<f64>)>,
    best_loss: f64,
    accepted: Vec<f64>,
}

/// Window side for fraction `p` of an `h`×`w` image.
pub fn window_side(p: f64, h: usize, w: usize) -> usize {
    let side = (p * (h * w) as f64).sqrt().round() as usize;
    side.max(1).min(h.min(w))
}

/// Window fraction after `used` of `limit` queries.
pub fn scheduled_fraction(p_init: f64, used: usize, limit: usize) -> f64 {
    let halvings = SQUARE_SCHEDULE_PERMILLE
        .iter()
        .filter(|&&t| used * 1000 >= t * limit)
        .count();
    p_init / f64::from(1u32 << halvings)
}

impl SquareAttack {
    pub fn new(original: ImageTensor, label: usize, epsilon: f64, p_init: f64, rng: Rng) -> Self {
        let d = original.len();
        Self {
            current: original.clone(),
            original,
            delta: vec![0.0; d],
            label,
            ball: NormBudget::linf(epsilon),
            p_init,
            p: p_init,
            rng,
            phase: Phase::Fresh,
            pending: Vec::new(),
            best_loss: f64::INFINITY,
            accepted: Vec::new(),
        }
    }

    pub fn fraction(&self) -> f64 {
        self.p
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn is_initialized(&self) -> bool {
        matches!(self.phase, Phase::Running)
    }

    fn stripes(&mut self) -> Vec<f64> {
        let (h, w, c) = (
            self.original.height(),
            self.original.width(),
            self.original.channels(),
        );
        let eps = self.ball.epsilon;
        let column: Vec<f64> = (0..w * c).map(|_| self.rng.sign() * eps).collect();
        let mut delta = Vec::with_capacity(h * w * c);
        for _ in 0..h {
            delta.extend_from_slice(&column);
        }
        delta
    }

    fn overwrite(&self, delta: &mut [f64], window: Window, signs: &[f64]) {
        let (w, c) = (self.original.width(), self.original.channels());
        for r in window.row..window.row + window.side {
            for col in window.col..window.col + window.side {
                let base = (r * w + col) * c;
                delta[base..base + c].copy_from_slice(signs);
            }
        }
    }

    fn loss(&self, probs: &[f64]) -> Result<f64, AttackError> {
        margin_loss(probs, self.label).map_err(|e| AttackError::Contract(e.to_string()))
    }
}

impl Attack for SquareAttack {
    fn method(&self) -> Method {
        Method::Square
    }

    fn label(&self) -> usize {
        self.label
    }

    fn queries_per_step(&self) -> usize {
        1
    }

    fn propose(&mut self, batch: usize) -> Result<Proposal, AttackError> {
        match self.phase {
            Phase::Fresh => {
                let delta = self.stripes();
                let image = ImageTensor::from_perturbation(&self.original, &delta);
                let candidates = vec![Candidate {
                    image: image.clone(),
                    tag: CandidateTag::SquareInit,
                }];
                self.phase = Phase::InitPending { delta, image };
                Ok(Proposal { candidates })
            }
            Phase::InitPending { .. } => {
                Err(AttackError::Contract("initialisation not observed".into()))
            }
            Phase::Running => {
                let (h, w, c) = (
                    self.original.height(),
                    self.original.width(),
                    self.original.channels(),
                );
                let side = window_side(self.p, h, w);
                let eps = self.ball.epsilon;
                self.pending.clear();
                let mut candidates = Vec::with_capacity(batch);
                for index in 0..batch.max(1) {
                    let window = Window {
                        row: self.rng.below(h - side + 1),
                        col: self.rng.below(w - side + 1),
                        side,
                    };
                    let signs: Vec<f64> = (0..c).map(|_| self.rng.sign() * eps).collect();
                    let mut delta = self.delta.clone();
                    self.overwrite(&mut delta, window, &signs);
                    self.ball.project_in_place(&mut delta);
                    candidates.push(Candidate {
                        image: ImageTensor::from_perturbation(&self.original, &delta),
                        tag: CandidateTag::Square {
                            index,
                            row: window.row,
                            col: window.col,
                            side,
                        },
                    });
                    self.pending.push((window, signs));
                }
                Ok(Proposal { candidates })
            }
        }
    }

    fn observe(
        &mut self,
        results: &[Vec<f64>],
        queries_used: usize,
        query_limit: usize,
    ) -> Result<(), AttackError> {
        match std::mem::replace(&mut self.phase, Phase::Running) {
            Phase::Fresh => {
                self.phase = Phase::Fresh;
                return Err(AttackError::Contract("nothing proposed yet".into()));
            }
            Phase::InitPending { delta, image } => {
                check_alignment(1, results.len())?;
                self.best_loss = self.loss(&results[0])?;
                self.delta = delta;
                self.current = image;
                self.accepted.push(self.best_loss);
            }
            Phase::Running => {
                check_alignment(self.pending.len(), results.len())?;
                let pending = std::mem::take(&mut self.pending);
                let mut changed = false;
                for ((window, signs), probs) in pending.iter().zip(results) {
                    let loss = self.loss(probs)?;
                    if loss < self.best_loss {
                        let mut delta = std::mem::take(&mut self.delta);
                        self.overwrite(&mut delta, *window, signs);
                        self.ball.project_in_place(&mut delta);
                        self.delta = delta;
                        self.best_loss = loss;
                        self.accepted.push(loss);
                        changed = true;
                    }
                }
                if changed {
                    self.current = ImageTensor::from_perturbation(&self.original, &self.delta);
                }
            }
        }
        self.p = scheduled_fraction(self.p_init, queries_used, query_limit);
        Ok(())
    }

    fn current(&self) -> &ImageTensor {
        &self.current
    }

    fn accepted_losses(&self) -> &[f64] {
        &self.accepted
    }
}
