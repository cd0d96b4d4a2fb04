//! SimBA over the Cartesian pixel-channel basis.
//!
//! Each step picks a fresh coordinate `q` (without replacement) and probes
//! `x' + εq` and `x' - εq`. Signs for a batch of coordinates are decided
//! independently against the pre-batch probability of the original class,
//! the accepted `±αq` moves are summed into δ, and δ is projected back onto
//! the ball.

use super::{check_alignment, Attack, AttackError, Candidate, CandidateTag, Method, Proposal};
use crate::norm::NormBudget;
use crate::rng::Rng;
use crate::tensor::ImageTensor;

pub struct SimbaAttack {
    original: ImageTensor,
    current: ImageTensor,
    delta: Vec<f64>,
    label: usize,
    budget: NormBudget,
    alpha: f64,
    rng: Rng,
    /// Coordinates not yet proposed.
    remaining: Vec<u32>,
    pending: Vec<usize>,
    prob_label: f64,
    accepted: Vec<f64>,
}

impl SimbaAttack {
    pub fn new(
        original: ImageTensor,
        label: usize,
        clean_prob: f64,
        budget: NormBudget,
        alpha: f64,
        rng: Rng,
    ) -> Self {
        let d = original.len();
        Self {
            current: original.clone(),
            delta: vec![0.0; d],
            original,
            label,
            budget,
            alpha,
            rng,
            remaining: (0..d as u32).collect(),
            pending: Vec::new(),
            prob_label: clean_prob,
            accepted: vec![clean_prob],
        }
    }

    pub fn prob_label(&self) -> f64 {
        self.prob_label
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn unused_directions(&self) -> usize {
        self.remaining.len()
    }

    fn draw_coordinate(&mut self) -> usize {
        let j = self.rng.below(self.remaining.len());
        self.remaining.swap_remove(j) as usize
    }

    fn probe(&self, coordinate: usize, sign: f64) -> ImageTensor {
        let mut step = vec![0.0; self.delta.len()];
        step[coordinate] = sign * self.budget.epsilon;
        ImageTensor::from_perturbation(&self.current, &step)
    }
}

impl Attack for SimbaAttack {
    fn method(&self) -> Method {
        Method::Simba
    }

    fn label(&self) -> usize {
        self.label
    }

    fn queries_per_step(&self) -> usize {
        2
    }

    fn propose(&mut self, batch: usize) -> Result<Proposal, AttackError> {
        if self.remaining.is_empty() {
            return Err(AttackError::Exhausted);
        }
        let n = batch.max(1).min(self.remaining.len());
        self.pending = (0..n).map(|_| self.draw_coordinate()).collect();
        let candidates = self
            .pending
            .iter()
            .flat_map(|&coordinate| {
                [1i8, -1].map(|sign| Candidate {
                    image: self.probe(coordinate, f64::from(sign)),
                    tag: CandidateTag::Simba { coordinate, sign },
                })
            })
            .collect();
        Ok(Proposal { candidates })
    }

    fn observe(
        &mut self,
        results: &[Vec<f64>],
        _queries_used: usize,
        _query_limit: usize,
    ) -> Result<(), AttackError> {
        check_alignment(self.pending.len() * 2, results.len())?;
        let threshold = self.prob_label;
        let mut best: Option<f64> = None;
        for (i, &coordinate) in self.pending.iter().enumerate() {
            let plus = results[2 * i][self.label];
            let minus = results[2 * i + 1][self.label];
            let (step, p) = if plus < threshold {
                (self.alpha, plus)
            } else if minus < threshold {
                (-self.alpha, minus)
            } else {
                continue;
            };
            self.delta[coordinate] += step;
            best = Some(best.map_or(p, |b: f64| b.min(p)));
        }
        self.pending.clear();
        if let Some(p) = best {
            self.budget.project_in_place(&mut self.delta);
            self.current = ImageTensor::from_perturbation(&self.original, &self.delta);
            self.prob_label = p;
            self.accepted.push(p);
        }
        Ok(())
    }

    fn current(&self) -> &ImageTensor {
        &self.current
    }

    fn accepted_losses(&self) -> &[f64] {
        &self.accepted
    }
}
