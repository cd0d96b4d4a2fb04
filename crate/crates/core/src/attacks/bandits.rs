//! Bandits with a full-resolution gradient prior.
//!
//! The prior `v ∈ [−1,1]^d` is probed along random Gaussian directions,
//! updated by an exponentiated-gradient step on the finite-difference
//! estimate, and the image takes a signed L∞ PGD step along `v`.

use super::{check_alignment, Attack, AttackError, Candidate, CandidateTag, Method, Proposal};
use crate::loss::margin_loss;
use crate::norm::NormBudget;
use crate::rng::Rng;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BanditsParams {
    /// Finite-difference scale δ_probe applied to each direction.
    pub probe: f64,
    /// Image-space step η_img used to build probe candidates.
    pub image_step: f64,
    /// Exponentiated-gradient rate on the prior.
    pub eg_lr: f64,
    /// PGD step; `None` means ε/10.
    pub pgd_step: Option<f64>,
}

impl Default for BanditsParams {
    fn default() -> Self {
        Self {
            probe: 0.01,
            image_step: 0.1,
            eg_lr: 0.1,
            pgd_step: None,
        }
    }
}

/// Finite-difference estimate `((l⁺ − l⁻) / (probe · image_step)) · u`.
pub fn estimate_gradient(
    loss_plus: f64,
    loss_minus: f64,
    probe: f64,
    image_step: f64,
    u: &[f64],
) -> Vec<f64> {
    let scale = (loss_plus - loss_minus) / (probe * image_step);
    u.iter().map(|x| scale * x).collect()
}

/// Componentwise exponentiated-gradient step on `v ∈ [−1,1]`.
///
/// Mass moves toward `+1` where `g > 0`, so `v` follows the loss gradient.
pub fn eg_step(v: &mut [f64], g: &[f64], lr: f64) {
    for (vi, gi) in v.iter_mut().zip(g) {
        if *gi == 0.0 {
            continue;
        }
        let p = (*vi + 1.0) / 2.0;
        let up = p * (lr * gi).exp();
        let down = (1.0 - p) * (-lr * gi).exp();
        let next = up / (up + down);
        *vi = if next.is_finite() {
            (2.0 * next - 1.0).clamp(-1.0, 1.0)
        } else {
            gi.signum()
        };
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub struct BanditsAttack {
    original: ImageTensor,
    current: ImageTensor,
    delta: Vec<f64>,
    prior: Vec<f64>,
    label: usize,
    ball: NormBudget,
    params: BanditsParams,
    rng: Rng,
    pending: Vec<Vec<f64>>,
    best_loss: f64,
    accepted: Vec<f64>,
}

impl BanditsAttack {
    pub fn new(
        original: ImageTensor,
        label: usize,
        epsilon: f64,
        params: BanditsParams,
        rng: Rng,
    ) -> Self {
        let d = original.len();
        Self {
            current: original.clone(),
            original,
            delta: vec![0.0; d],
            prior: vec![0.0; d],
            label,
            ball: NormBudget::linf(epsilon),
            params,
            rng,
            pending: Vec::new(),
            best_loss: f64::INFINITY,
            accepted: Vec::new(),
        }
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn pgd_step(&self) -> f64 {
        self.params.pgd_step.unwrap_or(self.ball.epsilon / 10.0)
    }

    /// Draws one direction with components `N(0,1)/√d`.
    pub fn draw_direction(&mut self) -> Vec<f64> {
        let d = self.original.len();
        let scale = 1.0 / (d as f64).sqrt();
        (0..d).map(|_| self.rng.gaussian() * scale).collect()
    }

    fn candidate(&self, u: &[f64], sign: f64) -> ImageTensor {
        let step = self.params.image_step;
        let probe = self.params.probe;
        let mut delta: Vec<f64> = self
            .delta
            .iter()
            .zip(&self.prior)
            .zip(u)
            .map(|((d, v), ui)| d + step * (v + sign * probe * ui))
            .collect();
        self.ball.project_in_place(&mut delta);
        ImageTensor::from_perturbation(&self.original, &delta)
    }
}

impl Attack for BanditsAttack {
    fn method(&self) -> Method {
        Method::Bandits
    }

    fn label(&self) -> usize {
        self.label
    }

    fn queries_per_step(&self) -> usize {
        2
    }

    fn propose(&mut self, batch: usize) -> Result<Proposal, AttackError> {
        let n = batch.max(1);
        self.pending = (0..n).map(|_| self.draw_direction()).collect();
        let mut candidates = Vec::with_capacity(2 * n);
        for (probe, u) in self.pending.iter().enumerate() {
            for sign in [1i8, -1] {
                candidates.push(Candidate {
                    image: self.candidate(u, f64::from(sign)),
                    tag: CandidateTag::Bandits { probe, sign },
                });
            }
        }
        Ok(Proposal { candidates })
    }

    fn observe(
        &mut self,
        results: &[Vec<f64>],
        _queries_used: usize,
        _query_limit: usize,
    ) -> Result<(), AttackError> {
        check_alignment(self.pending.len() * 2, results.len())?;
        let pending = std::mem::take(&mut self.pending);
        let n = pending.len() as f64;
        let h = self.pgd_step();
        for (j, u) in pending.iter().enumerate() {
            let loss = |p: &Vec<f64>| {
                margin_loss(p, self.label).map_err(|e| AttackError::Contract(e.to_string()))
            };
            let plus = loss(&results[2 * j])?;
            let minus = loss(&results[2 * j + 1])?;
            let best = plus.min(minus);
            if best < self.best_loss {
                self.best_loss = best;
                self.accepted.push(best);
            }
            let mut g =
                estimate_gradient(plus, minus, self.params.probe, self.params.image_step, u);
            g.iter_mut().for_each(|x| *x /= n);
            eg_step(&mut self.prior, &g, self.params.eg_lr);
            for (d, v) in self.delta.iter_mut().zip(&self.prior) {
                *d -= h / n * sign0(*v);
            }
            self.ball.project_in_place(&mut self.delta);
        }
        self.current = ImageTensor::from_perturbation(&self.original, &self.delta);
        Ok(())
    }

    fn current(&self) -> &ImageTensor {
        &self.current
    }

    fn accepted_losses(&self) -> &[f64] {
        &self.accepted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attack(seed: u64) -> BanditsAttack {
        BanditsAttack::new(
            ImageTensor::filled(8, 8, 3, 0.5),
            0,
            0.05,
            BanditsParams::default(),
            Rng::new(seed),
        )
    }

    fn margin(m: f64) -> Vec<f64> {
        let mut p = vec![0.0; 10];
        p[0] = (1.0 + m) / 2.0;
        p[1] = (1.0 - m) / 2.0;
        p
    }

    #[test]
    fn zero_prior_gives_mirror_candidates() {
        let mut a = attack(1);
        let p = a.propose(1).unwrap();
        assert_eq!(p.len(), 2);
        for ((plus, minus), x) in p.candidates[0]
            .image
            .data()
            .iter()
            .zip(p.candidates[1].image.data())
            .zip(a.current().data())
        {
            assert!(((plus - x) + (minus - x)).abs() < 1e-15);
        }
    }

    #[test]
    fn direction_norm_expectation() {
        let mut a = BanditsAttack::new(
            ImageTensor::filled(16, 16, 3, 0.5),
            0,
            0.05,
            BanditsParams::default(),
            Rng::new(3),
        );
        let mean = (0..1000)
            .map(|_| a.draw_direction().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / 1000.0;
        assert!((0.9..=1.1).contains(&mean), "{mean}");
    }

    #[test]
    fn seeded_directions() {
        let (mut a, mut b) = (attack(7), attack(7));
        assert_eq!(a.propose(3).unwrap(), b.propose(3).unwrap());
    }

    #[test]
    fn equal_losses_leave_prior() {
        let mut a = attack(2);
        a.prior
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = if i % 2 == 0 { 0.3 } else { -0.2 });
        let prior = a.prior.clone();
        a.propose(1).unwrap();
        a.observe(&[margin(0.4), margin(0.4)], 2, 1000).unwrap();
        assert_eq!(a.prior(), &prior[..]);
        for (d, v) in a.delta().iter().zip(&prior) {
            assert!((d + 0.005 * v.signum()).abs() < 1e-15);
        }
    }

    #[test]
    fn prior_follows_negative_direction() {
        let mut a = attack(4);
        a.propose(1).unwrap();
        let u = a.pending[0].clone();
        a.observe(&[margin(0.2), margin(0.3)], 2, 1000).unwrap();
        let g = estimate_gradient(0.2, 0.3, 0.01, 0.1, &u);
        for ((v, ui), gi) in a.prior().iter().zip(&u).zip(&g) {
            if *ui != 0.0 {
                assert_eq!(v.signum(), -ui.signum());
            }
            assert!((v - (0.1 * gi).tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn eg_step_stays_in_range() {
        let mut v = vec![0.9, -0.9, 0.0];
        eg_step(&mut v, &[1e6, -1e6, 1e6], 0.1);
        assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], -1.0);
    }

    #[test]
    fn surrogate_cosine() {
        // Quadratic surrogate L(z) = Σ a_i (z_i − c_i)², evaluated at the probe points.
        let d = 3072;
        let mut rng = Rng::new(11);
        let a_coef: Vec<f64> = (0..d).map(|_| 0.5 + rng.uniform()).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
        let loss = |z: &[f64]| {
            z.iter()
                .zip(&a_coef)
                .zip(&c)
                .map(|((z, a), c)| a * (z - c).powi(2))
                .sum::<f64>()
        };
        let truth: Vec<f64> = x
            .iter()
            .zip(&a_coef)
            .zip(&c)
            .map(|((x, a), c)| 2.0 * a * (x - c))
            .collect();
        let (probe, step) = (0.01, 0.1);
        let mut attack = BanditsAttack::new(
            ImageTensor::filled(32, 32, 3, 0.5),
            0,
            0.05,
            BanditsParams::default(),
            Rng::new(12),
        );
        let mut sum = vec![0.0; d];
        for _ in 0..100 {
            let u = attack.draw_direction();
            let plus: Vec<f64> = x
                .iter()
                .zip(&u)
                .map(|(x, u)| x + step * probe * u)
                .collect();
            let minus: Vec<f64> = x
                .iter()
                .zip(&u)
                .map(|(x, u)| x - step * probe * u)
                .collect();
            let g = estimate_gradient(loss(&plus), loss(&minus), probe, step, &u);
            sum.iter_mut().zip(&g).for_each(|(s, g)| *s += g / 100.0);
        }
        let dot: f64 = sum.iter().zip(&truth).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cosine = dot / (norm(&sum) * norm(&truth));
        assert!(cosine > 0.1, "{cosine}");
    }

    #[test]
    fn probes_stay_inside_ball() {
        let mut a = attack(5);
        a.prior.iter_mut().for_each(|v| *v = 1.0);
        let p = a.propose(2).unwrap();
        for c in &p.candidates {
            for (x, o) in c.image.data().iter().zip(a.original.data()) {
                assert!((x - o).abs() <= 0.05 + 1e-12);
            }
        }
    }
}
