//! Perturbation budgets and projection onto the epsilon ball.

use std::fmt;
use std::str::FromStr;

/// Default radius in `[0, 1]` pixel units.
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L2 => f.write_str("l2"),
            Norm::Linf => f.write_str("linf"),
        }
    }
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Norm::L2),
            "linf" | "inf" => Ok(Norm::Linf),
            other => Err(format!("unknown norm {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBudget {
    pub norm: Norm,
    pub epsilon: f64,
}

impl NormBudget {
    pub fn new(norm: Norm, epsilon: f64) -> Self {
        assert!(
            epsilon >= 0.0 && epsilon.is_finite(),
            "epsilon must be >= 0"
        );
        Self { norm, epsilon }
    }

    pub fn linf(epsilon: f64) -> Self {
        Self::new(Norm::Linf, epsilon)
    }

    pub fn l2(epsilon: f64) -> Self {
        Self::new(Norm::L2, epsilon)
    }

    pub fn measure(&self, delta: &[f64]) -> f64 {
        match self.norm {
            Norm::Linf => delta.iter().fold(0.0, |m, v| m.max(v.abs())),
            Norm::L2 => delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Projects `delta` onto the ball in place.
    pub fn project_in_place(&self, delta: &mut [f64]) {
        let eps = self.epsilon;
        match self.norm {
            Norm::Linf => delta.iter_mut().for_each(|v| *v = v.clamp(-eps, eps)),
            Norm::L2 => {
                let norm = self.measure(delta);
                if norm > eps {
                    let scale = eps / norm;
                    delta.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
    }

    pub fn project(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = delta.to_vec();
        self.project_in_place(&mut out);
        out
    }
}

impl Default for NormBudget {
    fn default() -> Self {
        Self::linf(DEFAULT_EPSILON)
    }
}
