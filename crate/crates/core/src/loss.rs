//! Class-score helpers. Ties always resolve to the lowest class index.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("class index {index} out of range for {classes} classes")]
pub struct ClassOutOfRange {
    pub index: usize,
    pub classes: usize,
}

/// Index of the largest probability (lowest index on ties).
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// `probs[y] - max_{k != y} probs[k]`; negative means misclassified.
pub fn margin_loss(probs: &[f64], y: usize) -> Result<f64, ClassOutOfRange> {
    if y >= probs.len() {
        return Err(ClassOutOfRange {
            index: y,
            classes: probs.len(),
        });
    }
    let other = probs
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(probs[y] - other)
}

/// Success criterion: the class `y` no longer wins the argmax.
///
/// With lowest-index tie breaking a zero margin can still be a success
/// (when some `k < y` ties with `y`), so this is the authoritative test.
pub fn is_misclassified(probs: &[f64], y: usize) -> bool {
    argmax(probs) != y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn margin_examples() {
        assert!((margin_loss(&[0.6, 0.3, 0.1], 0).unwrap() - 0.3).abs() < 1e-12);
        assert!((margin_loss(&[0.3, 0.6, 0.1], 0).unwrap() + 0.3).abs() < 1e-12);
        let uniform = vec![0.1; 10];
        for y in 0..10 {
            assert_eq!(margin_loss(&uniform, y).unwrap(), 0.0);
        }
    }

    #[test]
    fn out_of_range() {
        assert_eq!(
            margin_loss(&[0.5, 0.5], 2),
            Err(ClassOutOfRange {
                index: 2,
                classes: 2
            })
        );
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 2..12).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn negative_margin_iff_wrong_argmax(probs in distribution(), y in 0usize..12) {
            prop_assume!(y < probs.len());
            let m = margin_loss(&probs, y).unwrap();
            if m < 0.0 {
                prop_assert!(is_misclassified(&probs, y));
            }
            if m > 0.0 {
                prop_assert!(!is_misclassified(&probs, y));
            }
        }
    }
}
