//! Iterative label refinement and the ensemble it leaves behind.
//!
//! Each round fits a model, scores every training sample's loss under the
//! current labels, derives a loss threshold ε from the refurbish ratio, and
//! rewrites the labels of samples whose loss strictly exceeds ε — either by
//! flipping them outright or by blending them toward the model's output.
//! The models from all rounds form the returned ensemble.

use std::fmt;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::learner::{self, LearnerConfig, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    /// Replace a high-loss label with its opposite.
    HardFlip,
    /// Blend a high-loss label toward the model prediction.
    ConvexBlend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    /// Predict with the final-round model only.
    Last,
    /// Average the probabilities of every round's model.
    Vote,
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Combiner::Last => write!(f, "last"),
            Combiner::Vote => write!(f, "vote"),
        }
    }
}

impl fmt::Display for RefineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefineMode::HardFlip => write!(f, "hard-flip"),
            RefineMode::ConvexBlend => write!(f, "convex-blend"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Number of refinement rounds; zero means a single plain fit.
    pub iterations: usize,
    /// Upper bound on the fraction of labels rewritten per round.
    pub ratio: f64,
    pub mode: RefineMode,
    pub combiner: Combiner,
    pub learner: LearnerConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 7,
            ratio: 0.05,
            mode: RefineMode::HardFlip,
            combiner: Combiner::Vote,
            learner: LearnerConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 0.0 && self.ratio < 1.0) {
            return Err(Error::param("ratio", "must lie in [0, 1)"));
        }
        self.learner.validate()
    }
}

/// The models from every refinement round plus a record of how the labels
/// moved. `label_history[k]` holds the labels used to fit `predictors[k]`
/// (blended labels for the convex mode), and `flip_counts[k]` counts the
/// samples rewritten when moving past round `k`.
#[derive(Debug)]
pub struct Ensemble {
    pub predictors: Vec<Predictor>,
    pub combiner: Combiner,
    pub label_history: Vec<Vec<f64>>,
    pub flip_counts: Vec<usize>,
}

/// The loss value at the ⌈(1−ratio)·N⌉-th position (1-indexed) of the
/// sorted losses. Only losses strictly above the returned ε are rewritten,
/// so at most ⌊ratio·N⌋ samples can move in a round.
pub fn epsilon_threshold(losses: &[f64], ratio: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyInput {
            context: "loss vector",
        });
    }
    if !(ratio >= 0.0 && ratio < 1.0) {
        return Err(Error::param("ratio", "must lie in [0, 1)"));
    }
    let n = losses.len();
    // N − ⌊ratio·N⌋ equals ⌈(1−ratio)·N⌉ and keeps the rewrite budget an
    // exact integer bound.
    let max_rewrites = (ratio * n as f64).floor() as usize;
    let rank = n - max_rewrites;
    let mut sorted = losses.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// Hard refurbishment: flip the labels whose loss strictly exceeds ε.
pub fn flip_labels(labels: &[u8], losses: &[f64], epsilon: f64) -> Result<Vec<u8>> {
    if labels.len() != losses.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: losses.len(),
        });
    }
    Ok(labels
        .iter()
        .zip(losses)
        .map(|(&y, &l)| if l > epsilon { 1 - y } else { y })
        .collect())
}

/// Convex refurbishment: y' = α·y + (1−α)·f with a per-sample binary α
/// (α = 1 keeps the label, α = 0 adopts the prediction).
pub fn refurbish_convex(
    labels: &[f64],
    predictions: &[f64],
    alphas: &[u8],
) -> Result<Vec<f64>> {
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: predictions.len(),
        });
    }
    if labels.len() != alphas.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: alphas.len(),
        });
    }
    Ok(labels
        .iter()
        .zip(predictions)
        .zip(alphas)
        .map(|((&y, &f), &a)| {
            let a = a as f64;
            a * y + (1.0 - a) * f
        })
        .collect())
}

fn binarize(soft: &[f64]) -> Vec<u8> {
    soft.iter().map(|&v| u8::from(v > 0.5)).collect()
}

/// Runs the full refinement loop and returns the per-round ensemble.
pub fn ra_label(
    features: ArrayView2<'_, f64>,
    labels: &[u8],
    cfg: &RefineConfig,
) -> Result<Ensemble> {
    cfg.validate()?;
    let mut soft: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mut hard: Vec<u8> = labels.to_vec();

    let mut label_history = vec![soft.clone()];
    let mut flip_counts = Vec::with_capacity(cfg.iterations);
    let mut predictors = Vec::with_capacity(cfg.iterations + 1);
    predictors.push(learner::fit(features, &hard, &cfg.learner)?);

    for round in 0..cfg.iterations {
        let probs = predictors[round].predict_proba(features)?;
        let losses: Vec<f64> = probs
            .iter()
            .zip(&soft)
            .map(|(&p, &y)| learner::sample_loss(p, y))
            .collect();
        let epsilon = epsilon_threshold(&losses, cfg.ratio)?;
        match cfg.mode {
            RefineMode::HardFlip => {
                let next = flip_labels(&hard, &losses, epsilon)?;
                flip_counts.push(
                    next.iter().zip(&hard).filter(|(a, b)| a != b).count(),
                );
                hard = next;
                soft = hard.iter().map(|&l| l as f64).collect();
            }
            RefineMode::ConvexBlend => {
                let alphas: Vec<u8> = losses
                    .iter()
                    .map(|&l| u8::from(l <= epsilon))
                    .collect();
                flip_counts.push(alphas.iter().filter(|&&a| a == 0).count());
                soft = refurbish_convex(&soft, &probs, &alphas)?;
                hard = binarize(&soft);
            }
        }
        label_history.push(soft.clone());
        predictors.push(learner::fit(features, &hard, &cfg.learner)?);
    }

    Ok(Ensemble {
        predictors,
        combiner: cfg.combiner,
        label_history,
        flip_counts,
    })
}

/// Combined probability of the ensemble per its combiner.
pub fn ensemble_predict(ensemble: &Ensemble, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let last = ensemble.predictors.last().ok_or(Error::EmptyInput {
        context: "ensemble predictors",
    })?;
    match ensemble.combiner {
        Combiner::Last => last.predict_proba(features),
        Combiner::Vote => {
            let mut sum = vec![0.0; features.nrows()];
            for predictor in &ensemble.predictors {
                let probs = predictor.predict_proba(features)?;
                for (s, p) in sum.iter_mut().zip(&probs) {
                    *s += p;
                }
            }
            let count = ensemble.predictors.len() as f64;
            Ok(sum.into_iter().map(|s| s / count).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_gaussian;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(n_per_class: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let ds = synth_gaussian(n_per_class, [-2.0, 2.0], [2.0, -2.0], 0.5, seed).unwrap();
        (ds.features().to_owned(), ds.labels().unwrap().to_vec())
    }

    fn small_learner() -> LearnerConfig {
        LearnerConfig {
            n_estimators: 20,
            min_samples_leaf: 5,
            ..LearnerConfig::default()
        }
    }

    #[test]
    fn epsilon_keeps_the_stated_quantile() {
        let losses: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let eps = epsilon_threshold(&losses, 0.2).unwrap();
        assert_eq!(eps, 0.8);
        assert_eq!(losses.iter().filter(|&&l| l > eps).count(), 2);
    }

    #[test]
    fn zero_ratio_epsilon_is_the_maximum_loss() {
        let losses = [0.3, 1.7, 0.4, 0.9];
        let eps = epsilon_threshold(&losses, 0.0).unwrap();
        assert_eq!(eps, 1.7);
        assert_eq!(losses.iter().filter(|&&l| l > eps).count(), 0);
    }

    #[test]
    fn equal_losses_never_exceed_epsilon() {
        let losses = [0.5; 8];
        let eps = epsilon_threshold(&losses, 0.4).unwrap();
        assert_eq!(eps, 0.5);
        assert_eq!(losses.iter().filter(|&&l| l > eps).count(), 0);
    }

    #[test]
    fn rewrite_budget_holds_across_ratios_and_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &n in &[3usize, 10, 37, 100, 541] {
            let losses: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            for &ratio in &[0.0, 0.05, 0.1, 1.0 / 3.0, 0.5, 0.99] {
                let eps = epsilon_threshold(&losses, ratio).unwrap();
                let rewrites = losses.iter().filter(|&&l| l > eps).count();
                let budget = (ratio * n as f64).floor() as usize;
                assert!(
                    rewrites <= budget,
                    "n={n} ratio={ratio}: {rewrites} > {budget}"
                );
            }
        }
    }

    #[test]
    fn empty_losses_are_rejected() {
        assert!(matches!(
            epsilon_threshold(&[], 0.1),
            Err(Error::EmptyInput { .. })
        ));
    }

    #[test]
    fn flipping_twice_with_the_same_mask_restores_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let labels: Vec<u8> = (0..50).map(|_| rng.random_range(0..=1)).collect();
        let losses: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let eps = 0.6;
        let once = flip_labels(&labels, &losses, eps).unwrap();
        let twice = flip_labels(&once, &losses, eps).unwrap();
        assert_eq!(labels, twice);
        assert_ne!(labels, once, "expected at least one loss above {eps}");
    }

    #[test]
    fn convex_blend_matches_hand_values() {
        // α = 1 keeps labels exactly.
        let kept = refurbish_convex(&[1.0, 0.0], &[0.3, 0.8], &[1, 1]).unwrap();
        assert_eq!(kept, vec![1.0, 0.0]);
        // α = 0 adopts the prediction exactly.
        let adopted = refurbish_convex(&[1.0], &[0.7], &[0]).unwrap();
        assert_eq!(adopted, vec![0.7]);
        let mixed = refurbish_convex(&[1.0, 0.0], &[0.2, 0.9], &[1, 0]).unwrap();
        assert_eq!(mixed, vec![1.0, 0.9]);
    }

    #[test]
    fn zero_iterations_reduce_to_a_plain_fit() {
        let (x, y) = blobs(40, 3);
        let cfg = RefineConfig {
            iterations: 0,
            learner: small_learner(),
            ..RefineConfig::default()
        };
        let ensemble = ra_label(x.view(), &y, &cfg).unwrap();
        assert_eq!(ensemble.predictors.len(), 1);
        assert!(ensemble.flip_counts.is_empty());
        let direct = learner::fit(x.view(), &y, &cfg.learner).unwrap();
        let pa = ensemble_predict(&ensemble, x.view()).unwrap();
        let pb = direct.predict_proba(x.view()).unwrap();
        for (u, v) in pa.iter().zip(&pb) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn zero_ratio_changes_nothing_across_rounds() {
        let (x, y) = blobs(40, 9);
        let cfg = RefineConfig {
            iterations: 3,
            ratio: 0.0,
            learner: small_learner(),
            ..RefineConfig::default()
        };
        let ensemble = ra_label(x.view(), &y, &cfg).unwrap();
        assert_eq!(ensemble.predictors.len(), 4);
        assert_eq!(ensemble.flip_counts, vec![0, 0, 0]);
        let first = ensemble.predictors[0].to_text();
        for p in &ensemble.predictors[1..] {
            assert_eq!(p.to_text(), first);
        }
        for history in &ensemble.label_history {
            let as_u8: Vec<u8> = history.iter().map(|&v| v as u8).collect();
            assert_eq!(as_u8, y);
        }
        // With identical members, vote and last must agree.
        let vote = ensemble_predict(&ensemble, x.view()).unwrap();
        let last_ensemble = Ensemble {
            combiner: Combiner::Last,
            ..ensemble
        };
        let last = ensemble_predict(&last_ensemble, x.view()).unwrap();
        for (u, v) in vote.iter().zip(&last) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn flip_counts_respect_the_per_round_budget() {
        let (x, mut y) = blobs(50, 23);
        // Corrupt a chunk of labels so the refiner has something to do.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..15 {
            let at = rng.random_range(0..y.len());
            y[at] = 1 - y[at];
        }
        let cfg = RefineConfig {
            iterations: 3,
            ratio: 0.1,
            learner: small_learner(),
            ..RefineConfig::default()
        };
        let ensemble = ra_label(x.view(), &y, &cfg).unwrap();
        let budget = (0.1 * y.len() as f64).floor() as usize;
        assert_eq!(ensemble.flip_counts.len(), 3);
        for &count in &ensemble.flip_counts {
            assert!(count <= budget, "{count} > {budget}");
        }
        assert!(
            ensemble.flip_counts.iter().sum::<usize>() > 0,
            "refiner never moved a label on corrupted data"
        );
    }

    #[test]
    fn convex_history_stays_in_unit_interval_and_moves_toward_predictions() {
        let (x, mut y) = blobs(50, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..12 {
            let at = rng.random_range(0..y.len());
            y[at] = 1 - y[at];
        }
        let cfg = RefineConfig {
            iterations: 4,
            ratio: 0.1,
            mode: RefineMode::ConvexBlend,
            learner: small_learner(),
            ..RefineConfig::default()
        };
        let ensemble = ra_label(x.view(), &y, &cfg).unwrap();
        assert_eq!(ensemble.label_history.len(), 5);
        let mut saw_fraction = false;
        for history in &ensemble.label_history {
            for &v in history {
                assert!((0.0..=1.0).contains(&v), "blended label {v} out of range");
                if v != 0.0 && v != 1.0 {
                    saw_fraction = true;
                }
            }
        }
        assert!(saw_fraction, "convex blending never produced a soft label");
    }

    #[test]
    fn vote_is_the_mean_and_ignores_member_order() {
        let (x, y) = blobs(40, 2);
        let cfg = RefineConfig {
            iterations: 3,
            ratio: 0.2,
            learner: small_learner(),
            ..RefineConfig::default()
        };
        let mut ensemble = ra_label(x.view(), &y, &cfg).unwrap();
        let vote = ensemble_predict(&ensemble, x.view()).unwrap();

        // Arithmetic mean of the members, computed independently.
        let member_probs: Vec<Vec<f64>> = ensemble
            .predictors
            .iter()
            .map(|p| p.predict_proba(x.view()).unwrap())
            .collect();
        for (i, &v) in vote.iter().enumerate() {
            let mean: f64 = member_probs.iter().map(|probs| probs[i]).sum::<f64>()
                / member_probs.len() as f64;
            assert!((v - mean).abs() <= 1e-12);
        }

        ensemble.predictors.reverse();
        let reversed = ensemble_predict(&ensemble, x.view()).unwrap();
        for (u, v) in vote.iter().zip(&reversed) {
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn invalid_ratio_is_rejected() {
        let cfg = RefineConfig {
            ratio: 1.0,
            ..RefineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RefineConfig {
            ratio: -0.1,
            ..RefineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
