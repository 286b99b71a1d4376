use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Constraint, SearchEngine, SearchSession};
use crate::dataset::{AttributeId, SyntheticWorld};
use crate::prominence::Polarity;
use crate::rng::Rng;

/// Parameters of the simulated user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackParams {
    pub page_size: usize,
    /// References picked per round, one constraint each.
    pub references: usize,
    /// Probability that a constraint uses the true prominent difference.
    pub prominent_fraction: f64,
    /// Minimum standardized gap of a "true" difference.
    pub tau: f64,
}

impl Default for FeedbackParams {
    fn default() -> Self {
        Self {
            page_size: 16,
            references: 8,
            prominent_fraction: 0.75,
            tau: 0.1,
        }
    }
}

/// Model-free source of the prominent difference between a target and a
/// reference, so the simulated user never consults the model under test.
#[derive(Debug, Clone)]
pub enum ProminenceOracle {
    /// Argmax of the generator's utility on latent strengths.
    Utility {
        world: SyntheticWorld,
        latents: Vec<Vec<f64>>,
    },
    /// Annotated top labels keyed by unordered database pair, falling back to
    /// the widest latent gap.
    Annotated {
        labels: HashMap<(usize, usize), AttributeId>,
        latents: Vec<Vec<f64>>,
    },
    /// Widest gap of latent strengths.
    WidestLatent { latents: Vec<Vec<f64>> },
}

fn widest(a: &[f64], b: &[f64]) -> AttributeId {
    let mut best = 0;
    for m in 1..a.len() {
        if (a[m] - b[m]).abs() > (a[best] - b[best]).abs() {
            best = m;
        }
    }
    best
}

impl ProminenceOracle {
    pub fn prominent(&self, target: usize, reference: usize) -> AttributeId {
        match self {
            ProminenceOracle::Utility { world, latents } => world.oracle_label(&latents[target], &latents[reference]),
            ProminenceOracle::Annotated { labels, latents } => {
                let key = (target.min(reference), target.max(reference));
                labels
                    .get(&key)
                    .copied()
                    .unwrap_or_else(|| widest(&latents[target], &latents[reference]))
            }
            ProminenceOracle::WidestLatent { latents } => widest(&latents[target], &latents[reference]),
        }
    }
}

/// With probability `prominent_fraction` returns `prominent`; otherwise a
/// uniformly random attribute whose gap exceeds `tau`, or the widest gap
/// when none does.
pub fn feedback_attribute(
    prominent: AttributeId,
    r_target: &[f64],
    r_reference: &[f64],
    params: &FeedbackParams,
    r: &mut Rng,
) -> AttributeId {
    let coin: f64 = r.random();
    if coin < params.prominent_fraction {
        return prominent;
    }
    let true_diffs: Vec<AttributeId> = (0..r_target.len())
        .filter(|&m| (r_target[m] - r_reference[m]).abs() > params.tau)
        .collect();
    if true_diffs.is_empty() {
        widest(r_target, r_reference)
    } else {
        true_diffs[r.random_range(0..true_diffs.len())]
    }
}

/// One round of feedback about `target` on the session's current page.
///
/// References are drawn without replacement from the page, excluding the
/// target itself. Polarity follows the sign of `r(target) - r(reference)`, so
/// the target satisfies every constraint; pairs with identical scores on the
/// chosen attribute give no constraint.
pub fn simulate_user_feedback(
    session: &SearchSession,
    engine: &SearchEngine,
    target: usize,
    oracle: &ProminenceOracle,
    params: &FeedbackParams,
    r: &mut Rng,
) -> Vec<Constraint> {
    let candidates: Vec<usize> = session
        .ranking()
        .iter()
        .take(params.page_size)
        .copied()
        .filter(|&k| k != target)
        .collect();
    let n_refs = params.references.min(candidates.len());
    let r_target = engine.scores.row(target);
    sample(r, candidates.len(), n_refs)
        .into_iter()
        .filter_map(|pos| {
            let reference = candidates[pos];
            let r_ref = engine.scores.row(reference);
            let attribute = feedback_attribute(oracle.prominent(target, reference), r_target, r_ref, params, r);
            match Polarity::of(r_target[attribute], r_ref[attribute]) {
                Polarity::Equal => None,
                polarity => Some(Constraint {
                    reference,
                    attribute,
                    polarity,
                }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy_engine;
    use super::super::{SessionMode, Variant};
    use super::*;
    use crate::rng;

    fn latents(engine: &SearchEngine) -> Vec<Vec<f64>> {
        engine.scores.rows().to_vec()
    }

    #[test]
    fn noise_free_feedback_uses_the_oracle() {
        let e = toy_engine(60);
        let oracle = ProminenceOracle::WidestLatent { latents: latents(&e) };
        let params = FeedbackParams {
            prominent_fraction: 1.0,
            ..Default::default()
        };
        let s = SearchSession::new(&e, Variant::Baseline, SessionMode::Simulated { target: 5 }, 16, 0).unwrap();
        let fb = simulate_user_feedback(&s, &e, 5, &oracle, &params, &mut rng::stream(1, &[]));
        assert!(!fb.is_empty() && fb.len() <= 8);
        for c in &fb {
            assert_eq!(c.attribute, oracle.prominent(5, c.reference));
            assert_ne!(c.reference, 5);
            assert!(c.is_satisfied_by(e.scores.row(5), e.scores.row(c.reference)));
        }
        let mut refs: Vec<usize> = fb.iter().map(|c| c.reference).collect();
        refs.dedup();
        assert_eq!(refs.len(), fb.len());
    }

    #[test]
    fn identical_scores_fall_back_to_the_widest_attribute() {
        let params = FeedbackParams {
            prominent_fraction: 0.0,
            ..Default::default()
        };
        let r = [0.4, -0.2, 1.0];
        let mut g = rng::stream(0, &[]);
        for _ in 0..10 {
            assert_eq!(feedback_attribute(2, &r, &r, &params, &mut g), 0);
        }
        let other = [0.45, 1.0, 1.05];
        for _ in 0..20 {
            assert_eq!(feedback_attribute(2, &r, &other, &params, &mut g), 1);
        }
    }

    #[test]
    fn noise_branch_only_picks_true_differences() {
        let params = FeedbackParams {
            prominent_fraction: 0.0,
            ..Default::default()
        };
        let (a, b) = ([0.0, 0.0, 0.0, 0.0], [0.5, 0.05, -0.3, 0.1]);
        let mut g = rng::stream(3, &[]);
        let mut seen = [false; 4];
        for _ in 0..200 {
            let m = feedback_attribute(1, &a, &b, &params, &mut g);
            assert!(m == 0 || m == 2);
            seen[m] = true;
        }
        assert!(seen[0] && seen[2]);
    }

    #[test]
    fn feedback_is_reproducible() {
        let e = toy_engine(60);
        let oracle = ProminenceOracle::WidestLatent { latents: latents(&e) };
        let s = SearchSession::new(&e, Variant::Prominence, SessionMode::Simulated { target: 9 }, 16, 4).unwrap();
        let p = FeedbackParams::default();
        let a = simulate_user_feedback(&s, &e, 9, &oracle, &p, &mut rng::stream(8, &[]));
        let b = simulate_user_feedback(&s, &e, 9, &oracle, &p, &mut rng::stream(8, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn annotated_oracle_prefers_labels() {
        let lat = vec![vec![0.0, 0.0], vec![1.0, 0.1]];
        let labels = HashMap::from([((0, 1), 1)]);
        let o = ProminenceOracle::Annotated {
            labels,
            latents: lat.clone(),
        };
        assert_eq!(o.prominent(1, 0), 1);
        assert_eq!(ProminenceOracle::WidestLatent { latents: lat }.prominent(1, 0), 0);
    }
}
