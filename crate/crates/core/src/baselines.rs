//! Comparison methods that predict a pair's prominent difference without the
//! pairwise prominence model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeId, GroundTruthLabel};
use crate::error::{Error, Result};
use crate::linear::{train_one_vs_rest, CalibratedClassifier, SvmParams};
use crate::prominence::ProminencePrediction;
use crate::rng;
use crate::scores::ScoreMatrix;

/// Ranks attributes by `weight_m * |r_m^u - r_m^v|`, ties by id.
pub fn widest_difference(r_u: &[f64], r_v: &[f64], weights: &[f64]) -> Result<ProminencePrediction> {
    if r_u.len() != r_v.len() || weights.len() != r_u.len() {
        return Err(Error::LengthMismatch {
            expected: r_u.len(),
            found: if r_v.len() != r_u.len() {
                r_v.len()
            } else {
                weights.len()
            },
        });
    }
    let score = r_u
        .iter()
        .zip(r_v)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b).abs())
        .collect();
    Ok(ProminencePrediction::from_confidences(score, r_u, r_v))
}

/// Attribute weights `tf_m * idf_m`, clipped at zero.
///
/// `tf_m = (n_m + 1) / (N + M)` with `n_m` the number of pairs labeled `m`,
/// and `idf_m = ln(N / (1 + d_m))` with `d_m` the number of pairs whose gap on
/// `m` exceeds the median gap on `m`.
pub fn fit_tfidf_weights(scores: &ScoreMatrix, labels: &[GroundTruthLabel]) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let m = scores.n_attributes();
    let n = labels.len() as f64;
    let mut counts = vec![0usize; m];
    let mut gaps = vec![Vec::with_capacity(labels.len()); m];
    for l in labels {
        let top = l.top();
        if top >= m {
            return Err(Error::BadAttribute(top));
        }
        counts[top] += 1;
        let (ri, rj) = (scores.row(l.i), scores.row(l.j));
        for a in 0..m {
            gaps[a].push((ri[a] - rj[a]).abs());
        }
    }
    Ok((0..m)
        .map(|a| {
            let median = median(&gaps[a]);
            let d = gaps[a].iter().filter(|&&g| g > median).count() as f64;
            let tf = (counts[a] as f64 + 1.0) / (n + m as f64);
            let idf = (n / (1.0 + d)).ln();
            (tf * idf).max(0.0)
        })
        .collect())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

/// One-vs-rest classifiers on single-image score vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleImageModel {
    pub classifiers: Vec<CalibratedClassifier>,
}

/// Rows `(r^i, m)` and `(r^j, m)` for every labeled pair `(i, j, m)`.
pub fn single_image_rows(scores: &ScoreMatrix, labels: &[GroundTruthLabel]) -> (Vec<Vec<f64>>, Vec<AttributeId>) {
    let mut x = Vec::with_capacity(2 * labels.len());
    let mut y = Vec::with_capacity(2 * labels.len());
    for l in labels {
        for k in [l.i, l.j] {
            x.push(scores.row(k).to_vec());
            y.push(l.top());
        }
    }
    (x, y)
}

pub fn train_single_image(
    scores: &ScoreMatrix,
    labels: &[GroundTruthLabel],
    params: &SvmParams,
) -> Result<SingleImageModel> {
    if labels.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (x, y) = single_image_rows(scores, labels);
    Ok(SingleImageModel {
        classifiers: train_one_vs_rest(&x, &y, scores.n_attributes(), params)?,
    })
}

impl SingleImageModel {
    /// Mean of the two images' posteriors per attribute.
    pub fn predict(&self, r_u: &[f64], r_v: &[f64]) -> Result<ProminencePrediction> {
        let m = self.classifiers.len();
        if r_u.len() != m || r_v.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                found: if r_u.len() != m { r_u.len() } else { r_v.len() },
            });
        }
        let conf = self
            .classifiers
            .iter()
            .map(|c| 0.5 * (c.probability(r_u) + c.probability(r_v)))
            .collect();
        Ok(ProminencePrediction::from_confidences(conf, r_u, r_v))
    }
}

/// Samples a label from the training label frequencies, seeded per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFrequency {
    pub freq: Vec<f64>,
    pub seed: u64,
}

pub fn prior_frequency(labels: &[GroundTruthLabel], m: usize, seed: u64) -> Result<PriorFrequency> {
    if labels.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut freq = vec![0.0; m];
    for l in labels {
        *freq.get_mut(l.top()).ok_or(Error::BadAttribute(l.top()))? += 1.0;
    }
    let n = labels.len() as f64;
    freq.iter_mut().for_each(|f| *f /= n);
    Ok(PriorFrequency { freq, seed })
}

impl PriorFrequency {
    /// Draws an attribute for the unordered pair `{id_u, id_v}`.
    pub fn sample(&self, id_u: &str, id_v: &str) -> AttributeId {
        let mut r = rng::stream(self.seed ^ rng::unordered_pair_hash(id_u, id_v), &[0x9e10]);
        let x: f64 = r.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (a, &f) in self.freq.iter().enumerate() {
            if f > 0.0 {
                acc += f;
                last = a;
                if x < acc {
                    return a;
                }
            }
        }
        last
    }

    /// The sampled attribute first, then the rest by descending frequency.
    /// Confidences are the frequencies.
    pub fn predict(&self, id_u: &str, id_v: &str, r_u: &[f64], r_v: &[f64]) -> ProminencePrediction {
        let pick = self.sample(id_u, id_v);
        let mut rest: Vec<(AttributeId, f64)> = self
            .freq
            .iter()
            .copied()
            .enumerate()
            .filter(|&(a, _)| a != pick)
            .collect();
        rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut ranked = vec![(pick, self.freq[pick])];
        ranked.extend(rest);
        ProminencePrediction::from_ranked(ranked, r_u, r_v)
    }
}

/// A fitted comparison method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum BaselineModel {
    WidestTfidf { weights: Vec<f64> },
    SingleImage(SingleImageModel),
    PriorFrequency(PriorFrequency),
}
