//! A common prediction interface over the prominence model and baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_tfidf_weights, prior_frequency, train_single_image, widest_difference, BaselineModel};
use crate::dataset::GroundTruthLabel;
use crate::error::{Error, Result};
use crate::linear::SvmParams;
use crate::prominence::{train_prominence, ProminenceModel, ProminenceParams, ProminencePrediction};
use crate::scores::ScoreMatrix;

/// An image id together with its standardized scores.
#[derive(Debug, Clone, Copy)]
pub struct ScoredImage<'a> {
    pub id: &'a str,
    pub scores: &'a [f64],
}

impl<'a> ScoredImage<'a> {
    pub fn of(scores: &'a ScoreMatrix, k: usize) -> Self {
        Self {
            id: scores.id(k),
            scores: scores.row(k),
        }
    }
}

pub trait PairPredictor: Send + Sync {
    fn predict_pair(&self, u: ScoredImage<'_>, v: ScoredImage<'_>) -> Result<ProminencePrediction>;
}

impl PairPredictor for ProminenceModel {
    fn predict_pair(&self, u: ScoredImage<'_>, v: ScoredImage<'_>) -> Result<ProminencePrediction> {
        self.predict(u.scores, v.scores)
    }
}

impl PairPredictor for BaselineModel {
    fn predict_pair(&self, u: ScoredImage<'_>, v: ScoredImage<'_>) -> Result<ProminencePrediction> {
        match self {
            BaselineModel::WidestTfidf { weights } => widest_difference(u.scores, v.scores, weights),
            BaselineModel::SingleImage(m) => m.predict(u.scores, v.scores),
            BaselineModel::PriorFrequency(p) => {
                if u.scores.len() != p.freq.len() || v.scores.len() != p.freq.len() {
                    return Err(Error::LengthMismatch {
                        expected: p.freq.len(),
                        found: u.scores.len().min(v.scores.len()),
                    });
                }
                Ok(p.predict(u.id, v.id, u.scores, v.scores))
            }
        }
    }
}

/// Selectable prediction methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The pairwise prominence model.
    Model,
    /// Widest difference with tf-idf attribute weights.
    Widest,
    /// Widest difference with uniform weights.
    WidestPlain,
    /// One-vs-rest classifiers on single images.
    Single,
    /// Label frequencies of the training set.
    Prior,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Model,
        Method::Widest,
        Method::WidestPlain,
        Method::Single,
        Method::Prior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::Widest => "widest",
            Method::WidestPlain => "widest-plain",
            Method::Single => "single",
            Method::Prior => "prior",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

/// Hyperparameters for every method.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodParams {
    pub prominence: ProminenceParams,
    pub single_image: SvmParams,
    pub prior_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedMethod {
    Model(ProminenceModel),
    Baseline(BaselineModel),
}

impl PairPredictor for TrainedMethod {
    fn predict_pair(&self, u: ScoredImage<'_>, v: ScoredImage<'_>) -> Result<ProminencePrediction> {
        match self {
            TrainedMethod::Model(m) => m.predict_pair(u, v),
            TrainedMethod::Baseline(b) => b.predict_pair(u, v),
        }
    }
}

pub fn train_method(
    method: Method,
    scores: &ScoreMatrix,
    labels: &[GroundTruthLabel],
    params: &MethodParams,
) -> Result<TrainedMethod> {
    let m = scores.n_attributes();
    Ok(match method {
        Method::Model => TrainedMethod::Model(train_prominence(scores, labels, &params.prominence)?),
        Method::Widest => TrainedMethod::Baseline(BaselineModel::WidestTfidf {
            weights: fit_tfidf_weights(scores, labels)?,
        }),
        Method::WidestPlain => TrainedMethod::Baseline(BaselineModel::WidestTfidf { weights: vec![1.0; m] }),
        Method::Single => TrainedMethod::Baseline(BaselineModel::SingleImage(train_single_image(
            scores,
            labels,
            &params.single_image,
        )?)),
        Method::Prior => TrainedMethod::Baseline(BaselineModel::PriorFrequency(prior_frequency(
            labels,
            m,
            params.prior_seed,
        )?)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("dominance".parse::<Method>().is_err());
    }

    #[test]
    fn every_method_predicts_symmetric_rankings() {
        let ids: Vec<String> = (0..30).map(|k| format!("i{k}")).collect();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|k| vec![(k % 5) as f64 - 2.0, (k % 7) as f64 / 2.0 - 1.5, (k % 3) as f64 - 1.0])
            .collect();
        let scores = ScoreMatrix::new(ids, rows).unwrap();
        let labels: Vec<_> = (0..29)
            .map(|k| {
                let (a, b) = (scores.row(k), scores.row(k + 1));
                let gaps: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
                let top = (0..3)
                    .max_by(|&p, &q| gaps[p].total_cmp(&gaps[q]).then(q.cmp(&p)))
                    .unwrap();
                GroundTruthLabel::single(k, k + 1, top)
            })
            .collect();
        for method in Method::ALL {
            let t = train_method(method, &scores, &labels, &MethodParams::default()).unwrap();
            let (u, v) = (ScoredImage::of(&scores, 3), ScoredImage::of(&scores, 11));
            let p = t.predict_pair(u, v).unwrap();
            let q = t.predict_pair(v, u).unwrap();
            assert_eq!(p.ranked, q.ranked, "{method}");
            assert_eq!(p.ranked.len(), 3);
        }
    }
}
