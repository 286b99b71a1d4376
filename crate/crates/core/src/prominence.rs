//! Prominent-difference prediction from pairs of attribute scores.
//!
//! An unordered pair is described by the symmetric feature
//! `phi = ((r_i + r_j) / 2, |r_i - r_j|)`, and attribute `m` gets the
//! calibrated confidence `P_m = sigmoid(A_m (v_m.phi + b_m) + B_m)` from a
//! classifier trained to separate pairs whose prominent difference is `m`
//! from all other pairs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeId, GroundTruthLabel};
use crate::error::{Error, Result};
use crate::linear::{train_one_vs_rest, CalibratedClassifier, SvmParams};
use crate::scores::ScoreMatrix;

/// How a pair of score vectors is turned into a symmetric feature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Per-attribute means followed by absolute differences (length `2M`).
    #[default]
    MeanAbsDiff,
    /// Absolute differences only (length `M`).
    AbsDiff,
    /// Element-wise products (length `M`).
    Product,
    /// `w * max + (1 - w) * min` per attribute (length `M`).
    WeightedAverage { w: f64 },
}

impl FeatureMap {
    pub fn dim(&self, m: usize) -> usize {
        match self {
            FeatureMap::MeanAbsDiff => 2 * m,
            _ => m,
        }
    }

    pub fn apply(&self, r_i: &[f64], r_j: &[f64]) -> Result<Vec<f64>> {
        if r_i.len() != r_j.len() {
            return Err(Error::LengthMismatch {
                expected: r_i.len(),
                found: r_j.len(),
            });
        }
        let pairs = r_i.iter().zip(r_j);
        Ok(match *self {
            FeatureMap::MeanAbsDiff => {
                let mut f: Vec<f64> = pairs.clone().map(|(a, b)| (a + b) / 2.0).collect();
                f.extend(pairs.map(|(a, b)| (a - b).abs()));
                f
            }
            FeatureMap::AbsDiff => pairs.map(|(a, b)| (a - b).abs()).collect(),
            FeatureMap::Product => pairs.map(|(a, b)| a * b).collect(),
            FeatureMap::WeightedAverage { w } => pairs.map(|(a, b)| w * a.max(*b) + (1.0 - w) * a.min(*b)).collect(),
        })
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMap::MeanAbsDiff => write!(f, "mean-abs-diff"),
            FeatureMap::AbsDiff => write!(f, "abs-diff"),
            FeatureMap::Product => write!(f, "product"),
            FeatureMap::WeightedAverage { w } => write!(f, "weighted-average:{w}"),
        }
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-abs-diff" => Ok(FeatureMap::MeanAbsDiff),
            "abs-diff" => Ok(FeatureMap::AbsDiff),
            "product" => Ok(FeatureMap::Product),
            _ => {
                let w = s
                    .strip_prefix("weighted-average:")
                    .and_then(|w| w.parse::<f64>().ok())
                    .filter(|w| (0.0..=1.0).contains(w))
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown feature map `{s}`")))?;
                Ok(FeatureMap::WeightedAverage { w })
            }
        }
    }
}

/// The default pair feature: means then absolute differences.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature(Vec<f64>);

impl PairFeature {
    pub fn new(r_i: &[f64], r_j: &[f64]) -> Result<Self> {
        FeatureMap::MeanAbsDiff.apply(r_i, r_j).map(Self)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn n_attributes(&self) -> usize {
        self.0.len() / 2
    }

    pub fn means(&self) -> &[f64] {
        &self.0[..self.n_attributes()]
    }

    pub fn differences(&self) -> &[f64] {
        &self.0[self.n_attributes()..]
    }

    /// Recovers the two score vectors as `(mean - diff/2, mean + diff/2)`,
    /// i.e. per attribute the smaller and the larger score.
    pub fn reconstruct(&self) -> (Vec<f64>, Vec<f64>) {
        self.means()
            .iter()
            .zip(self.differences())
            .map(|(m, d)| (m - d / 2.0, m + d / 2.0))
            .unzip()
    }
}

pub fn pair_feature(r_i: &[f64], r_j: &[f64]) -> Result<PairFeature> {
    PairFeature::new(r_i, r_j)
}

/// Direction of `r_m^i - r_m^j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    More,
    Less,
    Equal,
}

impl Polarity {
    pub fn of(r_i: f64, r_j: f64) -> Self {
        if r_i > r_j {
            Polarity::More
        } else if r_i < r_j {
            Polarity::Less
        } else {
            Polarity::Equal
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::More => Polarity::Less,
            Polarity::Less => Polarity::More,
            Polarity::Equal => Polarity::Equal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::More => "more",
            Polarity::Less => "less",
            Polarity::Equal => "equal",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "more" => Ok(Polarity::More),
            "less" => Ok(Polarity::Less),
            "equal" => Ok(Polarity::Equal),
            _ => Err(Error::InvalidParameter(format!("unknown polarity `{s}`"))),
        }
    }
}

/// A full ranking of attributes for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProminencePrediction {
    /// `(attribute, confidence)`, highest confidence first, ties by id.
    pub ranked: Vec<(AttributeId, f64)>,
    /// Indexed by attribute id.
    pub polarity: Vec<Polarity>,
}

impl ProminencePrediction {
    /// Ranks attributes by descending `confidence`, ties by ascending id.
    pub fn from_confidences(confidence: Vec<f64>, r_u: &[f64], r_v: &[f64]) -> Self {
        let mut ranked: Vec<(AttributeId, f64)> = confidence.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self::from_ranked(ranked, r_u, r_v)
    }

    pub fn from_ranked(ranked: Vec<(AttributeId, f64)>, r_u: &[f64], r_v: &[f64]) -> Self {
        let polarity = r_u.iter().zip(r_v).map(|(a, b)| Polarity::of(*a, *b)).collect();
        Self { ranked, polarity }
    }

    pub fn top(&self) -> AttributeId {
        self.ranked[0].0
    }

    pub fn top_k(&self, k: usize) -> impl Iterator<Item = AttributeId> + '_ {
        self.ranked.iter().take(k).map(|(a, _)| *a)
    }

    pub fn confidence_of(&self, m: AttributeId) -> Option<f64> {
        self.ranked.iter().find(|(a, _)| *a == m).map(|(_, c)| *c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProminenceParams {
    pub svm: SvmParams,
    pub feature_map: FeatureMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProminenceModel {
    pub classifiers: Vec<CalibratedClassifier>,
    pub feature_map: FeatureMap,
    /// Training positives per attribute.
    pub positives: Vec<usize>,
    /// `(positive, negative)` misclassification costs per attribute.
    pub class_weights: Vec<(f64, f64)>,
    pub params: ProminenceParams,
}

/// Feature rows and top labels for the labeled pairs, in label order.
pub fn labeled_features(
    scores: &ScoreMatrix,
    labels: &[GroundTruthLabel],
    feature_map: FeatureMap,
) -> Result<(Vec<Vec<f64>>, Vec<AttributeId>)> {
    let m = scores.n_attributes();
    let mut x = Vec::with_capacity(labels.len());
    let mut y = Vec::with_capacity(labels.len());
    for l in labels {
        if l.i >= scores.len() || l.j >= scores.len() {
            return Err(Error::MissingScores(format!("image index {}", l.i.max(l.j))));
        }
        let top = l.top();
        if top >= m {
            return Err(Error::BadAttribute(top));
        }
        x.push(feature_map.apply(scores.row(l.i), scores.row(l.j))?);
        y.push(top);
    }
    Ok((x, y))
}

pub fn train_prominence(
    scores: &ScoreMatrix,
    labels: &[GroundTruthLabel],
    params: &ProminenceParams,
) -> Result<ProminenceModel> {
    let m = scores.n_attributes();
    if m < 2 {
        return Err(Error::InvalidParameter(
            "prominence needs at least two attributes".into(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (x, y) = labeled_features(scores, labels, params.feature_map)?;
    let classifiers = train_one_vs_rest(&x, &y, m, &params.svm)?;
    let n = y.len();
    let positives: Vec<usize> = (0..m).map(|c| y.iter().filter(|&&l| l == c).count()).collect();
    let class_weights = positives
        .iter()
        .map(|&p| {
            let c = params.svm.c;
            if !params.svm.balanced || p == 0 || p == n {
                (c, c)
            } else {
                (c * n as f64 / (2.0 * p as f64), c * n as f64 / (2.0 * (n - p) as f64))
            }
        })
        .collect();
    Ok(ProminenceModel {
        classifiers,
        feature_map: params.feature_map,
        positives,
        class_weights,
        params: *params,
    })
}

impl ProminenceModel {
    pub fn n_attributes(&self) -> usize {
        self.classifiers.len()
    }

    pub fn feature(&self, r_u: &[f64], r_v: &[f64]) -> Result<Vec<f64>> {
        if r_u.len() != self.n_attributes() {
            return Err(Error::LengthMismatch {
                expected: self.n_attributes(),
                found: r_u.len(),
            });
        }
        self.feature_map.apply(r_u, r_v)
    }

    pub fn margins(&self, r_u: &[f64], r_v: &[f64]) -> Result<Vec<f64>> {
        let phi = self.feature(r_u, r_v)?;
        Ok(self.classifiers.iter().map(|c| c.margin(&phi)).collect())
    }

    /// Calibrated confidence of every attribute, indexed by attribute id.
    pub fn confidences(&self, r_u: &[f64], r_v: &[f64]) -> Result<Vec<f64>> {
        let phi = self.feature(r_u, r_v)?;
        Ok(self.classifiers.iter().map(|c| c.probability(&phi)).collect())
    }

    /// Confidence of a single attribute.
    pub fn confidence(&self, m: AttributeId, r_u: &[f64], r_v: &[f64]) -> Result<f64> {
        let c = self.classifiers.get(m).ok_or(Error::BadAttribute(m))?;
        Ok(c.probability(&self.feature(r_u, r_v)?))
    }

    pub fn predict(&self, r_u: &[f64], r_v: &[f64]) -> Result<ProminencePrediction> {
        Ok(ProminencePrediction::from_confidences(
            self.confidences(r_u, r_v)?,
            r_u,
            r_v,
        ))
    }
}
