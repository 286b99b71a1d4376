//! Linear relative-attribute rankers.
//!
//! For each attribute `m` the ranker learns `w_m` minimizing
//!
//! ```text
//! 1/2 |w|^2 + C * ( sum_{(i,j) ordered} max(0, 1 - w.(x_i - x_j))
//!                 + sum_{(i,j) similar} max(0, |w.(x_i - x_j)| - eps) )
//! ```
//!
//! with stochastic projected subgradient steps of size `1/(lambda t)`,
//! `lambda = 1/(C n)`. The returned weights are the mean iterate of the last
//! epoch. Raw scores are then standardized over the training images.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageRecord, ImageSet};
use crate::error::{Error, Result};
use crate::rng;
use crate::scores::{ScoreMatrix, Standardization};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerParams {
    pub c: f64,
    pub epochs: usize,
    /// Dead zone of the similar-pair hinge.
    pub similar_margin: f64,
    pub seed: u64,
}

impl Default for RankerParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 200,
            similar_margin: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    /// One weight vector of length `D` per attribute.
    pub weights: Vec<Vec<f64>>,
    pub standardization: Standardization,
    pub params: RankerParams,
}

enum Constraint {
    Ordered,
    Similar,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn fit_attribute(constraints: &[(Vec<f64>, Constraint)], dim: usize, params: &RankerParams, stream: u64) -> Vec<f64> {
    let n = constraints.len();
    let lambda = 1.0 / (params.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut rng = rng::stream(params.seed, &[0x7a4c, stream]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; dim];
    let mut avg = vec![0.0; dim];
    let mut t = 0u64;
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let (d, kind) = &constraints[k];
            let g = dot(&w, d);
            let shrink = 1.0 - 1.0 / t as f64;
            w.iter_mut().for_each(|v| *v *= shrink);
            let step = match kind {
                Constraint::Ordered if g < 1.0 => eta,
                Constraint::Similar if g.abs() > params.similar_margin => -eta * g.signum(),
                _ => 0.0,
            };
            if step != 0.0 {
                w.iter_mut().zip(d).for_each(|(v, x)| *v += step * x);
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
            if epoch + 1 == params.epochs {
                avg.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
            }
        }
    }
    avg.iter_mut().for_each(|a| *a /= n as f64);
    avg
}

/// Trains one ranker per attribute on the pairs whose images both lie in
/// `train`, then fits the standardization on the raw scores of `train`.
pub fn train_ranker(dataset: &Dataset, params: &RankerParams, train: &ImageSet) -> Result<RankerModel> {
    if !(params.c > 0.0) || params.epochs == 0 {
        return Err(Error::InvalidParameter(
            "ranker needs C > 0 and at least one epoch".into(),
        ));
    }
    let dim = dataset.dim();
    let images = &dataset.images;
    let weights = dataset
        .pairs
        .par_iter()
        .map(|set| {
            let keep = |&&(i, j): &&(usize, usize)| train.contains(i) && train.contains(j);
            let mut constraints: Vec<(Vec<f64>, Constraint)> = set
                .ordered
                .iter()
                .filter(keep)
                .map(|&(i, j)| (diff(&images[i].descriptor, &images[j].descriptor), Constraint::Ordered))
                .collect();
            if constraints.is_empty() {
                return Err(Error::NoOrderedPairs(dataset.vocab.name(set.attribute).to_string()));
            }
            constraints.extend(
                set.similar
                    .iter()
                    .filter(keep)
                    .map(|&(i, j)| (diff(&images[i].descriptor, &images[j].descriptor), Constraint::Similar)),
            );
            Ok(fit_attribute(&constraints, dim, params, set.attribute as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    let raw: Vec<Vec<f64>> = train
        .iter()
        .map(|k| raw_scores(&weights, &images[k].descriptor))
        .collect();
    let standardization = Standardization::fit(raw.iter().map(Vec::as_slice), weights.len());
    Ok(RankerModel {
        weights,
        standardization,
        params: *params,
    })
}

fn raw_scores(weights: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    weights.iter().map(|w| dot(w, x)).collect()
}

impl RankerModel {
    pub fn n_attributes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn raw_scores(&self, descriptor: &[f64]) -> Result<Vec<f64>> {
        if descriptor.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: descriptor.len(),
            });
        }
        Ok(raw_scores(&self.weights, descriptor))
    }

    /// Standardized scores `r_m = (w_m.x - mu_m) / sigma_m`.
    pub fn score(&self, descriptor: &[f64]) -> Result<Vec<f64>> {
        Ok(self.standardization.apply(&self.raw_scores(descriptor)?))
    }
}

pub fn score_all(model: &RankerModel, images: &[ImageRecord]) -> Result<ScoreMatrix> {
    let rows = images
        .iter()
        .map(|img| model.score(&img.descriptor))
        .collect::<Result<Vec<_>>>()?;
    ScoreMatrix::new(images.iter().map(|i| i.id.clone()).collect(), rows)
}

/// Fraction of `pairs` with `r_i > r_j` on attribute `m`.
pub fn pair_satisfaction(scores: &ScoreMatrix, m: usize, pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let ok = pairs
        .iter()
        .filter(|&&(i, j)| scores.row(i)[m] > scores.row(j)[m])
        .count();
    ok as f64 / pairs.len() as f64
}
