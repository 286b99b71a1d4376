//! Binary linear SVMs with sigmoid calibration, and one-vs-rest training.
//!
//! The SVM solves the L1-loss dual
//!
//! ```text
//! min_a 1/2 a'Qa - sum a_i,  0 <= a_i <= C_i,  Q_ij = y_i y_j x_i.x_j
//! ```
//!
//! by coordinate descent (Hsieh et al., 2008) with the bias learned as the
//! weight of a constant feature. Margins are mapped to probabilities by
//! `P = 1 / (1 + exp(-(A f + B)))`, with `A, B` fitted by Newton's method on
//! the smoothed-target log loss (Lin, Lin and Weng, 2007).

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Confidence assigned to a class with no positive training example.
pub const EMPTY_CLASS_CONFIDENCE: f64 = 1e-6;

/// Calibrated probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Reweight classes so both contribute equally to the loss.
    pub balanced: bool,
    pub max_iter: usize,
    /// Stopping tolerance on the projected-gradient spread.
    pub tol: f64,
    /// Fraction of each class held out to fit the sigmoid.
    pub calibration_fraction: f64,
    /// Below this many positives the sigmoid is fitted on the training set.
    pub min_calibration_positives: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            balanced: true,
            max_iter: 1000,
            tol: 1e-3,
            calibration_fraction: 0.2,
            min_calibration_positives: 10,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "classifier needs C > 0, tol > 0 and max_iter >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.calibration_fraction) {
            return Err(Error::InvalidParameter(
                "calibration fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains `w, b` on `x` with labels `y` (true = positive) and per-sample
/// box constraints `cost`. Returns `(w, b)`.
pub fn train_svm(x: &[&[f64]], y: &[bool], cost: &[f64], params: &SvmParams, r: &mut Rng) -> (Vec<f64>, f64) {
    let n = x.len();
    let d = x.first().map_or(0, |v| v.len());
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let sign: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let qii: Vec<f64> = x.iter().map(|v| dot(v, v) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Variables stuck at a bound with a gradient pushing further out are
    // temporarily removed from the sweep; all are restored before stopping.
    let mut active = n;
    let (mut old_max, mut old_min) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..params.max_iter {
        order[..active].shuffle(r);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut s = 0;
        while s < active {
            let i = order[s];
            let g = sign[i] * (dot(&w, x[i]) + b) - 1.0;
            let at_lower = alpha[i] == 0.0;
            let at_upper = alpha[i] == cost[i];
            if (at_lower && g > old_max) || (at_upper && g < old_min) {
                active -= 1;
                order.swap(s, active);
                continue;
            }
            let pg = if at_lower {
                g.min(0.0)
            } else if at_upper {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, cost[i]);
                let delta = (alpha[i] - old) * sign[i];
                w.iter_mut().zip(x[i]).for_each(|(wv, xv)| *wv += delta * xv);
                b += delta;
            }
            s += 1;
        }
        if pg_max - pg_min <= params.tol {
            if active == n {
                break;
            }
            active = n;
            old_max = f64::INFINITY;
            old_min = f64::NEG_INFINITY;
            continue;
        }
        old_max = if pg_max <= 0.0 { f64::INFINITY } else { pg_max };
        old_min = if pg_min >= 0.0 { f64::NEG_INFINITY } else { pg_min };
    }
    (w, b)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Smoothed regression targets `(t+, t-)` for `n_pos` positives and `n_neg`
/// negatives.
pub fn platt_targets(n_pos: usize, n_neg: usize) -> (f64, f64) {
    ((n_pos as f64 + 1.0) / (n_pos as f64 + 2.0), 1.0 / (n_neg as f64 + 2.0))
}

/// Fits `(A, B)` so that `sigmoid(A f + B)` maximizes the likelihood of the
/// smoothed targets.
pub fn fit_platt(margins: &[f64], labels: &[bool]) -> (f64, f64) {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    let (hi, lo) = platt_targets(n_pos, n_neg);
    let t: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
    let loss = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = a * f + b;
                softplus(z) - ti * z
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = logit((n_pos as f64 + 1.0) / (n_neg as f64 + n_pos as f64 + 2.0));
    let mut current = loss(a, b);
    for _ in 0..100 {
        let (mut g1, mut g2, mut h11, mut h22, mut h21) = (0.0, 0.0, 1e-12, 1e-12, 0.0);
        for (&f, &ti) in margins.iter().zip(&t) {
            let p = sigmoid(a * f + b);
            let d1 = p - ti;
            let d2 = p * (1.0 - p);
            g1 += f * d1;
            g2 += d1;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
        }
        if g1.abs() < 1e-9 && g2.abs() < 1e-9 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut improved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let next = loss(na, nb);
            if next < current + 1e-4 * step * gd {
                a = na;
                b = nb;
                current = next;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

/// A linear margin `v.x + b` with sigmoid calibration `(A, B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub platt_a: f64,
    pub platt_b: f64,
}

impl CalibratedClassifier {
    /// Ignores the input and always returns probability `p`.
    pub fn constant(dim: usize, p: f64) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            platt_a: 0.0,
            platt_b: logit(p),
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn probability_of_margin(&self, f: f64) -> f64 {
        sigmoid(self.platt_a * f + self.platt_b).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        self.probability_of_margin(self.margin(x))
    }
}

fn class_costs(y: &[bool], params: &SvmParams) -> Vec<f64> {
    let n = y.len() as f64;
    let n_pos = y.iter().filter(|&&l| l).count() as f64;
    let n_neg = n - n_pos;
    y.iter()
        .map(|&l| match (params.balanced, l) {
            (false, _) => params.c,
            (true, true) => params.c * n / (2.0 * n_pos),
            (true, false) => params.c * n / (2.0 * n_neg),
        })
        .collect()
}

fn fit_on(x: &[&[f64]], y: &[bool], params: &SvmParams, r: &mut Rng) -> (Vec<f64>, f64) {
    let cost = class_costs(y, params);
    train_svm(x, y, &cost, params, r)
}

/// Trains and calibrates one binary classifier. Degenerate label sets give a
/// constant classifier.
pub fn train_calibrated(x: &[&[f64]], y: &[bool], params: &SvmParams, stream: u64) -> CalibratedClassifier {
    let dim = x.first().map_or(0, |v| v.len());
    let n_pos = y.iter().filter(|&&l| l).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 {
        log::warn!("class {stream} has no positive examples; its confidence is fixed to {EMPTY_CLASS_CONFIDENCE}");
        return CalibratedClassifier::constant(dim, EMPTY_CLASS_CONFIDENCE);
    }
    if n_neg == 0 {
        log::warn!("class {stream} has no negative examples; its confidence is fixed near 1");
        return CalibratedClassifier::constant(dim, 1.0 - EMPTY_CLASS_CONFIDENCE);
    }
    let mut r = rng::stream(params.seed, &[0x5f3, stream]);
    let holdout = if n_pos >= params.min_calibration_positives && params.calibration_fraction > 0.0 {
        stratified_holdout(y, params.calibration_fraction, &mut r)
    } else {
        vec![false; y.len()]
    };
    let split = |keep: bool| -> (Vec<&[f64]>, Vec<bool>) {
        x.iter()
            .zip(y)
            .zip(&holdout)
            .filter(|(_, &h)| h == keep)
            .map(|((v, l), _)| (*v, *l))
            .unzip()
    };
    // With a holdout, the sigmoid is fitted on margins of a classifier that
    // never saw those pairs; the returned classifier is refitted on all pairs.
    let (cal_x, cal_y, weights, bias) = if holdout.iter().any(|&h| h) {
        let (fit_x, fit_y) = split(false);
        let (w, b) = fit_on(&fit_x, &fit_y, params, &mut r);
        let (cal_x, cal_y) = split(true);
        let cal_m: Vec<f64> = cal_x.iter().map(|v| dot(&w, v) + b).collect();
        let (w_all, b_all) = fit_on(x, y, params, &mut r);
        (cal_m, cal_y, w_all, b_all)
    } else {
        let (w, b) = fit_on(x, y, params, &mut r);
        let cal_m = x.iter().map(|v| dot(&w, v) + b).collect();
        (cal_m, y.to_vec(), w, b)
    };
    let (platt_a, platt_b) = fit_platt(&cal_x, &cal_y);
    CalibratedClassifier {
        weights,
        bias,
        platt_a,
        platt_b,
    }
}

/// Marks `fraction` of each class (rounded, at least one when the class has
/// two or more members) as held out.
fn stratified_holdout(y: &[bool], fraction: f64, r: &mut Rng) -> Vec<bool> {
    let mut out = vec![false; y.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&k| y[k] == class).collect();
        if idx.len() < 2 {
            continue;
        }
        idx.shuffle(r);
        let take = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        for &k in &idx[..take] {
            out[k] = true;
        }
    }
    out
}

/// One calibrated classifier per class, class `c` against the rest.
pub fn train_one_vs_rest(
    x: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    params: &SvmParams,
) -> Result<Vec<CalibratedClassifier>> {
    params.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if x.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::BadAttribute(bad));
    }
    let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    Ok((0..n_classes)
        .into_par_iter()
        .map(|c| {
            let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            train_calibrated(&rows, &y, params, c as u64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..40 {
            let t = k as f64 / 40.0;
            x.push(vec![1.0 + t, 0.5 - t]);
            y.push(true);
            x.push(vec![-1.0 - t, -0.5 + t]);
            y.push(false);
        }
        (x, y)
    }

    #[test]
    fn separates_linearly_separable_blobs() {
        let (x, y) = blobs();
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let params = SvmParams::default();
        let cost = vec![10.0; x.len()];
        let (w, b) = train_svm(&rows, &y, &cost, &params, &mut rng::stream(0, &[]));
        for (v, &l) in x.iter().zip(&y) {
            let f = dot(&w, v) + b;
            assert_eq!(f > 0.0, l);
        }
    }

    #[test]
    fn smoothed_targets() {
        let (hi, lo) = platt_targets(3, 7);
        assert!((hi - 0.8).abs() < 1e-15);
        assert!((lo - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn platt_fit_is_a_stationary_point() {
        let margins: Vec<f64> = (0..50).map(|k| (k as f64 - 25.0) / 10.0).collect();
        let labels: Vec<bool> = margins
            .iter()
            .enumerate()
            .map(|(k, &f)| f > 0.3 || k % 7 == 0)
            .collect();
        let (a, b) = fit_platt(&margins, &labels);
        assert!(a > 0.0);
        let n_pos = labels.iter().filter(|&&l| l).count();
        let (hi, lo) = platt_targets(n_pos, labels.len() - n_pos);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &l) in margins.iter().zip(&labels) {
            let d = sigmoid(a * f + b) - if l { hi } else { lo };
            g1 += d * f;
            g2 += d;
        }
        assert!(g1.abs() < 1e-6 && g2.abs() < 1e-6, "{g1} {g2}");
    }

    #[test]
    fn sigmoid_midpoint_and_extremes() {
        let c = CalibratedClassifier {
            weights: vec![0.0],
            bias: 0.0,
            platt_a: -1.0,
            platt_b: 0.0,
        };
        assert_eq!(c.probability(&[3.0]), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        let p = CalibratedClassifier::constant(1, 0.0).probability_of_margin(0.0);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn calibrated_classifier_is_monotone_and_ordered() {
        let (x, y) = blobs();
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let c = train_calibrated(&rows, &y, &SvmParams::default(), 0);
        assert!(c.platt_a > 0.0);
        assert!(c.probability(&[2.0, 0.0]) > 0.5);
        assert!(c.probability(&[-2.0, 0.0]) < 0.5);
        let mut prev = 0.0;
        for k in -20..20 {
            let p = c.probability_of_margin(k as f64 / 4.0);
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn missing_positives_give_constant_confidence() {
        let x = [vec![1.0], vec![2.0]];
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let c = train_calibrated(&rows, &[false, false], &SvmParams::default(), 0);
        assert!((c.probability(&[5.0]) - EMPTY_CLASS_CONFIDENCE).abs() < 1e-15);
    }

    #[test]
    fn holdout_is_stratified() {
        let y: Vec<bool> = (0..100).map(|k| k < 30).collect();
        let h = stratified_holdout(&y, 0.2, &mut rng::stream(1, &[]));
        let pos = (0..100).filter(|&k| h[k] && y[k]).count();
        let neg = (0..100).filter(|&k| h[k] && !y[k]).count();
        assert_eq!((pos, neg), (6, 14));
    }

    #[test]
    fn one_vs_rest_is_deterministic_and_validates_labels() {
        let x: Vec<Vec<f64>> = (0..60).map(|k| vec![(k % 3) as f64, (k / 3) as f64 / 20.0]).collect();
        let labels: Vec<usize> = (0..60).map(|k| k % 3).collect();
        let p = SvmParams::default();
        let a = train_one_vs_rest(&x, &labels, 3, &p).unwrap();
        let b = train_one_vs_rest(&x, &labels, 3, &p).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            train_one_vs_rest(&x, &vec![5; 60], 3, &p),
            Err(Error::BadAttribute(5))
        ));
    }
}
