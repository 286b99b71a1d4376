//! Top-k accuracy, description presence and cross-validated comparison.
//!
//! For a pair whose votes name `c` distinct attributes, the ground truth at
//! `k` is the `min(k, c)` most-voted attributes. A prediction is correct at
//! `k` when its top attribute lies in that set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, Dataset, GroundTruthLabel};
use crate::error::{Error, Result};
use crate::predictor::{train_method, Method, MethodParams, PairPredictor, ScoredImage};
use crate::prominence::ProminencePrediction;
use crate::ranker::{score_all, train_ranker, RankerParams};
use crate::scores::ScoreMatrix;

pub const DEFAULT_K_MAX: usize = 5;

/// A prediction for the dataset pair `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub i: usize,
    pub j: usize,
    pub prediction: ProminencePrediction,
}

fn check_alignment(predictions: &[PairPrediction], labels: &[GroundTruthLabel]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    match predictions.iter().zip(labels).position(|(p, l)| !l.same_pair(p.i, p.j)) {
        Some(k) => Err(Error::PairMismatch(k)),
        None => Ok(()),
    }
}

fn truth_set(label: &GroundTruthLabel, k: usize) -> &[usize] {
    &label.ranked[..k.min(label.ranked.len())]
}

pub fn topk_accuracy(predictions: &[PairPrediction], labels: &[GroundTruthLabel], k: usize) -> Result<f64> {
    check_alignment(predictions, labels)?;
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| truth_set(l, k).contains(&p.prediction.top()))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean fraction of the `min(k, c)` ground-truth attributes found among the
/// top `k` predicted ones.
pub fn description_presence(predictions: &[PairPrediction], labels: &[GroundTruthLabel], k: usize) -> Result<f64> {
    check_alignment(predictions, labels)?;
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let truth = truth_set(l, k);
            let hits = p.prediction.top_k(k).filter(|a| truth.contains(a)).count();
            hits as f64 / truth.len() as f64
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Per-method results of a cross-validation run. Index `k - 1` holds the
/// value at `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub method: String,
    pub n_folds: usize,
    pub accuracy: Vec<f64>,
    pub per_fold: Vec<Vec<f64>>,
    pub presence: Vec<f64>,
    pub per_fold_presence: Vec<Vec<f64>>,
    /// Test pairs per fold.
    pub test_pairs: Vec<usize>,
}

impl AccuracyCurve {
    pub fn at(&self, k: usize) -> f64 {
        self.accuracy[k - 1]
    }

    pub fn presence_at(&self, k: usize) -> f64 {
        self.presence[k - 1]
    }
}

pub type TrainFn<'a> = dyn Fn(&ScoreMatrix, &[GroundTruthLabel]) -> Result<Box<dyn PairPredictor + 'a>> + Sync + 'a;

/// A named way of fitting a predictor from training scores and labels.
pub struct Trainer<'a> {
    pub name: String,
    pub train: Box<TrainFn<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new<F>(name: impl Into<String>, train: F) -> Self
    where
        F: Fn(&ScoreMatrix, &[GroundTruthLabel]) -> Result<Box<dyn PairPredictor + 'a>> + Sync + 'a,
    {
        Self {
            name: name.into(),
            train: Box::new(train),
        }
    }

    pub fn method(method: Method, params: MethodParams) -> Self {
        Self::new(method.name(), move |s: &ScoreMatrix, l: &[GroundTruthLabel]| {
            Ok(Box::new(train_method(method, s, l, &params)?) as Box<dyn PairPredictor>)
        })
    }
}

/// Where per-fold attribute scores come from.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    /// Train a ranker on each fold's training images.
    Ranker(RankerParams),
    /// Use fixed scores for every fold, aligned with the dataset images.
    Fixed(ScoreMatrix),
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub n_folds: usize,
    pub seed: u64,
    pub k_max: usize,
    pub scores: ScoreSource,
    /// Labels to evaluate against, aligned with the vote table (defaults to
    /// the vote-derived labels). Training always uses the votes.
    pub eval_labels: Option<Vec<GroundTruthLabel>>,
}

impl Default for CrossValidation {
    fn default() -> Self {
        Self {
            n_folds: 10,
            seed: 0,
            k_max: DEFAULT_K_MAX,
            scores: ScoreSource::Ranker(RankerParams::default()),
            eval_labels: None,
        }
    }
}

struct FoldResult {
    test_pairs: usize,
    accuracy: Vec<Vec<f64>>,
    presence: Vec<Vec<f64>>,
}

/// Predictions of `predictor` for every labeled pair.
pub fn predict_labeled(
    predictor: &dyn PairPredictor,
    scores: &ScoreMatrix,
    labels: &[GroundTruthLabel],
) -> Result<Vec<PairPrediction>> {
    labels
        .iter()
        .map(|l| {
            Ok(PairPrediction {
                i: l.i,
                j: l.j,
                prediction: predictor.predict_pair(ScoredImage::of(scores, l.i), ScoredImage::of(scores, l.j))?,
            })
        })
        .collect()
}

pub fn cross_validate(
    dataset: &Dataset,
    trainers: &[Trainer<'_>],
    config: &CrossValidation,
) -> Result<Vec<AccuracyCurve>> {
    if config.k_max < 1 {
        return Err(Error::InvalidParameter("k_max must be at least 1".into()));
    }
    let train_labels = dataset.ground_truth()?;
    let eval_labels = match &config.eval_labels {
        Some(l) => {
            if l.len() != train_labels.len() {
                return Err(Error::LengthMismatch {
                    expected: train_labels.len(),
                    found: l.len(),
                });
            }
            if let Some(k) = l.iter().zip(&train_labels).position(|(a, b)| !a.same_pair(b.i, b.j)) {
                return Err(Error::PairMismatch(k));
            }
            l.clone()
        }
        None => train_labels.clone(),
    };
    if let ScoreSource::Fixed(s) = &config.scores {
        if s.len() != dataset.images.len() {
            return Err(Error::LengthMismatch {
                expected: dataset.images.len(),
                found: s.len(),
            });
        }
    }
    let folds = make_folds(dataset.images.len(), config.n_folds, config.seed)?;
    let results = (0..config.n_folds)
        .into_par_iter()
        .map(|f| -> Result<FoldResult> {
            let test: Vec<GroundTruthLabel> = eval_labels
                .iter()
                .filter(|l| folds.is_test_pair(f, l.i, l.j))
                .cloned()
                .collect();
            if test.is_empty() {
                return Err(Error::EmptyFold(f));
            }
            let train: Vec<GroundTruthLabel> = train_labels
                .iter()
                .filter(|l| folds.is_train_pair(f, l.i, l.j))
                .cloned()
                .collect();
            let fold_scores;
            let scores = match &config.scores {
                ScoreSource::Ranker(params) => {
                    let model = train_ranker(dataset, params, &folds.train_images(f))?;
                    fold_scores = score_all(&model, &dataset.images)?;
                    &fold_scores
                }
                ScoreSource::Fixed(s) => s,
            };
            let mut accuracy = Vec::with_capacity(trainers.len());
            let mut presence = Vec::with_capacity(trainers.len());
            for t in trainers {
                let predictor = (t.train)(scores, &train)?;
                let preds = predict_labeled(predictor.as_ref(), scores, &test)?;
                accuracy.push(
                    (1..=config.k_max)
                        .map(|k| topk_accuracy(&preds, &test, k))
                        .collect::<Result<Vec<_>>>()?,
                );
                presence.push(
                    (1..=config.k_max)
                        .map(|k| description_presence(&preds, &test, k))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Ok(FoldResult {
                test_pairs: test.len(),
                accuracy,
                presence,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean = |rows: &[Vec<f64>]| -> Vec<f64> {
        (0..config.k_max)
            .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
            .collect()
    };
    Ok(trainers
        .iter()
        .enumerate()
        .map(|(t, trainer)| {
            let per_fold: Vec<Vec<f64>> = results.iter().map(|r| r.accuracy[t].clone()).collect();
            let per_fold_presence: Vec<Vec<f64>> = results.iter().map(|r| r.presence[t].clone()).collect();
            AccuracyCurve {
                method: trainer.name.clone(),
                n_folds: config.n_folds,
                accuracy: mean(&per_fold),
                presence: mean(&per_fold_presence),
                per_fold,
                per_fold_presence,
                test_pairs: results.iter().map(|r| r.test_pairs).collect(),
            }
        })
        .collect())
}

/// Writes `method,k,fold,accuracy` rows, per fold and then `mean`.
pub fn write_curves_csv(path: &Path, curves: &[AccuracyCurve]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(["method", "k", "fold", "accuracy"])?;
    for c in curves {
        for k in 1..=c.accuracy.len() {
            for (fold, values) in c.per_fold.iter().enumerate() {
                w.write_record([
                    c.method.clone(),
                    k.to_string(),
                    fold.to_string(),
                    values[k - 1].to_string(),
                ])?;
            }
            w.write_record([c.method.clone(), k.to_string(), "mean".into(), c.at(k).to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Whitespace-separated table with one row per `k` and one column per
/// method, for plotting.
pub fn write_gnuplot(path: &Path, curves: &[AccuracyCurve]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    write!(w, "# k").map_err(io)?;
    for c in curves {
        write!(w, " {}", c.method).map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    let k_max = curves.first().map_or(0, |c| c.accuracy.len());
    for k in 1..=k_max {
        write!(w, "{k}").map_err(io)?;
        for c in curves {
            write!(w, " {}", c.at(k)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use std::collections::BTreeMap;

    fn label(votes: &[(usize, u32)]) -> GroundTruthLabel {
        let v: BTreeMap<usize, u32> = votes.iter().copied().collect();
        GroundTruthLabel {
            i: 0,
            j: 1,
            ranked: crate::dataset::rank_votes(&v),
        }
    }

    fn guess(top: &[usize], m: usize) -> PairPrediction {
        let mut conf = vec![0.0; m];
        for (rank, &a) in top.iter().enumerate() {
            conf[a] = 1.0 - rank as f64 * 0.1;
        }
        PairPrediction {
            i: 0,
            j: 1,
            prediction: ProminencePrediction::from_confidences(conf, &vec![0.0; m], &vec![0.0; m]),
        }
    }

    #[test]
    fn accuracy_worked_examples() {
        let l = label(&[(1, 4), (3, 2), (2, 1)]);
        let p = guess(&[3], 6);
        assert_eq!(
            topk_accuracy(std::slice::from_ref(&p), std::slice::from_ref(&l), 1).unwrap(),
            0.0
        );
        assert_eq!(topk_accuracy(&[p], &[l], 2).unwrap(), 1.0);
        let l = label(&[(4, 7)]);
        assert_eq!(truth_set(&l, 3), &[4]);
    }

    #[test]
    fn presence_worked_examples() {
        let l = label(&[(1, 3), (4, 2), (5, 2)]);
        assert_eq!(
            description_presence(&[guess(&[1, 4, 5], 6)], std::slice::from_ref(&l), 3).unwrap(),
            1.0
        );
        assert_eq!(
            description_presence(&[guess(&[0, 2, 3], 6)], std::slice::from_ref(&l), 3).unwrap(),
            0.0
        );
        let third = description_presence(&[guess(&[1, 2, 3], 6)], std::slice::from_ref(&l), 3).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
        assert!(description_presence(&[guess(&[1], 6)], &[l], 0).is_err());
    }

    #[test]
    fn misaligned_pairs_are_rejected() {
        let mut p = guess(&[0], 2);
        p.j = 5;
        assert!(matches!(
            topk_accuracy(&[p], &[label(&[(0, 7)])], 1),
            Err(Error::PairMismatch(0))
        ));
    }

    fn small_spec() -> SyntheticSpec {
        let mut s = SyntheticSpec::mixed(4);
        s.n_images = 120;
        s.n_ordered_pairs = 800;
        s.n_similar_pairs = 100;
        s.n_vote_pairs = 1500;
        s
    }

    #[test]
    fn oracle_predictor_scores_perfectly() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let truth = data.dataset.ground_truth().unwrap();
        let ids = data.dataset.ids();
        let lookup: BTreeMap<(String, String), usize> = truth
            .iter()
            .map(|l| ((ids[l.i].clone(), ids[l.j].clone()), l.top()))
            .collect();
        struct Oracle(BTreeMap<(String, String), usize>);
        impl PairPredictor for Oracle {
            fn predict_pair(&self, u: ScoredImage<'_>, v: ScoredImage<'_>) -> Result<ProminencePrediction> {
                let key = (u.id.to_string(), v.id.to_string());
                let top = self.0[&key];
                let mut conf = vec![0.0; u.scores.len()];
                conf[top] = 1.0;
                Ok(ProminencePrediction::from_confidences(conf, u.scores, v.scores))
            }
        }
        let trainer = Trainer::new("oracle", |_: &ScoreMatrix, _: &[GroundTruthLabel]| {
            Ok(Box::new(Oracle(lookup.clone())) as Box<dyn PairPredictor>)
        });
        let config = CrossValidation {
            n_folds: 3,
            ..Default::default()
        };
        let curves = cross_validate(&data.dataset, &[trainer], &config).unwrap();
        assert!(curves[0].accuracy.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn cross_validation_is_reproducible_and_monotone() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let trainers: Vec<Trainer> = [Method::Model, Method::Widest, Method::Prior]
            .into_iter()
            .map(|m| Trainer::method(m, MethodParams::default()))
            .collect();
        let config = CrossValidation {
            n_folds: 3,
            seed: 4,
            ..Default::default()
        };
        let a = cross_validate(&data.dataset, &trainers, &config).unwrap();
        let b = cross_validate(&data.dataset, &trainers, &config).unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert!(c.accuracy.windows(2).all(|w| w[0] <= w[1]), "{}", c.method);
            for fold in &c.per_fold {
                assert!(fold.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn too_many_folds_leave_a_fold_empty() {
        let mut spec = small_spec();
        spec.n_vote_pairs = 20;
        let data = generate_synthetic(&spec).unwrap();
        let config = CrossValidation {
            n_folds: 60,
            ..Default::default()
        };
        let trainers = [Trainer::method(Method::WidestPlain, MethodParams::default())];
        assert!(matches!(
            cross_validate(&data.dataset, &trainers, &config),
            Err(Error::EmptyFold(_))
        ));
    }

    #[test]
    fn output_files() {
        let curve = AccuracyCurve {
            method: "model".into(),
            n_folds: 2,
            accuracy: vec![0.5, 0.75],
            per_fold: vec![vec![0.25, 0.5], vec![0.75, 1.0]],
            presence: vec![0.5, 0.6],
            per_fold_presence: vec![vec![0.5, 0.6]; 2],
            test_pairs: vec![4, 4],
        };
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("curves.csv");
        write_curves_csv(&csv_path, std::slice::from_ref(&curve)).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("method,k,fold,accuracy\nmodel,1,0,0.25\nmodel,1,1,0.75\nmodel,1,mean,0.5\n"));
        let plot = dir.path().join("curves.dat");
        write_gnuplot(&plot, &[curve]).unwrap();
        assert_eq!(std::fs::read_to_string(&plot).unwrap(), "# k model\n1 0.5\n2 0.75\n");
    }
}
