//! The unified, versioned JSON model file.
//!
//! ```json
//! {"version": 1,
//!  "vocab": ["sporty", ...],
//!  "ranker": {"w": [[...]], "mu": [...], "sigma": [...], "hyper": {...}},
//!  "prominence": {"v": [[...]], "b": [...], "platt_a": [...], "platt_b": [...],
//!                 "feature_map": {...}, ...},
//!  "baselines": {"widest": {...}, ...}}
//! ```
//!
//! When scores come from an external file instead of trained rankers, the
//! `ranker` section is replaced by `external_scores` holding only the
//! standardization.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineModel;
use crate::dataset::{AttributeId, AttributeVocabulary};
use crate::error::{Error, Result};
use crate::linear::{CalibratedClassifier, SvmParams};
use crate::predictor::{Method, TrainedMethod};
use crate::prominence::{FeatureMap, ProminenceModel, ProminenceParams};
use crate::ranker::{RankerModel, RankerParams};
use crate::scores::Standardization;

pub const MODEL_FILE_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationSection {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<AttributeId>,
}

impl From<&Standardization> for StandardizationSection {
    fn from(s: &Standardization) -> Self {
        Self {
            mu: s.mean.clone(),
            sigma: s.std.clone(),
            degenerate: s.degenerate.clone(),
        }
    }
}

impl From<&StandardizationSection> for Standardization {
    fn from(s: &StandardizationSection) -> Self {
        Self {
            mean: s.mu.clone(),
            std: s.sigma.clone(),
            degenerate: s.degenerate.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerSection {
    pub w: Vec<Vec<f64>>,
    #[serde(flatten)]
    pub standardization: StandardizationSection,
    pub hyper: RankerParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProminenceSection {
    pub v: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub platt_a: Vec<f64>,
    pub platt_b: Vec<f64>,
    pub feature_map: FeatureMap,
    pub positives: Vec<usize>,
    pub class_weights: Vec<(f64, f64)>,
    pub hyper: SvmParams,
}

/// Seed and configuration hash of the run that wrote a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub vocab: AttributeVocabulary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranker: Option<RankerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_scores: Option<StandardizationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prominence: Option<ProminenceSection>,
    /// Fitted baselines keyed by method name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub baselines: BTreeMap<String, BaselineModel>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidModel(msg.into())
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(invalid(format!("{what} has length {found}, expected {expected}")))
    }
}

impl ModelFile {
    pub fn new(vocab: AttributeVocabulary) -> Self {
        Self {
            version: MODEL_FILE_VERSION,
            provenance: None,
            vocab,
            ranker: None,
            external_scores: None,
            prominence: None,
            baselines: BTreeMap::new(),
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.vocab.len()
    }

    pub fn set_ranker(&mut self, model: &RankerModel) {
        self.ranker = Some(RankerSection {
            w: model.weights.clone(),
            standardization: (&model.standardization).into(),
            hyper: model.params,
        });
        self.external_scores = None;
    }

    pub fn set_external_scores(&mut self, standardization: &Standardization) {
        self.external_scores = Some(standardization.into());
        self.ranker = None;
    }

    pub fn set_prominence(&mut self, model: &ProminenceModel) {
        let c = &model.classifiers;
        self.prominence = Some(ProminenceSection {
            v: c.iter().map(|k| k.weights.clone()).collect(),
            b: c.iter().map(|k| k.bias).collect(),
            platt_a: c.iter().map(|k| k.platt_a).collect(),
            platt_b: c.iter().map(|k| k.platt_b).collect(),
            feature_map: model.feature_map,
            positives: model.positives.clone(),
            class_weights: model.class_weights.clone(),
            hyper: model.params.svm,
        });
    }

    pub fn set_baseline(&mut self, method: Method, model: BaselineModel) {
        self.baselines.insert(method.name().to_string(), model);
    }

    /// Stores a trained method in the matching section.
    pub fn set_method(&mut self, method: Method, trained: &TrainedMethod) {
        match trained {
            TrainedMethod::Model(m) => self.set_prominence(m),
            TrainedMethod::Baseline(b) => self.set_baseline(method, b.clone()),
        }
    }

    pub fn ranker(&self) -> Result<RankerModel> {
        let r = self.ranker.as_ref().ok_or(Error::MissingSection("ranker"))?;
        Ok(RankerModel {
            weights: r.w.clone(),
            standardization: (&r.standardization).into(),
            params: r.hyper,
        })
    }

    /// Standardization of whichever score source the file records.
    pub fn standardization(&self) -> Result<Standardization> {
        match (&self.ranker, &self.external_scores) {
            (Some(r), _) => Ok((&r.standardization).into()),
            (None, Some(s)) => Ok(s.into()),
            (None, None) => Err(Error::MissingSection("ranker")),
        }
    }

    pub fn prominence(&self) -> Result<ProminenceModel> {
        let p = self.prominence.as_ref().ok_or(Error::MissingSection("prominence"))?;
        let classifiers = (0..p.v.len())
            .map(|m| CalibratedClassifier {
                weights: p.v[m].clone(),
                bias: p.b[m],
                platt_a: p.platt_a[m],
                platt_b: p.platt_b[m],
            })
            .collect();
        Ok(ProminenceModel {
            classifiers,
            feature_map: p.feature_map,
            positives: p.positives.clone(),
            class_weights: p.class_weights.clone(),
            params: ProminenceParams {
                svm: p.hyper,
                feature_map: p.feature_map,
            },
        })
    }

    pub fn baseline(&self, method: Method) -> Result<&BaselineModel> {
        self.baselines
            .get(method.name())
            .ok_or_else(|| invalid(format!("no fitted `{method}` baseline")))
    }

    /// The predictor for `method`.
    pub fn method(&self, method: Method) -> Result<TrainedMethod> {
        match method {
            Method::Model => Ok(TrainedMethod::Model(self.prominence()?)),
            _ => Ok(TrainedMethod::Baseline(self.baseline(method)?.clone())),
        }
    }

    /// Checks that every section agrees with the vocabulary size.
    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        let m = self.n_attributes();
        if let Some(r) = &self.ranker {
            check_len("ranker.w", r.w.len(), m)?;
            if let Some(d) = r.w.first().map(Vec::len) {
                if r.w.iter().any(|w| w.len() != d) {
                    return Err(invalid("ranker weight vectors differ in length"));
                }
            }
            check_len("ranker.mu", r.standardization.mu.len(), m)?;
            check_len("ranker.sigma", r.standardization.sigma.len(), m)?;
        }
        if let Some(s) = &self.external_scores {
            check_len("external_scores.mu", s.mu.len(), m)?;
            check_len("external_scores.sigma", s.sigma.len(), m)?;
        }
        if let Some(p) = &self.prominence {
            check_len("prominence.v", p.v.len(), m)?;
            check_len("prominence.b", p.b.len(), m)?;
            check_len("prominence.platt_a", p.platt_a.len(), m)?;
            check_len("prominence.platt_b", p.platt_b.len(), m)?;
            check_len("prominence.positives", p.positives.len(), m)?;
            check_len("prominence.class_weights", p.class_weights.len(), m)?;
            let dim = p.feature_map.dim(m);
            for v in &p.v {
                check_len("prominence weight vector", v.len(), dim)?;
            }
        }
        for (name, b) in &self.baselines {
            let method: Method = name.parse()?;
            if method == Method::Model {
                return Err(invalid("`model` is not a baseline"));
            }
            let len = match b {
                BaselineModel::WidestTfidf { weights } => weights.len(),
                BaselineModel::SingleImage(s) => s.classifiers.len(),
                BaselineModel::PriorFrequency(p) => p.freq.len(),
            };
            check_len(&format!("baseline `{name}`"), len, m)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a model file, rejecting unknown versions before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .ok_or_else(|| invalid("missing `version`"))?
            .as_u64()
            .ok_or_else(|| invalid("`version` is not a non-negative integer"))?;
        if version != MODEL_FILE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let file: ModelFile = serde_json::from_value(value)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                file: path.display().to_string(),
                line: j.line(),
                msg: j.to_string(),
            },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{prior_frequency, PriorFrequency};
    use crate::dataset::GroundTruthLabel;
    use crate::prominence::train_prominence;
    use crate::scores::ScoreMatrix;

    fn trained() -> (ScoreMatrix, ProminenceModel) {
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                vec![
                    (k % 7) as f64 / 2.0 - 1.5,
                    (k * 5 % 11) as f64 / 3.0 - 1.6,
                    (k % 3) as f64 - 1.0,
                ]
            })
            .collect();
        let scores = ScoreMatrix::new((0..n).map(|k| format!("x{k}")).collect(), rows).unwrap();
        let mut labels = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n.min(i + 8) {
                let (a, b) = (scores.row(i), scores.row(j));
                let top = (0..3)
                    .max_by(|&p, &q| (a[p] - b[p]).abs().total_cmp(&(a[q] - b[q]).abs()))
                    .unwrap();
                labels.push(GroundTruthLabel::single(i, j, top));
            }
        }
        let model = train_prominence(&scores, &labels, &ProminenceParams::default()).unwrap();
        (scores, model)
    }

    fn file() -> (ScoreMatrix, ProminenceModel, ModelFile) {
        let (scores, model) = trained();
        let mut f = ModelFile::new(AttributeVocabulary::from_names(["a", "b", "c"]).unwrap());
        f.set_ranker(&RankerModel {
            weights: vec![vec![0.5, -1.0]; 3],
            standardization: Standardization {
                mean: vec![0.1, 0.2, 0.3],
                std: vec![1.0, 2.0, 3.0],
                degenerate: vec![],
            },
            params: RankerParams::default(),
        });
        f.set_prominence(&model);
        f.set_baseline(
            Method::Widest,
            BaselineModel::WidestTfidf {
                weights: vec![1.0, 0.5, 2.0],
            },
        );
        let labels = [GroundTruthLabel::single(0, 1, 2)];
        f.set_baseline(
            Method::Prior,
            BaselineModel::PriorFrequency(prior_frequency(&labels, 3, 4).unwrap()),
        );
        (scores, model, f)
    }

    #[test]
    fn round_trip_preserves_predictions_bit_for_bit() {
        let (scores, model, f) = file();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        f.save(&p).unwrap();
        let g = ModelFile::load(&p).unwrap();
        assert_eq!(f, g);
        let back = g.prominence().unwrap();
        assert_eq!(back, model);
        for i in 0..5 {
            for j in 5..10 {
                assert_eq!(
                    back.confidences(scores.row(i), scores.row(j)).unwrap(),
                    model.confidences(scores.row(i), scores.row(j)).unwrap()
                );
            }
        }
        assert_eq!(g.to_json().unwrap(), std::fs::read_to_string(&p).unwrap());
        assert_eq!(g.ranker().unwrap().weights, vec![vec![0.5, -1.0]; 3]);
        assert!(matches!(
            g.method(Method::Prior).unwrap(),
            TrainedMethod::Baseline(BaselineModel::PriorFrequency(PriorFrequency { seed: 4, .. }))
        ));
        assert!(g.method(Method::Single).is_err());
    }

    #[test]
    fn layout_uses_the_documented_keys() {
        let (_, _, f) = file();
        let v: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["vocab"], serde_json::json!(["a", "b", "c"]));
        for key in ["w", "mu", "sigma", "hyper"] {
            assert!(v["ranker"].get(key).is_some(), "ranker.{key}");
        }
        for key in ["v", "b", "platt_a", "platt_b", "feature_map"] {
            assert!(v["prominence"].get(key).is_some(), "prominence.{key}");
        }
        assert!(v["baselines"].get("widest").is_some());
        assert!(v.get("external_scores").is_none());
    }

    #[test]
    fn unknown_versions_fail_loudly() {
        let (_, _, f) = file();
        let mut v: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        v["version"] = 2.into();
        assert!(matches!(
            ModelFile::from_json(&v.to_string()),
            Err(Error::UnsupportedVersion(2))
        ));
        v.as_object_mut().unwrap().remove("version");
        assert!(matches!(
            ModelFile::from_json(&v.to_string()),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn inconsistent_sections_are_rejected() {
        let (_, _, f) = file();
        let mut v: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        v["prominence"]["b"].as_array_mut().unwrap().pop();
        assert!(matches!(
            ModelFile::from_json(&v.to_string()),
            Err(Error::InvalidModel(_))
        ));
        let mut v: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        v["baselines"]["model"] = v["baselines"]["widest"].clone();
        assert!(ModelFile::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn external_scores_replace_the_ranker() {
        let (_, _, mut f) = file();
        let s = Standardization {
            mean: vec![0.0; 3],
            std: vec![2.0; 3],
            degenerate: vec![1],
        };
        f.set_external_scores(&s);
        assert!(matches!(f.ranker(), Err(Error::MissingSection("ranker"))));
        assert_eq!(f.standardization().unwrap(), s);
        let g = ModelFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(g.standardization().unwrap(), s);
        let empty = ModelFile::new(f.vocab.clone());
        assert!(matches!(empty.prominence(), Err(Error::MissingSection("prominence"))));
    }
}
