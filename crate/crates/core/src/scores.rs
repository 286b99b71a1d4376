//! Standardized relative-attribute scores and the external score file format.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::AttributeId;
use crate::error::{Error, Result};

/// Floor applied to per-attribute standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-image vectors of standardized attribute scores `r^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::LengthMismatch {
                expected: ids.len(),
                found: rows.len(),
            });
        }
        let m = rows.first().map_or(0, Vec::len);
        let mut index = HashMap::with_capacity(ids.len());
        for (k, (id, row)) in ids.iter().zip(&rows).enumerate() {
            if row.len() != m {
                return Err(Error::LengthMismatch {
                    expected: m,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite score for image `{id}`")));
            }
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate image id `{id}`")));
            }
        }
        Ok(Self { ids, rows, index })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, k: usize) -> &str {
        &self.ids[k]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|k| self.rows[k].as_slice())
    }
}

/// Per-attribute centering and scaling of raw ranker outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Attributes whose variance fell below [`STD_FLOOR`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<AttributeId>,
}

impl Standardization {
    /// Population mean and standard deviation of each column of `raw`.
    pub fn fit<'a, I>(raw: I, m: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut mean = vec![0.0; m];
        let mut n = 0usize;
        for row in raw.clone() {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; m];
        for row in raw {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let mut degenerate = Vec::new();
        let std = var
            .into_iter()
            .enumerate()
            .map(|(a, v)| {
                let s = (v / n).sqrt();
                if s < STD_FLOOR {
                    log::warn!("attribute {a} has near-zero score variance; its scores are set to 0");
                    degenerate.push(a);
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std, degenerate }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(a, v)| {
                if self.degenerate.contains(&a) {
                    0.0
                } else {
                    (v - self.mean[a]) / self.std[a]
                }
            })
            .collect()
    }
}

/// Scores read from an external file, standardized over the rows read.
#[derive(Debug, Clone)]
pub struct IngestedScores {
    pub scores: ScoreMatrix,
    pub standardization: Standardization,
}

/// Reads `image_id,score_0,...,score_{M-1}` and standardizes each column.
///
/// With `expected` set, the output follows that id order, every id must be
/// present and rows for other ids are ignored.
pub fn ingest_scores(path: &Path, m: usize, expected: Option<&[String]>) -> Result<IngestedScores> {
    let file = path.display().to_string();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let header = rdr.headers()?.clone();
    if header.len() != m + 1 {
        return Err(Error::ColumnCount {
            file,
            line: 1,
            expected: m + 1,
            found: header.len(),
        });
    }
    let mut ids = Vec::new();
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != m + 1 {
            return Err(Error::ColumnCount {
                file,
                line,
                expected: m + 1,
                found: rec.len(),
            });
        }
        let id = rec[0].to_string();
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonFiniteScore {
                        file: file.clone(),
                        line,
                        id: id.clone(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        ids.push(id);
        raw.push(row);
    }
    let (ids, raw) = match expected {
        None => (ids, raw),
        Some(want) => {
            let by_id: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
            let mut rows = Vec::with_capacity(want.len());
            for id in want {
                let k = by_id.get(id.as_str()).ok_or_else(|| Error::MissingScores(id.clone()))?;
                rows.push(raw[*k].clone());
            }
            (want.to_vec(), rows)
        }
    };
    let standardization = Standardization::fit(raw.iter().map(Vec::as_slice), m);
    let rows = raw.iter().map(|r| standardization.apply(r)).collect();
    Ok(IngestedScores {
        scores: ScoreMatrix::new(ids, rows)?,
        standardization,
    })
}

pub fn write_scores(path: &Path, scores: &ScoreMatrix) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let mut header = vec!["image_id".to_string()];
    header.extend((0..scores.n_attributes()).map(|a| format!("score_{a}")));
    w.write_record(&header)?;
    for (id, row) in scores.ids().iter().zip(scores.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn constant_column_is_zeroed_and_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "image_id,score_0,score_1\na,1.0,3.0\nb,2.0,3.0\nc,3.0,3.0\n").unwrap();
        let got = ingest_scores(&p, 2, None).unwrap();
        assert_eq!(got.standardization.degenerate, vec![1]);
        for k in 0..3 {
            assert_eq!(got.scores.row(k)[1], 0.0);
        }
        let col0: Vec<f64> = (0..3).map(|k| got.scores.row(k)[0]).collect();
        let s = (2.0f64 / 3.0).sqrt();
        assert!((col0[0] + 1.0 / s).abs() < 1e-12);
        assert!(col0[1].abs() < 1e-12);
    }

    #[test]
    fn column_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "image_id,score_0\na,1.0\n").unwrap();
        let err = ingest_scores(&p, 2, None).unwrap_err();
        assert!(matches!(
            err,
            Error::ColumnCount {
                expected: 3,
                found: 2,
                ..
            }
        ));
        assert!(err.to_string().contains("column count mismatch"));
    }

    #[test]
    fn missing_id_and_non_finite_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "image_id,score_0\na,1.0\nb,2.0\n").unwrap();
        let want = vec!["b".to_string(), "zz".to_string()];
        assert!(matches!(
            ingest_scores(&p, 1, Some(&want)),
            Err(Error::MissingScores(id)) if id == "zz"
        ));
        fs::write(&p, "image_id,score_0\na,1.0\nb,NaN\n").unwrap();
        assert!(matches!(
            ingest_scores(&p, 1, None),
            Err(Error::NonFiniteScore { line: 3, .. })
        ));
    }

    #[test]
    fn expected_order_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "image_id,score_0\na,1.0\nb,3.0\nc,9.0\n").unwrap();
        let want = vec!["b".to_string(), "a".to_string()];
        let got = ingest_scores(&p, 1, Some(&want)).unwrap();
        assert_eq!(got.scores.ids(), &want[..]);
        assert_eq!(got.scores.row(0), &[1.0]);
        assert_eq!(got.scores.row(1), &[-1.0]);
    }
}
