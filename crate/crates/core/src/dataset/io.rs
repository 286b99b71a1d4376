use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    index_images, AttributeVocabulary, Dataset, ImageRecord, RelativePairSet, VoteEntry, VoteTable, DEFAULT_ANNOTATORS,
};
use crate::error::{Error, Result};

/// The four files that make up a dataset on disk.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub vocab: PathBuf,
    pub images: PathBuf,
    pub pairs: PathBuf,
    pub votes: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            vocab: dir.join("vocab.json"),
            images: dir.join("images.jsonl"),
            pairs: dir.join("pairs.csv"),
            votes: dir.join("votes.jsonl"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Required vote total per pair; `None` disables the check.
    pub annotators: Option<u32>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            annotators: Some(DEFAULT_ANNOTATORS),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn load_vocab(path: &Path) -> Result<AttributeVocabulary> {
    let reader = open(path)?;
    serde_json::from_reader(reader).map_err(|e| Error::Parse {
        file: display(path),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Non-empty lines of a JSON-lines file with their 1-based line numbers.
fn json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: display(path),
            line: k + 1,
            msg: e.to_string(),
        })?;
        out.push((k + 1, value));
    }
    Ok(out)
}

pub fn read_images(path: &Path) -> Result<Vec<ImageRecord>> {
    let rows: Vec<(usize, ImageRecord)> = json_lines(path)?;
    let mut expected = None;
    for (line, img) in &rows {
        let d = *expected.get_or_insert(img.descriptor.len());
        if img.descriptor.len() != d {
            return Err(Error::DimensionMismatch {
                file: display(path),
                line: *line,
                id: img.id.clone(),
                expected: d,
                found: img.descriptor.len(),
            });
        }
        if img.descriptor.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                file: display(path),
                line: *line,
                msg: format!("non-finite descriptor entry for `{}`", img.id),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, img)| img).collect())
}

#[derive(Deserialize)]
struct PairRow {
    attribute_id: usize,
    i: String,
    j: String,
    relation: String,
}

#[derive(Serialize, Deserialize)]
struct VoteRow {
    i: String,
    j: String,
    votes: BTreeMap<String, u32>,
}

pub fn load_dataset(paths: &DatasetPaths, options: LoadOptions) -> Result<Dataset> {
    let vocab = load_vocab(&paths.vocab)?;
    let images = read_images(&paths.images)?;
    let index = index_images(&images)?;
    let m = vocab.len();
    let resolve = |file: &Path, line: usize, id: &str| {
        index.get(id).copied().ok_or_else(|| Error::UnknownImage {
            file: display(file),
            line,
            id: id.to_string(),
        })
    };

    let mut pairs: Vec<RelativePairSet> = (0..m)
        .map(|a| RelativePairSet {
            attribute: a,
            ..Default::default()
        })
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(&paths.pairs)?);
    let headers = rdr.headers()?.clone();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            file: display(&paths.pairs),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let rec: PairRow = record.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            file: display(&paths.pairs),
            line,
            msg: e.to_string(),
        })?;
        if rec.attribute_id >= m {
            return Err(Error::AttributeOutOfRange {
                file: display(&paths.pairs),
                line,
                id: rec.attribute_id,
                m,
            });
        }
        let i = resolve(&paths.pairs, line, &rec.i)?;
        let j = resolve(&paths.pairs, line, &rec.j)?;
        let set = &mut pairs[rec.attribute_id];
        match rec.relation.as_str() {
            "gt" => set.ordered.push((i, j)),
            "sim" => set.similar.push((i, j)),
            other => {
                return Err(Error::Parse {
                    file: display(&paths.pairs),
                    line,
                    msg: format!("relation must be `gt` or `sim`, got `{other}`"),
                })
            }
        }
    }

    let mut entries = Vec::new();
    for (line, row) in json_lines::<VoteRow>(&paths.votes)? {
        let i = resolve(&paths.votes, line, &row.i)?;
        let j = resolve(&paths.votes, line, &row.j)?;
        let mut votes = BTreeMap::new();
        for (key, count) in row.votes {
            let id: usize = key.parse().map_err(|_| Error::Parse {
                file: display(&paths.votes),
                line,
                msg: format!("attribute key `{key}` is not a non-negative integer"),
            })?;
            if id >= m {
                return Err(Error::AttributeOutOfRange {
                    file: display(&paths.votes),
                    line,
                    id,
                    m,
                });
            }
            votes.insert(id, count);
        }
        entries.push(VoteEntry { i, j, votes });
    }
    let votes = VoteTable::new(entries, options.annotators)?;
    Dataset::new(vocab, images, pairs, votes)
}

pub fn write_vocab(path: &Path, vocab: &AttributeVocabulary) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, vocab)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_images(path: &Path, images: &[ImageRecord]) -> Result<()> {
    let mut w = create(path)?;
    for img in images {
        serde_json::to_writer(&mut w, img)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pairs(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["attribute_id", "i", "j", "relation"])?;
    for set in &dataset.pairs {
        let a = set.attribute.to_string();
        for (rel, list) in [("gt", &set.ordered), ("sim", &set.similar)] {
            for &(i, j) in list {
                w.write_record([
                    a.as_str(),
                    dataset.images[i].id.as_str(),
                    dataset.images[j].id.as_str(),
                    rel,
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_votes(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    for e in dataset.votes.entries() {
        let row = VoteRow {
            i: dataset.images[e.i].id.clone(),
            j: dataset.images[e.j].id.clone(),
            votes: e.votes.iter().map(|(a, c)| (a.to_string(), *c)).collect(),
        };
        serde_json::to_writer(&mut w, &row)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_files(dir: &Path, vocab: &str, images: &str, pairs: &str, votes: &str) -> DatasetPaths {
        let p = DatasetPaths::in_dir(dir);
        fs::write(&p.vocab, vocab).unwrap();
        fs::write(&p.images, images).unwrap();
        fs::write(&p.pairs, pairs).unwrap();
        fs::write(&p.votes, votes).unwrap();
        p
    }

    const TWO_IMAGES: &str =
        "{\"id\":\"a\",\"descriptor\":[1.0,2.0]}\n{\"id\":\"b\",\"descriptor\":[0.0,1.0],\"asset_url\":\"b.jpg\"}\n";

    #[test]
    fn loads_minimal_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(
            dir.path(),
            r#"["sporty"]"#,
            TWO_IMAGES,
            "attribute_id,i,j,relation\n0,a,b,gt\n",
            "",
        );
        let ds = load_dataset(&p, LoadOptions::default()).unwrap();
        assert_eq!(ds.n_attributes(), 1);
        assert_eq!(ds.images.len(), 2);
        assert_eq!(ds.pairs[0].ordered, vec![(0, 1)]);
        assert_eq!(ds.images[1].asset_url.as_deref(), Some("b.jpg"));
        assert!(ds.votes.is_empty());
    }

    #[test]
    fn vote_attribute_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = serde_json::to_string(&(0..10).map(|k| format!("a{k}")).collect::<Vec<_>>()).unwrap();
        let p = write_files(
            dir.path(),
            &vocab,
            TWO_IMAGES,
            "attribute_id,i,j,relation\n",
            "{\"i\":\"a\",\"j\":\"b\",\"votes\":{\"10\":7}}\n",
        );
        let err = load_dataset(&p, LoadOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::AttributeOutOfRange {
                id: 10,
                m: 10,
                line: 1,
                ..
            }
        ));
        assert!(err.to_string().contains("attribute id out of range"));
    }

    #[test]
    fn descriptor_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(
            dir.path(),
            r#"["x","y"]"#,
            "{\"id\":\"a\",\"descriptor\":[1,2,3,4]}\n{\"id\":\"b\",\"descriptor\":[1,2,3,4,5]}\n",
            "attribute_id,i,j,relation\n",
            "",
        );
        let err = load_dataset(&p, LoadOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                line: 2,
                expected: 4,
                found: 5,
                ..
            }
        ));
        assert!(err.to_string().contains("descriptor dimension mismatch"));
    }

    #[test]
    fn unknown_image_in_pairs_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(
            dir.path(),
            r#"["x","y"]"#,
            TWO_IMAGES,
            "attribute_id,i,j,relation\n0,a,b,gt\n1,a,zz,sim\n",
            "",
        );
        match load_dataset(&p, LoadOptions::default()).unwrap_err() {
            Error::UnknownImage { line, id, file } => {
                assert_eq!(line, 3);
                assert_eq!(id, "zz");
                assert!(file.ends_with("pairs.csv"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn vote_totals_checked_against_annotators() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(
            dir.path(),
            r#"["x","y"]"#,
            TWO_IMAGES,
            "attribute_id,i,j,relation\n",
            "{\"i\":\"a\",\"j\":\"b\",\"votes\":{\"0\":4,\"1\":2}}\n",
        );
        assert!(load_dataset(&p, LoadOptions::default()).is_err());
        let ds = load_dataset(&p, LoadOptions { annotators: None }).unwrap();
        assert_eq!(ds.votes.entries()[0].total(), 6);
    }
}
