//! Synthetic data with known prominent differences.
//!
//! Every image has latent attribute strengths `u ~ N(0, I_M)` and a descriptor
//! `x = G u + noise` for a fixed random `D x M` map `G`. The prominence of
//! attribute `m` for a pair is the utility
//!
//! ```text
//! s_m = alpha_m * |u_m^i - u_m^j| + beta_m * (u_m^i + u_m^j) / 2
//! ```
//!
//! so the true label depends on the mean strength as well as on the gap.
//! Annotator votes are independent draws from `softmax(s / T)`; the oracle
//! label is `argmax_m s_m`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io::{write_images, write_pairs, write_vocab, write_votes, DatasetPaths};
use super::{
    AttributeId, AttributeVocabulary, Dataset, ImageRecord, RelativePairSet, VoteEntry, VoteTable, DEFAULT_ANNOTATORS,
};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const SHOE_ATTRIBUTES: [&str; 10] = [
    "sporty",
    "comfortable",
    "shiny",
    "rugged",
    "fancy",
    "colorful",
    "feminine",
    "tall",
    "formal",
    "stylish",
];

const STREAM_MAP: u64 = 1;
const STREAM_LATENT: u64 = 2;
const STREAM_PAIRS: u64 = 3;
const STREAM_VOTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_attributes: usize,
    pub dim: usize,
    pub n_images: usize,
    /// Seed of the latent-to-descriptor map `G`.
    pub map_seed: u64,
    pub annotators: u32,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub temperature: f64,
    pub noise_sigma: f64,
    pub n_ordered_pairs: usize,
    pub n_similar_pairs: usize,
    pub n_vote_pairs: usize,
    /// Minimum latent gap for an ordered ranker pair.
    pub ordered_gap: f64,
    /// Maximum latent gap for a similar ranker pair.
    pub similar_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::mixed(10)
    }
}

impl SyntheticSpec {
    fn base(m: usize, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self {
            n_attributes: m,
            dim: 32.max(m),
            n_images: 400,
            map_seed: 1,
            annotators: DEFAULT_ANNOTATORS,
            alpha,
            beta,
            temperature: 0.5,
            noise_sigma: 0.01,
            n_ordered_pairs: 4000,
            n_similar_pairs: 1000,
            n_vote_pairs: 4000,
            ordered_gap: 0.3,
            similar_gap: 0.1,
            seed: 0,
        }
    }

    /// Gap and mean-strength terms both matter; the default benchmark.
    pub fn mixed(m: usize) -> Self {
        let alpha = (0..m).map(|k| 0.7 + 0.6 * k as f64 / (m.max(2) - 1) as f64).collect();
        let beta = (0..m).map(|k| if k % 2 == 0 { 0.8 } else { -0.8 }).collect();
        Self::base(m, alpha, beta)
    }

    /// Prominence decided by mean strength alone; the gap is uninformative.
    pub fn beta_dominated(m: usize) -> Self {
        let beta = (0..m).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Self::base(m, vec![0.0; m], beta)
    }

    /// Prominence is exactly the widest latent gap, with deterministic votes.
    pub fn widest_only(m: usize) -> Self {
        let mut s = Self::base(m, vec![1.0; m], vec![0.0; m]);
        s.temperature = 1e-9;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_attributes < 2 {
            return bad(format!("need at least 2 attributes, got {}", self.n_attributes));
        }
        if self.dim < self.n_attributes {
            return bad(format!(
                "descriptor dimension {} is smaller than attribute count {}",
                self.dim, self.n_attributes
            ));
        }
        if self.n_images < 2 {
            return bad("need at least 2 images".into());
        }
        if self.alpha.len() != self.n_attributes || self.beta.len() != self.n_attributes {
            return bad("alpha and beta must have one entry per attribute".into());
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if self.annotators == 0 {
            return bad("annotators must be positive".into());
        }
        if !(self.similar_gap < self.ordered_gap) {
            return bad("similar_gap must be below ordered_gap".into());
        }
        let max_pairs = self.n_images * (self.n_images - 1) / 2;
        if self.n_vote_pairs > max_pairs {
            return bad(format!(
                "{} vote pairs requested but only {max_pairs} distinct pairs exist",
                self.n_vote_pairs
            ));
        }
        Ok(())
    }
}

/// The fixed generative world shared by every image drawn from a spec.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    /// `D` rows of length `M`.
    map: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub temperature: f64,
    pub noise_sigma: f64,
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(spec.map_seed, &[STREAM_MAP]);
        let map = (0..spec.dim)
            .map(|_| (0..spec.n_attributes).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        Ok(Self {
            map,
            alpha: spec.alpha.clone(),
            beta: spec.beta.clone(),
            temperature: spec.temperature,
            noise_sigma: spec.noise_sigma,
        })
    }

    pub fn n_attributes(&self) -> usize {
        self.alpha.len()
    }

    pub fn descriptor(&self, latent: &[f64], r: &mut Rng) -> Vec<f64> {
        self.map
            .iter()
            .map(|row| {
                let clean: f64 = row.iter().zip(latent).map(|(g, u)| g * u).sum();
                if self.noise_sigma > 0.0 {
                    let e: f64 = StandardNormal.sample(r);
                    clean + self.noise_sigma * e
                } else {
                    clean
                }
            })
            .collect()
    }

    /// Draws `n` images with ids `{prefix}{k:05}` and returns them with their
    /// latent strengths.
    pub fn sample_images(&self, n: usize, prefix: &str, r: &mut Rng) -> (Vec<ImageRecord>, Vec<Vec<f64>>) {
        let m = self.n_attributes();
        let mut images = Vec::with_capacity(n);
        let mut latents = Vec::with_capacity(n);
        for k in 0..n {
            let u: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut *r)).collect();
            images.push(ImageRecord {
                id: format!("{prefix}{k:05}"),
                descriptor: self.descriptor(&u, r),
                category: None,
                asset_url: None,
            });
            latents.push(u);
        }
        (images, latents)
    }

    pub fn utility(&self, ui: &[f64], uj: &[f64]) -> Vec<f64> {
        (0..self.n_attributes())
            .map(|m| self.alpha[m] * (ui[m] - uj[m]).abs() + self.beta[m] * 0.5 * (ui[m] + uj[m]))
            .collect()
    }

    pub fn oracle_label(&self, ui: &[f64], uj: &[f64]) -> AttributeId {
        argmax(&self.utility(ui, uj))
    }

    /// Vote distribution `softmax(s / T)`.
    pub fn vote_probabilities(&self, ui: &[f64], uj: &[f64]) -> Vec<f64> {
        let s = self.utility(ui, uj);
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| ((v - max) / self.temperature).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn draw_votes(&self, ui: &[f64], uj: &[f64], annotators: u32, r: &mut Rng) -> BTreeMap<AttributeId, u32> {
        let p = self.vote_probabilities(ui, uj);
        let mut votes = BTreeMap::new();
        for _ in 0..annotators {
            let x: f64 = r.random();
            let mut acc = 0.0;
            let mut pick = argmax(&p);
            for (m, &pm) in p.iter().enumerate() {
                acc += pm;
                if x < acc {
                    pick = m;
                    break;
                }
            }
            *votes.entry(pick).or_insert(0) += 1;
        }
        votes
    }
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLabel {
    pub i: usize,
    pub j: usize,
    pub label: AttributeId,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub world: SyntheticWorld,
    pub dataset: Dataset,
    /// Latent strengths, aligned with `dataset.images`.
    pub latents: Vec<Vec<f64>>,
    /// One oracle label per vote pair, in vote-table order.
    pub oracle: Vec<OracleLabel>,
}

pub fn synthetic_vocab(m: usize) -> Result<AttributeVocabulary> {
    AttributeVocabulary::from_names((0..m).map(|k| {
        SHOE_ATTRIBUTES
            .get(k)
            .map_or_else(|| format!("attribute_{k}"), |s| s.to_string())
    }))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let world = SyntheticWorld::new(spec)?;
    let m = spec.n_attributes;
    let n = spec.n_images;
    let (images, latents) = world.sample_images(n, "img", &mut rng::stream(spec.seed, &[STREAM_LATENT]));

    let mut pairs = Vec::with_capacity(m);
    #[allow(clippy::needless_range_loop)]
    for a in 0..m {
        let mut r = rng::stream(spec.seed, &[STREAM_PAIRS, a as u64]);
        let quota = |total: usize| total / m + usize::from(a < total % m);
        let (want_ord, want_sim) = (quota(spec.n_ordered_pairs), quota(spec.n_similar_pairs));
        let mut seen = HashSet::new();
        let mut set = RelativePairSet {
            attribute: a,
            ..Default::default()
        };
        let budget = 1000 * (want_ord + want_sim + 1);
        for _ in 0..budget {
            if set.ordered.len() >= want_ord && set.similar.len() >= want_sim {
                break;
            }
            let i = r.random_range(0..n);
            let j = r.random_range(0..n);
            if i == j || !seen.insert((i.min(j), i.max(j))) {
                continue;
            }
            let gap = latents[i][a] - latents[j][a];
            if gap.abs() > spec.ordered_gap && set.ordered.len() < want_ord {
                set.ordered.push(if gap > 0.0 { (i, j) } else { (j, i) });
            } else if gap.abs() < spec.similar_gap && set.similar.len() < want_sim {
                set.similar.push((i, j));
            }
        }
        if set.ordered.len() < want_ord || set.similar.len() < want_sim {
            log::warn!(
                "attribute {a}: generated {}/{want_ord} ordered and {}/{want_sim} similar pairs",
                set.ordered.len(),
                set.similar.len()
            );
        }
        pairs.push(set);
    }

    let mut r = rng::stream(spec.seed, &[STREAM_VOTES]);
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(spec.n_vote_pairs);
    let mut oracle = Vec::with_capacity(spec.n_vote_pairs);
    while entries.len() < spec.n_vote_pairs {
        let i = r.random_range(0..n);
        let j = r.random_range(0..n);
        if i == j || !seen.insert((i.min(j), i.max(j))) {
            continue;
        }
        let votes = world.draw_votes(&latents[i], &latents[j], spec.annotators, &mut r);
        entries.push(VoteEntry { i, j, votes });
        oracle.push(OracleLabel {
            i,
            j,
            label: world.oracle_label(&latents[i], &latents[j]),
        });
    }
    let votes = VoteTable::new(entries, Some(spec.annotators))?;
    let dataset = Dataset::new(synthetic_vocab(m)?, images, pairs, votes)?;
    Ok(SyntheticData {
        spec: spec.clone(),
        world,
        dataset,
        latents,
        oracle,
    })
}

#[derive(Serialize, Deserialize)]
struct LatentRow {
    id: String,
    latent: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OracleRow {
    i: String,
    j: String,
    label: AttributeId,
}

/// Writes the dataset files plus `synth_spec.json`, `latents.jsonl` and
/// `oracle.jsonl` into `dir`.
pub fn write_synthetic(dir: &Path, data: &SyntheticData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    let ds = &data.dataset;
    write_vocab(&paths.vocab, &ds.vocab)?;
    write_images(&paths.images, &ds.images)?;
    write_pairs(&paths.pairs, ds)?;
    write_votes(&paths.votes, ds)?;

    let spec_path = dir.join("synth_spec.json");
    let mut w = BufWriter::new(File::create(&spec_path).map_err(|e| Error::io(&spec_path, e))?);
    serde_json::to_writer_pretty(&mut w, &data.spec)?;
    writeln!(w).map_err(|e| Error::io(&spec_path, e))?;

    let lat_path = dir.join("latents.jsonl");
    let mut w = BufWriter::new(File::create(&lat_path).map_err(|e| Error::io(&lat_path, e))?);
    for (img, u) in ds.images.iter().zip(&data.latents) {
        serde_json::to_writer(
            &mut w,
            &LatentRow {
                id: img.id.clone(),
                latent: u.clone(),
            },
        )?;
        writeln!(w).map_err(|e| Error::io(&lat_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&lat_path, e))?;

    let or_path = dir.join("oracle.jsonl");
    let mut w = BufWriter::new(File::create(&or_path).map_err(|e| Error::io(&or_path, e))?);
    for o in &data.oracle {
        serde_json::to_writer(
            &mut w,
            &OracleRow {
                i: ds.images[o.i].id.clone(),
                j: ds.images[o.j].id.clone(),
                label: o.label,
            },
        )?;
        writeln!(w).map_err(|e| Error::io(&or_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&or_path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((
            k + 1,
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: k + 1,
                msg: e.to_string(),
            })?,
        ));
    }
    Ok(out)
}

/// Latent strengths aligned with `dataset.images`.
pub fn read_latents(path: &Path, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); dataset.images.len()];
    for (line, row) in read_rows::<LatentRow>(path)? {
        let k = dataset.index_of(&row.id).ok_or_else(|| Error::UnknownImage {
            file: path.display().to_string(),
            line,
            id: row.id.clone(),
        })?;
        out[k] = row.latent;
    }
    if let Some(k) = out.iter().position(|u| u.is_empty()) {
        return Err(Error::MissingScores(dataset.images[k].id.clone()));
    }
    Ok(out)
}

pub fn read_oracle(path: &Path, dataset: &Dataset) -> Result<Vec<OracleLabel>> {
    read_rows::<OracleRow>(path)?
        .into_iter()
        .map(|(line, row)| {
            let find = |id: &str| {
                dataset.index_of(id).ok_or_else(|| Error::UnknownImage {
                    file: path.display().to_string(),
                    line,
                    id: id.to_string(),
                })
            };
            Ok(OracleLabel {
                i: find(&row.i)?,
                j: find(&row.j)?,
                label: row.label,
            })
        })
        .collect()
}
