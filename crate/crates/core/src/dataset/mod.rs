//! Domain types for relative-attribute data: the attribute vocabulary, image
//! descriptors, ordered/similar training pairs and per-pair annotator votes.

mod folds;
mod io;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{make_folds, FoldAssignment};
pub use io::{
    load_dataset, load_vocab, read_images, write_images, write_pairs, write_vocab, write_votes, DatasetPaths,
    LoadOptions,
};
pub use synth::{
    generate_synthetic, read_latents, read_oracle, synthetic_vocab, write_synthetic, OracleLabel, SyntheticData,
    SyntheticSpec, SyntheticWorld,
};

/// Zero-based index into the attribute vocabulary.
pub type AttributeId = usize;

/// Default number of annotators per pair.
pub const DEFAULT_ANNOTATORS: u32 = 7;

/// One vocabulary entry. `template` optionally overrides how a comparative
/// clause is worded, e.g. `"has {polarity} visible teeth"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub template: Option<String>,
}

impl Serialize for Attribute {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Full<'a> {
            name: &'a str,
            template: &'a str,
        }
        match &self.template {
            None => s.serialize_str(&self.name),
            Some(t) => Full {
                name: &self.name,
                template: t,
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Attribute {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Full { name: String, template: Option<String> },
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Name(name) => Attribute { name, template: None },
            Repr::Full { name, template } => Attribute { name, template },
        })
    }
}

/// Ordered list of attribute names; an attribute's id is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct AttributeVocabulary {
    attributes: Vec<Attribute>,
}

impl AttributeVocabulary {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Vocabulary("vocabulary is empty".into()));
        }
        let mut seen = HashSet::new();
        for a in &attributes {
            if a.name.trim().is_empty() {
                return Err(Error::Vocabulary("empty attribute name".into()));
            }
            if a.name.contains(',') {
                return Err(Error::Vocabulary(format!(
                    "attribute name `{}` contains a comma",
                    a.name
                )));
            }
            if let Some(t) = &a.template {
                if t.contains(',') {
                    return Err(Error::Vocabulary(format!("template for `{}` contains a comma", a.name)));
                }
                if !t.contains("{polarity}") {
                    return Err(Error::Vocabulary(format!(
                        "template for `{}` lacks a {{polarity}} placeholder",
                        a.name
                    )));
                }
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Vocabulary(format!("duplicate attribute `{}`", a.name)));
            }
        }
        Ok(Self { attributes })
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            names
                .into_iter()
                .map(|n| Attribute {
                    name: n.into(),
                    template: None,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn name(&self, id: AttributeId) -> &str {
        &self.attributes[id].name
    }

    pub fn get(&self, id: AttributeId) -> Option<&Attribute> {
        self.attributes.get(id)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<AttributeId> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

impl TryFrom<Vec<Attribute>> for AttributeVocabulary {
    type Error = Error;
    fn try_from(v: Vec<Attribute>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AttributeVocabulary> for Vec<Attribute> {
    fn from(v: AttributeVocabulary) -> Self {
        v.attributes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub descriptor: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_url: Option<String>,
}

/// Training pairs for one attribute, as image indices. `(i, j)` in `ordered`
/// means image `i` shows strictly more of the attribute than `j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelativePairSet {
    pub attribute: AttributeId,
    pub ordered: Vec<(usize, usize)>,
    pub similar: Vec<(usize, usize)>,
}

/// Annotator votes for one unordered image pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteEntry {
    pub i: usize,
    pub j: usize,
    pub votes: BTreeMap<AttributeId, u32>,
}

impl VoteEntry {
    pub fn total(&self) -> u32 {
        self.votes.values().sum()
    }
}

/// All annotated pairs, at most one entry per unordered `{i, j}`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoteTable {
    entries: Vec<VoteEntry>,
}

impl VoteTable {
    /// Validates the unordered-uniqueness and vote-count invariants. When
    /// `annotators` is given, each pair's votes must sum to it.
    pub fn new(entries: Vec<VoteEntry>, annotators: Option<u32>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.i == e.j {
                return Err(Error::InvalidDataset(format!(
                    "vote pair uses the same image twice (index {})",
                    e.i
                )));
            }
            if e.votes.values().any(|&c| c == 0) {
                return Err(Error::InvalidDataset("vote counts must be positive".into()));
            }
            if let Some(n) = annotators {
                if e.total() != n {
                    return Err(Error::InvalidDataset(format!(
                        "pair ({}, {}) has {} votes, expected {n}",
                        e.i,
                        e.j,
                        e.total()
                    )));
                }
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate vote entry for pair ({}, {})",
                    e.i, e.j
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[VoteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Vote-ranked attributes of one pair; `ranked[0]` is the ground-truth
/// prominent difference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub i: usize,
    pub j: usize,
    pub ranked: Vec<AttributeId>,
}

impl GroundTruthLabel {
    /// Label with a single known-correct attribute (e.g. a synthetic oracle).
    pub fn single(i: usize, j: usize, attribute: AttributeId) -> Self {
        Self {
            i,
            j,
            ranked: vec![attribute],
        }
    }

    pub fn top(&self) -> AttributeId {
        self.ranked[0]
    }

    pub fn same_pair(&self, i: usize, j: usize) -> bool {
        (self.i == i && self.j == j) || (self.i == j && self.j == i)
    }
}

/// Attributes with at least one vote, by descending count; ties go to the
/// lower attribute id.
pub fn rank_votes(votes: &BTreeMap<AttributeId, u32>) -> Vec<AttributeId> {
    let mut ranked: Vec<(AttributeId, u32)> = votes.iter().filter(|(_, &c)| c > 0).map(|(&a, &c)| (a, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(a, _)| a).collect()
}

pub fn ground_truth(votes: &VoteTable, images: &[ImageRecord]) -> Result<Vec<GroundTruthLabel>> {
    votes
        .entries()
        .iter()
        .map(|e| {
            let ranked = rank_votes(&e.votes);
            if ranked.is_empty() {
                return Err(Error::EmptyVotes(images[e.i].id.clone(), images[e.j].id.clone()));
            }
            Ok(GroundTruthLabel { i: e.i, j: e.j, ranked })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    /// Fraction of pairs whose modal attribute received at least 3 votes.
    pub pct_modal_3plus: f64,
    /// Mean number of distinct attributes voted for per pair.
    pub mean_unique_attrs: f64,
}

pub fn agreement_stats(votes: &VoteTable) -> Result<AgreementStats> {
    if votes.is_empty() {
        return Err(Error::EmptyVoteTable);
    }
    let n = votes.len() as f64;
    let modal3 = votes
        .entries()
        .iter()
        .filter(|e| e.votes.values().copied().max().unwrap_or(0) >= 3)
        .count() as f64;
    let unique: usize = votes
        .entries()
        .iter()
        .map(|e| e.votes.values().filter(|&&c| c > 0).count())
        .sum();
    Ok(AgreementStats {
        pct_modal_3plus: modal3 / n,
        mean_unique_attrs: unique as f64 / n,
    })
}

/// A loaded, cross-referenced dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: AttributeVocabulary,
    pub images: Vec<ImageRecord>,
    /// One entry per attribute, indexed by attribute id.
    pub pairs: Vec<RelativePairSet>,
    pub votes: VoteTable,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(
        vocab: AttributeVocabulary,
        images: Vec<ImageRecord>,
        pairs: Vec<RelativePairSet>,
        votes: VoteTable,
    ) -> Result<Self> {
        let index = index_images(&images)?;
        if let Some(first) = images.first() {
            let d = first.descriptor.len();
            for img in &images {
                if img.descriptor.len() != d {
                    return Err(Error::InvalidDataset(format!(
                        "descriptor dimension mismatch for `{}`: expected {d}, found {}",
                        img.id,
                        img.descriptor.len()
                    )));
                }
                if img.descriptor.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidDataset(format!(
                        "non-finite descriptor entry for `{}`",
                        img.id
                    )));
                }
            }
        }
        if pairs.len() != vocab.len() {
            return Err(Error::InvalidDataset(format!(
                "{} pair sets for {} attributes",
                pairs.len(),
                vocab.len()
            )));
        }
        for (m, set) in pairs.iter().enumerate() {
            if set.attribute != m {
                return Err(Error::InvalidDataset(format!(
                    "pair set {m} labelled as attribute {}",
                    set.attribute
                )));
            }
            let mut ordered = HashSet::new();
            for &(i, j) in &set.ordered {
                check_pair(i, j, images.len())?;
                ordered.insert((i.min(j), i.max(j)));
            }
            for &(i, j) in &set.similar {
                check_pair(i, j, images.len())?;
                if ordered.contains(&(i.min(j), i.max(j))) {
                    return Err(Error::InvalidDataset(format!(
                        "pair ({}, {}) is both ordered and similar for `{}`",
                        images[i].id,
                        images[j].id,
                        vocab.name(m)
                    )));
                }
            }
        }
        for e in votes.entries() {
            check_pair(e.i, e.j, images.len())?;
            if let Some(&a) = e.votes.keys().find(|&&a| a >= vocab.len()) {
                return Err(Error::BadAttribute(a));
            }
        }
        Ok(Self {
            vocab,
            images,
            pairs,
            votes,
            index,
        })
    }

    pub fn n_attributes(&self) -> usize {
        self.vocab.len()
    }

    pub fn dim(&self) -> usize {
        self.images.first().map_or(0, |i| i.descriptor.len())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.images.iter().map(|i| i.id.clone()).collect()
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruthLabel>> {
        ground_truth(&self.votes, &self.images)
    }
}

fn check_pair(i: usize, j: usize, n: usize) -> Result<()> {
    if i >= n || j >= n {
        return Err(Error::InvalidDataset(format!(
            "pair ({i}, {j}) references an image index outside 0..{n}"
        )));
    }
    if i == j {
        return Err(Error::InvalidDataset(format!(
            "pair uses the same image twice (index {i})"
        )));
    }
    Ok(())
}

pub(crate) fn index_images(images: &[ImageRecord]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(images.len());
    for (k, img) in images.iter().enumerate() {
        if index.insert(img.id.clone(), k).is_some() {
            return Err(Error::InvalidDataset(format!("duplicate image id `{}`", img.id)));
        }
    }
    Ok(index)
}

/// Membership mask over dataset images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet(Vec<bool>);

impl ImageSet {
    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self(mask)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.get(i).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}
