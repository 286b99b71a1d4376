use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{log_relevance_term, Constraint, SearchEngine, Variant};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SessionMode {
    /// References must have been displayed on an earlier page.
    Interactive,
    /// A simulated user searching for `target`.
    Simulated { target: usize },
}

/// One user's search state over a [`SearchEngine`].
///
/// Satisfaction counts and log-relevances are accumulated per image as
/// constraints arrive, so each round costs one pass over the database per new
/// constraint plus a sort.
#[derive(Debug, Clone)]
pub struct SearchSession {
    pub variant: Variant,
    pub mode: SessionMode,
    pub page_size: usize,
    pub seed: u64,
    constraints: Vec<Constraint>,
    counts: Vec<u32>,
    relevance: Vec<f64>,
    /// Position of each image in the session's seeded shuffle.
    shuffle: Vec<u32>,
    ranking: Vec<usize>,
    iteration: usize,
    displayed: HashSet<usize>,
}

impl SearchSession {
    pub fn new(
        engine: &SearchEngine,
        variant: Variant,
        mode: SessionMode,
        page_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if page_size == 0 {
            return Err(Error::InvalidParameter("page size must be at least 1".into()));
        }
        if let SessionMode::Simulated { target } = mode {
            if target >= engine.len() {
                return Err(Error::NotFound(format!("database image {target}")));
            }
        }
        let n = engine.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[0x5e55]));
        let mut shuffle = vec![0u32; n];
        for (pos, &img) in order.iter().enumerate() {
            shuffle[img] = pos as u32;
        }
        let mut s = Self {
            variant,
            mode,
            page_size,
            seed,
            constraints: Vec::new(),
            counts: vec![0; n],
            relevance: vec![0.0; n],
            shuffle,
            ranking: Vec::new(),
            iteration: 0,
            displayed: HashSet::new(),
        };
        s.rerank(engine);
        s.mark_page_displayed();
        Ok(s)
    }

    fn rerank(&mut self, engine: &SearchEngine) {
        let mut ranking: Vec<usize> = (0..engine.len()).collect();
        let use_relevance = self.variant == Variant::Prominence;
        ranking.sort_by(|&a, &b| {
            let by_count = self.counts[b].cmp(&self.counts[a]);
            let by_relevance = if use_relevance {
                self.relevance[b].total_cmp(&self.relevance[a])
            } else {
                std::cmp::Ordering::Equal
            };
            by_count
                .then(by_relevance)
                .then(self.shuffle[a].cmp(&self.shuffle[b]))
                .then_with(|| engine.scores.id(a).cmp(engine.scores.id(b)))
        });
        self.ranking = ranking;
    }

    fn mark_page_displayed(&mut self) {
        let page: Vec<usize> = self.page().to_vec();
        self.displayed.extend(page);
    }

    /// Appends a round of feedback and re-ranks. An empty round only advances
    /// the iteration counter.
    pub fn submit(&mut self, engine: &SearchEngine, round: &[Constraint]) -> Result<()> {
        for c in round {
            engine.validate(c)?;
            if self.mode == SessionMode::Interactive && !self.displayed.contains(&c.reference) {
                return Err(Error::NotDisplayed(engine.scores.id(c.reference).to_string()));
            }
        }
        for c in round {
            let reference = engine.scores.row(c.reference);
            let use_relevance = self.variant == Variant::Prominence;
            for k in 0..engine.len() {
                let row = engine.scores.row(k);
                if c.is_satisfied_by(row, reference) {
                    self.counts[k] += 1;
                }
                if use_relevance {
                    let p = engine.model.confidence(c.attribute, row, reference)?;
                    self.relevance[k] += log_relevance_term(p);
                }
            }
            self.constraints.push(*c);
        }
        self.iteration += 1;
        self.rerank(engine);
        self.mark_page_displayed();
        Ok(())
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Database indices, best first.
    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    pub fn page(&self) -> &[usize] {
        &self.ranking[..self.page_size.min(self.ranking.len())]
    }

    /// Zero-based position of `image` in the ranking.
    pub fn position_of(&self, image: usize) -> usize {
        self.ranking
            .iter()
            .position(|&k| k == image)
            .expect("image in database")
    }

    pub fn satisfaction(&self, image: usize) -> u32 {
        self.counts[image]
    }

    pub fn log_relevance(&self, image: usize) -> f64 {
        self.relevance[image]
    }

    pub fn was_displayed(&self, image: usize) -> bool {
        self.displayed.contains(&image)
    }

    /// No image ranks below one satisfying fewer constraints.
    pub fn grouping_holds(&self) -> bool {
        self.ranking.windows(2).all(|w| self.counts[w[0]] >= self.counts[w[1]])
    }
}
