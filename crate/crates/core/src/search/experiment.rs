use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{
    simulate_user_feedback, FeedbackParams, ProminenceOracle, SearchEngine, SearchSession, SessionMode, Variant,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Feedback rounds after the initial ranking.
    pub iterations: usize,
    pub feedback: FeedbackParams,
    pub seed: u64,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            feedback: FeedbackParams::default(),
            seed: 0,
            variants: vec![Variant::Prominence, Variant::Baseline],
        }
    }
}

/// Target ranks of one simulated search; index `t` is after `t` rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTrace {
    pub variant: Variant,
    pub target: usize,
    /// One-based rank of the target.
    pub ranks: Vec<usize>,
    pub grouping_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub variant: Variant,
    pub iteration: usize,
    pub median_percentile: f64,
    pub mean_percentile: f64,
    pub median_rank: f64,
}

/// Paired comparison of the prominence variant against the baseline at one
/// iteration; `better` counts targets ranked strictly higher by prominence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSignTest {
    pub iteration: usize,
    pub better: usize,
    pub worse: usize,
    pub ties: usize,
    /// One-sided `P(X >= better)` for `X ~ Binomial(better + worse, 1/2)`.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub database_size: usize,
    pub n_targets: usize,
    pub config: ExperimentConfig,
    pub summary: Vec<IterationSummary>,
    pub sign_tests: Vec<PairedSignTest>,
    pub grouping_violations: usize,
    #[serde(skip)]
    pub traces: Vec<TargetTrace>,
}

impl ExperimentResult {
    pub fn summary_for(&self, variant: Variant, iteration: usize) -> Option<&IterationSummary> {
        self.summary
            .iter()
            .find(|s| s.variant == variant && s.iteration == iteration)
    }

    pub fn sign_test_at(&self, iteration: usize) -> Option<&PairedSignTest> {
        self.sign_tests.iter().find(|s| s.iteration == iteration)
    }
}

/// Percentile rank in `(0, 100]`; lower is better.
pub fn percentile(rank: usize, n: usize) -> f64 {
    100.0 * rank as f64 / n as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len() / 2;
    if values.len() % 2 == 1 {
        values[k]
    } else {
        (values[k - 1] + values[k]) / 2.0
    }
}

/// One-sided sign test p-value for `better` successes out of
/// `better + worse` fair trials.
pub fn sign_test(better: usize, worse: usize) -> f64 {
    let n = (better + worse) as u64;
    if better == 0 || n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(better as u64 - 1)
}

fn trace(
    engine: &SearchEngine,
    target: usize,
    variant: Variant,
    oracle: &ProminenceOracle,
    config: &ExperimentConfig,
) -> Result<TargetTrace> {
    // Both variants share the target's shuffle and feedback streams.
    let session_seed = rng::derive_seed(config.seed, &[target as u64, 1]);
    let mut r = rng::stream(config.seed, &[target as u64, 2]);
    let mut session = SearchSession::new(
        engine,
        variant,
        SessionMode::Simulated { target },
        config.feedback.page_size,
        session_seed,
    )?;
    let mut ranks = vec![session.position_of(target) + 1];
    let mut violations = usize::from(!session.grouping_holds());
    for _ in 0..config.iterations {
        let round = simulate_user_feedback(&session, engine, target, oracle, &config.feedback, &mut r);
        session.submit(engine, &round)?;
        ranks.push(session.position_of(target) + 1);
        violations += usize::from(!session.grouping_holds());
    }
    Ok(TargetTrace {
        variant,
        target,
        ranks,
        grouping_violations: violations,
    })
}

/// Simulates a search for every target under every configured variant.
pub fn run_search_experiment(
    engine: &SearchEngine,
    targets: &[usize],
    oracle: &ProminenceOracle,
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if targets.is_empty() {
        return Err(Error::InvalidParameter("no search targets".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= engine.len()) {
        return Err(Error::NotFound(format!("database image {t}")));
    }
    let traces: Vec<TargetTrace> = targets
        .par_iter()
        .map(|&t| {
            config
                .variants
                .iter()
                .map(|&v| trace(engine, t, v, oracle, config))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let n = engine.len();
    let mut summary = Vec::new();
    for &variant in &config.variants {
        for it in 0..=config.iterations {
            let mut pct: Vec<f64> = traces
                .iter()
                .filter(|t| t.variant == variant)
                .map(|t| percentile(t.ranks[it], n))
                .collect();
            let mut ranks: Vec<f64> = traces
                .iter()
                .filter(|t| t.variant == variant)
                .map(|t| t.ranks[it] as f64)
                .collect();
            summary.push(IterationSummary {
                variant,
                iteration: it,
                mean_percentile: pct.iter().sum::<f64>() / pct.len() as f64,
                median_percentile: median(&mut pct),
                median_rank: median(&mut ranks),
            });
        }
    }

    let mut sign_tests = Vec::new();
    if config.variants.contains(&Variant::Prominence) && config.variants.contains(&Variant::Baseline) {
        let of = |v: Variant| -> Vec<&TargetTrace> { traces.iter().filter(|t| t.variant == v).collect() };
        let (prom, base) = (of(Variant::Prominence), of(Variant::Baseline));
        for it in 0..=config.iterations {
            let (mut better, mut worse, mut ties) = (0, 0, 0);
            for (p, b) in prom.iter().zip(&base) {
                match p.ranks[it].cmp(&b.ranks[it]) {
                    std::cmp::Ordering::Less => better += 1,
                    std::cmp::Ordering::Greater => worse += 1,
                    std::cmp::Ordering::Equal => ties += 1,
                }
            }
            sign_tests.push(PairedSignTest {
                iteration: it,
                better,
                worse,
                ties,
                p_value: sign_test(better, worse),
            });
        }
    }

    Ok(ExperimentResult {
        database_size: n,
        n_targets: targets.len(),
        config: config.clone(),
        summary,
        sign_tests,
        grouping_violations: traces.iter().map(|t| t.grouping_violations).sum(),
        traces,
    })
}

/// Writes `variant,target_id,iteration,rank,percentile` rows.
pub fn write_traces_csv(path: &Path, engine: &SearchEngine, result: &ExperimentResult) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(["variant", "target_id", "iteration", "rank", "percentile"])?;
    for t in &result.traces {
        for (it, &rank) in t.ranks.iter().enumerate() {
            w.write_record([
                t.variant.name().to_string(),
                engine.scores.id(t.target).to_string(),
                it.to_string(),
                rank.to_string(),
                percentile(rank, result.database_size).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
