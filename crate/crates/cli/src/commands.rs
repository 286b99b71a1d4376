use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use prominence_core::dataset::{
    generate_synthetic, load_dataset, read_latents, read_oracle, write_synthetic, Dataset, DatasetPaths,
    GroundTruthLabel, ImageSet, LoadOptions, SyntheticSpec, SyntheticWorld,
};
use prominence_core::describe::explain_prediction;
use prominence_core::eval::{cross_validate, write_curves_csv, write_gnuplot, CrossValidation, ScoreSource, Trainer};
use prominence_core::linear::SvmParams;
use prominence_core::model_file::{ModelFile, Provenance};
use prominence_core::predictor::{train_method, Method, MethodParams, PairPredictor, ScoredImage};
use prominence_core::prominence::{FeatureMap, ProminenceParams};
use prominence_core::ranker::{self, score_all, RankerParams};
use prominence_core::rng;
use prominence_core::scores::{ingest_scores, write_scores, ScoreMatrix};
use prominence_core::search::{
    run_search_experiment, write_traces_csv, ExperimentConfig, FeedbackParams, ProminenceOracle, SearchEngine, Variant,
};
use prominence_service::{AppState, ServiceConfig};
use rand::seq::index::sample;
use serde::Serialize;

use crate::manifest::sha256_file;
use crate::{
    DataArgs, DescribeArgs, EvaluateArgs, LabelSource, OracleKind, Outcome, PredictArgs, Profile, RankerArgs,
    ScoreArgs, ScoreSourceArgs, SearchSimArgs, ServeArgs, SynthArgs, TrainProminenceArgs, TrainRankerArgs,
};

const MANIFEST: &str = "manifest.json";

/// `<file>.manifest.json` next to a single-file output.
fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn dataset_files(dir: &Path) -> Vec<PathBuf> {
    let p = DatasetPaths::in_dir(dir);
    vec![p.vocab, p.images, p.pairs, p.votes]
}

fn load(data: &DataArgs) -> Result<Dataset> {
    let options = LoadOptions {
        annotators: (data.annotators > 0).then_some(data.annotators),
    };
    load_dataset(&DatasetPaths::in_dir(&data.data), options)
        .with_context(|| format!("loading dataset from {}", data.data.display()))
}

fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn ranker_params(a: &RankerArgs, seed: u64) -> RankerParams {
    RankerParams {
        c: a.c,
        epochs: a.epochs,
        similar_margin: a.similar_margin,
        seed,
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let methods = names
        .iter()
        .map(|n| n.trim().parse::<Method>().map_err(|e| anyhow!(e)))
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        bail!("no methods selected");
    }
    Ok(methods)
}

fn method_params(feature_map: &str, c: f64, seed: u64) -> Result<MethodParams> {
    let feature_map: FeatureMap = feature_map.parse()?;
    let svm = SvmParams {
        c,
        seed,
        ..SvmParams::default()
    };
    svm.validate()?;
    Ok(MethodParams {
        prominence: ProminenceParams { svm, feature_map },
        single_image: svm,
        prior_seed: seed,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Scores of every dataset image, from external scores when given and
/// otherwise from the model's rankers.
fn resolve_scores(dataset: &Dataset, source: &ScoreSourceArgs, inputs: &mut Vec<PathBuf>) -> Result<ScoreMatrix> {
    if let Some(path) = &source.scores {
        inputs.push(path.clone());
        let ingested = ingest_scores(path, dataset.n_attributes(), Some(&dataset.ids()))?;
        return Ok(ingested.scores);
    }
    let path = source
        .model
        .as_ref()
        .ok_or_else(|| anyhow!("either --model with a ranker section or --scores is required"))?;
    let ranker = load_model(path)?.ranker()?;
    Ok(score_all(&ranker, &dataset.images)?)
}

fn require_model(source: &ScoreSourceArgs, inputs: &mut Vec<PathBuf>) -> Result<ModelFile> {
    let path = source.model.as_ref().ok_or_else(|| anyhow!("--model is required"))?;
    inputs.push(path.clone());
    load_model(path)
}

fn parse_pair<'a>(pair: &'a str, scores: &ScoreMatrix) -> Result<(&'a str, &'a str, usize, usize)> {
    let (i, j) = pair
        .split_once(',')
        .ok_or_else(|| anyhow!("--pair must be `i,j`, got `{pair}`"))?;
    let find = |id: &str| scores.index_of(id).ok_or_else(|| anyhow!("unknown image `{id}`"));
    Ok((i, j, find(i)?, find(j)?))
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    let mut spec = match a.profile {
        Profile::Mixed => SyntheticSpec::mixed(a.m),
        Profile::BetaDominated => SyntheticSpec::beta_dominated(a.m),
        Profile::WidestOnly => SyntheticSpec::widest_only(a.m),
    };
    spec.n_images = a.images;
    spec.dim = a.dim.unwrap_or(spec.dim);
    spec.n_ordered_pairs = a.ordered_pairs;
    spec.n_similar_pairs = a.similar_pairs;
    spec.n_vote_pairs = a.vote_pairs;
    spec.temperature = a.temperature.unwrap_or(spec.temperature);
    spec.noise_sigma = a.noise.unwrap_or(spec.noise_sigma);
    spec.annotators = a.annotators;
    spec.map_seed = a.map_seed;
    spec.seed = a.seed;
    let data = generate_synthetic(&spec)?;
    write_synthetic(&a.out, &data)?;
    let mut outputs = dataset_files(&a.out);
    outputs.extend(["synth_spec.json", "latents.jsonl", "oracle.jsonl"].map(|f| a.out.join(f)));
    println!(
        "wrote {} images, {} vote pairs, M={} to {}",
        data.dataset.images.len(),
        data.dataset.votes.len(),
        a.m,
        a.out.display()
    );
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: vec![],
        outputs,
        manifest: Some(a.out.join(MANIFEST)),
    })
}

pub fn train_ranker(a: &TrainRankerArgs, config_hash: &str) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let params = ranker_params(&a.ranker, a.seed);
    let model = ranker::train_ranker(&dataset, &params, &ImageSet::all(dataset.images.len()))?;
    let mut file = ModelFile::new(dataset.vocab.clone());
    file.provenance = Some(Provenance {
        seed: a.seed,
        config_hash: config_hash.into(),
    });
    file.set_ranker(&model);
    file.save(&a.out)?;
    println!(
        "wrote rankers for {} attributes to {}",
        model.n_attributes(),
        a.out.display()
    );
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: dataset_files(&a.data.data),
        outputs: vec![a.out.clone()],
        manifest: Some(manifest_beside(&a.out)),
    })
}

pub fn score(a: &ScoreArgs) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let ranker = load_model(&a.model)?.ranker()?;
    let scores = score_all(&ranker, &dataset.images)?;
    write_scores(&a.out, &scores)?;
    let mut inputs = dataset_files(&a.data.data);
    inputs.push(a.model.clone());
    Ok(Outcome {
        seed: None,
        inputs,
        outputs: vec![a.out.clone()],
        manifest: Some(manifest_beside(&a.out)),
    })
}

pub fn train_prominence(a: &TrainProminenceArgs, config_hash: &str) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let methods = parse_methods(&a.methods)?;
    let params = method_params(&a.feature_map, a.c, a.seed)?;
    let mut inputs = dataset_files(&a.data.data);
    let (scores, mut file) = match (&a.source.scores, &a.source.model) {
        (Some(path), _) => {
            inputs.push(path.clone());
            let ingested = ingest_scores(path, dataset.n_attributes(), Some(&dataset.ids()))?;
            let mut file = ModelFile::new(dataset.vocab.clone());
            file.set_external_scores(&ingested.standardization);
            (ingested.scores, file)
        }
        (None, Some(path)) => {
            inputs.push(path.clone());
            let mut file = load_model(path)?;
            file.prominence = None;
            file.baselines.clear();
            (score_all(&file.ranker()?, &dataset.images)?, file)
        }
        (None, None) => bail!("either --model with a ranker section or --scores is required"),
    };
    if file.vocab != dataset.vocab {
        bail!("model vocabulary differs from the dataset vocabulary");
    }
    let labels = dataset.ground_truth()?;
    for &m in &methods {
        let trained = train_method(m, &scores, &labels, &params)?;
        file.set_method(m, &trained);
    }
    file.provenance = Some(Provenance {
        seed: a.seed,
        config_hash: config_hash.into(),
    });
    file.save(&a.out)?;
    println!(
        "trained {} on {} labeled pairs; wrote {}",
        a.methods.join(","),
        labels.len(),
        a.out.display()
    );
    Ok(Outcome {
        seed: Some(a.seed),
        inputs,
        outputs: vec![a.out.clone()],
        manifest: Some(manifest_beside(&a.out)),
    })
}

#[derive(Serialize)]
struct RankedEntry {
    attribute_id: usize,
    name: String,
    confidence: f64,
    polarity: prominence_core::prominence::Polarity,
}

#[derive(Serialize)]
struct PredictOutput<'a> {
    i: &'a str,
    j: &'a str,
    method: String,
    ranked: Vec<RankedEntry>,
}

pub fn predict(a: &PredictArgs) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let mut inputs = dataset_files(&a.data.data);
    let file = require_model(&a.source, &mut inputs)?;
    let scores = resolve_scores(&dataset, &a.source, &mut inputs)?;
    let method: Method = a.method.parse()?;
    let predictor = file.method(method)?;
    let (i, j, u, v) = parse_pair(&a.pair, &scores)?;
    let p = predictor.predict_pair(ScoredImage::of(&scores, u), ScoredImage::of(&scores, v))?;
    let out = PredictOutput {
        i,
        j,
        method: method.name().into(),
        ranked: p
            .ranked
            .iter()
            .map(|&(m, confidence)| RankedEntry {
                attribute_id: m,
                name: file.vocab.name(m).to_string(),
                confidence,
                polarity: p.polarity[m],
            })
            .collect(),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    finish_optional_output(a.out.as_deref(), &out, inputs)
}

fn finish_optional_output<T: Serialize>(out: Option<&Path>, value: &T, inputs: Vec<PathBuf>) -> Result<Outcome> {
    let Some(path) = out else {
        return Ok(Outcome {
            seed: None,
            inputs,
            outputs: vec![],
            manifest: None,
        });
    };
    write_json(path, value)?;
    Ok(Outcome {
        seed: None,
        inputs,
        outputs: vec![path.to_path_buf()],
        manifest: Some(manifest_beside(path)),
    })
}

pub fn describe(a: &DescribeArgs) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let mut inputs = dataset_files(&a.data.data);
    let file = require_model(&a.source, &mut inputs)?;
    let scores = resolve_scores(&dataset, &a.source, &mut inputs)?;
    let model = file.prominence()?;
    let (_, _, u, v) = parse_pair(&a.pair, &scores)?;
    let prediction = model.predict(scores.row(u), scores.row(v))?;
    let explanation = explain_prediction(&prediction, a.k, &file.vocab)?;
    println!("{}", serde_json::to_string_pretty(&explanation)?);
    println!("{}", explanation.text);
    finish_optional_output(a.out.as_deref(), &explanation, inputs)
}

/// Oracle labels realigned to the vote-table order of `votes`.
fn oracle_labels(data_dir: &Path, dataset: &Dataset, votes: &[GroundTruthLabel]) -> Result<Vec<GroundTruthLabel>> {
    let oracle = read_oracle(&data_dir.join("oracle.jsonl"), dataset)?;
    let by_pair: HashMap<(usize, usize), usize> =
        oracle.iter().map(|o| ((o.i.min(o.j), o.i.max(o.j)), o.label)).collect();
    votes
        .iter()
        .map(|l| {
            by_pair
                .get(&(l.i.min(l.j), l.i.max(l.j)))
                .map(|&label| GroundTruthLabel::single(l.i, l.j, label))
                .ok_or_else(|| {
                    anyhow!(
                        "no oracle label for pair ({}, {})",
                        dataset.images[l.i].id,
                        dataset.images[l.j].id
                    )
                })
        })
        .collect()
}

#[derive(Serialize)]
struct EvaluateSummary<'a> {
    provenance: Provenance,
    n_folds: usize,
    labels: LabelSource,
    curves: &'a [prominence_core::eval::AccuracyCurve],
}

pub fn evaluate(a: &EvaluateArgs, config_hash: &str) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let methods = parse_methods(&a.methods)?;
    let params = method_params(&a.feature_map, a.svm_c, a.seed)?;
    let mut inputs = dataset_files(&a.data.data);
    let scores = match &a.scores {
        Some(path) => {
            inputs.push(path.clone());
            ScoreSource::Fixed(ingest_scores(path, dataset.n_attributes(), Some(&dataset.ids()))?.scores)
        }
        None => ScoreSource::Ranker(ranker_params(&a.ranker, a.seed)),
    };
    let eval_labels = match a.labels {
        LabelSource::Votes => None,
        LabelSource::Oracle => {
            inputs.push(a.data.data.join("oracle.jsonl"));
            Some(oracle_labels(&a.data.data, &dataset, &dataset.ground_truth()?)?)
        }
    };
    let trainers: Vec<Trainer> = methods.iter().map(|&m| Trainer::method(m, params)).collect();
    let config = CrossValidation {
        n_folds: a.folds,
        seed: a.seed,
        k_max: a.k_max,
        scores,
        eval_labels,
    };
    let curves = cross_validate(&dataset, &trainers, &config)?;
    create_dir(&a.out)?;
    let (csv, dat, summary) = (
        a.out.join("curves.csv"),
        a.out.join("curves.dat"),
        a.out.join("summary.json"),
    );
    write_curves_csv(&csv, &curves)?;
    write_gnuplot(&dat, &curves)?;
    write_json(
        &summary,
        &EvaluateSummary {
            provenance: Provenance {
                seed: a.seed,
                config_hash: config_hash.into(),
            },
            n_folds: a.folds,
            labels: a.labels,
            curves: &curves,
        },
    )?;
    println!(
        "{:<14} {}",
        "method",
        (1..=a.k_max).map(|k| format!("k={k:<6}")).collect::<String>()
    );
    for c in &curves {
        let row: String = c.accuracy.iter().map(|v| format!("{v:<8.4}")).collect();
        println!("{:<14} {row}", c.method);
    }
    Ok(Outcome {
        seed: Some(a.seed),
        inputs,
        outputs: vec![csv, dat, summary],
        manifest: Some(a.out.join(MANIFEST)),
    })
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    provenance: Provenance,
    oracle: OracleKind,
    result: &'a prominence_core::search::ExperimentResult,
}

fn build_oracle(
    kind: OracleKind,
    data_dir: &Path,
    dataset: &Dataset,
    scores: &ScoreMatrix,
    inputs: &mut Vec<PathBuf>,
) -> Result<ProminenceOracle> {
    let latents_path = data_dir.join("latents.jsonl");
    let latents = || -> Result<Vec<Vec<f64>>> { Ok(read_latents(&latents_path, dataset)?) };
    Ok(match kind {
        OracleKind::Utility => {
            let spec_path = data_dir.join("synth_spec.json");
            let text = fs::read_to_string(&spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)?;
            inputs.extend([spec_path, latents_path.clone()]);
            ProminenceOracle::Utility {
                world: SyntheticWorld::new(&spec)?,
                latents: latents()?,
            }
        }
        OracleKind::Votes => {
            let labels = dataset
                .ground_truth()?
                .into_iter()
                .map(|l| ((l.i.min(l.j), l.i.max(l.j)), l.top()))
                .collect();
            ProminenceOracle::Annotated {
                labels,
                latents: scores.rows().to_vec(),
            }
        }
        OracleKind::Widest => {
            let latents = if latents_path.exists() {
                inputs.push(latents_path.clone());
                latents()?
            } else {
                scores.rows().to_vec()
            };
            ProminenceOracle::WidestLatent { latents }
        }
    })
}

pub fn search_sim(a: &SearchSimArgs, config_hash: &str) -> Result<Outcome> {
    let dataset = load(&a.data)?;
    let mut inputs = dataset_files(&a.data.data);
    let file = require_model(&a.source, &mut inputs)?;
    let scores = resolve_scores(&dataset, &a.source, &mut inputs)?;
    let oracle = build_oracle(a.oracle, &a.data.data, &dataset, &scores, &mut inputs)?;
    let engine = SearchEngine::new(scores, file.prominence()?)?;
    let n = engine.len();
    let mut targets: Vec<usize> = sample(&mut rng::stream(a.seed, &[0x7a49]), n, a.targets.min(n)).into_vec();
    targets.sort_unstable();
    let config = ExperimentConfig {
        iterations: a.iterations,
        feedback: FeedbackParams {
            page_size: a.page_size,
            references: a.references,
            prominent_fraction: a.prominent_fraction,
            tau: a.tau,
        },
        seed: a.seed,
        variants: vec![Variant::Prominence, Variant::Baseline],
    };
    let result = run_search_experiment(&engine, &targets, &oracle, &config)?;
    create_dir(&a.out)?;
    let (traces, summary) = (a.out.join("traces.csv"), a.out.join("summary.json"));
    write_traces_csv(&traces, &engine, &result)?;
    write_json(
        &summary,
        &SearchSummary {
            provenance: Provenance {
                seed: a.seed,
                config_hash: config_hash.into(),
            },
            oracle: a.oracle,
            result: &result,
        },
    )?;
    println!("iteration  prominence  baseline  sign-test p");
    for it in 0..=a.iterations {
        let p = result
            .summary_for(Variant::Prominence, it)
            .map_or(f64::NAN, |s| s.median_percentile);
        let b = result
            .summary_for(Variant::Baseline, it)
            .map_or(f64::NAN, |s| s.median_percentile);
        let pv = result.sign_test_at(it).map_or(f64::NAN, |s| s.p_value);
        println!("{it:<10} {p:<11.3} {b:<9.3} {pv:.3e}");
    }
    println!("grouping violations: {}", result.grouping_violations);
    Ok(Outcome {
        seed: Some(a.seed),
        inputs,
        outputs: vec![traces, summary],
        manifest: Some(a.out.join(MANIFEST)),
    })
}

pub fn serve(a: &ServeArgs) -> Result<Outcome> {
    let data = DataArgs {
        data: a.data.clone(),
        annotators: a.annotators,
    };
    let dataset = load(&data)?;
    let source = ScoreSourceArgs {
        model: Some(a.model.clone()),
        scores: a.scores.clone(),
    };
    let file = load_model(&a.model)?;
    let scores = resolve_scores(&dataset, &source, &mut Vec::new())?;
    let model_version = sha256_file(&a.model)?[..12].to_string();
    let asset_urls = dataset.images.iter().map(|i| i.asset_url.clone()).collect();
    let engine = SearchEngine::new(scores, file.prominence()?)?;
    let config = ServiceConfig {
        session_ttl: Duration::from_secs(a.session_ttl),
        max_sessions: a.max_sessions,
        asset_dir: a.assets.clone(),
        seed: a.seed,
        ..ServiceConfig::default()
    };
    let state = AppState::new(engine, file.vocab.clone(), asset_urls, model_version, config)
        .map_err(|e| anyhow!("{}", e.detail()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        prominence_service::serve(listener, Arc::new(state)).await?;
        Ok::<(), anyhow::Error>(())
    })?;
    Ok(Outcome {
        seed: None,
        inputs: vec![],
        outputs: vec![],
        manifest: None,
    })
}
