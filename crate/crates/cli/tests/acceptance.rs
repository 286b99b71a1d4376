//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (uncaptured) before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng as _;

use prominence_core::baselines::widest_difference;
use prominence_core::dataset::*;
use prominence_core::eval::*;
use prominence_core::predictor::*;
use prominence_core::prominence::*;
use prominence_core::ranker::*;
use prominence_core::rng;
use prominence_core::search::*;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[{verdict}] criterion {criterion}: {name} ({detail})"
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn oracle_labels(data: &SyntheticData) -> Vec<GroundTruthLabel> {
    data.oracle
        .iter()
        .map(|o| GroundTruthLabel::single(o.i, o.j, o.label))
        .collect()
}

fn all_methods() -> Vec<Trainer<'static>> {
    Method::ALL
        .into_iter()
        .map(|m| Trainer::method(m, MethodParams::default()))
        .collect()
}

fn curve(curves: &[AccuracyCurve], method: Method) -> &AccuracyCurve {
    curves.iter().find(|c| c.method == method.name()).unwrap()
}

fn run_cv(spec: SyntheticSpec, oracle: bool) -> Vec<AccuracyCurve> {
    let data = generate_synthetic(&spec).unwrap();
    let config = CrossValidation {
        n_folds: 10,
        seed: spec.seed,
        eval_labels: oracle.then(|| oracle_labels(&data)),
        ..Default::default()
    };
    cross_validate(&data.dataset, &all_methods(), &config).unwrap()
}

fn mixed(seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::mixed(10);
    spec.seed = seed;
    spec
}

/// Vote-label cross-validation on the mixed benchmark, shared by criteria 5 and 7.
fn vote_curves() -> &'static [AccuracyCurve] {
    static CURVES: OnceLock<Vec<AccuracyCurve>> = OnceLock::new();
    CURVES.get_or_init(|| run_cv(mixed(0), false))
}

/// Oracle-label cross-validation on the mixed benchmark for seeds 0..4.
fn oracle_curves() -> &'static [Vec<AccuracyCurve>] {
    static CURVES: OnceLock<Vec<Vec<AccuracyCurve>>> = OnceLock::new();
    CURVES.get_or_init(|| (0..4).map(|s| run_cv(mixed(s), true)).collect())
}

#[test]
fn criterion_1_pair_feature_contract() {
    let start = Instant::now();
    let mut r = rng::stream(0, &[1]);
    let (mut symmetric, mut nonneg, mut worst) = (true, true, 0.0f64);
    for _ in 0..10_000 {
        let m = r.random_range(1..=12);
        let a: Vec<f64> = (0..m).map(|_| r.random_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| r.random_range(-10.0..10.0)).collect();
        let ab = pair_feature(&a, &b).unwrap();
        let ba = pair_feature(&b, &a).unwrap();
        symmetric &= ab.as_slice() == ba.as_slice();
        nonneg &= ab.differences().iter().all(|d| *d >= 0.0);
        let (lo, hi) = ab.reconstruct();
        for k in 0..m {
            worst = worst
                .max((lo[k] - a[k].min(b[k])).abs())
                .max((hi[k] - a[k].max(b[k])).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = symmetric && nonneg && worst <= 1e-12 && elapsed < Duration::from_secs(5);
    report(
        1,
        "pair feature symmetry and reconstruction",
        pass,
        &format!("symmetric={symmetric} nonneg={nonneg} max_err={worst:.1e} time={elapsed:.2?}"),
    );
}

#[test]
fn criterion_2_ranker_oracle() {
    let start = Instant::now();
    let mut spec = SyntheticSpec::mixed(10);
    spec.noise_sigma = 0.0;
    let data = generate_synthetic(&spec).unwrap();
    assert_eq!((data.dataset.dim(), data.dataset.images.len()), (32, 400));
    let held_out = |k: usize| k >= 300;
    let train = ImageSet::from_mask((0..400).map(|k| !held_out(k)).collect());
    let model = train_ranker(&data.dataset, &RankerParams::default(), &train).unwrap();
    let scores = score_all(&model, &data.dataset.images).unwrap();
    let mut worst = 1.0f64;
    for m in 0..10 {
        let pairs: Vec<(usize, usize)> = (300..400)
            .flat_map(|i| (300..400).map(move |j| (i, j)))
            .filter(|&(i, j)| data.latents[i][m] > data.latents[j][m] + spec.ordered_gap)
            .collect();
        worst = worst.min(pair_satisfaction(&scores, m, &pairs));
    }
    let elapsed = start.elapsed();
    report(
        2,
        "held-out ranker pair satisfaction",
        worst >= 0.95 && elapsed < Duration::from_secs(120),
        &format!("worst attribute {worst:.3} time={elapsed:.2?}"),
    );
}

#[test]
fn criterion_3_prominence_learnability() {
    let start = Instant::now();
    let runs = oracle_curves();
    let mut beats = true;
    let mut model_acc = Vec::new();
    for curves in runs {
        let model = curve(curves, Method::Model).at(1);
        beats &= model >= 0.8;
        for m in &Method::ALL[1..] {
            beats &= model > curve(curves, *m).at(1);
        }
        model_acc.push(model);
    }
    let mean = model_acc.iter().sum::<f64>() / model_acc.len() as f64;
    let std = (model_acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (model_acc.len() - 1) as f64).sqrt();

    let beta = run_cv(SyntheticSpec::beta_dominated(10), true);
    let (bm, bw) = (curve(&beta, Method::Model), curve(&beta, Method::Widest));
    let gap = bm.at(1) - bw.at(1);
    let above = bm.accuracy.iter().zip(&bw.accuracy).all(|(m, w)| m > w);
    let elapsed = start.elapsed();

    let seed0 = &runs[0];
    let detail = format!(
        "seed0 k=1 model {:.3} widest {:.3} widest-plain {:.3} single {:.3} prior {:.3}; \
         model over seeds {:?} std {:.1} pts; beta gap {:.1} pts; time={elapsed:.1?}",
        curve(seed0, Method::Model).at(1),
        curve(seed0, Method::Widest).at(1),
        curve(seed0, Method::WidestPlain).at(1),
        curve(seed0, Method::Single).at(1),
        curve(seed0, Method::Prior).at(1),
        model_acc
            .iter()
            .map(|a| (a * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>(),
        100.0 * std,
        100.0 * gap,
    );
    let pass = beats && 100.0 * std < 3.0 && gap >= 0.20 && above && elapsed < Duration::from_secs(600);
    report(3, "model beats every baseline against oracle labels", pass, &detail);
}

#[test]
fn criterion_4_widest_rule_recovery() {
    let mut spec = SyntheticSpec::widest_only(10);
    spec.n_vote_pairs = 20_000;
    spec.n_images = 1000;
    let data = generate_synthetic(&spec).unwrap();
    let folds = make_folds(spec.n_images, 5, 0).unwrap();
    let ranker = train_ranker(&data.dataset, &RankerParams::default(), &folds.train_images(0)).unwrap();
    let scores = score_all(&ranker, &data.dataset.images).unwrap();
    let ones = vec![1.0; spec.n_attributes];
    let labels: Vec<GroundTruthLabel> = data
        .dataset
        .votes
        .entries()
        .iter()
        .map(|e| {
            let top = widest_difference(scores.row(e.i), scores.row(e.j), &ones)
                .unwrap()
                .top();
            GroundTruthLabel::single(e.i, e.j, top)
        })
        .collect();
    let train: Vec<_> = labels
        .iter()
        .filter(|l| folds.is_train_pair(0, l.i, l.j))
        .cloned()
        .collect();
    let test: Vec<_> = labels
        .iter()
        .filter(|l| folds.is_test_pair(0, l.i, l.j))
        .cloned()
        .collect();
    let model = train_prominence(&scores, &train, &ProminenceParams::default()).unwrap();
    let agree = test
        .iter()
        .filter(|l| model.predict(scores.row(l.i), scores.row(l.j)).unwrap().top() == l.top())
        .count();
    let rate = agree as f64 / test.len() as f64;
    report(
        4,
        "model recovers the widest-difference rule",
        rate >= 0.95,
        &format!("agreement {agree}/{} = {rate:.3}", test.len()),
    );
}

fn predicted(i: usize, j: usize, ranked: &[usize]) -> PairPrediction {
    let n = ranked.len();
    let ranked = ranked
        .iter()
        .enumerate()
        .map(|(r, &a)| (a, (n - r) as f64 / n as f64))
        .collect();
    PairPrediction {
        i,
        j,
        prediction: ProminencePrediction::from_ranked(ranked, &[0.0; 5], &[0.0; 5]),
    }
}

fn voted(i: usize, j: usize, votes: &[(usize, u32)]) -> GroundTruthLabel {
    let votes: BTreeMap<usize, u32> = votes.iter().copied().collect();
    GroundTruthLabel {
        i,
        j,
        ranked: rank_votes(&votes),
    }
}

#[test]
fn criterion_5_evaluation_protocol() {
    // Attribute ids are zero-based: a1 is 0.
    let label = voted(0, 1, &[(0, 4), (2, 2), (1, 1)]);
    let pred = predicted(0, 1, &[2, 0, 1, 3, 4]);
    let at1 = topk_accuracy(std::slice::from_ref(&pred), std::slice::from_ref(&label), 1).unwrap();
    let at2 = topk_accuracy(&[pred], &[label], 2).unwrap();
    let unanimous = voted(0, 1, &[(3, 7)]);
    let hit = topk_accuracy(
        &[predicted(0, 1, &[3, 0, 1, 2, 4])],
        std::slice::from_ref(&unanimous),
        3,
    )
    .unwrap();
    let miss = topk_accuracy(
        &[predicted(0, 1, &[0, 3, 1, 2, 4])],
        std::slice::from_ref(&unanimous),
        3,
    )
    .unwrap();
    let examples = at1 == 0.0 && at2 == 1.0 && unanimous.ranked == vec![3] && hit == 1.0 && miss == 0.0;

    let mut runs: Vec<&[AccuracyCurve]> = vec![vote_curves()];
    runs.extend(oracle_curves().iter().map(Vec::as_slice));
    let monotone = runs
        .iter()
        .flat_map(|curves| curves.iter())
        .all(|c| c.accuracy.windows(2).all(|w| w[0] <= w[1]));
    report(
        5,
        "top-k protocol examples and monotone curves",
        examples && monotone,
        &format!("k1={at1} k2={at2} unanimous_hit={hit} unanimous_miss={miss} monotone={monotone}"),
    );
}

#[test]
fn criterion_6_search_experiment() {
    let start = Instant::now();
    let seed = 0;
    let data = generate_synthetic(&mixed(seed)).unwrap();
    let ranker = train_ranker(&data.dataset, &RankerParams::default(), &ImageSet::all(400)).unwrap();
    let scores = score_all(&ranker, &data.dataset.images).unwrap();
    let labels = data.dataset.ground_truth().unwrap();
    let model = train_prominence(&scores, &labels, &ProminenceParams::default()).unwrap();
    let (db, latents) = data.world.sample_images(5000, "db", &mut rng::stream(seed, &[77]));
    let engine = SearchEngine::new(score_all(&ranker, &db).unwrap(), model).unwrap();
    let oracle = ProminenceOracle::Utility {
        world: data.world.clone(),
        latents,
    };
    let targets = rand::seq::index::sample(&mut rng::stream(seed, &[78]), 5000, 200).into_vec();
    let config = ExperimentConfig {
        seed,
        ..Default::default()
    };
    assert_eq!((config.iterations, config.feedback.prominent_fraction), (5, 0.75));
    let res = run_search_experiment(&engine, &targets, &oracle, &config).unwrap();
    let elapsed = start.elapsed();

    let mut pass = res.grouping_violations == 0 && elapsed < Duration::from_secs(900);
    let mut detail = Vec::new();
    for t in 1..=3 {
        let p = res.summary_for(Variant::Prominence, t).unwrap().median_percentile;
        let b = res.summary_for(Variant::Baseline, t).unwrap().median_percentile;
        let sign = res.sign_test_at(t).unwrap();
        pass &= p < b && sign.p_value < 0.01;
        detail.push(format!("it{t} median {p:.2} vs {b:.2} p={:.1e}", sign.p_value));
    }
    detail.push(format!("violations {} time={elapsed:.1?}", res.grouping_violations));
    report(6, "prominence feedback finds targets sooner", pass, &detail.join("; "));
}

#[test]
fn criterion_7_description_presence() {
    let full = predicted(0, 1, &[0, 1, 2, 3, 4]);
    let same = voted(0, 1, &[(0, 3), (1, 2), (2, 1)]);
    let disjoint = voted(0, 1, &[(3, 3), (4, 2)]);
    let one = voted(0, 1, &[(0, 3), (3, 2), (4, 1)]);
    let presence =
        |l: &GroundTruthLabel| description_presence(std::slice::from_ref(&full), std::slice::from_ref(l), 3).unwrap();
    let (p_same, p_disjoint, p_one) = (presence(&same), presence(&disjoint), presence(&one));
    let examples = p_same == 1.0 && p_disjoint == 0.0 && (p_one - 1.0 / 3.0).abs() < 1e-15;

    let curves = vote_curves();
    let model = curve(curves, Method::Model);
    let mut dominates = true;
    for k in 1..=3 {
        for m in &Method::ALL[1..] {
            dominates &= model.presence_at(k) >= curve(curves, *m).presence_at(k);
        }
    }
    let rows: Vec<String> = curves
        .iter()
        .map(|c| {
            format!(
                "{} {:.3}/{:.3}/{:.3}",
                c.method, c.presence[0], c.presence[1], c.presence[2]
            )
        })
        .collect();
    report(
        7,
        "model description presence dominates baselines",
        examples && dominates,
        &format!("examples {p_same}/{p_disjoint}/{p_one:.4}; {}", rows.join(", ")),
    );
}

/// Runs the binary in `cwd` with whitespace-separated arguments.
fn run(cwd: &Path, args: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_prominence"))
        .args(args.split_whitespace())
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args}: {}", String::from_utf8_lossy(&out.stderr));
}

fn manifests(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            found.extend(manifests(&path));
        } else if path.file_name().unwrap().to_string_lossy().ends_with("manifest.json") {
            found.push(path);
        }
    }
    found.sort();
    found
}

fn snapshot(dir: &Path) -> BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.clone(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_8_manifest_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let pipeline = [
        "synth --out d --m 6 --images 150 --ordered-pairs 1200 --similar-pairs 300 --vote-pairs 600 --seed 5",
        "train-ranker --data d --out ranker.json --epochs 60",
        "score --data d --model ranker.json --out scores.csv",
        "train-prominence --data d --model ranker.json --out model.json",
        "predict --data d --model model.json --pair img00001,img00002 --out pred.json",
        "describe --data d --model model.json --pair img00003,img00004 -k 2 --out desc.json",
        "evaluate --data d --labels oracle --folds 3 --epochs 60 --out ev",
        "search-sim --data d --model model.json --targets 20 --iterations 2 --out ss",
    ];
    for args in pipeline {
        run(dir, args);
    }

    let found = manifests(dir);
    let before = snapshot(dir);
    let mut replayed = 0;
    for m in &found {
        run(
            dir,
            &format!("replay --manifest {}", m.strip_prefix(dir).unwrap().display()),
        );
        replayed += 1;
    }
    let after = snapshot(dir);
    let identical = before == after;
    report(
        8,
        "CLI runs replay bit-identically from manifests",
        found.len() == pipeline.len() && replayed == found.len() && identical,
        &format!("{replayed} manifests replayed, files identical={identical}"),
    );
}
