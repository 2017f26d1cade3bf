//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `cargo test -p ens-cli --test acceptance`.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ens_cli::config::{self, PipelineConfig};
use ens_cli::pipeline;
use ens_core::catalog::{EmotionLabel, StrategyLabel};
use ens_core::corpus::{corpus_stats, filter_corpus, split_corpus, DomainTag, QualityRating, Scenario, ScenarioOrigin};
use ens_core::desk::{build_desk_script, sample_corpus};
use ens_core::dialogue::{validate_dialogue, Context, Dialogue, Speaker};
use ens_core::eval::{
    bleu4, default_sweep_grid, distinct3, embedding_f1, fleiss_kappa, perplexity, sweep_csv,
    threshold_sensitivity_sweep, welch_t_test, EvalRecord, PerplexityScope, RatingTable,
};
use ens_core::gateway::{
    BackendError, CompletionScript, Decoding, GenerativeBackend, HashEmbedder, MockBackend, MockConfig,
    Similarity, Stage, StepSettings, TrainItem,
};
use ens_core::jsonl::read_jsonl;
use ens_core::rationale::{
    parse_tagged_target, parse_with_mask, render_tagged_target, AblationMask, EnsCotRationale,
    STRATEGY_REASON_LINK,
};
use ens_core::training::{
    dpo_loss, dpo_pair_loss, labeled_from_dialogues, run_iterative_loop, select_pairs, select_pseudo_labels,
    sft_loss, unlabeled_from_dialogues, DpoScoring, PreferencePair, RunStatus, RunStore,
};
use ens_service::{AppState, PolicyEntry, ServiceConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestRng, TestRunner};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn desk_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("desk")
}

fn desk_config(overrides: &[&str]) -> Result<PipelineConfig, String> {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    config::load(Some(&desk_dir().join("ens.config")), &overrides).map_err(|e| e.to_string())
}

fn desk_corpus(name: &str) -> Result<Vec<Dialogue>, String> {
    read_jsonl(&desk_dir().join(name)).map_err(|e| e.to_string())
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        RunnerConfig {
            cases,
            failure_persistence: None,
            ..RunnerConfig::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn uniform_mock(vocab: usize) -> MockBackend {
    MockBackend::new(
        MockConfig {
            vocab_size: vocab,
            init_scale: 0.0,
            ..MockConfig::default()
        },
        Arc::new(CompletionScript::default()),
    )
}

fn ctx(id: &str) -> Context {
    Context {
        id: id.into(),
        scenario: "A tenant asks the landlord to cap next year's rent increase.".into(),
        history: vec![(Speaker::User, "Another ten percent is more than I can manage.".into())],
    }
}

fn sample_rationale(e: usize, s: usize, reply: &str) -> EnsCotRationale {
    let strategy = StrategyLabel::ALL[s % 12];
    EnsCotRationale::full(
        EmotionLabel::ALL[e % 12],
        "the size of the proposed increase.",
        "the tenant cannot absorb the new rent.",
        "a reliable tenant saves the landlord a vacancy.",
        "a smaller rise can still cover rising costs.",
        strategy,
        format!("to keep a good tenant, the agent uses {strategy}."),
        reply,
    )
}

fn tagged(e: usize, s: usize, reply: &str) -> String {
    render_tagged_target(&sample_rationale(e, s, reply), reply, &AblationMask::full())
        .expect("full mask renders")
        .into_string()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable run dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("inside dir").to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).expect("readable file"));
            }
        }
    }
    out
}

// 1
fn dpo_objective() -> Outcome {
    let policy = MockBackend::new(
        MockConfig {
            init_scale: 0.5,
            seed: 3,
            ..MockConfig::default()
        },
        Arc::new(CompletionScript::default()),
    );
    let pairs: Vec<PreferencePair> = (0..6)
        .map(|i| PreferencePair {
            context: ctx(&format!("c{i}")),
            preferred: tagged(i, i + 1, "Could we agree on four percent with a two year lease?"),
            rejected: tagged(i + 3, i + 5, "No."),
            preferred_similarity: 0.9,
            rejected_similarity: Some(0.1),
        })
        .collect();
    let mut worst: f64 = 0.0;
    for scoring in [DpoScoring::FullSequence, DpoScoring::RationaleOnly] {
        let l = dpo_loss(&policy, &policy, &pairs, 0.1, scoring).map_err(|e| e.to_string())?;
        worst = worst.max((l - LN_2).abs());
    }
    ensure!(worst <= 1e-9, "identical policy/reference loss off ln2 by {worst:e}");
    let expected = (1.0 + (-0.4f64).exp()).ln();
    let got = dpo_pair_loss(4.0, 0.1);
    ensure!((got - expected).abs() <= 1e-12, "gap 4, beta 0.1 gave {got}, expected {expected}");
    ensure!((got - 0.513015).abs() <= 1e-6, "gap 4, beta 0.1 gave {got}");
    Ok(format!("|loss - ln2| = {worst:.1e}, gap 4 -> {got:.6}"))
}

// 2
fn sft_objective() -> Outcome {
    let backend = uniform_mock(2);
    let target = "offer stands firm";
    let lps = backend.score("prompt", target).map_err(|e| e.to_string())?;
    ensure!(lps.len() == 3, "expected 3 target tokens, got {}", lps.len());
    ensure!(
        lps.iter().all(|lp| (lp + LN_2).abs() < 1e-12),
        "uniform V=2 mock should give each token ln(1/2), got {lps:?}"
    );
    let by_token: f64 = lps.iter().map(|lp| -lp).sum();
    let loss = sft_loss(&backend, &[("prompt".to_string(), target)]).map_err(|e| e.to_string())?;
    ensure!((loss - 3.0 * LN_2).abs() <= 1e-9, "loss {loss} != 3 ln2");
    ensure!((loss - by_token).abs() <= 1e-12, "loss {loss} != token sum {by_token}");
    Ok(format!("loss {loss:.9} = 3 ln2"))
}

fn brute_force_pairs(s: &[Similarity], tau1: f64, tau2: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, a) in s.iter().enumerate() {
        for (j, b) in s.iter().enumerate() {
            let good = matches!(a, Similarity::Score(v) if *v > tau1);
            let bad = match b {
                Similarity::Unparseable => true,
                Similarity::Score(v) => *v < tau2,
            };
            if good && bad {
                out.insert((i, j));
            }
        }
    }
    out
}

fn similarity() -> impl Strategy<Value = Similarity> {
    prop_oneof![
        9 => (0u32..=40).prop_map(|k| Similarity::Score(k as f64 / 40.0)),
        1 => Just(Similarity::Unparseable),
    ]
}

// 3
fn preference_builder() -> Outcome {
    let cases = Cell::new(0u32);
    let strategy = (
        prop::collection::vec(similarity(), 1..16),
        0.5f64..0.95,
        0.05f64..0.5,
        0.01f64..0.2,
    );
    runner(200)
        .run(&strategy, |(s, tau1, gap, step)| {
            cases.set(cases.get() + 1);
            let tau2 = (tau1 - gap).max(0.0);
            let pairs = select_pairs(&s, tau1, tau2, None);
            let set: BTreeSet<_> = pairs.iter().copied().collect();
            prop_assert_eq!(set.len(), pairs.len(), "duplicate pairs");
            prop_assert_eq!(&set, &brute_force_pairs(&s, tau1, tau2));
            for (p, r) in &pairs {
                for i in [p, r] {
                    if let Similarity::Score(v) = s[*i] {
                        prop_assert!(!(tau2..=tau1).contains(&v), "band member {} used", v);
                    }
                }
            }
            let preferred = |t: f64| {
                select_pairs(&s, t, tau2.min(t), None)
                    .iter()
                    .map(|p| p.0)
                    .collect::<BTreeSet<_>>()
            };
            let raised = (tau1 + step).min(0.99);
            prop_assert!(preferred(raised).is_subset(&preferred(tau1)), "raising tau1 added preferred items");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{} random cases agree with brute force", cases.get()))
}

// 4
fn pseudo_labels() -> Outcome {
    let cases = Cell::new(0u32);
    let strategy = (
        prop::collection::vec(prop::collection::vec((0usize..5, 0u32..=40, any::<bool>()), 1..8), 1..5),
        0.3f64..0.95,
    );
    runner(200)
        .run(&strategy, |(contexts, tau3)| {
            cases.set(cases.get() + 1);
            let reference = "Four percent works if the lease runs two years.";
            let m = contexts.iter().map(Vec::len).max().unwrap_or(0);
            let mut total = 0;
            for (c, picks) in contexts.iter().enumerate() {
                let completions: Vec<(String, Similarity)> = picks
                    .iter()
                    .map(|(r, k, valid)| {
                        let text = if *valid { tagged(*r, *r, "Some reply.") } else { format!("<R> broken {r}") };
                        (text, Similarity::Score(*k as f64 / 40.0))
                    })
                    .collect();
                let got = select_pseudo_labels(&ctx(&format!("u{c}")), reference, &completions, tau3, &AblationMask::full());
                let mut expected = Vec::new();
                let mut seen = BTreeSet::new();
                for (r, k, valid) in picks {
                    let sim = *k as f64 / 40.0;
                    if *valid && sim > tau3 && seen.insert(*r) {
                        expected.push((*r, sim));
                    }
                }
                prop_assert_eq!(got.len(), expected.len());
                for (g, (r, sim)) in got.iter().zip(&expected) {
                    prop_assert_eq!(g.similarity, *sim);
                    prop_assert!(g.similarity > tau3);
                    prop_assert_eq!(&g.response, reference);
                    prop_assert_eq!(g.rationale.emotion, Some(EmotionLabel::ALL[*r]));
                }
                total += got.len();
            }
            prop_assert!(total <= m * contexts.len(), "{} labels exceed m * |unlabeled|", total);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{} random cases agree with brute force", cases.get()))
}

// 5
fn iterative_loop() -> Outcome {
    let config = desk_config(&[])?;
    let corpus = sample_corpus();
    let labeled: Vec<_> = labeled_from_dialogues(&corpus[..4]).into_iter().take(6).collect();
    let unlabeled: Vec<_> = unlabeled_from_dialogues(&corpus[10..14]).into_iter().take(4).collect();
    ensure!((labeled.len(), unlabeled.len()) == (6, 4), "corpus sizes {} / {}", labeled.len(), unlabeled.len());
    ensure!(config.training.iteration_limit == 3, "desk config iteration_limit is {}", config.training.iteration_limit);
    let script = Arc::new(build_desk_script(&corpus, &config.training.mask));
    let run = |root: &Path| {
        let mock = config.backend.clone();
        let script = script.clone();
        let factory = move || Box::new(MockBackend::new(mock.clone(), script.clone())) as Box<dyn GenerativeBackend>;
        let store = RunStore::create(root, "loop").map_err(|e| e.to_string())?;
        let state = run_iterative_loop(
            &factory,
            &labeled,
            &unlabeled,
            &HashEmbedder::new(config.embedder_dim),
            &config.training,
            &store,
        )
        .map_err(|f| f.error.to_string())?;
        Ok::<_, String>((store, state))
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (store, state) = run(a.path())?;
    ensure!(state.status == RunStatus::Completed, "status {:?}", state.status);

    let sft_files: Vec<String> = std::fs::read_dir(store.dir().join("checkpoints"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.starts_with("sft-"))
        .collect();
    ensure!(sft_files.len() == 4, "expected 4 supervised checkpoints, found {sft_files:?}");
    let base0 = store.load_checkpoint("base-0").map_err(|e| e.to_string())?;
    for i in 0..=3u32 {
        let ckpt = store.load_checkpoint(&format!("sft-{i}")).map_err(|e| e.to_string())?;
        let parent_id = ckpt.provenance.parent.clone().ok_or(format!("sft-{i} has no parent"))?;
        let parent = store.load_checkpoint(&parent_id).map_err(|e| e.to_string())?;
        ensure!(parent.provenance.stage == Stage::Base, "sft-{i} parent {parent_id} is not a base checkpoint");
        ensure!(parent.payload == base0.payload, "sft-{i} parent differs from the initial base weights");
        let merged = store.load_merged(i).map_err(|e| e.to_string())?;
        ensure!(merged.len() >= labeled.len(), "merged corpus {i} smaller than labeled");
        ensure!(labeled.iter().all(|r| merged.contains(r)), "merged corpus {i} lost labeled records");
    }
    run(b.path())?;
    ensure!(
        snapshot(store.dir()) == snapshot(&b.path().join("loop")),
        "rerun artifacts are not byte-identical"
    );
    Ok(format!("{} iterations, 4 sft checkpoints, rerun identical", state.iterations.len()))
}

const WORDS: &[&str] = &[
    "rent", "lease", "the", "a", "fair", "increase", "budget", "year", "we", "can", "agree", "on",
    "repairs", "deposit", "worry", "tenant", "share", "costs", "next", "month", "1,200", "isn't",
];

fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..10).prop_map(|w| format!("{}.", w.join(" ")))
}

fn random_rationale() -> impl Strategy<Value = EnsCotRationale> {
    (0usize..12, 0usize..12, prop::collection::vec(phrase(), 5), phrase()).prop_map(|(e, s, parts, reply)| {
        let strategy = StrategyLabel::ALL[s];
        EnsCotRationale::full(
            EmotionLabel::ALL[e],
            parts[0].clone(),
            parts[1].clone(),
            parts[2].clone(),
            parts[3].clone(),
            strategy,
            format!("{}, the agent uses {strategy}.", parts[4].trim_end_matches('.')),
            format!("Right. {reply}"),
        )
    })
}

/// Corruptions that always break the format.
fn corrupt(text: &str, kind: u8, at: usize) -> String {
    match kind % 8 {
        0 => {
            let end = text.rfind("</A>").unwrap_or(text.len());
            let mut i = at % end.max(1);
            while !text.is_char_boundary(i) {
                i -= 1;
            }
            text[..i].to_string()
        }
        1 => text.replacen("</R>", "", 1),
        2 => text.replacen("<A>", "<A> <A>", 1),
        3 => text.replacen("The agent chooses ", "The agent picks ", 1),
        4 => text.replacen("The user feels ", "The user feels bananas ", 1),
        5 => format!("junk {text}"),
        6 => text.replacen(STRATEGY_REASON_LINK, " and so ", 1),
        _ => text.replacen("<R>", "", 1),
    }
}

// 6
fn parser() -> Outcome {
    let round_trips = Cell::new(0u32);
    runner(100)
        .run(&random_rationale(), |r| {
            round_trips.set(round_trips.get() + 1);
            let full = AblationMask::full();
            let t = render_tagged_target(&r, &r.response, &full).expect("renders");
            let (back, answer) = parse_tagged_target(t.as_str()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &r);
            let again = render_tagged_target(&back, &answer, &full).expect("renders");
            prop_assert_eq!(again.as_str(), t.as_str());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let corruptions = Cell::new(0u32);
    runner(100)
        .run(&(random_rationale(), 0u8..8, 0usize..400), |(r, kind, at)| {
            corruptions.set(corruptions.get() + 1);
            let t = render_tagged_target(&r, &r.response, &AblationMask::full()).expect("renders");
            let bad = corrupt(t.as_str(), kind, at);
            let parsed = catch_unwind(|| parse_with_mask(&bad, &AblationMask::full()))
                .map_err(|_| TestCaseError::fail(format!("parser panicked on {bad:?}")))?;
            match parsed {
                Ok(_) => Err(TestCaseError::fail(format!("corruption {kind} accepted: {bad:?}"))),
                Err(e) => {
                    prop_assert!(!e.to_string().is_empty());
                    Ok(())
                }
            }
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{} round trips, {} corruptions rejected",
        round_trips.get(),
        corruptions.get()
    ))
}

fn eval_record(id: &str, response: &str) -> EvalRecord {
    EvalRecord {
        context: ctx(id),
        response: response.into(),
        target: None,
        reference_emotion: None,
    }
}

// 7
fn metrics() -> Outcome {
    let x = ["could we cap the increase at four percent", "thanks"];
    let b = bleu4(&x, &x).map_err(|e| e.to_string())?;
    ensure!(b == 1.0, "bleu4(x, x) = {b}");
    let d = distinct3(&["a b c a b c"]);
    ensure!(d == 0.75, "distinct3 = {d}");
    let f = embedding_f1(&x, &x, &HashEmbedder::default()).map_err(|e| e.to_string())?;
    ensure!((f - 1.0).abs() <= 1e-9, "embedding_f1(x, x) = {f}");

    let perfect = RatingTable::new("F", vec![vec![2, 2, 2], vec![5, 5, 5], vec![3, 3, 3]]);
    let k1 = fleiss_kappa(&perfect).map_err(|e| e.to_string())?;
    ensure!(k1 == 1.0, "perfect agreement kappa = {k1}");
    // per-item agreement 1, 1/3, 1, 1/3 -> 2/3; category shares 1/2, 1/2 -> chance 1/2
    let hand = RatingTable::new("F", vec![vec![0, 0, 0], vec![0, 0, 1], vec![1, 1, 1], vec![0, 1, 1]]);
    let expected = (2.0 / 3.0 - 0.5) / (1.0 - 0.5);
    let k2 = fleiss_kappa(&hand).map_err(|e| e.to_string())?;
    ensure!((k2 - expected).abs() <= 1e-9, "hand table kappa = {k2}, expected {expected}");

    let w = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure!((w.p - 0.0214).abs() <= 1e-3, "welch p = {}", w.p);

    let recs = vec![eval_record("a", "one two three"), eval_record("b", "four five")];
    let ppl = perplexity(&uniform_mock(2), &recs, PerplexityScope::ResponseOnly).map_err(|e| e.to_string())?;
    ensure!((ppl - 2.0).abs() <= 1e-9, "perplexity at p = 1/2 is {ppl}");
    Ok(format!("kappa {k2:.6}, welch p {:.4}, ppl {ppl}", w.p))
}

// 8
fn corpus() -> Outcome {
    let corpus = sample_corpus();
    let violations: usize = corpus.iter().map(|d| validate_dialogue(d).violations.len()).sum();
    ensure!(violations == 0, "sample corpus has {violations} violations");
    let stats = corpus_stats("sample", &corpus);
    let utterances: usize = corpus.iter().map(|d| d.turns.len()).sum();
    ensure!(stats.dialogues == corpus.len(), "dialogue count {}", stats.dialogues);
    ensure!(stats.utterances == utterances, "utterance count {} vs {utterances}", stats.utterances);
    let mean = utterances as f64 / corpus.len() as f64;
    ensure!((stats.mean_utterances - mean).abs() < 1e-12, "mean {} vs {mean}", stats.mean_utterances);

    let ids: Vec<usize> = (0..840).collect();
    let s = split_corpus(&ids, (0.6, 0.2, 0.2), 17).map_err(|e| e.to_string())?;
    let sizes = (s.train.len(), s.dev.len(), s.test.len());
    ensure!(sizes == (504, 168, 168), "split sizes {sizes:?}");
    let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
    all.sort_unstable();
    ensure!(all == ids, "split is not a partition");

    let ds = &corpus[..3];
    let ratings = vec![
        QualityRating::uniform(&ds[0].id, "r1", 4),
        QualityRating::uniform(&ds[1].id, "r1", 3),
        QualityRating::uniform(&ds[1].id, "r2", 2),
        QualityRating::uniform(&ds[2].id, "r1", 3),
    ];
    let out = filter_corpus(ds, &ratings, 3.0).map_err(|e| e.to_string())?;
    let kept: Vec<&str> = out.retained.iter().map(|d| d.id.as_str()).collect();
    ensure!(kept == [ds[0].id.as_str(), ds[2].id.as_str()], "filter kept {kept:?}");
    Ok(format!("{stats}; split {sizes:?}; filter kept {}/3", kept.len()))
}

// 9
fn sweep() -> Outcome {
    let base = desk_config(&[])?;
    let labeled = desk_corpus("labeled.jsonl")?;
    let unlabeled = desk_corpus("unlabeled.jsonl")?;
    let test = desk_corpus("test.jsonl")?;
    let grid = default_sweep_grid();
    ensure!(grid.len() == 9, "grid has {} points", grid.len());
    let rows = threshold_sensitivity_sweep(&grid, |p| {
        pipeline::sweep_point(&base, p, &labeled, &unlabeled, &test, "test")
    });
    if let Some(bad) = rows.iter().find(|r| r.error.is_some()) {
        return Err(format!("point {:?} failed: {}", bad.point, bad.error.as_deref().unwrap_or("")));
    }
    let text = sweep_csv(&rows).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let expected = ["tau1", "tau2", "tau3", "ppl", "b4", "d3", "bsf1", "rlen", "ea", "ensc"];
    ensure!(header == expected, "csv header {header:?}");
    let mut count = 0;
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        for (name, field) in header.iter().zip(record.iter()) {
            let v: f64 = field.parse().map_err(|_| format!("{name} = {field:?} is not a number"))?;
            ensure!(v.is_finite(), "{name} = {v} is not finite");
        }
        count += 1;
    }
    ensure!(count == 9, "csv has {count} rows");
    Ok(format!("{count} rows, all finite"))
}

fn train_and_report(
    config: &PipelineConfig,
    root: &Path,
    run_id: &str,
    labeled: &[Dialogue],
    unlabeled: &[Dialogue],
    test: &[Dialogue],
) -> Result<(RunStore, ens_core::eval::MetricReport), String> {
    let (store, _) = pipeline::train_run(config, labeled, unlabeled, root, run_id).map_err(|e| e.to_string())?;
    let loaded = pipeline::load_run(root, run_id).map_err(|e| e.to_string())?;
    let report = pipeline::evaluate_loaded(&loaded, run_id, test, "test").map_err(|e| e.to_string())?;
    Ok((store, report))
}

// 10
fn ablation() -> Outcome {
    let labeled = desk_corpus("labeled.jsonl")?;
    let unlabeled = desk_corpus("unlabeled.jsonl")?;
    let test = desk_corpus("test.jsonl")?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut stores = HashMap::new();
    for id in AblationMask::SETTING_IDS {
        let config = desk_config(&[&format!("ablation.mask={id}")])?;
        let (store, report) = train_and_report(&config, &root.path().join(format!("mask{id}")), "run", &labeled, &unlabeled, &test)
            .map_err(|e| format!("mask {id}: {e}"))?;
        ensure!(report.ppl.is_finite(), "mask {id}: perplexity {}", report.ppl);
        stores.insert(id, (store, config, report));
    }

    let (store3, config3, report3) = &stores[&3];
    let script = std::fs::read_to_string(store3.dir().join("script.json")).map_err(|e| e.to_string())?;
    ensure!(
        !script.contains("The agent chooses") && !script.contains(STRATEGY_REASON_LINK),
        "mask 3 script still carries strategy text"
    );
    for i in 0..=config3.training.iteration_limit {
        let Ok(merged) = store3.load_merged(i) else { break };
        for r in merged {
            let t = r.target(&config3.training.mask).map_err(|e| e.to_string())?;
            ensure!(
                !t.as_str().contains("The agent chooses") && !t.as_str().contains(STRATEGY_REASON_LINK),
                "mask 3 target keeps strategy: {}",
                t.as_str()
            );
        }
    }
    ensure!(report3.ensc.is_none(), "mask 3 reports a strategy score");

    let plain = desk_config(&[])?;
    let (unmasked, _) = train_and_report(&plain, &root.path().join("unmasked"), "run", &labeled, &unlabeled, &test)?;
    ensure!(
        snapshot(unmasked.dir()) == snapshot(stores[&0].0.dir()),
        "mask 0 run differs from the unmasked run"
    );
    Ok("6 settings trained and evaluated; mask 3 strategy-free; mask 0 identical".into())
}

/// Holds every sample long enough for a second request to overlap it.
struct Slow(Arc<dyn GenerativeBackend>);

impl GenerativeBackend for Slow {
    fn model_id(&self) -> &str {
        self.0.model_id()
    }
    fn tokenize(&self, text: &str) -> Vec<String> {
        self.0.tokenize(text)
    }
    fn score(&self, prompt: &str, target: &str) -> Result<Vec<f64>, BackendError> {
        self.0.score(prompt, target)
    }
    fn sample(&self, prompt: &str, d: &Decoding, n: usize) -> Result<Vec<String>, BackendError> {
        std::thread::sleep(Duration::from_millis(400));
        self.0.sample(prompt, d, n)
    }
    fn train_step(&mut self, _: &[TrainItem], _: &StepSettings) -> Result<(), BackendError> {
        Err(BackendError::Other("serving only".into()))
    }
    fn snapshot(&self) -> Vec<u8> {
        self.0.snapshot()
    }
    fn restore(&mut self, _: &[u8]) -> Result<(), BackendError> {
        Err(BackendError::Other("serving only".into()))
    }
}

const COMPONENT_FIELDS: [&str; 8] = [
    "emotion",
    "trigger",
    "assessment",
    "perspective_shift",
    "mindset_transformation",
    "strategy",
    "strategy_reason",
    "response",
];

fn call(req: reqwest::blocking::RequestBuilder) -> Result<(StatusCode, Value), String> {
    let resp = req.send().map_err(|e| e.to_string())?;
    let status = resp.status();
    Ok((status, resp.json().unwrap_or(Value::Null)))
}

// 11
fn service() -> Outcome {
    let corpus = sample_corpus();
    let mask = AblationMask::full();
    let backend: Arc<dyn GenerativeBackend> = Arc::new(MockBackend::new(
        MockConfig::default(),
        Arc::new(build_desk_script(&corpus, &mask)),
    ));
    let policies = HashMap::from([
        ("desk".to_string(), PolicyEntry { backend: backend.clone(), mask: mask.clone() }),
        ("slow".to_string(), PolicyEntry { backend: Arc::new(Slow(backend)), mask: mask.clone() }),
    ]);
    let scenarios = vec![Scenario {
        id: "desk-0".into(),
        text: corpus[0].scenario.clone(),
        domain_tag: DomainTag::JobInterview,
        provenance: ScenarioOrigin::Seeded,
    }];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let state = AppState::open(ServiceConfig::new(dir.path()), policies, scenarios).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .map_err(|e| e.to_string())?;
    let base = format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(ens_service::serve(listener, state, async {
        let _ = stopped.await;
    }));

    let result = (|| -> Outcome {
        let client = Client::new();
        let create = |policy: &str| -> Result<String, String> {
            let (status, body) =
                call(client.post(format!("{base}/sessions")).json(&json!({"scenario_id": "desk-0", "policy_id": policy})))?;
            ensure!(status == StatusCode::OK, "create session: {status} {body}");
            body["session_id"].as_str().map(String::from).ok_or("no session id".into())
        };

        let id = create("desk")?;
        for (i, utterance) in ["The offer is lower than I hoped.", "I was expecting more for this role.", "What about remote days?"]
            .iter()
            .enumerate()
        {
            let (status, body) =
                call(client.post(format!("{base}/sessions/{id}/turns")).json(&json!({"utterance": utterance})))?;
            ensure!(status == StatusCode::OK, "turn {i}: {status} {body}");
            for field in COMPONENT_FIELDS {
                let present = match body["rationale"].get(field) {
                    Some(Value::String(s)) => !s.is_empty(),
                    _ => false,
                };
                ensure!(present, "turn {i}: rationale component {field} missing in {body}");
            }
            ensure!(body["turn_index"] == json!(2 * i + 1), "turn {i}: index {}", body["turn_index"]);
        }
        let (status, body) = call(client.post(format!("{base}/sessions/{id}/close")).json(&json!({})))?;
        ensure!(status == StatusCode::OK, "close: {status} {body}");
        let transcript: Dialogue =
            serde_json::from_value(body["transcript"].clone()).map_err(|e| format!("transcript: {e}"))?;
        ensure!(transcript.turns.len() == 6, "transcript has {} turns", transcript.turns.len());
        let report = validate_dialogue(&transcript);
        ensure!(report.violations.is_empty(), "transcript violations: {:?}", report.violations);
        let persisted: Vec<Dialogue> = read_jsonl(&dir.path().join("transcripts.jsonl")).map_err(|e| e.to_string())?;
        ensure!(persisted.len() == 1 && persisted[0] == transcript, "persisted transcript differs from the close reply");
        let report = validate_dialogue(&persisted[0]);
        ensure!(report.violations.is_empty(), "persisted transcript violations: {:?}", report.violations);

        // a second turn while the first is still generating must be refused
        let slow = create("slow")?;
        let url = format!("{base}/sessions/{slow}/turns");
        let first = {
            let client = client.clone();
            let url = url.clone();
            std::thread::spawn(move || call(client.post(url).json(&json!({"utterance": "Can we talk salary?"}))))
        };
        std::thread::sleep(Duration::from_millis(100));
        let (second, body) = call(client.post(&url).json(&json!({"utterance": "Hello?"})))?;
        let (first, _) = first.join().map_err(|_| "turn thread panicked".to_string())??;
        ensure!(first == StatusCode::OK, "first overlapping turn got {first}");
        ensure!(second == StatusCode::CONFLICT, "second overlapping turn got {second} {body}");
        let (_, session) = call(client.get(format!("{base}/sessions/{slow}")))?;
        let speakers: Vec<&str> = session["transcript"]["turns"]
            .as_array()
            .map(|t| t.iter().filter_map(|t| t["speaker"].as_str()).collect())
            .unwrap_or_default();
        ensure!(speakers == ["user", "agent"], "slow session turns {speakers:?}");

        for rater in ["r1", "r2"] {
            let scores: serde_json::Map<String, Value> = ["F", "C", "E", "EA", "ENSC", "BE", "OF"]
                .iter()
                .map(|d| (d.to_string(), json!(4)))
                .collect();
            let (status, body) = call(
                client
                    .post(format!("{base}/sessions/{id}/ratings"))
                    .json(&json!({"rater_id": rater, "scores": scores})),
            )?;
            ensure!(status == StatusCode::OK, "rating {rater}: {status} {body}");
        }
        let (status, body) = call(client.get(format!("{base}/reports/agreement?dimension=F")))?;
        ensure!(status == StatusCode::OK, "agreement: {status} {body}");
        let kappa = body["kappa"].as_f64().ok_or(format!("no kappa in {body}"))?;
        ensure!(kappa == 1.0, "two agreeing raters give kappa {kappa}");
        Ok("3 turns with 8 components, overlap refused with 409, transcript valid, kappa 1.0".into())
    })();

    let _ = stop.send(());
    let stopped = rt.block_on(server);
    match (result, stopped) {
        (Err(e), _) => Err(e),
        (Ok(_), Err(e)) => Err(format!("server task: {e}")),
        (Ok(_), Ok(Err(e))) => Err(format!("server: {e}")),
        (Ok(msg), Ok(Ok(()))) => Ok(msg),
    }
}

fn main() {
    let secs = |n| Some(Duration::from_secs(n));
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 11] = [
        ("dpo objective", secs(1), dpo_objective),
        ("sft objective", secs(1), sft_objective),
        ("preference pairs", secs(10), preference_builder),
        ("pseudo-labels", secs(10), pseudo_labels),
        ("iterative loop", secs(60), iterative_loop),
        ("rationale parser", secs(5), parser),
        ("metrics", secs(5), metrics),
        ("corpus tooling", None, corpus),
        ("threshold sweep", secs(600), sweep),
        ("ablation", None, ablation),
        ("service", None, service),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if budget.is_some_and(|b| elapsed > b) => {
                Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<18} {:>8.2?}  {detail}", elapsed),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name:<18} {:>8.2?}  {reason}", elapsed);
            }
        }
    }
    println!("{} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
