use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use ens_core::corpus::{
    corpus_stats, dedup_scenarios, expand_scenarios, filter_corpus, format_transcript,
    generate_scenarios, is_adequate_scenario, split_corpus, synthesize_corpus, synthesize_dialogue,
    Criterion, DomainTag, PromptTemplate, QualityRating, Scenario, ScenarioOrigin, SynthesisDecoding,
    SynthesisError, ADHERENCE_SENTENCE,
};
use ens_core::desk::{sample_corpus, DeskChatClient};
use ens_core::dialogue::{validate_dialogue, Speaker};
use ens_core::gateway::{ChatError, ChatRequest, FnClient, RetryingClient};
use ens_core::rationale::Component;
use proptest::prelude::*;

fn scenario(id: &str, text: &str) -> Scenario {
    Scenario {
        id: id.into(),
        text: text.into(),
        domain_tag: DomainTag::JobInterview,
        provenance: ScenarioOrigin::Seeded,
    }
}

const LONG: &str = "A recent graduate negotiates a first job offer with a hiring manager who has a fixed budget, and both want to agree on salary, start date and remote work.";

#[test]
fn bundled_corpus_validates_and_counts() {
    let corpus = sample_corpus();
    assert_eq!(corpus.len(), 20);
    for d in &corpus {
        assert!(validate_dialogue(d).violations.is_empty(), "{}", d.id);
    }
    let stats = corpus_stats("sample", &corpus);
    let utterances: usize = corpus.iter().map(|d| d.turns.len()).sum();
    assert_eq!(stats.dialogues, 20);
    assert_eq!(stats.utterances, utterances);
    assert!((stats.mean_utterances - utterances as f64 / 20.0).abs() < 1e-12);
    let empty = corpus_stats("none", &[]);
    assert_eq!((empty.dialogues, empty.utterances, empty.mean_utterances), (0, 0, 0.0));
}

#[test]
fn dialogue_template_ends_with_format_instruction() {
    let t = PromptTemplate::builtin("dialogue").unwrap();
    assert!(t.text.trim_end().ends_with(ADHERENCE_SENTENCE));
    assert_eq!(PromptTemplate::builtin("expand").unwrap().exemplar_slots, 3);
}

#[test]
fn synthesizes_with_the_desk_client() {
    let corpus = sample_corpus();
    let template = PromptTemplate::builtin("dialogue").unwrap();
    let out = synthesize_dialogue(
        &scenario("job-s0001", LONG),
        &corpus[..2],
        &template,
        &DeskChatClient,
        &SynthesisDecoding::default(),
        4,
    )
    .unwrap();
    assert_eq!(out.dialogue.turns.len(), 4);
    assert_eq!(out.dialogue.turns.iter().filter(|t| t.rationale.is_some()).count(), 2);
    assert_eq!((out.provenance.temperature, out.provenance.top_p), (0.9, 0.95));
    assert!(validate_dialogue(&out.dialogue).is_valid());
}

#[test]
fn mock_transcript_passes_through() {
    let corpus = sample_corpus();
    let reply = format_transcript(&corpus[0]);
    let client = FnClient(move |_: &ChatRequest| Ok(reply.clone()));
    let out = synthesize_dialogue(
        &scenario("s", LONG),
        &corpus[1..3],
        &PromptTemplate::builtin("dialogue").unwrap(),
        &client,
        &SynthesisDecoding::default(),
        corpus[0].turns.len(),
    )
    .unwrap();
    assert_eq!(out.dialogue.turns, corpus[0].turns);
}

#[test]
fn missing_strategy_line_is_reported() {
    let corpus = sample_corpus();
    let transcript = format_transcript(&corpus[0]);
    let broken: String = transcript
        .lines()
        .map(|l| match (l.find("The agent chooses "), l.find(" To ")) {
            (Some(a), Some(b)) if a < b => format!("{}{}", &l[..a], &l[b + 1..]),
            _ => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n");
    let raw = broken.clone();
    let client = FnClient(move |_: &ChatRequest| Ok(broken.clone()));
    let err = synthesize_dialogue(
        &scenario("s", LONG),
        &corpus[1..2],
        &PromptTemplate::builtin("dialogue").unwrap(),
        &client,
        &SynthesisDecoding::default(),
        4,
    )
    .unwrap_err();
    match err {
        SynthesisError::Parse { turn, component, raw: got, .. } => {
            assert_eq!(turn, 1);
            assert_eq!(component, Some(Component::Strategy));
            assert_eq!(got, raw);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn seeded_scenarios_skip_empty_and_inadequate_replies() {
    let corpus = sample_corpus();
    let replies = Mutex::new(vec![
        String::new(),
        "Too short.".to_string(),
        LONG.to_string(),
        LONG.to_uppercase(),
    ]);
    let client = FnClient(move |_: &ChatRequest| Ok(replies.lock().unwrap().remove(0)));
    let batch = generate_scenarios(
        &corpus,
        &PromptTemplate::builtin("scenario").unwrap(),
        &client,
        4,
        DomainTag::JobInterview,
    )
    .unwrap();
    assert_eq!(batch.empty_skipped, 1);
    assert_eq!(batch.inadequate, 1);
    assert_eq!(batch.duplicates, 1);
    assert_eq!(batch.scenarios.len(), 1);
    assert!(batch.scenarios.iter().all(|s| is_adequate_scenario(&s.text)));
}

#[test]
fn expansion_resamples_exemplars_per_request() {
    let corpus = sample_corpus();
    let exemplars: Vec<_> = corpus
        .iter()
        .take(6)
        .enumerate()
        .map(|(i, d)| (scenario(&format!("e{i}"), &d.scenario), d.clone()))
        .collect();
    let prompts = Mutex::new(Vec::new());
    let desk = DeskChatClient;
    let client = FnClient(|r: &ChatRequest| {
        prompts.lock().unwrap().push(r.prompt.clone());
        ens_core::gateway::ChatClient::complete(&desk, r)
    });
    let template = PromptTemplate::builtin("expand").unwrap();
    let batch = expand_scenarios(&[], &exemplars, &template, &client, 8, DomainTag::JobInterview, 3).unwrap();
    let prompts = prompts.lock().unwrap().clone();
    assert_eq!(prompts.len(), 8);
    let distinct: std::collections::BTreeSet<_> = prompts.iter().collect();
    assert!(distinct.len() > 1);
    assert!(batch.scenarios.iter().all(|s| s.provenance == ScenarioOrigin::Expanded));
    assert_eq!(batch.scenarios.len() + batch.duplicates + batch.inadequate, 8);
    assert!(matches!(
        expand_scenarios(&[], &exemplars[..2], &template, &client, 1, DomainTag::JobInterview, 0),
        Err(SynthesisError::Exemplars(2))
    ));
}

#[test]
fn corpus_synthesis_keeps_scenario_order() {
    let corpus = sample_corpus();
    let scenarios: Vec<_> = (0..5).map(|i| scenario(&format!("s{i}"), &format!("{LONG} Variant {i}."))).collect();
    let out = synthesize_corpus(
        &scenarios,
        &corpus[..1],
        &PromptTemplate::builtin("dialogue").unwrap(),
        &DeskChatClient,
        &SynthesisDecoding::default(),
        6,
        3,
    );
    let ids: Vec<_> = out.iter().map(|r| r.as_ref().unwrap().dialogue.id.clone()).collect();
    assert_eq!(ids, ["s0-dlg", "s1-dlg", "s2-dlg", "s3-dlg", "s4-dlg"]);
}

#[test]
fn transient_failures_are_retried() {
    let calls = AtomicUsize::new(0);
    let flaky = FnClient(|_: &ChatRequest| {
        if calls.fetch_add(1, Ordering::SeqCst) < 2 {
            Err(ChatError::Status { code: 503, body: "busy".into() })
        } else {
            Ok("fine".to_string())
        }
    });
    let client = RetryingClient::with_policy(flaky, 3, Duration::from_millis(1));
    let req = ChatRequest { prompt: "x".into(), temperature: 0.9, top_p: 0.95 };
    assert_eq!(ens_core::gateway::ChatClient::complete(&client, &req).unwrap(), "fine");
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let bad = FnClient(|_: &ChatRequest| Err(ChatError::Status { code: 400, body: "no".into() }));
    let client = RetryingClient::with_policy(bad, 3, Duration::from_millis(1));
    assert!(ens_core::gateway::ChatClient::complete(&client, &req).is_err());
}

fn rated(id: &str, rater: &str, scores: [u8; 7]) -> QualityRating {
    QualityRating {
        dialogue_id: id.into(),
        rater_id: rater.into(),
        scores: Criterion::ALL.iter().copied().zip(scores).collect(),
    }
}

#[test]
fn quality_filter_examples() {
    let corpus = sample_corpus();
    let ds = &corpus[..3];
    let ratings = vec![
        QualityRating::uniform(&ds[0].id, "r1", 5),
        rated(&ds[1].id, "r1", [5, 5, 2, 5, 5, 5, 5]),
        rated(&ds[2].id, "r1", [4, 4, 4, 4, 4, 4, 4]),
        rated(&ds[2].id, "r2", [3, 4, 4, 4, 4, 4, 4]),
        rated(&ds[2].id, "r3", [2, 4, 4, 4, 4, 4, 4]),
    ];
    let out = filter_corpus(ds, &ratings, 3.0).unwrap();
    let kept: Vec<_> = out.retained.iter().map(|d| d.id.clone()).collect();
    assert_eq!(kept, vec![ds[0].id.clone(), ds[2].id.clone()]);
    assert_eq!(out.decisions[2].means[&Criterion::EI], 3.0);
    assert!(!out.decisions[1].retained);

    let again = filter_corpus(&out.retained, &ratings, 3.0).unwrap();
    assert_eq!(again.retained, out.retained);
    assert!(filter_corpus(&corpus[..4], &ratings, 3.0).is_err());
}

#[test]
fn split_examples() {
    let ids: Vec<usize> = (0..840).collect();
    let s = split_corpus(&ids, (0.6, 0.2, 0.2), 11).unwrap();
    assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (504, 168, 168));
    assert_eq!(split_corpus(&ids, (0.6, 0.2, 0.2), 11).unwrap(), s);
    let all = split_corpus(&ids, (1.0, 0.0, 0.0), 1).unwrap();
    assert_eq!(all.train.len(), 840);
    assert!(split_corpus(&ids, (0.5, 0.2, 0.2), 1).is_err());
}

#[test]
fn seed_dialogues_start_with_user() {
    for d in sample_corpus() {
        assert_eq!(d.turns[0].speaker, Speaker::User);
    }
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 0usize..300, seed in any::<u64>(), a in 0u32..=10, b in 0u32..=10) {
        prop_assume!(a + b <= 10);
        let ratios = (a as f64 / 10.0, b as f64 / 10.0, (10 - a - b) as f64 / 10.0);
        let items: Vec<usize> = (0..n).collect();
        let s = split_corpus(&items, ratios, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn dedup_is_idempotent(texts in prop::collection::vec("[a-c ,.]{0,12}", 0..20)) {
        let pool: Vec<Scenario> = texts.iter().enumerate().map(|(i, t)| scenario(&i.to_string(), t)).collect();
        let once = dedup_scenarios(pool);
        let twice = dedup_scenarios(once.clone());
        prop_assert_eq!(once, twice);
    }
}
