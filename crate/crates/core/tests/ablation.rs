mod common;

use ens_core::desk::sample_corpus;
use ens_core::eval::{
    eval_records_from_dialogues, evaluate_policy, CentroidStrategyJudge, EvalSettings, ExactEmotionJudge, Judges,
};
use ens_core::gateway::HashEmbedder;
use ens_core::rationale::AblationMask;
use ens_core::training::{load_policy, run_iterative_loop, RunStore, TrainingConfig};

use common::{desk_config, desk_factory, small_corpora};

fn train(mask: AblationMask, root: &std::path::Path, id: &str) -> (RunStore, ens_core::training::TrainingRunState) {
    let (_, labeled, unlabeled) = small_corpora();
    let config = TrainingConfig { mask: mask.clone(), iteration_limit: 1, ..desk_config() };
    let store = RunStore::create(root, id).unwrap();
    let state = run_iterative_loop(
        desk_factory(&mask).as_ref(),
        &labeled,
        &unlabeled,
        &HashEmbedder::default(),
        &config,
        &store,
    )
    .unwrap();
    (store, state)
}

#[test]
fn every_mask_setting_trains_and_evaluates() {
    let corpus = sample_corpus();
    let root = tempfile::tempdir().unwrap();
    let embedder = HashEmbedder::default();
    let strategy = CentroidStrategyJudge::with_bundled(HashEmbedder::default());
    let judges = Judges { embedder: &embedder, emotion: &ExactEmotionJudge, strategy: &strategy };
    for id in AblationMask::SETTING_IDS {
        let mask = AblationMask::setting(id).unwrap();
        let (store, state) = train(mask.clone(), root.path(), &format!("mask-{id}"));
        let ckpt = store.load_checkpoint(&state.final_policy().unwrap()).unwrap();
        let policy = load_policy(desk_factory(&mask).as_ref(), &ckpt).unwrap();
        let records = eval_records_from_dialogues(&corpus[16..], &mask);
        let settings = EvalSettings {
            generation: ens_core::training::GenerationSettings {
                mask: mask.clone(),
                temperature: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let (report, turns) = evaluate_policy(policy.as_ref(), &ckpt.id(), &records, &judges, &settings).unwrap();
        report.check().unwrap();
        assert_eq!(report.samples, records.len());
        for t in turns.iter().filter_map(|t| t.turn.as_ref()) {
            assert!(t.rationale.check_mask(&mask).is_ok());
        }
        for r in store.load_merged(1).unwrap() {
            let target = r.target(&mask).unwrap();
            if id == 3 {
                assert!(!target.as_str().contains("The agent chooses "));
                assert!(!target.as_str().contains(", the agent uses "));
            }
        }
    }
}

#[test]
fn mask_zero_matches_unmasked_run() {
    let root = tempfile::tempdir().unwrap();
    let (a, _) = train(AblationMask::setting(0).unwrap(), root.path(), "zero");
    let (b, _) = train(AblationMask::full(), root.path(), "full");
    for id in ["sft-0", "sft-1", "dpo-1"] {
        let x = a.load_checkpoint(id);
        let y = b.load_checkpoint(id);
        match (x, y) {
            (Ok(x), Ok(y)) => assert_eq!(x.payload, y.payload, "{id}"),
            (Err(_), Err(_)) => {}
            _ => panic!("{id} present in only one run"),
        }
    }
}
