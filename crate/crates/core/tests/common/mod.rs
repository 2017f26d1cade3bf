#![allow(dead_code)]

use std::sync::Arc;

use ens_core::desk::{build_desk_script, sample_corpus};
use ens_core::dialogue::Dialogue;
use ens_core::gateway::{BackendFactory, CompletionScript, GenerativeBackend, MockBackend, MockConfig};
use ens_core::rationale::AblationMask;
use ens_core::training::{labeled_from_dialogues, unlabeled_from_dialogues, LabeledRecord, OptimizerSettings, TrainingConfig, UnlabeledRecord};

pub fn factory_for(script: CompletionScript, config: MockConfig) -> Box<BackendFactory> {
    let script = Arc::new(script);
    Box::new(move || Box::new(MockBackend::new(config.clone(), script.clone())) as Box<dyn GenerativeBackend>)
}

/// Mock backend with uniform next-token probability 1/vocab.
pub fn uniform_mock(vocab: usize) -> MockBackend {
    MockBackend::new(
        MockConfig { vocab_size: vocab, init_scale: 0.0, ..MockConfig::default() },
        Arc::new(CompletionScript::default()),
    )
}

/// Learning rates large enough for the bigram mock to move.
pub fn desk_config() -> TrainingConfig {
    let opt = OptimizerSettings {
        epochs: 2,
        batch_size: 2,
        learning_rate: 0.5,
        warmup_ratio: 0.1,
        weight_decay: 0.0,
        grad_clip: 5.0,
    };
    TrainingConfig {
        sft: opt.clone(),
        dpo: OptimizerSettings { epochs: 1, ..opt },
        ..TrainingConfig::default()
    }
}

/// 6 labelled records and 4 unlabelled ones from disjoint sample dialogues.
pub fn small_corpora() -> (Vec<Dialogue>, Vec<LabeledRecord>, Vec<UnlabeledRecord>) {
    let corpus = sample_corpus();
    let labeled: Vec<LabeledRecord> = labeled_from_dialogues(&corpus[..4]).into_iter().take(6).collect();
    let unlabeled: Vec<UnlabeledRecord> = unlabeled_from_dialogues(&corpus[10..14]).into_iter().take(4).collect();
    assert_eq!((labeled.len(), unlabeled.len()), (6, 4));
    (corpus, labeled, unlabeled)
}

pub fn desk_factory(mask: &AblationMask) -> Box<BackendFactory> {
    let corpus = sample_corpus();
    factory_for(build_desk_script(&corpus, mask), MockConfig::default())
}
