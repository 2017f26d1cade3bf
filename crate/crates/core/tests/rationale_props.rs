use ens_core::catalog::{EmotionLabel, StrategyLabel};
use ens_core::rationale::{
    apply_mask, parse_tagged_target, parse_with_mask, render_tagged_target, AblationMask, Component,
    EnsCotRationale,
};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "offer", "salary", "the", "a", "fair", "deal", "budget", "time", "we", "can", "agree", "on",
    "flexible", "hours", "worry", "team", "share", "costs", "next", "week", "1,000", "isn't",
];

fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..10).prop_map(|w| format!("{}.", w.join(" ")))
}

fn rationale() -> impl Strategy<Value = EnsCotRationale> {
    (
        0usize..12,
        0usize..12,
        prop::collection::vec(phrase(), 5),
        phrase(),
    )
        .prop_map(|(e, s, parts, reply)| {
            let strategy = StrategyLabel::ALL[s];
            EnsCotRationale::full(
                EmotionLabel::ALL[e],
                parts[0].clone(),
                parts[1].clone(),
                parts[2].clone(),
                parts[3].clone(),
                strategy,
                format!("{}, the agent uses {strategy}.", parts[4].trim_end_matches('.')),
                format!("Okay! {reply}"),
            )
        })
}

fn mutate(text: &str, kind: u8, at: usize) -> String {
    let cut = |t: &str| {
        let mut i = at % (t.len() + 1);
        while !t.is_char_boundary(i) {
            i -= 1;
        }
        i
    };
    match kind % 8 {
        0 => text[..cut(text)].to_string(),
        1 => text.replacen("</R>", "", 1),
        2 => text.replacen("<A>", "<A> <A>", 1),
        3 => text.replacen("The agent chooses ", "The agent picks ", 1),
        4 => text.replacen("The user feels ", "The user feels bananas ", 1),
        5 => format!("junk {text}"),
        6 => text.replacen(", the agent uses ", " and so ", 1),
        _ => {
            let i = cut(text);
            format!("{}\u{0}{}", &text[..i], &text[i..])
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn render_parse_render_is_identity(r in rationale()) {
        let full = AblationMask::full();
        let t = render_tagged_target(&r, &r.response, &full).unwrap();
        let (back, answer) = parse_tagged_target(t.as_str()).unwrap();
        prop_assert_eq!(&back, &r);
        let again = render_tagged_target(&back, &answer, &full).unwrap();
        prop_assert_eq!(again.as_str(), t.as_str());
    }

    #[test]
    fn corrupted_texts_give_errors_not_panics(r in rationale(), kind in 0u8..8, at in 0usize..400) {
        let t = render_tagged_target(&r, &r.response, &AblationMask::full()).unwrap();
        let bad = mutate(t.as_str(), kind, at);
        if parse_with_mask(&bad, &AblationMask::full()).is_ok() {
            // only an untouched prefix cut or a stray byte inside free text survives
            prop_assert!(kind % 8 == 7 || (kind % 8 == 0 && bad == t.as_str()), "accepted: {bad}");
        }
    }

    #[test]
    fn masked_targets_hold_exactly_the_mask(r in rationale(), id in 0u8..6) {
        let mask = AblationMask::setting(id).unwrap();
        let t = render_tagged_target(&r, &r.response, &mask).unwrap();
        let (parsed, _) = parse_with_mask(t.as_str(), &mask).unwrap();
        prop_assert_eq!(parsed.components().len(), mask.len());
        for c in Component::ALL {
            prop_assert_eq!(parsed.has(c), mask.includes(c));
        }
        prop_assert_eq!(&parsed, &apply_mask(&r, &mask).unwrap());
    }
}

#[test]
fn mask_three_drops_strategy_components() {
    let mask = AblationMask::setting(3).unwrap();
    let r = EnsCotRationale::full(
        EmotionLabel::Fear,
        "the contract length.",
        "a short contract is risky.",
        "a short contract can be renewed.",
        "renewal is a chance to renegotiate.",
        StrategyLabel::EscalateAssurance,
        "answer the worry directly, the agent uses escalate assurance.",
        "I can offer a renewal clause in writing.",
    );
    let t = render_tagged_target(&r, &r.response, &mask).unwrap();
    assert!(!t.as_str().contains(Component::Strategy.lead_in()));
    assert!(!t.as_str().contains("the agent uses"));
    let full = render_tagged_target(&r, &r.response, &AblationMask::full()).unwrap();
    let zero = render_tagged_target(&r, &r.response, &AblationMask::setting(0).unwrap()).unwrap();
    assert_eq!(full, zero);
}

#[test]
fn response_is_required_in_every_mask() {
    assert!(AblationMask::new([Component::Emotion, Component::Strategy]).is_err());
    for id in AblationMask::SETTING_IDS {
        assert!(AblationMask::setting(id).unwrap().includes(Component::Response));
    }
    assert!(AblationMask::setting(6).is_none());
}
