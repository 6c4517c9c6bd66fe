//! Golden-file tests for the classification prompt and all four
//! generation variants. Regenerate with UPDATE_GOLDENS=1 after a
//! deliberate template change.

use std::path::PathBuf;

use intent_core::classify::{build_classification_prompt, CLASSIFY_INSTRUCTION};
use intent_core::generation::{
    build_generation_prompt, ConditioningVariant, GenRequest,
};
use intent_core::session::{IntentClass, Page, Session};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/prompts")
}

fn fixture_session() -> Session {
    let page = |attrs: &[(&str, &str)]| {
        Page::new(
            attrs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
        .unwrap()
    };
    Session::new(
        "golden-user",
        vec![
            page(&[("page type", "home")]),
            page(&[("page type", "search"), ("search query", "ceiling fan")]),
            page(&[("page type", "product"), ("product name", "smart ceiling fan")]),
        ],
    )
    .unwrap()
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var("UPDATE_GOLDENS").is_ok() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

fn gen_request(variant: ConditioningVariant, class: Option<IntentClass>) -> GenRequest {
    GenRequest::new(fixture_session(), variant, class, 5, 7).unwrap()
}

#[test]
fn classification_prompt_matches_golden() {
    let prompt = build_classification_prompt(&fixture_session());
    assert!(prompt.starts_with(CLASSIFY_INSTRUCTION));
    check_golden("classification.golden.txt", &prompt);
}

#[test]
fn generation_use_predicted_matches_golden() {
    let prompt = build_generation_prompt(&gen_request(
        ConditioningVariant::UsePredicted,
        Some(IntentClass::Ins),
    ));
    assert!(prompt.contains("but Installation is the most likely."));
    assert!(prompt.contains("Pretend to be this customer, and enumerate 5 questions (1., 2., ...) to ask the chat agent. Don't say anything else."));
    check_golden("generation_use_predicted.golden.txt", &prompt);
}

#[test]
fn generation_use_ground_truth_matches_golden() {
    let prompt = build_generation_prompt(&gen_request(
        ConditioningVariant::UseGroundTruth,
        Some(IntentClass::Ret),
    ));
    assert!(prompt.contains("but Return/Refund is the most likely."));
    check_golden("generation_use_ground_truth.golden.txt", &prompt);
}

#[test]
fn generation_use_all_matches_golden() {
    let prompt = build_generation_prompt(&gen_request(ConditioningVariant::UseAll, None));
    assert!(prompt.contains("Possible topics are "));
    assert!(!prompt.contains("most likely"));
    check_golden("generation_use_all.golden.txt", &prompt);
}

#[test]
fn generation_use_none_matches_golden() {
    let prompt = build_generation_prompt(&gen_request(ConditioningVariant::UseNone, None));
    assert!(!prompt.contains("Possible topics"));
    check_golden("generation_use_none.golden.txt", &prompt);
}

#[test]
fn shuffle_seed_pins_prompt_bytes() {
    let a = build_generation_prompt(&gen_request(ConditioningVariant::UseAll, None));
    let b = build_generation_prompt(&gen_request(ConditioningVariant::UseAll, None));
    assert_eq!(a, b);
    let other_seed =
        GenRequest::new(fixture_session(), ConditioningVariant::UseAll, None, 5, 8).unwrap();
    let c = build_generation_prompt(&other_seed);
    assert_ne!(a, c, "different shuffle seeds should reorder the class list");
}
