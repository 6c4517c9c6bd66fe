//! judge_pair against the scripted mock: verdict parsing and the single
//! re-ask on unparseable output.

use std::io::Write;

use intent_core::gateway::{request_fingerprint, run_mock, Gateway, GatewayConfig};
use intent_core::judge::{judge_messages, judge_pair, JudgeConfig, JudgeError};

fn boot_with(entries: &[serde_json::Value]) -> (tempfile::TempDir, intent_core::gateway::MockServer) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for e in entries {
        writeln!(f, "{e}").unwrap();
    }
    let server = run_mock(&path, 0).unwrap();
    (dir, server)
}

fn gateway(url: String) -> Gateway {
    Gateway::new(GatewayConfig {
        endpoint: url,
        timeout_ms: 5_000,
        max_retries: 0,
        backoff_ms: 1,
        max_in_flight: 1,
        api_key_env: None,
    })
    .unwrap()
}

#[test]
fn yes_and_no_verdicts() {
    let fp_a = request_fingerprint(&judge_messages("intent one", "candidate one"));
    let fp_b = request_fingerprint(&judge_messages("intent two", "candidate two"));
    let (_dir, server) = boot_with(&[
        serde_json::json!({"match": fp_a, "reply": "Yes", "status": 200}),
        serde_json::json!({"match": fp_b, "reply": "No", "status": 200}),
    ]);
    let gw = gateway(server.url());
    let cfg = JudgeConfig::default();
    assert_eq!(judge_pair(&gw, &cfg, "intent one", "candidate one").unwrap(), 1);
    assert_eq!(judge_pair(&gw, &cfg, "intent two", "candidate two").unwrap(), 0);
    server.shutdown();
}

#[test]
fn unparseable_then_no_resolves_to_zero_via_reask() {
    let fp = request_fingerprint(&judge_messages("true intent", "odd candidate"));
    let (_dir, server) = boot_with(&[
        serde_json::json!({"match": fp, "reply": "Maybe", "status": 200}),
        serde_json::json!({"match": fp, "reply": "no.", "status": 200}),
    ]);
    let gw = gateway(server.url());
    let cfg = JudgeConfig::default();
    assert_eq!(judge_pair(&gw, &cfg, "true intent", "odd candidate").unwrap(), 0);
    assert_eq!(server.transcript().len(), 2, "one re-ask expected");
    server.shutdown();
}

#[test]
fn twice_unparseable_falls_back_to_zero() {
    let fp = request_fingerprint(&judge_messages("a", "b"));
    let (_dir, server) = boot_with(&[
        serde_json::json!({"match": fp, "reply": "Hmm", "status": 200}),
        serde_json::json!({"match": fp, "reply": "Unsure", "status": 200}),
    ]);
    let gw = gateway(server.url());
    assert_eq!(judge_pair(&gw, &JudgeConfig::default(), "a", "b").unwrap(), 0);
    assert_eq!(server.transcript().len(), 2);
    server.shutdown();
}

#[test]
fn deterministic_given_the_same_fixture() {
    let entries: Vec<serde_json::Value> = (0..2)
        .map(|_| {
            let fp = request_fingerprint(&judge_messages("same intent", "same candidate"));
            serde_json::json!({"match": fp, "reply": "Yes", "status": 200})
        })
        .collect();
    let (_dir, server) = boot_with(&entries);
    let gw = gateway(server.url());
    let cfg = JudgeConfig::default();
    let a = judge_pair(&gw, &cfg, "same intent", "same candidate").unwrap();
    let b = judge_pair(&gw, &cfg, "same intent", "same candidate").unwrap();
    assert_eq!(a, b);
    server.shutdown();
}

#[test]
fn empty_intents_are_rejected() {
    let (_dir, server) = boot_with(&[]);
    let gw = gateway(server.url());
    assert!(matches!(
        judge_pair(&gw, &JudgeConfig::default(), "", "x"),
        Err(JudgeError::EmptyIntent)
    ));
    server.shutdown();
}
