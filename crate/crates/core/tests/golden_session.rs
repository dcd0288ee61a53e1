//! Replays a recorded NDJSON session and compares every response line with
//! the stored transcript. Set `NBB_UPDATE_GOLDEN=1` to rewrite the transcript.

use std::path::PathBuf;

use nbb_core::controller::protocol::handle_line;
use nbb_core::{BoardConfig, Controller};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn replay() -> String {
    let session = std::fs::read_to_string(data("session.ndjson")).unwrap();
    let mut ctrl = Controller::new(BoardConfig::default().with_shape(2, 2, nbb_core::Topology::Passive1R)).unwrap();
    let mut out = String::new();
    for line in session.lines() {
        out.push_str(&handle_line(&mut ctrl, line).to_line());
        out.push('\n');
    }
    out
}

#[test]
fn session_replay_is_byte_identical() {
    let first = replay();
    assert_eq!(first, replay());
    let golden = data("session.golden.ndjson");
    if std::env::var_os("NBB_UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &first).unwrap();
    }
    let stored = std::fs::read_to_string(&golden).expect("golden transcript present");
    assert_eq!(first, stored);
}

#[test]
fn transcript_has_one_response_per_line_with_echoed_ids() {
    let session = std::fs::read_to_string(data("session.ndjson")).unwrap();
    let responses = replay();
    assert_eq!(session.lines().count(), responses.lines().count());
    for (req, resp) in session.lines().zip(responses.lines()) {
        let resp: serde_json::Value = serde_json::from_str(resp).unwrap();
        let id = serde_json::from_str::<serde_json::Value>(req)
            .ok()
            .and_then(|v| v.get("id").cloned())
            .unwrap_or(serde_json::Value::Null);
        assert_eq!(resp["id"], id);
    }
}
