//! HTTP client and LLM-backed generator against a local mock endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use evoskill::evolution::starter_skill;
use evoskill::generators::{GeneratorSession, LlmGenerator, PlanGenerator, ProposeError};
use evoskill::llm::{LlmClient, LlmConfig, LlmError};
use evoskill::plan::{InitSpec, OptimizationPlan, OptimizerSpec};
use evoskill::taskspec::{build_splits, Setting, TaskSpec};
use serde_json::json;

const KEY: &str = "sk-test-0123456789";

#[derive(Debug, Clone)]
struct Seen {
    authorization: String,
    body: String,
}

/// Serve one scripted (status, body) per connection, then stop.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { authorization: auth, body: String::from_utf8(buf).unwrap() });
            let mut stream = reader.into_inner();
            let head = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(body.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn reply(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}], "usage": {"total_tokens": 7}}).to_string()
}

fn client(url: &str, log_dir: Option<std::path::PathBuf>) -> LlmClient {
    let config = LlmConfig { base_url: url.into(), backoff_ms: 1, max_retries: 3, timeout_secs: 10, log_dir, ..LlmConfig::default() };
    LlmClient::with_key(config, KEY.into()).unwrap()
}

fn task() -> TaskSpec {
    build_splits(Setting::Iid, 1).unwrap().train[0].clone()
}

fn plan_reply(t: &TaskSpec) -> String {
    let plan = OptimizationPlan::for_task(t, InitSpec::midpoint(1), OptimizerSpec { method: Default::default(), lr: 0.01, steps: 5, restarts: 0 });
    reply(&format!("Here is the plan.\n```json\n{}\n```\n", plan.to_json()))
}

#[test]
fn rate_limits_and_server_errors_are_retried() {
    let (url, seen) = serve(vec![(429, "slow down".into()), (503, "busy".into()), (200, reply("done"))]);
    let c = client(&url, None);
    let out = c.complete("hello").unwrap();
    assert_eq!(out.text, "done");
    assert_eq!(out.total_tokens, 7);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].authorization, format!("Bearer {KEY}"));
    let body: serde_json::Value = serde_json::from_str(&seen[2].body).unwrap();
    assert_eq!(body["messages"][0]["content"], "hello");
}

#[test]
fn client_errors_fail_without_retry() {
    let (url, seen) = serve(vec![(400, "bad request".into()), (200, reply("unused"))]);
    let err = client(&url, None).complete("hello").unwrap_err();
    assert!(matches!(err, LlmError::Status { status: 400, .. }));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retries_are_bounded() {
    let (url, seen) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into()), (500, "d".into())]);
    let err = client(&url, None).complete("hello").unwrap_err();
    assert!(matches!(err, LlmError::Status { status: 500, .. }));
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn unparseable_reply_gets_one_reask() {
    let t = task();
    let (url, seen) = serve(vec![(200, reply("I think you should use Adam.")), (200, plan_reply(&t))]);
    let generator = LlmGenerator::new(client(&url, None));
    let session = GeneratorSession::new("s", 1, None);
    let proposal = generator.propose(&t, &starter_skill(), &session).unwrap();
    assert_eq!(proposal.tokens, 14);
    assert_eq!(proposal.plan.loss_terms.len(), t.criteria.len());
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen[1].body.len() > seen[0].body.len());
}

#[test]
fn second_bad_reply_is_no_plan() {
    let t = task();
    let (url, _) = serve(vec![(200, reply("no plan")), (200, reply("```json\n{\"oops\": 1}\n```"))]);
    let generator = LlmGenerator::new(client(&url, None));
    let err = generator.propose(&t, &starter_skill(), &GeneratorSession::new("s", 1, None)).unwrap_err();
    assert!(matches!(err, ProposeError::NoPlan(_)));
    assert_eq!(err.category(), evoskill::ErrorCategory::NoCode);
}

#[test]
fn unreachable_backend_is_infrastructure() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let generator = LlmGenerator::new(client(&format!("http://127.0.0.1:{port}/v1"), None));
    let err = generator.propose(&task(), &starter_skill(), &GeneratorSession::new("s", 1, None)).unwrap_err();
    assert!(matches!(err, ProposeError::Transport(_)));
    assert!(err.category().is_excluded());
}

#[test]
fn logs_never_contain_the_key() {
    let echo = reply(&format!("your key was {KEY}"));
    let (url, _) = serve(vec![(200, echo)]);
    let dir = tempfile::tempdir().unwrap();
    let c = client(&url, Some(dir.path().to_path_buf()));
    c.complete(&format!("prompt mentioning {KEY}")).unwrap();
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1);
    let text = std::fs::read_to_string(&entries[0]).unwrap();
    assert!(!text.contains(KEY));
    assert!(text.contains("[REDACTED]"));
}
