use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use perforch::gateway::{call_totals, BackoffPolicy, CallLedger, ChatService, Gateway, GatewayError, GroupBy, ProviderSpec, Purpose};

/// Serve one scripted `(status, body)` per connection, recording request bodies.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let seen2 = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen2.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (addr, seen)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn provider(endpoint: &str, var: &str) -> ProviderSpec {
    std::env::set_var(var, "secret-token");
    let mut p = ProviderSpec::openai("remote", endpoint, "gpt-4o", var);
    p.backoff = BackoffPolicy { base_ms: 5, factor: 2.0, jitter: 0.2 };
    p
}

#[test]
fn rate_limited_then_ok_takes_two_attempts() {
    let (addr, seen) = serve(vec![(429, "{}".into()), (200, ok_body("```go\nfunc F(){}\n```"))]);
    let gw = Gateway::new(vec![provider(&addr, "PERFORCH_T_KEY_A")]).unwrap();
    let sink = CallLedger::new();
    let ex = gw.complete("remote", "write F", Purpose::Generate, &sink).unwrap();
    assert_eq!(ex.attempts, 2);
    assert_eq!(ex.response_text, "```go\nfunc F(){}\n```");
    // both attempts are accounted for
    let log = sink.snapshot();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].error.as_deref(), Some("HTTP 429"));
    assert_eq!(call_totals(&log, GroupBy::Provider)["remote"], 2);
    let req: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[1]).unwrap();
    assert_eq!(req["model"], "gpt-4o");
    assert_eq!(req["temperature"], 0.0);
    assert_eq!(req["messages"][0]["content"], "write F");
}

#[test]
fn unauthorized_is_not_retried() {
    let (addr, _) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let gw = Gateway::new(vec![provider(&addr, "PERFORCH_T_KEY_B")]).unwrap();
    let sink = CallLedger::new();
    let err = gw.complete("remote", "x", Purpose::Fix, &sink).unwrap_err();
    assert!(matches!(err, GatewayError::NonRetryable { status: 401, .. }), "{err:?}");
    assert_eq!(sink.len(), 1);
}

#[test]
fn server_errors_exhaust_retries() {
    let (addr, _) = serve(vec![(500, "a".into()), (502, "b".into()), (503, "c".into()), (503, "d".into())]);
    let gw = Gateway::new(vec![provider(&addr, "PERFORCH_T_KEY_C")]).unwrap();
    let sink = CallLedger::new();
    match gw.complete("remote", "x", Purpose::Refine, &sink).unwrap_err() {
        GatewayError::RetriesExhausted { attempts, last_status, .. } => {
            assert_eq!(attempts, 4);
            assert_eq!(last_status, Some(503));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(sink.len(), 4);
    assert_eq!(gw.ledger().len(), 4);
}
