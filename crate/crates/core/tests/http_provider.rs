//! The chat-completion client against a local server that scripts status
//! codes.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use forge_core::llm::{fingerprint, DecodeParams, HttpProvider, HttpSettings, Provider, Request, TemplateId};

/// Serves one canned response per connection and records each request body.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<serde_json::Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(serde_json::from_slice(&buf).unwrap());
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn provider(endpoint: String, retries: u32) -> HttpProvider {
    HttpProvider::new(HttpSettings {
        endpoint,
        model: "m-test".into(),
        api_key_env: None,
        retries,
        backoff_ms: 1,
        timeout_s: 5,
    })
}

fn request() -> Request {
    Request {
        template_id: TemplateId::Generate,
        prompt: "write code".into(),
        params: DecodeParams {
            temperature: 0.8,
            max_tokens: Some(64),
            sample: 1,
        },
        fingerprint: fingerprint(TemplateId::Generate, "write code", 1),
    }
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn transient_errors_are_retried() {
    let (url, seen) = serve(vec![(503, "busy".into()), (429, "slow down".into()), (200, ok_body("done"))]);
    assert_eq!(provider(url, 3).complete(&request()).unwrap(), "done");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0]["model"], "m-test");
    assert_eq!(seen[0]["messages"][0]["content"], "write code");
    assert_eq!(seen[0]["temperature"], 0.8);
    assert_eq!(seen[0]["max_tokens"], 64);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "bad request".into())]);
    let err = provider(url, 3).complete(&request()).unwrap_err();
    assert!(err.to_string().contains("status 400"), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn retries_run_out() {
    let (url, seen) = serve(vec![(500, "a".into()), (502, "b".into())]);
    let err = provider(url, 1).complete(&request()).unwrap_err();
    assert!(err.to_string().contains("status 502"), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn malformed_replies_are_errors() {
    let (url, _) = serve(vec![(200, "{\"choices\": []}".into())]);
    let err = provider(url, 2).complete(&request()).unwrap_err();
    assert!(err.to_string().contains("malformed response"), "{err}");
}
