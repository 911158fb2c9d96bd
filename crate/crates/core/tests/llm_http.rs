use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use dualagent_core::coordinator::{
    llm_alpha, rule_based_alpha, AlphaBounds, DecisionSource, HttpTransport, LlmConfig,
};
use dualagent_core::{ObjectiveVector, OptimizationSummary};

/// Serves `replies` in order, one connection each, and returns the request bodies.
fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut request = vec![0; length];
            reader.read_exact(&mut request).unwrap();
            bodies.push(String::from_utf8(request).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn envelope(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn summary() -> OptimizationSummary {
    OptimizationSummary {
        generation: 20,
        t_max: 50,
        epsilon: 0.04,
        feasibility_rate: 0.9,
        hv_exploit: 0.31,
        hv_explore: 0.36,
        hv_improvement: 0.02,
        avg_violation: 0.01,
        best_objectives: ObjectiveVector::new(0.6, 0.5, 0.4),
        current_alpha: 0.7,
    }
}

#[test]
fn live_client_posts_chat_request_and_parses_reply() {
    let (url, server) = serve(vec![(200, envelope(r#"{"alpha": 0.65, "rationale": "steady progress"}"#))]);
    let config = LlmConfig { url, ..Default::default() };
    let decision = llm_alpha(&summary(), &HttpTransport::new(&config), &config, &AlphaBounds::default());
    assert_eq!(decision.source, DecisionSource::Llm);
    assert_eq!(decision.alpha, 0.65);
    assert_eq!(decision.rationale, "steady progress");

    let bodies = server.join().unwrap();
    let request: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(request["model"], config.model.as_str());
    assert_eq!(request["temperature"], 0.0);
    let messages = request["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert!(messages[1]["content"].as_str().unwrap().contains("20"));
}

#[test]
fn server_errors_are_retried_then_fall_back() {
    let (url, server) = serve(vec![(500, "{}".into()), (200, envelope(r#"{"alpha": 0.5, "rationale": "ok"}"#))]);
    let config = LlmConfig { url, retries: 1, ..Default::default() };
    let decision = llm_alpha(&summary(), &HttpTransport::new(&config), &config, &AlphaBounds::default());
    assert_eq!((decision.source, decision.alpha), (DecisionSource::Llm, 0.5));
    assert_eq!(server.join().unwrap().len(), 2);

    let (url, server) = serve(vec![(500, "{}".into()), (503, "{}".into())]);
    let config = LlmConfig { url, retries: 1, ..Default::default() };
    let decision = llm_alpha(&summary(), &HttpTransport::new(&config), &config, &AlphaBounds::default());
    assert_eq!(decision.source, DecisionSource::LlmFallback);
    assert_eq!(decision.alpha, rule_based_alpha(&summary()).alpha);
    assert!(decision.fallback_reason.is_some());
    server.join().unwrap();
}

#[test]
fn unreachable_endpoint_falls_back() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = LlmConfig {
        url: format!("http://127.0.0.1:{port}/v1/chat/completions"),
        timeout_secs: 2.0,
        ..Default::default()
    };
    let decision = llm_alpha(&summary(), &HttpTransport::new(&config), &config, &AlphaBounds::default());
    assert_eq!(decision.source, DecisionSource::LlmFallback);
}
