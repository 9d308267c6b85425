use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Mutex;

use metarl::metadistill::Candidate;
use metarl::metallm::*;
use metarl::numcore::RngStream;
use metarl::symdsl::Signature;
use metarl::Error;

const WARM: &str = "relu((r - clip(r, 1 - eps, 1 + eps)) * A)";

fn reply(name: &str, code: &str) -> String {
    serde_json::json!({"thought": "try this", "name": name, "code": code}).to_string()
}

fn warm() -> ProposalRecord {
    ProposalRecord::new("ppo_clip", "clipped objective", WARM)
}

#[test]
fn drift_prompt_matches_golden_file() {
    let p = build_prompt(ProposalKind::Drift, &Signature::drift(), &[warm()]).unwrap();
    let golden = include_str!("data/drift_prompt.txt");
    assert_eq!(p, golden.trim_end_matches('\n'));
}

#[test]
fn prompt_structure() {
    let mut h = warm();
    h.fitness = Some(12.5);
    for kind in [ProposalKind::Drift, ProposalKind::OptimizerFf] {
        let p = build_prompt(kind, &kind.signature(), std::slice::from_ref(&h)).unwrap();
        let t = p.find("\"thought\"").unwrap();
        let n = p.find("\"name\"").unwrap();
        let c = p.find("\"code\"").unwrap();
        assert!(t < n && n < c);
        assert!(p.ends_with("Please generate the next one."));
        assert!(p.contains("\"fitness\": 12.5"));
        for (name, _) in kind.signature().entries() {
            assert!(p.contains(&format!("`{name}`")));
        }
    }
    let d = build_prompt(ProposalKind::Drift, &Signature::drift(), &[warm()]).unwrap();
    assert!(d.contains("non-negative everywhere"));
    assert!(build_prompt(ProposalKind::Drift, &Signature::drift(), &[]).is_err());
}

#[test]
fn feedback_messages() {
    assert_eq!(fitness_message(3.25), "Fitness: 3.25. Please generate the next one.");
    assert!(invalid_code_message("boom").starts_with("Code not valid. Error:"));
    assert!(invalid_code_message("boom").contains("boom"));
}

#[test]
fn response_parsing() {
    let (rec, e) = parse_response(&format!("Sure!\n```json\n{}\n```", reply("a", "(r - 1) * A")), ProposalKind::Drift).unwrap();
    assert_eq!(rec.name, "a");
    assert_eq!(e.size(), 5);
    assert!(matches!(parse_response("no json here", ProposalKind::Drift), Err(Error::Format(_))));
    assert!(matches!(
        parse_response(r#"{"thought": "x", "code": "r"}"#, ProposalKind::Drift),
        Err(Error::MissingKey(k)) if k == "name"
    ));
    assert!(matches!(
        parse_response(&reply("b", "ratio_old * A"), ProposalKind::Drift),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        parse_response(&reply("c", "lr * g"), ProposalKind::Drift),
        Err(Error::Validation(_))
    ));
    assert!(parse_response(&reply("c", "lr * g"), ProposalKind::OptimizerFf).is_ok());
    assert!(matches!(
        parse_response(r#"{"thought": "x", "name": 3, "code": "r"}"#, ProposalKind::Drift),
        Err(Error::Format(_))
    ));
}

#[test]
fn drift_validity_checks() {
    let rng = RngStream::new(0, 0);
    let sig = Signature::drift();
    let ok = |s: &str| check_drift_validity(&metarl::symdsl::parse(s, &sig).unwrap(), 256, &rng).is_ok();
    assert!(ok(WARM));
    assert!(ok("square(r - 1) * abs(A)"));
    assert!(!ok("(r - 1) * A"));
    assert!(!ok("r"));
    assert!(!ok("abs(A)"));
}

#[test]
fn scripted_loop_feedback_and_selection() {
    let mut model = MockModel::scripted([
        reply("bad", "r - 1").as_str(),
        reply("same", "max(0, (r - clip(r, 1 - eps, 1 + eps)) * A)").as_str(),
        reply("worse", "1000 * square(r - 1) * (1 + abs(A))").as_str(),
    ]);
    let seen = Mutex::new(Vec::new());
    let eval = |c: Candidate| {
        let Candidate::Expr(e) = c else { panic!("expected expression") };
        let s = metarl::symdsl::print_expr(e);
        seen.lock().unwrap().push(s.clone());
        if s.contains("1000") {
            1.0
        } else {
            10.0
        }
    };
    let out = propose_loop(&mut model, ProposalKind::Drift, warm(), &eval, &LoopConfig::new(2), &RngStream::new(1, 0)).unwrap();
    assert_eq!(model.calls, 3);
    assert_eq!(out.evaluated, 2);
    assert_eq!(seen.lock().unwrap().len(), 3);
    let conv = &out.conversation;
    assert_eq!(conv.count_user_messages_starting_with("Code not valid. Error:"), 1);
    assert_eq!(conv.count_user_messages_starting_with("Fitness: "), 2);
    assert!(conv.messages.iter().any(|m| m.content == "Fitness: 10. Please generate the next one."));
    assert_eq!(out.best.name, "same");
    assert_eq!(out.best_index, 2);
    assert_eq!(conv.records.len(), 4);
    assert!(conv.records[1].error.is_some());
    assert!(out.aborted.is_none());
}

#[test]
fn budget_zero_only_measures_the_warm_start() {
    let mut model = MockModel::scripted(Vec::<String>::new());
    let out = propose_loop(&mut model, ProposalKind::Drift, warm(), &|_: Candidate| 4.0, &LoopConfig::new(0), &RngStream::new(0, 0)).unwrap();
    assert_eq!(model.calls, 0);
    assert_eq!(out.best_index, 0);
    assert_eq!(out.best.fitness, Some(4.0));
    assert_eq!(out.conversation.messages.len(), 1);
}

#[test]
fn worse_proposals_keep_the_warm_start() {
    let mut model = MockModel::scripted([reply("w", "square(r - 1)"), reply("x", "abs(r - 1) * square(r - 1)")]);
    let eval = |c: Candidate| match c {
        Candidate::Expr(e) if metarl::symdsl::print_expr(e).contains("clip") => 5.0,
        _ => 1.0,
    };
    let out = propose_loop(&mut model, ProposalKind::Drift, warm(), &eval, &LoopConfig::new(2), &RngStream::new(0, 0)).unwrap();
    assert_eq!(out.best_index, 0);
    assert_eq!(out.best.name, "ppo_clip");
}

#[test]
fn consecutive_invalid_replies_abort() {
    let mut model = MockModel::scripted(["nope", "still nope", "no", "never read"]);
    let out = propose_loop(&mut model, ProposalKind::Drift, warm(), &|_: Candidate| 1.0, &LoopConfig::new(5), &RngStream::new(0, 0)).unwrap();
    assert_eq!(model.calls, 3);
    assert!(out.aborted.is_some());
    assert_eq!(out.evaluated, 0);
    assert_eq!(out.best_index, 0);
}

#[test]
fn transcript_replay_reproduces_the_run() {
    let script = [reply("a", "square(r - 1) * abs(A)"), reply("b", WARM)];
    let eval = |c: Candidate| match c {
        Candidate::Expr(e) => e.size() as f64,
        _ => 0.0,
    };
    let mut m1 = MockModel::scripted(script.clone());
    let first = propose_loop(&mut m1, ProposalKind::Drift, warm(), &eval, &LoopConfig::new(2), &RngStream::new(0, 0)).unwrap();
    let dir = tempdir();
    let path = dir.join("conv.json");
    first.conversation.save(&path).unwrap();
    let loaded = Conversation::load(&path).unwrap();
    assert_eq!(loaded, first.conversation);
    let mut m2 = MockModel::from_transcript(&loaded.messages);
    let second = propose_loop(&mut m2, ProposalKind::Drift, warm(), &eval, &LoopConfig::new(2), &RngStream::new(0, 0)).unwrap();
    assert_eq!(second.conversation, first.conversation);
}

#[test]
fn optimizer_loop_accepts_any_valid_expression() {
    let mut model = MockModel::scripted([reply("sgd", "lr * g"), reply("mom", "lr * m_0_9")]);
    let out = propose_loop(
        &mut model,
        ProposalKind::OptimizerFf,
        ProposalRecord::new("sgd0", "", "lr * g"),
        &|_: Candidate| 2.0,
        &LoopConfig::new(2),
        &RngStream::new(0, 0),
    )
    .unwrap();
    assert_eq!(out.evaluated, 2);
    assert_eq!(out.best.name, "mom");
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("metarl-llm-{}-{:?}", std::process::id(), std::thread::current().id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// Serves one canned chat-completions response and hands back the request.
fn one_shot_server(status: &'static str, body: String) -> (String, std::thread::JoinHandle<String>) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", l.local_addr().unwrap());
    let h = std::thread::spawn(move || {
        let (s, _) = l.accept().unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut head = String::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            if line.to_ascii_lowercase().starts_with("content-length:") {
                len = line[15..].trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut b = vec![0; len];
        r.read_exact(&mut b).unwrap();
        let mut s = s;
        write!(s, "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
        head + &String::from_utf8(b).unwrap()
    });
    (url, h)
}

fn endpoint(url: String, key_env: &str) -> LlmEndpoint {
    LlmEndpoint {
        base_url: url,
        model: "test-model".into(),
        api_key_env: key_env.into(),
        temperature: 0.5,
        timeout_s: 10,
        retries: 0,
    }
}

#[test]
fn http_client_sends_key_from_environment() {
    std::env::set_var("METARL_TEST_KEY_A", "sekret");
    let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "hello"}}]}).to_string();
    let (url, h) = one_shot_server("200 OK", body);
    let mut m = HttpChatModel::new(endpoint(url, "METARL_TEST_KEY_A")).unwrap();
    let out = m.complete(&[Message::user("hi")]).unwrap();
    assert_eq!(out, "hello");
    let req = h.join().unwrap();
    assert!(req.starts_with("POST /v1/chat/completions"));
    assert!(req.to_ascii_lowercase().contains("authorization: bearer sekret"));
    assert!(req.contains("\"model\":\"test-model\""));
    assert!(req.contains("\"content\":\"hi\""));
}

#[test]
fn http_client_reports_errors() {
    assert!(matches!(
        HttpChatModel::new(endpoint("http://127.0.0.1:1".into(), "METARL_TEST_KEY_UNSET")),
        Err(Error::Config(_))
    ));
    std::env::set_var("METARL_TEST_KEY_B", "k");
    let (url, h) = one_shot_server("500 Internal Server Error", "{}".into());
    let mut m = HttpChatModel::new(endpoint(url, "METARL_TEST_KEY_B")).unwrap();
    assert!(matches!(m.complete(&[Message::user("hi")]), Err(Error::Transport(_))));
    h.join().unwrap();
    let (url, h) = one_shot_server("200 OK", "{\"choices\": []}".into());
    let mut m = HttpChatModel::new(endpoint(url, "METARL_TEST_KEY_B")).unwrap();
    assert!(matches!(m.complete(&[Message::user("hi")]), Err(Error::Format(_))));
    h.join().unwrap();
}

#[test]
fn transport_failure_ends_the_loop_with_the_best_so_far() {
    let mut model = MockModel::scripted([reply("a", "square(r - 1)")]);
    let out = propose_loop(&mut model, ProposalKind::Drift, warm(), &|_: Candidate| 3.0, &LoopConfig::new(3), &RngStream::new(0, 0)).unwrap();
    assert_eq!(out.evaluated, 1);
    assert!(out.aborted.unwrap().contains("no scripted responses"));
    assert_eq!(out.best.name, "a");
}
