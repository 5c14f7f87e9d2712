mod common;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use tower::ServiceExt;
use ukil::nn::io::{save_adapters, save_model};
use ukil::nn::{AdapterConfig, AdapterSet, Gpt2Config, Gpt2Model, QuantConfig};
use ukil::prompts::build_qa_records;
use ukil::serve::http::{router, AppState};
use ukil::serve::{
    ask, bundled_cases, load, run_cases, Answer, Answerer, Difficulty, GenerationParams, ServeError, Strategy, Transcript, DISCLAIMER,
    TOKENIZER_FILE,
};
use ukil::tokenizer::{Tokenizer, WordTokenizer};

fn small_config(vocab: usize) -> Gpt2Config {
    Gpt2Config {
        n_positions: 96,
        ..Gpt2Config::tiny(vocab)
    }
}

/// Writes a random small model and a word tokenizer fitted on the toy corpus.
fn write_base(dir: &Path) -> Gpt2Config {
    let records = build_qa_records(&toy_corpus()).records;
    let tok = WordTokenizer::fit(records.iter().flat_map(|r| [r.prompt.as_str(), r.response.as_str()]), 1, usize::MAX);
    let cfg = small_config(tok.vocab_size());
    save_model(&Gpt2Model::random(cfg.clone(), 5).unwrap(), dir).unwrap();
    tok.save(&dir.join(TOKENIZER_FILE)).unwrap();
    cfg
}

fn short() -> GenerationParams {
    GenerationParams {
        max_new_tokens: Some(12),
        ..GenerationParams::default()
    }
}

#[test]
fn greedy_answers_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_base(dir.path());
    let handle = load(dir.path(), None, Some(&QuantConfig::default())).unwrap();
    let q = "What do you know about \"The Pensions Act\", \"1871\", Bangladesh?";
    let first = handle.answer(q, &short()).unwrap();
    for _ in 0..3 {
        assert_eq!(handle.answer(q, &short()).unwrap().text.as_bytes(), first.text.as_bytes());
    }
    let reloaded = load(dir.path(), None, Some(&QuantConfig::default())).unwrap();
    assert_eq!(reloaded.answer(q, &short()).unwrap(), first);
    assert_eq!(reloaded.fingerprint(), handle.fingerprint());

    let sampled = GenerationParams {
        strategy: Strategy::Sampled,
        seed: 9,
        ..short()
    };
    assert_eq!(handle.answer(q, &sampled).unwrap(), handle.answer(q, &sampled).unwrap());
}

#[test]
fn missing_files_are_load_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load(dir.path(), None, None), Err(ServeError::LoadError { .. })));
    write_base(dir.path());
    std::fs::remove_file(dir.path().join(TOKENIZER_FILE)).unwrap();
    assert!(matches!(load(dir.path(), None, None), Err(ServeError::LoadError { .. })));

    let dir = tempfile::tempdir().unwrap();
    write_base(dir.path());
    let missing = dir.path().join("nope/adapter_model.safetensors");
    assert!(matches!(load(dir.path(), Some(&missing), None), Err(ServeError::LoadError { .. })));
}

#[test]
fn adapter_for_another_base_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_base(&dir.path().join("base"));
    let adapters_dir = dir.path().join("adapters");
    std::fs::create_dir_all(&adapters_dir).unwrap();

    let narrow = Gpt2Config { n_embd: 32, ..cfg.clone() };
    let wrong = AdapterSet::attach(&narrow, &AdapterConfig::default(), 1).unwrap();
    let wrong_path = adapters_dir.join("narrow.safetensors");
    save_adapters(&wrong, &narrow, &wrong_path).unwrap();
    assert!(matches!(load(&dir.path().join("base"), Some(&wrong_path), None), Err(ServeError::AdapterMismatch(_))));

    let mut right = AdapterSet::attach(&cfg, &AdapterConfig::default(), 1).unwrap();
    right.params_mut()[1].iter_mut().for_each(|x| *x = 0.01);
    let right_path = adapters_dir.join("right.safetensors");
    save_adapters(&right, &cfg, &right_path).unwrap();
    let plain = load(&dir.path().join("base"), None, None).unwrap();
    let adapted = load(&dir.path().join("base"), Some(&right_path), None).unwrap();
    assert!(adapted.adapters.is_some());
    assert_ne!(plain.fingerprint(), adapted.fingerprint());
}

#[test]
fn overlong_and_empty_prompts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_base(dir.path());
    let handle = load(dir.path(), None, None).unwrap();
    let long = "act ".repeat(200);
    assert!(matches!(handle.answer(&long, &short()), Err(ServeError::PromptTooLong { window: 96, .. })));
    assert!(matches!(ask(&handle, "   ", &short()), Err(ServeError::EmptyQuestion)));
}

#[test]
fn bundled_cases_are_hard_easy_medium() {
    let cases = bundled_cases();
    let ids: Vec<u32> = cases.iter().map(|c| c.case_id).collect();
    assert_eq!(ids, [1, 2, 3]);
    let d: Vec<Difficulty> = cases.iter().map(|c| c.difficulty).collect();
    assert_eq!(d, [Difficulty::Hard, Difficulty::Easy, Difficulty::Medium]);
    assert!(cases.iter().all(|c| !c.narrative.is_empty() && !c.question.is_empty()));
}

struct Stub {
    calls: AtomicUsize,
    delay: Duration,
}

impl Stub {
    fn new(delay_ms: u64) -> Arc<Self> {
        Arc::new(Self {
            calls: AtomicUsize::new(0),
            delay: Duration::from_millis(delay_ms),
        })
    }
}

impl Answerer for Stub {
    fn answer(&self, question: &str, params: &GenerationParams) -> Result<Answer, ServeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        if question.len() > 5000 {
            return Err(ServeError::PromptTooLong {
                tokens: question.len(),
                window: 5000,
            });
        }
        let n = params.max_new_tokens.unwrap_or(usize::MAX);
        let text: String = question.chars().rev().take(n).collect();
        Ok(Answer {
            truncated: text.chars().count() < question.chars().count(),
            text,
        })
    }

    fn fingerprint(&self) -> String {
        "stub-0001".into()
    }
}

#[test]
fn run_cases_persists_transcripts() {
    let stub = Stub::new(0);
    assert!(matches!(run_cases(stub.as_ref(), &[], None), Err(ServeError::EmptyCases)));
    let dir = tempfile::tempdir().unwrap();
    let out = run_cases(stub.as_ref(), &bundled_cases(), Some(dir.path())).unwrap();
    assert_eq!(out.len(), 3);
    for t in &out {
        let path = dir.path().join(format!("case-{}.json", t.case_id.unwrap()));
        let back: Transcript = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(&back, t);
        assert_eq!(t.model_fingerprint, "stub-0001");
    }
    let all: Vec<Transcript> = serde_json::from_str(&std::fs::read_to_string(dir.path().join("transcripts.json")).unwrap()).unwrap();
    assert_eq!(all, out);
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, serde_json::Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn api_contract_with_stub() {
    let start = Instant::now();
    let stub = Stub::new(0);
    let app = router(AppState::ready(stub.clone(), 2, bundled_cases()));

    let (s, v) = call(&app, "POST", "/v1/ask", r#"{"question":"abc"}"#).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["answer"], "cba");
    assert_eq!(v["truncated"], false);
    assert_eq!(v["model"], "stub-0001");
    assert_eq!(v["disclaimer"], DISCLAIMER);
    assert!(v["latency_ms"].as_f64().unwrap() >= 0.0);

    let (s, v) = call(&app, "POST", "/v1/ask", r#"{"question":"abcdef","params":{"max_new_tokens":2}}"#).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["answer"].as_str(), v["truncated"].as_bool()), (Some("fe"), Some(true)));

    for bad in [r#"{}"#, r#"{"q":"x"}"#, r#"{"question":7}"#, r#"{"question":"x","params":{"strategy":"beam"}}"#, r#"[]"#] {
        let (s, v) = call(&app, "POST", "/v1/ask", bad).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        assert_eq!(v["disclaimer"], DISCLAIMER);
    }
    assert_eq!(call(&app, "POST", "/v1/ask", r#"{"question":""}"#).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", "/v1/ask", r#"{"question":" \n "}"#).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let long = format!(r#"{{"question":"{}"}}"#, "a".repeat(6000));
    assert_eq!(call(&app, "POST", "/v1/ask", &long).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "POST", "/v1/ask", "{oops").await.0, StatusCode::BAD_REQUEST);

    let (s, v) = call(&app, "GET", "/v1/health", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["model_fingerprint"], "stub-0001");

    let (s, v) = call(&app, "GET", "/v1/cases", "").await;
    assert_eq!(s, StatusCode::OK);
    let difficulties: Vec<&str> = v.as_array().unwrap().iter().map(|c| c["difficulty"].as_str().unwrap()).collect();
    assert_eq!(difficulties, ["hard", "easy", "medium"]);

    assert_eq!(call(&app, "GET", "/v1/nope", "").await.0, StatusCode::NOT_FOUND);
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn loading_then_ready_then_failed() {
    let state = AppState::loading(1, bundled_cases());
    let app = router(state.clone());
    let (s, v) = call(&app, "GET", "/v1/health", "").await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::SERVICE_UNAVAILABLE, Some("loading")));
    assert_eq!(call(&app, "POST", "/v1/ask", r#"{"question":"x"}"#).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&app, "GET", "/v1/cases", "").await.0, StatusCode::OK);

    state.set_ready(Stub::new(0));
    assert_eq!(call(&app, "POST", "/v1/ask", r#"{"question":"x"}"#).await.0, StatusCode::OK);

    state.set_failed("disk gone".into());
    let (s, v) = call(&app, "GET", "/v1/health", "").await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::SERVICE_UNAVAILABLE, Some("failed")));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_are_bounded_by_the_pool() {
    let stub = Stub::new(100);
    let app = router(AppState::ready(stub.clone(), 2, vec![]));
    let start = Instant::now();
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", "/v1/ask", &format!(r#"{{"question":"q{i}"}}"#)).await })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let (s, v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["answer"], format!("{i}q"));
    }
    // Six 100 ms answers through two workers take at least three rounds.
    assert!(start.elapsed() >= Duration::from_millis(290), "{:?}", start.elapsed());
    assert_eq!(stub.calls.load(Ordering::SeqCst), 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn real_model_over_http_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_base(dir.path());
    let handle = Arc::new(load(dir.path(), None, None).unwrap());
    let app = router(AppState::ready(handle, 1, bundled_cases()));
    let body = r#"{"question":"What do you know about \"The Pensions Act\", \"1871\", Bangladesh?","params":{"max_new_tokens":8}}"#;
    let (s1, v1) = call(&app, "POST", "/v1/ask", body).await;
    let (s2, v2) = call(&app, "POST", "/v1/ask", body).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(v1["answer"], v2["answer"]);
    assert_eq!(v1["model"], v2["model"]);
}
