//! Start the HTTP service on a local port with a small model, call every
//! endpoint once and shut down.
//!
//! To serve a trained adapter instead:
//!
//!     ukil serve --base runs/x/base --adapter runs/x --port 8080

use std::sync::Arc;

use anyhow::Result;
use ukil::nn::{AdapterConfig, AdapterSet, Gpt2Config, Gpt2Model, Precision};
use ukil::serve::http::{router, AppState};
use ukil::serve::{bundled_cases, ModelHandle};
use ukil::tokenizer::{Tokenizer, WordTokenizer};

fn post(url: &str, body: &str) -> Result<(u16, String)> {
    let mut resp = ureq::post(url)
        .config()
        .http_status_as_error(false)
        .build()
        .header("content-type", "application/json")
        .send(body)?;
    Ok((resp.status().as_u16(), resp.body_mut().read_to_string()?))
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();

    let cases = bundled_cases();
    let tok = WordTokenizer::fit(cases.iter().map(|c| c.narrative.as_str()), 1, usize::MAX);
    let cfg = Gpt2Config::tiny(tok.vocab_size());
    let model = Gpt2Model::random(cfg.clone(), 42)?;
    let adapters = AdapterSet::attach(&cfg, &AdapterConfig::default(), 42)?;
    let handle = ModelHandle::new(model, Some(adapters), Arc::new(tok), Precision::F32, None);

    let state = AppState::loading(1, cases);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let app = router(state.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });

    let url = base.clone();
    let report = tokio::task::spawn_blocking(move || -> Result<()> {
        let health = |u: &str| -> Result<(u16, String)> {
            let mut r = ureq::get(format!("{u}/v1/health")).config().http_status_as_error(false).build().call()?;
            Ok((r.status().as_u16(), r.body_mut().read_to_string()?))
        };
        println!("health while loading: {:?}", health(&url)?);
        state.set_ready(Arc::new(handle));
        println!("health when ready:    {:?}", health(&url)?);

        let ask = format!("{url}/v1/ask");
        let body = r#"{"question": "Who may prosecute under the Special Powers Act?", "params": {"max_new_tokens": 12}}"#;
        let (code, first) = post(&ask, body)?;
        let (_, second) = post(&ask, body)?;
        let answer = |s: &str| serde_json::from_str::<serde_json::Value>(s).map(|v| v["answer"].clone());
        println!("ask {code}: {first}");
        println!("same answer twice: {}", answer(&first)? == answer(&second)?);
        println!("empty question: {}", post(&ask, r#"{"question": ""}"#)?.0);
        println!("missing question field: {}", post(&ask, r#"{"query": "x"}"#)?.0);
        println!("unparseable body: {}", post(&ask, "{")?.0);

        let text = ureq::get(format!("{url}/v1/cases")).call()?.body_mut().read_to_string()?;
        let cases: serde_json::Value = serde_json::from_str(&text)?;
        for c in cases.as_array().into_iter().flatten() {
            println!("case {} ({}): {}", c["case_id"], c["difficulty"], c["title"]);
        }
        Ok(())
    })
    .await?;
    server.abort();
    report
}
