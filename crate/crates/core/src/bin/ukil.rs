use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use ukil::corpus::{self, CachePolicy, Fetcher, HtmlLayout, HtmlLayoutAdapter, JsonLayoutAdapter, LayoutAdapter, RateLimiter, RawCache, RetryPolicy};
use ukil::eval::{self, ComparisonRow, ModelOutput};
use ukil::nn::io::{save_model, CONFIG_FILE};
use ukil::nn::{quantize_base, AdapterConfig, AdapterSet, Gpt2Config, Gpt2Model, QuantConfig, QuantSupport};
use ukil::prompts::{self, SplitSpec};
use ukil::serve::{self, http, Answerer, GenerationParams, Strategy, TOKENIZER_FILE};
use ukil::survey;
use ukil::tokenizer::{Tokenizer, WordTokenizer};
use ukil::train::{self, RunInfo, TrainConfig, TrainMode, Trainable};

#[derive(Parser)]
#[command(name = "ukil", version, about = "Legal question answering: corpus, dataset, fine-tuning, evaluation, serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Html,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch the act listing and every linked act page into the raw cache.
    Scrape {
        #[arg(long, env = corpus::PORTAL_URL_ENV)]
        base_url: String,
        #[arg(long, default_value = "index.html")]
        listing: String,
        #[arg(long, default_value = "raw-cache")]
        cache: PathBuf,
        #[arg(long, value_enum, default_value = "html")]
        layout: Layout,
        /// Ignore cached copies and fetch again.
        #[arg(long)]
        refresh: bool,
        /// Requests per second.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
    },
    /// Parse cached act pages into a corpus JSON file.
    BuildCorpus {
        #[arg(long, default_value = "raw-cache")]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "html")]
        layout: Layout,
        /// Leave out acts marked as repealed.
        #[arg(long)]
        drop_repealed: bool,
    },
    /// Print corpus size and mean field lengths.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Check a corpus against the schema rules; exits non-zero on errors.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Build question/answer records and the seeded train/validation split.
    MakePrompts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        val_size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fine-tune low-rank adapters on a base model.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// A model directory, or `tiny` for a small randomly initialized model
        /// with a word tokenizer fitted on the data.
        #[arg(long)]
        base: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f32,
        #[arg(long, default_value_t = 8)]
        micro_batch: usize,
        /// Keep the base in full precision instead of 4-bit.
        #[arg(long)]
        no_quant: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Score model outputs against references and write the report directory.
    Eval {
        #[arg(long)]
        refs: PathBuf,
        /// `name=path` or just `path`; repeatable.
        #[arg(long, required = true)]
        outputs: Vec<String>,
        #[arg(long)]
        report: PathBuf,
        /// Parameter count shown in the comparison table, `name=value`.
        #[arg(long)]
        parameters: Vec<String>,
        /// Names of fine-tuned models.
        #[arg(long)]
        fine_tuned: Vec<String>,
        /// Append the reference rows of the published comparison.
        #[arg(long)]
        with_reference_rows: bool,
        #[arg(long, default_value_t = 5)]
        error_cases: usize,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Answer one question locally or through a running server, or answer a
    /// whole prompt file.
    Ask {
        question: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
        /// Base URL of a running server, e.g. http://127.0.0.1:8080.
        #[arg(long)]
        server: Option<String>,
        /// Prompt records (JSONL) to answer in batch.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Where batch answers go.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sample: bool,
        #[arg(long)]
        max_new_tokens: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Answer the bundled case studies and store transcripts.
    RunCases {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "reports/cases")]
        out: PathBuf,
        /// Case file; the bundled cases are used when absent.
        #[arg(long)]
        cases: Option<PathBuf>,
    },
    /// Recompute the expert survey tables and reconcile them with published means.
    Survey {
        /// Histogram CSV; the bundled transcription when absent.
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        published: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    adapter: Option<PathBuf>,
    #[arg(long)]
    no_quant: bool,
}

impl ModelArgs {
    fn load(&self) -> Result<serve::ModelHandle> {
        let base = self.base.as_deref().context("--base is required")?;
        let quant = (!self.no_quant).then(QuantConfig::default);
        Ok(serve::load(base, self.adapter.as_deref(), quant.as_ref())?)
    }
}

fn adapter_for(layout: Layout) -> Result<Box<dyn LayoutAdapter>> {
    Ok(match layout {
        Layout::Html => Box::new(HtmlLayoutAdapter::new(HtmlLayout::default())?),
        Layout::Json => Box::new(JsonLayoutAdapter),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Scrape {
            base_url,
            listing,
            cache,
            layout,
            refresh,
            rate,
        } => {
            let fetcher = Fetcher::new(
                RawCache::open(cache)?,
                RateLimiter::new(rate, 1.0, Duration::from_secs(30)),
                RetryPolicy::default(),
            );
            let policy = if refresh { CachePolicy::Refresh } else { CachePolicy::PreferCache };
            let s = corpus::scrape(&fetcher, adapter_for(layout)?.as_ref(), &base_url, &listing, policy)?;
            println!("listed {}  fetched {}  from cache {}  failed {}", s.listed, s.fetched, s.from_cache, s.failed.len());
            for (link, err) in &s.failed {
                println!("  {link}: {err}");
            }
        }
        Command::BuildCorpus {
            cache,
            out,
            layout,
            drop_repealed,
        } => {
            let mut acts = corpus::build_corpus(&RawCache::open(cache)?, adapter_for(layout)?.as_ref())?;
            if drop_repealed {
                acts = corpus::filter_repealed(&acts);
            }
            corpus::write_corpus(&out, &acts)?;
            println!("wrote {} acts to {}", acts.len(), out.display());
        }
        Command::Stats { corpus: path } => {
            let stats = corpus::corpus_stats(&corpus::read_corpus(&path)?)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Validate { corpus: path } => {
            let report = corpus::validate_corpus(&corpus::read_corpus(&path)?);
            for v in report.errors.iter() {
                println!("error   act {} section {:?}: {} ({})", v.act_id, v.section_id, v.message, v.rule.as_str());
            }
            for v in report.warnings.iter() {
                println!("warning act {} section {:?}: {} ({})", v.act_id, v.section_id, v.message, v.rule.as_str());
            }
            println!("{} acts checked, {} errors, {} warnings", report.checked_acts, report.errors.len(), report.warnings.len());
            if !report.is_ok() {
                std::process::exit(1);
            }
        }
        Command::MakePrompts {
            corpus: path,
            out,
            val_size,
            seed,
        } => {
            let build = prompts::build_qa_records(&corpus::read_corpus(&path)?);
            for issue in build.warnings() {
                tracing::warn!(act = issue.act_id, section = ?issue.section_id, "{}", issue.message);
            }
            let errors: Vec<_> = build.errors().collect();
            if !errors.is_empty() {
                for issue in &errors {
                    eprintln!("act {} section {:?}: {}", issue.act_id, issue.section_id, issue.message);
                }
                bail!("{} records could not be built", errors.len());
            }
            let (train_set, val_set) = prompts::split(
                &build.records,
                SplitSpec {
                    validation_size: val_size,
                    seed,
                },
            )?;
            fs::create_dir_all(&out)?;
            prompts::write_jsonl(&out.join("all.jsonl"), &build.records)?;
            prompts::write_jsonl(&out.join("train.jsonl"), &train_set)?;
            prompts::write_jsonl(&out.join("val.jsonl"), &val_set)?;
            println!(
                "{} records ({} train, {} validation); published dataset had {}",
                build.records.len(),
                train_set.len(),
                val_set.len(),
                prompts::PUBLISHED_PROMPT_COUNT
            );
        }
        Command::Train {
            train: train_path,
            val,
            base,
            out,
            epochs,
            lr,
            micro_batch,
            no_quant,
            seed,
        } => run_train(&train_path, &val, &base, &out, epochs, lr, micro_batch, no_quant, seed)?,
        Command::Eval {
            refs,
            outputs,
            report,
            parameters,
            fine_tuned,
            with_reference_rows,
            error_cases,
        } => {
            let records = prompts::read_jsonl(&refs)?;
            let references: Vec<(String, String)> = records.iter().map(|r| (r.key(), r.response.clone())).collect();
            let questions: BTreeMap<String, String> = records.iter().map(|r| (r.key(), r.prompt.clone())).collect();
            let ref_map: BTreeMap<String, String> = references.iter().cloned().collect();
            let params: BTreeMap<&str, &str> = parameters.iter().filter_map(|p| p.split_once('=')).collect();
            let mut results = Vec::new();
            let mut rows = Vec::new();
            let mut cases = Vec::new();
            for spec in &outputs {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), p)
                    }
                };
                let outs: Vec<(String, String)> = eval::read_outputs(&path)?.into_iter().map(|o| (o.key, o.output)).collect();
                let result = eval::evaluate_model(&name, &outs, &references)?;
                println!("{name}: cosine {:.3}  jaccard {:.3}  (n = {})", result.mean_cosine, result.mean_jaccard, result.n);
                let out_map: BTreeMap<String, String> = outs.into_iter().collect();
                cases.extend(eval::worst_cases(&result, &questions, &out_map, &ref_map, error_cases));
                rows.push(ComparisonRow::from_result(
                    &result,
                    params.get(name.as_str()).copied().unwrap_or("?"),
                    fine_tuned.contains(&name),
                ));
                results.push(result);
            }
            if with_reference_rows {
                rows.extend(eval::published_reference_rows());
            }
            let comparison = eval::comparison_report(&rows)?;
            eval::write_report(&report, &results, &comparison, &cases)?;
            print!("{}", comparison.to_text());
        }
        Command::Serve {
            model,
            port,
            host,
            workers,
        } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host or port")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(http::serve(addr, workers, serve::bundled_cases(), move || {
                let handle = model.load().map_err(|e| match e.downcast::<serve::ServeError>() {
                    Ok(se) => se,
                    Err(other) => serve::ServeError::GenerationError(other.to_string()),
                })?;
                Ok(Arc::new(handle) as Arc<dyn Answerer>)
            }))?;
        }
        Command::Ask {
            question,
            model,
            server,
            prompts: prompt_file,
            out,
            sample,
            max_new_tokens,
            seed,
        } => {
            let params = GenerationParams {
                strategy: if sample { Strategy::Sampled } else { Strategy::Greedy },
                max_new_tokens,
                seed,
                ..Default::default()
            };
            if let Some(path) = prompt_file {
                let out = out.context("--out is required with --prompts")?;
                let handle = model.load()?;
                let records = prompts::read_jsonl(&path)?;
                let mut answers = Vec::with_capacity(records.len());
                for r in &records {
                    let a = handle.answer(&r.prompt, &params)?;
                    answers.push(ModelOutput {
                        key: r.key(),
                        output: a.text,
                    });
                }
                eval::write_outputs(&out, &answers)?;
                println!("wrote {} answers to {}", answers.len(), out.display());
                return Ok(());
            }
            let question = question.context("a question is required")?;
            if let Some(url) = server {
                let body = serde_json::json!({ "question": question, "params": params }).to_string();
                let mut resp = ureq::post(format!("{}/v1/ask", url.trim_end_matches('/')))
                    .header("content-type", "application/json")
                    .send(body)?;
                let text = resp.body_mut().read_to_string()?;
                let v: serde_json::Value = serde_json::from_str(&text)?;
                println!("{}", v["answer"].as_str().unwrap_or(&text));
                if let Some(d) = v["disclaimer"].as_str() {
                    eprintln!("{d}");
                }
            } else {
                let t = serve::ask(&model.load()?, &question, &params)?;
                println!("{}", t.answer);
                eprintln!("({:.0} ms, truncated: {}) {}", t.latency_ms, t.truncated, serve::DISCLAIMER);
            }
        }
        Command::RunCases { model, out, cases } => {
            let cases = match cases {
                Some(p) => serve::read_cases(&p)?,
                None => serve::bundled_cases(),
            };
            let transcripts = serve::run_cases(&model.load()?, &cases, Some(&out))?;
            for t in &transcripts {
                println!("case {}: {} characters, truncated {}", t.case_id.unwrap_or_default(), t.answer.chars().count(), t.truncated);
            }
            println!("transcripts in {}", out.display());
        }
        Command::Survey { counts, published, out } => {
            let matrix = match counts {
                Some(p) => survey::ingest_star_table(&p)?,
                None => survey::bundled_counts(),
            };
            let table = match published {
                Some(p) => survey::read_published(&p)?,
                None => survey::bundled_published(),
            };
            let report = survey::survey_report(&matrix, Some(&table))?;
            for (case, avg) in &report.case_averages {
                println!("case {case} average {avg:.2}");
            }
            if let Some(o) = report.overall_from_published {
                println!("overall (published per-case values) {o:.2}");
            }
            if let Some(c) = &report.consistency {
                println!("flags: {}", c.flags().join("; "));
            }
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train(train_path: &Path, val_path: &Path, base: &str, out: &Path, epochs: usize, lr: f32, micro_batch: usize, no_quant: bool, seed: u64) -> Result<()> {
    let train_records = prompts::read_jsonl(train_path)?;
    let val_records = prompts::read_jsonl(val_path)?;
    let (mut model, tok, base_dir) = if base == "tiny" {
        let texts = train_records.iter().chain(&val_records).flat_map(|r| [r.prompt.as_str(), r.response.as_str()]);
        let tok = WordTokenizer::fit(texts, 1, 50_000);
        let model = Gpt2Model::random(Gpt2Config::tiny(tok.vocab_size()), seed)?;
        let dir = out.join("base");
        save_model(&model, &dir)?;
        tok.save(&dir.join(TOKENIZER_FILE))?;
        (model, tok, dir)
    } else {
        let dir = PathBuf::from(base);
        if !dir.join(CONFIG_FILE).is_file() {
            bail!("{} is not a model directory (no {CONFIG_FILE})", dir.display());
        }
        let model = ukil::nn::io::load_model(&dir)?;
        let tok = WordTokenizer::load(&dir.join(TOKENIZER_FILE))?;
        (model, tok, dir)
    };
    let max_length = prompts::MAX_LENGTH.min(model.config.n_positions);
    let encode = |records: &[prompts::PromptRecord]| -> Result<Vec<_>> {
        Ok(records.iter().map(|r| prompts::encode(r, &tok, max_length)).collect::<Result<Vec<_>, _>>()?)
    };
    let (train_set, val_set) = (encode(&train_records)?, encode(&val_records)?);

    let quant = (!no_quant).then(|| quantize_base(&mut model, &QuantConfig::default(), &QuantSupport::detect()));
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        micro_batch,
        grad_accumulation: 64 / micro_batch.max(1),
        seed,
        mode: TrainMode::Adapters,
        ..Default::default()
    };
    let mut adapters = AdapterSet::attach(&model.config, &AdapterConfig::default(), seed)?;
    println!("trainable parameters: {}", adapters.num_trainable());
    let info = RunInfo {
        base_id: base_dir.display().to_string(),
        tokenizer: format!("word ({} entries)", tok.vocab_size()),
        quant,
        out_dir: Some(out.to_path_buf()),
    };
    let artifact = train::train(
        Trainable::Adapters {
            base: &model,
            adapters: &mut adapters,
        },
        &train_set,
        &val_set,
        &cfg,
        &info,
    )?;
    println!(
        "loss {:.4} -> {:.4} over {} steps; adapter in {}; serve with --base {} --adapter {}",
        artifact.initial_loss().unwrap_or(f64::NAN),
        artifact.final_loss().unwrap_or(f64::NAN),
        artifact.loss_log.len(),
        out.display(),
        base_dir.display(),
        out.display()
    );
    Ok(())
}
