mod common;

use common::*;
use ukil::nn::io::save_model;
use ukil::nn::{AdapterConfig, AdapterSet, Gpt2Config, Gpt2Model, Precision};
use ukil::prompts::{build_qa_records, encode, EncodedExample};
use ukil::tokenizer::{Tokenizer, WordTokenizer};
use ukil::train::{
    evaluate_loss, lr_at, probe_window, read_loss_log, train, ConfigSnapshot, RunInfo, TrainConfig, TrainError, Trainable, LOSS_LOG_FILE,
    SNAPSHOT_FILE,
};

const SEQ: usize = 96;

fn dataset(n: usize) -> (Vec<EncodedExample>, usize) {
    let records = build_qa_records(&toy_corpus()).records;
    let tok = WordTokenizer::fit(records.iter().flat_map(|r| [r.prompt.as_str(), r.response.as_str()]), 1, usize::MAX);
    let examples = records.iter().cycle().take(n).map(|r| encode(r, &tok, SEQ).unwrap()).collect();
    (examples, tok.vocab_size())
}

fn small(vocab: usize) -> Gpt2Config {
    Gpt2Config {
        n_positions: SEQ,
        ..Gpt2Config::tiny(vocab)
    }
}

fn one_step(base: &Gpt2Model, data: &[EncodedExample], micro: usize, accum: usize) -> (f64, AdapterSet) {
    let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 7).unwrap();
    let cfg = TrainConfig {
        micro_batch: micro,
        grad_accumulation: accum,
        epochs: 1,
        max_length: SEQ,
        learning_rate: 1e-2,
        warmup_steps: 0,
        ..TrainConfig::default()
    };
    let art = train(
        Trainable::Adapters {
            base,
            adapters: &mut adapters,
        },
        data,
        &[],
        &cfg,
        &RunInfo::default(),
    )
    .unwrap();
    assert_eq!(art.loss_log.len(), 1);
    (art.loss_log[0].loss, adapters)
}

#[test]
fn accumulated_step_matches_full_batch_step() {
    let (data, vocab) = dataset(64);
    let base = Gpt2Model::random(small(vocab), 11).unwrap();
    let (l8, a8) = one_step(&base, &data, 8, 8);
    let (l64, a64) = one_step(&base, &data, 64, 1);
    assert!((l8 - l64).abs() / l64 <= 1e-2, "{l8} vs {l64}");

    let after8 = evaluate_loss(&base, Some(&a8), Precision::F16, &data).unwrap().unwrap();
    let after64 = evaluate_loss(&base, Some(&a64), Precision::F16, &data).unwrap().unwrap();
    assert!((after8 - after64).abs() / after64 <= 1e-2, "{after8} vs {after64}");
}

#[test]
fn accumulation_window_gradients_are_identical() {
    let (data, vocab) = dataset(64);
    let base = Gpt2Model::random(small(vocab), 12).unwrap();
    let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 12).unwrap();
    for p in adapters.params_mut() {
        p.iter_mut().enumerate().for_each(|(i, x)| *x += 0.01 * ((i % 3) as f32 - 1.0));
    }
    let (l8, g8) = probe_window(&base, &adapters, &data, 8, Precision::F16).unwrap();
    let (l64, g64) = probe_window(&base, &adapters, &data, 64, Precision::F16).unwrap();
    assert_eq!(l8, l64);
    assert_eq!(g8, g64);
}

#[test]
fn base_bytes_are_unchanged_by_adapter_training() {
    let (data, vocab) = dataset(70);
    let base = Gpt2Model::random(small(vocab), 13).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&base, &dir.path().join("before")).unwrap();

    let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 13).unwrap();
    let out = dir.path().join("run");
    let cfg = TrainConfig {
        epochs: 2,
        max_length: SEQ,
        ..TrainConfig::default()
    };
    let info = RunInfo {
        base_id: "random-small".into(),
        out_dir: Some(out.clone()),
        ..RunInfo::default()
    };
    let art = train(
        Trainable::Adapters {
            base: &base,
            adapters: &mut adapters,
        },
        &data,
        &data[..8],
        &cfg,
        &info,
    )
    .unwrap();
    save_model(&base, &dir.path().join("after")).unwrap();
    let read = |p: &str| std::fs::read(dir.path().join(p).join("model.safetensors")).unwrap();
    assert_eq!(read("before"), read("after"));

    assert_eq!(art.loss_log.len(), 4);
    assert_eq!(read_loss_log(&out.join(LOSS_LOG_FILE)).unwrap().len(), 4);
    let snap = ConfigSnapshot::read(&out.join(SNAPSHOT_FILE)).unwrap();
    assert_eq!(snap.total_steps, 4);
    assert_eq!(snap.train.effective_batch, 64);
    assert_eq!(snap.base_config, base.config);
    assert!(out.join("adapter_model.safetensors").is_file());
}

#[test]
fn empty_dataset_is_an_error() {
    let base = Gpt2Model::random(small(20), 1).unwrap();
    let mut adapters = AdapterSet::attach(&base.config, &AdapterConfig::default(), 1).unwrap();
    let err = train(
        Trainable::Adapters {
            base: &base,
            adapters: &mut adapters,
        },
        &[],
        &[],
        &TrainConfig::default(),
        &RunInfo::default(),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::EmptyDataset));
}

#[test]
fn linear_schedule_shape() {
    let base = 3e-4f32;
    let close = |a: f32, b: f32| (a - b).abs() <= 1e-6 * b.abs();
    assert_eq!(lr_at(0, 100, 2, base), 0.0);
    assert!(close(lr_at(1, 100, 2, base), base / 2.0));
    assert!(close(lr_at(2, 100, 2, base), base));
    assert!(close(lr_at(51, 100, 2, base), base * 49.0 / 98.0));
    assert_eq!(lr_at(100, 100, 2, base), 0.0);
}
