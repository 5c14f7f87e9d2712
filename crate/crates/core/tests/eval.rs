mod common;

use std::time::Instant;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ukil::eval::{
    comparison_report, cosine_similarity, error_case, evaluate_model, jaccard, published_reference_rows, read_outputs, write_outputs,
    write_report, ComparisonRow, EvalError, IdfTable, ModelOutput,
};

fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
    items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn hand_computed_fixtures() {
    assert!((jaccard("a b c", "b c d") - 0.5).abs() < 1e-9);
    assert!((cosine_similarity("x y", "x z", &IdfTable::uniform()) - 0.5).abs() < 1e-9);
    assert!((jaccard("Court may act", "court MAY act") - 1.0).abs() < 1e-9);
    let idf = IdfTable::fit(["court may act"]);
    assert!((cosine_similarity("court may act", "court may act", &idf) - 1.0).abs() < 1e-9);
    assert_eq!(jaccard("alpha beta", "gamma delta"), 0.0);
    assert_eq!(cosine_similarity("alpha beta", "gamma delta", &idf), 0.0);
    assert_eq!(jaccard("", ""), 1.0);
    assert_eq!(jaccard("", "a"), 0.0);
    assert_eq!(cosine_similarity("", "a", &idf), 0.0);
}

#[test]
fn brute_force_oracle_agrees_on_random_pairs() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for _ in 0..200 {
        let refs: Vec<String> = (0..5).map(|_| random_text(&mut rng)).collect();
        let ref_slices: Vec<&str> = refs.iter().map(String::as_str).collect();
        let idf = IdfTable::fit(ref_slices.iter().copied());
        for _ in 0..6 {
            let (a, b) = (random_text(&mut rng), random_text(&mut rng));
            assert!((jaccard(&a, &b) - oracle_jaccard(&a, &b)).abs() < 1e-12, "{a:?} {b:?}");
            let uni = cosine_similarity(&a, &b, &IdfTable::uniform());
            assert!((uni - oracle_cosine(&a, &b, None)).abs() < 1e-9, "{a:?} {b:?}");
            let weighted = cosine_similarity(&a, &b, &idf);
            assert!((weighted - oracle_cosine(&a, &b, Some(&ref_slices))).abs() < 1e-9, "{a:?} {b:?}");
            checked += 1;
        }
    }
    assert!(checked >= 1000);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn two_example_means() {
    let refs = pairs(&[("k1", "a b c"), ("k2", "p q")]);
    let outs = pairs(&[("k1", "b c d"), ("k2", "q p")]);
    let r = evaluate_model("m", &outs, &refs).unwrap();
    assert_eq!(r.n, 2);
    assert!((r.mean_jaccard - 0.75).abs() < 1e-9);
    let keys: Vec<&str> = r.per_example.iter().map(|e| e.key.as_str()).collect();
    assert_eq!(keys, ["k1", "k2"]);

    let same = evaluate_model("m", &refs, &refs).unwrap();
    assert!((same.mean_cosine - 1.0).abs() < 1e-9 && (same.mean_jaccard - 1.0).abs() < 1e-9);
}

#[test]
fn means_ignore_example_order() {
    let refs = pairs(&[("a", "one two"), ("b", "two three four"), ("c", "five")]);
    let outs = pairs(&[("a", "one"), ("b", "four two"), ("c", "six five")]);
    let mut rev_refs = refs.clone();
    rev_refs.reverse();
    let mut rev_outs = outs.clone();
    rev_outs.rotate_left(1);
    let x = evaluate_model("m", &outs, &refs).unwrap();
    let y = evaluate_model("m", &rev_outs, &rev_refs).unwrap();
    assert_eq!(x, y);
}

#[test]
fn key_sets_must_match() {
    let refs = pairs(&[("a", "x"), ("b", "y")]);
    let outs = pairs(&[("a", "x"), ("c", "y")]);
    match evaluate_model("m", &outs, &refs) {
        Err(EvalError::KeyMismatch { missing, unexpected }) => {
            assert_eq!(missing, vec!["b".to_string()]);
            assert_eq!(unexpected, vec!["c".to_string()]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn published_error_case_has_low_overlap() {
    let (q, expected, actual) = error_case_triple();
    assert!(q.contains("Power to make rules"));
    let case = error_case(&q, &expected, &actual);
    assert!(case.jaccard < 0.25, "jaccard {}", case.jaccard);
    assert!(case.cosine < 1.0);
    let same = error_case(&q, &expected, &expected);
    assert!((same.cosine - 1.0).abs() < 1e-9 && (same.jaccard - 1.0).abs() < 1e-9);
    let empty = error_case(&q, &expected, "");
    assert_eq!((empty.cosine, empty.jaccard), (0.0, 0.0));
}

#[test]
fn reference_rows_render_verbatim() {
    let c = comparison_report(&published_reference_rows()).unwrap();
    let rows: Vec<Vec<&str>> = c.rows().iter().map(|r| r.iter().map(String::as_str).collect()).collect();
    assert_eq!(
        rows,
        vec![
            vec!["Mistral-7b", "7B", "No", "0.446", "0.122"],
            vec!["Gemma-2b", "2B", "No", "0.436", "0.113"],
            vec!["GPT-2 Medium", "0.345B", "No", "0.178", "0.062"],
            vec!["GPT2-UKIL-EN (Ours)", "0.345B", "Yes", "0.515", "0.133"],
        ]
    );
    assert!(c.to_csv().starts_with("Model,Parameters,Fine-tuned,Cosine Sim.,Jaccard Sim.\n"));
    assert_eq!(c.to_text().lines().count(), 6);

    assert!(matches!(comparison_report(&[]), Err(EvalError::EmptyReport)));
    let missing = ComparisonRow {
        cosine: None,
        ..published_reference_rows()[0].clone()
    };
    assert!(matches!(comparison_report(&[missing]), Err(EvalError::MissingMetric { .. })));
}

#[test]
fn report_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let refs = pairs(&[("k", "a b")]);
    let r = evaluate_model("m", &refs, &refs).unwrap();
    let c = comparison_report(&[ComparisonRow::from_result(&r, "1M", false)]).unwrap();
    let (q, e, a) = error_case_triple();
    write_report(dir.path(), &[r], &c, &[error_case(&q, &e, &a)]).unwrap();
    for f in ["scores.csv", "comparison.csv", "comparison.txt", "errorcases/001.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }

    let outs = vec![ModelOutput {
        key: "k".into(),
        output: "a\nb".into(),
    }];
    let path = dir.path().join("outputs.jsonl");
    write_outputs(&path, &outs).unwrap();
    assert_eq!(read_outputs(&path).unwrap(), outs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_text(&mut rng), random_text(&mut rng));
        let idf = IdfTable::fit([a.as_str()]);
        for (x, y) in [(jaccard(&a, &b), jaccard(&b, &a)), (cosine_similarity(&a, &b, &idf), cosine_similarity(&b, &a, &idf))] {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let shuffled: String = oracle_tokens(&a).into_iter().rev().collect::<Vec<_>>().join("   ");
        prop_assert!((cosine_similarity(&a, &b, &idf) - cosine_similarity(&shuffled, &b, &idf)).abs() < 1e-12);
    }
}
