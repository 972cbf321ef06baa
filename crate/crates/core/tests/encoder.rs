use std::collections::HashSet;

use adenorm::encoder::{hash_ngrams, ngram_bucket, EncoderConfig, NgramEncoder, TextEncoder};
use adenorm::seed::rng_for;
use adenorm::Error;
use proptest::prelude::*;
use rand::Rng;

fn small() -> EncoderConfig {
    EncoderConfig {
        dim: 16,
        num_buckets: 4096,
        seed: 11,
        ..EncoderConfig::default()
    }
}

fn random_strings(count: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_for(seed);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(4..24);
            (0..len)
                .map(|_| {
                    if rng.gen_bool(0.12) {
                        ' '
                    } else {
                        rng.gen_range(b'a'..=b'z') as char
                    }
                })
                .collect::<String>()
        })
        .filter(|s| !s.trim().is_empty())
        .collect()
}

/// Padded grams of an already-normalized string.
fn grams(text: &str, lo: usize, hi: usize) -> Vec<String> {
    let chars: Vec<char> = format!("#{text}#").chars().collect();
    let mut out = Vec::new();
    for n in lo..=hi {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// Upper critical value of chi-square with `df` degrees of freedom at
/// p = 0.001 (Wilson-Hilferty approximation).
fn chi_square_critical(df: f64) -> f64 {
    let z = 3.090_232_306;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn buckets_of_distinct_grams_are_near_uniform() {
    let buckets = 1024;
    let config = EncoderConfig {
        num_buckets: buckets,
        ..small()
    };
    let strings = random_strings(10_000, 5);
    let mut distinct = HashSet::new();
    for s in &strings {
        let norm = adenorm::text::normalize(s);
        let gs = grams(&norm, config.ngram_min, config.ngram_max);
        // cross-check the library's enumeration against this one
        let mine: Vec<u32> = gs.iter().map(|g| ngram_bucket(g, buckets)).collect();
        assert_eq!(hash_ngrams(s, &config).unwrap(), mine, "{s:?}");
        distinct.extend(gs);
    }
    let mut counts = vec![0u64; buckets];
    for g in &distinct {
        counts[ngram_bucket(g, buckets) as usize] += 1;
    }
    let expected = distinct.len() as f64 / buckets as f64;
    assert!(expected > 50.0, "too few grams: {}", distinct.len());
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = chi_square_critical((buckets - 1) as f64);
    assert!(chi2 < critical, "chi2 {chi2:.1} >= critical {critical:.1}");
}

#[test]
fn batch_of_ten_thousand() {
    let enc = NgramEncoder::new(small()).unwrap();
    let texts = random_strings(10_000, 9);
    let m = enc.encode_batch(&texts).unwrap();
    assert_eq!((m.rows(), m.cols()), (texts.len(), 16));
    for i in [0, 1023, 1024, 5000, texts.len() - 1] {
        assert_eq!(m.row(i), enc.encode(&texts[i]).unwrap().as_slice());
    }
    // encoding never materializes table rows
    assert_eq!(enc.materialized_rows(), 0);
}

#[test]
fn batch_reports_index_of_empty_text() {
    let enc = NgramEncoder::new(small()).unwrap();
    let err = enc.encode_batch(&["ok", "fine", " \t "]).unwrap_err();
    assert!(matches!(err, Error::EmptyInputAt { index: 2 }), "{err:?}");
    let m = enc.encode_batch(&["a", "a"]).unwrap();
    assert_eq!(m.row(0), m.row(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn outputs_have_unit_norm(text in "\\PC{1,40}") {
        let enc = NgramEncoder::new(small()).unwrap();
        match enc.encode(&text) {
            Ok(v) => prop_assert!((v.norm() - 1.0).abs() < 1e-12),
            Err(Error::EmptyInput) => prop_assert!(adenorm::text::normalize(&text).is_empty()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn batch_equals_singles(texts in prop::collection::vec("[a-z ]{0,6}[a-z][a-z ]{0,10}", 1..20)) {
        let enc = NgramEncoder::new(small()).unwrap();
        let m = enc.encode_batch(&texts).unwrap();
        for (i, t) in texts.iter().enumerate() {
            let single = enc.encode(t).unwrap();
            prop_assert_eq!(m.row(i), single.as_slice());
        }
    }

    #[test]
    fn encoding_is_deterministic_across_instances(text in "[a-z]{1,12}") {
        let a = NgramEncoder::new(small()).unwrap();
        let b = NgramEncoder::new(small()).unwrap();
        prop_assert_eq!(a.encode(&text).unwrap(), b.encode(&text).unwrap());
    }
}
