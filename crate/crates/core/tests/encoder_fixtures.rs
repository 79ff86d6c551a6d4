use std::path::Path;

use sde_core::corpus::{generate_synthetic, SyntheticConfig};
use sde_core::encoder::{build_vocab, tokenize_with, HashedEncoder};

const GOLDEN: &str = "fixtures/golden/hashed_cosine.txt";
const GOLDEN_TOL: f64 = 1e-12;
const MIN_COVERAGE: f64 = 0.95;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

/// Set `SDE_BLESS=1` to rewrite the pinned value.
#[test]
fn hashed_cosine_matches_golden() {
    let e = HashedEncoder { seed: 0, dim: 64 };
    let got = cosine(&e.token_vector("name"), &e.token_vector("city"));
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("SDE_BLESS").is_some() {
        std::fs::write(&path, format!("{got:.17e}\n")).unwrap();
    }
    let pinned: f64 = std::fs::read_to_string(&path)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(
        (got - pinned).abs() < GOLDEN_TOL,
        "cosine {got} vs pinned {pinned}"
    );
    assert!(got.abs() < 1.0);
}

#[test]
fn synthetic_vocabulary_covers_the_corpus() {
    let (corpus, graphs) = generate_synthetic(&SyntheticConfig::default(), 0).unwrap();
    let node_texts: Vec<String> = graphs
        .iter()
        .flat_map(|g| g.nodes.iter().map(|n| n.text.clone()))
        .collect();
    let texts: Vec<&str> = corpus
        .texts()
        .chain(node_texts.iter().map(String::as_str))
        .collect();
    let vocab = build_vocab(texts.iter().copied(), 2000);
    assert!(vocab.len() <= 2000);
    let (mut whole, mut total) = (0usize, 0usize);
    for t in &texts {
        for tok in tokenize_with(&vocab, t).tokens {
            total += 1;
            whole += usize::from(!tok.piece);
        }
    }
    let coverage = whole as f64 / total as f64;
    assert!(
        coverage >= MIN_COVERAGE,
        "coverage {coverage:.4} over {total} tokens"
    );
}
