#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use topeval::rng::replicate_rng;

pub const CLUSTERS: usize = 3;
pub const CLUSTER_WORDS: usize = 25;

/// Four-letter pseudo-word for cluster `c`, slot `j`.
pub fn word(c: usize, j: usize) -> String {
    let l = |i: usize| (b'a' + i as u8) as char;
    format!("zq{}{}", l(c), l(j))
}

/// Raw JSONL corpus: each document draws 40 tokens from a single cluster.
pub fn write_raw_corpus(dir: &Path, docs: usize, seed: u64) -> PathBuf {
    let mut rng = replicate_rng(seed, 0);
    let mut out = String::new();
    for d in 0..docs {
        let c = d % CLUSTERS;
        let text: Vec<String> = (0..40).map(|_| word(c, rng.random_range(0..CLUSTER_WORDS))).collect();
        out.push_str(&serde_json::json!({ "id": format!("doc{d}"), "text": text.join(" ") }).to_string());
        out.push('\n');
    }
    let p = dir.join("raw.jsonl");
    std::fs::write(&p, out).unwrap();
    p
}

/// Small pipeline config over `corpus`; `extra` is appended verbatim.
pub fn write_pipeline_config(dir: &Path, windows: &str, iterations: usize) -> PathBuf {
    let text = format!(
        r#"seed = 17
corpus = "raw.jsonl"
work_dir = "work"

[preprocess]
min_df = 2

[cooc]
windows = {windows}
shards = 3

[train]
budget = 3
top_n = 20

[train.space]
alpha = [0.5, 1.0]
beta = [0.01, 0.05]
iterations = [{iterations}]
optimize_interval = [0]

[train.lda]
k = 3

[score]
metrics = ["npmi", "cv"]

[survey]
distractors = 2
pool = ["pool.jsonl"]
"#
    );
    write_pool(dir);
    let p = dir.join("pipeline.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// Topic file of words that never occur in the corpus.
pub fn write_pool(dir: &Path) -> PathBuf {
    let mut out = String::new();
    for t in 0..2 {
        let words: Vec<String> = (0..12).map(|j| word(10 + t, j)).collect();
        out.push_str(&serde_json::json!({ "source_tag": "other", "topic_id": t, "words": words }).to_string());
        out.push('\n');
    }
    let p = dir.join("pool.jsonl");
    std::fs::write(&p, out).unwrap();
    p
}
