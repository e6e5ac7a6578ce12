//! Boolean sliding-window co-occurrence counts and the coherence metrics built on them.
//!
//! A window of `w` tokens slides one token at a time over each document and
//! never crosses a document boundary. A document with at most `w` tokens (or
//! any document when `w == 0`) is a single window. Each word and each
//! unordered word pair is counted at most once per window.

use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedCorpus, EncodedDoc, Vocabulary};
use crate::error::{Error, Result};
use crate::topic::Topic;

pub const COUNTS_MAGIC: &[u8; 8] = b"TEVCOOC1";

/// Window size recommended for C_v.
pub const CV_WINDOW: usize = 110;
/// Window size used for NPMI model selection.
pub const NPMI_WINDOW: usize = 10;

/// Multiplicative hasher for packed pair keys.
#[derive(Default, Clone, Copy)]
pub struct PairHasher(u64);

impl Hasher for PairHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 = (self.0.rotate_left(5) ^ u64::from(*b)).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
        }
    }
    fn write_u64(&mut self, v: u64) {
        self.0 = (v ^ (v >> 29)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        self.0 ^= self.0 >> 32;
    }
}

pub type PairMap = HashMap<u64, u64, BuildHasherDefault<PairHasher>>;

#[inline]
pub fn pair_key(a: u32, b: u32) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (u64::from(lo) << 32) | u64::from(hi)
}

#[inline]
pub fn unpack_key(k: u64) -> (u32, u32) {
    ((k >> 32) as u32, k as u32)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoocCounts {
    /// Tokens per window; 0 means the whole document.
    pub window_size: usize,
    pub total_windows: u64,
    /// Windows containing each term id.
    pub word_windows: Vec<u64>,
    /// Windows containing both terms, keyed by [`pair_key`].
    pub pair_windows: PairMap,
    pub vocab_hash: u64,
}

impl CoocCounts {
    pub fn empty(window_size: usize, vocab_size: usize, vocab_hash: u64) -> Self {
        Self { window_size, total_windows: 0, word_windows: vec![0; vocab_size], pair_windows: PairMap::default(), vocab_hash }
    }

    pub fn vocab_size(&self) -> usize {
        self.word_windows.len()
    }

    pub fn word(&self, id: u32) -> u64 {
        self.word_windows.get(id as usize).copied().unwrap_or(0)
    }

    /// Joint window count; for `a == b` this is the word's own count.
    pub fn pair(&self, a: u32, b: u32) -> u64 {
        if a == b {
            return self.word(a);
        }
        self.pair_windows.get(&pair_key(a, b)).copied().unwrap_or(0)
    }

    /// Adds another shard's counts. Both shards must describe the same window and vocabulary.
    pub fn merge(&mut self, other: &CoocCounts) -> Result<()> {
        if self.window_size != other.window_size || self.vocab_hash != other.vocab_hash || self.vocab_size() != other.vocab_size() {
            return Err(Error::InvalidInput("cannot merge counts from different windows or vocabularies".into()));
        }
        self.total_windows += other.total_windows;
        for (a, b) in self.word_windows.iter_mut().zip(&other.word_windows) {
            *a += *b;
        }
        for (k, v) in &other.pair_windows {
            *self.pair_windows.entry(*k).or_insert(0) += *v;
        }
        Ok(())
    }

    fn sorted_pairs(&self) -> Vec<(u64, u64)> {
        let mut pairs: Vec<(u64, u64)> = self.pair_windows.iter().map(|(k, v)| (*k, *v)).collect();
        pairs.sort_unstable();
        pairs
    }

    /// Binary layout (little endian): magic, window, vocab hash, vocab size,
    /// total windows, one u64 per term, pair count, then sorted `(key, count)` pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(COUNTS_MAGIC)?;
        for v in [self.window_size as u64, self.vocab_hash, self.vocab_size() as u64, self.total_windows] {
            w.write_all(&v.to_le_bytes())?;
        }
        for c in &self.word_windows {
            w.write_all(&c.to_le_bytes())?;
        }
        let pairs = self.sorted_pairs();
        w.write_all(&(pairs.len() as u64).to_le_bytes())?;
        for (k, v) in pairs {
            w.write_all(&k.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != COUNTS_MAGIC {
            return Err(Error::Format("not a co-occurrence count file (bad magic)".into()));
        }
        let mut next = || -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let window_size = next()? as usize;
        let vocab_hash = next()?;
        let vocab_size = next()? as usize;
        let total_windows = next()?;
        let mut word_windows = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            word_windows.push(next()?);
        }
        let n_pairs = next()? as usize;
        let mut pair_windows = PairMap::default();
        pair_windows.reserve(n_pairs);
        for _ in 0..n_pairs {
            let k = next()?;
            let v = next()?;
            pair_windows.insert(k, v);
        }
        Ok(Self { window_size, total_windows, word_windows, pair_windows, vocab_hash })
    }

    /// Human-readable dump: header comments, then word rows and pair rows.
    pub fn write_tsv<W: Write>(&self, vocab: Option<&Vocabulary>, mut w: W) -> Result<()> {
        let name = |id: u32| vocab.and_then(|v| v.term(id)).map(str::to_string).unwrap_or_else(|| id.to_string());
        writeln!(w, "# window_size={}", self.window_size)?;
        writeln!(w, "# vocab_hash={:016x}", self.vocab_hash)?;
        writeln!(w, "# total_windows={}", self.total_windows)?;
        writeln!(w, "kind\tterm_a\tterm_b\twindows")?;
        for (i, c) in self.word_windows.iter().enumerate() {
            if *c > 0 {
                writeln!(w, "word\t{}\t\t{c}", name(i as u32))?;
            }
        }
        for (k, v) in self.sorted_pairs() {
            let (a, b) = unpack_key(k);
            writeln!(w, "pair\t{}\t{}\t{v}", name(a), name(b))?;
        }
        Ok(())
    }

    /// Checks the subset property of boolean windows.
    pub fn check_invariants(&self) -> Result<()> {
        let max_word = self.word_windows.iter().copied().max().unwrap_or(0);
        if max_word > self.total_windows {
            return Err(Error::Numerical("a word occurs in more windows than exist".into()));
        }
        for (k, v) in &self.pair_windows {
            let (a, b) = unpack_key(*k);
            if a >= b || *v > self.word(a).min(self.word(b)) {
                return Err(Error::Numerical(format!("pair ({a},{b}) violates the subset property")));
            }
        }
        Ok(())
    }
}

/// Which term ids are tracked. Untracked tokens still occupy window positions.
#[derive(Debug, Clone, Default)]
pub enum CountScope {
    #[default]
    All,
    Only(HashSet<u32>),
}

impl CountScope {
    fn tracks(&self, id: u32) -> bool {
        match self {
            CountScope::All => true,
            CountScope::Only(s) => s.contains(&id),
        }
    }

    /// Scope covering the words of a set of topics.
    pub fn for_topics(topics: &[Topic], vocab: &Vocabulary, top_n: usize) -> Self {
        CountScope::Only(topics.iter().flat_map(|t| t.top(top_n)).filter_map(|w| vocab.id(w)).collect())
    }
}

/// Per-shard scratch space sized to the vocabulary.
struct Scratch {
    count: Vec<u32>,
    entered: Vec<u64>,
    slot: Vec<u32>,
    present: Vec<u32>,
}

impl Scratch {
    fn new(v: usize) -> Self {
        Self { count: vec![0; v], entered: vec![0; v], slot: vec![u32::MAX; v], present: Vec::new() }
    }

    fn insert(&mut self, id: u32, window: u64) {
        let i = id as usize;
        if self.count[i] == 0 {
            self.entered[i] = window;
            self.slot[i] = self.present.len() as u32;
            self.present.push(id);
        }
        self.count[i] += 1;
    }

    /// Decrements `id`; when its last occurrence leaves, credits every interval that ended at `last_window`.
    fn remove(&mut self, id: u32, last_window: u64, out: &mut CoocCounts) {
        let i = id as usize;
        self.count[i] -= 1;
        if self.count[i] > 0 {
            return;
        }
        let start = self.entered[i];
        out.word_windows[i] += last_window + 1 - start;
        let s = self.slot[i] as usize;
        self.present.swap_remove(s);
        if let Some(&moved) = self.present.get(s) {
            self.slot[moved as usize] = s as u32;
        }
        self.slot[i] = u32::MAX;
        for &other in &self.present {
            let from = start.max(self.entered[other as usize]);
            if from <= last_window {
                *out.pair_windows.entry(pair_key(id, other)).or_insert(0) += last_window + 1 - from;
            }
        }
    }

    /// Closes every open interval at the end of a document and resets the scratch state.
    fn flush(&mut self, last_window: u64, out: &mut CoocCounts) {
        let present = std::mem::take(&mut self.present);
        for (n, &a) in present.iter().enumerate() {
            let ea = self.entered[a as usize];
            out.word_windows[a as usize] += last_window + 1 - ea;
            for &b in &present[n + 1..] {
                let from = ea.max(self.entered[b as usize]);
                *out.pair_windows.entry(pair_key(a, b)).or_insert(0) += last_window + 1 - from;
            }
            self.count[a as usize] = 0;
            self.slot[a as usize] = u32::MAX;
        }
        self.present = present;
        self.present.clear();
    }
}

fn count_doc(doc: &EncodedDoc, window: usize, scope: &CountScope, scratch: &mut Scratch, out: &mut CoocCounts) {
    let toks = &doc.tokens;
    if toks.is_empty() {
        return;
    }
    let single = window == 0 || toks.len() <= window;
    let n_windows = if single { 1 } else { toks.len() - window + 1 };
    out.total_windows += n_windows as u64;
    let width = if single { toks.len() } else { window };

    for &t in &toks[..width] {
        if scope.tracks(t) {
            scratch.insert(t, 0);
        }
    }
    for s in 1..n_windows {
        // window s covers [s, s + width)
        let incoming = toks[s + width - 1];
        if scope.tracks(incoming) {
            scratch.insert(incoming, s as u64);
        }
        let outgoing = toks[s - 1];
        if scope.tracks(outgoing) {
            scratch.remove(outgoing, s as u64 - 1, out);
        }
    }
    scratch.flush(n_windows as u64 - 1, out);
}

/// Counts one shard of documents sequentially.
pub fn count_shard(docs: &[EncodedDoc], window_size: usize, vocab_size: usize, vocab_hash: u64, scope: &CountScope) -> CoocCounts {
    let mut out = CoocCounts::empty(window_size, vocab_size, vocab_hash);
    let mut scratch = Scratch::new(vocab_size);
    for d in docs {
        count_doc(d, window_size, scope, &mut scratch, &mut out);
    }
    out
}

/// Counts `corpus` split into `shards` contiguous pieces, merged in shard order.
pub fn count_windows_sharded(corpus: &EncodedCorpus, window_size: usize, shards: usize, scope: &CountScope) -> Result<CoocCounts> {
    if corpus.docs.is_empty() {
        return Err(Error::Empty("cannot count windows over an empty corpus".into()));
    }
    let shards = shards.clamp(1, corpus.docs.len());
    let chunk = corpus.docs.len().div_ceil(shards);
    let parts: Vec<CoocCounts> = corpus.docs.par_chunks(chunk).map(|c| count_shard(c, window_size, corpus.vocab_size, corpus.vocab_hash, scope)).collect();
    let mut iter = parts.into_iter();
    let mut total = iter.next().expect("at least one shard");
    for p in iter {
        total.merge(&p)?;
    }
    Ok(total)
}

pub fn count_windows(corpus: &EncodedCorpus, window_size: usize) -> Result<CoocCounts> {
    count_windows_sharded(corpus, window_size, rayon::current_num_threads() * 4, &CountScope::All)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Npmi,
    Cv,
    CUci,
    CUmass,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npmi" => Ok(Metric::Npmi),
            "cv" | "c_v" => Ok(Metric::Cv),
            "c_uci" | "uci" => Ok(Metric::CUci),
            "c_umass" | "umass" => Ok(Metric::CUmass),
            other => Err(Error::InvalidInput(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScore {
    pub metric: Metric,
    /// Mean over scored pairs (or words, for C_v).
    pub value: f64,
    /// Un-averaged sum of the per-pair terms.
    pub sum: f64,
    pub pairs: usize,
    pub top_n: usize,
    pub window_size: usize,
    pub reference_tag: String,
    /// Top words that could not be resolved against the counts.
    pub missing: Vec<String>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CoherenceOptions {
    pub top_n: usize,
    /// Added to the joint probability only.
    pub epsilon: f64,
    pub reference_tag: String,
    /// Refuse C_v on counts whose window is not 110 tokens.
    pub enforce_cv_window: bool,
}

impl Default for CoherenceOptions {
    fn default() -> Self {
        Self { top_n: 10, epsilon: 1e-12, reference_tag: String::new(), enforce_cv_window: true }
    }
}

struct Resolved {
    ids: Vec<u32>,
    missing: Vec<String>,
}

fn resolve(topic: &Topic, counts: &CoocCounts, vocab: &Vocabulary, top_n: usize) -> Result<Resolved> {
    if vocab.hash() != counts.vocab_hash {
        return Err(Error::InvalidInput("counts were built with a different vocabulary".into()));
    }
    let mut ids = Vec::new();
    let mut missing = Vec::new();
    for w in topic.top(top_n) {
        match vocab.id(w) {
            Some(id) if counts.word(id) > 0 => ids.push(id),
            _ => missing.push(w.clone()),
        }
    }
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!("topic {} has {} resolvable top words (missing: {})", topic.key(), ids.len(), missing.join(", "))));
    }
    Ok(Resolved { ids, missing })
}

/// NPMI of one word pair, clamped to [-1, 1].
pub fn pair_npmi(counts: &CoocCounts, a: u32, b: u32, epsilon: f64) -> f64 {
    let total = counts.total_windows as f64;
    let joint = counts.pair(a, b);
    if joint == counts.total_windows {
        return 1.0;
    }
    let pa = counts.word(a) as f64 / total;
    let pb = counts.word(b) as f64 / total;
    let pab = joint as f64 / total + epsilon;
    let v = (pab / (pa * pb)).ln() / -pab.ln();
    v.clamp(-1.0, 1.0)
}

/// Smoothed PMI of one word pair.
pub fn pair_pmi(counts: &CoocCounts, a: u32, b: u32, epsilon: f64) -> f64 {
    let total = counts.total_windows as f64;
    let pa = counts.word(a) as f64 / total;
    let pb = counts.word(b) as f64 / total;
    let pab = counts.pair(a, b) as f64 / total + epsilon;
    (pab / (pa * pb)).ln()
}

fn score_record(metric: Metric, sum: f64, pairs: usize, counts: &CoocCounts, opts: &CoherenceOptions, missing: Vec<String>) -> CoherenceScore {
    CoherenceScore {
        metric,
        value: sum / pairs as f64,
        sum,
        pairs,
        top_n: opts.top_n,
        window_size: counts.window_size,
        reference_tag: opts.reference_tag.clone(),
        missing,
        flags: Vec::new(),
    }
}

/// Mean NPMI over all unordered pairs of the topic's top words.
pub fn npmi_topic(topic: &Topic, counts: &CoocCounts, vocab: &Vocabulary, opts: &CoherenceOptions) -> Result<CoherenceScore> {
    let r = resolve(topic, counts, vocab, opts.top_n)?;
    let mut sum = 0.0;
    let mut pairs = 0;
    for (j, &b) in r.ids.iter().enumerate() {
        for &a in &r.ids[..j] {
            sum += pair_npmi(counts, a, b, opts.epsilon);
            pairs += 1;
        }
    }
    Ok(score_record(Metric::Npmi, sum, pairs, counts, opts, r.missing))
}

/// C_v with one-set segmentation: each word's NPMI vector against the top
/// words, compared by cosine with the summed vector of the whole set.
pub fn cv_topic(topic: &Topic, counts: &CoocCounts, vocab: &Vocabulary, opts: &CoherenceOptions) -> Result<CoherenceScore> {
    if opts.enforce_cv_window && counts.window_size != CV_WINDOW {
        return Err(Error::InvalidInput(format!("C_v expects counts with a {CV_WINDOW}-token window, got {}", counts.window_size)));
    }
    let r = resolve(topic, counts, vocab, opts.top_n)?;
    let n = r.ids.len();
    let vectors: Vec<Vec<f64>> = r.ids.iter().map(|&a| r.ids.iter().map(|&b| pair_npmi(counts, a, b, opts.epsilon)).collect()).collect();
    let context: Vec<f64> = (0..n).map(|j| vectors.iter().map(|v| v[j]).sum()).collect();
    let context_norm = context.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut flags = Vec::new();
    let mut sum = 0.0;
    for (v, id) in vectors.iter().zip(&r.ids) {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || context_norm == 0.0 {
            flags.push(format!("zero_norm:{}", vocab.term(*id).unwrap_or("?")));
            continue;
        }
        let dot: f64 = v.iter().zip(&context).map(|(x, y)| x * y).sum();
        sum += (dot / (norm * context_norm)).clamp(-1.0, 1.0);
    }
    let mut score = score_record(Metric::Cv, sum, n, counts, opts, r.missing);
    score.flags = flags;
    Ok(score)
}

/// C_UCI (windowed PMI) or C_UMass (document co-occurrence, `window_size == 0`).
///
/// C_UMass conditions each pair on the word that appears earlier in the
/// topic ranking: `ln((D(w_m, w_l) + 1) / D(w_l))` for `l < m`.
pub fn legacy_coherence(topic: &Topic, counts: &CoocCounts, vocab: &Vocabulary, metric: Metric, opts: &CoherenceOptions) -> Result<CoherenceScore> {
    let r = resolve(topic, counts, vocab, opts.top_n)?;
    let mut sum = 0.0;
    let mut pairs = 0;
    match metric {
        Metric::CUci => {
            for (m, &b) in r.ids.iter().enumerate() {
                for &a in &r.ids[..m] {
                    sum += pair_pmi(counts, a, b, opts.epsilon);
                    pairs += 1;
                }
            }
        }
        Metric::CUmass => {
            if counts.window_size != 0 {
                return Err(Error::InvalidInput("C_UMass needs document co-occurrence counts (window 0)".into()));
            }
            for (m, &later) in r.ids.iter().enumerate() {
                for &earlier in &r.ids[..m] {
                    sum += ((counts.pair(later, earlier) as f64 + 1.0) / counts.word(earlier) as f64).ln();
                    pairs += 1;
                }
            }
        }
        other => return Err(Error::InvalidInput(format!("{other:?} is not a legacy metric"))),
    }
    Ok(score_record(metric, sum, pairs, counts, opts, r.missing))
}

pub fn score_topic(topic: &Topic, counts: &CoocCounts, vocab: &Vocabulary, metric: Metric, opts: &CoherenceOptions) -> Result<CoherenceScore> {
    match metric {
        Metric::Npmi => npmi_topic(topic, counts, vocab, opts),
        Metric::Cv => cv_topic(topic, counts, vocab, opts),
        Metric::CUci | Metric::CUmass => legacy_coherence(topic, counts, vocab, metric, opts),
    }
}
