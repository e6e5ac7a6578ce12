//! Document preprocessing and vocabulary construction.
//!
//! Training and reference corpora go through the same [`Preprocessor`]; the
//! vocabulary is built from the training side only and reused to encode every
//! reference corpus, so reference counts never introduce new terms.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

/// Bundled English stopword list (spaCy 3.x `en` defaults, 326 entries).
const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");
pub const BUNDLED_STOPWORDS_VERSION: &str = "spacy-en-3.x";

/// Magic header of the binary encoded-corpus format.
pub const ENCODED_MAGIC: &[u8; 8] = b"TEVENC01";

/// A caller-supplied entity span: character offsets `[start, end)` plus a kind label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan(pub usize, pub usize, pub String);

impl EntitySpan {
    pub fn start(&self) -> usize {
        self.0
    }
    pub fn end(&self) -> usize {
        self.1
    }
    pub fn kind(&self) -> &str {
        &self.2
    }
}

/// One input line of a corpus JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<EntitySpan>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub id: String,
    pub tokens: Vec<String>,
    /// Whitespace-separated tokens that survived truncation, before any filtering.
    pub source_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntityPolicy {
    /// Use supplied spans when present, otherwise the capitalization heuristic.
    #[default]
    Auto,
    Spans,
    Heuristic,
    Off,
}

fn default_entity_kinds() -> Vec<String> {
    ["ORG", "PERSON", "FAC", "FACILITY", "GPE", "LOC"].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Keep at most this many whitespace tokens per document (5,000 for news, 19,000 for wiki).
    pub truncate_tokens: Option<usize>,
    /// Documents with fewer whitespace tokens are skipped entirely.
    pub min_whitespace_tokens: usize,
    /// Encoded documents shorter than this are dropped.
    pub min_doc_tokens: usize,
    pub entity_policy: EntityPolicy,
    /// Span kinds that are joined into a single token; empty accepts every kind.
    pub entity_kinds: Vec<String>,
    /// Replace the bundled stopword list with a newline-separated file.
    pub stopwords_file: Option<std::path::PathBuf>,
    pub max_df_ratio: f64,
    /// Overrides the corpus-size rule for the minimum document frequency.
    pub min_df: Option<usize>,
    pub min_term_chars: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            truncate_tokens: Some(5_000),
            min_whitespace_tokens: 25,
            min_doc_tokens: 5,
            entity_policy: EntityPolicy::Auto,
            entity_kinds: default_entity_kinds(),
            stopwords_file: None,
            max_df_ratio: 0.9,
            min_df: None,
            min_term_chars: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    pub fn bundled() -> Self {
        Self::from_list(BUNDLED_STOPWORDS)
    }

    pub fn from_list(list: &str) -> Self {
        let words = list.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_lowercase).collect();
        Self { words }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Rule that removed a vocabulary candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropRule {
    Length,
    Pattern,
    MinDf,
    MaxDf,
}

fn term_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\w-]*[a-zA-Z][\w-]*$").expect("static regex"))
}

/// The four vocabulary predicates, in the order they are reported.
pub fn check_term(term: &str, doc_freq: usize, min_df: usize, max_df: f64, min_chars: usize) -> Option<DropRule> {
    if term.chars().count() < min_chars {
        Some(DropRule::Length)
    } else if !term_pattern().is_match(term) {
        Some(DropRule::Pattern)
    } else if doc_freq < min_df {
        Some(DropRule::MinDf)
    } else if doc_freq as f64 > max_df {
        Some(DropRule::MaxDf)
    } else {
        None
    }
}

/// Unrounded power-law document-frequency floor, `2 * (0.02 |D|)^log10(e)`.
pub fn min_doc_frequency_raw(corpus_size: usize) -> Result<f64> {
    if corpus_size == 0 {
        return Err(Error::Domain("minimum document frequency needs corpus_size >= 1".into()));
    }
    Ok(2.0 * (0.02 * corpus_size as f64).powf(std::f64::consts::LOG10_E))
}

/// Minimum document frequency for a corpus of `corpus_size` documents: the raw
/// power law rounded half-up and floored at 2.
pub fn min_doc_frequency(corpus_size: usize) -> Result<usize> {
    let raw = min_doc_frequency_raw(corpus_size)?;
    Ok(((raw + 0.5).floor() as usize).max(2))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    #[serde(skip)]
    term_to_id: HashMap<String, u32>,
    doc_freq: Vec<usize>,
    pub corpus_size: usize,
    pub min_df: usize,
    pub min_df_raw: f64,
    pub max_df_ratio: f64,
    /// Every rejected candidate with the first rule it failed, sorted by term.
    #[serde(default)]
    pub dropped: Vec<(String, DropRule)>,
}

impl Vocabulary {
    /// Assemble a vocabulary from already-filtered terms.
    pub fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>, corpus_size: usize, min_df: usize, max_df_ratio: f64) -> Result<Self> {
        if terms.len() != doc_freq.len() {
            return Err(Error::InvalidInput("terms and doc_freq lengths differ".into()));
        }
        let mut vocab = Self { terms, term_to_id: HashMap::new(), doc_freq, corpus_size, min_df, min_df_raw: min_df as f64, max_df_ratio, dropped: Vec::new() };
        vocab.reindex()?;
        Ok(vocab)
    }

    fn reindex(&mut self) -> Result<()> {
        self.term_to_id = HashMap::with_capacity(self.terms.len());
        for (i, t) in self.terms.iter().enumerate() {
            if self.term_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary term {t:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.term_to_id.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self, id: u32) -> usize {
        self.doc_freq[id as usize]
    }

    pub fn max_df(&self) -> f64 {
        self.max_df_ratio * self.corpus_size as f64
    }

    /// Identity of the term list; stored in encoded corpora and count files.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# corpus_size={}", self.corpus_size)?;
        writeln!(w, "# min_df={}", self.min_df)?;
        writeln!(w, "# min_df_raw={}", self.min_df_raw)?;
        writeln!(w, "# max_df_ratio={}", self.max_df_ratio)?;
        writeln!(w, "term\tid\tdoc_freq")?;
        for (i, t) in self.terms.iter().enumerate() {
            writeln!(w, "{t}\t{i}\t{}", self.doc_freq[i])?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut meta = HashMap::new();
        let mut terms = Vec::new();
        let mut dfs = Vec::new();
        let mut seen_header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if let Some(kv) = line.strip_prefix("# ") {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if !seen_header {
                if line != "term\tid\tdoc_freq" {
                    return Err(Error::Format(format!("vocabulary header expected at line {}", lineno + 1)));
                }
                seen_header = true;
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(term), Some(id), Some(df), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format(format!("bad vocabulary row at line {}", lineno + 1)));
            };
            let id: usize = id.parse().map_err(|_| Error::Format(format!("bad id at line {}", lineno + 1)))?;
            if id != terms.len() {
                return Err(Error::Format(format!("non-contiguous id {id} at line {}", lineno + 1)));
            }
            terms.push(term.to_string());
            dfs.push(df.parse().map_err(|_| Error::Format(format!("bad doc_freq at line {}", lineno + 1)))?);
        }
        let get = |k: &str| -> Result<String> { meta.get(k).cloned().ok_or_else(|| Error::Format(format!("missing vocabulary metadata {k}"))) };
        let parse_err = |k: &str| Error::Format(format!("bad vocabulary metadata {k}"));
        let mut vocab = Self::from_parts(
            terms,
            dfs,
            get("corpus_size")?.parse().map_err(|_| parse_err("corpus_size"))?,
            get("min_df")?.parse().map_err(|_| parse_err("min_df"))?,
            get("max_df_ratio")?.parse().map_err(|_| parse_err("max_df_ratio"))?,
        )?;
        if let Ok(raw) = get("min_df_raw") {
            vocab.min_df_raw = raw.parse().map_err(|_| parse_err("min_df_raw"))?;
        }
        Ok(vocab)
    }

    /// Rebuilds the lookup table after deserializing from JSON.
    pub fn rebuild_index(&mut self) -> Result<()> {
        self.reindex()
    }
}

/// Document preprocessor bound to one configuration and stopword list.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    cfg: PreprocessConfig,
    stopwords: Stopwords,
}

#[derive(Debug, Clone, Copy)]
struct WordTok {
    start: usize,
    end: usize,
}

impl Preprocessor {
    pub fn new(cfg: PreprocessConfig) -> Result<Self> {
        let stopwords = match &cfg.stopwords_file {
            Some(p) => Stopwords::from_list(&std::fs::read_to_string(p)?),
            None => Stopwords::bundled(),
        };
        Ok(Self { cfg, stopwords })
    }

    pub fn with_stopwords(cfg: PreprocessConfig, stopwords: Stopwords) -> Self {
        Self { cfg, stopwords }
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    /// Tokenize one document. Returns `Ok(None)` for documents that are too short to process.
    pub fn process_document(&self, raw: &RawDocument) -> Result<Option<TokenizedDoc>> {
        let text = raw.text.as_str();
        let spans = self.validated_spans(raw)?;

        let ws_count = text.split_whitespace().count();
        if ws_count < self.cfg.min_whitespace_tokens {
            return Ok(None);
        }
        let (cut, kept_ws) = match self.cfg.truncate_tokens {
            Some(limit) if ws_count > limit => (truncation_offset(text, limit), limit),
            _ => (text.len(), ws_count),
        };
        let text = &text[..cut];

        let words = segment_words(text);
        let entity_groups: Vec<(usize, usize)> = match spans {
            Some(spans) => spans.into_iter().filter(|(_, e, _)| *e <= cut).map(|(s, e, _)| (s, e)).collect(),
            None if self.heuristic_enabled(raw) => capitalized_runs(text, &words),
            None => Vec::new(),
        };

        let mut tokens = Vec::new();
        let mut groups = entity_groups.iter().peekable();
        let mut i = 0;
        while i < words.len() {
            // skip spans that end before the current word
            while groups.peek().is_some_and(|(_, e)| *e <= words[i].start) {
                groups.next();
            }
            if let Some(&&(gs, ge)) = groups.peek() {
                if words[i].start < ge && words[i].end > gs {
                    let mut j = i;
                    while j < words.len() && words[j].start < ge {
                        j += 1;
                    }
                    if let Some(tok) = self.join_entity(text, &words[i..j]) {
                        tokens.push(tok);
                    }
                    groups.next();
                    i = j;
                    continue;
                }
            }
            let w = text[words[i].start..words[i].end].to_lowercase();
            if !self.stopwords.contains(&w) {
                tokens.push(w);
            }
            i += 1;
        }

        Ok(Some(TokenizedDoc { id: raw.id.clone(), tokens, source_tokens: kept_ws }))
    }

    fn heuristic_enabled(&self, raw: &RawDocument) -> bool {
        match self.cfg.entity_policy {
            EntityPolicy::Heuristic => true,
            EntityPolicy::Auto => raw.entities.is_none(),
            EntityPolicy::Spans | EntityPolicy::Off => false,
        }
    }

    /// Checks spans and converts them to byte offsets, filtered to the configured kinds.
    fn validated_spans(&self, raw: &RawDocument) -> Result<Option<Vec<(usize, usize, String)>>> {
        let Some(spans) = &raw.entities else {
            return Ok(None);
        };
        let n_chars = raw.text.chars().count();
        let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
        sorted.sort_by_key(|s| (s.start(), s.end()));
        for s in &sorted {
            if s.start() >= s.end() || s.end() > n_chars {
                return Err(Error::InvalidInput(format!(
                    "document {}: span [{}, {}) {} is out of bounds for {} characters",
                    raw.id,
                    s.start(),
                    s.end(),
                    s.kind(),
                    n_chars
                )));
            }
        }
        for w in sorted.windows(2) {
            if w[1].start() < w[0].end() {
                return Err(Error::InvalidInput(format!(
                    "document {}: span [{}, {}) overlaps span [{}, {})",
                    raw.id,
                    w[1].start(),
                    w[1].end(),
                    w[0].start(),
                    w[0].end()
                )));
            }
        }
        if matches!(self.cfg.entity_policy, EntityPolicy::Off | EntityPolicy::Heuristic) {
            return Ok(None);
        }
        let byte_of: Vec<usize> = raw.text.char_indices().map(|(b, _)| b).chain(std::iter::once(raw.text.len())).collect();
        let kinds = &self.cfg.entity_kinds;
        Ok(Some(
            sorted
                .into_iter()
                .filter(|s| kinds.is_empty() || kinds.iter().any(|k| k == s.kind()))
                .map(|s| (byte_of[s.start()], byte_of[s.end()], s.kind().to_string()))
                .collect(),
        ))
    }

    /// Joins the words of one entity with underscores. Stopwords stay inside the
    /// entity but are trimmed from its edges ("The United States" -> united_states).
    fn join_entity(&self, text: &str, words: &[WordTok]) -> Option<String> {
        let lowered: Vec<String> = words.iter().map(|w| text[w.start..w.end].to_lowercase()).collect();
        let first = lowered.iter().position(|w| !self.stopwords.contains(w))?;
        let last = lowered.iter().rposition(|w| !self.stopwords.contains(w))?;
        Some(lowered[first..=last].join("_"))
    }

    pub fn process_all(&self, docs: &[RawDocument]) -> Result<Vec<TokenizedDoc>> {
        let out: Result<Vec<Option<TokenizedDoc>>> = docs.par_iter().map(|d| self.process_document(d)).collect();
        Ok(out?.into_iter().flatten().collect())
    }
}

/// Byte offset just past the `limit`-th whitespace-separated token.
fn truncation_offset(text: &str, limit: usize) -> usize {
    let mut count = 0;
    let mut in_token = false;
    for (b, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                count += 1;
                if count == limit {
                    return b;
                }
            }
            in_token = false;
        } else {
            in_token = true;
        }
    }
    text.len()
}

/// Unicode word segmentation with hyphenated compounds ("state-of-the-art") kept whole.
fn segment_words(text: &str) -> Vec<WordTok> {
    let mut out: Vec<WordTok> = Vec::new();
    for (start, w) in text.unicode_word_indices() {
        let end = start + w.len();
        if let Some(prev) = out.last_mut() {
            if &text[prev.end..start] == "-" {
                prev.end = end;
                continue;
            }
        }
        out.push(WordTok { start, end });
    }
    out
}

/// Fallback entity detection: maximal runs of two or more capitalized words separated only by spaces.
fn capitalized_runs(text: &str, words: &[WordTok]) -> Vec<(usize, usize)> {
    let is_cap = |w: &WordTok| text[w.start..w.end].chars().next().is_some_and(char::is_uppercase);
    let mut runs = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if !is_cap(&words[i]) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < words.len() && is_cap(&words[j]) && text[words[j - 1].end..words[j].start].chars().all(|c| c == ' ') {
            j += 1;
        }
        if j - i >= 2 {
            runs.push((words[i].start, words[j - 1].end));
        }
        i = j;
    }
    runs
}

/// Mergeable document-frequency counts; reduce per-worker builders with [`VocabBuilder::merge`].
#[derive(Debug, Clone, Default)]
pub struct VocabBuilder {
    doc_freq: HashMap<String, usize>,
    docs: usize,
}

impl VocabBuilder {
    pub fn add(&mut self, doc: &TokenizedDoc) {
        self.docs += 1;
        let unique: HashSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in unique {
            *self.doc_freq.entry(t.to_string()).or_insert(0) += 1;
        }
    }

    pub fn merge(mut self, other: VocabBuilder) -> Self {
        self.docs += other.docs;
        for (t, c) in other.doc_freq {
            *self.doc_freq.entry(t).or_insert(0) += c;
        }
        self
    }

    pub fn docs(&self) -> usize {
        self.docs
    }

    pub fn finish(self, cfg: &PreprocessConfig) -> Result<Vocabulary> {
        if self.docs == 0 {
            return Err(Error::Empty("vocabulary needs at least one document".into()));
        }
        let min_df_raw = min_doc_frequency_raw(self.docs)?;
        let min_df = match cfg.min_df {
            Some(m) => m,
            None => min_doc_frequency(self.docs)?,
        };
        let max_df = cfg.max_df_ratio * self.docs as f64;
        let sorted: BTreeMap<String, usize> = self.doc_freq.into_iter().collect();
        let mut terms = Vec::new();
        let mut dfs = Vec::new();
        let mut dropped = Vec::new();
        for (term, df) in sorted {
            match check_term(&term, df, min_df, max_df, cfg.min_term_chars) {
                None => {
                    terms.push(term);
                    dfs.push(df);
                }
                Some(rule) => dropped.push((term, rule)),
            }
        }
        let mut vocab = Vocabulary::from_parts(terms, dfs, self.docs, min_df, cfg.max_df_ratio)?;
        vocab.min_df_raw = min_df_raw;
        vocab.dropped = dropped;
        Ok(vocab)
    }
}

/// Builds the training vocabulary with per-worker frequency maps.
pub fn build_vocabulary(docs: &[TokenizedDoc], cfg: &PreprocessConfig) -> Result<Vocabulary> {
    let builder = docs
        .par_iter()
        .fold(VocabBuilder::default, |mut b, d| {
            b.add(d);
            b
        })
        .reduce(VocabBuilder::default, VocabBuilder::merge);
    builder.finish(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDoc {
    pub id: String,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub docs: Vec<EncodedDoc>,
    pub vocab_hash: u64,
    pub vocab_size: usize,
}

impl EncodedCorpus {
    pub fn new(docs: Vec<EncodedDoc>, vocab_hash: u64, vocab_size: usize) -> Result<Self> {
        if let Some((d, t)) = docs.iter().find_map(|d| d.tokens.iter().find(|t| **t as usize >= vocab_size).map(|t| (d, t))) {
            return Err(Error::InvalidInput(format!("document {} has term id {t} outside vocabulary of {vocab_size}", d.id)));
        }
        Ok(Self { docs, vocab_hash, vocab_size })
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ENCODED_MAGIC)?;
        w.write_all(&self.vocab_hash.to_le_bytes())?;
        w.write_all(&(self.vocab_size as u64).to_le_bytes())?;
        w.write_all(&(self.docs.len() as u64).to_le_bytes())?;
        for d in &self.docs {
            w.write_all(&(d.id.len() as u32).to_le_bytes())?;
            w.write_all(d.id.as_bytes())?;
            w.write_all(&(d.tokens.len() as u32).to_le_bytes())?;
            for t in &d.tokens {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != ENCODED_MAGIC {
            return Err(Error::Format("not an encoded corpus (bad magic)".into()));
        }
        let vocab_hash = read_u64(&mut r)?;
        let vocab_size = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let mut docs = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id_len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| Error::Format("document id is not UTF-8".into()))?;
            let len = read_u32(&mut r)? as usize;
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                tokens.push(read_u32(&mut r)?);
            }
            docs.push(EncodedDoc { id, tokens });
        }
        Self::new(docs, vocab_hash, vocab_size)
    }

    /// JSONL form: a header object followed by one `{"id","tokens"}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::json!({"vocab_hash": format!("{:016x}", self.vocab_hash), "vocab_size": self.vocab_size});
        writeln!(w, "{header}")?;
        for d in &self.docs {
            serde_json::to_writer(&mut w, d)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: serde_json::Value = match lines.next() {
            Some(l) => serde_json::from_str(&l?)?,
            None => return Err(Error::Format("empty encoded corpus".into())),
        };
        let vocab_hash = header["vocab_hash"]
            .as_str()
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or_else(|| Error::Format("encoded corpus header lacks vocab_hash".into()))?;
        let vocab_size = header["vocab_size"].as_u64().ok_or_else(|| Error::Format("encoded corpus header lacks vocab_size".into()))? as usize;
        let mut docs = Vec::new();
        for l in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            docs.push(serde_json::from_str(&l)?);
        }
        Self::new(docs, vocab_hash, vocab_size)
    }

    /// Loads either format, sniffing the binary magic.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(ENCODED_MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_jsonl(bytes.as_slice())
        }
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn encode_document(doc: &TokenizedDoc, vocab: &Vocabulary) -> EncodedDoc {
    EncodedDoc { id: doc.id.clone(), tokens: doc.tokens.iter().filter_map(|t| vocab.id(t)).collect() }
}

/// Maps tokens to ids, dropping out-of-vocabulary tokens and then documents
/// left with fewer than `min_doc_tokens` tokens.
pub fn encode_corpus(docs: &[TokenizedDoc], vocab: &Vocabulary, min_doc_tokens: usize) -> EncodedCorpus {
    let docs = docs.par_iter().map(|d| encode_document(d, vocab)).filter(|d| d.tokens.len() >= min_doc_tokens).collect();
    EncodedCorpus { docs, vocab_hash: vocab.hash(), vocab_size: vocab.len() }
}

pub fn decode_document(doc: &EncodedDoc, vocab: &Vocabulary) -> TokenizedDoc {
    let tokens: Vec<String> = doc.tokens.iter().filter_map(|&t| vocab.term(t).map(str::to_string)).collect();
    TokenizedDoc { id: doc.id.clone(), source_tokens: tokens.len(), tokens }
}

pub fn read_raw_jsonl<R: BufRead>(r: R) -> Result<Vec<RawDocument>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        if !ids.insert(doc.id.clone()) {
            return Err(Error::InvalidInput(format!("duplicate document id {:?} at line {}", doc.id, i + 1)));
        }
        out.push(doc);
    }
    Ok(out)
}

pub fn write_tokenized_jsonl<W: Write>(docs: &[TokenizedDoc], mut w: W) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_tokenized_jsonl<R: BufRead>(r: R) -> Result<Vec<TokenizedDoc>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filler(n: usize) -> String {
        (0..n).map(|i| format!("filler{i}")).collect::<Vec<_>>().join(" ")
    }

    fn pre() -> Preprocessor {
        Preprocessor::new(PreprocessConfig::default()).unwrap()
    }

    #[test]
    fn short_documents_are_skipped() {
        let raw = RawDocument { id: "d".into(), text: filler(10), entities: None };
        assert_eq!(pre().process_document(&raw).unwrap(), None);
        let raw = RawDocument { id: "d".into(), text: filler(24), entities: None };
        assert_eq!(pre().process_document(&raw).unwrap(), None);
        let raw = RawDocument { id: "d".into(), text: filler(25), entities: None };
        assert!(pre().process_document(&raw).unwrap().is_some());
    }

    #[test]
    fn entity_span_keeps_inner_stopwords() {
        let head = "The United States of America";
        let text = format!("{head} signed treaties with neighbours {}", filler(30));
        let raw = RawDocument { id: "d".into(), text, entities: Some(vec![EntitySpan(0, head.chars().count(), "GPE".into())]) };
        let doc = pre().process_document(&raw).unwrap().unwrap();
        assert_eq!(doc.tokens[0], "united_states_of_america");
        assert_eq!(doc.tokens[1], "signed");
        assert!(!doc.tokens.iter().any(|t| t == "with"));
    }

    #[test]
    fn span_kinds_outside_the_allow_list_are_plain_words() {
        let text = format!("Big Event happened {}", filler(30));
        let raw = RawDocument { id: "d".into(), text, entities: Some(vec![EntitySpan(0, 9, "EVENT".into())]) };
        let doc = pre().process_document(&raw).unwrap().unwrap();
        assert_eq!(&doc.tokens[..2], &["big", "event"]);
    }

    #[test]
    fn heuristic_joins_capitalized_runs() {
        let text = format!("Yesterday in New York City the mayor spoke {}", filler(30));
        let raw = RawDocument { id: "d".into(), text, entities: None };
        let doc = pre().process_document(&raw).unwrap().unwrap();
        assert!(doc.tokens.contains(&"new_york_city".to_string()), "{:?}", doc.tokens);
        assert_eq!(doc.tokens[0], "yesterday");
    }

    #[test]
    fn malformed_spans_are_rejected() {
        let text = filler(30);
        let n = text.chars().count();
        let raw = RawDocument { id: "d".into(), text: text.clone(), entities: Some(vec![EntitySpan(5, n + 1, "ORG".into())]) };
        let err = pre().process_document(&raw).unwrap_err().to_string();
        assert!(err.contains("out of bounds"), "{err}");
        let raw = RawDocument { id: "d".into(), text, entities: Some(vec![EntitySpan(0, 10, "ORG".into()), EntitySpan(5, 12, "ORG".into())]) };
        let err = pre().process_document(&raw).unwrap_err().to_string();
        assert!(err.contains("overlaps"), "{err}");
    }

    #[test]
    fn truncation_counts_whitespace_tokens() {
        let raw = RawDocument { id: "d".into(), text: filler(6_000), entities: None };
        let doc = pre().process_document(&raw).unwrap().unwrap();
        assert_eq!(doc.source_tokens, 5_000);
        assert_eq!(doc.tokens.len(), 5_000);
        assert_eq!(doc.tokens.last().unwrap(), "filler4999");

        let cfg = PreprocessConfig { truncate_tokens: Some(19_000), ..Default::default() };
        let p = Preprocessor::new(cfg).unwrap();
        let doc = p.process_document(&raw).unwrap().unwrap();
        assert_eq!(doc.source_tokens, 6_000);
    }

    #[test]
    fn hyphenated_words_survive_segmentation() {
        let text = format!("state-of-the-art methods, really! {}", filler(30));
        let doc = pre().process_document(&RawDocument { id: "d".into(), text, entities: None }).unwrap().unwrap();
        assert_eq!(doc.tokens[0], "state-of-the-art");
        assert_eq!(doc.tokens[1], "methods");
    }

    #[test]
    fn min_df_anchor_points() {
        assert_eq!(min_doc_frequency(50).unwrap(), 2);
        assert_eq!(min_doc_frequency(1).unwrap(), 2);
        assert_eq!(min_doc_frequency(5_000).unwrap(), 15);
        let big = min_doc_frequency(500_000).unwrap();
        assert!((108..=112).contains(&big), "{big}");
        assert!(min_doc_frequency(0).is_err());
    }

    #[test]
    fn min_df_is_monotone() {
        let mut prev = 0;
        for n in (1..2_000_000).step_by(997) {
            let m = min_doc_frequency(n).unwrap();
            assert!(m >= prev);
            prev = m;
        }
    }

    fn tdoc(id: &str, toks: &[&str]) -> TokenizedDoc {
        TokenizedDoc { id: id.into(), tokens: toks.iter().map(|s| s.to_string()).collect(), source_tokens: toks.len() }
    }

    #[test]
    fn vocabulary_rules_and_provenance() {
        // 20 docs: "stop" in 19 (95%), "ab", "123" everywhere, "rare" once, "common" in 10.
        let docs: Vec<TokenizedDoc> = (0..20)
            .map(|i| {
                let mut t = vec!["ab", "123"];
                if i < 19 {
                    t.push("stop");
                }
                if i < 10 {
                    t.push("common");
                }
                if i == 0 {
                    t.push("rare");
                }
                tdoc(&format!("d{i}"), &t)
            })
            .collect();
        let v = build_vocabulary(&docs, &PreprocessConfig::default()).unwrap();
        assert_eq!(v.terms(), &["common".to_string()]);
        let dropped: HashMap<_, _> = v.dropped.iter().cloned().collect();
        assert_eq!(dropped["ab"], DropRule::Length);
        assert_eq!(dropped["123"], DropRule::Pattern);
        assert_eq!(dropped["stop"], DropRule::MaxDf);
        assert_eq!(dropped["rare"], DropRule::MinDf);
        assert!(build_vocabulary(&[], &PreprocessConfig::default()).is_err());
    }

    #[test]
    fn encoding_drops_short_documents() {
        let vocab =
            Vocabulary::from_parts(["alpha", "beta", "gamma", "delta", "omega"].iter().map(|s| s.to_string()).collect(), vec![1; 5], 1, 1, 0.9).unwrap();
        let docs = vec![
            tdoc("four", &["alpha", "beta", "gamma", "delta", "zzz"]),
            tdoc("oov", &["x1", "x2", "x3", "x4", "x5", "x6"]),
            tdoc("full", &["alpha", "beta", "gamma", "delta", "omega"]),
        ];
        let enc = encode_corpus(&docs, &vocab, 5);
        assert_eq!(enc.docs.len(), 1);
        assert_eq!(enc.docs[0].id, "full");
        assert_eq!(enc.docs[0].tokens, vec![0, 1, 2, 3, 4]);
        assert_eq!(decode_document(&enc.docs[0], &vocab).tokens, docs[2].tokens);
    }

    #[test]
    fn vocabulary_tsv_roundtrip() {
        let docs: Vec<TokenizedDoc> = (0..10).map(|i| tdoc(&format!("{i}"), &["apple", "banana", if i % 2 == 0 { "cherry" } else { "damson" }])).collect();
        let cfg = PreprocessConfig { max_df_ratio: 1.0, ..Default::default() };
        let v = build_vocabulary(&docs, &cfg).unwrap();
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        let back = Vocabulary::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back.terms(), v.terms());
        assert_eq!(back.hash(), v.hash());
        assert_eq!(back.min_df, v.min_df);
    }

    #[test]
    fn binary_and_jsonl_corpus_formats() {
        let c =
            EncodedCorpus::new(vec![EncodedDoc { id: "a".into(), tokens: vec![0, 1, 2] }, EncodedDoc { id: "b\u{e9}".into(), tokens: vec![] }], 0xdead_beef, 3)
                .unwrap();
        let mut bin = Vec::new();
        c.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[..8], ENCODED_MAGIC);
        assert_eq!(EncodedCorpus::read_binary(bin.as_slice()).unwrap(), c);
        let mut js = Vec::new();
        c.write_jsonl(&mut js).unwrap();
        assert_eq!(EncodedCorpus::read_jsonl(js.as_slice()).unwrap(), c);
        assert!(EncodedCorpus::read_binary(&b"NOTMAGIC"[..]).is_err());
    }
}
