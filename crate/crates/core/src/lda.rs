//! Collapsed Gibbs sampling for LDA with periodic asymmetric-alpha re-estimation.
//!
//! The sampler draws each token's topic from
//! `p(z = k) ∝ (n_dk + α_k) (n_kw + β) / (n_k + V β)`
//! with the token's own assignment removed. When `optimize_interval > 0`,
//! alpha is re-estimated by Minka's fixed-point iteration after every
//! `optimize_interval` sweeps, starting once one interval of burn-in has passed.
//! Beta stays fixed.

use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::corpus::{EncodedCorpus, EncodedDoc, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::topic::Topic;

pub const ALPHA_FLOOR: f64 = 1e-8;
const ALPHA_FIXED_POINT_ITERS: usize = 20;
const CHECKPOINT_FORMAT: &str = "topeval-lda";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub k: usize,
    /// Total Dirichlet concentration over topics; each topic starts at `alpha_sum / k`.
    pub alpha_sum: f64,
    pub beta: f64,
    pub iterations: usize,
    /// Sweeps between alpha updates; 0 disables re-estimation.
    pub optimize_interval: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self { k: 50, alpha_sum: 5.0, beta: 0.01, iterations: 1000, optimize_interval: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub k: usize,
    pub v: usize,
    pub alpha: Vec<f64>,
    pub beta: f64,
    /// Word-major counts: entry `w * k + t` is the number of tokens of word `w` assigned topic `t`.
    pub word_topic: Vec<u32>,
    pub topic_totals: Vec<u64>,
    /// Document-major counts: entry `d * k + t`.
    pub doc_topic: Vec<u32>,
    pub assignments: Vec<Vec<u32>>,
    pub seed: u64,
    pub sweeps: usize,
    /// Set when an alpha update produced a non-finite or non-positive value that was clamped.
    pub alpha_clamped: bool,
    pub vocab_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaUpdate {
    pub alpha: Vec<f64>,
    pub clamped: bool,
}

/// Minka fixed-point updates of an asymmetric Dirichlet concentration.
/// `doc_topic` is document-major with stride `alpha.len()`.
pub fn optimize_alpha(doc_topic: &[u32], alpha: &[f64], iterations: usize) -> AlphaUpdate {
    let k = alpha.len();
    let mut a = alpha.to_vec();
    let mut clamped = false;
    let lens: Vec<f64> = doc_topic.chunks(k).map(|r| r.iter().map(|&c| f64::from(c)).sum()).collect();
    for _ in 0..iterations.max(1) {
        let total: f64 = a.iter().sum();
        let denom: f64 = lens.iter().map(|&n| digamma(n + total) - digamma(total)).sum();
        if denom == 0.0 {
            break;
        }
        let mut next = vec![0.0; k];
        for (j, slot) in next.iter_mut().enumerate() {
            let num: f64 = doc_topic.chunks(k).map(|r| digamma(f64::from(r[j]) + a[j]) - digamma(a[j])).sum();
            let v = a[j] * num / denom;
            *slot = if v.is_finite() && v >= ALPHA_FLOOR {
                v
            } else {
                clamped = true;
                ALPHA_FLOOR
            };
        }
        a = next;
    }
    AlphaUpdate { alpha: a, clamped }
}

impl LdaModel {
    fn init(corpus: &EncodedCorpus, cfg: &LdaConfig, rng: &mut SimRng) -> Self {
        let (k, v) = (cfg.k, corpus.vocab_size);
        let mut m = Self {
            k,
            v,
            alpha: vec![cfg.alpha_sum / k as f64; k],
            beta: cfg.beta,
            word_topic: vec![0; k * v],
            topic_totals: vec![0; k],
            doc_topic: vec![0; k * corpus.docs.len()],
            assignments: Vec::with_capacity(corpus.docs.len()),
            seed: cfg.seed,
            sweeps: 0,
            alpha_clamped: false,
            vocab_hash: corpus.vocab_hash,
        };
        for (d, doc) in corpus.docs.iter().enumerate() {
            let z: Vec<u32> = doc.tokens.iter().map(|_| rng.random_range(0..k as u32)).collect();
            for (&w, &t) in doc.tokens.iter().zip(&z) {
                m.add(d, w, t as usize);
            }
            m.assignments.push(z);
        }
        m
    }

    #[inline]
    fn add(&mut self, d: usize, w: u32, t: usize) {
        self.word_topic[w as usize * self.k + t] += 1;
        self.topic_totals[t] += 1;
        self.doc_topic[d * self.k + t] += 1;
    }

    #[inline]
    fn remove(&mut self, d: usize, w: u32, t: usize) {
        self.word_topic[w as usize * self.k + t] -= 1;
        self.topic_totals[t] -= 1;
        self.doc_topic[d * self.k + t] -= 1;
    }

    fn sweep(&mut self, corpus: &EncodedCorpus, rng: &mut SimRng, weights: &mut [f64]) {
        let vbeta = self.v as f64 * self.beta;
        for (d, doc) in corpus.docs.iter().enumerate() {
            for (i, &w) in doc.tokens.iter().enumerate() {
                let old = self.assignments[d][i] as usize;
                self.remove(d, w, old);
                let wt = &self.word_topic[w as usize * self.k..(w as usize + 1) * self.k];
                let dt = &self.doc_topic[d * self.k..(d + 1) * self.k];
                let mut total = 0.0;
                for t in 0..self.k {
                    total += (f64::from(dt[t]) + self.alpha[t]) * (f64::from(wt[t]) + self.beta) / (self.topic_totals[t] as f64 + vbeta);
                    weights[t] = total;
                }
                let u = rng.random::<f64>() * total;
                let new = weights[..self.k].partition_point(|&c| c <= u).min(self.k - 1);
                self.add(d, w, new);
                self.assignments[d][i] = new as u32;
            }
        }
        self.sweeps += 1;
    }

    /// Normalized sampling distribution for token `i` of document `d`, with
    /// that token's current assignment removed.
    pub fn conditional(&self, corpus: &EncodedCorpus, d: usize, i: usize) -> Vec<f64> {
        let w = corpus.docs[d].tokens[i] as usize;
        let cur = self.assignments[d][i] as usize;
        let vbeta = self.v as f64 * self.beta;
        let mut p: Vec<f64> = (0..self.k)
            .map(|t| {
                let own = f64::from(u8::from(t == cur));
                let ndk = f64::from(self.doc_topic[d * self.k + t]) - own;
                let nkw = f64::from(self.word_topic[w * self.k + t]) - own;
                let nk = self.topic_totals[t] as f64 - own;
                (ndk + self.alpha[t]) * (nkw + self.beta) / (nk + vbeta)
            })
            .collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        p
    }

    /// Verifies that document, word and topic counts agree with the assignments.
    pub fn check_conservation(&self, corpus: &EncodedCorpus) -> Result<()> {
        let total: u64 = corpus.num_tokens() as u64;
        for (d, doc) in corpus.docs.iter().enumerate() {
            let s: u64 = self.doc_topic[d * self.k..(d + 1) * self.k].iter().map(|&c| u64::from(c)).sum();
            if s != doc.tokens.len() as u64 {
                return Err(Error::Numerical(format!("document {d} topic counts sum to {s}, length {}", doc.tokens.len())));
            }
        }
        let dt: u64 = self.doc_topic.iter().map(|&c| u64::from(c)).sum();
        let wt: u64 = self.word_topic.iter().map(|&c| u64::from(c)).sum();
        let tt: u64 = self.topic_totals.iter().sum();
        if dt != total || wt != total || tt != total {
            return Err(Error::Numerical(format!("count totals disagree: docs {dt}, words {wt}, topics {tt}, tokens {total}")));
        }
        for t in 0..self.k {
            let col: u64 = (0..self.v).map(|w| u64::from(self.word_topic[w * self.k + t])).sum();
            if col != self.topic_totals[t] {
                return Err(Error::Numerical(format!("topic {t} word counts sum to {col}, total {}", self.topic_totals[t])));
            }
        }
        if self.alpha.iter().any(|a| !(*a > 0.0)) || !(self.beta > 0.0) {
            return Err(Error::Numerical("hyperparameters must stay positive".into()));
        }
        Ok(())
    }

    /// Word ids of topic `t` ordered by count descending, ties by id ascending.
    pub fn ranked_words(&self, t: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..self.v as u32).collect();
        ids.sort_by(|&a, &b| {
            let (ca, cb) = (self.word_topic[a as usize * self.k + t], self.word_topic[b as usize * self.k + t]);
            cb.cmp(&ca).then(a.cmp(&b))
        });
        ids
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            format: &'a str,
            version: u32,
            model: &'a LdaModel,
        }
        serde_json::to_writer(w, &Out { format: CHECKPOINT_FORMAT, version: CHECKPOINT_VERSION, model: self })?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct In {
            format: String,
            version: u32,
            model: LdaModel,
        }
        let c: In = serde_json::from_reader(r)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        Ok(c.model)
    }
}

pub fn fit_gibbs_lda(corpus: &EncodedCorpus, cfg: &LdaConfig) -> Result<LdaModel> {
    fit_gibbs_lda_observed(corpus, cfg, |_, _| Ok(()))
}

/// Runs the sampler, calling `observer` with the state after every sweep.
pub fn fit_gibbs_lda_observed<F>(corpus: &EncodedCorpus, cfg: &LdaConfig, mut observer: F) -> Result<LdaModel>
where
    F: FnMut(&LdaModel, usize) -> Result<()>,
{
    if corpus.is_empty() || corpus.num_tokens() == 0 {
        return Err(Error::Empty("cannot fit LDA on an empty corpus".into()));
    }
    if cfg.k < 2 {
        return Err(Error::InvalidInput("LDA needs at least two topics".into()));
    }
    if cfg.k > corpus.vocab_size {
        return Err(Error::InvalidInput(format!("K = {} exceeds vocabulary size {}", cfg.k, corpus.vocab_size)));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidInput("iterations must be at least 1".into()));
    }
    if !(cfg.alpha_sum > 0.0 && cfg.beta > 0.0) {
        return Err(Error::InvalidInput("alpha and beta must be positive".into()));
    }
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let mut model = LdaModel::init(corpus, cfg, &mut rng);
    let mut weights = vec![0.0; cfg.k];
    for s in 1..=cfg.iterations {
        model.sweep(corpus, &mut rng, &mut weights);
        let interval = cfg.optimize_interval;
        if interval > 0 && s > interval && s % interval == 0 {
            let up = optimize_alpha(&model.doc_topic, &model.alpha, ALPHA_FIXED_POINT_ITERS);
            if up.clamped {
                log::warn!("alpha update clamped to {ALPHA_FLOOR} at sweep {s}");
            }
            model.alpha_clamped |= up.clamped;
            model.alpha = up.alpha;
        }
        observer(&model, s)?;
    }
    Ok(model)
}

/// Top `n` words of topic `t` with smoothed probabilities as weights.
pub fn top_words(model: &LdaModel, vocab: &Vocabulary, source_tag: &str, t: usize, n: usize) -> Result<Topic> {
    if t >= model.k {
        return Err(Error::InvalidInput(format!("topic {t} out of range for K = {}", model.k)));
    }
    if n > model.v {
        return Err(Error::InvalidInput(format!("requested {n} words from a vocabulary of {}", model.v)));
    }
    if vocab.len() != model.v {
        return Err(Error::InvalidInput("vocabulary does not match the model".into()));
    }
    let denom = model.topic_totals[t] as f64 + model.v as f64 * model.beta;
    let ids = model.ranked_words(t);
    let words = ids[..n].iter().map(|&w| vocab.term(w).expect("id in vocabulary").to_string()).collect();
    let weights = ids[..n].iter().map(|&w| (f64::from(model.word_topic[w as usize * model.k + t]) + model.beta) / denom).collect();
    Topic::new(source_tag, t, words, Some(weights))
}

pub fn all_topics(model: &LdaModel, vocab: &Vocabulary, source_tag: &str, n: usize) -> Result<Vec<Topic>> {
    (0..model.k).map(|t| top_words(model, vocab, source_tag, t, n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub k: usize,
    pub v: usize,
    pub d: usize,
    pub doc_len: usize,
    /// Symmetric per-topic document concentration.
    pub alpha: f64,
    /// Symmetric topic-word concentration.
    pub beta: f64,
    pub seed: u64,
    /// When set, topic `t` draws from its own contiguous block of `v / k`
    /// words and mixes in this much uniform mass over the whole vocabulary.
    pub block_leak: Option<f64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { k: 5, v: 500, d: 1000, doc_len: 50, alpha: 0.1, beta: 0.05, seed: 0, block_leak: Some(0.02) }
    }
}

pub struct SyntheticCorpus {
    pub corpus: EncodedCorpus,
    pub vocab: Vocabulary,
    /// True topic-word distributions.
    pub topics: Vec<Vec<f64>>,
    /// True document-topic mixtures.
    pub mixtures: Vec<Vec<f64>>,
}

fn dirichlet(rng: &mut SimRng, conc: f64, n: usize) -> Result<Vec<f64>> {
    let g = Gamma::new(conc, 1.0).map_err(|e| Error::InvalidInput(format!("gamma({conc}): {e}")))?;
    loop {
        let draws: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
        let s: f64 = draws.iter().sum();
        if s > 0.0 {
            return Ok(draws.into_iter().map(|x| x / s).collect());
        }
    }
}

/// Draws a corpus from the LDA generative process.
pub fn sample_synthetic_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.k == 0 || cfg.v == 0 || cfg.d == 0 || cfg.doc_len == 0 || !(cfg.alpha > 0.0 && cfg.beta > 0.0) {
        return Err(Error::InvalidInput("synthetic corpus parameters must be positive".into()));
    }
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let mut topics = Vec::with_capacity(cfg.k);
    for t in 0..cfg.k {
        let phi = match cfg.block_leak {
            None => dirichlet(&mut rng, cfg.beta, cfg.v)?,
            Some(leak) => {
                if cfg.v < cfg.k || !(0.0..1.0).contains(&leak) {
                    return Err(Error::InvalidInput("block topics need v >= k and leak in [0, 1)".into()));
                }
                let (lo, hi) = (t * cfg.v / cfg.k, (t + 1) * cfg.v / cfg.k);
                let block = dirichlet(&mut rng, cfg.beta, hi - lo)?;
                (0..cfg.v).map(|w| leak / cfg.v as f64 + if (lo..hi).contains(&w) { (1.0 - leak) * block[w - lo] } else { 0.0 }).collect()
            }
        };
        topics.push(phi);
    }
    let word_dists: Vec<WeightedIndex<f64>> =
        topics.iter().map(|p| WeightedIndex::new(p).map_err(|e| Error::Numerical(format!("topic weights: {e}")))).collect::<Result<_>>()?;
    let mut mixtures = Vec::with_capacity(cfg.d);
    let mut docs = Vec::with_capacity(cfg.d);
    let mut doc_freq = vec![0usize; cfg.v];
    for d in 0..cfg.d {
        let theta = dirichlet(&mut rng, cfg.alpha, cfg.k)?;
        let zdist = WeightedIndex::new(&theta).map_err(|e| Error::Numerical(format!("mixture weights: {e}")))?;
        let tokens: Vec<u32> = (0..cfg.doc_len).map(|_| word_dists[zdist.sample(&mut rng)].sample(&mut rng) as u32).collect();
        let mut seen = tokens.clone();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            doc_freq[w as usize] += 1;
        }
        mixtures.push(theta);
        docs.push(EncodedDoc { id: format!("doc{d:06}"), tokens });
    }
    let terms = (0..cfg.v).map(|w| format!("w{w:05}")).collect();
    let vocab = Vocabulary::from_parts(terms, doc_freq, cfg.d, 1, 1.0)?;
    let corpus = EncodedCorpus::new(docs, vocab.hash(), cfg.v)?;
    Ok(SyntheticCorpus { corpus, vocab, topics, mixtures })
}

/// Mean top-`n` overlap between fitted and true topics under the best
/// one-to-one matching, by exhaustive search over permutations.
pub fn matched_top_overlap(model: &LdaModel, truth: &[Vec<f64>], n: usize) -> Result<f64> {
    if truth.len() != model.k || model.k > 8 {
        return Err(Error::InvalidInput("exhaustive matching needs equal topic counts and K <= 8".into()));
    }
    let true_top: Vec<Vec<u32>> = truth
        .iter()
        .map(|p| {
            let mut ids: Vec<u32> = (0..p.len() as u32).collect();
            ids.sort_by(|&a, &b| p[b as usize].total_cmp(&p[a as usize]).then(a.cmp(&b)));
            ids.truncate(n);
            ids
        })
        .collect();
    let fit_top: Vec<Vec<u32>> = (0..model.k).map(|t| model.ranked_words(t)[..n].to_vec()).collect();
    let overlap: Vec<Vec<usize>> = fit_top.iter().map(|f| true_top.iter().map(|t| f.iter().filter(|w| t.contains(w)).count()).collect()).collect();
    let mut perm: Vec<usize> = (0..model.k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        best = best.max(p.iter().enumerate().map(|(i, &j)| overlap[i][j]).sum());
    });
    Ok(best as f64 / (model.k * n) as f64)
}

fn permute(p: &mut [usize], i: usize, visit: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, visit);
        p.swap(i, j);
    }
}
