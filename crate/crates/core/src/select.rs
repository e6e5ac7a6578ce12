//! Random hyperparameter search, redundancy filters and NPMI model selection.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cooc::{npmi_topic, CoherenceOptions, CoocCounts};
use crate::corpus::{EncodedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::lda::{all_topics, fit_gibbs_lda, LdaConfig};
use crate::rng::{derive_seed, SimRng};
use crate::topic::Topic;

pub const DEFAULT_TU_THRESHOLD: f64 = 0.7;
pub const DEFAULT_BUDGET: usize = 164;

/// Named parameters, each with a finite set of candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    pub params: BTreeMap<String, Vec<f64>>,
}

pub type ParamConfig = BTreeMap<String, f64>;

impl HyperparamSpace {
    /// Grid searched for the Gibbs LDA baseline. `alpha` is the total concentration over topics.
    pub fn glda() -> Self {
        let mut params = BTreeMap::new();
        params.insert("alpha".into(), vec![0.01, 0.05, 0.1, 0.25, 1.0, 5.0]);
        params.insert("beta".into(), vec![0.01, 0.05, 0.1]);
        params.insert("optimize_interval".into(), vec![0.0, 10.0, 100.0, 500.0]);
        params.insert("iterations".into(), vec![1000.0, 2000.0]);
        Self { params }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::InvalidInput("hyperparameter space has no parameters".into()));
        }
        if let Some((name, _)) = self.params.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidInput(format!("hyperparameter {name:?} has no values")));
        }
        Ok(())
    }
}

/// `budget` independent draws, each parameter uniform over its values.
pub fn random_search(space: &HyperparamSpace, budget: usize, seed: u64) -> Result<Vec<ParamConfig>> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::InvalidInput("search budget must be at least 1".into()));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let configs: Vec<ParamConfig> =
        (0..budget).map(|_| space.params.iter().map(|(k, vals)| (k.clone(), vals[rng.random_range(0..vals.len())])).collect()).collect();
    let distinct: HashSet<String> = configs.iter().map(|c| format!("{c:?}")).collect();
    if distinct.len() < configs.len() {
        log::info!("random search drew {} duplicate configurations out of {budget}", configs.len() - distinct.len());
    }
    Ok(configs)
}

/// Maps a drawn configuration onto sampler settings, keeping `base` for absent parameters.
pub fn lda_config(params: &ParamConfig, base: &LdaConfig) -> Result<LdaConfig> {
    let mut cfg = base.clone();
    for (name, &v) in params {
        let count = || -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidInput(format!("{name} must be a nonnegative integer, got {v}")))
            }
        };
        match name.as_str() {
            "alpha" => cfg.alpha_sum = v,
            "beta" => cfg.beta = v,
            "optimize_interval" => cfg.optimize_interval = count()?,
            "iterations" => cfg.iterations = count()?,
            "k" => cfg.k = count()?,
            other => return Err(Error::InvalidInput(format!("unknown LDA hyperparameter {other:?}"))),
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub source_tag: String,
    pub topics: Vec<Topic>,
    pub config: ParamConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_npmi: Option<f64>,
}

/// Trains one LDA model per configuration in parallel. Run `i` is tagged
/// `{prefix}-{i:03}` and seeded from `(seed, i)`.
pub fn train_candidates(
    corpus: &EncodedCorpus,
    vocab: &Vocabulary,
    configs: &[ParamConfig],
    base: &LdaConfig,
    prefix: &str,
    top_n: usize,
    seed: u64,
) -> Result<Vec<CandidateModel>> {
    configs
        .par_iter()
        .enumerate()
        .map(|(i, params)| {
            let cfg = LdaConfig { seed: derive_seed(seed, i as u64), ..lda_config(params, base)? };
            let tag = format!("{prefix}-{i:03}");
            let model = fit_gibbs_lda(corpus, &cfg)?;
            let topics = all_topics(&model, vocab, &tag, top_n.min(model.v))?;
            Ok(CandidateModel { source_tag: tag, topics, config: params.clone(), mean_npmi: None })
        })
        .collect()
}

/// Topic uniqueness: mean over topics and top-`n` words of `1 / count(word)`,
/// where `count` is the number of topics whose top `n` contains the word.
pub fn topic_uniqueness(topics: &[Topic], n: usize) -> Result<f64> {
    if topics.is_empty() || n == 0 {
        return Err(Error::InvalidInput("topic uniqueness needs topics and n >= 1".into()));
    }
    if let Some(t) = topics.iter().find(|t| t.words.len() < n) {
        return Err(Error::InvalidInput(format!("topic {} has fewer than {n} words", t.key())));
    }
    let mut count: HashMap<&str, usize> = HashMap::new();
    for t in topics {
        for w in t.top(n) {
            *count.entry(w.as_str()).or_default() += 1;
        }
    }
    let total: f64 = topics.iter().map(|t| t.top(n).iter().map(|w| 1.0 / count[w.as_str()] as f64).sum::<f64>() / n as f64).sum();
    Ok(total / topics.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuDirection {
    RejectBelow,
    RejectAbove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub tu_threshold: f64,
    pub tu_direction: TuDirection,
    /// Words per topic used for topic uniqueness.
    pub tu_top_n: usize,
    /// Words per topic checked for overlap.
    pub overlap_top_n: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { tu_threshold: DEFAULT_TU_THRESHOLD, tu_direction: TuDirection::RejectBelow, tu_top_n: 10, overlap_top_n: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub a: usize,
    pub b: usize,
    pub shared: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub source_tag: String,
    pub passed: bool,
    pub top5_overlap_pairs: Vec<OverlapPair>,
    pub topic_uniqueness: f64,
    pub tu_threshold: f64,
    pub tu_direction: TuDirection,
    pub tu_failed: bool,
}

pub fn redundancy_filter(candidate: &CandidateModel, cfg: &FilterConfig) -> Result<FilterReport> {
    let tops: Vec<HashSet<&str>> = candidate.topics.iter().map(|t| t.top(cfg.overlap_top_n).iter().map(String::as_str).collect()).collect();
    let mut pairs = Vec::new();
    for a in 0..tops.len() {
        for b in a + 1..tops.len() {
            let mut shared: Vec<String> = tops[a].intersection(&tops[b]).map(|s| s.to_string()).collect();
            if !shared.is_empty() {
                shared.sort();
                pairs.push(OverlapPair { a: candidate.topics[a].topic_id, b: candidate.topics[b].topic_id, shared });
            }
        }
    }
    let tu = topic_uniqueness(&candidate.topics, cfg.tu_top_n)?;
    let tu_failed = match cfg.tu_direction {
        TuDirection::RejectBelow => tu < cfg.tu_threshold,
        TuDirection::RejectAbove => tu > cfg.tu_threshold,
    };
    Ok(FilterReport {
        source_tag: candidate.source_tag.clone(),
        passed: pairs.is_empty() && !tu_failed,
        top5_overlap_pairs: pairs,
        topic_uniqueness: tu,
        tu_threshold: cfg.tu_threshold,
        tu_direction: cfg.tu_direction,
        tu_failed,
    })
}

/// Mean NPMI over a model's topics.
pub fn mean_npmi(topics: &[Topic], counts: &CoocCounts, vocab: &Vocabulary, opts: &CoherenceOptions) -> Result<f64> {
    if topics.is_empty() {
        return Err(Error::Empty("model has no topics".into()));
    }
    let mut sum = 0.0;
    for t in topics {
        sum += npmi_topic(t, counts, vocab, opts)?.value;
    }
    Ok(sum / topics.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub source_tag: String,
    pub mean_npmi: Option<f64>,
    pub report: Option<FilterReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: CandidateModel,
    /// One entry per candidate in input order.
    pub outcomes: Vec<CandidateOutcome>,
}

/// Scores every candidate by mean NPMI, drops those failing the redundancy
/// filter, and returns the highest scorer. Equal scores go to the
/// lexicographically smallest source tag.
pub fn select_best(
    candidates: &[CandidateModel],
    counts: &CoocCounts,
    vocab: &Vocabulary,
    filter: &FilterConfig,
    opts: &CoherenceOptions,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate models".into()));
    }
    if filter.tu_direction == TuDirection::RejectBelow {
        log::warn!("topic uniqueness filter rejects models below {} (reject_below)", filter.tu_threshold);
    }
    let outcomes: Vec<CandidateOutcome> = candidates
        .par_iter()
        .map(|c| {
            let report = match redundancy_filter(c, filter) {
                Ok(r) => r,
                Err(e) => return CandidateOutcome { source_tag: c.source_tag.clone(), mean_npmi: None, report: None, error: Some(e.to_string()) },
            };
            match mean_npmi(&c.topics, counts, vocab, opts) {
                Ok(s) => CandidateOutcome { source_tag: c.source_tag.clone(), mean_npmi: Some(s), report: Some(report), error: None },
                Err(e) => CandidateOutcome { source_tag: c.source_tag.clone(), mean_npmi: None, report: Some(report), error: Some(e.to_string()) },
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in outcomes.iter().enumerate() {
        let (Some(score), Some(r)) = (o.mean_npmi, &o.report) else { continue };
        if !r.passed {
            continue;
        }
        let better = match best {
            None => true,
            Some((j, s)) => score > s || (score == s && candidates[i].source_tag < candidates[j].source_tag),
        };
        if better {
            best = Some((i, score));
        }
    }
    let Some((i, score)) = best else {
        let lines: Vec<String> = outcomes
            .iter()
            .map(|o| match (&o.report, &o.error) {
                (_, Some(e)) => format!("{}: {e}", o.source_tag),
                (Some(r), None) => format!("{}: overlap pairs {}, tu {:.3}", o.source_tag, r.top5_overlap_pairs.len(), r.topic_uniqueness),
                (None, None) => o.source_tag.clone(),
            })
            .collect();
        return Err(Error::NoResult(format!("every candidate was filtered: {}", lines.join("; "))));
    };
    let mut chosen = candidates[i].clone();
    chosen.mean_npmi = Some(score);
    Ok(Selection { best: chosen, outcomes })
}
