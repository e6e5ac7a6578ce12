//! Bootstrap estimate of how often an automated-metric comparison disagrees
//! with the human comparison it stands in for.
//!
//! Every iteration draws two disjoint sets of `K` topics from the pool,
//! plays them as two models, and resamples the human annotations. A *false
//! discovery* is a significant automated difference where the human
//! non-inferiority test says the automated winner has no meaningful human
//! advantage. A *false omission* is an automated result of "no meaningful
//! difference" (not significant, and the automated non-inferiority test
//! passes) where humans do prefer one model significantly.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hypothesis::{noninferiority_test, proportion_ztest, welch_t, Alternative, Scores};
use super::power::Task;
use crate::error::{Error, Result};
use crate::rng::replicate_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolTopic {
    pub id: String,
    /// Automated coherence score of the topic.
    pub auto: f64,
    /// One value per annotator: 0/1 for intrusion, 1 to 3 for ratings.
    pub human: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdrConfig {
    pub task: Task,
    pub pool_size: usize,
    pub k: usize,
    pub n_iter: usize,
    pub eps_human: f64,
    pub eps_auto: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Report `max(0, rate - alpha)` instead of the raw rates.
    pub subtract_alpha: bool,
}

impl Default for FdrConfig {
    fn default() -> Self {
        Self::for_task(Task::Intrusion)
    }
}

impl FdrConfig {
    pub fn for_task(task: Task) -> Self {
        let eps_human = match task {
            Task::Intrusion => 0.05,
            Task::Rating => 0.11,
        };
        Self { task, pool_size: 150, k: 50, n_iter: 1000, eps_human, eps_auto: 0.05, alpha: 0.05, seed: 0, subtract_alpha: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrResult {
    pub fdr: Option<f64>,
    #[serde(rename = "for")]
    pub for_: Option<f64>,
    pub discoveries: usize,
    pub false_discoveries: usize,
    pub predicted_negatives: usize,
    pub false_omissions: usize,
    pub n_iter: usize,
    pub flags: Vec<String>,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    discoveries: usize,
    false_discoveries: usize,
    predicted_negatives: usize,
    false_omissions: usize,
}

impl Tally {
    fn add(self, o: Tally) -> Tally {
        Tally {
            discoveries: self.discoveries + o.discoveries,
            false_discoveries: self.false_discoveries + o.false_discoveries,
            predicted_negatives: self.predicted_negatives + o.predicted_negatives,
            false_omissions: self.false_omissions + o.false_omissions,
        }
    }
}

fn validate(pool: &[PoolTopic], cfg: &FdrConfig) -> Result<()> {
    if cfg.k < 2 || 2 * cfg.k > cfg.pool_size {
        return Err(Error::InvalidInput(format!("need 2 <= k and 2k <= pool_size, got k={} pool_size={}", cfg.k, cfg.pool_size)));
    }
    if pool.len() != cfg.pool_size {
        return Err(Error::InvalidInput(format!("pool has {} topics, config expects {}", pool.len(), cfg.pool_size)));
    }
    if cfg.n_iter == 0 {
        return Err(Error::InvalidInput("n_iter must be positive".into()));
    }
    let mut ids = HashSet::new();
    for t in pool {
        if !ids.insert(t.id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate topic id {:?} in pool", t.id)));
        }
        if t.human.is_empty() || !t.auto.is_finite() {
            return Err(Error::InvalidInput(format!("topic {:?} needs a finite automated score and at least one annotation", t.id)));
        }
        let valid = match cfg.task {
            Task::Intrusion => t.human.iter().all(|&v| v == 0.0 || v == 1.0),
            Task::Rating => t.human.iter().all(|&v| (1.0..=3.0).contains(&v)),
        };
        if !valid {
            return Err(Error::InvalidInput(format!("topic {:?} has annotations outside the task's range", t.id)));
        }
    }
    Ok(())
}

struct Side {
    auto: Vec<f64>,
    human: Vec<f64>,
}

impl Side {
    fn human_mean(&self) -> f64 {
        self.human.iter().sum::<f64>() / self.human.len() as f64
    }

    fn human_scores(&self, task: Task) -> Scores<'_> {
        match task {
            Task::Intrusion => Scores::Proportion { successes: self.human.iter().sum::<f64>() as u64, trials: self.human.len() as u64 },
            Task::Rating => Scores::Continuous(&self.human),
        }
    }
}

fn human_significant(winner: &Side, loser: &Side, cfg: &FdrConfig) -> Result<bool> {
    let r = match cfg.task {
        Task::Intrusion => {
            let s = |x: &Side| x.human.iter().sum::<f64>() as u64;
            proportion_ztest(s(winner), winner.human.len() as u64, s(loser), loser.human.len() as u64, Alternative::Greater)?
        }
        Task::Rating => welch_t(&winner.human, &loser.human, Alternative::Greater)?,
    };
    Ok(r.p_value < cfg.alpha)
}

fn iteration(pool: &[&PoolTopic], cfg: &FdrConfig, index: u64) -> Result<Tally> {
    let mut rng = replicate_rng(cfg.seed, index);
    let picks = sample(&mut rng, pool.len(), 2 * cfg.k).into_vec();
    let mut side = |idx: &[usize]| Side {
        auto: idx.iter().map(|&i| pool[i].auto).collect(),
        human: idx
            .iter()
            .flat_map(|&i| {
                let h = &pool[i].human;
                (0..h.len()).map(|_| h[rng.random_range(0..h.len())]).collect::<Vec<_>>()
            })
            .collect(),
    };
    let a = side(&picks[..cfg.k]);
    let b = side(&picks[cfg.k..]);
    let mut t = Tally::default();

    let auto_mean = |s: &Side| s.auto.iter().sum::<f64>();
    let (aw, al) = if auto_mean(&a) >= auto_mean(&b) { (&a, &b) } else { (&b, &a) };
    let auto_sig = welch_t(&aw.auto, &al.auto, Alternative::Greater)?.p_value < cfg.alpha;
    if auto_sig {
        t.discoveries = 1;
        let ni = noninferiority_test(al.human_scores(cfg.task), aw.human_scores(cfg.task), cfg.eps_human, cfg.alpha)?;
        t.false_discoveries = usize::from(ni.significant);
        return Ok(t);
    }
    let (hw, hl) = if a.human_mean() >= b.human_mean() { (&a, &b) } else { (&b, &a) };
    let auto_ni = noninferiority_test(Scores::Continuous(&hl.auto), Scores::Continuous(&hw.auto), cfg.eps_auto, cfg.alpha)?;
    if auto_ni.significant {
        t.predicted_negatives = 1;
        t.false_omissions = usize::from(human_significant(hw, hl, cfg)?);
    }
    Ok(t)
}

/// Bootstrap false-discovery and false-omission rates of automated comparisons.
/// Deterministic under `cfg.seed` and independent of the pool's order.
pub fn fdr_for_bootstrap(pool: &[PoolTopic], cfg: &FdrConfig) -> Result<FdrResult> {
    validate(pool, cfg)?;
    let mut sorted: Vec<&PoolTopic> = pool.iter().collect();
    sorted.sort_by(|x, y| x.id.cmp(&y.id));
    let tally = (0..cfg.n_iter as u64).into_par_iter().map(|i| iteration(&sorted, cfg, i)).try_reduce(Tally::default, |x, y| Ok(x.add(y)))?;

    let mut flags = Vec::new();
    let adjust = |rate: f64| if cfg.subtract_alpha { (rate - cfg.alpha).max(0.0) } else { rate };
    let fdr = if tally.discoveries == 0 {
        flags.push("fdr_undefined_no_automated_discoveries".to_string());
        None
    } else {
        Some(adjust(tally.false_discoveries as f64 / tally.discoveries as f64))
    };
    let for_ = if tally.predicted_negatives == 0 {
        flags.push("for_undefined_no_predicted_negatives".to_string());
        None
    } else {
        Some(adjust(tally.false_omissions as f64 / tally.predicted_negatives as f64))
    };
    if cfg.subtract_alpha {
        flags.push("alpha_subtracted".to_string());
    }
    Ok(FdrResult {
        fdr,
        for_,
        discoveries: tally.discoveries,
        false_discoveries: tally.false_discoveries,
        predicted_negatives: tally.predicted_negatives,
        false_omissions: tally.false_omissions,
        n_iter: cfg.n_iter,
        flags,
    })
}
