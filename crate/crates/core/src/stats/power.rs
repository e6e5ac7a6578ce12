//! Simulation power analysis for the intrusion and ratings tasks, and the
//! search for the smallest non-inferiority bound a study can resolve.
//!
//! Each simulated study draws latent topic labels for two models with `K`
//! topics. Model B loses `r` of model A's good topics. `M` annotators then
//! answer for every topic. Every replicate uses its own generator derived
//! from `(seed, replicate)`, so a run gives the same answer on any number of threads.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dist::{normal_quantile, student_t_quantile};
use super::hypothesis::{mann_whitney_u_ordinal, mean_var, proportion_ztest, Alternative};
use crate::error::{Error, Result};
use crate::rng::{replicate_rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Intrusion,
    Rating,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intrusion" => Ok(Task::Intrusion),
            "rating" | "ratings" => Ok(Task::Rating),
            _ => Err(Error::InvalidInput(format!("unknown task {s:?} (expected intrusion or rating)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    pub task: Task,
    /// Topics per model.
    pub k: usize,
    /// Good topics model B lacks relative to model A.
    pub r: usize,
    /// Annotators per topic.
    pub m: usize,
    pub alpha: f64,
    /// Intrusion accuracy on incoherent topics.
    pub p0: f64,
    /// Intrusion accuracy on coherent topics.
    pub p1: f64,
    /// Rating emission rows: row `l` is the distribution of ratings 1..=3 for a topic with latent label `l + 1`.
    pub rating_rows: [[f64; 3]; 3],
    pub n_sims: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self::intrusion()
    }
}

impl PowerConfig {
    pub fn intrusion() -> Self {
        Self {
            task: Task::Intrusion,
            k: 50,
            r: 4,
            m: 25,
            alpha: 0.05,
            p0: 1.0 / 6.0,
            p1: 0.85,
            rating_rows: [[0.75, 0.25, 0.0], [0.25, 0.5, 0.25], [0.0, 0.25, 0.75]],
            n_sims: 10_000,
        }
    }

    pub fn rating() -> Self {
        Self { task: Task::Rating, m: 15, ..Self::intrusion() }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Intrusion => Self::intrusion(),
            Task::Rating => Self::rating(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.k == 0 || self.m == 0 || self.n_sims == 0 {
            return Err(Error::InvalidInput("k, m and n_sims must be positive".into()));
        }
        if self.r > self.k {
            return Err(Error::InvalidInput(format!("r = {} exceeds k = {}", self.r, self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
        }
        if !prob(self.p0) || !prob(self.p1) {
            return Err(Error::InvalidInput("p0 and p1 must lie in [0, 1]".into()));
        }
        for (i, row) in self.rating_rows.iter().enumerate() {
            if !row.iter().all(|&p| prob(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("rating row {} is not a probability vector", i + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub m: usize,
    pub power: f64,
    /// Monte Carlo standard error of `power`.
    pub se: f64,
    pub significant: usize,
    pub n_sims: usize,
    pub seed: u64,
}

impl PowerEstimate {
    fn from_hits(m: usize, hits: usize, n_sims: usize, seed: u64) -> Self {
        let power = hits as f64 / n_sims as f64;
        Self { m, power, se: (power * (1.0 - power) / n_sims as f64).sqrt(), significant: hits, n_sims, seed }
    }
}

/// Latent labels for model A and B. Model B equals A with `r` topics at the
/// top label moved to the bottom label. Draws where A has fewer than `r`
/// top-label topics are discarded and redrawn.
fn draw_labels(rng: &mut SimRng, cfg: &PowerConfig) -> (Vec<u8>, Vec<u8>) {
    let top = match cfg.task {
        Task::Intrusion => 1,
        Task::Rating => 2,
    };
    loop {
        let a: Vec<u8> = match cfg.task {
            Task::Intrusion => (0..cfg.k).map(|_| u8::from(rng.random_bool(0.5))).collect(),
            Task::Rating => (0..cfg.k).map(|_| rng.random_range(0..3u8)).collect(),
        };
        let coherent: Vec<usize> = (0..cfg.k).filter(|&i| a[i] == top).collect();
        if coherent.len() < cfg.r {
            continue;
        }
        let mut b = a.clone();
        for j in sample(rng, coherent.len(), cfg.r) {
            b[coherent[j]] = 0;
        }
        return (a, b);
    }
}

/// Same labels for both models.
fn draw_null_labels(rng: &mut SimRng, cfg: &PowerConfig) -> Vec<u8> {
    match cfg.task {
        Task::Intrusion => (0..cfg.k).map(|_| u8::from(rng.random_bool(0.5))).collect(),
        Task::Rating => (0..cfg.k).map(|_| rng.random_range(0..3u8)).collect(),
    }
}

struct Emitter {
    intrusion: [Binomial; 2],
    rows: [[f64; 3]; 3],
    m: u64,
}

impl Emitter {
    fn new(cfg: &PowerConfig) -> Result<Self> {
        let m = cfg.m as u64;
        let bin = |p: f64| Binomial::new(m, p).map_err(|e| Error::InvalidInput(format!("binomial({m}, {p}): {e}")));
        Ok(Self { intrusion: [bin(cfg.p0)?, bin(cfg.p1)?], rows: cfg.rating_rows, m })
    }

    /// Total correct intrusion answers across topics.
    fn intrusion_successes(&self, rng: &mut SimRng, labels: &[u8]) -> u64 {
        labels.iter().map(|&z| self.intrusion[z as usize].sample(rng)).sum()
    }

    /// Rating counts per category (1, 2, 3) pooled across topics.
    fn rating_counts(&self, rng: &mut SimRng, labels: &[u8]) -> [u64; 3] {
        let mut counts = [0u64; 3];
        for &z in labels {
            let row = self.rows[z as usize];
            let c = multinomial3(rng, self.m, row);
            for i in 0..3 {
                counts[i] += c[i];
            }
        }
        counts
    }
}

fn binomial(rng: &mut SimRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

fn multinomial3(rng: &mut SimRng, n: u64, p: [f64; 3]) -> [u64; 3] {
    let a = binomial(rng, n, p[0]);
    let rest = 1.0 - p[0];
    let b = if rest > 0.0 { binomial(rng, n - a, (p[1] / rest).min(1.0)) } else { 0 };
    [a, b, n - a - b]
}

fn one_study(rng: &mut SimRng, cfg: &PowerConfig, em: &Emitter) -> Result<bool> {
    let (a, b) = draw_labels(rng, cfg);
    let trials = (cfg.k * cfg.m) as u64;
    let p = match cfg.task {
        Task::Intrusion => {
            let sa = em.intrusion_successes(rng, &a);
            let sb = em.intrusion_successes(rng, &b);
            proportion_ztest(sa, trials, sb, trials, Alternative::Greater)?.p_value
        }
        Task::Rating => {
            let ca = em.rating_counts(rng, &a);
            let cb = em.rating_counts(rng, &b);
            mann_whitney_u_ordinal(&ca, &cb, Alternative::Greater)?.p_value
        }
    };
    Ok(p < cfg.alpha)
}

/// Share of simulated studies in which the one-tailed test finds model A better.
pub fn power_simulation(cfg: &PowerConfig, seed: u64) -> Result<PowerEstimate> {
    cfg.validate()?;
    let em = Emitter::new(cfg)?;
    let hits =
        (0..cfg.n_sims as u64).into_par_iter().map(|i| one_study(&mut replicate_rng(seed, i), cfg, &em).map(usize::from)).try_reduce(|| 0, |x, y| Ok(x + y))?;
    Ok(PowerEstimate::from_hits(cfg.m, hits, cfg.n_sims, seed))
}

/// Grid of annotator counts scanned by [`min_annotators`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorGrid {
    pub start: usize,
    pub step: usize,
    pub cap: usize,
}

impl Default for AnnotatorGrid {
    fn default() -> Self {
        Self { start: 5, step: 5, cap: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinAnnotators {
    pub m: usize,
    pub target_power: f64,
    pub curve: Vec<PowerEstimate>,
}

/// Smallest grid value of `M` whose simulated power reaches `target_power`.
/// Every grid point reuses `seed`.
pub fn min_annotators(cfg: &PowerConfig, target_power: f64, grid: AnnotatorGrid, seed: u64) -> Result<MinAnnotators> {
    if !(target_power > 0.0 && target_power < 1.0) {
        return Err(Error::InvalidInput("target power must lie in (0, 1)".into()));
    }
    if grid.start == 0 || grid.step == 0 || grid.cap < grid.start {
        return Err(Error::InvalidInput("annotator grid must be nonempty with positive start and step".into()));
    }
    let mut curve = Vec::new();
    let mut m = grid.start;
    while m <= grid.cap {
        let est = power_simulation(&PowerConfig { m, ..cfg.clone() }, seed)?;
        let reached = est.power >= target_power;
        log::debug!("M={m} power={:.4}", est.power);
        curve.push(est);
        if reached {
            return Ok(MinAnnotators { m, target_power, curve });
        }
        m += grid.step;
    }
    let summary: Vec<String> = curve.iter().map(|e| format!("{}:{:.3}", e.m, e.power)).collect();
    Err(Error::NoResult(format!("no M <= {} reaches power {target_power}; curve {}", grid.cap, summary.join(" "))))
}

/// Gamma shape and rate matching the mean and variance of `values`.
pub fn fit_gamma_moments(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput("gamma fit needs at least two positive finite values".into()));
    }
    let (m, v) = mean_var(values);
    if v <= 0.0 {
        return Err(Error::InvalidInput("gamma fit needs values that are not all equal".into()));
    }
    Ok((m * m / v, m / v))
}

/// Data-generating process under which both models are equally good.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullSimulation {
    /// Human study with a shared latent label per topic.
    Human(PowerConfig),
    /// Automated per-topic scores `Normal(0, s2)` with `s2 ~ Gamma(shape, rate)` drawn once per study.
    Automated { k: usize, shape: f64, rate: f64, n_sims: usize, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonGrid {
    pub step: f64,
    pub max: f64,
}

impl Default for EpsilonGrid {
    fn default() -> Self {
        Self { step: 0.005, max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonResult {
    pub epsilon: f64,
    pub power: f64,
    pub power_target: f64,
    pub n_sims: usize,
    pub seed: u64,
}

/// Margin `d + q * se` above which the non-inferiority test of `B - A < eps`
/// rejects in one simulated null study.
fn null_margin(rng: &mut SimRng, sim: &NullSimulation, em: Option<&Emitter>) -> Result<f64> {
    match sim {
        NullSimulation::Human(cfg) => {
            let em = em.expect("emitter for human simulation");
            let labels = draw_null_labels(rng, cfg);
            let n = (cfg.k * cfg.m) as f64;
            match cfg.task {
                Task::Intrusion => {
                    let pa = em.intrusion_successes(rng, &labels) as f64 / n;
                    let pb = em.intrusion_successes(rng, &labels) as f64 / n;
                    let se = (pa * (1.0 - pa) / n + pb * (1.0 - pb) / n).sqrt();
                    Ok(pb - pa + normal_quantile(1.0 - cfg.alpha) * se)
                }
                Task::Rating => {
                    let stats = |c: [u64; 3]| {
                        let mean = (c[0] + 2 * c[1] + 3 * c[2]) as f64 / n;
                        let ss = c[0] as f64 * (1.0 - mean).powi(2) + c[1] as f64 * (2.0 - mean).powi(2) + c[2] as f64 * (3.0 - mean).powi(2);
                        (mean, ss / (n - 1.0))
                    };
                    let (ma, va) = stats(em.rating_counts(rng, &labels));
                    let (mb, vb) = stats(em.rating_counts(rng, &labels));
                    Ok(welch_margin(ma, va, mb, vb, n, n, cfg.alpha))
                }
            }
        }
        NullSimulation::Automated { k, shape, rate, alpha, .. } => {
            let s2 = Gamma::new(*shape, 1.0 / rate).map_err(|e| Error::InvalidInput(format!("gamma: {e}")))?.sample(rng);
            let normal = Normal::new(0.0, s2.sqrt()).map_err(|e| Error::InvalidInput(format!("normal: {e}")))?;
            let a: Vec<f64> = (0..*k).map(|_| normal.sample(rng)).collect();
            let b: Vec<f64> = (0..*k).map(|_| normal.sample(rng)).collect();
            let (ma, va) = mean_var(&a);
            let (mb, vb) = mean_var(&b);
            Ok(welch_margin(ma, va, mb, vb, *k as f64, *k as f64, *alpha))
        }
    }
}

fn welch_margin(ma: f64, va: f64, mb: f64, vb: f64, na: f64, nb: f64, alpha: f64) -> f64 {
    let (a, b) = (va / na, vb / nb);
    let se2 = a + b;
    if se2 == 0.0 {
        return mb - ma;
    }
    let df = se2 * se2 / (a * a / (na - 1.0) + b * b / (nb - 1.0));
    mb - ma + student_t_quantile(1.0 - alpha, df) * se2.sqrt()
}

/// Smallest grid `epsilon` at which the non-inferiority test rejects in at
/// least `power_target` of the simulated no-difference studies.
pub fn equivalence_bound_search(sim: &NullSimulation, power_target: f64, grid: EpsilonGrid, seed: u64) -> Result<EpsilonResult> {
    if !(grid.step > 0.0) || grid.max < grid.step {
        return Err(Error::InvalidInput("epsilon grid is empty".into()));
    }
    if !(power_target > 0.0 && power_target < 1.0) {
        return Err(Error::InvalidInput("power target must lie in (0, 1)".into()));
    }
    let (n_sims, em) = match sim {
        NullSimulation::Human(cfg) => {
            cfg.validate()?;
            (cfg.n_sims, Some(Emitter::new(cfg)?))
        }
        NullSimulation::Automated { k, shape, rate, n_sims, alpha } => {
            if *k < 2 || *n_sims == 0 || !(*shape > 0.0 && *rate > 0.0) || !(*alpha > 0.0 && *alpha < 1.0) {
                return Err(Error::InvalidInput("automated simulation needs k >= 2, n_sims > 0, positive gamma parameters, alpha in (0, 1)".into()));
            }
            (*n_sims, None)
        }
    };
    let mut margins: Vec<f64> =
        (0..n_sims as u64).into_par_iter().map(|i| null_margin(&mut replicate_rng(seed, i), sim, em.as_ref())).collect::<Result<_>>()?;
    margins.sort_by(f64::total_cmp);
    let steps = (grid.max / grid.step + 1e-9).floor() as usize;
    for j in 1..=steps {
        let eps = j as f64 * grid.step;
        let power = margins.partition_point(|&m| m < eps) as f64 / n_sims as f64;
        if power >= power_target {
            return Ok(EpsilonResult { epsilon: eps, power, power_target, n_sims, seed });
        }
    }
    Err(Error::NoResult(format!("no epsilon <= {} reaches power {power_target}", grid.max)))
}
