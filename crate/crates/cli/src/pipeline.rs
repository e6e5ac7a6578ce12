//! End-to-end pipeline with content-addressed stage caching.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use topeval::cooc::{count_windows_sharded, score_topic, CoherenceOptions, CountScope, Metric, CV_WINDOW, NPMI_WINDOW};
use topeval::corpus::{build_vocabulary, encode_corpus, read_raw_jsonl, read_tokenized_jsonl, write_tokenized_jsonl, PreprocessConfig, Preprocessor};
use topeval::humaneval::{generate_survey, write_items_jsonl, SurveyConfig, DEFAULT_DISTRACTORS};
use topeval::lda::LdaConfig;
use topeval::rng::derive_seed;
use topeval::select::{random_search, select_best, train_candidates, CandidateModel, FilterConfig, HyperparamSpace, DEFAULT_BUDGET};
use topeval::topic::{read_topics_jsonl, write_topics_jsonl, Topic};

use crate::error::{validation, CliError, CliResult, Context};
use crate::files::{create, load_corpus, load_counts, load_vocab, open, read_jsonl, read_toml, sha256_bytes, sha256_file, write_atomic, write_jsonl};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Raw JSONL corpus.
    pub corpus: PathBuf,
    pub work_dir: PathBuf,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub cooc: CoocStage,
    #[serde(default)]
    pub train: TrainStage,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub score: ScoreStage,
    #[serde(default)]
    pub survey: SurveyStage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoocStage {
    /// Window sizes in tokens; 0 counts whole documents.
    pub windows: Vec<usize>,
    pub shards: usize,
}

impl Default for CoocStage {
    fn default() -> Self {
        Self { windows: vec![NPMI_WINDOW, CV_WINDOW], shards: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStage {
    pub budget: usize,
    pub prefix: String,
    pub top_n: usize,
    pub space: Option<BTreeMap<String, Vec<f64>>>,
    pub lda: LdaConfig,
}

impl Default for TrainStage {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, prefix: "cand".into(), top_n: 20, space: None, lda: LdaConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreStage {
    pub metrics: Vec<String>,
    pub top_n: usize,
}

impl Default for ScoreStage {
    fn default() -> Self {
        Self { metrics: vec!["npmi".into(), "cv".into()], top_n: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyStage {
    pub enabled: bool,
    pub distractors: usize,
    /// Extra topic JSONL files added to the distractor pool alongside the candidates.
    pub pool: Vec<PathBuf>,
}

impl Default for SurveyStage {
    fn default() -> Self {
        Self { enabled: true, distractors: DEFAULT_DISTRACTORS, pool: Vec::new() }
    }
}

/// Reference window used for each metric.
pub fn metric_window(metric: Metric) -> usize {
    match metric {
        Metric::Npmi | Metric::CUci => NPMI_WINDOW,
        Metric::Cv => CV_WINDOW,
        Metric::CUmass => 0,
    }
}

impl PipelineConfig {
    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg: PipelineConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.corpus = resolve(&cfg.corpus);
        cfg.work_dir = resolve(&cfg.work_dir);
        if let Some(s) = &cfg.preprocess.stopwords_file {
            cfg.preprocess.stopwords_file = Some(resolve(s));
        }
        cfg.survey.pool = cfg.survey.pool.iter().map(|p| resolve(p)).collect();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !self.corpus.is_file() {
            return Err(validation(format!("corpus {} does not exist", self.corpus.display())));
        }
        if let Some(s) = &self.preprocess.stopwords_file {
            if !s.is_file() {
                return Err(validation(format!("stopwords file {} does not exist", s.display())));
            }
        }
        if let Some(p) = self.survey.pool.iter().find(|p| !p.is_file()) {
            return Err(validation(format!("survey pool file {} does not exist", p.display())));
        }
        if !self.cooc.windows.contains(&NPMI_WINDOW) {
            return Err(validation(format!("cooc.windows must include {NPMI_WINDOW} for model selection")));
        }
        for m in self.metrics()? {
            let w = metric_window(m);
            if !self.cooc.windows.contains(&w) {
                return Err(validation(format!("metric {m:?} needs cooc window {w}")));
            }
        }
        if self.train.budget == 0 {
            return Err(validation("train.budget must be positive"));
        }
        Ok(())
    }

    fn metrics(&self) -> CliResult<Vec<Metric>> {
        self.score.metrics.iter().map(|m| m.parse::<Metric>().map_err(CliError::from)).collect()
    }

    fn space(&self) -> HyperparamSpace {
        match &self.train.space {
            Some(p) => HyperparamSpace { params: p.clone() },
            None => HyperparamSpace::glda(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub cache_hit: bool,
    pub key: String,
    pub outputs: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    outputs: Vec<Artifact>,
}

struct Runner {
    work_dir: PathBuf,
    stages: Vec<StageRecord>,
}

impl Runner {
    fn cache_path(&self, stage: &str) -> PathBuf {
        self.work_dir.join(".cache").join(format!("{stage}.json"))
    }

    fn cached(&self, stage: &str, key: &str) -> Option<Vec<Artifact>> {
        let bytes = std::fs::read(self.cache_path(stage)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        if entry.key != key {
            return None;
        }
        let intact = entry.outputs.iter().all(|a| sha256_file(&a.path).is_ok_and(|h| h == a.sha256));
        intact.then_some(entry.outputs)
    }

    /// Runs `body` unless a previous run with the same config and input hashes left intact outputs.
    fn stage<C: Serialize>(&mut self, name: &str, config: &C, inputs: &[&Path], outputs: &[PathBuf], body: impl FnOnce() -> CliResult<()>) -> CliResult<()> {
        let scoped = |e: CliError| e.prefixed(format!("stage {name}"));
        let mut hashes = Vec::with_capacity(inputs.len());
        for p in inputs {
            hashes.push(json!({ "path": p, "sha256": sha256_file(p).map_err(scoped)? }));
        }
        let key_doc = json!({ "stage": name, "config": config, "inputs": hashes });
        let key = sha256_bytes(serde_json::to_string(&key_doc).map_err(|e| scoped(e.into()))?.as_bytes());
        if let Some(outputs) = self.cached(name, &key) {
            log::info!("stage {name}: cached");
            self.stages.push(StageRecord { stage: name.into(), cache_hit: true, key, outputs });
            return Ok(());
        }
        log::info!("stage {name}: running");
        body().map_err(scoped)?;
        let mut arts = Vec::with_capacity(outputs.len());
        for p in outputs {
            arts.push(Artifact { path: p.clone(), sha256: sha256_file(p).map_err(scoped)? });
        }
        let entry = serde_json::to_vec_pretty(&CacheEntry { key: key.clone(), outputs: arts.clone() }).map_err(|e| scoped(e.into()))?;
        write_atomic(&self.cache_path(name), &entry).map_err(scoped)?;
        self.stages.push(StageRecord { stage: name.into(), cache_hit: false, key, outputs: arts });
        Ok(())
    }
}

fn window_name(w: usize) -> String {
    if w == 0 {
        "doc".into()
    } else {
        w.to_string()
    }
}

fn read_topics(path: &Path) -> CliResult<Vec<Topic>> {
    read_topics_jsonl(open(path)?).context(path.display())
}

fn write_topics(topics: &[Topic], path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    write_topics_jsonl(topics, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Runs every stage and writes `manifest.json` into the work directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> CliResult<Manifest> {
    let wd = cfg.work_dir.clone();
    std::fs::create_dir_all(&wd).context(wd.display())?;
    let mut r = Runner { work_dir: wd.clone(), stages: Vec::new() };
    let mut seeds = BTreeMap::new();
    seeds.insert("train".to_string(), derive_seed(cfg.seed, 1));
    seeds.insert("survey".to_string(), derive_seed(cfg.seed, 2));

    let tokenized = wd.join("tokenized.jsonl");
    let mut pre_inputs: Vec<&Path> = vec![&cfg.corpus];
    if let Some(s) = &cfg.preprocess.stopwords_file {
        pre_inputs.push(s);
    }
    r.stage("preprocess", &cfg.preprocess, &pre_inputs, std::slice::from_ref(&tokenized), || {
        let pre = Preprocessor::new(cfg.preprocess.clone())?;
        let raw = read_raw_jsonl(open(&cfg.corpus)?).context(cfg.corpus.display())?;
        let docs = pre.process_all(&raw)?;
        let mut w = create(&tokenized)?;
        write_tokenized_jsonl(&docs, &mut w)?;
        w.flush()?;
        Ok(())
    })?;

    let vocab_path = wd.join("vocab.tsv");
    let vocab_cfg = json!({ "min_df": cfg.preprocess.min_df, "max_df_ratio": cfg.preprocess.max_df_ratio, "min_term_chars": cfg.preprocess.min_term_chars });
    r.stage("vocab", &vocab_cfg, &[&tokenized], std::slice::from_ref(&vocab_path), || {
        let docs = read_tokenized_jsonl(open(&tokenized)?)?;
        let vocab = build_vocabulary(&docs, &cfg.preprocess)?;
        let mut w = create(&vocab_path)?;
        vocab.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    })?;

    let corpus_path = wd.join("corpus.bin");
    r.stage("encode", &json!({ "min_doc_tokens": cfg.preprocess.min_doc_tokens }), &[&tokenized, &vocab_path], std::slice::from_ref(&corpus_path), || {
        let docs = read_tokenized_jsonl(open(&tokenized)?)?;
        let vocab = load_vocab(&vocab_path)?;
        let enc = encode_corpus(&docs, &vocab, cfg.preprocess.min_doc_tokens);
        if enc.is_empty() {
            return Err(validation("no documents survived encoding"));
        }
        let mut w = create(&corpus_path)?;
        enc.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    })?;

    let counts_path = |w: usize| wd.join(format!("counts_w{}.bin", window_name(w)));
    let mut windows = cfg.cooc.windows.clone();
    windows.sort_unstable();
    windows.dedup();
    let count_outputs: Vec<PathBuf> = windows.iter().map(|&w| counts_path(w)).collect();
    r.stage("cooc", &json!({ "windows": windows }), &[&corpus_path], &count_outputs, || {
        let corpus = load_corpus(&corpus_path)?;
        for &w in &windows {
            let counts = count_windows_sharded(&corpus, w, cfg.cooc.shards.max(1), &CountScope::All)?;
            let mut f = create(&counts_path(w))?;
            counts.write_binary(&mut f)?;
            f.flush()?;
        }
        Ok(())
    })?;

    let candidates_path = wd.join("candidates.jsonl");
    let train_seed = seeds["train"];
    r.stage("train", &json!({ "train": cfg.train, "seed": train_seed }), &[&corpus_path, &vocab_path], std::slice::from_ref(&candidates_path), || {
        let space = cfg.space();
        space.validate()?;
        let corpus = load_corpus(&corpus_path)?;
        let vocab = load_vocab(&vocab_path)?;
        let configs = random_search(&space, cfg.train.budget, train_seed)?;
        let candidates = train_candidates(&corpus, &vocab, &configs, &cfg.train.lda, &cfg.train.prefix, cfg.train.top_n, train_seed)?;
        write_jsonl(&candidates, &candidates_path)
    })?;

    let selected_path = wd.join("selected_topics.jsonl");
    let reports_path = wd.join("filter_reports.jsonl");
    let selection_path = wd.join("selection.json");
    let npmi_counts = counts_path(NPMI_WINDOW);
    let select_outputs = [selected_path.clone(), reports_path.clone(), selection_path.clone()];
    r.stage("select", &cfg.filter, &[&candidates_path, &npmi_counts, &vocab_path], &select_outputs, || {
        let candidates: Vec<CandidateModel> = read_jsonl(&candidates_path)?;
        let counts = load_counts(&npmi_counts)?;
        let vocab = load_vocab(&vocab_path)?;
        let sel = select_best(&candidates, &counts, &vocab, &cfg.filter, &CoherenceOptions::default())?;
        write_topics(&sel.best.topics, &selected_path)?;
        write_jsonl(&sel.outcomes, &reports_path)?;
        let summary = json!({ "best": sel.best.source_tag, "mean_npmi": sel.best.mean_npmi, "config": sel.best.config });
        write_atomic(&selection_path, &serde_json::to_vec_pretty(&summary)?)
    })?;

    let metrics = cfg.metrics()?;
    let scores_path = wd.join("scores.jsonl");
    let mut score_inputs: Vec<PathBuf> = vec![selected_path.clone(), vocab_path.clone()];
    for m in &metrics {
        let p = counts_path(metric_window(*m));
        if !score_inputs.contains(&p) {
            score_inputs.push(p);
        }
    }
    let score_refs: Vec<&Path> = score_inputs.iter().map(PathBuf::as_path).collect();
    r.stage("score", &cfg.score, &score_refs, std::slice::from_ref(&scores_path), || {
        let topics = read_topics(&selected_path)?;
        let vocab = load_vocab(&vocab_path)?;
        let mut lines = Vec::new();
        for &m in &metrics {
            let counts = load_counts(&counts_path(metric_window(m)))?;
            let opts = CoherenceOptions { top_n: cfg.score.top_n, ..CoherenceOptions::default() };
            for t in &topics {
                let s = score_topic(t, &counts, &vocab, m, &opts).context(t.key())?;
                lines.push(json!({ "source_tag": t.source_tag, "topic_id": t.topic_id, "score": s }));
            }
        }
        write_jsonl(&lines, &scores_path)
    })?;

    if cfg.survey.enabled {
        let items_path = wd.join("items.jsonl");
        let survey_cfg = SurveyConfig { n_distractors: cfg.survey.distractors, seed: seeds["survey"], ..SurveyConfig::default() };
        let mut survey_inputs: Vec<&Path> = vec![&selected_path, &candidates_path];
        survey_inputs.extend(cfg.survey.pool.iter().map(PathBuf::as_path));
        r.stage("survey", &survey_cfg, &survey_inputs, std::slice::from_ref(&items_path), || {
            let selected = read_topics(&selected_path)?;
            let candidates: Vec<CandidateModel> = read_jsonl(&candidates_path)?;
            let mut pool: Vec<Topic> = candidates.into_iter().flat_map(|c| c.topics).collect();
            for p in &cfg.survey.pool {
                pool.extend(read_topics(p)?);
            }
            let items = generate_survey(&selected, &pool, &survey_cfg)?;
            let mut w = create(&items_path)?;
            write_items_jsonl(&items, &mut w)?;
            w.flush()?;
            Ok(())
        })?;
    }

    let artifacts: Vec<Artifact> = r.stages.iter().flat_map(|s| s.outputs.iter().cloned()).collect();
    let manifest = Manifest { seed: cfg.seed, seeds, stages: r.stages, artifacts };
    write_atomic(&wd.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
