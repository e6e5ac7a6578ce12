//! Subcommand definitions and handlers.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use topeval::cooc::{count_windows_sharded, score_topic, CoherenceOptions, CountScope, Metric};
use topeval::corpus::{
    build_vocabulary, encode_corpus, min_doc_frequency_raw, read_raw_jsonl, read_tokenized_jsonl, write_tokenized_jsonl, PreprocessConfig, Preprocessor,
};
use topeval::humaneval::{annotator_agreement, familiarity_filter, generate_survey, quality_screen, score_responses, write_items_jsonl, SurveyConfig};
use topeval::lda::{all_topics, fit_gibbs_lda, LdaConfig};
use topeval::select::{random_search, select_best, train_candidates, FilterConfig, HyperparamSpace, DEFAULT_BUDGET};
use topeval::stats::corr::bootstrap_spearman_ci;
use topeval::stats::fdr::{fdr_for_bootstrap, FdrConfig, PoolTopic};
use topeval::stats::power::{
    equivalence_bound_search, fit_gamma_moments, min_annotators, power_simulation, AnnotatorGrid, EpsilonGrid, NullSimulation, PowerConfig, Task,
};
use topeval::stats::regress::{logistic_regression, ordered_probit};
use topeval::topic::write_topics_jsonl;

use crate::error::{validation, CliError, CliResult, Context};
use crate::files::{
    create, load_corpus, load_counts, load_items, load_responses, load_topics, load_vocab, open, read_jsonl, read_toml_or_default, write_json_pretty,
    write_jsonl,
};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::service::{export_bytes, read_log_records, serve, ServiceConfig, Store};

#[derive(Debug, Parser)]
#[command(name = "topeval", version, about = "Topic-model evaluation: corpora, coherence, LDA, surveys and statistics")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Preprocessing, vocabulary and encoding.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Co-occurrence counting and coherence scoring.
    #[command(subcommand)]
    Cooc(CoocCmd),
    /// Gibbs-sampled LDA.
    #[command(subcommand)]
    Lda(LdaCmd),
    /// Hyperparameter search and model selection.
    #[command(subcommand)]
    Select(SelectCmd),
    /// Survey items, scoring and the survey service.
    #[command(subcommand)]
    Survey(SurveyCmd),
    /// Power analysis, bounds, FDR, correlations and regressions.
    #[command(subcommand)]
    Stats(StatsCmd),
    /// End-to-end pipeline with per-stage caching.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Tokenize a raw JSONL corpus.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// TOML preprocessing config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build the vocabulary TSV from tokenized documents.
    Vocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Encode tokenized documents against a vocabulary.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = CorpusFormat::Binary)]
        format: CorpusFormat,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorpusFormat {
    Binary,
    Jsonl,
}

#[derive(Debug, Subcommand)]
pub enum CoocCmd {
    /// Count boolean sliding-window co-occurrences.
    Count {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Window size in tokens, or `doc` for whole documents.
        #[arg(long, value_parser = parse_window)]
        window: usize,
        #[arg(long)]
        output: PathBuf,
        /// Also write a human-readable TSV.
        #[arg(long)]
        tsv: Option<PathBuf>,
        /// Only track the top words of these topics.
        #[arg(long)]
        topics: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long, default_value_t = 0)]
        shards: usize,
    },
    /// Score topics against reference counts; writes JSONL.
    Score {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, required = true)]
        topics: Vec<PathBuf>,
        #[arg(long, value_parser = parse_metric, default_value = "npmi")]
        metric: Metric,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long, default_value_t = 1e-12)]
        epsilon: f64,
        #[arg(long, default_value = "")]
        reference_tag: String,
        /// Allow C_v on counts whose window is not 110 tokens.
        #[arg(long)]
        any_cv_window: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LdaCmd {
    /// Train one model and export its topics.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// TOML LDA config (k, alpha_sum, beta, iterations, optimize_interval, seed).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "lda")]
        tag: String,
        #[arg(long, default_value_t = 20)]
        top_n: usize,
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SelectCmd {
    /// Random search over LDA hyperparameters, then NPMI-based selection.
    Run(SelectArgs),
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Reference counts used for NPMI (10-token window).
    #[arg(long)]
    pub ref_counts: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
    #[arg(long)]
    pub seed: u64,
    /// TOML search space (`[params]` table of value lists).
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// TOML base LDA config.
    #[arg(long)]
    pub lda_config: Option<PathBuf>,
    /// TOML redundancy filter config.
    #[arg(long)]
    pub filter: Option<PathBuf>,
    #[arg(long, default_value = "cand")]
    pub prefix: String,
    #[arg(long, default_value_t = 20)]
    pub top_n: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SurveyCmd {
    /// Generate intrusion, rating and distractor items.
    Gen {
        /// Topics of the models being compared.
        #[arg(long, required = true)]
        topics: Vec<PathBuf>,
        /// Candidate topics that distractor words are drawn from.
        #[arg(long, required = true)]
        pool: Vec<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = topeval::humaneval::DEFAULT_DISTRACTORS)]
        distractors: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-topic scores from a responses CSV.
    Score {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        /// Drop answers where the annotator reported unfamiliarity.
        #[arg(long)]
        familiar_only: bool,
        /// Reject annotators whose total time is below this many seconds.
        #[arg(long)]
        min_duration: Option<f64>,
        /// Reject annotators whose mean calibration rating exceeds this.
        #[arg(long)]
        calibration_threshold: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Leave-one-out inter-annotator agreement.
    Agreement {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the HTTP survey service.
    Serve {
        #[arg(long)]
        items: PathBuf,
        /// Append-only response log.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = topeval::humaneval::DEFAULT_ITEM_FRACTION)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        /// Keep a CSV export refreshed while serving.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long, default_value_t = 25)]
        export_every: usize,
    },
    /// Export a service log as a responses CSV.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum StatsCmd {
    /// Simulated power at one annotator count.
    Power(PowerArgs),
    /// Smallest annotator count reaching the target power.
    MinAnnotators {
        #[command(flatten)]
        power: PowerArgs,
        #[arg(long, default_value_t = 0.9)]
        target: f64,
        #[arg(long, default_value_t = 5)]
        grid_start: usize,
        #[arg(long, default_value_t = 5)]
        grid_step: usize,
        #[arg(long, default_value_t = 100)]
        grid_cap: usize,
    },
    /// Smallest non-inferiority bound detectable under no difference.
    Epsilon {
        #[command(flatten)]
        power: PowerArgs,
        #[arg(long, default_value_t = 0.9)]
        target: f64,
        /// Simulate automated scores; per-model score variances (one per line) fix the Gamma prior.
        #[arg(long)]
        variances: Option<PathBuf>,
        #[arg(long, default_value_t = 0.005)]
        step: f64,
    },
    /// Bootstrap false-discovery and false-omission rates.
    Fdr {
        /// JSONL of {"id", "auto", "human": [...]}.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        eps_human: Option<f64>,
        #[arg(long)]
        eps_auto: Option<f64>,
        #[arg(long)]
        subtract_alpha: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Spearman correlation with an annotator bootstrap interval.
    Correlate {
        /// JSONL of {"topic", "human": [...], "metric"}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n_boot: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Logistic or ordered-probit regression from a CSV with columns `y` and optional `x`.
    Regress {
        #[arg(long, value_enum)]
        model: RegressionModel,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct PowerArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    #[arg(long)]
    pub seed: u64,
    /// TOML power config; command-line values override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub n_sims: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionModel {
    Logistic,
    OrderedProbit,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Run every stage, reusing cached outputs whose inputs are unchanged.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_window(s: &str) -> Result<usize, String> {
    match s {
        "doc" | "document" => Ok(0),
        _ => match s.parse::<usize>() {
            Ok(0) => Err("use `doc` for whole-document windows".into()),
            Ok(n) => Ok(n),
            Err(_) => Err(format!("window must be a positive integer or `doc`, got {s:?}")),
        },
    }
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: topeval::Error| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: topeval::Error| e.to_string())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Corpus(c) => corpus(c),
        Command::Cooc(c) => cooc(c),
        Command::Lda(c) => lda(c),
        Command::Select(SelectCmd::Run(a)) => select(a),
        Command::Survey(c) => survey(c),
        Command::Stats(c) => stats(c),
        Command::Pipeline(PipelineCmd::Run { config }) => {
            let cfg = PipelineConfig::load(&config)?;
            let manifest = run_pipeline(&cfg)?;
            write_json_pretty(&manifest, None)
        }
    }
}

fn corpus(cmd: CorpusCmd) -> CliResult<()> {
    match cmd {
        CorpusCmd::Preprocess { input, output, config } => {
            let cfg: PreprocessConfig = read_toml_or_default(config.as_deref())?;
            let pre = Preprocessor::new(cfg)?;
            let raw = read_raw_jsonl(open(&input)?).context(input.display())?;
            let docs = pre.process_all(&raw)?;
            let mut w = create(&output)?;
            write_tokenized_jsonl(&docs, &mut w)?;
            w.flush()?;
            log::info!("{} of {} documents kept", docs.len(), raw.len());
        }
        CorpusCmd::Vocab { input, output, config } => {
            let cfg: PreprocessConfig = read_toml_or_default(config.as_deref())?;
            let docs = read_tokenized_jsonl(open(&input)?).context(input.display())?;
            let vocab = build_vocabulary(&docs, &cfg)?;
            let mut w = create(&output)?;
            vocab.write_tsv(&mut w)?;
            w.flush()?;
            let audit = json!({
                "documents": docs.len(),
                "terms": vocab.len(),
                "min_df_raw": min_doc_frequency_raw(docs.len())?,
                "min_df_override": cfg.min_df,
                "max_df_ratio": cfg.max_df_ratio,
                "vocab_hash": format!("{:016x}", vocab.hash()),
            });
            write_json_pretty(&audit, None)?;
        }
        CorpusCmd::Encode { input, vocab, output, format, config } => {
            let cfg: PreprocessConfig = read_toml_or_default(config.as_deref())?;
            let vocab = load_vocab(&vocab)?;
            let docs = read_tokenized_jsonl(open(&input)?).context(input.display())?;
            let enc = encode_corpus(&docs, &vocab, cfg.min_doc_tokens);
            let mut w = create(&output)?;
            match format {
                CorpusFormat::Binary => enc.write_binary(&mut w)?,
                CorpusFormat::Jsonl => enc.write_jsonl(&mut w)?,
            }
            w.flush()?;
            log::info!("{} documents, {} tokens encoded", enc.len(), enc.num_tokens());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TopicScoreLine<'a> {
    source_tag: &'a str,
    topic_id: usize,
    #[serde(flatten)]
    score: topeval::cooc::CoherenceScore,
}

fn cooc(cmd: CoocCmd) -> CliResult<()> {
    match cmd {
        CoocCmd::Count { corpus, vocab, window, output, tsv, topics, top_n, shards } => {
            let vocab = load_vocab(&vocab)?;
            let corpus = load_corpus(&corpus)?;
            if corpus.vocab_hash != vocab.hash() {
                return Err(validation("corpus was encoded with a different vocabulary"));
            }
            let scope = if topics.is_empty() { CountScope::All } else { CountScope::for_topics(&load_topics(&topics)?, &vocab, top_n) };
            let shards = if shards == 0 { 4 * std::thread::available_parallelism().map_or(1, |n| n.get()) } else { shards };
            let counts = count_windows_sharded(&corpus, window, shards, &scope)?;
            let mut w = create(&output)?;
            counts.write_binary(&mut w)?;
            w.flush()?;
            if let Some(p) = tsv {
                let mut w = create(&p)?;
                counts.write_tsv(Some(&vocab), &mut w)?;
                w.flush()?;
            }
            log::info!("{} windows, {} pairs", counts.total_windows, counts.pair_windows.len());
        }
        CoocCmd::Score { counts, vocab, topics, metric, top_n, epsilon, reference_tag, any_cv_window, output } => {
            let counts = load_counts(&counts)?;
            let vocab = load_vocab(&vocab)?;
            let topics = load_topics(&topics)?;
            let opts = CoherenceOptions { top_n, epsilon, reference_tag, enforce_cv_window: !any_cv_window };
            let mut lines = Vec::new();
            for t in &topics {
                let score = score_topic(t, &counts, &vocab, metric, &opts).context(t.key())?;
                lines.push(TopicScoreLine { source_tag: &t.source_tag, topic_id: t.topic_id, score });
            }
            match output {
                Some(p) => write_jsonl(&lines, &p)?,
                None => {
                    for l in &lines {
                        println!("{}", serde_json::to_string(l)?);
                    }
                }
            }
        }
    }
    Ok(())
}

fn lda(cmd: LdaCmd) -> CliResult<()> {
    let LdaCmd::Train { corpus, vocab, config, seed, tag, top_n, topics, checkpoint } = cmd;
    let mut cfg: LdaConfig = read_toml_or_default(config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let vocab = load_vocab(&vocab)?;
    let corpus = load_corpus(&corpus)?;
    let model = fit_gibbs_lda(&corpus, &cfg)?;
    let out = all_topics(&model, &vocab, &tag, top_n.min(model.v))?;
    let mut w = create(&topics)?;
    write_topics_jsonl(&out, &mut w)?;
    w.flush()?;
    if let Some(p) = checkpoint {
        let mut w = create(&p)?;
        model.write_checkpoint(&mut w)?;
        w.flush()?;
    }
    write_json_pretty(&json!({ "config": cfg, "topics": out.len(), "alpha_clamped": model.alpha_clamped }), None)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct SpaceFile {
    params: std::collections::BTreeMap<String, Vec<f64>>,
}

/// Search space from a TOML `[params]` table, or the LDA default grid.
pub fn load_space(path: Option<&Path>) -> CliResult<HyperparamSpace> {
    let space = match path {
        Some(p) => HyperparamSpace { params: read_toml_or_default::<SpaceFile>(Some(p))?.params },
        None => HyperparamSpace::glda(),
    };
    space.validate()?;
    Ok(space)
}

fn select(a: SelectArgs) -> CliResult<()> {
    let space = load_space(a.space.as_deref())?;
    let base: LdaConfig = read_toml_or_default(a.lda_config.as_deref())?;
    let filter: FilterConfig = read_toml_or_default(a.filter.as_deref())?;
    let vocab = load_vocab(&a.vocab)?;
    let corpus = load_corpus(&a.corpus)?;
    let counts = load_counts(&a.ref_counts)?;
    let configs = random_search(&space, a.budget, a.seed)?;
    let candidates = train_candidates(&corpus, &vocab, &configs, &base, &a.prefix, a.top_n, a.seed)?;
    let selection = select_best(&candidates, &counts, &vocab, &filter, &CoherenceOptions::default())?;
    std::fs::create_dir_all(&a.output_dir).context(a.output_dir.display())?;
    write_jsonl(&candidates, &a.output_dir.join("candidates.jsonl"))?;
    write_jsonl(&selection.outcomes, &a.output_dir.join("filter_reports.jsonl"))?;
    let mut w = create(&a.output_dir.join("selected_topics.jsonl"))?;
    write_topics_jsonl(&selection.best.topics, &mut w)?;
    w.flush()?;
    write_json_pretty(
        &json!({ "best": selection.best.source_tag, "mean_npmi": selection.best.mean_npmi, "config": selection.best.config, "budget": a.budget, "seed": a.seed }),
        None,
    )
}

fn survey(cmd: SurveyCmd) -> CliResult<()> {
    match cmd {
        SurveyCmd::Gen { topics, pool, seed, distractors, output } => {
            let selected = load_topics(&topics)?;
            let pool = load_topics(&pool)?;
            let cfg = SurveyConfig { n_distractors: distractors, seed, ..SurveyConfig::default() };
            let items = generate_survey(&selected, &pool, &cfg)?;
            let mut w = create(&output)?;
            write_items_jsonl(&items, &mut w)?;
            w.flush()?;
            write_json_pretty(&json!({ "items": items.len(), "config": cfg }), None)
        }
        SurveyCmd::Score { items, responses, familiar_only, min_duration, calibration_threshold, output } => {
            let items = load_items(&items)?;
            let mut records = load_responses(&responses)?;
            let screen = if min_duration.is_some() || calibration_threshold.is_some() {
                let s = quality_screen(&records, &items, min_duration.unwrap_or(0.0), calibration_threshold.unwrap_or(f64::INFINITY));
                records = s.kept.clone();
                Some(json!({ "rejected": s.rejected, "warnings": s.warnings }))
            } else {
                None
            };
            if familiar_only {
                records = familiarity_filter(&records);
            }
            let report = score_responses(&records, &items);
            write_json_pretty(&json!({ "familiar_only": familiar_only, "screen": screen, "report": report }), output.as_deref())
        }
        SurveyCmd::Agreement { items, responses, task, output } => {
            let items = load_items(&items)?;
            let records = load_responses(&responses)?;
            let r = annotator_agreement(&records, &items, task)?;
            write_json_pretty(&json!({ "task": task, "agreement": r }), output.as_deref())
        }
        SurveyCmd::Serve { items, log, addr, fraction, seed, export, export_every } => {
            let items = load_items(&items)?;
            let cfg = ServiceConfig { item_fraction: fraction, seed, export_path: export, export_every };
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(validation(format!("fraction must lie in (0, 1], got {fraction}")));
            }
            let store = Arc::new(Store::open(items, &log, cfg).map_err(|e| CliError::Runtime(format!("{}: {e}", log.display())))?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(store, &addr)).map_err(|e| CliError::Runtime(format!("serving on {addr}: {e}")))
        }
        SurveyCmd::Export { log, output } => {
            if !log.exists() {
                return Err(validation(format!("{} does not exist", log.display())));
            }
            let bytes = export_bytes(read_log_records(&log)?);
            match output {
                Some(p) => crate::files::write_atomic(&p, &bytes),
                None => std::io::stdout().write_all(&bytes).map_err(Into::into),
            }
        }
    }
}

fn power_config(a: &PowerArgs) -> CliResult<PowerConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let mut c: PowerConfig = read_toml_or_default(Some(p))?;
            c.task = a.task;
            c
        }
        None => PowerConfig::for_task(a.task),
    };
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(r) = a.r {
        cfg.r = r;
    }
    if let Some(n) = a.n_sims {
        cfg.n_sims = n;
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_values(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    text.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| validation(format!("{}: {t:?}: {e}", path.display())))).collect()
}

#[derive(Deserialize)]
struct CorrelateLine {
    topic: String,
    human: Vec<f64>,
    metric: f64,
}

fn stats(cmd: StatsCmd) -> CliResult<()> {
    match cmd {
        StatsCmd::Power(a) => {
            let cfg = power_config(&a)?;
            let r = power_simulation(&cfg, a.seed)?;
            write_json_pretty(&json!({ "command": "power", "config": cfg, "seed": a.seed, "result": r }), a.output.as_deref())
        }
        StatsCmd::MinAnnotators { power, target, grid_start, grid_step, grid_cap } => {
            let cfg = power_config(&power)?;
            let grid = AnnotatorGrid { start: grid_start, step: grid_step, cap: grid_cap };
            let r = min_annotators(&cfg, target, grid, power.seed)?;
            write_json_pretty(
                &json!({ "command": "min_annotators", "config": cfg, "grid": grid, "target": target, "seed": power.seed, "result": r }),
                power.output.as_deref(),
            )
        }
        StatsCmd::Epsilon { power, target, variances, step } => {
            let cfg = power_config(&power)?;
            let sim = match &variances {
                Some(p) => {
                    let (shape, rate) = fit_gamma_moments(&read_values(p)?)?;
                    NullSimulation::Automated { k: cfg.k, shape, rate, n_sims: cfg.n_sims, alpha: cfg.alpha }
                }
                None => NullSimulation::Human(cfg.clone()),
            };
            let grid = EpsilonGrid { step, ..EpsilonGrid::default() };
            let r = equivalence_bound_search(&sim, target, grid, power.seed)?;
            write_json_pretty(
                &json!({ "command": "epsilon", "simulation": sim, "grid": grid, "target": target, "seed": power.seed, "result": r }),
                power.output.as_deref(),
            )
        }
        StatsCmd::Fdr { pool, task, seed, n_iter, k, eps_human, eps_auto, subtract_alpha, output } => {
            let topics: Vec<PoolTopic> = read_jsonl(&pool)?;
            let mut cfg = FdrConfig { seed, subtract_alpha, pool_size: topics.len(), ..FdrConfig::for_task(task) };
            if let Some(n) = n_iter {
                cfg.n_iter = n;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(e) = eps_human {
                cfg.eps_human = e;
            }
            if let Some(e) = eps_auto {
                cfg.eps_auto = e;
            }
            let r = fdr_for_bootstrap(&topics, &cfg)?;
            write_json_pretty(&json!({ "command": "fdr", "config": cfg, "result": r }), output.as_deref())
        }
        StatsCmd::Correlate { input, n_boot, seed, output } => {
            let lines: Vec<CorrelateLine> = read_jsonl(&input)?;
            let human: Vec<Vec<f64>> = lines.iter().map(|l| l.human.clone()).collect();
            let metric: Vec<f64> = lines.iter().map(|l| l.metric).collect();
            let r = bootstrap_spearman_ci(&human, &metric, n_boot, seed)?;
            let topics: Vec<&str> = lines.iter().map(|l| l.topic.as_str()).collect();
            write_json_pretty(&json!({ "command": "correlate", "topics": topics, "n_boot": n_boot, "seed": seed, "result": r }), output.as_deref())
        }
        StatsCmd::Regress { model, input, output } => {
            let (y, x) = read_regression_csv(&input)?;
            let result = match model {
                RegressionModel::Logistic => {
                    let yb = y
                        .iter()
                        .map(|&v| match v {
                            0.0 => Ok(false),
                            1.0 => Ok(true),
                            _ => Err(validation(format!("logistic outcome must be 0 or 1, got {v}"))),
                        })
                        .collect::<CliResult<Vec<bool>>>()?;
                    serde_json::to_value(logistic_regression(&yb, x.as_deref())?)?
                }
                RegressionModel::OrderedProbit => {
                    let yi = y
                        .iter()
                        .map(|&v| if v.fract() == 0.0 { Ok(v as i64) } else { Err(validation(format!("ordinal outcome must be an integer, got {v}"))) })
                        .collect::<CliResult<Vec<i64>>>()?;
                    serde_json::to_value(ordered_probit(&yi, x.as_deref())?)?
                }
            };
            write_json_pretty(&json!({ "command": "regress", "model": model, "n": y.len(), "result": result }), output.as_deref())
        }
    }
}

fn read_regression_csv(path: &Path) -> CliResult<(Vec<f64>, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| validation(format!("{} is empty", path.display())))?.split(',').map(str::trim).collect();
    let yi = header.iter().position(|h| *h == "y").ok_or_else(|| validation("regression CSV needs a `y` column"))?;
    let xi = header.iter().position(|h| *h == "x");
    let (mut y, mut x) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| -> CliResult<f64> {
            cells.get(i).ok_or_else(|| validation(format!("line {}: missing column", n + 2)))?.parse().map_err(|e| validation(format!("line {}: {e}", n + 2)))
        };
        y.push(get(yi)?);
        if let Some(i) = xi {
            x.push(get(i)?);
        }
    }
    Ok((y, xi.map(|_| x)))
}
