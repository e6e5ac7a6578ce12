//! Survey items for the intrusion and ratings tasks, and scoring of the
//! responses annotators give to them.
//!
//! An intrusion item shows five of a topic's top ten words plus one intruder.
//! The intruder comes from another topic's top ten and lies outside the
//! target's top fifty. A rating item shows the top ten words in rank order and
//! asks for relatedness on a 1 to 3 scale. Synthetic distractor topics serve
//! as calibration items for screening out careless annotators.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SimRng};
use crate::stats::corr::spearman;
use crate::stats::power::Task;
use crate::topic::{Topic, TopicRef};

pub const INTRUSION_SHOWN: usize = 5;
pub const RATED_WORDS: usize = 10;
pub const SOURCE_TOP: usize = 10;
/// Words of the target topic an intruder may not come from.
pub const INTRUDER_EXCLUSION_TOP: usize = 50;
pub const DEFAULT_DISTRACTORS: usize = 8;
pub const DEFAULT_ITEM_FRACTION: f64 = 0.25;
pub const RESPONSES_HEADER: &str = "annotator_id,item_id,task,response,familiar,duration,submitted_at";
pub const DISTRACTOR_TAG: &str = "distractor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrusionItem {
    pub item_id: String,
    pub topic_ref: TopicRef,
    pub displayed_words: Vec<String>,
    pub intruder_index: usize,
    pub seed: u64,
    #[serde(default)]
    pub is_calibration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingItem {
    pub item_id: String,
    pub topic_ref: TopicRef,
    pub displayed_words: Vec<String>,
    pub is_calibration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum SurveyItem {
    Intrusion(IntrusionItem),
    Rating(RatingItem),
}

impl SurveyItem {
    pub fn item_id(&self) -> &str {
        match self {
            SurveyItem::Intrusion(i) => &i.item_id,
            SurveyItem::Rating(r) => &r.item_id,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            SurveyItem::Intrusion(_) => Task::Intrusion,
            SurveyItem::Rating(_) => Task::Rating,
        }
    }

    pub fn topic_ref(&self) -> &TopicRef {
        match self {
            SurveyItem::Intrusion(i) => &i.topic_ref,
            SurveyItem::Rating(r) => &r.topic_ref,
        }
    }

    pub fn displayed_words(&self) -> &[String] {
        match self {
            SurveyItem::Intrusion(i) => &i.displayed_words,
            SurveyItem::Rating(r) => &r.displayed_words,
        }
    }

    pub fn is_calibration(&self) -> bool {
        match self {
            SurveyItem::Intrusion(i) => i.is_calibration,
            SurveyItem::Rating(r) => r.is_calibration,
        }
    }

    /// Whether `response` is a valid answer to this item.
    pub fn accepts(&self, response: u32) -> bool {
        match self {
            SurveyItem::Intrusion(i) => (response as usize) < i.displayed_words.len(),
            SurveyItem::Rating(_) => (1..=3).contains(&response),
        }
    }
}

fn item_id(task: Task, topic: &TopicRef) -> String {
    let t = match task {
        Task::Intrusion => "intrusion",
        Task::Rating => "rating",
    };
    format!("{t}:{}:{}", topic.source_tag, topic.topic_id)
}

fn require_words(topic: &Topic, n: usize) -> Result<()> {
    if topic.words.len() < n {
        return Err(Error::InvalidInput(format!("topic {} has {} words, need {n}", topic.key(), topic.words.len())));
    }
    Ok(())
}

/// Intrusion item for `topic`. `all_topics` supplies intruder candidates and may contain `topic` itself.
pub fn make_intrusion_item(topic: &Topic, all_topics: &[Topic], seed: u64) -> Result<IntrusionItem> {
    require_words(topic, SOURCE_TOP)?;
    let key = topic.key();
    let others: Vec<&Topic> = all_topics.iter().filter(|t| t.key() != key).collect();
    if others.is_empty() {
        return Err(Error::InvalidInput(format!("intrusion item for {key} needs at least one other topic")));
    }
    let excluded: HashSet<&str> = topic.top(INTRUDER_EXCLUSION_TOP).iter().map(String::as_str).collect();
    let candidates: Vec<&str> = others
        .iter()
        .flat_map(|t| t.top(SOURCE_TOP).iter().map(String::as_str))
        .filter(|w| !excluded.contains(w))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoResult(format!("no intruder candidates for topic {key}")));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let top = topic.top(SOURCE_TOP);
    let mut shown: Vec<String> = sample(&mut rng, SOURCE_TOP, INTRUSION_SHOWN).into_iter().map(|i| top[i].clone()).collect();
    let intruder = candidates[rng.random_range(0..candidates.len())].to_string();
    shown.push(intruder.clone());
    shown.shuffle(&mut rng);
    let intruder_index = shown.iter().position(|w| *w == intruder).expect("intruder shown");
    Ok(IntrusionItem { item_id: item_id(Task::Intrusion, &key), topic_ref: key, displayed_words: shown, intruder_index, seed, is_calibration: false })
}

pub fn make_rating_item(topic: &Topic, is_calibration: bool) -> Result<RatingItem> {
    require_words(topic, RATED_WORDS)?;
    let key = topic.key();
    Ok(RatingItem { item_id: item_id(Task::Rating, &key), topic_ref: key, displayed_words: topic.top(RATED_WORDS).to_vec(), is_calibration })
}

/// `n` synthetic topics of ten words each, drawn from the top-ten words of
/// `pool_topics` that appear in no top ten of `selected_topics`.
pub fn make_distractor_topics(selected_topics: &[Topic], pool_topics: &[Topic], n: usize, seed: u64) -> Result<Vec<Topic>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one distractor".into()));
    }
    let selected: HashSet<&str> = selected_topics.iter().flat_map(|t| t.top(SOURCE_TOP).iter().map(String::as_str)).collect();
    let candidates: Vec<&str> = pool_topics
        .iter()
        .flat_map(|t| t.top(SOURCE_TOP).iter().map(String::as_str))
        .filter(|w| !selected.contains(w))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if candidates.len() < RATED_WORDS {
        return Err(Error::NoResult(format!("only {} distractor candidate words, need {RATED_WORDS}", candidates.len())));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let words = sample(&mut rng, candidates.len(), RATED_WORDS).into_iter().map(|j| candidates[j].to_string()).collect();
            Topic::new(DISTRACTOR_TAG, i, words, None)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyConfig {
    pub n_distractors: usize,
    pub seed: u64,
    /// Share of the items each annotator sees.
    pub item_fraction: f64,
    pub intrusion_annotators: usize,
    pub rating_annotators: usize,
    /// Smaller per-topic floor also quoted for both tasks, reported alongside the defaults.
    pub stated_minimum_annotators: usize,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            n_distractors: DEFAULT_DISTRACTORS,
            seed: 0,
            item_fraction: DEFAULT_ITEM_FRACTION,
            intrusion_annotators: 25,
            rating_annotators: 15,
            stated_minimum_annotators: 15,
        }
    }
}

/// Intrusion and rating items for every selected topic, plus rating items
/// for the distractor topics, which are marked as calibration.
pub fn generate_survey(selected_topics: &[Topic], pool_topics: &[Topic], cfg: &SurveyConfig) -> Result<Vec<SurveyItem>> {
    let mut items = Vec::new();
    for (i, t) in selected_topics.iter().enumerate() {
        items.push(SurveyItem::Intrusion(make_intrusion_item(t, selected_topics, derive_seed(cfg.seed, i as u64))?));
    }
    for t in selected_topics {
        items.push(SurveyItem::Rating(make_rating_item(t, false)?));
    }
    for t in make_distractor_topics(selected_topics, pool_topics, cfg.n_distractors, derive_seed(cfg.seed, u64::MAX))? {
        items.push(SurveyItem::Rating(make_rating_item(&t, true)?));
    }
    let mut ids = HashSet::new();
    if let Some(dup) = items.iter().find(|i| !ids.insert(i.item_id().to_string())) {
        return Err(Error::InvalidInput(format!("duplicate item id {} (repeated topic reference)", dup.item_id())));
    }
    Ok(items)
}

/// `round(fraction * n)` items (at least one) drawn uniformly for one annotator.
pub fn assign_items(item_ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("item fraction must lie in (0, 1], got {fraction}")));
    }
    if item_ids.is_empty() {
        return Err(Error::Empty("no items to assign".into()));
    }
    let n = assignment_size(item_ids.len(), fraction);
    let mut rng = SimRng::seed_from_u64(seed);
    Ok(sample(&mut rng, item_ids.len(), n).into_iter().map(|i| item_ids[i].clone()).collect())
}

pub fn assignment_size(n_items: usize, fraction: f64) -> usize {
    ((n_items as f64 * fraction).round() as usize).clamp(1, n_items)
}

pub fn write_items_jsonl<W: Write>(items: &[SurveyItem], mut w: W) -> Result<()> {
    for i in items {
        serde_json::to_writer(&mut w, i)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_items_jsonl<R: BufRead>(r: R) -> Result<Vec<SurveyItem>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("item line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// Familiarity answer: one flag per item or one per displayed word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Familiarity {
    Item(bool),
    PerWord(Vec<bool>),
}

impl Familiarity {
    /// Per-word answers count as familiar only when every word is familiar.
    pub fn is_familiar(&self) -> bool {
        match self {
            Familiarity::Item(b) => *b,
            Familiarity::PerWord(v) => !v.is_empty() && v.iter().all(|b| *b),
        }
    }

    fn to_field(&self) -> String {
        match self {
            Familiarity::Item(b) => b.to_string(),
            Familiarity::PerWord(v) => v.iter().map(|b| if *b { "1" } else { "0" }).collect::<Vec<_>>().join(";"),
        }
    }

    fn from_field(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(Familiarity::Item(true)),
            "false" => Ok(Familiarity::Item(false)),
            _ => s
                .split(';')
                .map(|f| match f {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    _ => Err(Error::Format(format!("familiar field {s:?} is neither true/false nor ;-separated 0/1 flags"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Familiarity::PerWord),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub item_id: String,
    pub task: Task,
    /// Displayed-word index for intrusion, 1 to 3 for ratings.
    pub response: u32,
    pub familiar: Familiarity,
    /// Seconds spent on the item.
    pub duration: f64,
    pub submitted_at: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidInput(format!("record {}/{} has invalid duration {}", self.annotator_id, self.item_id, self.duration)));
        }
        if self.annotator_id.is_empty() || self.item_id.is_empty() {
            return Err(Error::InvalidInput("annotator_id and item_id must be nonempty".into()));
        }
        if self.task == Task::Rating && !(1..=3).contains(&self.response) {
            return Err(Error::InvalidInput(format!("rating {} outside 1..=3", self.response)));
        }
        Ok(())
    }

    /// Checks the record against the item it answers.
    pub fn validate_for(&self, item: &SurveyItem) -> Result<()> {
        self.validate()?;
        if item.task() != self.task {
            return Err(Error::InvalidInput(format!("record for {} has task {:?}, item is {:?}", self.item_id, self.task, item.task())));
        }
        if !item.accepts(self.response) {
            return Err(Error::InvalidInput(format!("response {} out of range for item {}", self.response, self.item_id)));
        }
        if let Familiarity::PerWord(v) = &self.familiar {
            if v.len() != item.displayed_words().len() {
                return Err(Error::InvalidInput(format!(
                    "record for {} has {} familiarity flags for {} words",
                    self.item_id,
                    v.len(),
                    item.displayed_words().len()
                )));
            }
        }
        Ok(())
    }
}

fn task_field(t: Task) -> &'static str {
    match t {
        Task::Intrusion => "intrusion",
        Task::Rating => "rating",
    }
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Writes records in the responses CSV schema, in the given order.
pub fn write_responses_csv<W: Write>(records: &[AnnotationRecord], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(RESPONSES_HEADER.split(','))?;
    for r in records {
        out.write_record([
            r.annotator_id.as_str(),
            r.item_id.as_str(),
            task_field(r.task),
            &r.response.to_string(),
            &r.familiar.to_field(),
            &r.duration.to_string(),
            &format_timestamp(&r.submitted_at),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_responses_csv<R: Read>(r: R) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESPONSES_HEADER {
        return Err(Error::Format(format!("responses header must be {RESPONSES_HEADER:?}, got {:?}", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |j: usize| row.get(j).ok_or_else(|| Error::Format(format!("line {line}: missing column {j}")));
        let task = field(2)?.parse::<Task>().map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        let response = field(3)?.parse::<u32>().map_err(|e| Error::Format(format!("line {line}: response: {e}")))?;
        let duration = field(5)?.parse::<f64>().map_err(|e| Error::Format(format!("line {line}: duration: {e}")))?;
        let submitted_at = DateTime::parse_from_rfc3339(field(6)?).map_err(|e| Error::Format(format!("line {line}: submitted_at: {e}")))?.with_timezone(&Utc);
        let rec = AnnotationRecord {
            annotator_id: field(0)?.to_string(),
            item_id: field(1)?.to_string(),
            task,
            response,
            familiar: Familiarity::from_field(field(4)?)?,
            duration,
            submitted_at,
        };
        rec.validate().map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

/// Sorts records into the export order: `submitted_at`, then `annotator_id`, then `item_id`.
pub fn sort_for_export(records: &mut [AnnotationRecord]) {
    records.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.annotator_id.cmp(&b.annotator_id)).then_with(|| a.item_id.cmp(&b.item_id)));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScore {
    pub topic_ref: TopicRef,
    pub intrusion_accuracy: Option<Fraction>,
    pub mean_rating: Option<Fraction>,
    pub familiarity_rate: Fraction,
    pub is_calibration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: Vec<TopicScore>,
    /// Indices of records naming no known item.
    pub orphans: Vec<usize>,
    /// Indices of records that do not fit their item, with the reason.
    pub invalid: Vec<(usize, String)>,
}

pub fn item_index(items: &[SurveyItem]) -> HashMap<&str, &SurveyItem> {
    items.iter().map(|i| (i.item_id(), i)).collect()
}

/// Per-topic intrusion accuracy, mean rating and familiarity rate.
pub fn score_responses(records: &[AnnotationRecord], items: &[SurveyItem]) -> ScoreReport {
    #[derive(Default)]
    struct Acc {
        correct: usize,
        intrusion: usize,
        rating_sum: f64,
        ratings: usize,
        familiar: usize,
        total: usize,
        calibration: bool,
    }
    let index = item_index(items);
    let mut acc: BTreeMap<TopicRef, Acc> = BTreeMap::new();
    let mut orphans = Vec::new();
    let mut invalid = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let Some(item) = index.get(r.item_id.as_str()) else {
            orphans.push(i);
            continue;
        };
        if let Err(e) = r.validate_for(item) {
            invalid.push((i, e.to_string()));
            continue;
        }
        let a = acc.entry(item.topic_ref().clone()).or_default();
        a.calibration |= item.is_calibration();
        a.total += 1;
        a.familiar += usize::from(r.familiar.is_familiar());
        match item {
            SurveyItem::Intrusion(it) => {
                a.intrusion += 1;
                a.correct += usize::from(r.response as usize == it.intruder_index);
            }
            SurveyItem::Rating(_) => {
                a.ratings += 1;
                a.rating_sum += f64::from(r.response);
            }
        }
    }
    if !orphans.is_empty() {
        log::warn!("{} records reference unknown items and were excluded", orphans.len());
    }
    let scores = acc
        .into_iter()
        .map(|(topic_ref, a)| TopicScore {
            topic_ref,
            intrusion_accuracy: (a.intrusion > 0).then(|| Fraction { value: a.correct as f64 / a.intrusion as f64, n: a.intrusion }),
            mean_rating: (a.ratings > 0).then(|| Fraction { value: a.rating_sum / a.ratings as f64, n: a.ratings }),
            familiarity_rate: Fraction { value: a.familiar as f64 / a.total as f64, n: a.total },
            is_calibration: a.calibration,
        })
        .collect();
    ScoreReport { scores, orphans, invalid }
}

/// Drops records whose annotator reported unfamiliarity.
pub fn familiarity_filter(records: &[AnnotationRecord]) -> Vec<AnnotationRecord> {
    let kept: Vec<AnnotationRecord> = records.iter().filter(|r| r.familiar.is_familiar()).cloned().collect();
    if kept.is_empty() && !records.is_empty() {
        log::warn!("familiarity filter removed all {} records", records.len());
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub mean_rho: f64,
    pub per_annotator: Vec<(String, f64)>,
    pub skipped: Vec<String>,
}

/// Per-annotator, per-topic scores for one task: intrusion accuracy or mean rating.
fn annotator_topic_scores(records: &[AnnotationRecord], items: &[SurveyItem], task: Task) -> BTreeMap<String, BTreeMap<TopicRef, f64>> {
    let index = item_index(items);
    let mut sums: BTreeMap<String, BTreeMap<TopicRef, (f64, usize)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.task == task) {
        let Some(item) = index.get(r.item_id.as_str()) else { continue };
        if r.validate_for(item).is_err() {
            continue;
        }
        let v = match item {
            SurveyItem::Intrusion(it) => f64::from(u8::from(r.response as usize == it.intruder_index)),
            SurveyItem::Rating(_) => f64::from(r.response),
        };
        let e = sums.entry(r.annotator_id.clone()).or_default().entry(item.topic_ref().clone()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    sums.into_iter().map(|(a, m)| (a, m.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect())).collect()
}

/// Mean over annotators of the Spearman correlation between an annotator's
/// per-topic scores and the mean of every other annotator's scores.
pub fn annotator_agreement(records: &[AnnotationRecord], items: &[SurveyItem], task: Task) -> Result<AgreementReport> {
    let scores = annotator_topic_scores(records, items, task);
    if scores.len() < 2 {
        return Err(Error::InvalidInput("agreement needs at least two annotators".into()));
    }
    let mut per_annotator = Vec::new();
    let mut skipped = Vec::new();
    for (a, mine) in &scores {
        let mut own = Vec::new();
        let mut rest = Vec::new();
        for (t, v) in mine {
            let others: Vec<f64> = scores.iter().filter(|(b, _)| *b != a).filter_map(|(_, m)| m.get(t).copied()).collect();
            if !others.is_empty() {
                own.push(*v);
                rest.push(others.iter().sum::<f64>() / others.len() as f64);
            }
        }
        if own.len() < 3 {
            log::warn!("annotator {a} shares fewer than 3 topics with others; skipped");
            skipped.push(a.clone());
            continue;
        }
        match spearman(&own, &rest) {
            Ok(rho) => per_annotator.push((a.clone(), rho)),
            Err(_) => {
                log::warn!("annotator {a} has constant scores or constant consensus; skipped");
                skipped.push(a.clone());
            }
        }
    }
    if per_annotator.is_empty() {
        return Err(Error::NoResult("no annotator had a defined agreement score".into()));
    }
    let mean_rho = per_annotator.iter().map(|(_, r)| r).sum::<f64>() / per_annotator.len() as f64;
    Ok(AgreementReport { mean_rho, per_annotator, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedAnnotator {
    pub annotator_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub kept: Vec<AnnotationRecord>,
    pub rejected: Vec<RejectedAnnotator>,
    pub warnings: Vec<String>,
}

/// Rejects annotators whose mean calibration rating exceeds
/// `calibration_threshold` or whose total duration is below `min_duration` seconds.
pub fn quality_screen(records: &[AnnotationRecord], items: &[SurveyItem], min_duration: f64, calibration_threshold: f64) -> ScreenResult {
    let index = item_index(items);
    let mut warnings = Vec::new();
    let has_calibration = items.iter().any(|i| i.is_calibration() && i.task() == Task::Rating);
    if !has_calibration {
        warnings.push("no calibration items; calibration screen skipped".to_string());
        log::warn!("no calibration items; calibration screen skipped");
    }
    let mut per: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = per.entry(r.annotator_id.as_str()).or_insert((0.0, 0.0, 0));
        e.0 += r.duration;
        if let Some(SurveyItem::Rating(it)) = index.get(r.item_id.as_str()) {
            if it.is_calibration {
                e.1 += f64::from(r.response);
                e.2 += 1;
            }
        }
    }
    let mut rejected = Vec::new();
    for (a, (dur, cal_sum, cal_n)) in &per {
        if has_calibration && *cal_n > 0 && cal_sum / *cal_n as f64 > calibration_threshold {
            rejected.push(RejectedAnnotator {
                annotator_id: a.to_string(),
                reason: format!("mean calibration rating {:.3} above {calibration_threshold}", cal_sum / *cal_n as f64),
            });
        } else if *dur < min_duration {
            rejected.push(RejectedAnnotator { annotator_id: a.to_string(), reason: format!("total duration {dur:.1}s below {min_duration}s") });
        }
    }
    let bad: HashSet<&str> = rejected.iter().map(|r| r.annotator_id.as_str()).collect();
    let kept = records.iter().filter(|r| !bad.contains(r.annotator_id.as_str())).cloned().collect();
    ScreenResult { kept, rejected, warnings }
}
