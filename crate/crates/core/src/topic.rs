//! The ranked word list every model, metric and survey exchanges.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub source_tag: String,
    pub topic_id: usize,
    pub words: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Topic {
    pub fn new(source_tag: impl Into<String>, topic_id: usize, words: Vec<String>, weights: Option<Vec<f64>>) -> Result<Self> {
        let t = Self { source_tag: source_tag.into(), topic_id, words, weights };
        t.validate()?;
        Ok(t)
    }

    /// Convenience constructor for unweighted word lists.
    pub fn from_words<S: AsRef<str>>(source_tag: &str, topic_id: usize, words: &[S]) -> Result<Self> {
        Self::new(source_tag, topic_id, words.iter().map(|w| w.as_ref().to_string()).collect(), None)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.words.len());
        for w in &self.words {
            if !seen.insert(w.as_str()) {
                return Err(Error::InvalidInput(format!("topic {}/{} repeats word {w:?}", self.source_tag, self.topic_id)));
            }
        }
        if let Some(ws) = &self.weights {
            if ws.len() != self.words.len() {
                return Err(Error::InvalidInput(format!(
                    "topic {}/{} has {} words but {} weights",
                    self.source_tag,
                    self.topic_id,
                    self.words.len(),
                    ws.len()
                )));
            }
            if ws.windows(2).any(|p| p[1] > p[0]) {
                return Err(Error::InvalidInput(format!("topic {}/{} weights are not nonincreasing", self.source_tag, self.topic_id)));
            }
        }
        Ok(())
    }

    pub fn top(&self, n: usize) -> &[String] {
        &self.words[..n.min(self.words.len())]
    }

    pub fn key(&self) -> TopicRef {
        TopicRef { source_tag: self.source_tag.clone(), topic_id: self.topic_id }
    }
}

/// Stable identity of a topic across files.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopicRef {
    pub source_tag: String,
    pub topic_id: usize,
}

impl std::fmt::Display for TopicRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.source_tag, self.topic_id)
    }
}

pub fn write_topics_jsonl<W: Write>(topics: &[Topic], mut w: W) -> Result<()> {
    for t in topics {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_topics_jsonl<R: BufRead>(r: R) -> Result<Vec<Topic>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Topic = serde_json::from_str(&line).map_err(|e| Error::Format(format!("topic line {}: {e}", i + 1)))?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}
