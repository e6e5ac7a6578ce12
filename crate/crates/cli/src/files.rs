//! File helpers shared by the subcommands and the pipeline.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use topeval::cooc::CoocCounts;
use topeval::corpus::{EncodedCorpus, Vocabulary};
use topeval::humaneval::{read_items_jsonl, read_responses_csv, AnnotationRecord, SurveyItem};
use topeval::topic::{read_topics_jsonl, Topic};

use crate::error::{validation, CliResult, Context};

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| validation(format!("cannot open {}: {e}", path.display())))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).context(format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).context(format!("creating {}", path.display()))?))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    {
        let mut w = create(&tmp)?;
        w.write_all(bytes)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path).context(format!("renaming into {}", path.display()))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).context(format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
}

/// Reads a TOML file when given, else the type's defaults.
pub fn read_toml_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), read_toml)
}

pub fn write_json_pretty<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => write_atomic(p, format!("{text}\n").as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn write_jsonl<T: Serialize>(values: &[T], path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    for v in values {
        serde_json::to_writer(&mut w, v)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    use std::io::BufRead;
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).context(format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut r = open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_vocab(path: &Path) -> CliResult<Vocabulary> {
    Vocabulary::read_tsv(open(path)?).context(path.display())
}

pub fn load_corpus(path: &Path) -> CliResult<EncodedCorpus> {
    if !path.exists() {
        return Err(validation(format!("{} does not exist", path.display())));
    }
    EncodedCorpus::load(path).context(path.display())
}

pub fn load_counts(path: &Path) -> CliResult<CoocCounts> {
    CoocCounts::read_binary(open(path)?).context(path.display())
}

pub fn load_topics(paths: &[PathBuf]) -> CliResult<Vec<Topic>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_topics_jsonl(open(p)?).context(p.display())?);
    }
    Ok(out)
}

pub fn load_items(path: &Path) -> CliResult<Vec<SurveyItem>> {
    read_items_jsonl(open(path)?).context(path.display())
}

pub fn load_responses(path: &Path) -> CliResult<Vec<AnnotationRecord>> {
    read_responses_csv(open(path)?).context(path.display())
}
