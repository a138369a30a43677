//! Streaming dataset readers. Each reader yields one record per non-blank
//! line and reports malformed lines with their 1-based line number. In
//! lenient mode malformed lines are skipped and counted instead.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use jket_core::joint::JointRecord;
use jket_core::kge::Triple;
use jket_core::typer::TypingRecord;
use jket_core::vocab::words;

use crate::error::{CliError, Result};

/// Records parsed line by line from a file.
#[derive(Debug)]
pub struct Records<T> {
    path: PathBuf,
    reader: BufReader<File>,
    line_no: usize,
    buf: String,
    lenient: bool,
    skipped: usize,
    parse: fn(&str) -> std::result::Result<T, String>,
}

impl<T> Records<T> {
    fn open(path: &Path, lenient: bool, parse: fn(&str) -> std::result::Result<T, String>) -> Result<Self> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        Ok(Records {
            path: path.to_path_buf(),
            reader: BufReader::new(file),
            line_no: 0,
            buf: String::new(),
            lenient,
            skipped: 0,
            parse,
        })
    }

    /// Malformed lines skipped so far (lenient mode only).
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<T> Iterator for Records<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            let outcome = match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    let line = self.buf.trim_end_matches(['\n', '\r']);
                    if line.trim().is_empty() {
                        continue;
                    }
                    (self.parse)(line)
                }
                Err(e) if e.kind() == io::ErrorKind::InvalidData => Err("line is not valid UTF-8".to_string()),
                Err(e) => return Some(Err(CliError::io(&self.path, e))),
            };
            match outcome {
                Ok(rec) => return Some(Ok(rec)),
                Err(_) if self.lenient => self.skipped += 1,
                Err(msg) => return Some(Err(CliError::format(&self.path, Some(self.line_no), msg))),
            }
        }
    }
}

/// `head \t relation \t tail [\t label]`, label in {1, 0, -1}.
pub fn parse_triple(line: &str) -> std::result::Result<Triple, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(format!("expected 3 or 4 tab-separated fields, found {}", fields.len()));
    }
    for (name, f) in ["head", "relation", "tail"].iter().zip(&fields) {
        if f.trim().is_empty() {
            return Err(format!("empty {name}"));
        }
    }
    let mut t = Triple::new(fields[0].trim(), fields[1].trim(), fields[2].trim());
    if let Some(label) = fields.get(3) {
        t.label = Some(match label.trim() {
            "1" | "+1" => true,
            "0" | "-1" => false,
            other => return Err(format!("label must be 1, 0 or -1, found {other:?}")),
        });
    }
    Ok(t)
}

#[derive(Deserialize)]
struct TypingLine {
    tokens: Vec<String>,
    start: usize,
    end: usize,
    #[serde(default)]
    types: Vec<String>,
}

pub fn parse_typing(line: &str) -> std::result::Result<TypingRecord, String> {
    let r: TypingLine = serde_json::from_str(line).map_err(|e| format!("invalid typing record: {e}"))?;
    if r.start >= r.end || r.end > r.tokens.len() {
        return Err(format!(
            "mention span [{}, {}) is not inside a sentence of {} tokens",
            r.start,
            r.end,
            r.tokens.len()
        ));
    }
    Ok(TypingRecord {
        tokens: r.tokens,
        start: r.start,
        end: r.end,
        types: r.types,
    })
}

#[derive(Deserialize)]
struct JointLine {
    tokens: Vec<String>,
    triples: Vec<[String; 3]>,
}

/// `{"tokens": [...], "triples": [[h, r, t], ...]}`. Empty `tokens` give a
/// knowledge-graph fact with no sentence.
pub fn parse_joint(line: &str) -> std::result::Result<JointRecord, String> {
    let r: JointLine = serde_json::from_str(line).map_err(|e| format!("invalid joint record: {e}"))?;
    if r.tokens.is_empty() && r.triples.is_empty() {
        return Err("record has neither tokens nor triples".into());
    }
    let mut triples = Vec::with_capacity(r.triples.len());
    for [h, rel, t] in r.triples {
        if h.trim().is_empty() || rel.trim().is_empty() || t.trim().is_empty() {
            return Err("triple with an empty field".into());
        }
        triples.push(Triple::new(&h, &rel, &t));
    }
    Ok(JointRecord { tokens: r.tokens, triples })
}

/// One whitespace-tokenised, lowercased sentence per line.
pub fn parse_sentence(line: &str) -> std::result::Result<Vec<String>, String> {
    Ok(words(line))
}

pub fn triples(path: &Path, lenient: bool) -> Result<Records<Triple>> {
    Records::open(path, lenient, parse_triple)
}

pub fn typing(path: &Path, lenient: bool) -> Result<Records<TypingRecord>> {
    Records::open(path, lenient, parse_typing)
}

pub fn joint(path: &Path, lenient: bool) -> Result<Records<JointRecord>> {
    Records::open(path, lenient, parse_joint)
}

pub fn sentences(path: &Path, lenient: bool) -> Result<Records<Vec<String>>> {
    Records::open(path, lenient, parse_sentence)
}

/// Drain a reader, warning on stderr about skipped lines.
pub fn collect<T>(records: Records<T>) -> Result<Vec<T>> {
    let mut records = records;
    let out = records.by_ref().collect::<Result<Vec<T>>>()?;
    if records.skipped() > 0 {
        eprintln!("warning: skipped {} malformed lines in {}", records.skipped(), records.path().display());
    }
    Ok(out)
}
