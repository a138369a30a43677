//! Pretrained word vectors in GloVe text format: `token v1 ... vd`, one
//! token per line, uniform `d`.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use jket_core::vocab::{EmbeddingTable, Vocabulary};

use crate::error::{CliError, CoreContext, Result};

/// Build the embedding table for `vocab`, copying rows for tokens in the
/// file verbatim. Only matched rows are kept in memory while reading.
pub fn load_pretrained(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable<f32>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut file_dim: Option<usize> = None;
    let mut matched = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CliError::format(path, Some(line_no), e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        let d = *file_dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(CliError::format(
                path,
                Some(line_no),
                format!("expected {d} values after {token:?}, found {}", values.len()),
            ));
        }
        if vocab.get(token).is_none() {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| CliError::format(path, Some(line_no), format!("bad number: {e}")))?;
        if parsed.iter().any(|v| !v.is_finite()) {
            return Err(CliError::format(path, Some(line_no), "non-finite vector value"));
        }
        matched.push((token.to_string(), parsed));
    }
    match file_dim {
        Some(d) if d != dim => {
            return Err(CliError::format(path, None, format!("vectors have dimension {d}, config embed_dim is {dim}")))
        }
        None => return Err(CliError::format(path, None, "no vectors in file")),
        _ => {}
    }
    EmbeddingTable::from_pretrained(vocab, dim, matched, seed).during("load_pretrained")
}
