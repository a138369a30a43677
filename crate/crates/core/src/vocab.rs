//! Vocabularies, triple tokenization and the word-vector input table.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::uniform;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
/// Boundary between head, relation and tail in a flattened triple.
pub const SEP: usize = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "[SEP]"];

/// Token <-> index map with fixed special indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Frequency-ranked vocabulary of at most `max_size` ordinary tokens.
    /// Ties in frequency are broken lexicographically.
    pub fn build<S, T, W>(streams: S, max_size: usize) -> Result<Self>
    where
        S: IntoIterator<Item = T>,
        T: IntoIterator<Item = W>,
        W: AsRef<str>,
    {
        if max_size == 0 {
            return Err(Error::Config("vocabulary max_size must be positive".into()));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut seen_any = false;
        for stream in streams {
            for w in stream {
                seen_any = true;
                let w = w.as_ref();
                if SPECIAL_TOKENS.contains(&w) {
                    continue;
                }
                match counts.get_mut(w) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(w.to_string(), 1);
                    }
                }
            }
        }
        if !seen_any {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        // BTreeMap iteration is already lexicographic; a stable sort on count
        // keeps that order among ties.
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        ranked.truncate(max_size);
        Self::from_tokens(
            SPECIAL_TOKENS
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(w, _)| w))
                .collect(),
        )
    }

    /// Rebuild from a full index-ordered token list (specials included).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b)
        {
            return Err(Error::Data("token list does not start with the special tokens".into()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { index, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to UNK.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<W: AsRef<str>>(&self, words: impl IntoIterator<Item = W>) -> Vec<usize> {
        words.into_iter().map(|w| self.lookup(w.as_ref())).collect()
    }

    /// `BOS w1 .. wn EOS`, the unit the language model trains on.
    pub fn encode_sentence<W: AsRef<str>>(&self, words: impl IntoIterator<Item = W>) -> Vec<usize> {
        let mut ids = Vec::new();
        ids.push(BOS);
        ids.extend(words.into_iter().map(|w| self.lookup(w.as_ref())));
        ids.push(EOS);
        ids
    }
}

/// Lowercased whitespace tokens of a line of running text.
pub fn words(line: &str) -> Vec<String> {
    line.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Split an identifier such as `/people/person/barack_obama` into
/// lowercase words.
pub fn split_identifier(s: &str) -> Vec<String> {
    s.split(|c: char| c == '_' || c == '/' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// A triple rendered as a word sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleTokens {
    pub head: Vec<String>,
    pub relation: Vec<String>,
    pub tail: Vec<String>,
}

impl TripleTokens {
    /// `head [SEP] relation [SEP] tail`.
    pub fn sequence(&self) -> Vec<&str> {
        let sep = SPECIAL_TOKENS[SEP];
        self.head
            .iter()
            .map(String::as_str)
            .chain(core::iter::once(sep))
            .chain(self.relation.iter().map(String::as_str))
            .chain(core::iter::once(sep))
            .chain(self.tail.iter().map(String::as_str))
            .collect()
    }

    pub fn ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        let mut out = vocab.encode(&self.head);
        out.push(SEP);
        out.extend(vocab.encode(&self.relation));
        out.push(SEP);
        out.extend(vocab.encode(&self.tail));
        out
    }

    /// Surface strings with words rejoined by underscores. Exact inverse of
    /// [`tokenize_triple`] for lowercase underscore-joined identifiers.
    pub fn detokenize(&self) -> (String, String, String) {
        (self.head.join("_"), self.relation.join("_"), self.tail.join("_"))
    }

    /// Split a flattened sequence back into its three fields.
    pub fn from_sequence<W: AsRef<str>>(seq: &[W]) -> Result<Self> {
        let sep = SPECIAL_TOKENS[SEP];
        let parts: Vec<Vec<String>> = seq
            .split(|w| w.as_ref() == sep)
            .map(|p| p.iter().map(|w| w.as_ref().to_string()).collect())
            .collect();
        match <[Vec<String>; 3]>::try_from(parts) {
            Ok([head, relation, tail]) if !head.is_empty() && !relation.is_empty() && !tail.is_empty() => {
                Ok(TripleTokens { head, relation, tail })
            }
            _ => Err(Error::Data("sequence is not head [SEP] relation [SEP] tail".into())),
        }
    }
}

pub fn tokenize_triple(head: &str, relation: &str, tail: &str) -> Result<TripleTokens> {
    let field = |name: &str, s: &str| {
        let words = split_identifier(s);
        if words.is_empty() {
            Err(Error::Data(format!("empty {name} in triple ({head:?}, {relation:?}, {tail:?})")))
        } else {
            Ok(words)
        }
    };
    Ok(TripleTokens {
        head: field("head", head)?,
        relation: field("relation", relation)?,
        tail: field("tail", tail)?,
    })
}

/// Half-width of the uniform distribution for rows without a pretrained vector.
pub const OOV_INIT_RANGE: f64 = 0.05;

/// Word-vector matrix aligned with a vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<R> {
    pub matrix: Tensor<R>,
    pub trainable: bool,
    /// Ordinary vocabulary tokens that received a pretrained vector.
    pub found: usize,
}

impl<R: Real> EmbeddingTable<R> {
    /// Every row drawn from U(-0.05, 0.05) with a seeded stream.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "embedding-oov");
        EmbeddingTable {
            matrix: uniform(&mut r, &[vocab_size, dim], OOV_INIT_RANGE),
            trainable: true,
            found: 0,
        }
    }

    /// Random rows, then each vocabulary token present in `vectors` gets its
    /// pretrained values copied verbatim. Later duplicates are ignored.
    pub fn from_pretrained<I>(vocab: &Vocabulary, dim: usize, vectors: I, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<R>)>,
    {
        let mut table = Self::random(vocab.len(), dim, seed);
        let mut filled = alloc::vec![false; vocab.len()];
        for (token, values) in vectors {
            if values.len() != dim {
                return Err(Error::Data(format!(
                    "vector for {token:?} has {} values, expected {dim}",
                    values.len()
                )));
            }
            if let Some(ix) = vocab.get(&token) {
                if !filled[ix] {
                    filled[ix] = true;
                    table.matrix.data_mut()[ix * dim..(ix + 1) * dim].copy_from_slice(&values);
                }
            }
        }
        table.found = filled[SPECIAL_TOKENS.len()..].iter().filter(|&&f| f).count();
        Ok(table)
    }

    /// Fraction of ordinary vocabulary tokens covered by pretrained vectors.
    pub fn coverage(&self) -> f64 {
        let ordinary = self.matrix.rows().saturating_sub(SPECIAL_TOKENS.len());
        if ordinary == 0 {
            0.0
        } else {
            self.found as f64 / ordinary as f64
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[R] {
        self.matrix.row(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build([words("a a b")], 10).unwrap();
        assert_eq!(v.len(), SPECIAL_TOKENS.len() + 2);
        assert!(v.get("a").unwrap() < v.get("b").unwrap());
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = Vocabulary::build([words("b a")], 10).unwrap();
        assert!(v.get("a").unwrap() < v.get("b").unwrap());
    }

    #[test]
    fn cutoff_keeps_most_frequent() {
        // 100k distinct tokens; the first 70k appear twice.
        let tokens: Vec<String> = (0..100_000).map(|i| format!("w{i:06}")).collect();
        let stream = tokens.iter().chain(tokens[..70_000].iter());
        let v = Vocabulary::build([stream], 70_000).unwrap();
        assert_eq!(v.len(), 70_000 + SPECIAL_TOKENS.len());
        assert!(v.get("w069999").is_some());
        assert!(v.get("w070000").is_none());
    }

    #[test]
    fn empty_corpus_is_data_error() {
        let empty: [Vec<&str>; 1] = [vec![]];
        assert!(matches!(Vocabulary::build(empty, 10), Err(Error::Data(_))));
    }

    #[test]
    fn specials_fixed() {
        let v = Vocabulary::build([words("x y z")], 1).unwrap();
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(UNK), Some("<unk>"));
        assert_eq!(v.token(BOS), Some("<s>"));
        assert_eq!(v.token(EOS), Some("</s>"));
        assert_eq!(v.token(SEP), Some("[SEP]"));
        assert_eq!(v.lookup("nope"), UNK);
        assert_eq!(v.encode_sentence(["x"]), vec![BOS, v.lookup("x"), EOS]);
    }

    #[test]
    fn tokenize_splits_identifiers() {
        let t = tokenize_triple("barack_obama", "profession", "politician").unwrap();
        assert_eq!(t.sequence(), vec!["barack", "obama", "[SEP]", "profession", "[SEP]", "politician"]);
        let t = tokenize_triple("/people/Person", "a b", "x").unwrap();
        assert_eq!(t.head, vec!["people", "person"]);
        assert_eq!(t.relation, vec!["a", "b"]);
    }

    #[test]
    fn tokenize_empty_field_is_data_error() {
        assert!(matches!(tokenize_triple("/person/politician", "", "x"), Err(Error::Data(_))));
        assert!(matches!(tokenize_triple("a", "r", "__/"), Err(Error::Data(_))));
    }

    #[test]
    fn single_word_triple_round_trips() {
        let t = tokenize_triple("a", "b", "c").unwrap();
        assert_eq!(t.sequence().len(), 5);
        let back = TripleTokens::from_sequence(&t.sequence()).unwrap();
        assert_eq!(back.detokenize(), ("a".into(), "b".into(), "c".into()));
    }

    #[test]
    fn pretrained_rows_copied_and_oov_seeded() {
        let v = Vocabulary::build([words("cat dog")], 10).unwrap();
        let t = EmbeddingTable::<f32>::from_pretrained(
            &v,
            2,
            [("cat".to_string(), vec![1.0, 2.0])],
            9,
        )
        .unwrap();
        assert_eq!(t.row(v.lookup("cat")), &[1.0, 2.0]);
        let again = EmbeddingTable::<f32>::random(v.len(), 2, 9);
        let dog = v.lookup("dog");
        assert_eq!(t.row(dog), again.row(dog));
        assert!(t.row(dog).iter().all(|x| x.abs() < 0.05));
        assert_eq!(t.found, 1);
        assert!((t.coverage() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pretrained_wrong_width_rejected() {
        let v = Vocabulary::build([words("cat")], 10).unwrap();
        let r = EmbeddingTable::<f32>::from_pretrained(&v, 2, [("cat".to_string(), vec![1.0])], 0);
        assert!(matches!(r, Err(Error::Data(_))));
    }

    fn ident() -> impl Strategy<Value = String> {
        proptest::collection::vec("[a-z0-9]{1,6}", 1..4).prop_map(|ws| ws.join("_"))
    }

    proptest! {
        #[test]
        fn triple_round_trip(h in ident(), r in ident(), t in ident()) {
            let tt = tokenize_triple(&h, &r, &t).unwrap();
            let back = TripleTokens::from_sequence(&tt.sequence()).unwrap();
            prop_assert_eq!(back.detokenize(), (h, r, t));
        }

        #[test]
        fn build_is_order_independent(a in proptest::collection::vec("[a-e]", 1..30),
                                      b in proptest::collection::vec("[a-e]", 1..30)) {
            let v1 = Vocabulary::build([a.clone(), b.clone()], 3).unwrap();
            let v2 = Vocabulary::build([b, a], 3).unwrap();
            prop_assert_eq!(v1, v2);
        }
    }
}
