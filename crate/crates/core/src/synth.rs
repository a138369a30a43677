//! Small synthetic corpora with known structure, used for overfit checks,
//! the joint-training experiments and the examples in the README.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::joint::JointRecord;
use crate::kge::{Triple, TripleKey};
use crate::rng::{self, Rng};
use crate::typer::TypingRecord;

pub const KG_CLUSTERS: [&str; 5] = ["river", "mountain", "city", "person", "company"];

/// `(relation, head cluster, tail cluster)`: a relation holds between every
/// head of its domain cluster and every tail of its range cluster.
pub const KG_RELATIONS: [(&str, usize, usize); 5] = [
    ("flows_through", 0, 2),
    ("lies_near", 1, 2),
    ("born_in", 3, 2),
    ("works_for", 3, 4),
    ("headquartered_in", 4, 2),
];

/// A knowledge graph whose truth is decided by entity clusters alone.
#[derive(Debug, Clone)]
pub struct SyntheticKg {
    pub positives: Vec<Triple>,
    /// Every true triple, sampled or not.
    pub truth: Vec<Triple>,
    pub entities: Vec<String>,
}

impl SyntheticKg {
    pub fn truth_keys(&self) -> BTreeSet<TripleKey> {
        self.truth.iter().map(Triple::key).collect()
    }
}

/// 5 clusters of `per_cluster` entities named `{cluster}_{i}` and 5 typed
/// relations. With 10 entities per cluster there are exactly 500 true
/// triples; `n_positives` of them are sampled without replacement.
pub fn separable_kg(seed: u64, per_cluster: usize, n_positives: usize) -> SyntheticKg {
    let mut rng = rng::stream(seed, "synth-kg");
    let entities: Vec<String> = KG_CLUSTERS
        .iter()
        .flat_map(|c| (0..per_cluster).map(move |i| format!("{c}_{i}")))
        .collect();
    let mut truth = Vec::new();
    for &(rel, a, b) in &KG_RELATIONS {
        for i in 0..per_cluster {
            for j in 0..per_cluster {
                truth.push(Triple::labeled(
                    &entities[a * per_cluster + i],
                    rel,
                    &entities[b * per_cluster + j],
                    true,
                ));
            }
        }
    }
    let mut positives = truth.clone();
    positives.shuffle(&mut rng);
    positives.truncate(n_positives);
    SyntheticKg {
        positives,
        truth,
        entities,
    }
}

/// Type sets keyed by the context that announces them.
const TYPE_CATEGORIES: [(&[&str], &[&str], &[&str]); 9] = [
    (&["/person"], &["yesterday", "the", "senator"], &["spoke", "to", "reporters"]),
    (&["/person", "/person/artist"], &["the", "painter"], &["exhibited", "new", "canvases"]),
    (&["/location"], &["we", "hiked", "across"], &["under", "clear", "skies"]),
    (&["/location", "/location/city"], &["the", "mayor", "of"], &["approved", "a", "budget"]),
    (&["/organization"], &["members", "of"], &["held", "a", "vote"]),
    (&["/organization", "/organization/company"], &["shares", "of"], &["rose", "sharply"]),
    (&["/event"], &["tickets", "for"], &["sold", "out", "quickly"]),
    (&["/product"], &["customers", "bought"], &["online", "last", "week"]),
    (&["/art", "/art/film"], &["critics", "praised"], &["at", "the", "premiere"]),
];

const FILLER: [&str; 8] = ["today", "reportedly", "again", "then", "indeed", "meanwhile", "also", "still"];

/// Pronounceable unique pseudo-words.
pub fn pseudo_words(rng: &mut Rng, n: usize) -> Vec<String> {
    const ON: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const NU: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syl = rng.gen_range(2..4);
        let w: String = (0..syl)
            .map(|_| format!("{}{}", ON[rng.gen_range(0..ON.len())], NU[rng.gen_range(0..NU.len())]))
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// `n` typing records over 10 type labels. Each record's type set is
/// determined by the words around the mention; mention names carry no
/// type signal.
pub fn typing_corpus(seed: u64, n: usize) -> Vec<TypingRecord> {
    let mut rng = rng::stream(seed, "synth-typing");
    let names = pseudo_words(&mut rng, 60);
    (0..n)
        .map(|_| {
            let (types, left, right) = TYPE_CATEGORIES[rng.gen_range(0..TYPE_CATEGORIES.len())];
            let mut tokens: Vec<String> = Vec::new();
            if rng.gen_bool(0.5) {
                tokens.push(FILLER[rng.gen_range(0..FILLER.len())].into());
            }
            tokens.extend(left.iter().map(|w| String::from(*w)));
            let start = tokens.len();
            for _ in 0..rng.gen_range(1..3) {
                tokens.push(names[rng.gen_range(0..names.len())].clone());
            }
            let end = tokens.len();
            tokens.extend(right.iter().map(|w| String::from(*w)));
            if rng.gen_bool(0.5) {
                tokens.push(FILLER[rng.gen_range(0..FILLER.len())].into());
            }
            TypingRecord {
                tokens,
                start,
                end,
                types: types.iter().map(|t| String::from(*t)).collect(),
            }
        })
        .collect()
}

/// Entity classes and the relations whose subject they are:
/// `(relation, object class, verbal phrase)`.
struct FactSchema {
    class: &'static str,
    relations: &'static [(&'static str, &'static str, &'static str)],
}

const WIKIFACTS: [FactSchema; 5] = [
    FactSchema {
        class: "person",
        relations: &[
            ("born_in", "city", "was born in"),
            ("works_for", "company", "works for"),
            ("lives_in", "city", "lives in"),
        ],
    },
    FactSchema {
        class: "city",
        relations: &[("located_in", "country", "is located in")],
    },
    FactSchema {
        class: "company",
        relations: &[("headquartered_in", "city", "is headquartered in"), ("founded_by", "person", "was founded by")],
    },
    FactSchema {
        class: "country",
        relations: &[],
    },
    FactSchema {
        class: "river",
        relations: &[("flows_through", "country", "flows through")],
    },
];

/// Entities per class of the WikiFacts-style world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorldSize {
    pub persons: usize,
    pub cities: usize,
    pub companies: usize,
    pub countries: usize,
    pub rivers: usize,
}

impl Default for WorldSize {
    fn default() -> Self {
        WorldSize {
            persons: 150,
            cities: 150,
            companies: 150,
            countries: 4,
            rivers: 150,
        }
    }
}

impl WorldSize {
    fn count(&self, class: &str) -> usize {
        match class {
            "person" => self.persons,
            "city" => self.cities,
            "company" => self.companies,
            "country" => self.countries,
            _ => self.rivers,
        }
    }
}

/// [`wikifacts_with`] over the default world.
pub fn wikifacts(seed: u64, n_sentences: usize) -> Vec<JointRecord> {
    wikifacts_with(seed, n_sentences, &WorldSize::default())
}

/// WikiFacts-style corpus. The first `n_sentences` records are sentences
/// about a subject entity stating 1 to 3 of its facts, annotated with the
/// triples they express. The subject's class is drawn uniformly, then the
/// subject within it. They are followed by the knowledge graph itself:
/// one sentence-less record per fact of the world, so the graph also holds
/// facts no sentence mentions. Entities are single pseudo-word tokens.
pub fn wikifacts_with(seed: u64, n_sentences: usize, size: &WorldSize) -> Vec<JointRecord> {
    let mut rng = rng::stream(seed, "synth-wikifacts");
    let total: usize = WIKIFACTS.iter().map(|s| size.count(s.class)).sum();
    let names = pseudo_words(&mut rng, total);
    let mut by_class: Vec<(&str, Vec<String>)> = Vec::new();
    let mut offset = 0;
    for s in &WIKIFACTS {
        let n = size.count(s.class);
        by_class.push((s.class, names[offset..offset + n].to_vec()));
        offset += n;
    }
    let members = |class: &str| -> &Vec<String> { &by_class.iter().find(|c| c.0 == class).unwrap().1 };
    // Every subject gets one fixed object per relation.
    let mut facts: Vec<(&str, String, Vec<(Triple, &'static str)>)> = Vec::new();
    for s in &WIKIFACTS {
        if s.relations.is_empty() {
            continue;
        }
        for subj in members(s.class) {
            let fs = s
                .relations
                .iter()
                .filter(|r| !members(r.1).is_empty())
                .map(|&(rel, obj_class, phrase)| {
                    let objs = members(obj_class);
                    let obj = &objs[rng.gen_range(0..objs.len())];
                    (Triple::labeled(subj, rel, obj, true), phrase)
                })
                .collect::<Vec<_>>();
            if !fs.is_empty() {
                facts.push((s.class, subj.clone(), fs));
            }
        }
    }
    let mut classes: Vec<&str> = facts.iter().map(|f| f.0).collect();
    classes.dedup();
    let mut out: Vec<JointRecord> = (0..n_sentences)
        .map(|_| {
            let class = classes[rng.gen_range(0..classes.len())];
            let pool: Vec<_> = facts.iter().filter(|f| f.0 == class).collect();
            let (_, subj, fs) = pool[rng.gen_range(0..pool.len())];
            let k = rng.gen_range(1..=fs.len().min(3));
            let mut chosen: Vec<&(Triple, &str)> = fs.choose_multiple(&mut rng, k).collect();
            chosen.sort_by_key(|f| f.0.relation.clone());
            let mut tokens = vec![subj.clone()];
            for (i, (t, phrase)) in chosen.iter().enumerate() {
                if i > 0 {
                    tokens.push("and".into());
                }
                tokens.extend(phrase.split(' ').map(String::from));
                tokens.push(t.tail.clone());
            }
            tokens.push(".".into());
            JointRecord {
                tokens,
                triples: chosen.iter().map(|f| f.0.clone()).collect(),
            }
        })
        .collect();
    out.extend(facts.iter().flat_map(|(_, _, fs)| fs).map(|(t, _)| JointRecord {
        tokens: Vec::new(),
        triples: vec![t.clone()],
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kg_truth_is_cluster_rule() {
        let kg = separable_kg(0, 10, 500);
        assert_eq!(kg.entities.len(), 50);
        assert_eq!(kg.truth.len(), 500);
        assert_eq!(kg.positives.len(), 500);
        let keys = kg.truth_keys();
        assert!(kg.positives.iter().all(|p| keys.contains(&p.key())));
        let distinct: BTreeSet<_> = kg.positives.iter().map(Triple::key).collect();
        assert_eq!(distinct.len(), 500);
        let rels: BTreeSet<_> = kg.positives.iter().map(|p| p.relation.clone()).collect();
        assert_eq!(rels.len(), 5);
    }

    #[test]
    fn typing_corpus_shape() {
        let c = typing_corpus(1, 300);
        assert_eq!(c.len(), 300);
        let types: BTreeSet<&str> = c.iter().flat_map(|r| r.types.iter().map(String::as_str)).collect();
        assert_eq!(types.len(), 10);
        assert!(c.iter().all(|r| r.start < r.end && r.end <= r.tokens.len()));
        assert_eq!(typing_corpus(1, 300), c);
    }

    #[test]
    fn wikifacts_sentences_express_their_triples() {
        let c = wikifacts(3, 500);
        let (sentences, graph): (Vec<&JointRecord>, Vec<&JointRecord>) = c.iter().partition(|r| !r.tokens.is_empty());
        assert_eq!(sentences.len(), 500);
        assert_eq!(&c[..500], sentences.iter().map(|r| (*r).clone()).collect::<Vec<_>>().as_slice());
        // persons x 3 + cities + companies x 2 + rivers.
        assert_eq!(graph.len(), 150 * 3 + 150 + 150 * 2 + 150);
        assert!(graph.iter().all(|r| r.triples.len() == 1));
        let kg: BTreeSet<TripleKey> = graph.iter().map(|r| r.triples[0].key()).collect();
        assert_eq!(kg.len(), graph.len());
        for r in sentences {
            assert!((1..=3).contains(&r.triples.len()));
            for t in &r.triples {
                assert_eq!(r.tokens[0], t.head);
                assert!(r.tokens.contains(&t.tail));
                assert!(kg.contains(&t.key()));
            }
        }
        assert_eq!(wikifacts(3, 500), c);
    }
}
