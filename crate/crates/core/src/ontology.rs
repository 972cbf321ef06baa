//! Concept dictionaries: loading, validation, and training-pair generation.
//!
//! Dictionary TSV rows are `concept_id<TAB>term<TAB>is_preferred` with
//! `is_preferred` in `{0, 1}`; definition TSV rows are
//! `concept_id<TAB>definition`. Neither format has a header.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::text::normalize;

/// Upper bound on synonym pairs drawn from a single concept.
pub const MAX_PAIRS_PER_CONCEPT: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub concept_id: String,
    pub preferred_term: String,
    /// Surface forms in file order; always contains `preferred_term`.
    pub synonyms: Vec<String>,
    pub definition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptStore {
    concepts: BTreeMap<String, Concept>,
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    #[serde(rename = "a")]
    pub text_a: String,
    #[serde(rename = "b")]
    pub text_b: String,
    #[serde(rename = "cid")]
    pub concept_id: String,
}

/// Non-fatal findings collected while loading a file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl LoadReport {
    fn warn(&mut self, message: String) {
        warn!("{message}");
        self.warnings.push(message);
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

#[derive(Default)]
struct ConceptBuilder {
    preferred: Option<String>,
    synonyms: Vec<String>,
    seen: HashSet<String>,
}

impl ConceptStore {
    /// Builds a store from finished concepts, checking every invariant.
    pub fn from_concepts(
        concepts: impl IntoIterator<Item = Concept>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for concept in concepts {
            let id = concept.concept_id.clone();
            if map.insert(id.clone(), concept).is_some() {
                return Err(Error::Validation(format!("duplicate concept_id {id:?}")));
            }
        }
        let store = ConceptStore {
            concepts: map,
            source_tag: source_tag.into(),
        };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        for (id, c) in &self.concepts {
            if id != &c.concept_id {
                return Err(Error::Validation(format!("key {id:?} holds concept {:?}", c.concept_id)));
            }
            if c.preferred_term.trim().is_empty() {
                return Err(Error::Validation(format!("concept {id:?} has no preferred term")));
            }
            if !c.synonyms.contains(&c.preferred_term) {
                return Err(Error::Validation(format!(
                    "concept {id:?}: preferred term {:?} missing from synonyms",
                    c.preferred_term
                )));
            }
            let mut seen = HashSet::new();
            for s in &c.synonyms {
                let n = normalize(s);
                if n.is_empty() {
                    return Err(Error::Validation(format!("concept {id:?} has an empty synonym")));
                }
                if !seen.insert(n) {
                    return Err(Error::Validation(format!("concept {id:?}: duplicate synonym {s:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn load_dictionary(path: impl AsRef<Path>) -> Result<(Self, LoadReport)> {
        let path = path.as_ref();
        let content = read_file(path)?;
        Self::parse_dictionary(&content, path)
    }

    /// Parses dictionary TSV text; `origin` is used for error messages and the source tag.
    pub fn parse_dictionary(content: &str, origin: &Path) -> Result<(Self, LoadReport)> {
        let mut report = LoadReport::default();
        let mut builders: BTreeMap<String, ConceptBuilder> = BTreeMap::new();

        for (line_no, line) in data_lines(content) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("expected 3 tab-separated columns, found {}", cols.len()),
                ));
            }
            let (cid, term, flag) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
            if cid.is_empty() {
                return Err(Error::parse(origin, line_no, "empty concept_id"));
            }
            let is_preferred = match flag {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::parse(
                        origin,
                        line_no,
                        format!("is_preferred must be 0 or 1, found {other:?}"),
                    ))
                }
            };
            let key = normalize(term);
            if key.is_empty() {
                return Err(Error::parse(origin, line_no, "empty term"));
            }
            report.rows += 1;

            let builder = builders.entry(cid.to_string()).or_default();
            if !builder.seen.insert(key.clone()) {
                report.skipped += 1;
                report.warn(format!(
                    "{}:{line_no}: duplicate synonym {term:?} for concept {cid:?}, row skipped",
                    origin.display()
                ));
                if is_preferred && builder.preferred.is_none() {
                    // promote the surviving surface form
                    let existing = builder
                        .synonyms
                        .iter()
                        .find(|s| normalize(s) == key)
                        .cloned();
                    builder.preferred = existing;
                }
                continue;
            }
            builder.synonyms.push(term.to_string());
            if is_preferred {
                match &builder.preferred {
                    None => builder.preferred = Some(term.to_string()),
                    Some(first) => report.warn(format!(
                        "{}:{line_no}: concept {cid:?} already has preferred term {first:?}; keeping it",
                        origin.display()
                    )),
                }
            }
        }

        if builders.is_empty() {
            return Err(Error::EmptyDictionary);
        }

        let mut concepts = Vec::with_capacity(builders.len());
        for (cid, b) in builders {
            let preferred_term = b.preferred.ok_or_else(|| {
                Error::Validation(format!("concept {cid:?} has no preferred term"))
            })?;
            concepts.push(Concept {
                concept_id: cid,
                preferred_term,
                synonyms: b.synonyms,
                definition: None,
            });
        }
        let store = Self::from_concepts(concepts, origin.display().to_string())?;
        Ok((store, report))
    }

    /// Attaches definitions; unknown IDs are skipped and counted, and a
    /// repeated ID overwrites the earlier definition with a warning.
    pub fn load_definitions(&mut self, path: impl AsRef<Path>) -> Result<LoadReport> {
        let path = path.as_ref();
        let content = read_file(path)?;
        self.parse_definitions(&content, path)
    }

    pub fn parse_definitions(&mut self, content: &str, origin: &Path) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        let mut assigned: HashSet<String> = HashSet::new();
        for (line_no, line) in data_lines(content) {
            let Some((cid, definition)) = line.split_once('\t') else {
                return Err(Error::parse(origin, line_no, "expected concept_id<TAB>definition"));
            };
            let (cid, definition) = (cid.trim(), definition.trim());
            if cid.is_empty() || definition.is_empty() {
                return Err(Error::parse(origin, line_no, "empty concept_id or definition"));
            }
            report.rows += 1;
            let Some(concept) = self.concepts.get_mut(cid) else {
                report.skipped += 1;
                report.warn(format!(
                    "{}:{line_no}: definition for unknown concept {cid:?} skipped",
                    origin.display()
                ));
                continue;
            };
            if !assigned.insert(cid.to_string()) {
                report.warn(format!(
                    "{}:{line_no}: concept {cid:?} defined more than once; last definition wins",
                    origin.display()
                ));
            }
            concept.definition = Some(definition.to_string());
        }
        Ok(report)
    }

    pub fn get(&self, concept_id: &str) -> Option<&Concept> {
        self.concepts.get(concept_id)
    }

    pub fn contains(&self, concept_id: &str) -> bool {
        self.concepts.contains_key(concept_id)
    }

    /// Concepts in ascending concept_id order.
    pub fn iter(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn synonym_count(&self) -> usize {
        self.concepts.values().map(|c| c.synonyms.len()).sum()
    }

    pub fn definition_count(&self) -> usize {
        self.concepts.values().filter(|c| c.definition.is_some()).count()
    }

    /// Dictionary TSV that parses back into an equal store.
    pub fn to_dictionary_tsv(&self) -> String {
        let mut out = String::new();
        for c in self.concepts.values() {
            for s in &c.synonyms {
                let flag = u8::from(*s == c.preferred_term);
                let _ = writeln!(out, "{}\t{}\t{}", c.concept_id, s, flag);
            }
        }
        out
    }

    pub fn to_definitions_tsv(&self) -> String {
        let mut out = String::new();
        for c in self.concepts.values() {
            if let Some(d) = &c.definition {
                let _ = writeln!(out, "{}\t{}", c.concept_id, d);
            }
        }
        out
    }

    /// All unordered synonym pairs per concept (at most
    /// [`MAX_PAIRS_PER_CONCEPT`], sampled uniformly under `seed`), then a
    /// seeded global shuffle.
    pub fn synonym_pairs(&self, seed: u64) -> Vec<TrainingPair> {
        let mut rng = rng_for(seed);
        let mut pairs = Vec::new();
        for c in self.concepts.values() {
            let n = c.synonyms.len();
            let mut all = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    all.push((i, j));
                }
            }
            let chosen: Vec<(usize, usize)> = if all.len() > MAX_PAIRS_PER_CONCEPT {
                let mut picks = index::sample(&mut rng, all.len(), MAX_PAIRS_PER_CONCEPT).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|p| all[p]).collect()
            } else {
                all
            };
            pairs.extend(chosen.into_iter().map(|(i, j)| TrainingPair {
                text_a: c.synonyms[i].clone(),
                text_b: c.synonyms[j].clone(),
                concept_id: c.concept_id.clone(),
            }));
        }
        pairs.shuffle(&mut rng);
        pairs
    }

    /// One (synonym, definition) pair per synonym of every defined concept.
    pub fn name_definition_pairs(&self) -> Vec<TrainingPair> {
        let mut pairs = Vec::new();
        for c in self.concepts.values() {
            let Some(def) = &c.definition else { continue };
            let def_key = normalize(def);
            for s in &c.synonyms {
                if normalize(s) == def_key {
                    continue;
                }
                pairs.push(TrainingPair {
                    text_a: s.clone(),
                    text_b: def.clone(),
                    concept_id: c.concept_id.clone(),
                });
            }
        }
        pairs
    }
}

/// Writes pairs as JSON Lines `{"a": .., "b": .., "cid": ..}`.
pub fn write_pairs_jsonl(pairs: &[TrainingPair], mut out: impl Write) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(content: &str) -> Result<(ConceptStore, LoadReport)> {
        ConceptStore::parse_dictionary(content, Path::new("test.tsv"))
    }

    fn concept(id: &str, syns: &[&str]) -> Concept {
        Concept {
            concept_id: id.into(),
            preferred_term: syns[0].into(),
            synonyms: syns.iter().map(|s| s.to_string()).collect(),
            definition: None,
        }
    }

    #[test]
    fn preferred_and_synonyms() {
        let (store, report) = parse("C1\theadache\t1\nC1\thead ache\t0\n").unwrap();
        assert_eq!(store.len(), 1);
        let c = store.get("C1").unwrap();
        assert_eq!(c.synonyms, vec!["headache", "head ache"]);
        assert_eq!(c.preferred_term, "headache");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn empty_file() {
        assert!(matches!(parse(""), Err(Error::EmptyDictionary)));
        assert!(matches!(parse("\n\n"), Err(Error::EmptyDictionary)));
    }

    #[test]
    fn shared_surface_string_across_concepts() {
        let (store, _) = parse("C1\tnausea\t1\nC2\tnausea\t1\n").unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("C2").unwrap().preferred_term, "nausea");
        let (again, _) = parse(&store.to_dictionary_tsv()).unwrap();
        assert_eq!(again.len(), 2);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("C1\theadache\t1\nC1\toops\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("C1\tx\t2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_after_normalization_is_skipped() {
        let (store, report) = parse("C1\tHeadache\t1\nC1\t  headache \t0\nC1\tcephalgia\t0\n").unwrap();
        assert_eq!(store.get("C1").unwrap().synonyms, vec!["Headache", "cephalgia"]);
        assert_eq!(report.skipped, 1);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn missing_preferred_is_validation_error() {
        assert!(matches!(parse("C1\theadache\t0\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn definitions() {
        let (mut store, _) = parse("C1\theadache\t1\nC1\thead ache\t0\n").unwrap();
        let report = store
            .parse_definitions(
                "C1\tPain located in the head.\nC9\tunknown\nC1\tHead pain.\n",
                Path::new("defs.tsv"),
            )
            .unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.warnings.len(), 2);
        assert_eq!(store.get("C1").unwrap().definition.as_deref(), Some("Head pain."));
    }

    #[test]
    fn first_definition_alone() {
        let (mut store, _) = parse("C1\theadache\t1\n").unwrap();
        store
            .parse_definitions("C1\tPain located in the head.\n", Path::new("d"))
            .unwrap();
        assert_eq!(
            store.get("C1").unwrap().definition.as_deref(),
            Some("Pain located in the head.")
        );
        assert_eq!(store.definition_count(), 1);
    }

    #[test]
    fn synonym_pairs_combinatorics() {
        let store = ConceptStore::from_concepts(
            [concept("C1", &["a", "b", "c"]), concept("C2", &["z"])],
            "t",
        )
        .unwrap();
        let mut pairs: Vec<(String, String)> = store
            .synonym_pairs(3)
            .into_iter()
            .map(|p| {
                assert_eq!(p.concept_id, "C1");
                (p.text_a, p.text_b)
            })
            .collect();
        pairs.sort();
        let expected: Vec<(String, String)> = [("a", "b"), ("a", "c"), ("b", "c")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(pairs, expected);
    }

    #[test]
    fn synonym_pairs_capped_and_deterministic() {
        let syns: Vec<String> = (0..20).map(|i| format!("syn {i}")).collect();
        let refs: Vec<&str> = syns.iter().map(String::as_str).collect();
        let store = ConceptStore::from_concepts([concept("C1", &refs)], "t").unwrap();
        let a = store.synonym_pairs(11);
        assert_eq!(a.len(), MAX_PAIRS_PER_CONCEPT);
        assert_eq!(a, store.synonym_pairs(11));
        assert_ne!(a, store.synonym_pairs(12));
        let distinct: HashSet<_> = a.iter().map(|p| (&p.text_a, &p.text_b)).collect();
        assert_eq!(distinct.len(), MAX_PAIRS_PER_CONCEPT);
    }

    #[test]
    fn name_definition_pair_count() {
        let mut c1 = concept("C1", &["a", "b"]);
        c1.definition = Some("the a thing".into());
        let mut c2 = concept("C2", &["x", "y", "z"]);
        c2.definition = Some("the x thing".into());
        let c3 = concept("C3", &["q", "r"]);
        let store = ConceptStore::from_concepts([c1, c2, c3], "t").unwrap();
        let pairs = store.name_definition_pairs();
        // counting oracle: sum of synonym counts over defined concepts
        let expected: usize = store
            .iter()
            .filter(|c| c.definition.is_some())
            .map(|c| c.synonyms.len())
            .sum();
        assert_eq!(expected, 5);
        assert_eq!(pairs.len(), expected);
        assert!(pairs.iter().all(|p| p.concept_id != "C3"));

        let undefined = ConceptStore::from_concepts([concept("C3", &["q", "r"])], "t").unwrap();
        assert!(undefined.name_definition_pairs().is_empty());
    }

    #[test]
    fn pair_dump_format() {
        let pairs = vec![TrainingPair {
            text_a: "a".into(),
            text_b: "b".into(),
            concept_id: "C1".into(),
        }];
        let mut buf = Vec::new();
        write_pairs_jsonl(&pairs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"a\":\"a\",\"b\":\"b\",\"cid\":\"C1\"}\n");
    }
}
