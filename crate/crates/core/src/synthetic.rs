//! Synthetic normalization benchmark.
//!
//! Each concept gets two invented root words (for example `kavoru` and
//! `tesimal`). Its synonyms are character-perturbed views of those roots,
//! mixed with filler words drawn from a pool shared by every concept, the way
//! informal mentions wrap a symptom in "really bad ... lately". Definitions
//! are one templated sentence naming both roots. The last synonym of each
//! concept is held out as the evaluation mention; the rest form the
//! dictionary.
//!
//! Untrained bag-of-n-gram encoders are distracted by the shared fillers;
//! an encoder that learns which n-grams identify a concept is not.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::MentionExample;
use crate::ontology::{Concept, ConceptStore};
use crate::seed::{derive_seed, rng_for};
use crate::text::normalize;
use crate::encoder::{NgramEncoder, TextEncoder};
use crate::evaluation::evaluate_dataset;
use crate::retrieval::{entries_from_store, Linker, VectorIndex};
use crate::training::{run_schedule, Schedule, ScheduleName, StsExample, TrainConfig};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const FILLERS: &[&str] = &[
    "really", "bad", "feeling", "severe", "mild", "my", "so", "constant", "terrible", "getting",
    "some", "awful", "kind of", "sudden", "chronic", "episodes", "with", "lately", "very",
    "extreme", "slight", "after meds", "all day", "this",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub concepts: usize,
    /// Including the held-out one.
    pub synonyms_per_concept: usize,
    pub splits: u32,
    /// Negative STS pairs per positive pair.
    pub sts_negatives: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            concepts: 200,
            synonyms_per_concept: 5,
            splits: 4,
            sts_negatives: 1,
            seed: 2023,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    /// Dictionary without the held-out synonyms, with definitions attached.
    pub store: ConceptStore,
    /// One held-out mention per concept, assigned to splits round-robin.
    pub mentions: Vec<MentionExample>,
    /// Scored pairs: 5 for synonyms of one concept, 0 across concepts
    /// (already rescaled to `[0, 1]`).
    pub sts: Vec<StsExample>,
}

fn root_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = 3;
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    if rng.gen_bool(0.5) {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
    }
    w
}

/// One random character edit: substitution, deletion, insertion, or swap.
fn perturb(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.len() < 4 {
        return word.to_string();
    }
    let pos = rng.gen_range(1..chars.len() - 1);
    let letter = |rng: &mut ChaCha8Rng| (b'a' + rng.gen_range(0..26)) as char;
    match rng.gen_range(0..4) {
        0 => chars[pos] = letter(rng),
        1 => {
            chars.remove(pos);
        }
        2 => chars.insert(pos, letter(rng)),
        _ => chars.swap(pos, pos + 1),
    }
    chars.into_iter().collect()
}

fn noisy_view(roots: &[String; 2], rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = roots.to_vec();
    for w in &mut words {
        if rng.gen_bool(0.5) {
            *w = perturb(w, rng);
        }
    }
    let fillers = rng.gen_range(1..=2);
    for _ in 0..fillers {
        let f = FILLERS.choose(rng).unwrap().to_string();
        let at = rng.gen_range(0..=words.len());
        words.insert(at, f);
    }
    words.join(" ")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    if config.concepts < 2 || config.synonyms_per_concept < 2 || config.splits == 0 {
        return Err(Error::InvalidArgument(
            "synthetic benchmark needs >= 2 concepts, >= 2 synonyms each, >= 1 split".into(),
        ));
    }
    let mut rng = rng_for(derive_seed(config.seed, "synthetic"));
    let mut used_roots = HashSet::new();
    let mut concepts = Vec::with_capacity(config.concepts);
    let mut mentions = Vec::with_capacity(config.concepts);

    for ci in 0..config.concepts {
        let mut next_root = |rng: &mut ChaCha8Rng| loop {
            let r = root_word(rng);
            if used_roots.insert(r.clone()) {
                return r;
            }
        };
        let roots = [next_root(&mut rng), next_root(&mut rng)];
        let concept_id = format!("SYN{ci:04}");
        let preferred = format!("{} {}", roots[0], roots[1]);

        let mut seen = HashSet::from([normalize(&preferred)]);
        let mut synonyms = vec![preferred.clone()];
        while synonyms.len() < config.synonyms_per_concept {
            let v = noisy_view(&roots, &mut rng);
            if seen.insert(normalize(&v)) {
                synonyms.push(v);
            }
        }
        let held_out = synonyms.pop().unwrap();
        mentions.push(MentionExample {
            mention_text: held_out,
            context: None,
            gold_concept_id: concept_id.clone(),
            split_id: ci as u32 % config.splits,
        });
        concepts.push(Concept {
            concept_id,
            preferred_term: preferred,
            synonyms,
            definition: Some(format!(
                "A condition characterized by {} and {}.",
                roots[0], roots[1]
            )),
        });
    }

    let mut sts = Vec::new();
    for (ci, c) in concepts.iter().enumerate() {
        for i in 0..c.synonyms.len() {
            for j in i + 1..c.synonyms.len() {
                sts.push(StsExample::new(&c.synonyms[i], &c.synonyms[j], 1.0)?);
                for _ in 0..config.sts_negatives {
                    let mut other = rng.gen_range(0..concepts.len() - 1);
                    if other >= ci {
                        other += 1;
                    }
                    let o = concepts[other].synonyms.choose(&mut rng).unwrap();
                    sts.push(StsExample::new(&c.synonyms[i], o, 0.0)?);
                }
            }
        }
    }
    sts.shuffle(&mut rng);

    let store = ConceptStore::from_concepts(concepts, "synthetic")?;
    Ok(SyntheticBenchmark {
        store,
        mentions,
        sts,
    })
}

impl SyntheticBenchmark {
    /// Writes `dictionary.tsv`, `definitions.tsv`, `sts.tsv` (scores on the
    /// 0..5 scale), and `mentions.jsonl` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, content: String| {
            let p = dir.join(name);
            fs::write(&p, content).map_err(|e| Error::io(&p, e))
        };
        write("dictionary.tsv", self.store.to_dictionary_tsv())?;
        write("definitions.tsv", self.store.to_definitions_tsv())?;
        let mut sts = String::new();
        for ex in &self.sts {
            sts.push_str(&format!("{}\t{}\t{}\n", ex.text_a, ex.text_b, ex.gold_score * 5.0));
        }
        write("sts.tsv", sts)?;
        let mut ds = String::new();
        for m in &self.mentions {
            ds.push_str(&serde_json::to_string(m)?);
            ds.push('\n');
        }
        write("mentions.jsonl", ds)?;
        Ok(())
    }
}

/// Held-out accuracy@1 (mean over splits) of an encoder on a benchmark,
/// using an exact index over the benchmark dictionary.
pub fn heldout_accuracy<E: TextEncoder>(bench: &SyntheticBenchmark, encoder: &E) -> Result<f64> {
    let index = VectorIndex::build_exact(entries_from_store(&bench.store, encoder)?)?;
    let linker = Linker::new(encoder, &index)?;
    let (report, _) = evaluate_dataset(&bench.mentions, &linker, 1, "synthetic", "synthetic")?;
    Ok(report.mean)
}

/// Trains `initial` with a named schedule on the benchmark and returns the
/// final encoder with its held-out accuracy@1.
pub fn train_and_score(
    bench: &SyntheticBenchmark,
    initial: NgramEncoder,
    name: ScheduleName,
    sts_config: TrainConfig,
    lord_config: TrainConfig,
) -> Result<(NgramEncoder, f64)> {
    let schedule = Schedule::named(name, &bench.store, Some(&bench.sts), sts_config, lord_config)?;
    let run = run_schedule(initial, &schedule, None)?;
    let acc = heldout_accuracy(bench, &run.final_state)?;
    Ok((run.final_state, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig {
            concepts: 20,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg).unwrap();
        assert_eq!(a.store.len(), 20);
        assert!(a.store.iter().all(|c| c.synonyms.len() == 4 && c.definition.is_some()));
        assert_eq!(a.mentions.len(), 20);
        assert_eq!(a.mentions.iter().filter(|m| m.split_id == 3).count(), 5);
        // held-out mentions are not in the dictionary
        for m in &a.mentions {
            let c = a.store.get(&m.gold_concept_id).unwrap();
            assert!(c.synonyms.iter().all(|s| normalize(s) != normalize(&m.mention_text)));
        }
        let b = generate(&cfg).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.mentions, b.mentions);
        assert_eq!(a.sts, b.sts);
    }
}
