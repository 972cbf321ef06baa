//! Zero-shot accuracy@k over test splits and `mean ± std` reporting.
//!
//! Mentions whose gold concept is absent from the index ("unlinkable gold")
//! are left out of every denominator and counted separately; the count is
//! always part of the report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::retrieval::Linker;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionExample {
    #[serde(rename = "mention")]
    pub mention_text: String,
    /// Carried through but not used for encoding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(rename = "gold")]
    pub gold_concept_id: String,
    #[serde(rename = "split")]
    pub split_id: u32,
}

/// Reads dataset JSON Lines `{"mention", "context"?, "gold", "split"}`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<MentionExample>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content, path)
}

pub fn parse_dataset(content: &str, origin: &Path) -> Result<Vec<MentionExample>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: MentionExample =
            serde_json::from_str(line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        if ex.mention_text.trim().is_empty() {
            return Err(Error::parse(origin, i + 1, "empty mention"));
        }
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::parse(origin, 0, "empty dataset"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Miss {
    pub mention: String,
    pub gold: String,
    /// Top-k predicted concept ids, best first.
    pub predicted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    /// Linkable examples only.
    pub n_examples: usize,
    /// Percent in `[0, 100]`.
    pub accuracy: f64,
    pub excluded: usize,
    pub misses: Vec<Miss>,
}

/// accuracy@k = 100 · hits / linkable examples.
pub fn evaluate_split<E: TextEncoder>(
    examples: &[MentionExample],
    linker: &Linker<'_, E>,
    k: usize,
) -> Result<SplitResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let linkable: Vec<&MentionExample> = examples
        .iter()
        .filter(|e| linker.knows(&e.gold_concept_id))
        .collect();
    let excluded = examples.len() - linkable.len();
    if linkable.is_empty() {
        return Err(Error::NoLinkableExamples);
    }
    let outcomes: Vec<Result<Option<Miss>>> = linkable
        .par_iter()
        .map(|ex| {
            let hits = linker.link(&ex.mention_text, k)?;
            if hits.iter().any(|h| h.concept_id == ex.gold_concept_id) {
                Ok(None)
            } else {
                Ok(Some(Miss {
                    mention: ex.mention_text.clone(),
                    gold: ex.gold_concept_id.clone(),
                    predicted: hits.into_iter().map(|h| h.concept_id).collect(),
                }))
            }
        })
        .collect();
    let mut misses = Vec::new();
    for o in outcomes {
        if let Some(m) = o? {
            misses.push(m);
        }
    }
    let n = linkable.len();
    let correct = n - misses.len();
    Ok(SplitResult {
        n_examples: n,
        accuracy: 100.0 * correct as f64 / n as f64,
        excluded,
        misses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single split.
    pub std: f64,
    pub single_split: bool,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        warn!("only one split; reporting std as 0");
        return Ok(Aggregate {
            mean,
            std: 0.0,
            single_split: true,
        });
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(Aggregate {
        mean,
        std: (ss / (n - 1.0)).sqrt(),
        single_split: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSummary {
    pub id: u32,
    pub n: usize,
    pub acc: f64,
}

/// Serializes as the report JSON: `{"model", "dataset", "k", "splits",
/// "mean", "std", "excluded"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    #[serde(rename = "model")]
    pub model_tag: String,
    pub dataset: String,
    pub k: usize,
    #[serde(rename = "splits")]
    pub per_split: Vec<SplitSummary>,
    pub mean: f64,
    pub std: f64,
    pub excluded: usize,
}

/// Full evaluation: splits in ascending id order, evaluated concurrently.
pub fn evaluate_dataset<E: TextEncoder>(
    examples: &[MentionExample],
    linker: &Linker<'_, E>,
    k: usize,
    model_tag: &str,
    dataset: &str,
) -> Result<(EvalReport, Vec<Miss>)> {
    let mut splits: BTreeMap<u32, Vec<MentionExample>> = BTreeMap::new();
    for ex in examples {
        splits.entry(ex.split_id).or_default().push(ex.clone());
    }
    if !examples.iter().any(|e| linker.knows(&e.gold_concept_id)) {
        return Err(Error::NoLinkableExamples);
    }
    let results: Vec<(u32, Result<SplitResult>)> = splits
        .par_iter()
        .map(|(id, exs)| (*id, evaluate_split(exs, linker, k)))
        .collect();

    let mut per_split = Vec::new();
    let mut misses = Vec::new();
    let mut excluded = 0;
    for (id, r) in results {
        let r = r.map_err(|e| match e {
            Error::NoLinkableExamples => {
                Error::InvalidArgument(format!("split {id} has no linkable examples"))
            }
            other => other,
        })?;
        excluded += r.excluded;
        per_split.push(SplitSummary {
            id,
            n: r.n_examples,
            acc: r.accuracy,
        });
        misses.extend(r.misses);
    }
    let accs: Vec<f64> = per_split.iter().map(|s| s.acc).collect();
    let agg = aggregate(&accs)?;
    Ok((
        EvalReport {
            model_tag: model_tag.to_string(),
            dataset: dataset.to_string(),
            k,
            per_split,
            mean: agg.mean,
            std: agg.std,
            excluded,
        },
        misses,
    ))
}

/// Rounds half away from zero at two decimals, working on the shortest
/// decimal representation of `x` so that `60.275` displays as `60.28`.
pub fn fmt2(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes().chain(std::iter::repeat(b'0')).take(2)).collect();
    let round_up = frac_part.as_bytes().get(2).is_some_and(|d| *d >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 2;
    let body = format!(
        "{}.{}",
        std::str::from_utf8(&digits[..split]).unwrap(),
        std::str::from_utf8(&digits[split..]).unwrap()
    );
    if x < 0.0 && body.bytes().any(|b| b.is_ascii_digit() && b != b'0') {
        format!("-{body}")
    } else {
        body
    }
}

/// `"<mean> ± <std>"` with two decimals each.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{} ± {}", fmt2(mean), fmt2(std))
}

/// Text table for one report: a header, the `(model, dataset)` row, one
/// line per split, and the exclusion count.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model\tdataset\tk\taccuracy");
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}",
        report.model_tag,
        report.dataset,
        report.k,
        format_mean_std(report.mean, report.std)
    );
    let _ = writeln!(out, "# split\tn\tacc");
    for s in &report.per_split {
        let _ = writeln!(out, "{}\t{}\t{}", s.id, s.n, fmt2(s.acc));
    }
    let _ = writeln!(out, "# excluded (unlinkable gold): {}", report.excluded);
    out
}

/// One row per report, for comparing models or datasets side by side.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("model\tdataset\tk\taccuracy\texcluded\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.model_tag,
            r.dataset,
            r.k,
            format_mean_std(r.mean, r.std),
            r.excluded
        );
    }
    out
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Parses report JSON, rejecting missing or unknown fields, and checks
    /// the report invariants: `k >= 1`, at least one split, distinct split
    /// ids, percents in `[0, 100]`, and `mean`/`std` consistent with the
    /// per-split accuracies.
    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("report: {m}")));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.per_split.is_empty() {
            return bad("no splits".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.per_split {
            if !ids.insert(s.id) {
                return bad(format!("duplicate split id {}", s.id));
            }
            if !(0.0..=100.0).contains(&s.acc) || s.n == 0 {
                return bad(format!("split {} has n={} acc={}", s.id, s.n, s.acc));
            }
        }
        let accs: Vec<f64> = self.per_split.iter().map(|s| s.acc).collect();
        let agg = aggregate(&accs)?;
        if (agg.mean - self.mean).abs() > 1e-9 || (agg.std - self.std).abs() > 1e-9 {
            return bad(format!(
                "mean/std {} / {} disagree with splits ({} / {})",
                self.mean, self.std, agg.mean, agg.std
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[70.0, 71.0, 70.0, 71.0]).unwrap();
        assert_eq!(a.mean, 70.5);
        // hand computation: sqrt(4 * 0.25 / 3)
        assert!((a.std - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(format_mean_std(a.mean, a.std), "70.50 ± 0.58");

        let a = aggregate(&[50.0; 4]).unwrap();
        assert_eq!(format_mean_std(a.mean, a.std), "50.00 ± 0.00");

        let a = aggregate(&[60.0]).unwrap();
        assert!(a.single_split);
        assert_eq!(format_mean_std(a.mean, a.std), "60.00 ± 0.00");

        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn two_decimal_display() {
        assert_eq!(format_mean_std(60.275, 0.804), "60.28 ± 0.80");
        assert_eq!(format_mean_std(100.0, 0.0), "100.00 ± 0.00");
        assert_eq!(fmt2(99.995), "100.00");
        assert_eq!(fmt2(0.004), "0.00");
        assert_eq!(fmt2(1e-7), "0.00");
        assert_eq!(fmt2(-0.004), "0.00");
        assert_eq!(fmt2(-1.235), "-1.24");
        assert_eq!(fmt2(33.333333333333336), "33.33");
        assert_eq!(fmt2(66.66666666666667), "66.67");
        assert_eq!(fmt2(5.0), "5.00");
    }

    #[test]
    fn dataset_parsing() {
        let content = "{\"mention\": \"my head hurts\", \"context\": \"ugh\", \"gold\": \"C1\", \"split\": 0}\n\
                       {\"mention\": \"so sick\", \"gold\": \"C2\", \"split\": 3}\n";
        let ds = parse_dataset(content, Path::new("d")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].context.as_deref(), Some("ugh"));
        assert_eq!(ds[1].context, None);
        assert_eq!(ds[1].split_id, 3);
        assert!(matches!(
            parse_dataset("{\"mention\": \"x\"}\n", Path::new("d")),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
