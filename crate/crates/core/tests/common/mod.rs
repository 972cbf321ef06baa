//! Oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;

use adenorm::encoder::{EmbeddingVector, TextEncoder};
use adenorm::linalg::Matrix;
use adenorm::retrieval::IndexEntry;
use adenorm::seed::rng_for;
use adenorm::training::{info_nce_loss, sts_loss};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_unit_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..rows).map(|_| random_unit(rng, cols)).collect();
    Matrix::from_rows(&rows)
}

/// `‖x − y‖ / max(‖x‖, ‖y‖)`, or 0 when both are zero.
pub fn rel_err(x: &[f64], y: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let scale = norm(x).max(norm(y));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn central_difference(m: &Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Vec<f64> {
    let mut probe = m.clone();
    let mut out = Vec::with_capacity(m.as_slice().len());
    for i in 0..m.as_slice().len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + FD_STEP;
        let plus = f(&probe);
        probe.as_mut_slice()[i] = orig - FD_STEP;
        let minus = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.push((plus - minus) / (2.0 * FD_STEP));
    }
    out
}

/// Worst relative error of the InfoNCE gradients (both sides) against
/// central differences, for random unit rows.
pub fn info_nce_fd_error(seed: u64, batch: usize, dim: usize, temperature: f64) -> f64 {
    let mut rng = rng_for(seed);
    let a = random_unit_matrix(&mut rng, batch, dim);
    let b = random_unit_matrix(&mut rng, batch, dim);
    let out = info_nce_loss(&a, &b, temperature).unwrap();
    let fd_a = central_difference(&a, |p| info_nce_loss(p, &b, temperature).unwrap().loss);
    let fd_b = central_difference(&b, |p| info_nce_loss(&a, p, temperature).unwrap().loss);
    rel_err(out.grad_a.as_slice(), &fd_a).max(rel_err(out.grad_b.as_slice(), &fd_b))
}

/// Relative error of the STS gradient against central differences.
pub fn sts_fd_error(seed: u64, n: usize) -> f64 {
    let mut rng = rng_for(seed);
    let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gold: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let out = sts_loss(&pred, &gold).unwrap();
    let m = Matrix::from_vec(1, n, pred);
    let fd = central_difference(&m, |p| sts_loss(p.as_slice(), &gold).unwrap().loss);
    rel_err(&out.grad, &fd)
}

pub fn entries_from_vectors(vectors: Vec<Vec<f64>>, concepts: usize) -> Vec<IndexEntry> {
    vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| IndexEntry {
            vector: EmbeddingVector::new(v).unwrap(),
            concept_id: format!("C{:05}", i % concepts),
            synonym: format!("s{i:05}"),
        })
        .collect()
}

/// Entry indices of the top `k` by brute force, ordered by score
/// descending then `(concept_id, synonym, index)` ascending.
pub fn brute_force_top_k(entries: &[IndexEntry], query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.vector.as_slice().iter().zip(query).map(|(a, b)| a * b).sum()))
        .collect();
    scored.sort_by(|x, y| {
        y.1.partial_cmp(&x.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| entries[x.0].concept_id.cmp(&entries[y.0].concept_id))
            .then_with(|| entries[x.0].synonym.cmp(&entries[y.0].synonym))
            .then(x.0.cmp(&y.0))
    });
    scored.truncate(k);
    scored
}

/// Maps fixed texts to fixed vectors; anything else is out of vocabulary.
pub struct MapEncoder {
    pub dim: usize,
    pub table: HashMap<String, Vec<f64>>,
}

impl TextEncoder for MapEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> adenorm::Result<EmbeddingVector> {
        let v = self
            .table
            .get(text)
            .ok_or_else(|| adenorm::Error::OutOfVocabulary(text.into()))?;
        EmbeddingVector::normalized(v.clone())
    }
}

/// Fields of a text report: the summary row, split rows, exclusion count.
#[derive(Debug, PartialEq)]
pub struct TextReport {
    pub model: String,
    pub dataset: String,
    pub k: usize,
    pub accuracy: String,
    pub splits: Vec<(u32, usize, String)>,
    pub excluded: usize,
}

pub fn parse_text_report(text: &str) -> TextReport {
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model\tdataset\tk\taccuracy");
    let row: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(lines[2], "# split\tn\tacc");
    let mut splits = Vec::new();
    let mut excluded = None;
    for line in &lines[3..] {
        if let Some(n) = line.strip_prefix("# excluded (unlinkable gold): ") {
            excluded = Some(n.parse().unwrap());
            break;
        }
        let f: Vec<&str> = line.split('\t').collect();
        splits.push((f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].to_string()));
    }
    TextReport {
        model: row[0].into(),
        dataset: row[1].into(),
        k: row[2].parse().unwrap(),
        accuracy: row[3].into(),
        splits,
        excluded: excluded.expect("exclusion line"),
    }
}

/// The text rendering a JSON report must agree with.
pub fn expected_text_fields(report: &adenorm::evaluation::EvalReport) -> TextReport {
    use adenorm::evaluation::{fmt2, format_mean_std};
    TextReport {
        model: report.model_tag.clone(),
        dataset: report.dataset.clone(),
        k: report.k,
        accuracy: format_mean_std(report.mean, report.std),
        splits: report.per_split.iter().map(|s| (s.id, s.n, fmt2(s.acc))).collect(),
        excluded: report.excluded,
    }
}
