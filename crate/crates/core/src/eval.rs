//! Evaluation metrics: AUROC, nearest-neighbor quality measures, rank
//! correlation, and embedding-deterioration sweeps.
//!
//! Everything here is a pure function over immutable inputs. Nearest-neighbor
//! search is exact brute-force cosine with deterministic smallest-index
//! tie-breaking, which keeps every metric bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::atomic_write_with;
use crate::head::UncertaintyHead;
use crate::matrix::Matrix;
use crate::seeding::derive_seed;

/// Mann-Whitney AUROC of `scores` against binary `positives`, ties counted
/// one half. Computed via a single sort with midranks, so it equals the
/// exhaustive pair count exactly (both are sums of multiples of 0.5 carried
/// in 64-bit).
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::ShapeMismatch {
            what: "auroc label length",
            expected: scores.len(),
            got: positives.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("auroc scores must be finite"));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate {
            detail: "auroc needs at least one positive and one negative".into(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j)
        let midrank = 0.5 * ((i + 1) + j) as f64;
        for &idx in &order[i..j] {
            if positives[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

fn row_norms(embeddings: &Matrix<f32>) -> Result<Vec<f64>> {
    let mut norms = Vec::with_capacity(embeddings.rows());
    for i in 0..embeddings.rows() {
        let n: f64 = embeddings
            .row(i)
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt();
        if n == 0.0 {
            return Err(Error::Degenerate {
                detail: format!("zero-norm embedding row {i}, cosine undefined"),
            });
        }
        if !n.is_finite() {
            return Err(Error::invalid(format!("non-finite embedding row {i}")));
        }
        norms.push(n);
    }
    Ok(norms)
}

fn cosine(a: &[f32], b: &[f32], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    dot / (na * nb)
}

/// Cosine 1-nearest neighbor of every row among the other rows; ties broken
/// toward the smallest index.
pub fn nn1(embeddings: &Matrix<f32>) -> Result<Vec<usize>> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(Error::invalid("1-NN needs at least two rows"));
    }
    let norms = row_norms(embeddings)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = usize::MAX;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let sim = cosine(embeddings.row(i), embeddings.row(j), norms[i], norms[j]);
            if sim > best_sim {
                best_sim = sim;
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Cosine 1-nearest database row for every query row (no self-exclusion;
/// queries and database are distinct sets). Ties break to the smallest index.
pub fn nn1_against(queries: &Matrix<f32>, database: &Matrix<f32>) -> Result<Vec<usize>> {
    if queries.cols() != database.cols() {
        return Err(Error::ShapeMismatch {
            what: "query dimension",
            expected: database.cols(),
            got: queries.cols(),
        });
    }
    if database.rows() == 0 {
        return Err(Error::invalid("empty database"));
    }
    let qn = row_norms(queries)?;
    let dn = row_norms(database)?;
    let mut out = Vec::with_capacity(queries.rows());
    for i in 0..queries.rows() {
        let mut best = usize::MAX;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..database.rows() {
            let sim = cosine(queries.row(i), database.row(j), qn[i], dn[j]);
            if sim > best_sim {
                best_sim = sim;
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// AUROC between uncertainties and 1-NN *incorrectness*: a good uncertainty
/// ranks misclassified representations above correct ones.
pub fn r_auroc(embeddings: &Matrix<f32>, labels: &[u32], uncertainties: &[f64]) -> Result<f64> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            what: "label count",
            expected: n,
            got: labels.len(),
        });
    }
    if uncertainties.len() != n {
        return Err(Error::ShapeMismatch {
            what: "uncertainty count",
            expected: n,
            got: uncertainties.len(),
        });
    }
    let neighbors = nn1(embeddings)?;
    let incorrect: Vec<bool> = neighbors
        .iter()
        .enumerate()
        .map(|(i, &j)| labels[j] != labels[i])
        .collect();
    if incorrect.iter().all(|&x| x) || incorrect.iter().all(|&x| !x) {
        return Err(Error::Degenerate {
            detail: "every 1-NN prediction is equally correct; R-AUROC undefined".into(),
        });
    }
    auroc(uncertainties, &incorrect)
}

/// Fraction of rows whose cosine 1-NN carries the same label.
pub fn recall_at_1(embeddings: &Matrix<f32>, labels: &[u32]) -> Result<f64> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            what: "label count",
            expected: n,
            got: labels.len(),
        });
    }
    let neighbors = nn1(embeddings)?;
    let hits = neighbors
        .iter()
        .enumerate()
        .filter(|&(i, &j)| labels[j] == labels[i])
        .count();
    Ok(hits as f64 / n as f64)
}

/// AUROC between uncertainties and a multi-label ambiguity flag.
pub fn ambiguity_auroc(uncertainties: &[f64], is_multilabel: &[bool]) -> Result<f64> {
    auroc(uncertainties, is_multilabel)
}

/// AUROC separating out-of-distribution uncertainties (positive class) from
/// in-distribution ones. 0.5 means the head cannot tell the sets apart.
pub fn id_ood_auroc(uncertainties_id: &[f64], uncertainties_ood: &[f64]) -> Result<f64> {
    if uncertainties_id.is_empty() || uncertainties_ood.is_empty() {
        return Err(Error::invalid("both ID and OOD sides must be nonempty"));
    }
    let mut scores = Vec::with_capacity(uncertainties_id.len() + uncertainties_ood.len());
    scores.extend_from_slice(uncertainties_id);
    scores.extend_from_slice(uncertainties_ood);
    let mut positives = vec![false; uncertainties_id.len()];
    positives.extend(std::iter::repeat(true).take(uncertainties_ood.len()));
    auroc(&scores, &positives)
}

/// Spearman rank correlation (midranks for ties), in 64-bit.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            what: "spearman input length",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least two points"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman inputs must be finite"));
    }
    let ra = midranks(a);
    let rb = midranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate {
            detail: "spearman undefined for a constant input".into(),
        });
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let midrank = 0.5 * ((i + 1) + j) as f64;
        for &idx in &order[i..j] {
            ranks[idx] = midrank;
        }
        i = j;
    }
    ranks
}

/// How [`deterioration_sweep`] degrades embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// Add `severity`-scaled standard Gaussian noise per coordinate.
    GaussianNoise,
    /// Zero out a random `severity` fraction of coordinates per row
    /// (`floor(severity * dim)` of them; severity 1.0 zeroes everything).
    CoordinateMask,
    /// Multiply every embedding by `1 + severity`.
    Rescale,
}

/// Median predicted uncertainty per severity. Severity 0 applies the exact
/// identity. Even-length medians average the two central values.
pub fn deterioration_sweep(
    head: &UncertaintyHead,
    embeddings: &Matrix<f32>,
    perturbation: Perturbation,
    severities: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if severities.is_empty() {
        return Err(Error::invalid("severity list must be nonempty"));
    }
    if severities[0] != 0.0 {
        return Err(Error::invalid("severity sweep must start at 0"));
    }
    if severities.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("severities must be strictly increasing"));
    }
    let n = embeddings.rows();
    let d = embeddings.cols();
    let mut curve = Vec::with_capacity(severities.len());
    for (k, &severity) in severities.iter().enumerate() {
        let perturbed: Matrix<f32> = if severity == 0.0 {
            embeddings.clone()
        } else {
            match perturbation {
                Perturbation::GaussianNoise => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, "deteriorate", k as u64));
                    let data = embeddings
                        .as_slice()
                        .iter()
                        .map(|&v| {
                            let z: f64 = rng.sample(StandardNormal);
                            (v as f64 + severity * z) as f32
                        })
                        .collect();
                    Matrix::from_vec(n, d, data)?
                }
                Perturbation::CoordinateMask => {
                    if !(0.0..=1.0).contains(&severity) {
                        return Err(Error::invalid("mask severity must lie in [0, 1]"));
                    }
                    let masked = (severity * d as f64).floor() as usize;
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, "deteriorate", k as u64));
                    let mut out = embeddings.clone();
                    let mut coords: Vec<usize> = (0..d).collect();
                    for i in 0..n {
                        // partial Fisher-Yates: first `masked` entries form the mask
                        for m in 0..masked {
                            let pick = rng.gen_range(m..d);
                            coords.swap(m, pick);
                        }
                        let row = out.row_mut(i);
                        for &c in &coords[..masked] {
                            row[c] = 0.0;
                        }
                    }
                    out
                }
                Perturbation::Rescale => {
                    let factor = 1.0 + severity;
                    let data = embeddings
                        .as_slice()
                        .iter()
                        .map(|&v| (v as f64 * factor) as f32)
                        .collect();
                    Matrix::from_vec(n, d, data)?
                }
            }
        };
        let trace = head.forward(&perturbed)?;
        curve.push((severity, median_f32(trace.uncertainties())?));
    }
    Ok(curve)
}

fn median_f32(values: &[f32]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of empty slice"));
    }
    let mut sorted: Vec<f32> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        0.5 * (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64)
    })
}

/// One dataset's metrics, serializable as key-value text and JSON.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub r_auroc: f64,
    pub recall_at_1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ambiguity_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id_ood_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deterioration: Option<Vec<(f64, f64)>>,
}

impl EvalReport {
    /// Key-value text, one metric per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("dataset = {}\n", self.dataset));
        out.push_str(&format!("r_auroc = {}\n", self.r_auroc));
        out.push_str(&format!("recall_at_1 = {}\n", self.recall_at_1));
        if let Some(v) = self.ambiguity_auroc {
            out.push_str(&format!("ambiguity_auroc = {v}\n"));
        }
        if let Some(v) = self.id_ood_auroc {
            out.push_str(&format!("id_ood_auroc = {v}\n"));
        }
        if let Some(curve) = &self.deterioration {
            for (severity, median) in curve {
                out.push_str(&format!("deterioration {severity} {median}\n"));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        atomic_write_with(path, |w| {
            w.write_all(self.to_text().as_bytes())
                .map_err(|e| Error::io(path, e))
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        atomic_write_with(path, |w| {
            w.write_all(self.to_json().as_bytes())
                .map_err(|e| Error::io(path, e))
        })
    }
}

/// Two-column plot table for a sweep curve ("severity median" per line).
pub fn write_curve_table(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    atomic_write_with(path, |w| {
        for (x, y) in curve {
            writeln!(w, "{x} {y}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })
}
