//! Safe retrieval: uncertainty-gated query rejection and database cleaning
//! for 1-NN search, with error-rate accounting.
//!
//! Retrieval never looks at absolute uncertainty values, only at their order
//! within the batch: predicted uncertainties are scale-free, so a fraction
//! threshold is meaningful where an absolute cutoff would not be. Everything
//! here works without any labels (rejection and global cleaning rank by
//! uncertainty alone); labels, when given, buy per-class cleaning and an
//! error rate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::nn1_against;
use crate::matrix::Matrix;

/// Default fraction for both interventions.
pub const DEFAULT_FRACTION: f64 = 0.10;

/// How database cleaning groups items before taking the uncertainty quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CleanMode {
    /// Drop the most uncertain items over the whole database.
    GlobalQuantile,
    /// Drop the most uncertain items within each labeled class.
    PerClassQuantile,
}

/// Fractions and grouping for the two interventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetrievalPolicy {
    pub query_reject_fraction: f64,
    pub database_clean_fraction: f64,
    pub clean_mode: CleanMode,
}

impl Default for RetrievalPolicy {
    fn default() -> Self {
        RetrievalPolicy {
            query_reject_fraction: DEFAULT_FRACTION,
            database_clean_fraction: DEFAULT_FRACTION,
            clean_mode: CleanMode::GlobalQuantile,
        }
    }
}

impl RetrievalPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("query_reject_fraction", self.query_reject_fraction),
            ("database_clean_fraction", self.database_clean_fraction),
        ] {
            if !(f.is_finite() && (0.0..1.0).contains(&f)) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// What happened to one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QueryResult {
    /// Matched to this database index (an index into the original database,
    /// not into the retained subset).
    Matched(usize),
    /// Rejected for excessive uncertainty; never matched.
    Rejected,
}

/// Result of one retrieval run.
#[derive(Debug, Clone, Serialize)]
pub struct RetrievalOutcome {
    /// One entry per query, in query order.
    pub results: Vec<QueryResult>,
    /// Fraction of answered queries whose match carries a different label.
    /// Present only when both query and database labels were supplied.
    pub error_rate: Option<f64>,
    /// Answered queries divided by all queries.
    pub answered_fraction: f64,
}

impl RetrievalOutcome {
    pub fn answered(&self) -> usize {
        self.results
            .iter()
            .filter(|r| matches!(r, QueryResult::Matched(_)))
            .count()
    }

    /// Summary in `key value` lines, matching the evaluation report style.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("queries {}\n", self.results.len()));
        out.push_str(&format!("answered {}\n", self.answered()));
        out.push_str(&format!("answered_fraction {}\n", self.answered_fraction));
        match self.error_rate {
            Some(e) => out.push_str(&format!("error_rate {e}\n")),
            None => out.push_str("error_rate unavailable\n"),
        }
        out
    }
}

/// Indices of the top `k` values, largest first; equal values surrender the
/// larger index first, so smaller indices survive any cut.
fn top_k_by_uncertainty(uncertainties: &[f32], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        uncertainties[b]
            .partial_cmp(&uncertainties[a])
            .expect("validated finite")
            .then(b.cmp(&a))
    });
    order.truncate(k);
    order
}

fn check_finite(uncertainties: &[f32], what: &str) -> Result<()> {
    if let Some(i) = uncertainties.iter().position(|u| !u.is_finite()) {
        return Err(Error::invalid(format!(
            "{what} uncertainty at index {i} is not finite"
        )));
    }
    Ok(())
}

/// Drops the `database_clean_fraction` most uncertain items and returns the
/// retained indices in ascending order.
///
/// `GlobalQuantile` takes the quantile over everything; `PerClassQuantile`
/// takes it within each label group and therefore requires `labels`. Each
/// group of size `m` loses exactly `floor(fraction * m)` items; ties keep
/// the smaller index.
pub fn clean_database(
    embeddings: &Matrix<f32>,
    labels: Option<&[u32]>,
    uncertainties: &[f32],
    policy: &RetrievalPolicy,
) -> Result<Vec<usize>> {
    policy.validate()?;
    let n = embeddings.rows();
    if n == 0 {
        return Err(Error::invalid("cannot clean an empty database"));
    }
    if uncertainties.len() != n {
        return Err(Error::ShapeMismatch {
            what: "database uncertainties",
            expected: n,
            got: uncertainties.len(),
        });
    }
    check_finite(uncertainties, "database")?;

    let mut dropped = vec![false; n];
    match policy.clean_mode {
        CleanMode::GlobalQuantile => {
            let k = (policy.database_clean_fraction * n as f64).floor() as usize;
            let all: Vec<usize> = (0..n).collect();
            for i in top_k_by_uncertainty(uncertainties, &all, k) {
                dropped[i] = true;
            }
        }
        CleanMode::PerClassQuantile => {
            let labels = labels.ok_or_else(|| {
                Error::invalid("per-class database cleaning requires labels")
            })?;
            if labels.len() != n {
                return Err(Error::ShapeMismatch {
                    what: "database labels",
                    expected: n,
                    got: labels.len(),
                });
            }
            let mut classes: Vec<u32> = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            for class in classes {
                let members: Vec<usize> =
                    (0..n).filter(|&i| labels[i] == class).collect();
                let k = (policy.database_clean_fraction * members.len() as f64).floor() as usize;
                if k >= members.len() {
                    return Err(Error::invalid(format!(
                        "cleaning fraction {} would empty class {class}",
                        policy.database_clean_fraction
                    )));
                }
                for i in top_k_by_uncertainty(uncertainties, &members, k) {
                    dropped[i] = true;
                }
            }
        }
    }
    Ok((0..n).filter(|&i| !dropped[i]).collect())
}

/// Rejects the most uncertain queries, matches the rest against the retained
/// database rows by cosine similarity, and accounts for errors when labels
/// are available.
///
/// `retained` indexes into `database` (ascending, as produced by
/// [`clean_database`]); matches are reported as original database indices.
/// With both labels given the outcome carries an error rate over answered
/// queries; without them retrieval is fully unsupervised and only matches
/// are returned.
pub fn safe_retrieve(
    queries: &Matrix<f32>,
    query_uncertainties: &[f32],
    query_labels: Option<&[u32]>,
    database: &Matrix<f32>,
    database_labels: Option<&[u32]>,
    retained: &[usize],
    policy: &RetrievalPolicy,
) -> Result<RetrievalOutcome> {
    policy.validate()?;
    let n_q = queries.rows();
    if n_q == 0 {
        return Err(Error::invalid("no queries given"));
    }
    if query_uncertainties.len() != n_q {
        return Err(Error::ShapeMismatch {
            what: "query uncertainties",
            expected: n_q,
            got: query_uncertainties.len(),
        });
    }
    if queries.cols() != database.cols() {
        return Err(Error::ShapeMismatch {
            what: "query embedding width vs database",
            expected: database.cols(),
            got: queries.cols(),
        });
    }
    if retained.is_empty() {
        return Err(Error::invalid("retained database is empty"));
    }
    if retained.windows(2).any(|w| w[0] >= w[1])
        || *retained.last().expect("nonempty") >= database.rows()
    {
        return Err(Error::invalid(
            "retained indices must be strictly ascending and in range",
        ));
    }
    if let Some(l) = query_labels {
        if l.len() != n_q {
            return Err(Error::ShapeMismatch {
                what: "query labels",
                expected: n_q,
                got: l.len(),
            });
        }
    }
    if let Some(l) = database_labels {
        if l.len() != database.rows() {
            return Err(Error::ShapeMismatch {
                what: "database labels",
                expected: database.rows(),
                got: l.len(),
            });
        }
    }
    check_finite(query_uncertainties, "query")?;

    let k = (policy.query_reject_fraction * n_q as f64).floor() as usize;
    let all: Vec<usize> = (0..n_q).collect();
    let mut rejected = vec![false; n_q];
    for i in top_k_by_uncertainty(query_uncertainties, &all, k) {
        rejected[i] = true;
    }
    let answered_idx: Vec<usize> = (0..n_q).filter(|&i| !rejected[i]).collect();
    if answered_idx.is_empty() {
        return Err(Error::Degenerate {
            detail: "every query was rejected; the error rate is undefined".into(),
        });
    }

    let sub_queries = queries.select_rows(&answered_idx)?;
    let sub_db = database.select_rows(retained)?;
    let nn = nn1_against(&sub_queries, &sub_db)?;

    let mut results = vec![QueryResult::Rejected; n_q];
    for (pos, &q) in answered_idx.iter().enumerate() {
        results[q] = QueryResult::Matched(retained[nn[pos]]);
    }

    let error_rate = match (query_labels, database_labels) {
        (Some(ql), Some(dl)) => {
            let errors = answered_idx
                .iter()
                .enumerate()
                .filter(|&(pos, &q)| dl[retained[nn[pos]]] != ql[q])
                .count();
            Some(errors as f64 / answered_idx.len() as f64)
        }
        _ => None,
    };

    Ok(RetrievalOutcome {
        results,
        error_rate,
        answered_fraction: answered_idx.len() as f64 / n_q as f64,
    })
}
