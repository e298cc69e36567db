//! Retrieval evaluation: leave-one-out mean average precision.
//!
//! Every test word serves once as the query against all remaining test
//! words. The query itself is removed; queries with no other relevant item
//! are discarded but stay in the pool as distractors for everyone else.

use serde::{Deserialize, Serialize};

use crate::corpus::WordSample;
use crate::error::{Error, Result};
use crate::retrieval::RetrievalIndex;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Queries need at least this many other relevant items (default 1).
    #[serde(default = "default_min_relevant")]
    pub min_relevant: usize,
    /// Cross-validation fold count, when folding is orchestrated.
    #[serde(default)]
    pub folds: Option<usize>,
    /// When set, only these ids serve as queries (keyword-restricted mode);
    /// everything else still participates as a distractor.
    #[serde(default)]
    pub query_ids: Option<std::collections::BTreeSet<String>>,
}

fn default_min_relevant() -> usize {
    1
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.folds {
            if k < 2 {
                return Err(Error::Config(format!("folds must be >= 2, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryAp {
    pub id: String,
    pub ap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub n_queries_used: usize,
    pub n_queries_discarded: usize,
    pub per_query: Vec<QueryAp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_fold: Option<Vec<f64>>,
}

/// Non-interpolated average precision of a binary relevance ranking:
/// mean of precision-at-r over the relevant ranks, denominator the number
/// of relevant items present in the list.
pub fn average_precision(relevance: &[u8]) -> Result<f64> {
    if relevance.is_empty() {
        return Err(Error::Data("empty relevance list".into()));
    }
    let total_relevant = relevance.iter().filter(|&&r| r != 0).count();
    if total_relevant == 0 {
        return Err(Error::Data("no relevant items; query should have been discarded".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (rank0, &rel) in relevance.iter().enumerate() {
        if rel != 0 {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Leave-one-out mAP over an index of test descriptors.
pub fn evaluate_map(index: &RetrievalIndex, cfg: &ProtocolConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if index.is_empty() {
        return Err(Error::Data("empty retrieval index".into()));
    }
    let min_rel = cfg.min_relevant.max(1);
    let mut per_query = Vec::new();
    let mut discarded = 0usize;
    for qi in 0..index.len() {
        let qid = &index.ids()[qi];
        if let Some(allowed) = &cfg.query_ids {
            if !allowed.contains(qid) {
                continue;
            }
        }
        let qlabel = index.labels()[qi];
        let ranked = index.query(&index.vector(qi), qid)?;
        let relevance: Vec<u8> = ranked
            .entries
            .iter()
            .map(|(id, _)| (index.label_of(id) == Some(qlabel)) as u8)
            .collect();
        let n_rel = relevance.iter().filter(|&&r| r != 0).count();
        if n_rel < min_rel {
            discarded += 1;
            continue;
        }
        per_query.push(QueryAp {
            id: qid.clone(),
            ap: average_precision(&relevance)?,
        });
    }
    if per_query.is_empty() {
        return Err(Error::Data("every query was discarded".into()));
    }
    let map = per_query.iter().map(|q| q.ap).sum::<f64>() / per_query.len() as f64;
    Ok(EvalReport {
        map,
        n_queries_used: per_query.len(),
        n_queries_discarded: discarded,
        per_query,
        per_fold: None,
    })
}

/// Stratified fold assignment: per class, samples round-robin across folds
/// after a seeded shuffle. A class with fewer samples than folds lands
/// wholly in one fold (rotating over classes) rather than erroring.
pub fn assign_folds(samples: &[WordSample], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config("folds must be >= 2".into()));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.class_id).or_default().push(i);
    }
    let mut fold_of = vec![0usize; samples.len()];
    let mut small_class_cursor = 0usize;
    for (ci, idxs) in by_class.values().enumerate() {
        let mut idxs = idxs.clone();
        idxs.shuffle(&mut rng);
        if idxs.len() < k {
            let fold = small_class_cursor % k;
            small_class_cursor += 1;
            for &i in &idxs {
                fold_of[i] = fold;
            }
        } else {
            for (j, &i) in idxs.iter().enumerate() {
                fold_of[i] = (j + ci) % k;
            }
        }
    }
    Ok(fold_of)
}

/// K-fold cross-validated evaluation. `pipeline_runner` receives the
/// train-fold and test-fold sample indices and must return an index over
/// the test fold.
pub fn kfold_evaluate<R>(
    samples: &[WordSample],
    k: usize,
    seed: u64,
    cfg: &ProtocolConfig,
    mut pipeline_runner: R,
) -> Result<EvalReport>
where
    R: FnMut(&[usize], &[usize]) -> Result<RetrievalIndex>,
{
    let fold_of = assign_folds(samples, k, seed)?;
    let mut per_fold = Vec::with_capacity(k);
    let mut per_query = Vec::new();
    let mut used = 0;
    let mut discarded = 0;
    for fold in 0..k {
        let test: Vec<usize> = (0..samples.len()).filter(|&i| fold_of[i] == fold).collect();
        let train: Vec<usize> = (0..samples.len()).filter(|&i| fold_of[i] != fold).collect();
        if test.is_empty() {
            return Err(Error::Data(format!("fold {fold} is empty")));
        }
        let index = pipeline_runner(&train, &test)?;
        let report = evaluate_map(&index, cfg)?;
        per_fold.push(report.map);
        used += report.n_queries_used;
        discarded += report.n_queries_discarded;
        per_query.extend(report.per_query);
    }
    let map = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    Ok(EvalReport {
        map,
        n_queries_used: used,
        n_queries_discarded: discarded,
        per_query,
        per_fold: Some(per_fold),
    })
}
