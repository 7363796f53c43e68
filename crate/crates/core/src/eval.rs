//! Ranking quality metrics and cross-dataset aggregation.
//!
//! Per query: nDCG@k (linear gain by default, exponential behind a flag)
//! and Recall@k against graded judgments. Per dataset: the unweighted mean
//! over queries. Across datasets and methods: per-method averages plus
//! strict win counts, where a dataset is a win only when exactly one method
//! attains its best score; shared maxima are reported as ties instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::index::RunRanking;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GainFunction {
    #[default]
    Linear,
    Exponential,
}

impl GainFunction {
    pub fn gain(self, relevance: u32) -> f64 {
        match self {
            GainFunction::Linear => f64::from(relevance),
            GainFunction::Exponential => 2f64.powi(relevance as i32) - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Ndcg,
    Recall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metric {
    pub kind: MetricKind,
    pub k: usize,
}

impl Metric {
    pub fn ndcg(k: usize) -> Self {
        Metric { kind: MetricKind::Ndcg, k }
    }

    pub fn recall(k: usize) -> Self {
        Metric { kind: MetricKind::Recall, k }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MetricKind::Ndcg => write!(f, "ndcg@{}", self.k),
            MetricKind::Recall => write!(f, "recall@{}", self.k),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .split_once('@')
            .ok_or_else(|| Error::InvalidInput(format!("metric {s:?} is not name@k")))?;
        let k: usize = k
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad k in metric {s:?}")))?;
        if k == 0 {
            return Err(Error::InvalidInput("metric k must be >= 1".into()));
        }
        let kind = match name.to_ascii_lowercase().as_str() {
            "ndcg" => MetricKind::Ndcg,
            "recall" => MetricKind::Recall,
            other => {
                return Err(Error::InvalidInput(format!("unknown metric {other:?}")));
            }
        };
        Ok(Metric { kind, k })
    }
}

/// Evaluation conventions that change scores and therefore must travel with
/// any reported number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct EvalConventions {
    pub gain: GainFunction,
    /// Queries with judgments but no relevant (grade >= 1) document score
    /// 0 and count toward the mean by default; set to leave them out.
    pub skip_queries_without_relevant: bool,
}

fn check_hits(ranking: &RunRanking) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (doc_id, _) in &ranking.hits {
        if !seen.insert(doc_id.as_str()) {
            return Err(Error::Eval(format!(
                "query {:?} ranks doc {doc_id:?} twice",
                ranking.query_id
            )));
        }
    }
    Ok(())
}

/// nDCG@k with linear gain. DCG sums gain(rel_i) / log2(i + 1) over ranks
/// i = 1..k; the ideal ranking orders every judged document by gain, not
/// just the retrieved ones. No relevant document means 0.
pub fn ndcg_at_k(ranking: &RunRanking, qrels: &Qrels, k: usize) -> Result<f64> {
    ndcg_at_k_with(ranking, qrels, k, GainFunction::Linear)
}

pub fn ndcg_at_k_with(
    ranking: &RunRanking,
    qrels: &Qrels,
    k: usize,
    gain: GainFunction,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Eval("k must be >= 1".into()));
    }
    check_hits(ranking)?;
    let qid = &ranking.query_id;
    let mut dcg = 0.0;
    for (i, (doc_id, _)) in ranking.hits.iter().take(k).enumerate() {
        let g = gain.gain(qrels.relevance(qid, doc_id));
        if g != 0.0 {
            dcg += g / ((i + 2) as f64).log2();
        }
    }
    let mut gains: Vec<f64> = qrels
        .judgments(qid)
        .map(|j| j.values().map(|&rel| gain.gain(rel)).filter(|&g| g > 0.0).collect())
        .unwrap_or_default();
    gains.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Fraction of this query's relevant (grade >= 1) documents in the top k.
/// No relevant document means 0.
pub fn recall_at_k(ranking: &RunRanking, qrels: &Qrels, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Eval("k must be >= 1".into()));
    }
    check_hits(ranking)?;
    let relevant = qrels.relevant_docs(&ranking.query_id);
    if relevant.is_empty() {
        return Ok(0.0);
    }
    let found = ranking
        .hits
        .iter()
        .take(k)
        .filter(|(doc_id, _)| relevant.contains(&doc_id.as_str()))
        .count();
    Ok(found as f64 / relevant.len() as f64)
}

/// One dataset scored under one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetScore {
    /// Mean over evaluated queries.
    pub value: f64,
    pub per_query: BTreeMap<String, f64>,
    pub evaluated: usize,
    /// Queries dropped by `skip_queries_without_relevant`.
    pub skipped_no_relevant: usize,
}

/// Score a run against judgments. Every ranked query must be judged and
/// appear once; judged queries missing from the run are not silently
/// scored as zero, they are simply absent (callers that want them counted
/// must rank them).
pub fn evaluate_run(
    rankings: &[RunRanking],
    qrels: &Qrels,
    metric: Metric,
    conventions: &EvalConventions,
) -> Result<DatasetScore> {
    if rankings.is_empty() {
        return Err(Error::Eval("no rankings to evaluate".into()));
    }
    let mut per_query = BTreeMap::new();
    let mut skipped_no_relevant = 0usize;
    for ranking in rankings {
        let qid = &ranking.query_id;
        if !qrels.contains_query(qid) {
            return Err(Error::Eval(format!("query {qid:?} has no judgments")));
        }
        if conventions.skip_queries_without_relevant && qrels.relevant_docs(qid).is_empty() {
            skipped_no_relevant += 1;
            continue;
        }
        let score = match metric.kind {
            MetricKind::Ndcg => ndcg_at_k_with(ranking, qrels, metric.k, conventions.gain)?,
            MetricKind::Recall => recall_at_k(ranking, qrels, metric.k)?,
        };
        if per_query.insert(qid.clone(), score).is_some() {
            return Err(Error::Eval(format!("query {qid:?} ranked twice in run")));
        }
    }
    if per_query.is_empty() {
        return Err(Error::Eval(
            "every query was skipped for lacking relevant documents".into(),
        ));
    }
    let value = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(DatasetScore {
        value,
        evaluated: per_query.len(),
        per_query,
        skipped_no_relevant,
    })
}

/// One method's score on every dataset of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub per_dataset: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// method -> mean score over all datasets
    pub averages: BTreeMap<String, f64>,
    /// method -> datasets where it alone had the best score
    pub wins: BTreeMap<String, usize>,
    /// datasets whose best score is shared, so nobody wins them
    pub ties: Vec<String>,
}

/// Cross-dataset comparison. Requires a full matrix: every method scored on
/// the same datasets.
pub fn aggregate(methods: &[MethodScores]) -> Result<Aggregate> {
    if methods.is_empty() {
        return Err(Error::Eval("no methods to aggregate".into()));
    }
    let datasets: Vec<String> = methods[0].per_dataset.keys().cloned().collect();
    if datasets.is_empty() {
        return Err(Error::Eval("no datasets to aggregate".into()));
    }
    let mut names = BTreeSet::new();
    for m in methods {
        if !names.insert(m.method.as_str()) {
            return Err(Error::Eval(format!("method {:?} appears twice", m.method)));
        }
        let keys: Vec<String> = m.per_dataset.keys().cloned().collect();
        if keys != datasets {
            return Err(Error::Eval(format!(
                "method {:?} covers different datasets than {:?}",
                m.method, methods[0].method
            )));
        }
        for (dataset, value) in &m.per_dataset {
            if !value.is_finite() {
                return Err(Error::Eval(format!(
                    "method {:?} has non-finite score on {dataset:?}",
                    m.method
                )));
            }
        }
    }
    let mut averages = BTreeMap::new();
    let mut wins: BTreeMap<String, usize> =
        methods.iter().map(|m| (m.method.clone(), 0)).collect();
    for m in methods {
        let mean = m.per_dataset.values().sum::<f64>() / datasets.len() as f64;
        averages.insert(m.method.clone(), mean);
    }
    let mut ties = Vec::new();
    for dataset in &datasets {
        let best = methods
            .iter()
            .map(|m| m.per_dataset[dataset])
            .fold(f64::NEG_INFINITY, f64::max);
        let holders: Vec<&str> = methods
            .iter()
            .filter(|m| m.per_dataset[dataset] == best)
            .map(|m| m.method.as_str())
            .collect();
        if holders.len() == 1 {
            *wins.get_mut(holders[0]).unwrap() += 1;
        } else {
            ties.push(dataset.clone());
        }
    }
    Ok(Aggregate {
        datasets,
        methods: methods.iter().map(|m| m.method.clone()).collect(),
        averages,
        wins,
        ties,
    })
}

/// Full comparison result for one metric, ready to serialize or print.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalReport {
    pub metric: String,
    pub conventions: EvalConventions,
    /// dataset -> method -> score
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    pub averages: BTreeMap<String, f64>,
    pub wins: BTreeMap<String, usize>,
    pub ties: Vec<String>,
}

impl EvalReport {
    pub fn build(
        metric: Metric,
        conventions: EvalConventions,
        methods: &[MethodScores],
    ) -> Result<Self> {
        let agg = aggregate(methods)?;
        let mut scores: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for m in methods {
            for (dataset, value) in &m.per_dataset {
                scores
                    .entry(dataset.clone())
                    .or_default()
                    .insert(m.method.clone(), *value);
            }
        }
        Ok(EvalReport {
            metric: metric.to_string(),
            conventions,
            scores,
            datasets: agg.datasets,
            methods: agg.methods,
            averages: agg.averages,
            wins: agg.wins,
            ties: agg.ties,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plain-text comparison table: datasets as rows, methods as columns,
    /// `*` on the best score in a row, `+` on the runner-up, then average
    /// and wins rows.
    pub fn format_table(&self) -> String {
        let name_width = self
            .datasets
            .iter()
            .map(|d| d.len())
            .chain(["average", "wins", "dataset"].map(str::len))
            .max()
            .unwrap_or(7);
        let col_width = self.methods.iter().map(|m| m.len()).max().unwrap_or(0).max(9);
        let mut out = String::new();
        out.push_str(&format!("{:<name_width$}", "dataset"));
        for m in &self.methods {
            out.push_str(&format!("  {m:>col_width$}"));
        }
        out.push('\n');
        for dataset in &self.datasets {
            let row = &self.scores[dataset];
            let best = row.values().copied().fold(f64::NEG_INFINITY, f64::max);
            let second = row
                .values()
                .copied()
                .filter(|&v| v < best)
                .fold(f64::NEG_INFINITY, f64::max);
            out.push_str(&format!("{dataset:<name_width$}"));
            for m in &self.methods {
                let v = row[m];
                let mark = if v == best {
                    "*"
                } else if second.is_finite() && v == second {
                    "+"
                } else {
                    " "
                };
                let cell = format!("{v:.4}{mark}");
                out.push_str(&format!("  {cell:>col_width$}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<name_width$}", "average"));
        for m in &self.methods {
            let cell = format!("{:.4} ", self.averages[m]);
            out.push_str(&format!("  {cell:>col_width$}"));
        }
        out.push('\n');
        out.push_str(&format!("{:<name_width$}", "wins"));
        for m in &self.methods {
            let cell = format!("{} ", self.wins[m]);
            out.push_str(&format!("  {cell:>col_width$}"));
        }
        out.push('\n');
        if !self.ties.is_empty() {
            out.push_str(&format!("ties: {}\n", self.ties.join(", ")));
        }
        out
    }
}
