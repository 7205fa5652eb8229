//! Ranking metrics: reciprocal rank, average precision, precision@k and
//! nDCG@k, aggregated into a [`MetricReport`].
//!
//! Binary metrics read [`Label::is_relevant`]; nDCG reads the graded value
//! when present and falls back to the binary one. nDCG uses gain `2^rel − 1`
//! and discount `log2(rank + 1)`.

use std::collections::{BTreeMap, HashMap};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::text::{QuestionGroup, RankedList};

pub const DEFAULT_KS: &[usize] = &[1, 3, 10];

/// 1/rank of the first relevant entry; `None` when nothing is relevant.
pub fn reciprocal_rank(rl: &RankedList) -> Option<f64> {
    rl.labels()
        .position(|l| l.is_relevant())
        .map(|i| 1.0 / (i + 1) as f64)
}

/// Mean of precision at each relevant position; `None` when nothing is relevant.
pub fn average_precision(rl: &RankedList) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, label) in rl.labels().enumerate() {
        if label.is_relevant() {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Relevant entries in the top `min(k, len)`, divided by `k`.
///
/// # Panics
///
/// If `k == 0`.
pub fn precision_at_k(rl: &RankedList, k: usize) -> f64 {
    assert!(k >= 1, "precision@k needs k >= 1");
    let hits = rl.labels().take(k).filter(|l| l.is_relevant()).count();
    hits as f64 / k as f64
}

fn dcg(grades: impl Iterator<Item = u8>, k: usize) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG@k over the ranking divided by DCG@k of the ideal ordering; `None`
/// when every grade is zero.
///
/// # Panics
///
/// If `k == 0`.
pub fn ndcg_at_k(rl: &RankedList, k: usize) -> Option<f64> {
    assert!(k >= 1, "nDCG@k needs k >= 1");
    let mut ideal: Vec<u8> = rl.labels().map(|l| l.gain_grade()).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg == 0.0 {
        return None;
    }
    Some(dcg(rl.labels().map(|l| l.gain_grade()), k) / idcg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Score queries without any relevant answer as 0 instead of skipping them.
    pub zero_for_unjudged: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            zero_for_unjudged: false,
        }
    }
}

impl EvalOptions {
    pub fn with_ks(ks: &[usize]) -> Self {
        EvalOptions {
            ks: ks.to_vec(),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ks.contains(&0) {
            return Err(Error::Config("cutoffs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub rr: Option<f64>,
    pub ap: Option<f64>,
    pub p_at_k: BTreeMap<usize, f64>,
    pub ndcg_at_k: BTreeMap<usize, Option<f64>>,
}

/// Unweighted means over the queries each metric scored. `None` when no
/// query qualified.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub map: Option<f64>,
    pub mrr: Option<f64>,
    pub p_at_k: BTreeMap<usize, Option<f64>>,
    pub ndcg_at_k: BTreeMap<usize, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_query: Vec<QueryMetrics>,
    pub aggregate: AggregateMetrics,
    /// Queries with at least one relevant answer.
    pub n_queries_scored: usize,
    /// Queries left out of MAP/MRR because nothing was relevant.
    pub n_queries_skipped: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Computes every metric for each list and aggregates in list order.
pub fn evaluate_lists(lists: &[RankedList], opts: &EvalOptions) -> Result<MetricReport> {
    opts.validate()?;
    let fill = |m: Option<f64>| {
        if opts.zero_for_unjudged {
            Some(m.unwrap_or(0.0))
        } else {
            m
        }
    };
    let per_query: Vec<QueryMetrics> = lists
        .iter()
        .map(|rl| QueryMetrics {
            query_id: rl.query_id.clone(),
            rr: fill(reciprocal_rank(rl)),
            ap: fill(average_precision(rl)),
            p_at_k: opts.ks.iter().map(|&k| (k, precision_at_k(rl, k))).collect(),
            ndcg_at_k: opts.ks.iter().map(|&k| (k, fill(ndcg_at_k(rl, k)))).collect(),
        })
        .collect();

    let n_queries_scored = lists
        .iter()
        .filter(|rl| rl.labels().any(|l| l.is_relevant()))
        .count();
    let aggregate = AggregateMetrics {
        map: mean(per_query.iter().filter_map(|q| q.ap)),
        mrr: mean(per_query.iter().filter_map(|q| q.rr)),
        p_at_k: opts
            .ks
            .iter()
            .map(|&k| (k, mean(per_query.iter().map(|q| q.p_at_k[&k]))))
            .collect(),
        ndcg_at_k: opts
            .ks
            .iter()
            .map(|&k| (k, mean(per_query.iter().filter_map(|q| q.ndcg_at_k[&k]))))
            .collect(),
    };
    Ok(MetricReport {
        n_queries_skipped: lists.len() - n_queries_scored,
        n_queries_scored,
        per_query,
        aggregate,
    })
}

/// Ranks each group's candidates by `scores[(question_id, candidate_index)]`
/// and evaluates.
pub fn evaluate_run(
    groups: &[QuestionGroup],
    scores: &HashMap<(String, usize), f64>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let mut lists = Vec::with_capacity(groups.len());
    for g in groups {
        let mut scored = Vec::with_capacity(g.len());
        for (i, c) in g.candidates.iter().enumerate() {
            let s = scores
                .get(&(g.question_id.clone(), i))
                .ok_or_else(|| {
                    Error::Data(format!(
                        "no score for question {} answer {i} ({:?})",
                        g.question_id,
                        c.answer.raw()
                    ))
                })?;
            scored.push((*s, c.label));
        }
        lists.push(RankedList::from_scores(g.question_id.clone(), &scored));
    }
    evaluate_lists(&lists, opts)
}

fn metric_map(
    map: Option<f64>,
    mrr: Option<f64>,
    p: &BTreeMap<usize, Option<f64>>,
    ndcg: &BTreeMap<usize, Option<f64>>,
) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("map".into(), json!(map));
    m.insert("mrr".into(), json!(mrr));
    for (k, v) in p {
        m.insert(format!("p@{k}"), json!(v));
    }
    for (k, v) in ndcg {
        m.insert(format!("ndcg@{k}"), json!(v));
    }
    m
}

impl MetricReport {
    /// Aggregate metrics as one JSON object keyed `map`, `mrr`, `p@k`, `ndcg@k`.
    pub fn aggregate_json(&self) -> Value {
        let a = &self.aggregate;
        let mut m = metric_map(a.map, a.mrr, &a.p_at_k, &a.ndcg_at_k);
        m.insert("n_queries_scored".into(), json!(self.n_queries_scored));
        m.insert("n_queries_skipped".into(), json!(self.n_queries_skipped));
        Value::Object(m)
    }

    /// One line per query followed by one aggregate line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for q in &self.per_query {
            let p = q.p_at_k.iter().map(|(k, v)| (*k, Some(*v))).collect();
            let mut m = Map::new();
            m.insert("scope".into(), json!("query"));
            m.insert("query_id".into(), json!(q.query_id));
            m.extend(metric_map(q.ap, q.rr, &p, &q.ndcg_at_k));
            out.push_str(&Value::Object(m).to_string());
            out.push('\n');
        }
        let mut agg = Map::new();
        agg.insert("scope".into(), json!("aggregate"));
        if let Value::Object(m) = self.aggregate_json() {
            agg.extend(m);
        }
        out.push_str(&Value::Object(agg).to_string());
        out.push('\n');
        out
    }

    pub fn to_table(&self) -> String {
        let a = &self.aggregate;
        let mut cols: Vec<(String, Option<f64>)> =
            vec![("MAP".into(), a.map), ("MRR".into(), a.mrr)];
        cols.extend(a.p_at_k.iter().map(|(k, v)| (format!("P@{k}"), *v)));
        cols.extend(a.ndcg_at_k.iter().map(|(k, v)| (format!("nDCG@{k}"), *v)));
        let header: Vec<String> = cols.iter().map(|(n, _)| format!("{n:>8}")).collect();
        let values: Vec<String> = cols
            .iter()
            .map(|(_, v)| match v {
                Some(x) => format!("{x:>8.4}"),
                None => format!("{:>8}", "-"),
            })
            .collect();
        format!(
            "{}\n{}\nqueries scored: {}  skipped: {}\n",
            header.join(" "),
            values.join(" "),
            self.n_queries_scored,
            self.n_queries_skipped
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Label, Text};

    fn binary_list(labels: &[u8]) -> RankedList {
        let n = labels.len();
        let scored: Vec<(f64, Label)> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ((n - i) as f64, Label::binary(l == 1)))
            .collect();
        RankedList::from_scores("q", &scored)
    }

    fn graded_list(grades: &[u8]) -> RankedList {
        let n = grades.len();
        let scored: Vec<(f64, Label)> = grades
            .iter()
            .enumerate()
            .map(|(i, &g)| ((n - i) as f64, Label::graded(g, 3).unwrap()))
            .collect();
        RankedList::from_scores("q", &scored)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn reciprocal_rank_examples() {
        assert_eq!(reciprocal_rank(&binary_list(&[0, 1, 0])), Some(0.5));
        assert_eq!(reciprocal_rank(&binary_list(&[1, 0])), Some(1.0));
        assert_eq!(reciprocal_rank(&binary_list(&[0, 0, 0])), None);
    }

    #[test]
    fn average_precision_examples() {
        assert!(close(average_precision(&binary_list(&[1, 0, 1, 0])).unwrap(), 5.0 / 6.0));
        assert_eq!(average_precision(&binary_list(&[1, 1, 0])), Some(1.0));
        assert_eq!(average_precision(&binary_list(&[0, 1])), Some(0.5));
        assert_eq!(average_precision(&binary_list(&[0])), None);
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(&binary_list(&[1, 0, 0]), 1), 1.0);
        assert_eq!(precision_at_k(&binary_list(&[0, 1]), 1), 0.0);
        assert_eq!(precision_at_k(&binary_list(&[1, 0, 1]), 2), 0.5);
        assert!(close(precision_at_k(&binary_list(&[1]), 3), 1.0 / 3.0));
    }

    #[test]
    fn ndcg_examples() {
        assert!(close(ndcg_at_k(&graded_list(&[4, 3, 1]), 3).unwrap(), 1.0));
        let dcg = 1.0 + 15.0 / 3f64.log2();
        let idcg = 15.0 + 1.0 / 3f64.log2();
        assert!(close(dcg, 10.463946303571863));
        assert!(close(idcg, 15.630929753571458));
        let got = ndcg_at_k(&graded_list(&[1, 4]), 2).unwrap();
        assert!(close(got, dcg / idcg));
        assert!((got - 0.66944).abs() < 5e-6);
        assert_eq!(ndcg_at_k(&graded_list(&[0, 0]), 2), None);
    }

    fn group(qid: &str, labels: &[bool]) -> QuestionGroup {
        let mut g = QuestionGroup::new(qid, Text::new("question"));
        for (i, &l) in labels.iter().enumerate() {
            g.push(Text::new(format!("answer {i}")), Label::binary(l));
        }
        g
    }

    fn label_scores(groups: &[QuestionGroup]) -> HashMap<(String, usize), f64> {
        groups
            .iter()
            .flat_map(|g| {
                g.candidates.iter().enumerate().map(|(i, c)| {
                    ((g.question_id.clone(), i), c.label.binary_value() as f64)
                })
            })
            .collect()
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let groups = vec![group("a", &[false, true, false]), group("b", &[true, true])];
        let r = evaluate_run(&groups, &label_scores(&groups), &EvalOptions::default()).unwrap();
        assert_eq!(r.aggregate.map, Some(1.0));
        assert_eq!(r.aggregate.mrr, Some(1.0));
        assert_eq!(r.aggregate.p_at_k[&1], Some(1.0));
        assert_eq!(r.aggregate.ndcg_at_k[&3], Some(1.0));
        assert_eq!(r.n_queries_scored, 2);
    }

    #[test]
    fn map_is_unweighted_mean_and_skips_unjudged() {
        let groups = vec![
            group("a", &[true, false]),
            group("b", &[false, true]),
            group("c", &[false, false]),
        ];
        let zeros: HashMap<_, _> = label_scores(&groups).into_keys().map(|k| (k, 0.0)).collect();
        let r = evaluate_run(&groups, &zeros, &EvalOptions::default()).unwrap();
        assert_eq!(r.aggregate.map, Some(0.75));
        assert_eq!(r.aggregate.mrr, Some(0.75));
        assert!(close(r.aggregate.p_at_k[&1].unwrap(), 1.0 / 3.0));
        assert_eq!(r.n_queries_scored, 2);
        assert_eq!(r.n_queries_skipped, 1);
        assert_eq!(r.per_query[2].ap, None);

        let opts = EvalOptions {
            zero_for_unjudged: true,
            ..Default::default()
        };
        let r = evaluate_run(&groups, &zeros, &opts).unwrap();
        assert_eq!(r.aggregate.map, Some(0.5));
    }

    #[test]
    fn missing_score_names_the_pair() {
        let groups = vec![group("qx", &[true, false])];
        let mut s = label_scores(&groups);
        s.remove(&("qx".to_string(), 1));
        let err = evaluate_run(&groups, &s, &EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("qx"));
        assert!(evaluate_run(&groups, &label_scores(&groups), &EvalOptions::with_ks(&[0])).is_err());
    }

    #[test]
    fn json_keys_follow_cutoffs() {
        let groups = vec![group("a", &[true, false])];
        let r = evaluate_run(&groups, &label_scores(&groups), &EvalOptions::default()).unwrap();
        let v = r.aggregate_json();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "map",
                "mrr",
                "p@1",
                "p@3",
                "p@10",
                "ndcg@1",
                "ndcg@3",
                "ndcg@10",
                "n_queries_scored",
                "n_queries_skipped"
            ]
        );
        let lines = r.to_json_lines();
        assert_eq!(lines.lines().count(), 2);
        assert!(lines.lines().last().unwrap().contains("\"scope\":\"aggregate\""));
        assert!(r.to_table().contains("nDCG@10"));
    }

    #[test]
    fn moving_sole_relevant_up_never_hurts() {
        for n in 1..8 {
            for pos in 1..n {
                let mut lower = vec![0u8; n];
                lower[pos] = 1;
                let mut higher = vec![0u8; n];
                higher[pos - 1] = 1;
                let (lo, hi) = (binary_list(&lower), binary_list(&higher));
                assert!(average_precision(&hi) >= average_precision(&lo));
                assert!(ndcg_at_k(&hi, n) >= ndcg_at_k(&lo, n));
            }
        }
    }
}
