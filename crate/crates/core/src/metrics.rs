//! Effectiveness (NDCG@N, AP, MAP) and robustness (VNDCG@N, NAP, VNAP)
//! metrics over TREC-style runs and qrels.

use std::fmt::{self, Write as _};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Qrels, RankedRun, Role};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("qid {0} has no relevance judgments")]
    UnknownQid(String),
    #[error("cutoff N must be at least 1")]
    BadCutoff,
    #[error("need at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("run {run} covers a different qid set than run {reference}")]
    QidMismatch { run: String, reference: String },
    #[error("every query has zero mean AP across runs")]
    AllExcluded,
    #[error("run for role {0} given twice")]
    DuplicateRole(Role),
    #[error("run {0} is empty")]
    EmptyRun(String),
}

fn gain(grade: u32) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG over the top `n` docids of `ranking`. Unjudged documents count as
/// grade 0.
pub fn ndcg_at_n<S: AsRef<str>>(ranking: &[S], qrels: &Qrels, qid: &str, n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::BadCutoff);
    }
    let judged = qrels.query(qid).ok_or_else(|| MetricsError::UnknownQid(qid.to_string()))?;
    let dcg: f64 = ranking
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d.as_ref()).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(n).enumerate().map(|(i, &g)| gain(g) * discount(i + 1)).sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Average precision with relevance binarized at grade ≥ 1. The divisor is
/// the number of relevant documents judged for the query, so relevant
/// documents missing from the ranking count as misses.
pub fn average_precision<S: AsRef<str>>(ranking: &[S], qrels: &Qrels, qid: &str) -> Result<f64, MetricsError> {
    let judged = qrels.query(qid).ok_or_else(|| MetricsError::UnknownQid(qid.to_string()))?;
    let total_rel = judged.values().filter(|&&g| g >= 1).count();
    if total_rel == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if judged.get(d.as_ref()).is_some_and(|&g| g >= 1) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_rel as f64)
}

/// Population variance (divide by the count).
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    // Shifting by the first value keeps equal inputs at exactly zero.
    let k = xs.len() as f64;
    let shifted: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let mean = shifted.iter().sum::<f64>() / k;
    shifted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k
}

fn check_runs(runs: &[RankedRun]) -> Result<(), MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    let mut seen = [false; Role::COUNT];
    for run in runs {
        if std::mem::replace(&mut seen[run.role.index()], true) {
            return Err(MetricsError::DuplicateRole(run.role));
        }
        if run.is_empty() {
            return Err(MetricsError::EmptyRun(run.role.to_string()));
        }
    }
    let reference = &runs[0];
    for run in &runs[1..] {
        let same = run.len() == reference.len() && run.qids().all(|q| reference.ranking(q).is_some());
        if !same {
            return Err(MetricsError::QidMismatch {
                run: run.role.to_string(),
                reference: reference.role.to_string(),
            });
        }
    }
    Ok(())
}

fn per_query_ndcg(run: &RankedRun, qrels: &Qrels, n: usize) -> Result<Vec<f64>, MetricsError> {
    run.iter()
        .map(|(qid, ranked)| {
            let docids: Vec<&str> = ranked.iter().map(|(d, _)| d.as_str()).collect();
            ndcg_at_n(&docids, qrels, qid, n)
        })
        .collect()
}

fn per_query_ap(run: &RankedRun, qrels: &Qrels, qids: &[&str]) -> Result<Vec<f64>, MetricsError> {
    qids.iter()
        .map(|qid| {
            let docids = run.docids(qid).unwrap_or_default();
            average_precision(&docids, qrels, qid)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean NDCG@N of one run over its queries.
pub fn mean_ndcg_at_n(run: &RankedRun, qrels: &Qrels, n: usize) -> Result<f64, MetricsError> {
    if run.is_empty() {
        return Err(MetricsError::EmptyRun(run.role.to_string()));
    }
    Ok(mean(&per_query_ndcg(run, qrels, n)?))
}

/// Population variance of the run-level mean NDCG@N across the runs.
pub fn vndcg_at_n(runs: &[RankedRun], qrels: &Qrels, n: usize) -> Result<f64, MetricsError> {
    check_runs(runs)?;
    let means = runs.iter().map(|r| mean_ndcg_at_n(r, qrels, n)).collect::<Result<Vec<_>, _>>()?;
    Ok(population_variance(&means))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NapRow {
    pub qid: String,
    pub mean_ap: f64,
    /// One entry per run, in run order.
    pub nap: Vec<f64>,
    pub variance: f64,
}

/// Per-query normalized AP (`AP_k(q) / mean_k AP_k(q)`) and VNAP, the mean
/// over queries of the population variance of NAP across runs. Queries whose
/// mean AP is zero are left out.
pub fn nap_and_vnap(runs: &[RankedRun], qrels: &Qrels) -> Result<(Vec<NapRow>, f64), MetricsError> {
    check_runs(runs)?;
    let qids: Vec<&str> = runs[0].qids().collect();
    let aps = runs.iter().map(|r| per_query_ap(r, qrels, &qids)).collect::<Result<Vec<_>, _>>()?;
    nap_from_ap(&qids, &aps)
}

fn nap_from_ap(qids: &[&str], aps: &[Vec<f64>]) -> Result<(Vec<NapRow>, f64), MetricsError> {
    let mut rows = Vec::new();
    for (qi, qid) in qids.iter().enumerate() {
        let per_run: Vec<f64> = aps.iter().map(|a| a[qi]).collect();
        let m = mean(&per_run);
        if m == 0.0 {
            continue;
        }
        let nap: Vec<f64> = per_run.iter().map(|a| a / m).collect();
        let variance = population_variance(&nap);
        rows.push(NapRow { qid: qid.to_string(), mean_ap: m, nap, variance });
    }
    if rows.is_empty() {
        return Err(MetricsError::AllExcluded);
    }
    let vnap = rows.iter().map(|r| r.variance).sum::<f64>() / rows.len() as f64;
    Ok((rows, vnap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Keyed `ndcg@N`.
    pub ndcg: IndexMap<String, f64>,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    /// Keyed `vndcg@N`.
    pub vndcg: IndexMap<String, f64>,
    pub vnap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDetail {
    pub qid: String,
    pub role: Role,
    pub ndcg: Vec<f64>,
    pub ap: f64,
    pub nap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub runs: IndexMap<Role, RunMetrics>,
    pub robustness: Robustness,
    pub per_query: Vec<QueryDetail>,
}

impl MetricReport {
    pub fn compute(runs: &[RankedRun], qrels: &Qrels, cutoffs: &[usize]) -> Result<Self, MetricsError> {
        check_runs(runs)?;
        if cutoffs.is_empty() || cutoffs.contains(&0) {
            return Err(MetricsError::BadCutoff);
        }
        let qids: Vec<&str> = runs[0].qids().collect();
        let mut ndcg_tables = Vec::with_capacity(runs.len());
        let mut aps = Vec::with_capacity(runs.len());
        for run in runs {
            let by_n = cutoffs.iter().map(|&n| per_query_ndcg(run, qrels, n)).collect::<Result<Vec<_>, _>>()?;
            ndcg_tables.push(by_n);
            aps.push(per_query_ap(run, qrels, &qids)?);
        }
        // per_query_ndcg follows each run's own qid order; realign to run 0.
        let realigned: Vec<Vec<Vec<f64>>> = runs
            .iter()
            .zip(&ndcg_tables)
            .map(|(run, by_n)| {
                let pos: IndexMap<&str, usize> = run.qids().enumerate().map(|(i, q)| (q, i)).collect();
                by_n.iter().map(|vals| qids.iter().map(|q| vals[pos[q]]).collect()).collect()
            })
            .collect();

        let mut run_metrics = IndexMap::new();
        for (k, run) in runs.iter().enumerate() {
            let ndcg = cutoffs
                .iter()
                .zip(&realigned[k])
                .map(|(n, vals)| (format!("ndcg@{n}"), mean(vals)))
                .collect();
            run_metrics.insert(run.role, RunMetrics { ndcg, map: mean(&aps[k]) });
        }
        let vndcg = cutoffs
            .iter()
            .enumerate()
            .map(|(ci, n)| {
                let means: Vec<f64> = realigned.iter().map(|r| mean(&r[ci])).collect();
                (format!("vndcg@{n}"), population_variance(&means))
            })
            .collect();
        let (nap_rows, vnap) = nap_from_ap(&qids, &aps)?;
        let nap_by_qid: IndexMap<&str, &NapRow> = nap_rows.iter().map(|r| (r.qid.as_str(), r)).collect();

        let mut per_query = Vec::with_capacity(qids.len() * runs.len());
        for (qi, qid) in qids.iter().enumerate() {
            for (k, run) in runs.iter().enumerate() {
                per_query.push(QueryDetail {
                    qid: qid.to_string(),
                    role: run.role,
                    ndcg: realigned[k].iter().map(|v| v[qi]).collect(),
                    ap: aps[k][qi],
                    nap: nap_by_qid.get(qid).map(|r| r.nap[k]),
                });
            }
        }
        Ok(Self {
            cutoffs: cutoffs.to_vec(),
            runs: run_metrics,
            robustness: Robustness { vndcg, vnap },
            per_query,
        })
    }

    pub fn ndcg(&self, role: Role, n: usize) -> Option<f64> {
        self.runs.get(&role)?.ndcg.get(&format!("ndcg@{n}")).copied()
    }

    /// Mean over runs of NDCG@N.
    pub fn mean_ndcg(&self, n: usize) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.runs.keys().map(|&r| self.ndcg(r, n)).collect();
        vals.map(|v| mean(&v))
    }

    pub fn vndcg(&self, n: usize) -> Option<f64> {
        self.robustness.vndcg.get(&format!("vndcg@{n}")).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut header = format!("{:<10}", "role");
        for n in &self.cutoffs {
            let _ = write!(header, " {:>9}", format!("NDCG@{n}"));
        }
        let _ = write!(header, " {:>9}", "MAP");
        writeln!(f, "{header}")?;
        for (role, m) in &self.runs {
            write!(f, "{:<10}", role.as_str())?;
            for v in m.ndcg.values() {
                write!(f, " {v:>9.4}")?;
            }
            writeln!(f, " {:>9.4}", m.map)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<10} {:>14} {:>9}", "metric", "value", "x1e-5")?;
        for (name, v) in &self.robustness.vndcg {
            writeln!(f, "{:<10} {:>14.6e} {:>9.2}", name.to_uppercase(), v, v * 1e5)?;
        }
        writeln!(f, "{:<10} {:>14.6e} {:>9}", "VNAP", self.robustness.vnap, "")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qrels(rows: &[(&str, &str, u32)], levels: u32) -> Qrels {
        let mut q = Qrels::new(levels).unwrap();
        for (qid, d, g) in rows {
            q.insert(qid, d, *g).unwrap();
        }
        q
    }

    fn run(role: Role, rows: &[(&str, &[&str])]) -> RankedRun {
        let mut r = RankedRun::new(role, "t");
        for (qid, docs) in rows {
            let n = docs.len();
            r.set(qid, docs.iter().enumerate().map(|(i, d)| (d.to_string(), (n - i) as f64)).collect())
                .unwrap();
        }
        r
    }

    #[test]
    fn ndcg_hand_example() {
        let q = qrels(&[("q", "a", 2), ("q", "b", 0), ("q", "c", 1)], 3);
        let v = ndcg_at_n(&["a", "b", "c"], &q, "q", 3).unwrap();
        let expected = 3.5 / (3.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.9640).abs() < 1e-4);
    }

    #[test]
    fn ndcg_conventions() {
        let q = qrels(&[("q", "a", 2), ("q", "b", 0), ("q", "c", 1), ("z", "a", 0)], 3);
        assert_eq!(ndcg_at_n(&["a", "c", "b"], &q, "q", 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_n(&["a"], &q, "z", 10).unwrap(), 0.0);
        assert_eq!(ndcg_at_n(&["a"], &q, "missing", 10), Err(MetricsError::UnknownQid("missing".into())));
        assert_eq!(ndcg_at_n(&["a"], &q, "q", 0), Err(MetricsError::BadCutoff));
    }

    #[test]
    fn ap_examples() {
        let q = qrels(&[("q", "a", 1), ("q", "b", 0), ("q", "c", 1), ("n", "x", 0)], 3);
        let v = average_precision(&["a", "b", "c"], &q, "q").unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&["a", "c"], &q, "q").unwrap(), 1.0);
        assert_eq!(average_precision(&["x"], &q, "n").unwrap(), 0.0);
        // graded: grade 2 counts as relevant
        let g = qrels(&[("q", "a", 0), ("q", "b", 2)], 3);
        assert_eq!(average_precision(&["a", "b"], &g, "q").unwrap(), 0.5);
    }

    #[test]
    fn variance_of_published_rows() {
        let bert = [0.4423, 0.4129, 0.4084, 0.4082, 0.4010];
        let roberta = [0.4562, 0.4272, 0.3997, 0.4098, 0.4194];
        assert!((population_variance(&bert) * 1e5 - 20.69).abs() < 0.005);
        assert!((population_variance(&roberta) * 1e5 - 36.97).abs() < 0.005);
        assert_eq!(population_variance(&[0.3; 5]), 0.0);
    }

    #[test]
    fn vndcg_identical_runs_is_zero() {
        let q = qrels(&[("q1", "a", 2), ("q1", "b", 1), ("q2", "c", 1), ("q2", "d", 0)], 3);
        let runs: Vec<RankedRun> = Role::ALL
            .iter()
            .map(|&r| run(r, &[("q1", &["b", "a"]), ("q2", &["d", "c"])]))
            .collect();
        assert_eq!(vndcg_at_n(&runs, &q, 10).unwrap(), 0.0);
        assert_eq!(nap_and_vnap(&runs, &q).unwrap().1, 0.0);
    }

    #[test]
    fn nap_hand_example() {
        // q1: AP 1.0 in run 0, 0.5 in run 1 => scale so APs are (0.8, 0.4) style ratio 2:1
        let q = qrels(&[("q", "a", 1), ("q", "b", 0)], 3);
        let r0 = run(Role::Original, &[("q", &["a", "b"])]);
        let r1 = run(Role::Woman, &[("q", &["b", "a"])]);
        let (rows, vnap) = nap_and_vnap(&[r0, r1], &q).unwrap();
        assert!((rows[0].nap[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((rows[0].nap[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((vnap - 1.0 / 9.0).abs() < 1e-12);

        let (_, v) = nap_from_ap(&["q"], &[vec![0.8], vec![0.4]]).unwrap();
        assert!((v - 0.1111).abs() < 1e-4);
        let (rows, v) = nap_from_ap(&["q"], &[vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(rows[0].nap, vec![1.0, 1.0]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn nap_excludes_zero_queries() {
        assert_eq!(nap_from_ap(&["q"], &[vec![0.0], vec![0.0]]), Err(MetricsError::AllExcluded));
        let (rows, _) = nap_from_ap(&["q", "z"], &[vec![0.0, 0.3], vec![0.0, 0.3]]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].qid, "z");
    }

    #[test]
    fn run_set_validation() {
        let q = qrels(&[("q1", "a", 1), ("q2", "a", 1)], 3);
        let a = run(Role::Original, &[("q1", &["a"])]);
        let b = run(Role::Woman, &[("q2", &["a"])]);
        assert!(matches!(vndcg_at_n(&[a.clone(), b], &q, 10), Err(MetricsError::QidMismatch { .. })));
        assert_eq!(vndcg_at_n(std::slice::from_ref(&a), &q, 10), Err(MetricsError::TooFewRuns(1)));
        assert_eq!(vndcg_at_n(&[a.clone(), a], &q, 10), Err(MetricsError::DuplicateRole(Role::Original)));
    }

    #[test]
    fn report_round_trips_and_renders() {
        let q = qrels(&[("q1", "a", 2), ("q1", "b", 1), ("q2", "c", 1), ("q2", "d", 0)], 3);
        let runs = vec![
            run(Role::Original, &[("q1", &["a", "b"]), ("q2", &["c", "d"])]),
            run(Role::Woman, &[("q2", &["d", "c"]), ("q1", &["b", "a"])]),
            run(Role::Elder, &[("q1", &["a", "b"]), ("q2", &["d", "c"])]),
        ];
        let report = MetricReport::compute(&runs, &q, &[1, 10]).unwrap();
        assert_eq!(MetricReport::from_json(&report.to_json()).unwrap(), report);
        assert_eq!(report.per_query.len(), 6);
        assert_eq!(report.ndcg(Role::Original, 10), Some(1.0));
        let direct = vndcg_at_n(&runs, &q, 10).unwrap();
        assert_eq!(report.vndcg(10), Some(direct));
        let text = report.to_string();
        assert!(text.contains("NDCG@10") && text.contains("VNDCG@10") && text.contains("x1e-5"));
    }
}
