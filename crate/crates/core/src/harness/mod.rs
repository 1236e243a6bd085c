//! Training, evaluation, ablation and α-sweep over pair embeddings.

mod synth;

use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{self, DataError, PairEmbedding, Qrels, QuerySet, RankedRun, RewriteRecord, Role};
use crate::loss::{self, Divergence, GroupPrediction, LossBreakdown, LossConfig, LossError};
use crate::metrics::{MetricReport, MetricsError};
use crate::ranker::{self, Dims, ForwardTrace, LinearHead, RankerError, RankingHead};

pub use synth::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing {count} embeddings, e.g. {examples}")]
    MissingEmbeddings { count: usize, examples: String },
    #[error("missing relevance labels for {count} pairs, e.g. {examples}")]
    MissingLabels { count: usize, examples: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: acc={acc} rbt={rbt}")]
    NonFinite { epoch: usize, batch: usize, acc: f64, rbt: f64 },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// All role variants of one `(query, doc)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub qid: String,
    pub docid: String,
    pub label: Option<u32>,
    /// Aligned with the role list the groups were built for.
    pub embeddings: Vec<Vec<f64>>,
}

/// Queries, judgments and pair embeddings for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub queries: QuerySet,
    pub rewrites: Vec<RewriteRecord>,
    pub qrels: Qrels,
    pub embeddings: Vec<PairEmbedding>,
    dim: usize,
    index: IndexMap<(String, String), [Option<usize>; Role::COUNT]>,
}

impl Dataset {
    pub fn new(
        queries: QuerySet,
        rewrites: Vec<RewriteRecord>,
        qrels: Qrels,
        embeddings: Vec<PairEmbedding>,
    ) -> Result<Self, HarnessError> {
        let dim = embeddings.first().map(|e| e.vec.len()).ok_or_else(|| HarnessError::Config("no embeddings".into()))?;
        let mut index: IndexMap<(String, String), [Option<usize>; Role::COUNT]> = IndexMap::new();
        for (i, e) in embeddings.iter().enumerate() {
            if e.vec.len() != dim {
                return Err(DataError::DimensionMismatch { line: i + 1, expected: dim, found: e.vec.len() }.into());
            }
            if e.vec.iter().any(|x| !x.is_finite()) {
                return Err(DataError::NonFinite { line: i + 1 }.into());
            }
            let slot = &mut index.entry((e.qid.clone(), e.docid.clone())).or_default()[e.role.index()];
            if slot.replace(i).is_some() {
                return Err(DataError::Invalid(format!(
                    "duplicate embedding for ({}, {}, {})",
                    e.qid, e.docid, e.role
                ))
                .into());
            }
        }
        Ok(Self { queries, rewrites, qrels, embeddings, dim, index })
    }

    /// Embeddings and qrels only, for user-supplied data.
    pub fn from_parts(qrels: Qrels, embeddings: Vec<PairEmbedding>) -> Result<Self, HarnessError> {
        Self::new(QuerySet::new(), Vec::new(), qrels, embeddings)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.qrels.levels() as usize
    }

    /// Query ids in first-seen order of the embeddings.
    pub fn qids(&self) -> Vec<String> {
        let mut seen = IndexMap::new();
        for (q, _) in self.index.keys() {
            seen.entry(q.clone()).or_insert(());
        }
        seen.into_keys().collect()
    }

    /// Hash of the judgments and embeddings in their canonical text form.
    pub fn data_hash(&self) -> String {
        let mut buf = Vec::new();
        data::write_qrels(&mut buf, &self.qrels).expect("write to memory");
        data::write_embeddings(&mut buf, &self.embeddings).expect("write to memory");
        sha256_hex(&buf)
    }

    /// Splits query ids into (train, held-out), shuffling with `seed`. With
    /// `holdout == 0` both sides are the full list.
    pub fn split(&self, holdout: f64, seed: u64) -> (Vec<String>, Vec<String>) {
        let mut qids = self.qids();
        if holdout <= 0.0 {
            return (qids.clone(), qids);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        qids.shuffle(&mut rng);
        let n_eval = ((qids.len() as f64 * holdout).round() as usize).clamp(1, qids.len().saturating_sub(1).max(1));
        let eval = qids.split_off(qids.len() - n_eval);
        let mut train = qids;
        let order: IndexMap<String, usize> = self.qids().into_iter().enumerate().map(|(i, q)| (q, i)).collect();
        train.sort_by_key(|q| order[q]);
        let mut eval = eval;
        eval.sort_by_key(|q| order[q]);
        (train, eval)
    }

    /// Groups for the given queries (all when `None`), one embedding per
    /// role in `roles`.
    pub fn groups(&self, roles: &[Role], qids: Option<&[String]>) -> Result<Vec<Group>, HarnessError> {
        let keep: Option<std::collections::HashSet<&str>> = qids.map(|q| q.iter().map(String::as_str).collect());
        let mut groups = Vec::new();
        let mut missing = Vec::new();
        for ((qid, docid), slots) in &self.index {
            if keep.as_ref().is_some_and(|k| !k.contains(qid.as_str())) {
                continue;
            }
            let mut embeddings = Vec::with_capacity(roles.len());
            for &role in roles {
                match slots[role.index()] {
                    Some(i) => embeddings.push(self.embeddings[i].vec.clone()),
                    None => missing.push(format!("({qid}, {docid}, {role})")),
                }
            }
            groups.push(Group {
                qid: qid.clone(),
                docid: docid.clone(),
                label: self.qrels.grade(qid, docid),
                embeddings,
            });
        }
        if !missing.is_empty() {
            return Err(HarnessError::MissingEmbeddings {
                count: missing.len(),
                examples: missing.iter().take(5).cloned().collect::<Vec<_>>().join(", "),
            });
        }
        Ok(groups)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    /// Accuracy loss only.
    NoRobustLoss,
    /// Classifier directly on the embedding.
    NoMmoe,
    Neither,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] =
        [AblationMode::Full, AblationMode::NoRobustLoss, AblationMode::NoMmoe, AblationMode::Neither];

    pub fn uses_robust_loss(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoMmoe)
    }

    pub fn uses_mmoe(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoRobustLoss)
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoRobustLoss => "w/o-L",
            AblationMode::NoMmoe => "w/o-N",
            AblationMode::Neither => "w/o-N+L",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Adapter width; `None` means `d / 2`.
    pub bottleneck: Option<usize>,
    pub alpha: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub roles: Vec<Role>,
    pub mode: AblationMode,
    pub epsilon: f64,
    pub include_original_in_robust: bool,
    pub include_original_in_accuracy: bool,
    pub divergence: Divergence,
    /// Fraction of queries held out for evaluation in ablations and sweeps.
    pub holdout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            bottleneck: None,
            alpha: loss.alpha,
            learning_rate: 0.05,
            momentum: 0.0,
            epochs: 30,
            batch_size: 32,
            seed: 42,
            roles: Role::ALL.to_vec(),
            mode: AblationMode::Full,
            epsilon: loss.epsilon,
            include_original_in_robust: loss.include_original_in_robust,
            include_original_in_accuracy: loss.include_original_in_accuracy,
            divergence: loss.divergence,
            holdout: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn effective_alpha(&self) -> f64 {
        if self.mode.uses_robust_loss() {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.effective_alpha(),
            epsilon: self.epsilon,
            include_original_in_robust: self.include_original_in_robust,
            include_original_in_accuracy: self.include_original_in_accuracy,
            divergence: self.divergence,
        }
    }

    pub fn dims(&self, d: usize, levels: usize) -> Result<Dims, HarnessError> {
        Ok(Dims::new(d, self.bottleneck.unwrap_or(d / 2), levels)?)
    }

    pub fn validate(&self, levels: usize) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout must lie in [0, 1), got {}", self.holdout));
        }
        if self.roles.is_empty() {
            return bad("roles must not be empty".into());
        }
        let mut seen = [false; Role::COUNT];
        for r in &self.roles {
            if std::mem::replace(&mut seen[r.index()], true) {
                return bad(format!("role {r} listed twice"));
            }
        }
        let robust_roles = self
            .roles
            .iter()
            .filter(|&&r| r != Role::Original || self.include_original_in_robust)
            .count();
        if robust_roles < 2 {
            return bad("the robustness term needs at least two roles".into());
        }
        self.loss_config().validate(levels)?;
        Ok(())
    }
}

pub fn init_head(dims: Dims, mode: AblationMode, seed: u64) -> Result<RankingHead, HarnessError> {
    Ok(if mode.uses_mmoe() {
        RankingHead::Mmoe(ranker::init_params(dims.d, dims.bottleneck, dims.levels, seed)?)
    } else {
        RankingHead::Linear(LinearHead::init(dims.d, dims.levels, seed)?)
    })
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Caps the worker pool used by evaluation. Only the first call has effect.
pub fn set_jobs(jobs: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}

fn forward_group(head: &RankingHead, group: &Group, roles: &[Role]) -> Result<Vec<ForwardTrace>, RankerError> {
    roles.iter().zip(&group.embeddings).map(|(&r, e)| head.forward(e, r)).collect()
}

fn batch_loss(
    traces: &[Vec<ForwardTrace>],
    groups: &[&Group],
    roles: &[Role],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, loss::GroupGrads), HarnessError> {
    let preds: Vec<GroupPrediction<'_>> = traces
        .iter()
        .zip(groups)
        .map(|(t, g)| GroupPrediction {
            label: g.label.expect("labels checked before training") as usize,
            preds: roles.iter().copied().zip(t.iter().map(|t| t.probs.as_slice())).collect(),
        })
        .collect();
    Ok(loss::total_loss(&preds, roles, cfg)?)
}

/// Loss over all groups without updating anything.
pub fn full_loss(head: &RankingHead, groups: &[Group], cfg: &TrainConfig) -> Result<LossBreakdown, HarnessError> {
    let traces = par_map(groups, |g| forward_group(head, g, &cfg.roles)).into_iter().collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Group> = groups.iter().collect();
    Ok(batch_loss(&traces, &refs, &cfg.roles, &cfg.loss_config())?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub head: RankingHead,
    /// Full-data loss before training and after every epoch.
    pub curve: Vec<LossBreakdown>,
}

/// Mini-batch gradient descent on `acc + α·rbt`. Groups are reshuffled every
/// epoch from a stream of the seeded generator kept apart from
/// initialization.
pub fn train(groups: &[Group], levels: usize, cfg: &TrainConfig) -> Result<TrainOutput, HarnessError> {
    cfg.validate(levels)?;
    let first = groups.first().ok_or_else(|| HarnessError::Config("no training data".into()))?;
    let unlabeled: Vec<String> =
        groups.iter().filter(|g| g.label.is_none()).map(|g| format!("({}, {})", g.qid, g.docid)).collect();
    if !unlabeled.is_empty() {
        return Err(HarnessError::MissingLabels {
            count: unlabeled.len(),
            examples: unlabeled.into_iter().take(5).collect::<Vec<_>>().join(", "),
        });
    }
    if groups.iter().any(|g| g.embeddings.len() != cfg.roles.len()) {
        return Err(HarnessError::Config("groups were built for a different role list".into()));
    }
    let d = first.embeddings[0].len();
    let dims = cfg.dims(d, levels)?;
    let mut head = init_head(dims, cfg.mode, cfg.seed)?;
    let loss_cfg = cfg.loss_config();

    let mut curve = vec![full_loss(&head, groups, cfg)?];
    let mut velocity = head.zeros_like();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Group> = chunk.iter().map(|&i| &groups[i]).collect();
            let traces: Vec<Vec<ForwardTrace>> =
                batch.iter().map(|g| forward_group(&head, g, &cfg.roles)).collect::<Result<_, _>>()?;
            let (breakdown, grads) = batch_loss(&traces, &batch, &cfg.roles, &loss_cfg)?;
            if !breakdown.total.is_finite() {
                return Err(HarnessError::NonFinite { epoch: epoch + 1, batch: bi, acc: breakdown.acc, rbt: breakdown.rbt });
            }
            let flat_traces: Vec<ForwardTrace> = traces.into_iter().flatten().collect();
            let flat_grads: Vec<Vec<f64>> = grads.into_iter().flatten().collect();
            let grad = head.backward(&flat_traces, &flat_grads)?;
            for ((p, v), g) in head.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(grad.tensors()) {
                for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = cfg.momentum * *v + g;
                    *p -= cfg.learning_rate * *v;
                }
            }
        }
        let b = full_loss(&head, groups, cfg)?;
        if !b.total.is_finite() || !head.is_finite() {
            return Err(HarnessError::NonFinite { epoch: epoch + 1, batch: usize::MAX, acc: b.acc, rbt: b.rbt });
        }
        curve.push(b);
    }
    Ok(TrainOutput { head, curve })
}

/// Expected grade `Σ c·ŷ_c`.
pub fn expected_grade(probs: &[f64]) -> f64 {
    probs.iter().enumerate().map(|(c, p)| c as f64 * p).sum()
}

/// One ranked run per role from the head's expected-grade scores.
pub fn score_runs(head: &RankingHead, groups: &[Group], roles: &[Role], tag: &str) -> Result<Vec<RankedRun>, HarnessError> {
    let scores: Vec<Vec<f64>> = par_map(groups, |g| {
        forward_group(head, g, roles).map(|ts| ts.iter().map(|t| expected_grade(&t.probs)).collect())
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let mut runs = Vec::with_capacity(roles.len());
    for (k, &role) in roles.iter().enumerate() {
        let mut per_query: IndexMap<&str, Vec<(String, f64)>> = IndexMap::new();
        for (g, s) in groups.iter().zip(&scores) {
            per_query.entry(g.qid.as_str()).or_default().push((g.docid.clone(), s[k]));
        }
        let mut run = RankedRun::new(role, tag);
        for (qid, scored) in per_query {
            run.set(qid, scored)?;
        }
        runs.push(run);
    }
    Ok(runs)
}

pub fn evaluate(
    head: &RankingHead,
    dataset: &Dataset,
    qids: Option<&[String]>,
    roles: &[Role],
    cutoffs: &[usize],
) -> Result<MetricReport, HarnessError> {
    let dims = head.dims();
    if dims.d != dataset.dim() || dims.levels != dataset.levels() {
        return Err(HarnessError::Config(format!(
            "checkpoint expects d={} with {} levels, data has d={} with {} levels",
            dims.d,
            dims.levels,
            dataset.dim(),
            dataset.levels()
        )));
    }
    let groups = dataset.groups(roles, qids)?;
    let runs = score_runs(head, &groups, roles, "robust-rank")?;
    Ok(MetricReport::compute(&runs, &dataset.qrels, cutoffs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub mode: AblationMode,
    pub alpha: f64,
    pub data_hash: String,
    pub final_loss: LossBreakdown,
    pub report: MetricReport,
}

/// Trains on the training split and evaluates on the held-out split.
pub fn run_experiment(
    dataset: &Dataset,
    cfg: &TrainConfig,
    cutoffs: &[usize],
) -> Result<(ExperimentRun, TrainOutput), HarnessError> {
    let (train_q, eval_q) = dataset.split(cfg.holdout, cfg.seed);
    let groups = dataset.groups(&cfg.roles, Some(&train_q))?;
    let out = train(&groups, dataset.levels(), cfg)?;
    let report = evaluate(&out.head, dataset, Some(&eval_q), &cfg.roles, cutoffs)?;
    let run = ExperimentRun {
        mode: cfg.mode,
        alpha: cfg.effective_alpha(),
        data_hash: dataset.data_hash(),
        final_loss: *out.curve.last().expect("curve has the initial point"),
        report,
    };
    Ok((run, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cutoff: usize,
    pub runs: Vec<ExperimentRun>,
}

impl AblationReport {
    pub fn get(&self, mode: AblationMode) -> Option<&ExperimentRun> {
        self.runs.iter().find(|r| r.mode == mode)
    }

    pub fn table(&self) -> String {
        let n = self.cutoff;
        let mut s = format!("{:<9} {:>9} {:>9} {:>13} {:>9}\n", "mode", format!("NDCG@{n}"), "MAP", format!("VNDCG@{n}(e-5)"), "VNAP");
        for r in &self.runs {
            let map = r.report.runs.values().map(|m| m.map).sum::<f64>() / r.report.runs.len() as f64;
            let _ = writeln!(
                s,
                "{:<9} {:>9.4} {:>9.4} {:>13.3} {:>9.4}",
                r.mode.label(),
                r.report.mean_ndcg(n).unwrap_or(f64::NAN),
                map,
                r.report.vndcg(n).unwrap_or(f64::NAN) * 1e5,
                r.report.robustness.vnap
            );
        }
        s
    }
}

/// The four ablation modes with identical data, split and seed.
pub fn ablate(dataset: &Dataset, base: &TrainConfig, cutoff: usize) -> Result<AblationReport, HarnessError> {
    let mut runs = Vec::with_capacity(4);
    for mode in AblationMode::ALL {
        let cfg = TrainConfig { mode, ..base.clone() };
        runs.push(run_experiment(dataset, &cfg, &[cutoff])?.0);
    }
    Ok(AblationReport { cutoff, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub ndcg: f64,
    pub map: f64,
    pub vndcg: f64,
    pub vnap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cutoff: usize,
    pub data_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let n = self.cutoff;
        let mut s = format!("alpha,ndcg@{n},map,vndcg@{n},vnap\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.alpha, r.ndcg, r.map, r.vndcg, r.vnap);
        }
        s
    }
}

pub const DEFAULT_ALPHAS: [f64; 6] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

/// One Full-mode run per α (α = 0 is a plain accuracy-loss run).
pub fn sweep_alpha(dataset: &Dataset, base: &TrainConfig, alphas: &[f64], cutoff: usize) -> Result<SweepReport, HarnessError> {
    if alphas.is_empty() {
        return Err(HarnessError::Config("alphas must not be empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(HarnessError::Config(format!("alpha must be finite and >= 0, got {a}")));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = TrainConfig { alpha, mode: AblationMode::Full, ..base.clone() };
        let (run, _) = run_experiment(dataset, &cfg, &[cutoff])?;
        let r = &run.report;
        rows.push(SweepRow {
            alpha,
            ndcg: r.mean_ndcg(cutoff).unwrap_or(f64::NAN),
            map: r.runs.values().map(|m| m.map).sum::<f64>() / r.runs.len() as f64,
            vndcg: r.vndcg(cutoff).unwrap_or(f64::NAN),
            vnap: r.robustness.vnap,
        });
    }
    Ok(SweepReport { cutoff, data_hash: dataset.data_hash(), rows })
}

/// Run metadata written next to every output. Holds no timestamps so
/// reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input name to SHA-256 of its bytes.
    pub inputs: IndexMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: IndexMap::new(),
        }
    }

    pub fn input(&mut self, name: impl Into<String>, bytes: &[u8]) {
        self.inputs.insert(name.into(), sha256_hex(bytes));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("provenance serializes") + "\n"
    }
}
