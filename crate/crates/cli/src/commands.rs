use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use robust_rank::data::{self, Query, RewriteStatus, Role};
use robust_rank::harness::{
    self, generate_synthetic, Dataset, Provenance, SyntheticSpec, TrainConfig, DEFAULT_ALPHAS,
};
use robust_rank::metrics::MetricReport;
use robust_rank::ranker::RankingHead;
use robust_rank::rewrite::{
    self, Backend, HttpBackend, HttpConfig, MockBackend, RetryPolicy, RewriteConfig, DEFAULT_TOKEN_ENV,
};
use serde_json::json;

use crate::args::*;
use crate::config::{parse_enum, FileConfig};
use crate::CliError;

struct Ctx {
    seed: Option<u64>,
    out: PathBuf,
    jobs: usize,
    file: FileConfig,
}

impl Ctx {
    fn seed_or(&self, default: u64) -> u64 {
        self.seed.or(self.file.seed).unwrap_or(default)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| io_err(&path, e))
    }

    fn provenance(&self, p: &Provenance) -> Result<(), CliError> {
        self.write("provenance.json", p.to_json())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn text(path: &Path, bytes: &[u8]) -> Result<String, CliError> {
    String::from_utf8(bytes.to_vec()).map_err(|_| CliError::Data(format!("{}: not valid UTF-8", path.display())))
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let jobs = cli.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    harness::set_jobs(jobs);
    let ctx = Ctx { seed: cli.seed, out: cli.out, jobs, file };
    match cli.command {
        Command::Rewrite(a) => rewrite_cmd(&ctx, a),
        Command::Judge(a) => judge_cmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
        Command::Sweep(a) => sweep_cmd(&ctx, a),
        Command::GenSynth(a) => synth_cmd(&ctx, a),
    }
}

// ---- rewriting -------------------------------------------------------------

fn rewrite_config(ctx: &Ctx, b: &BackendArgs, max_iters: Option<u32>, strict: bool) -> RewriteConfig {
    let f = &ctx.file;
    let d = RewriteConfig::default();
    let retry = RetryPolicy {
        retries: b.retries.or(f.retries).unwrap_or(d.retry.retries),
        backoff: f.backoff_ms.map(Duration::from_millis).unwrap_or(d.retry.backoff),
    };
    RewriteConfig {
        max_iters: max_iters.or(f.max_iters).unwrap_or(d.max_iters),
        strict: strict || f.strict.unwrap_or(false),
        jobs: ctx.jobs,
        retry,
        temperature: b.temperature.or(f.temperature).unwrap_or(d.temperature),
        max_tokens: f.max_tokens.unwrap_or(d.max_tokens),
        prompts: d.prompts,
    }
}

/// Builds the backend and the settings recorded in provenance. Tokens never
/// appear there, only the variable name.
fn backend(ctx: &Ctx, b: &BackendArgs) -> Result<(Box<dyn Backend>, serde_json::Value), CliError> {
    let f = &ctx.file;
    match b.backend.or(f.backend).unwrap_or(BackendKind::Mock) {
        BackendKind::Mock => {
            let seed = ctx.seed_or(0);
            Ok((Box::new(MockBackend::new(seed)), json!({ "kind": "mock", "seed": seed })))
        }
        BackendKind::Http => {
            let endpoint = b
                .endpoint
                .clone()
                .or_else(|| f.endpoint.clone())
                .ok_or_else(|| CliError::Usage("the http backend needs --endpoint".into()))?;
            let model = b
                .model
                .clone()
                .or_else(|| f.model.clone())
                .ok_or_else(|| CliError::Usage("the http backend needs --model".into()))?;
            let mut cfg = HttpConfig::new(endpoint, model);
            cfg.token_env = b.token_env.clone().or_else(|| f.token_env.clone()).unwrap_or(DEFAULT_TOKEN_ENV.into());
            if let Some(t) = f.timeout_secs {
                cfg.timeout = Duration::from_secs(t);
            }
            let meta = json!({
                "kind": "http",
                "endpoint": cfg.endpoint,
                "model": cfg.model,
                "token_env": cfg.token_env,
                "timeout_secs": cfg.timeout.as_secs(),
            });
            Ok((Box::new(HttpBackend::new(cfg)), meta))
        }
    }
}

fn rewrite_cmd(ctx: &Ctx, a: RewriteArgs) -> Result<(), CliError> {
    let bytes = read(&a.queries)?;
    let queries = data::parse_queries(&text(&a.queries, &bytes)?)?;
    let roles = a.roles.clone().or_else(|| ctx.file.roles.clone()).unwrap_or(Role::PERSONAS.to_vec());
    let config = rewrite_config(ctx, &a.backend, a.max_iters, a.strict);
    let (backend, backend_meta) = backend(ctx, &a.backend)?;
    let out = rewrite::rewrite_all(&queries, &roles, backend.as_ref(), &config)?;

    let mut records = Vec::new();
    data::write_rewrites(&mut records, &out.records).expect("write to memory");
    ctx.write("rewrites.jsonl", records)?;
    let mut transcript = String::new();
    for t in &out.transcript {
        transcript.push_str(&serde_json::to_string(t).expect("transcript serializes"));
        transcript.push('\n');
    }
    ctx.write("transcript.jsonl", transcript)?;

    let mut prov = Provenance::new("rewrite", ctx.seed_or(0), json!({
        "backend": backend_meta,
        "roles": roles,
        "max_iters": config.max_iters,
        "strict": config.strict,
        "retries": config.retry.retries,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }));
    prov.input(a.queries.display().to_string(), &bytes);
    ctx.provenance(&prov)?;

    let accepted = out.records.iter().filter(|r| r.status == RewriteStatus::Accepted).count();
    println!(
        "{} rewrites ({} accepted, {} fell back to the original), {} backend calls",
        out.records.len(),
        accepted,
        out.records.len() - accepted,
        out.transcript.len()
    );
    Ok(())
}

fn judge_cmd(ctx: &Ctx, a: JudgeArgs) -> Result<(), CliError> {
    let bytes = read(&a.rewrites)?;
    let records = data::parse_rewrites(&text(&a.rewrites, &bytes)?)?;
    let config = rewrite_config(ctx, &a.backend, None, false);
    let (backend, backend_meta) = backend(ctx, &a.backend)?;

    let mut lines = String::new();
    let mut hist = [[0usize; 6]; 2];
    for r in records.iter().filter(|r| r.role != Role::Original) {
        let q = Query { qid: r.qid.clone(), text: r.original_text.clone(), role: Role::Original };
        let s = rewrite::judge_quality(&q, &r.rewritten_text, r.role, backend.as_ref(), &config)?;
        hist[0][s.semantic as usize] += 1;
        hist[1][s.persona as usize] += 1;
        let line = json!({ "qid": r.qid, "role": r.role, "semantic": s.semantic, "persona": s.persona });
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    ctx.write("judgments.jsonl", lines)?;
    let mut csv = String::from("score,semantic,persona\n");
    for (s, (sem, per)) in hist[0].iter().zip(&hist[1]).enumerate() {
        let _ = writeln!(csv, "{s},{sem},{per}");
    }
    ctx.write("judge_summary.csv", &csv)?;

    let mut prov = Provenance::new("judge", ctx.seed_or(0), json!({
        "backend": backend_meta,
        "retries": config.retry.retries,
        "temperature": config.temperature,
    }));
    prov.input(a.rewrites.display().to_string(), &bytes);
    ctx.provenance(&prov)?;
    print!("{csv}");
    Ok(())
}

// ---- ranking ---------------------------------------------------------------

fn train_config(ctx: &Ctx, t: &TrainFlags) -> Result<TrainConfig, CliError> {
    let f = &ctx.file;
    let d = TrainConfig::default();
    let mode = match &t.mode {
        Some(s) => parse_enum("mode", s)?,
        None => f.mode.unwrap_or(d.mode),
    };
    let divergence = match &t.divergence {
        Some(s) => parse_enum("divergence", s)?,
        None => f.divergence.unwrap_or(d.divergence),
    };
    Ok(TrainConfig {
        bottleneck: t.bottleneck.or(f.bottleneck).or(d.bottleneck),
        alpha: t.alpha.or(f.alpha).unwrap_or(d.alpha),
        learning_rate: t.learning_rate.or(f.learning_rate).unwrap_or(d.learning_rate),
        momentum: t.momentum.or(f.momentum).unwrap_or(d.momentum),
        epochs: t.epochs.or(f.epochs).unwrap_or(d.epochs),
        batch_size: t.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        seed: ctx.seed_or(d.seed),
        roles: t.roles.clone().or_else(|| f.roles.clone()).unwrap_or(d.roles),
        mode,
        epsilon: f.epsilon.unwrap_or(d.epsilon),
        include_original_in_robust: f.include_original_in_robust.unwrap_or(d.include_original_in_robust),
        include_original_in_accuracy: f.include_original_in_accuracy.unwrap_or(d.include_original_in_accuracy),
        divergence,
        holdout: t.holdout.or(f.holdout).unwrap_or(d.holdout),
    })
}

fn synth_spec(ctx: &Ctx, seed: u64, levels: Option<u32>) -> SyntheticSpec {
    let f = &ctx.file;
    let d = SyntheticSpec::default();
    SyntheticSpec {
        num_queries: f.num_queries.unwrap_or(d.num_queries),
        docs_per_query: f.docs_per_query.unwrap_or(d.docs_per_query),
        num_roles: d.num_roles,
        noise_scale: f.noise_scale.unwrap_or(d.noise_scale),
        seed,
        dim: f.dim.unwrap_or(d.dim),
        levels: levels.or(f.levels).unwrap_or(d.levels),
    }
}

fn levels(ctx: &Ctx, flag: Option<u32>) -> u32 {
    flag.or(ctx.file.levels).unwrap_or(3)
}

/// Loads embeddings and qrels, or generates the synthetic dataset. Returns
/// the dataset, a description for provenance and the hashed inputs.
type Inputs = Vec<(String, Vec<u8>)>;

fn load_dataset(ctx: &Ctx, a: &DataArgs) -> Result<(Dataset, serde_json::Value, Inputs), CliError> {
    match (&a.embeddings, &a.qrels) {
        (Some(e), Some(q)) => {
            let eb = read(e)?;
            let qb = read(q)?;
            let levels = levels(ctx, a.levels);
            let qrels = data::parse_qrels(&text(q, &qb)?, levels)?;
            let embeddings = data::parse_embeddings(&text(e, &eb)?)?;
            let dataset = Dataset::from_parts(qrels, embeddings)?;
            let inputs = vec![(e.display().to_string(), eb), (q.display().to_string(), qb)];
            Ok((dataset, json!({ "source": "files", "levels": levels }), inputs))
        }
        _ => {
            let spec = synth_spec(ctx, a.synth_seed.or(ctx.file.synth_seed).unwrap_or(SyntheticSpec::default().seed), a.levels);
            let dataset = generate_synthetic(&spec)?;
            Ok((dataset, json!({ "source": "synthetic", "spec": spec }), Vec::new()))
        }
    }
}

fn experiment_provenance(
    command: &str,
    cfg: &TrainConfig,
    data_meta: serde_json::Value,
    dataset: &Dataset,
    inputs: Inputs,
    extra: serde_json::Value,
) -> Provenance {
    let mut prov = Provenance::new(command, cfg.seed, json!({
        "train": to_value(cfg),
        "data": data_meta,
        "data_hash": dataset.data_hash(),
        "extra": extra,
    }));
    for (name, bytes) in inputs {
        prov.input(name, &bytes);
    }
    prov
}

fn write_runs(ctx: &Ctx, runs: &[data::RankedRun]) -> Result<(), CliError> {
    for run in runs {
        let mut buf = Vec::new();
        data::write_run(&mut buf, run).expect("write to memory");
        ctx.write(&format!("runs/{}.run", run.role.as_str()), buf)?;
    }
    Ok(())
}

fn cutoffs(ctx: &Ctx, flag: &Option<Vec<usize>>) -> Vec<usize> {
    flag.clone().or_else(|| ctx.file.cutoffs.clone()).unwrap_or(vec![10, 20])
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    let cfg = train_config(ctx, &a.train)?;
    let cutoffs = cutoffs(ctx, &a.cutoffs);
    let (dataset, meta, inputs) = load_dataset(ctx, &a.data)?;
    let (run, out) = harness::run_experiment(&dataset, &cfg, &cutoffs)?;

    ctx.write("checkpoint.json", out.head.to_json() + "\n")?;
    let mut curve = String::from("epoch,acc,rbt,total\n");
    for (i, b) in out.curve.iter().enumerate() {
        let _ = writeln!(curve, "{i},{},{},{}", b.acc, b.rbt, b.total);
    }
    ctx.write("loss_curve.csv", curve)?;
    ctx.write("report.json", run.report.to_json() + "\n")?;
    let (_, eval_q) = dataset.split(cfg.holdout, cfg.seed);
    let groups = dataset.groups(&cfg.roles, Some(&eval_q))?;
    write_runs(ctx, &harness::score_runs(&out.head, &groups, &cfg.roles, "robust-rank")?)?;
    let prov = experiment_provenance("train", &cfg, meta, &dataset, inputs, json!({ "cutoffs": cutoffs }));
    ctx.provenance(&prov)?;

    let last = run.final_loss;
    println!("final loss: acc={:.6} rbt={:.6} total={:.6}", last.acc, last.rbt, last.total);
    print!("{}", run.report);
    Ok(())
}

fn eval_cmd(ctx: &Ctx, a: EvalArgs) -> Result<(), CliError> {
    let cutoffs = cutoffs(ctx, &a.cutoffs);
    let levels = levels(ctx, a.levels);
    let qb = read(&a.qrels)?;
    let qrels = data::parse_qrels(&text(&a.qrels, &qb)?, levels)?;
    let roles_flag = a.roles.clone().or_else(|| ctx.file.roles.clone());
    let mut inputs = vec![(a.qrels.display().to_string(), qb)];

    let report = if let Some(ckpt) = &a.checkpoint {
        let cb = read(ckpt)?;
        let head = RankingHead::from_json(&text(ckpt, &cb)?).map_err(|e| CliError::Data(e.to_string()))?;
        let emb = a.embeddings.as_ref().expect("clap enforces --embeddings");
        let eb = read(emb)?;
        let dataset = Dataset::from_parts(qrels, data::parse_embeddings(&text(emb, &eb)?)?)?;
        let roles = roles_flag.unwrap_or(Role::ALL.to_vec());
        let groups = dataset.groups(&roles, None)?;
        let runs = harness::score_runs(&head, &groups, &roles, "robust-rank")?;
        write_runs(ctx, &runs)?;
        inputs.push((ckpt.display().to_string(), cb));
        inputs.push((emb.display().to_string(), eb));
        harness::evaluate(&head, &dataset, None, &roles, &cutoffs)?
    } else {
        if a.runs.len() < 2 {
            return Err(CliError::Usage("eval needs --checkpoint or at least two --runs".into()));
        }
        // Files named after roles (as written by train and eval) need no --roles.
        let from_stems: Option<Vec<Role>> =
            a.runs.iter().map(|p| p.file_stem()?.to_str()?.parse().ok()).collect();
        let roles = roles_flag
            .or(from_stems)
            .unwrap_or_else(|| Role::ALL.iter().copied().take(a.runs.len()).collect());
        if roles.len() != a.runs.len() {
            return Err(CliError::Usage(format!("{} runs but {} roles", a.runs.len(), roles.len())));
        }
        let mut runs = Vec::new();
        for (path, role) in a.runs.iter().zip(&roles) {
            let b = read(path)?;
            runs.push(data::parse_run(&text(path, &b)?, *role)?);
            inputs.push((path.display().to_string(), b));
        }
        MetricReport::compute(&runs, &qrels, &cutoffs).map_err(|e| CliError::Data(e.to_string()))?
    };

    ctx.write("report.json", report.to_json() + "\n")?;
    let mut prov = Provenance::new("eval", ctx.seed_or(0), json!({ "levels": levels, "cutoffs": cutoffs }));
    for (name, bytes) in inputs {
        prov.input(name, &bytes);
    }
    ctx.provenance(&prov)?;
    print!("{report}");
    Ok(())
}

fn ablate_cmd(ctx: &Ctx, a: ExperimentArgs) -> Result<(), CliError> {
    let cfg = train_config(ctx, &a.train)?;
    let cutoff = a.cutoff.or_else(|| ctx.file.cutoffs.as_ref().and_then(|c| c.first().copied())).unwrap_or(10);
    let (dataset, meta, inputs) = load_dataset(ctx, &a.data)?;
    let report = harness::ablate(&dataset, &cfg, cutoff)?;

    ctx.write("ablation.json", serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    let mut csv = format!("mode,ndcg@{cutoff},map,vndcg@{cutoff},vnap\n");
    for r in &report.runs {
        let map = r.report.runs.values().map(|m| m.map).sum::<f64>() / r.report.runs.len() as f64;
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.mode.label(),
            r.report.mean_ndcg(cutoff).unwrap_or(f64::NAN),
            map,
            r.report.vndcg(cutoff).unwrap_or(f64::NAN),
            r.report.robustness.vnap
        );
    }
    ctx.write("ablation.csv", csv)?;
    let prov = experiment_provenance("ablate", &cfg, meta, &dataset, inputs, json!({ "cutoff": cutoff }));
    ctx.provenance(&prov)?;
    print!("{}", report.table());
    Ok(())
}

fn sweep_cmd(ctx: &Ctx, a: SweepArgs) -> Result<(), CliError> {
    let cfg = train_config(ctx, &a.exp.train)?;
    let cutoff = a.exp.cutoff.or_else(|| ctx.file.cutoffs.as_ref().and_then(|c| c.first().copied())).unwrap_or(10);
    let alphas = a.alphas.clone().or_else(|| ctx.file.alphas.clone()).unwrap_or(DEFAULT_ALPHAS.to_vec());
    let (dataset, meta, inputs) = load_dataset(ctx, &a.exp.data)?;
    let report = harness::sweep_alpha(&dataset, &cfg, &alphas, cutoff)?;

    ctx.write("sweep.json", serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    let csv = report.to_csv();
    ctx.write("sweep.csv", &csv)?;
    let prov = experiment_provenance("sweep", &cfg, meta, &dataset, inputs, json!({ "cutoff": cutoff, "alphas": alphas }));
    ctx.provenance(&prov)?;
    print!("{csv}");
    Ok(())
}

fn synth_cmd(ctx: &Ctx, a: SynthArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        num_queries: a.num_queries.or(f.num_queries).unwrap_or(d.num_queries),
        docs_per_query: a.docs_per_query.or(f.docs_per_query).unwrap_or(d.docs_per_query),
        num_roles: d.num_roles,
        noise_scale: a.noise_scale.or(f.noise_scale).unwrap_or(d.noise_scale),
        seed: ctx.seed.or(f.synth_seed).or(f.seed).unwrap_or(d.seed),
        dim: a.dim.or(f.dim).unwrap_or(d.dim),
        levels: a.levels.or(f.levels).unwrap_or(d.levels),
    };
    let dataset = generate_synthetic(&spec)?;
    let mut buf = Vec::new();
    data::write_queries(&mut buf, &dataset.queries).expect("write to memory");
    ctx.write("queries.tsv", &buf)?;
    buf.clear();
    data::write_rewrites(&mut buf, &dataset.rewrites).expect("write to memory");
    ctx.write("rewrites.jsonl", &buf)?;
    buf.clear();
    data::write_qrels(&mut buf, &dataset.qrels).expect("write to memory");
    ctx.write("qrels.txt", &buf)?;
    buf.clear();
    data::write_embeddings(&mut buf, &dataset.embeddings).expect("write to memory");
    ctx.write("embeddings.jsonl", &buf)?;
    let prov = Provenance::new("gen-synth", spec.seed, json!({ "spec": spec, "data_hash": dataset.data_hash() }));
    ctx.provenance(&prov)?;
    println!(
        "{} queries, {} pairs per role, d={}, data hash {}",
        spec.num_queries,
        spec.num_queries * spec.docs_per_query,
        spec.dim,
        dataset.data_hash()
    );
    Ok(())
}
