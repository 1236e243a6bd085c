//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_rank::data::{Qrels, Query, QuerySet, RewriteStatus, Role};
use robust_rank::harness::{self, generate_synthetic, AblationMode, SyntheticSpec, TrainConfig};
use robust_rank::loss::{self, Divergence, GroupPrediction, LossConfig};
use robust_rank::metrics;
use robust_rank::ranker::{init_params, RankingHead};
use robust_rank::rewrite::{rewrite_all, RetryPolicy, RewriteConfig, ScriptedBackend};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("variance of published NDCG@10 rows matches the robustness table", table_crosscheck),
        ("head + total loss gradients match central differences", gradient_suite),
        ("NDCG@N and AP match a brute-force reference", metric_oracle),
        ("divergence and loss properties", loss_properties),
        ("rewrite loop branch conformance with scripted backends", rewrite_conformance),
        ("directional ablation on the synthetic dataset", directional_ablation),
        ("byte-identical reruns of every subcommand", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail}; {secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({detail}; {secs:.2}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- 1 ---------------------------------------------------------------------

fn four_sig(x: f64) -> String {
    format!("{:.3e}", x)
}

/// Smallest and largest population variance reachable when every input may
/// move by up to `r`.
fn variance_range(xs: &[f64], r: f64) -> (f64, f64) {
    let n = xs.len();
    let mut hi: f64 = 0.0;
    for mask in 0..(1u32 << n) {
        let v: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { xs[i] + r } else { xs[i] - r }).collect();
        hi = hi.max(metrics::population_variance(&v));
    }
    // The minimum pulls every value toward one common centre.
    let lo_c = xs.iter().cloned().fold(f64::INFINITY, f64::min) - r;
    let hi_c = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + r;
    let mut lo = f64::INFINITY;
    let steps = 200_000;
    for s in 0..=steps {
        let c = lo_c + (hi_c - lo_c) * s as f64 / steps as f64;
        let v: Vec<f64> = xs.iter().map(|x| c.clamp(x - r, x + r)).collect();
        lo = lo.min(metrics::population_variance(&v));
    }
    (lo, hi)
}

fn table_crosscheck() -> Outcome {
    let exact: [(&str, [f64; 5], f64); 4] = [
        ("robust04 bm25", [0.4262, 0.4062, 0.3798, 0.4259, 0.3792], 43.53e-5),
        ("robust04 bert-ce", [0.4423, 0.4129, 0.4084, 0.4082, 0.4010], 20.69e-5),
        ("robust04 roberta-ce", [0.4562, 0.4272, 0.3997, 0.4098, 0.4194], 36.97e-5),
        ("industrial bm25", [0.5380, 0.5259, 0.5264, 0.5392, 0.5183], 6.287e-5),
    ];
    for (name, vals, published) in &exact {
        let v = metrics::population_variance(vals);
        check(four_sig(v) == four_sig(*published), || format!("{name}: {v:e} vs {published:e}"))?;
    }
    let rounded: [(&str, [f64; 5], f64); 2] = [
        ("industrial bert-ce", [0.5821, 0.5602, 0.5637, 0.5656, 0.5679], 5.625e-5),
        ("industrial roberta-ce", [0.5987, 0.5740, 0.5758, 0.5809, 0.5828], 7.635e-5),
    ];
    for (name, vals, published) in &rounded {
        let (lo, hi) = variance_range(vals, 5e-5);
        check(lo <= *published && *published <= hi, || format!("{name}: {published:e} outside [{lo:e}, {hi:e}]"))?;
    }
    Ok("4 rows to 4 s.f., 2 rows within input rounding".into())
}

// ---- 2 ---------------------------------------------------------------------

struct GradCase {
    head: RankingHead,
    labels: Vec<usize>,
    inputs: Vec<[Vec<f64>; 5]>,
    cfg: LossConfig,
}

fn objective(head: &RankingHead, c: &GradCase, want_grad: bool) -> (f64, Option<RankingHead>, bool) {
    let mut traces = Vec::new();
    for group in &c.inputs {
        for (k, e) in group.iter().enumerate() {
            traces.push(head.forward(e, Role::ALL[k]).unwrap());
        }
    }
    let groups: Vec<GroupPrediction> = c
        .labels
        .iter()
        .enumerate()
        .map(|(g, &label)| GroupPrediction {
            label,
            preds: (0..5).map(|k| (Role::ALL[k], traces[g * 5 + k].probs.as_slice())).collect(),
        })
        .collect();
    let (b, grads) = loss::total_loss(&groups, &Role::ALL, &c.cfg).unwrap();
    let mut near_kink = false;
    for t in &traces {
        let ex = t.experts.as_ref().unwrap();
        near_kink |= ex.agent.pre.iter().chain(&ex.shared.pre).any(|p| p.abs() < 1e-3);
        near_kink |= t.probs.iter().any(|&p| !(1e-6..=1.0 - 1e-6).contains(&p));
    }
    let grad = want_grad.then(|| {
        let flat: Vec<Vec<f64>> = grads.into_iter().flatten().collect();
        head.backward(&traces, &flat).unwrap()
    });
    (b.total, grad, near_kink)
}

fn gradient_suite() -> Outcome {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut configs, mut resampled, mut params) = (0.0f64, 0, 0, 0usize);
    while configs < 120 {
        let d = [6, 8, 16][configs % 3];
        let levels = [3, 5][configs / 3 % 2];
        let mut head = RankingHead::Mmoe(init_params(d, d / 2, levels, rng.random()).unwrap());
        for t in head.tensors_mut() {
            t.iter_mut().for_each(|x| *x = rng.random_range(-0.6..0.6));
        }
        let n_groups = rng.random_range(1..=3);
        let c = GradCase {
            head,
            labels: (0..n_groups).map(|_| rng.random_range(0..levels)).collect(),
            inputs: (0..n_groups)
                .map(|_| std::array::from_fn(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect(),
            cfg: LossConfig {
                alpha: rng.random_range(0.0..30.0),
                divergence: if configs % 2 == 0 { Divergence::SymmetrizedKl } else { Divergence::MixtureJs },
                ..LossConfig::default()
            },
        };
        let (_, grad, near_kink) = objective(&c.head, &c, true);
        if near_kink {
            resampled += 1;
            continue;
        }
        let analytic: Vec<f64> = grad.unwrap().tensors().iter().flat_map(|t| t.to_vec()).collect();
        let mut probe = c.head.clone();
        let mut flat = 0;
        let lens: Vec<usize> = c.head.tensors().iter().map(|t| t.len()).collect();
        for (ti, len) in lens.into_iter().enumerate() {
            for i in 0..len {
                let x = probe.tensors()[ti][i];
                probe.tensors_mut()[ti][i] = x + H;
                let up = objective(&probe, &c, false).0;
                probe.tensors_mut()[ti][i] = x - H;
                let down = objective(&probe, &c, false).0;
                probe.tensors_mut()[ti][i] = x;
                let numeric = (up - down) / (2.0 * H);
                let a = analytic[flat];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
                flat += 1;
            }
        }
        params += flat;
        configs += 1;
    }
    check(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("{configs} configs, {params} parameters, max rel err {worst:.2e}, {resampled} resampled near kinks"))
}

// ---- 3 ---------------------------------------------------------------------

fn brute_ndcg(grades: &[u32], n: usize) -> f64 {
    let dcg = |g: &[u32]| g.iter().take(n).enumerate().map(|(i, &x)| ((1u64 << x) - 1) as f64 / ((i + 2) as f64).log2()).sum::<f64>();
    // Best DCG over every permutation of the judged grades.
    fn perms(items: &mut Vec<u32>, k: usize, best: &mut f64, score: &dyn Fn(&[u32]) -> f64) {
        if k == items.len() {
            *best = best.max(score(items));
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            perms(items, k + 1, best, score);
            items.swap(k, i);
        }
    }
    let mut best = 0.0;
    let mut g = grades.to_vec();
    if g.len() <= 7 {
        perms(&mut g, 0, &mut best, &dcg);
    } else {
        g.sort_unstable_by(|a, b| b.cmp(a));
        best = dcg(&g);
    }
    if best == 0.0 {
        0.0
    } else {
        dcg(grades) / best
    }
}

fn brute_ap(grades: &[u32]) -> f64 {
    let rel = grades.iter().filter(|&&g| g > 0).count();
    if rel == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..grades.len() {
        if grades[k] > 0 {
            let hits = grades[..=k].iter().filter(|&&g| g > 0).count();
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / rel as f64
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let levels = if rng.random() { 3 } else { 5 };
        let n_docs = rng.random_range(1..=10);
        let grades: Vec<u32> = (0..n_docs).map(|_| rng.random_range(0..levels)).collect();
        let mut qrels = Qrels::new(levels).unwrap();
        for (i, g) in grades.iter().enumerate() {
            qrels.insert("q", &format!("doc{i}"), *g).unwrap();
        }
        let ranking: Vec<String> = (0..n_docs).map(|i| format!("doc{i}")).collect();
        let cutoff = rng.random_range(1..=12);
        let ndcg = metrics::ndcg_at_n(&ranking, &qrels, "q", cutoff).unwrap();
        let ap = metrics::average_precision(&ranking, &qrels, "q").unwrap();
        worst = worst.max((ndcg - brute_ndcg(&grades, cutoff)).abs()).max((ap - brute_ap(&grades)).abs());
    }
    check(worst <= 1e-12, || format!("max abs difference {worst:e}"))?;
    Ok(format!("1000 instances, max abs difference {worst:.1e}"))
}

// ---- 4 ---------------------------------------------------------------------

fn random_simplex(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..l).map(|_| rng.random_range(0.001..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn loss_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-7;
    for _ in 0..2000 {
        let l = if rng.random() { 3 } else { 5 };
        let a = random_simplex(&mut rng, l);
        let b = random_simplex(&mut rng, l);
        let ab = loss::js_div(&a, &b, eps).unwrap();
        let ba = loss::js_div(&b, &a, eps).unwrap();
        check(ab >= 0.0 && (ab - ba).abs() <= 1e-12 * ab.max(1.0), || format!("js_div {ab} vs {ba}"))?;
        check(loss::js_div(&a, &a, eps).unwrap().abs() <= 1e-15, || "js_div(a, a) != 0".into())?;

        let k = rng.random_range(2..=5);
        let preds: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(&mut rng, l)).collect();
        let refs: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
        let rev: Vec<&[f64]> = refs.iter().rev().copied().collect();
        let cfg = LossConfig::default();
        let r = loss::robust_loss(&refs, &cfg).unwrap().0;
        let rr = loss::robust_loss(&rev, &cfg).unwrap().0;
        check(r >= 0.0 && (r - rr).abs() <= 1e-12 * r.max(1.0), || format!("robust_loss {r} vs reversed {rr}"))?;
        let same: Vec<&[f64]> = vec![refs[0]; k];
        check(loss::robust_loss(&same, &cfg).unwrap().0.abs() <= 1e-15, || "robust_loss of equal preds != 0".into())?;

        let label = rng.random_range(0..l);
        let group = GroupPrediction { label, preds: Role::ALL.iter().map(|&r| (r, refs[r.index() % k])).collect() };
        let at = |alpha: f64| loss::total_loss(std::slice::from_ref(&group), &Role::ALL, &LossConfig { alpha, ..cfg }).unwrap().0;
        let zero = at(0.0);
        check(zero.total == zero.acc, || format!("total {} != acc {} at alpha 0", zero.total, zero.acc))?;
        let alpha = rng.random_range(0.0..30.0);
        let b = at(alpha);
        check(b.acc == zero.acc && b.rbt == zero.rbt, || "acc/rbt depend on alpha".into())?;
        let slope = (b.total - zero.total) / alpha;
        check((slope - b.rbt).abs() <= 1e-9 * b.rbt.max(1e-3), || format!("slope {slope} vs rbt {}", b.rbt))?;
    }
    Ok("2000 random cases".into())
}

// ---- 5 ---------------------------------------------------------------------

fn classify(prompt: &str) -> char {
    [
        ("Please analyze and determine the actual intention", 'a'),
        ("Assign judgment scores", 'c'),
        ("what changes might you make", 'b'),
        ("preserving the original meaning", 'd'),
        ("more in line with the character's attributes", 'e'),
        ("maintaining the essence of the original query", 'f'),
    ]
    .iter()
    .find(|(needle, _)| prompt.contains(needle))
    .map_or('?', |(_, c)| *c)
}

fn rewrite_conformance() -> Outcome {
    let mut queries = QuerySet::new();
    queries.push(Query { qid: "q".into(), text: "cheap flights to rome".into(), role: Role::Original }).unwrap();
    let cfg = RewriteConfig { max_iters: 5, retry: RetryPolicy::immediate(3), ..RewriteConfig::default() };
    // (check responses, expected prompt letters, iterations, status)
    let cases: [(&str, &[&str], &str, u32, RewriteStatus); 4] = [
        ("immediate accept", &["1 1"], "abc", 1, RewriteStatus::Accepted),
        ("semantic fail", &["-1 1", "1 1"], "abcdc", 2, RewriteStatus::Accepted),
        ("persona fail", &["1 -1", "0 1"], "abcec", 2, RewriteStatus::Accepted),
        ("both fail", &["-1 -1"; 5], "abcfcfcfcfc", 5, RewriteStatus::FallbackOriginal),
    ];
    for (name, checks, expected, iters, status) in cases {
        let mut script = vec!["intent text".to_string(), "candidate 0".to_string()];
        for (i, c) in checks.iter().enumerate() {
            script.push(c.to_string());
            if i + 1 < checks.len() {
                script.push(format!("candidate {}", i + 1));
            }
        }
        let backend = ScriptedBackend::new(script);
        let out = rewrite_all(&queries, &[Role::Student], &backend, &cfg).map_err(|e| format!("{name}: {e}"))?;
        let seq: String = backend.prompts().iter().map(|p| classify(p)).collect();
        let r = &out.records[0];
        check(seq == expected, || format!("{name}: prompts {seq}, expected {expected}"))?;
        check(r.iterations == iters && r.status == status, || format!("{name}: {} iterations, {:?}", r.iterations, r.status))?;
        if status == RewriteStatus::FallbackOriginal {
            check(r.rewritten_text == r.original_text, || format!("{name}: fallback text differs"))?;
        }
    }
    // Checks that never pass still stop after max_iters.
    let endless = ScriptedBackend::new(std::iter::once("intent".to_string()).chain(std::iter::repeat_n("x -1 -1".to_string(), 200)));
    let out = rewrite_all(&queries, &[Role::Woman], &endless, &RewriteConfig { max_iters: 7, ..cfg.clone() })
        .map_err(|e| e.to_string())?;
    check(out.records[0].status == RewriteStatus::FallbackOriginal && out.records[0].iterations == 7, || "no fallback".into())?;
    Ok("4 branch cases and budget exhaustion".into())
}

// ---- 6 ---------------------------------------------------------------------

fn directional_ablation() -> Outcome {
    let spec = SyntheticSpec::default();
    let dataset = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let base = TrainConfig::default();
    let get = |mode: AblationMode| -> Result<(f64, f64), String> {
        let cfg = TrainConfig { mode, ..base.clone() };
        let (run, _) = harness::run_experiment(&dataset, &cfg, &[10]).map_err(|e| e.to_string())?;
        Ok((run.report.mean_ndcg(10).unwrap(), run.report.vndcg(10).unwrap()))
    };
    let (full_ndcg, full_v) = get(AblationMode::Full)?;
    let (plain_ndcg, plain_v) = get(AblationMode::NoRobustLoss)?;
    let ratio = full_v / plain_v;
    let drop = (plain_ndcg - full_ndcg) / plain_ndcg;
    let detail = format!(
        "VNDCG@10 {:.3}e-5 vs {:.3}e-5 (ratio {ratio:.3}), NDCG@10 {full_ndcg:.4} vs {plain_ndcg:.4} (drop {:.2}%)",
        full_v * 1e5,
        plain_v * 1e5,
        drop * 100.0
    );
    check(ratio <= 0.8 && drop <= 0.02, || detail.clone())?;
    Ok(detail)
}

// ---- 7 ---------------------------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn cli(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_robust-rank")).current_dir(cwd).args(args).output().unwrap();
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    std::fs::write(root.join("small.toml"), "num_queries = 16\ndocs_per_query = 6\nepochs = 3\nbackoff_ms = 0\n").unwrap();
    cli(root, &["gen-synth", "--config", "small.toml", "--out", "data"])?;
    let data = ["--embeddings", "data/embeddings.jsonl", "--qrels", "data/qrels.txt"];
    let with = |head: &[&'static str], tail: &[&'static str]| -> Vec<&'static str> {
        head.iter().chain(tail).copied().collect()
    };
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("gen-synth", vec!["gen-synth", "--config", "small.toml", "--seed", "3"]),
        ("rewrite", vec!["rewrite", "--queries", "data/queries.tsv", "--backend", "mock", "--config", "small.toml", "--jobs", "3"]),
        ("judge", vec!["judge", "--rewrites", "data/rewrites.jsonl", "--config", "small.toml"]),
        ("train", with(&["train", "--config", "small.toml"], &data)),
        ("eval", vec!["eval", "--qrels", "data/qrels.txt", "--runs", "ref/original.run", "ref/woman.run", "ref/man.run", "--n", "5,10"]),
        ("ablate", with(&["ablate", "--config", "small.toml"], &data)),
        ("sweep", with(&["sweep", "--config", "small.toml", "--alphas", "0,5,30"], &data)),
    ];
    cli(root, &with(&["train", "--config", "small.toml", "--out", "ref"], &data))?;
    for role in ["original", "woman", "man"] {
        std::fs::copy(root.join(format!("ref/runs/{role}.run")), root.join(format!("ref/{role}.run"))).unwrap();
    }
    let mut names = Vec::new();
    for (name, args) in &commands {
        let mut outs = Vec::new();
        for rep in ["a", "b"] {
            let dir = format!("{name}-{rep}");
            let mut full = args.clone();
            full.extend(["--out", dir.as_str()]);
            cli(root, &full)?;
            outs.push(snapshot(&root.join(&dir)));
        }
        check(!outs[0].is_empty() && outs[0] == outs[1], || format!("{name}: outputs differ"))?;
        check(outs[0].contains_key(Path::new("provenance.json")), || format!("{name}: no provenance"))?;
        names.push(*name);
    }
    Ok(format!("{} subcommands", names.len()))
}
