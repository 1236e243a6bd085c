//! Browser bindings for three small demos: divergences between two grade
//! distributions, NDCG/AP of a graded ranking, and a tiny training run with
//! and without the robustness term.

use robust_rank::data::{Qrels, Role};
use robust_rank::harness::{self, generate_synthetic, AblationMode, SyntheticSpec, TrainConfig};
use robust_rank::loss;
use robust_rank::metrics;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split([',', ' ', '\t', '\n'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect()
}

fn normalize(xs: Vec<f64>) -> Result<Vec<f64>, String> {
    if xs.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err("weights must be finite and non-negative".into());
    }
    let s: f64 = xs.iter().sum();
    if s <= 0.0 {
        return Err("weights must not all be zero".into());
    }
    Ok(xs.into_iter().map(|x| x / s).collect())
}

/// Divergences between two distributions given as comma-separated weights
/// (normalized here). Returns JSON.
pub fn divergences_json(a: &str, b: &str) -> Result<String, String> {
    let a = normalize(parse_numbers(a)?)?;
    let b = normalize(parse_numbers(b)?)?;
    let eps = loss::LossConfig::default().epsilon;
    let e = |r: Result<f64, loss::LossError>| r.map_err(|e| e.to_string());
    Ok(json!({
        "p": a,
        "q": b,
        "kl_pq": e(loss::kl_div(&a, &b, eps))?,
        "kl_qp": e(loss::kl_div(&b, &a, eps))?,
        "symmetrized_kl": e(loss::js_div(&a, &b, eps))?,
        "mixture_js": e(loss::mixture_js(&a, &b, eps))?,
    })
    .to_string())
}

/// NDCG@n and AP of a ranking described by the grades of its documents in
/// rank order, e.g. `"2,0,1,0"`.
pub fn rank_metrics_json(grades: &str, n: usize, levels: u32) -> Result<String, String> {
    let grades = parse_numbers(grades)?;
    let mut qrels = Qrels::new(levels).map_err(|e| e.to_string())?;
    let mut ranking = Vec::new();
    for (i, g) in grades.iter().enumerate() {
        if g.fract() != 0.0 || *g < 0.0 {
            return Err(format!("grade {g} is not a non-negative integer"));
        }
        let docid = format!("d{i}");
        qrels.insert("q", &docid, *g as u32).map_err(|e| e.to_string())?;
        ranking.push(docid);
    }
    let ndcg = metrics::ndcg_at_n(&ranking, &qrels, "q", n).map_err(|e| e.to_string())?;
    let ap = metrics::average_precision(&ranking, &qrels, "q").map_err(|e| e.to_string())?;
    Ok(json!({ "n": n, "ndcg": ndcg, "ap": ap }).to_string())
}

/// Trains the full model and the model without the robustness term on a
/// small synthetic dataset and reports held-out metrics for both.
pub fn train_demo_json(alpha: f64, noise_scale: f64, epochs: usize, seed: u64) -> Result<String, String> {
    let spec = SyntheticSpec { num_queries: 40, docs_per_query: 10, noise_scale, seed, ..SyntheticSpec::default() };
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let mut out = serde_json::Map::new();
    for mode in [AblationMode::Full, AblationMode::NoRobustLoss] {
        let cfg = TrainConfig { alpha, epochs, mode, seed, ..TrainConfig::default() };
        let (run, trained) = harness::run_experiment(&data, &cfg, &[10]).map_err(|e| e.to_string())?;
        let per_role: serde_json::Map<String, serde_json::Value> = Role::ALL
            .iter()
            .filter_map(|r| Some((r.as_str().to_string(), json!(run.report.ndcg(*r, 10)?))))
            .collect();
        out.insert(
            mode.label().to_string(),
            json!({
                "ndcg10": run.report.mean_ndcg(10),
                "vndcg10": run.report.vndcg(10),
                "vnap": run.report.robustness.vnap,
                "per_role_ndcg10": per_role,
                "loss_curve": trained.curve.iter().map(|b| b.total).collect::<Vec<_>>(),
            }),
        );
    }
    Ok(serde_json::Value::Object(out).to_string())
}

#[wasm_bindgen]
pub fn divergences(a: &str, b: &str) -> Result<String, JsError> {
    divergences_json(a, b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rank_metrics(grades: &str, n: usize, levels: u32) -> Result<String, JsError> {
    rank_metrics_json(grades, n, levels).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn train_demo(alpha: f64, noise_scale: f64, epochs: usize, seed: u64) -> Result<String, JsError> {
    train_demo_json(alpha, noise_scale, epochs, seed).map_err(|e| JsError::new(&e))
}
