//! Hybrid training objective: pointwise cross-entropy for accuracy plus a
//! pairwise divergence penalty that pulls the role variants of one
//! `(query, doc)` pair toward the same predicted distribution.
//!
//! Every function returns gradients with respect to its probability inputs,
//! taken through the `ε` clamp (and renormalization, for divergences).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Role;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("label is not one-hot")]
    NotOneHot,
    #[error("label {label} out of range for {levels} levels")]
    Label { label: usize, levels: usize },
    #[error("robust loss needs at least two predictions, got {0}")]
    TooFewPredictions(usize),
    #[error("group {group}: missing prediction for role {role}")]
    MissingRole { group: usize, role: Role },
    #[error("group {group}: duplicate prediction for role {role}")]
    DuplicateRole { group: usize, role: Role },
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// Pairwise divergence used by the robustness term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    /// `½KL(a‖b) + ½KL(b‖a)`.
    #[default]
    SymmetrizedKl,
    /// `½KL(a‖m) + ½KL(b‖m)` with `m = (a+b)/2`.
    MixtureJs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub include_original_in_robust: bool,
    pub include_original_in_accuracy: bool,
    pub divergence: Divergence,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            epsilon: 1e-7,
            include_original_in_robust: true,
            include_original_in_accuracy: true,
            divergence: Divergence::SymmetrizedKl,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, levels: usize) -> Result<(), LossError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LossError::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / levels as f64) {
            return Err(LossError::Config(format!(
                "epsilon must lie in (0, 1/{levels}), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub acc: f64,
    pub rbt: f64,
    pub total: f64,
}

fn same_len(a: &[f64], b: &[f64]) -> Result<(), LossError> {
    if a.len() != b.len() {
        return Err(LossError::Dimension(a.len(), b.len()));
    }
    Ok(())
}

/// A probability vector after clamping to `[ε, 1−ε]` and renormalizing,
/// with what is needed to pull gradients back to the raw input.
struct Clamped {
    r: Vec<f64>,
    sum: f64,
    active: Vec<bool>,
}

impl Clamped {
    fn new(p: &[f64], eps: f64) -> Self {
        let q: Vec<f64> = p.iter().map(|&x| x.clamp(eps, 1.0 - eps)).collect();
        let sum: f64 = q.iter().sum();
        let active = p.iter().map(|&x| x > eps && x < 1.0 - eps).collect();
        Self { r: q.iter().map(|x| x / sum).collect(), sum, active }
    }

    fn backward(&self, g: &[f64]) -> Vec<f64> {
        let inner: f64 = self.r.iter().zip(g).map(|(r, g)| r * g).sum();
        g.iter()
            .zip(&self.active)
            .map(|(g, &on)| if on { (g - inner) / self.sum } else { 0.0 })
            .collect()
    }
}

/// Per-class binary cross-entropy `−Σ_c [y_c ln ŷ_c + (1−y_c) ln(1−ŷ_c)]`
/// with `ŷ` clamped to `[ε, 1−ε]`. Returns the loss and `dL/dŷ`.
pub fn accuracy_loss(y: &[f64], y_hat: &[f64], eps: f64) -> Result<(f64, Vec<f64>), LossError> {
    same_len(y, y_hat)?;
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(LossError::NotOneHot);
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for (&t, &p) in y.iter().zip(y_hat) {
        let q = p.clamp(eps, 1.0 - eps);
        loss -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        let inside = p > eps && p < 1.0 - eps;
        grad.push(if inside { -t / q + (1.0 - t) / (1.0 - q) } else { 0.0 });
    }
    Ok((loss, grad))
}

pub fn one_hot(label: usize, levels: usize) -> Result<Vec<f64>, LossError> {
    if label >= levels {
        return Err(LossError::Label { label, levels });
    }
    let mut y = vec![0.0; levels];
    y[label] = 1.0;
    Ok(y)
}

/// `KL(a‖b)` after clamping and renormalizing both inputs, with gradients
/// for `a` and `b`.
pub fn kl_div_grad(a: &[f64], b: &[f64], eps: f64) -> Result<(f64, Vec<f64>, Vec<f64>), LossError> {
    same_len(a, b)?;
    let ca = Clamped::new(a, eps);
    let cb = Clamped::new(b, eps);
    let mut kl = 0.0;
    let mut ga = Vec::with_capacity(a.len());
    let mut gb = Vec::with_capacity(a.len());
    for (&x, &y) in ca.r.iter().zip(&cb.r) {
        let log_ratio = x.ln() - y.ln();
        kl += x * log_ratio;
        ga.push(log_ratio + 1.0);
        gb.push(-x / y);
    }
    Ok((kl.max(0.0), ca.backward(&ga), cb.backward(&gb)))
}

pub fn kl_div(a: &[f64], b: &[f64], eps: f64) -> Result<f64, LossError> {
    kl_div_grad(a, b, eps).map(|(v, _, _)| v)
}

/// Symmetrized KL, `½KL(a‖b) + ½KL(b‖a)`.
pub fn js_div_grad(a: &[f64], b: &[f64], eps: f64) -> Result<(f64, Vec<f64>, Vec<f64>), LossError> {
    let (ab, ga1, gb1) = kl_div_grad(a, b, eps)?;
    let (ba, gb2, ga2) = kl_div_grad(b, a, eps)?;
    let ga = ga1.iter().zip(&ga2).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
    let gb = gb1.iter().zip(&gb2).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
    Ok((0.5 * ab + 0.5 * ba, ga, gb))
}

pub fn js_div(a: &[f64], b: &[f64], eps: f64) -> Result<f64, LossError> {
    js_div_grad(a, b, eps).map(|(v, _, _)| v)
}

/// Jensen–Shannon divergence against the midpoint mixture.
pub fn mixture_js_grad(a: &[f64], b: &[f64], eps: f64) -> Result<(f64, Vec<f64>, Vec<f64>), LossError> {
    same_len(a, b)?;
    let ca = Clamped::new(a, eps);
    let cb = Clamped::new(b, eps);
    let mut js = 0.0;
    let mut ga = Vec::with_capacity(a.len());
    let mut gb = Vec::with_capacity(a.len());
    for (&x, &y) in ca.r.iter().zip(&cb.r) {
        let m = 0.5 * (x + y);
        let (lx, ly) = ((x / m).ln(), (y / m).ln());
        js += 0.5 * (x * lx + y * ly);
        ga.push(0.5 * lx);
        gb.push(0.5 * ly);
    }
    Ok((js.max(0.0), ca.backward(&ga), cb.backward(&gb)))
}

pub fn mixture_js(a: &[f64], b: &[f64], eps: f64) -> Result<f64, LossError> {
    mixture_js_grad(a, b, eps).map(|(v, _, _)| v)
}

fn divergence_grad(
    kind: Divergence,
    a: &[f64],
    b: &[f64],
    eps: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>), LossError> {
    match kind {
        Divergence::SymmetrizedKl => js_div_grad(a, b, eps),
        Divergence::MixtureJs => mixture_js_grad(a, b, eps),
    }
}

/// Sum of the pairwise divergence over all `m < n`, with gradients for each
/// prediction.
pub fn robust_loss_sum(preds: &[&[f64]], cfg: &LossConfig) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    if preds.len() < 2 {
        return Err(LossError::TooFewPredictions(preds.len()));
    }
    let mut grads: Vec<Vec<f64>> = preds.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut total = 0.0;
    for m in 0..preds.len() {
        for n in m + 1..preds.len() {
            let (v, gm, gn) = divergence_grad(cfg.divergence, preds[m], preds[n], cfg.epsilon)?;
            total += v;
            crate::ranker::add_assign(&mut grads[m], &gm);
            crate::ranker::add_assign(&mut grads[n], &gn);
        }
    }
    Ok((total, grads))
}

/// Pairwise divergence averaged over the `K(K−1)/2` pairs.
pub fn robust_loss(preds: &[&[f64]], cfg: &LossConfig) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    let (sum, mut grads) = robust_loss_sum(preds, cfg)?;
    let pairs = (preds.len() * (preds.len() - 1) / 2) as f64;
    for g in grads.iter_mut().flatten() {
        *g /= pairs;
    }
    Ok((sum / pairs, grads))
}

/// Predictions of all role variants of one `(query, doc)` pair, sharing one
/// relevance label.
#[derive(Debug, Clone)]
pub struct GroupPrediction<'a> {
    pub label: usize,
    pub preds: Vec<(Role, &'a [f64])>,
}

/// Gradients from [`total_loss`], aligned with each group's `preds`.
pub type GroupGrads = Vec<Vec<Vec<f64>>>;

/// `acc + α·rbt` over a batch of groups.
///
/// `acc` averages cross-entropy over every (group, accuracy role); `rbt`
/// averages the pair-mean divergence over groups. With `α = 0` the
/// robustness value is still reported but contributes no gradient.
pub fn total_loss(
    groups: &[GroupPrediction<'_>],
    roles: &[Role],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, GroupGrads), LossError> {
    if groups.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let acc_roles: Vec<Role> = roles
        .iter()
        .copied()
        .filter(|&r| r != Role::Original || cfg.include_original_in_accuracy)
        .collect();
    let rbt_roles: Vec<Role> = roles
        .iter()
        .copied()
        .filter(|&r| r != Role::Original || cfg.include_original_in_robust)
        .collect();
    let n_groups = groups.len() as f64;
    let acc_scale = 1.0 / (n_groups * acc_roles.len().max(1) as f64);

    let mut acc = 0.0;
    let mut rbt = 0.0;
    let mut all_grads = Vec::with_capacity(groups.len());
    for (gi, group) in groups.iter().enumerate() {
        let mut slot = [None; Role::COUNT];
        for (i, (role, _)) in group.preds.iter().enumerate() {
            if slot[role.index()].replace(i).is_some() {
                return Err(LossError::DuplicateRole { group: gi, role: *role });
            }
        }
        for &role in roles {
            if slot[role.index()].is_none() {
                return Err(LossError::MissingRole { group: gi, role });
            }
        }
        let mut grads: Vec<Vec<f64>> = group.preds.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        let levels = group.preds[slot[roles[0].index()].unwrap()].1.len();
        let y = one_hot(group.label, levels)?;

        for &role in &acc_roles {
            let i = slot[role.index()].unwrap();
            let (l, g) = accuracy_loss(&y, group.preds[i].1, cfg.epsilon)?;
            acc += l * acc_scale;
            for (dst, src) in grads[i].iter_mut().zip(g) {
                *dst += src * acc_scale;
            }
        }

        let idx: Vec<usize> = rbt_roles.iter().map(|r| slot[r.index()].unwrap()).collect();
        let preds: Vec<&[f64]> = idx.iter().map(|&i| group.preds[i].1).collect();
        let (r, g) = robust_loss(&preds, cfg)?;
        rbt += r / n_groups;
        if cfg.alpha != 0.0 {
            let scale = cfg.alpha / n_groups;
            for (&i, gi) in idx.iter().zip(g) {
                for (dst, src) in grads[i].iter_mut().zip(gi) {
                    *dst += src * scale;
                }
            }
        }
        all_grads.push(grads);
    }
    let breakdown = LossBreakdown { acc, rbt, total: acc + cfg.alpha * rbt };
    Ok((breakdown, all_grads))
}
